#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace taml {

class Tape;
class Rng;

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until a backward pass touches it
  bool requires_grad = false;
  // Tape that produced this node, if any. Inputs from a live tape stay
  // grad-connected even when they are not parameters themselves.
  const Tape* origin = nullptr;

  std::size_t size() const { return value.size(); }
  double* grad_data();  // materializes a zeroed buffer on first use
};

}  // namespace detail

// Dense row-major f64 tensor. Copies share storage; values are immutable
// after construction except through the optimizer and backward machinery.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double v);
  static Tensor from(std::vector<double> data, Shape shape);
  static Tensor scalar(double v);
  static Tensor of(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor vec(std::initializer_list<double> entries);
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t size() const;
  std::size_t rows() const;  // extent 0 of a matrix
  std::size_t cols() const;  // extent 1 of a matrix

  const double* data() const;
  double* mutable_data();  // reserved for the optimizer and tests
  double item() const;     // value of a one-element tensor
  double at(std::size_t i, std::size_t j) const;
  std::vector<double> to_vector() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool v);
  bool has_grad() const;
  const double* grad() const;
  std::vector<double> grad_vector() const;
  void zero_grad();

  detail::TensorNode* node() const { return node_.get(); }
  std::shared_ptr<detail::TensorNode> shared_node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorNode> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::TensorNode> node_;

  friend class Tape;
  friend Tensor make_op_output(Shape shape);
};

// Fresh writable tensor for op results; internal to the op layer.
Tensor make_op_output(Shape shape);

// Reverse-mode tape. Construction activates the tape for the current thread
// (define-by-run); destruction restores the previously active one. Every
// forward pass builds a fresh tape.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  // Nodes are recorded in forward order, so the list is topologically sorted.
  void record(std::vector<std::shared_ptr<detail::TensorNode>> inputs,
              std::shared_ptr<detail::TensorNode> output,
              std::function<void()> backward_fn);

  // Seeds d(loss)/d(loss)=1 and walks the ops in reverse, accumulating
  // gradients additively into every grad-connected tensor.
  void backward(const Tensor& loss);

  std::size_t num_ops() const { return ops_.size(); }

 private:
  struct OpRecord {
    std::vector<std::shared_ptr<detail::TensorNode>> inputs;
    std::shared_ptr<detail::TensorNode> output;
    std::function<void()> backward_fn;
  };
  std::vector<OpRecord> ops_;
  Tape* previous_ = nullptr;
};

// True when the tensor participates in gradient flow on the active tape.
bool grad_connected(const Tensor& t);

// Named parameters; std::map keeps iteration lexicographic.
class ParamSet {
 public:
  void add(const std::string& path, Tensor t);
  bool contains(const std::string& path) const;
  Tensor& at(const std::string& path);
  const Tensor& at(const std::string& path) const;

  std::size_t count() const { return params_.size(); }
  std::size_t total_size() const;
  void zero_grad();

  // FNV-1a over parameter bytes in path order; used to assert purity.
  uint64_t content_hash() const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::map<std::string, Tensor> params_;
};

}  // namespace taml
