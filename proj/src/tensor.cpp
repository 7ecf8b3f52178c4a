#include "taml/tensor.hpp"

#include <cstring>
#include <numeric>
#include <sstream>

#include "taml/error.hpp"
#include "taml/rng.hpp"

namespace taml {

namespace {
thread_local Tape* t_active_tape = nullptr;

std::size_t shape_product(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t e : s) n *= e;
  return n;
}
}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << "]";
  return os.str();
}

namespace detail {

double* TensorNode::grad_data() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad.data();
}

}  // namespace detail

Tensor make_op_output(Shape shape) {
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = std::move(shape);
  node->value.assign(shape_product(node->shape), 0.0);
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape) { return make_op_output(std::move(shape)); }

Tensor Tensor::full(Shape shape, double v) {
  Tensor t = zeros(std::move(shape));
  for (auto& x : t.node_->value) x = v;
  return t;
}

Tensor Tensor::from(std::vector<double> data, Shape shape) {
  if (data.size() != shape_product(shape))
    throw ShapeError("data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double v) { return from({v}, {1}); }

Tensor Tensor::of(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("ragged initializer rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return from(std::move(data), {r, c});
}

Tensor Tensor::vec(std::initializer_list<double> entries) {
  return from(std::vector<double>(entries), {entries.size()});
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev) {
  Tensor t = zeros(std::move(shape));
  rng.fill_normal(t.node_->value.data(), t.size(), stddev);
  return t;
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::size() const { return node_ ? node_->size() : 0; }

std::size_t Tensor::rows() const {
  if (shape().size() != 2) throw ShapeError("rows() needs a rank-2 tensor, got " + shape_str(shape()));
  return shape()[0];
}

std::size_t Tensor::cols() const {
  if (shape().size() != 2) throw ShapeError("cols() needs a rank-2 tensor, got " + shape_str(shape()));
  return shape()[1];
}

const double* Tensor::data() const { return node_->value.data(); }
double* Tensor::mutable_data() { return node_->value.data(); }

double Tensor::item() const {
  if (size() != 1)
    throw ContractError("item() called on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

double Tensor::at(std::size_t i, std::size_t j) const {
  return node_->value[i * cols() + j];
}

std::vector<double> Tensor::to_vector() const { return node_->value; }

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool v) {
  node_->requires_grad = v;
  return *this;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

const double* Tensor::grad() const {
  if (!has_grad())
    throw ContractError("tensor has no gradient buffer");
  return node_->grad.data();
}

std::vector<double> Tensor::grad_vector() const {
  if (!has_grad()) return std::vector<double>(size(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

Tape::Tape() {
  previous_ = t_active_tape;
  t_active_tape = this;
}

Tape::~Tape() { t_active_tape = previous_; }

Tape* Tape::active() { return t_active_tape; }

void Tape::record(std::vector<std::shared_ptr<detail::TensorNode>> inputs,
                  std::shared_ptr<detail::TensorNode> output,
                  std::function<void()> backward_fn) {
  output->origin = this;
  ops_.push_back({std::move(inputs), std::move(output), std::move(backward_fn)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1)
    throw ContractError("backward requires a scalar loss");
  auto* node = loss.node();
  node->grad_data()[0] += 1.0;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    if (!it->output->grad.empty()) it->backward_fn();
  }
}

bool grad_connected(const Tensor& t) {
  if (!t.defined()) return false;
  if (t.requires_grad()) return true;
  const Tape* tape = Tape::active();
  return tape != nullptr && t.node()->origin == tape;
}

void ParamSet::add(const std::string& path, Tensor t) {
  if (params_.count(path))
    throw ContractError("duplicate parameter path '" + path + "'");
  t.set_requires_grad(true);
  params_.emplace(path, std::move(t));
}

bool ParamSet::contains(const std::string& path) const {
  return params_.count(path) != 0;
}

Tensor& ParamSet::at(const std::string& path) {
  auto it = params_.find(path);
  if (it == params_.end())
    throw ContractError("unknown parameter path '" + path + "'");
  return it->second;
}

const Tensor& ParamSet::at(const std::string& path) const {
  auto it = params_.find(path);
  if (it == params_.end())
    throw ContractError("unknown parameter path '" + path + "'");
  return it->second;
}

std::size_t ParamSet::total_size() const {
  std::size_t n = 0;
  for (const auto& [path, t] : params_) n += t.size();
  return n;
}

void ParamSet::zero_grad() {
  for (auto& [path, t] : params_) t.zero_grad();
}

uint64_t ParamSet::content_hash() const {
  uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& [path, t] : params_) {
    mix(path.data(), path.size());
    mix(t.data(), t.size() * sizeof(double));
  }
  return h;
}

}  // namespace taml
