#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "taml/tensor.hpp"

namespace taml {

// Selects which parameters a step applies to; defaults to all.
using PathFilter = std::function<bool(const std::string&)>;

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  // In-place update of every selected parameter from its populated gradient.
  // A selected parameter without a gradient is a contract error.
  virtual void step(ParamSet& params, const PathFilter& filter = nullptr) = 0;
  virtual std::string kind() const = 0;
  virtual double learning_rate() const = 0;
};

class Sgd final : public Optimizer {
 public:
  explicit Sgd(double lr) : lr_(lr) {}
  void step(ParamSet& params, const PathFilter& filter = nullptr) override;
  std::string kind() const override { return "sgd"; }
  double learning_rate() const override { return lr_; }

 private:
  double lr_;
};

class Adam final : public Optimizer {
 public:
  struct State {
    int64_t t = 0;
    std::vector<double> m;
    std::vector<double> v;
  };

  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParamSet& params, const PathFilter& filter = nullptr) override;
  std::string kind() const override { return "adam"; }
  double learning_rate() const override { return lr_; }

  // Moment state keyed by parameter path; exposed for checkpointing.
  std::map<std::string, State>& state() { return state_; }
  const std::map<std::string, State>& state() const { return state_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::map<std::string, State> state_;
};

std::unique_ptr<Optimizer> make_optimizer(const std::string& kind, double lr);

}  // namespace taml
