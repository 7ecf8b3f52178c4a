#include "taml/optim.hpp"

#include <cmath>

#include "taml/error.hpp"

namespace taml {

namespace {

void require_grad_present(const std::string& path, const Tensor& t) {
  if (!t.has_grad())
    throw ContractError("optimizer step: no gradient for parameter '" + path +
                        "'");
}

}  // namespace

void Sgd::step(ParamSet& params, const PathFilter& filter) {
  for (auto& [path, t] : params) {
    if (filter && !filter(path)) continue;
    require_grad_present(path, t);
    double* p = t.mutable_data();
    const double* g = t.grad();
    for (std::size_t i = 0; i < t.size(); ++i) p[i] -= lr_ * g[i];
  }
}

void Adam::step(ParamSet& params, const PathFilter& filter) {
  for (auto& [path, t] : params) {
    if (filter && !filter(path)) continue;
    require_grad_present(path, t);
    State& s = state_[path];
    if (s.m.empty()) {
      s.m.assign(t.size(), 0.0);
      s.v.assign(t.size(), 0.0);
    }
    s.t += 1;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(s.t));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(s.t));
    double* p = t.mutable_data();
    const double* g = t.grad();
    for (std::size_t i = 0; i < t.size(); ++i) {
      s.m[i] = beta1_ * s.m[i] + (1.0 - beta1_) * g[i];
      s.v[i] = beta2_ * s.v[i] + (1.0 - beta2_) * g[i] * g[i];
      const double mhat = s.m[i] / bc1;
      const double vhat = s.v[i] / bc2;
      p[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

std::unique_ptr<Optimizer> make_optimizer(const std::string& kind, double lr) {
  if (kind == "sgd") return std::make_unique<Sgd>(lr);
  if (kind == "adam") return std::make_unique<Adam>(lr);
  throw ConfigError("unknown optimizer '" + kind + "' (expected sgd or adam)");
}

}  // namespace taml
