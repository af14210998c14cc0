#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include "xmad/errors.hpp"
#include "xmad/graph.hpp"
#include "xmad/tensor.hpp"

namespace xmad {

struct OptimConfig {
  double lr = 0.005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool adamax = false;

  /// lr 0.002 with the infinity-norm second moment; kept as a preset, not the
  /// default — the toy data converges faster under plain Adam.
  static OptimConfig adamax_preset() {
    OptimConfig c;
    c.lr = 0.002;
    c.adamax = true;
    return c;
  }
};

/// Per-parameter Adam-family state. Deterministic: the update is a pure
/// function of (state, params, grads).
class Optimizer {
 public:
  explicit Optimizer(OptimConfig cfg = {}) : cfg_(cfg) {}

  const OptimConfig& config() const { return cfg_; }
  std::int64_t step_count() const { return step_; }

  void step(std::map<std::string, Tensor>& params, const GradMap& grads) {
    ++step_;
    double bias1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    double bias2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (auto& [name, p] : params) {
      auto it = grads.find(name);
      if (it == grads.end()) continue;
      const Tensor& g = it->second;
      if (!g.same_shape(p)) throw ContractError("Optimizer::step: gradient shape mismatch for " + name);
      Tensor& m = moment(m1_, name, p);
      Tensor& v = moment(m2_, name, p);
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
        if (cfg_.adamax) {
          v[i] = std::max(cfg_.beta2 * v[i], std::abs(g[i]));
          p[i] -= cfg_.lr / bias1 * m[i] / (v[i] + cfg_.eps);
        } else {
          v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
          double mhat = m[i] / bias1;
          double vhat = v[i] / bias2;
          p[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
        if (!std::isfinite(p[i])) throw NumericError("Optimizer::step: non-finite parameter " + name);
      }
    }
  }

 private:
  Tensor& moment(std::map<std::string, Tensor>& store, const std::string& name, const Tensor& p) {
    auto it = store.find(name);
    if (it == store.end()) it = store.emplace(name, Tensor(p.shape(), 0.0)).first;
    return it->second;
  }

  OptimConfig cfg_;
  std::int64_t step_ = 0;
  std::map<std::string, Tensor> m1_;
  std::map<std::string, Tensor> m2_;
};

}  // namespace xmad
