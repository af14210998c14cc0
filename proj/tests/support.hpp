#pragma once

// Shared helpers for the test binaries: a full-model finite-difference
// gradient oracle and small dataset/model factories.

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "xmad/graph.hpp"
#include "xmad/model.hpp"
#include "xmad/rng.hpp"
#include "xmad/sample.hpp"
#include "xmad/world.hpp"

namespace xmad_test {

inline std::vector<double> one_hot(int n, int idx) {
  std::vector<double> v(n, 0.0);
  v[idx] = 1.0;
  return v;
}

/// A random full-batch sample matching the config (not world-consistent;
/// for numeric tests only).
inline xmad::Sample random_sample(const xmad::ModelConfig& cfg, xmad::Rng& rng,
                                  int valid_tokens = -1) {
  xmad::Sample s;
  s.features = xmad::Tensor({cfg.K, cfg.d});
  for (std::size_t i = 0; i < s.features.size(); ++i) s.features[i] = rng.uniform(-1.0, 1.0);
  if (valid_tokens < 0) valid_tokens = 1 + rng.uniform_int(cfg.M);
  s.tokens.assign(cfg.M, 0);
  s.token_mask.assign(cfg.M, 0);
  for (int j = 0; j < cfg.M; ++j) {
    s.tokens[j] = rng.uniform_int(cfg.vocab);
    s.token_mask[j] = j < valid_tokens ? 1 : 0;
  }
  s.answer = rng.uniform_int(cfg.num_answers);
  return s;
}

inline double model_ce_loss(const xmad::Model& m, const xmad::Sample& s, int target) {
  xmad::Graph g;
  std::map<std::string, xmad::NodeId> ids;
  xmad::ForwardNodes f = xmad::forward(g, m, ids, s);
  return g
      .value(g.cross_entropy(f.logits, one_hot(m.config.num_answers, target)))
      .item();
}

/// Central-difference check of the full-model cross-entropy gradient.
/// Returns the max guarded relative error over every parameter entry.
inline double model_grad_check(const xmad::Model& model, const xmad::Sample& s, int target,
                               double h = 1e-4) {
  xmad::GradMap analytic;
  {
    xmad::Graph g;
    std::map<std::string, xmad::NodeId> ids;
    xmad::ForwardNodes f = xmad::forward(g, model, ids, s);
    analytic = g.backward(
        g.cross_entropy(f.logits, one_hot(model.config.num_answers, target)));
  }
  double worst = 0.0;
  for (const auto& [name, tensor] : model.params) {
    for (std::size_t i = 0; i < tensor.size(); ++i) {
      xmad::Model up = model, down = model;
      up.params[name][i] += h;
      down.params[name][i] -= h;
      double fd = (model_ce_loss(up, s, target) - model_ce_loss(down, s, target)) / (2.0 * h);
      double an = analytic.at(name)[i];
      double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-3});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

/// The K=4/M=5/h=8/N=6 gradient-check configuration.
inline xmad::ModelConfig small_config(xmad::AttentionVariant variant, int heads,
                                      std::uint64_t seed = 1) {
  xmad::ModelConfig cfg;
  cfg.hidden = 8;
  cfg.heads = heads;
  cfg.variant = variant;
  cfg.num_answers = 6;
  cfg.K = 4;
  cfg.M = 5;
  cfg.d = 12;
  cfg.vocab = 31;
  cfg.init_seed = seed;
  return cfg;
}

}  // namespace xmad_test
