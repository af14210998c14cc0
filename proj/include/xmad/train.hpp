#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "xmad/errors.hpp"
#include "xmad/graph.hpp"
#include "xmad/metrics.hpp"
#include "xmad/model.hpp"
#include "xmad/optim.hpp"
#include "xmad/rng.hpp"
#include "xmad/sample.hpp"

namespace xmad {

enum class TrainMethod { BASE, OE, RA, RA_VAR };

inline const char* method_name(TrainMethod m) {
  switch (m) {
    case TrainMethod::BASE: return "base";
    case TrainMethod::OE: return "oe";
    case TrainMethod::RA: return "ra";
    case TrainMethod::RA_VAR: return "ra-var";
  }
  return "?";
}

inline TrainMethod method_from(const std::string& s) {
  for (TrainMethod m : {TrainMethod::BASE, TrainMethod::OE, TrainMethod::RA, TrainMethod::RA_VAR})
    if (s == method_name(m)) return m;
  throw ConfigError("unknown train method: " + s);
}

struct TrainConfig {
  TrainMethod method = TrainMethod::BASE;
  int epochs = 40;
  int batch_size = 32;
  double lr = 0.005;
  std::uint64_t seed = 0;
  double lambda = 1e-5;      // RA weight
  double lambda_var = 1e-2;  // RA-VAR weight (chosen for comparable gradient scale)
  OptimConfig optim;         // lr is copied in; other fields as configured

  void validate() const {
    if (epochs < 0 || batch_size < 1) throw ConfigError("TrainConfig: bad epochs/batch size");
    if (lambda < 0.0 || lambda_var < 0.0) throw ConfigError("TrainConfig: lambda must be >= 0");
  }
};

struct EpochLog {
  double task_loss = 0.0;
  double reg_loss = 0.0;
  double val_accuracy = 0.0;
};

/// Per-epoch record of the run. wall_seconds is informational and is not
/// persisted, so logs from identical runs compare equal.
struct TrainLog {
  std::vector<EpochLog> epochs;
  double wall_seconds = 0.0;

  friend bool operator==(const TrainLog& a, const TrainLog& b) {
    if (a.epochs.size() != b.epochs.size()) return false;
    for (std::size_t i = 0; i < a.epochs.size(); ++i) {
      if (a.epochs[i].task_loss != b.epochs[i].task_loss) return false;
      if (a.epochs[i].reg_loss != b.epochs[i].reg_loss) return false;
      if (a.epochs[i].val_accuracy != b.epochs[i].val_accuracy) return false;
    }
    return true;
  }
};

inline void write_trainlog(const std::filesystem::path& path, const TrainLog& log) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open for writing: " + path.string());
  out << "epoch,task_loss,reg_loss,val_accuracy\n";
  char buf[128];
  for (std::size_t i = 0; i < log.epochs.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g", i + 1, log.epochs[i].task_loss,
                  log.epochs[i].reg_loss, log.epochs[i].val_accuracy);
    out << buf << "\n";
  }
}

namespace detail {

inline std::vector<double> one_hot(int n, int idx) {
  std::vector<double> v(n, 0.0);
  v[idx] = 1.0;
  return v;
}

/// Cycling, per-epoch-reshuffled index stream over one dataset.
class BatchStream {
 public:
  BatchStream(std::size_t n, std::uint64_t seed) : rng_(seed), order_(n) {
    for (std::size_t i = 0; i < n; ++i) order_[i] = i;
    rng_.shuffle(order_);
  }

  std::size_t next() {
    if (pos_ == order_.size()) {
      rng_.shuffle(order_);
      pos_ = 0;
    }
    return order_[pos_++];
  }

 private:
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

/// Attention-regularizer term for one sample: RA's -sum log(1 - A_ij) over
/// heads and unmasked cells, or RA-VAR's summed per-head cell variance.
inline NodeId attention_penalty(Graph& g, const ForwardNodes& f, TrainMethod method) {
  std::vector<NodeId> parts;
  for (NodeId probs : f.attn_probs) {
    if (method == TrainMethod::RA)
      parts.push_back(g.scale(g.masked_sum(g.log1m(probs), f.attn_mask), -1.0));
    else
      parts.push_back(g.masked_variance(probs, f.attn_mask));
  }
  NodeId total = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) total = g.add(total, parts[i]);
  return total;
}

}  // namespace detail

struct TrainResult {
  Model model;  // best-val checkpoint for base training, final model for fine-tuning
  TrainLog log;
};

/// Maximum-likelihood training of the answer head: mean cross-entropy over
/// shuffled mini-batches, returning the checkpoint with the best validation
/// accuracy.
inline TrainResult train_base(Model model, const std::vector<Sample>& id_train,
                              const std::vector<Sample>& id_val, const TrainConfig& cfg) {
  cfg.validate();
  if (id_train.empty()) throw DataError("train_base: empty training set");
  for (const Sample& s : id_train)
    if (s.answer == kUndefinedAnswer)
      throw DataError("train_base: training sample has undefined answer");

  auto t0 = std::chrono::steady_clock::now();
  OptimConfig oc = cfg.optim;
  oc.lr = cfg.lr;
  Optimizer opt(oc);
  detail::BatchStream ids(id_train.size(), derive_seed(cfg.seed, "id-shuffle"));
  int n = model.config.num_answers;
  std::size_t steps_per_epoch = (id_train.size() + cfg.batch_size - 1) / cfg.batch_size;

  TrainResult res;
  res.model = model;
  double best_acc = -1.0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (std::size_t step = 0; step < steps_per_epoch; ++step) {
      Graph g;
      std::map<std::string, NodeId> pnodes;
      std::vector<NodeId> losses;
      for (int b = 0; b < cfg.batch_size; ++b) {
        const Sample& s = id_train[ids.next()];
        ForwardNodes f = forward(g, model, pnodes, s);
        losses.push_back(g.cross_entropy(f.logits, detail::one_hot(n, s.answer)));
      }
      NodeId loss = g.mean_scalars(losses);
      epoch_loss += g.value(loss).item();
      GradMap grads = g.backward(loss);
      opt.step(model.params, grads);
    }
    EpochLog row;
    row.task_loss = epoch_loss / static_cast<double>(steps_per_epoch);
    row.val_accuracy = id_val.empty() ? 0.0 : accuracy(model, id_val);
    res.log.epochs.push_back(row);
    if (row.val_accuracy > best_acc) {
      best_acc = row.val_accuracy;
      res.model = model;
    }
  }
  if (cfg.epochs == 0 || id_val.empty()) res.model = std::move(model);
  res.log.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

/// Post-training with one of the three regimes. Every step takes one ID batch
/// (task cross-entropy) and one anomaly batch of equal size, composed of
/// balanced slices of the given anomaly sources:
///   OE      adds cross-entropy of the anomaly output against uniform;
///   RA      adds -lambda * sum log(1 - A_ij) over heads and unmasked cells;
///   RA_VAR  adds lambda_var * variance of A_ij over unmasked cells.
/// Returns the final model.
inline TrainResult finetune(Model model, const std::vector<Sample>& id_train,
                            const std::vector<std::vector<Sample>>& anomaly_sources,
                            const std::vector<Sample>& id_val, const TrainConfig& cfg,
                            std::vector<double> mix_weights = {}) {
  cfg.validate();
  if (cfg.method == TrainMethod::BASE)
    throw ConfigError("finetune: method must be one of oe/ra/ra-var");
  if (id_train.empty()) throw DataError("finetune: empty ID training set");
  if (anomaly_sources.empty()) throw DataError("finetune: no anomaly sources");
  if (mix_weights.empty()) mix_weights.assign(anomaly_sources.size(), 1.0);
  if (mix_weights.size() != anomaly_sources.size())
    throw ConfigError("finetune: mix weight count does not match anomaly sources");
  for (double w : mix_weights)
    if (w <= 0.0) throw ConfigError("finetune: mix weights must be positive");
  for (const auto& src : anomaly_sources) {
    if (src.empty()) throw DataError("finetune: empty anomaly source");
    for (const Sample& s : src) {
      if (!s.is_anomaly() || s.answer != kUndefinedAnswer)
        throw DataError("finetune: anomaly source contains answerable ID-like samples");
      if (s.family != Family::TRAIN)
        throw DataError("finetune: anomaly sources must be TRAIN-family only");
    }
  }
  for (const Sample& s : id_train)
    if (s.answer == kUndefinedAnswer)
      throw DataError("finetune: ID training sample has undefined answer");

  auto t0 = std::chrono::steady_clock::now();
  OptimConfig oc = cfg.optim;
  oc.lr = cfg.lr;
  Optimizer opt(oc);
  detail::BatchStream ids(id_train.size(), derive_seed(cfg.seed, "id-shuffle"));
  std::vector<detail::BatchStream> anom;
  for (std::size_t i = 0; i < anomaly_sources.size(); ++i)
    anom.emplace_back(anomaly_sources[i].size(),
                      derive_seed(cfg.seed, "anomaly-shuffle/" + std::to_string(i)));

  int n = model.config.num_answers;
  std::vector<double> uniform(n, 1.0 / n);
  std::size_t steps_per_epoch = (id_train.size() + cfg.batch_size - 1) / cfg.batch_size;
  double weight = cfg.method == TrainMethod::RA       ? cfg.lambda
                  : cfg.method == TrainMethod::RA_VAR ? cfg.lambda_var
                                                      : 1.0;

  // Balanced batch composition: per-source slot counts by largest remainder,
  // identical for every step.
  std::vector<std::size_t> slot_source;
  {
    double wsum = 0.0;
    for (double w : mix_weights) wsum += w;
    std::vector<int> counts(mix_weights.size(), 0);
    std::vector<std::pair<double, std::size_t>> rema;
    int assigned = 0;
    for (std::size_t i = 0; i < mix_weights.size(); ++i) {
      double exact = mix_weights[i] / wsum * cfg.batch_size;
      counts[i] = static_cast<int>(exact);
      assigned += counts[i];
      rema.push_back({exact - counts[i], i});
    }
    std::stable_sort(rema.begin(), rema.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t r = 0; assigned < cfg.batch_size; ++r, ++assigned)
      counts[rema[r % rema.size()].second]++;
    for (std::size_t i = 0; i < counts.size(); ++i)
      for (int c = 0; c < counts[i]; ++c) slot_source.push_back(i);
  }

  TrainResult res;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double epoch_task = 0.0, epoch_reg = 0.0;
    for (std::size_t step = 0; step < steps_per_epoch; ++step) {
      Graph g;
      std::map<std::string, NodeId> pnodes;
      std::vector<NodeId> task_losses;
      for (int b = 0; b < cfg.batch_size; ++b) {
        const Sample& s = id_train[ids.next()];
        ForwardNodes f = forward(g, model, pnodes, s);
        task_losses.push_back(g.cross_entropy(f.logits, detail::one_hot(n, s.answer)));
      }
      std::vector<NodeId> penalties;
      for (int b = 0; b < cfg.batch_size; ++b) {
        std::size_t src = slot_source[static_cast<std::size_t>(b)];
        const Sample& s = anomaly_sources[src][anom[src].next()];
        ForwardNodes f = forward(g, model, pnodes, s);
        if (cfg.method == TrainMethod::OE)
          penalties.push_back(g.cross_entropy(f.logits, uniform));
        else
          penalties.push_back(detail::attention_penalty(g, f, cfg.method));
      }
      NodeId task_loss = g.mean_scalars(task_losses);
      NodeId reg_loss = g.scale(g.mean_scalars(penalties), weight);
      NodeId loss = g.add(task_loss, reg_loss);
      epoch_task += g.value(task_loss).item();
      epoch_reg += g.value(reg_loss).item();
      GradMap grads = g.backward(loss);
      opt.step(model.params, grads);
    }
    EpochLog row;
    row.task_loss = epoch_task / static_cast<double>(steps_per_epoch);
    row.reg_loss = epoch_reg / static_cast<double>(steps_per_epoch);
    row.val_accuracy = id_val.empty() ? 0.0 : accuracy(model, id_val);
    res.log.epochs.push_back(row);
  }
  res.model = std::move(model);
  res.log.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

/// Mean KL(uniform || output softmax) over a dataset; the quantity OE drives
/// towards zero on known anomalies.
inline double mean_uniform_kl(const Model& model, const std::vector<Sample>& data) {
  if (data.empty()) throw DomainError("mean_uniform_kl: empty dataset");
  double total = 0.0;
  int n = model.config.num_answers;
  for (const Sample& s : data) {
    Prediction p = predict(model, s);
    double lse = logsumexp(p.logits.data());
    double mean_logit = 0.0;
    for (double l : p.logits.data()) mean_logit += l / n;
    total += (lse - mean_logit) - std::log(static_cast<double>(n));
  }
  return total / static_cast<double>(data.size());
}

struct Theorem1Result {
  double max_deviation = 0.0;  // max_i |x_i - 1/K| over all trials
  double best_value = 0.0;     // highest f(x) = sum log(1 - x_i) reached
};

/// Numerically verifies that sum_i log(1 - x_i) over the K-simplex is
/// maximized by the uniform distribution: gradient ascent on softmax-
/// parameterized points from random starts must land within tol of 1/K.
/// Throws NumericError when any trial misses that bound.
inline Theorem1Result verify_theorem1(int k, int trials, double tol = 1e-3,
                                      std::uint64_t seed = 0) {
  if (k < 2) throw DomainError("verify_theorem1: K must be >= 2 (K=1 forces log 0)");
  if (trials < 1) throw DomainError("verify_theorem1: trials must be >= 1");
  if (tol <= 0.0) throw DomainError("verify_theorem1: tol must be positive");
  Theorem1Result res;
  res.best_value = -std::numeric_limits<double>::infinity();
  for (int trial = 0; trial < trials; ++trial) {
    Rng rng(derive_seed(seed, "theorem1/" + std::to_string(trial)));
    std::map<std::string, Tensor> params{{"z", Tensor({1, k})}};
    for (int i = 0; i < k; ++i) params["z"][i] = rng.normal(0.0, 2.0);

    auto evaluate = [&](double* value_out) {
      Graph g;
      NodeId x = g.softmax(g.param("z", params["z"]), 1.0);
      if (value_out) *value_out = g.value(g.sum(g.log1m(x))).item();
      return g.value(x);
    };

    // Adam hovers at the learning-rate scale, so anneal in stages to pin the
    // iterate down to well below tol.
    double deviation = 1.0;
    for (double lr = 0.1; lr > 1e-8 && deviation > tol / 10.0; lr *= 0.5) {
      Optimizer opt(OptimConfig{.lr = lr});
      for (int it = 0; it < 150; ++it) {
        Graph g;
        NodeId x = g.softmax(g.param("z", params["z"]), 1.0);
        NodeId loss = g.scale(g.sum(g.log1m(x)), -1.0);  // ascend f by descending -f
        opt.step(params, g.backward(loss));
      }
      Tensor probs = evaluate(nullptr);
      deviation = 0.0;
      for (int i = 0; i < k; ++i)
        deviation = std::max(deviation, std::abs(probs[i] - 1.0 / k));
    }
    double value = 0.0;
    evaluate(&value);
    res.max_deviation = std::max(res.max_deviation, deviation);
    res.best_value = std::max(res.best_value, value);
  }
  if (res.max_deviation > tol)
    throw NumericError("verify_theorem1: deviation " + std::to_string(res.max_deviation) +
                       " exceeds tolerance");
  return res;
}

}  // namespace xmad
