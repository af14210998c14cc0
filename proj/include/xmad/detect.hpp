#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "xmad/errors.hpp"
#include "xmad/metrics.hpp"
#include "xmad/model.hpp"
#include "xmad/tensor.hpp"

namespace xmad {

enum class ScoreKind { MSP, MAP };

inline const char* score_kind_name(ScoreKind k) { return k == ScoreKind::MSP ? "MSP" : "MAP"; }

inline ScoreKind score_kind_from(const std::string& s) {
  if (s == "MSP") return ScoreKind::MSP;
  if (s == "MAP") return ScoreKind::MAP;
  throw ParseError("unknown detector kind: " + s);
}

/// Thresholded confidence detector: flag anomalous when score <= delta.
struct DetectorSpec {
  ScoreKind kind = ScoreKind::MSP;
  double temperature = 1.0;
  double delta = 0.0;
};

/// Maximum softmax probability of the answer head at temperature T.
inline double msp(const std::vector<double>& logits, double temperature) {
  if (logits.size() < 2) throw DomainError("msp: need at least 2 classes");
  std::vector<double> p = masked_softmax(logits, temperature);
  return *std::max_element(p.begin(), p.end());
}

inline double msp(const Tensor& logits, double temperature) {
  return msp(logits.data(), temperature);
}

/// Maximum attention probability: per head, the largest cell of the joint
/// softmax over unmasked (object, token) cells at temperature T; reduced over
/// heads by mean (average of per-head maxima) or max when `max_over_heads`.
/// The temperature is applied here, at detection time only.
inline double map_score(const std::vector<Tensor>& head_logits,
                        const std::vector<std::uint8_t>& cell_mask, double temperature,
                        bool max_over_heads = false) {
  if (head_logits.empty()) throw DomainError("map: no attention heads");
  double acc = max_over_heads ? 0.0 : 0.0;
  for (const Tensor& logits : head_logits) {
    std::vector<double> p = masked_softmax(logits.data(), temperature, &cell_mask);
    double head_max = *std::max_element(p.begin(), p.end());
    if (max_over_heads)
      acc = std::max(acc, head_max);
    else
      acc += head_max / static_cast<double>(head_logits.size());
  }
  return acc;
}

inline double map_score(const Prediction& p, double temperature, bool max_over_heads = false) {
  return map_score(p.attn_logits, p.attn_mask, temperature, max_over_heads);
}

inline double score_prediction(const Prediction& p, ScoreKind kind, double temperature) {
  return kind == ScoreKind::MSP ? msp(p.logits, temperature) : map_score(p, temperature);
}

inline int detect(const DetectorSpec& spec, double score) {
  return score <= spec.delta ? 1 : 0;
}

struct Calibration {
  double temperature = 1.0;
  double delta = 0.0;
  double auroc_at_t = 0.0;
};

/// Picks the grid temperature maximizing AUROC of ID-vs-anomaly scores
/// (smallest T on ties), then the threshold maximizing TPR - FPR under the
/// score <= delta rule (smallest delta on ties).
inline Calibration calibrate(const std::function<std::vector<double>(double)>& id_scores_at,
                             const std::function<std::vector<double>(double)>& anom_scores_at,
                             std::vector<double> t_grid) {
  if (t_grid.empty()) throw CalibrationError("calibrate: empty temperature grid");
  std::sort(t_grid.begin(), t_grid.end());
  Calibration best;
  bool have = false;
  for (double t : t_grid) {
    if (t <= 0.0) throw CalibrationError("calibrate: temperatures must be positive");
    std::vector<double> id = id_scores_at(t);
    std::vector<double> anom = anom_scores_at(t);
    if (id.empty() || anom.empty()) throw CalibrationError("calibrate: empty calibration set");
    double a = auroc(id, anom);
    if (!have || a > best.auroc_at_t) {
      have = true;
      best.temperature = t;
      best.auroc_at_t = a;
    }
  }

  std::vector<double> id = id_scores_at(best.temperature);
  std::vector<double> anom = anom_scores_at(best.temperature);
  std::set<double> cand(id.begin(), id.end());
  cand.insert(anom.begin(), anom.end());
  double best_j = -2.0;
  for (double delta : cand) {
    double tpr = 0.0, fpr = 0.0;
    for (double s : anom) tpr += s <= delta ? 1.0 : 0.0;
    for (double s : id) fpr += s <= delta ? 1.0 : 0.0;
    tpr /= static_cast<double>(anom.size());
    fpr /= static_cast<double>(id.size());
    if (tpr - fpr > best_j) {
      best_j = tpr - fpr;
      best.delta = delta;
    }
  }
  return best;
}

inline std::vector<double> t_grid_default() { return {1, 2, 5, 10, 50, 100, 1000}; }

// ---- score dump -----------------------------------------------------------

struct ScoreRecord {
  int sample_id = 0;
  Task task = Task::ID;
  bool is_anomaly = false;
  ScoreKind kind = ScoreKind::MSP;
  double temperature = 1.0;
  double score = 0.0;
};

inline constexpr const char* kScoresHeader = "sample_id,task,is_anomaly,detector,T,score";

inline void write_scores(const std::filesystem::path& path,
                         const std::vector<ScoreRecord>& records) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open for writing: " + path.string());
  out << kScoresHeader << "\n";
  char buf[64];
  for (const ScoreRecord& r : records) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g", r.temperature, r.score);
    out << r.sample_id << "," << task_name(r.task) << "," << (r.is_anomaly ? 1 : 0) << ","
        << score_kind_name(r.kind) << "," << buf << "\n";
  }
}

inline std::vector<ScoreRecord> read_scores(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ResolutionError(path.string());
  std::string line;
  if (!std::getline(in, line) || line != kScoresHeader)
    throw ParseError(path.string() + ": bad scores header");
  std::vector<ScoreRecord> records;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::size_t pos = 0;
    while (true) {
      std::size_t comma = line.find(',', pos);
      f.push_back(line.substr(pos, comma == std::string::npos ? comma : comma - pos));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    if (f.size() != 6)
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": bad field count");
    ScoreRecord r;
    try {
      r.sample_id = std::stoi(f[0]);
      r.task = task_from(f[1]);
      r.is_anomaly = f[2] == "1";
      r.kind = score_kind_from(f[3]);
      r.temperature = std::stod(f[4]);
      r.score = std::stod(f[5]);
    } catch (const std::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    records.push_back(r);
  }
  return records;
}

}  // namespace xmad
