#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <string>
#include <vector>

#include "xmad/detect.hpp"
#include "xmad/errors.hpp"
#include "xmad/metrics.hpp"
#include "xmad/model.hpp"
#include "xmad/sample.hpp"

namespace xmad {

/// A detector to run: either at a fixed temperature or at the temperature
/// calibrated per checkpoint on the calibration sets.
struct DetectorRequest {
  ScoreKind kind = ScoreKind::MSP;
  bool calibrated = false;
  double temperature = 1.0;  // used when not calibrated
};

struct EvalSet {
  Task task = Task::T1;
  Family family = Family::EVAL;
  std::filesystem::path path;
};

struct MatrixSpec {
  std::vector<std::pair<std::string, std::filesystem::path>> checkpoints;  // (tag, path)
  std::filesystem::path id_eval;                    // fused ID side + accuracy split
  std::filesystem::path id_calib;                   // held-out ID for calibration
  std::vector<std::filesystem::path> calib_anomaly; // pooled TRAIN-family anomalies
  std::vector<EvalSet> eval_sets;
  std::vector<DetectorRequest> detectors;
  std::vector<double> t_grid;
  std::filesystem::path out_path;
  std::filesystem::path scores_path;  // empty = no dump
  std::string config_hash = "none";

  static std::vector<DetectorRequest> default_detectors() {
    return {{ScoreKind::MSP, false, 1.0},
            {ScoreKind::MSP, true, 1.0},
            {ScoreKind::MAP, false, 1.0},
            {ScoreKind::MAP, true, 1.0}};
  }
};

struct AurocRow {
  std::string model;
  ScoreKind kind = ScoreKind::MSP;
  double temperature = 1.0;
  Task task = Task::T1;
  Family family = Family::EVAL;
  double auroc = 0.0;
  int n_id = 0;
  int n_anom = 0;
};

struct AccuracyRow {
  std::string model;
  std::string split;
  double accuracy = 0.0;
};

struct ResultTable {
  std::string config_hash = "none";
  std::vector<AurocRow> rows;
  std::vector<AccuracyRow> accuracy;
};

namespace detail {

/// Cached per-sample forward outputs so re-scoring at a new temperature does
/// not repeat the forward pass.
struct ScoredSet {
  std::vector<Prediction> preds;

  static ScoredSet from(const Model& model, const std::vector<Sample>& data) {
    ScoredSet s;
    s.preds.reserve(data.size());
    for (const Sample& smp : data) s.preds.push_back(predict(model, smp));
    return s;
  }

  std::vector<double> scores(ScoreKind kind, double t) const {
    std::vector<double> out;
    out.reserve(preds.size());
    for (const Prediction& p : preds) out.push_back(score_prediction(p, kind, t));
    return out;
  }
};

inline std::vector<Sample> read_required(const std::filesystem::path& p) {
  if (!std::filesystem::exists(p)) throw ResolutionError(p.string());
  return read_dataset(p);
}

}  // namespace detail

/// Runs the full detector x task x family grid for every checkpoint, fusing
/// the ID validation set with each anomaly set and scoring separability.
/// Rows come out fully ordered (checkpoint, detector, eval-set order).
inline ResultTable run_matrix(const MatrixSpec& spec) {
  ResultTable table;
  table.config_hash = spec.config_hash;
  std::vector<ScoreRecord> dump;

  std::vector<Sample> id_eval = detail::read_required(spec.id_eval);
  std::vector<Sample> id_calib = detail::read_required(spec.id_calib);
  std::vector<Sample> calib_anoms;
  for (const auto& p : spec.calib_anomaly) {
    auto part = detail::read_required(p);
    calib_anoms.insert(calib_anoms.end(), part.begin(), part.end());
  }
  std::vector<std::pair<EvalSet, std::vector<Sample>>> eval_data;
  for (const EvalSet& es : spec.eval_sets) eval_data.push_back({es, detail::read_required(es.path)});

  for (const auto& [tag, ckpt_path] : spec.checkpoints) {
    if (!std::filesystem::exists(ckpt_path)) throw ResolutionError(ckpt_path.string());
    Model model = load_model(ckpt_path);

    detail::ScoredSet id_eval_scored = detail::ScoredSet::from(model, id_eval);
    detail::ScoredSet id_calib_scored = detail::ScoredSet::from(model, id_calib);
    detail::ScoredSet calib_anom_scored = detail::ScoredSet::from(model, calib_anoms);

    // Resolve requested detectors to concrete (kind, T) pairs.
    std::vector<std::pair<ScoreKind, double>> detectors;
    for (const DetectorRequest& req : spec.detectors) {
      double t = req.temperature;
      if (req.calibrated) {
        if (id_calib.empty() || calib_anoms.empty())
          throw CalibrationError("run_matrix: calibrated detector needs calibration sets");
        Calibration cal = calibrate(
            [&](double tt) { return id_calib_scored.scores(req.kind, tt); },
            [&](double tt) { return calib_anom_scored.scores(req.kind, tt); }, spec.t_grid);
        t = cal.temperature;
      }
      detectors.push_back({req.kind, t});
    }

    std::vector<detail::ScoredSet> anom_scored;
    for (const auto& [es, data] : eval_data)
      anom_scored.push_back(detail::ScoredSet::from(model, data));

    for (const auto& [kind, t] : detectors) {
      std::vector<double> id_scores = id_eval_scored.scores(kind, t);
      for (std::size_t e = 0; e < eval_data.size(); ++e) {
        const EvalSet& es = eval_data[e].first;
        const std::vector<Sample>& data = eval_data[e].second;
        std::vector<double> anom_scores = anom_scored[e].scores(kind, t);
        AurocRow row;
        row.model = tag;
        row.kind = kind;
        row.temperature = t;
        row.task = es.task;
        row.family = es.family;
        row.auroc = auroc(id_scores, anom_scores);
        row.n_id = static_cast<int>(id_scores.size());
        row.n_anom = static_cast<int>(anom_scores.size());
        table.rows.push_back(row);
        if (!spec.scores_path.empty()) {
          for (std::size_t i = 0; i < anom_scores.size(); ++i)
            dump.push_back({data[i].seed_index, es.task, true, kind, t, anom_scores[i]});
        }
      }
      if (!spec.scores_path.empty()) {
        for (std::size_t i = 0; i < id_scores.size(); ++i)
          dump.push_back({id_eval[i].seed_index, Task::ID, false, kind, t, id_scores[i]});
      }
    }

    AccuracyRow acc;
    acc.model = tag;
    acc.split = "val";
    acc.accuracy = accuracy(model, id_eval);
    table.accuracy.push_back(acc);
  }

  if (!spec.scores_path.empty()) write_scores(spec.scores_path, dump);
  return table;
}

// ---- persistence ------------------------------------------------------------

inline constexpr const char* kResultsMagic = "xmad-results v1";
inline constexpr const char* kResultsColumns =
    "type,model,detector,T,task,family,auroc,n_id,n_anom,accuracy";

inline void write_results(const std::filesystem::path& path, const ResultTable& table) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open for writing: " + path.string());
  out << kResultsMagic << " config=" << table.config_hash << "\n";
  out << kResultsColumns << "\n";
  char buf[64];
  for (const AurocRow& r : table.rows) {
    std::snprintf(buf, sizeof buf, "%.4f", r.temperature);
    out << "auroc," << r.model << "," << score_kind_name(r.kind) << "," << buf << ","
        << task_name(r.task) << "," << family_name(r.family) << ",";
    std::snprintf(buf, sizeof buf, "%.4f", r.auroc);
    out << buf << "," << r.n_id << "," << r.n_anom << ",\n";
  }
  for (const AccuracyRow& r : table.accuracy) {
    std::snprintf(buf, sizeof buf, "%.4f", r.accuracy);
    out << "acc," << r.model << "," << r.split << ",,,,,,," << buf << "\n";
  }
}

inline ResultTable read_results(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ResolutionError(path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind(kResultsMagic, 0) != 0)
    throw ParseError(path.string() + ": bad results header");
  ResultTable table;
  std::size_t eq = line.find("config=");
  if (eq != std::string::npos) table.config_hash = line.substr(eq + 7);
  if (!std::getline(in, line) || line != kResultsColumns)
    throw ParseError(path.string() + ": bad results columns");
  int lineno = 2;
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
    if (f.size() != 10)
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": bad field count");
    try {
      if (f[0] == "auroc") {
        AurocRow r;
        r.model = f[1];
        r.kind = score_kind_from(f[2]);
        r.temperature = std::stod(f[3]);
        r.task = task_from(f[4]);
        r.family = family_from(f[5]);
        r.auroc = std::stod(f[6]);
        r.n_id = std::stoi(f[7]);
        r.n_anom = std::stoi(f[8]);
        table.rows.push_back(r);
      } else if (f[0] == "acc") {
        table.accuracy.push_back({f[1], f[2], std::stod(f[9])});
      } else {
        throw ParseError("unknown row type " + f[0]);
      }
    } catch (const std::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return table;
}

/// Renders the AUROC grid (tasks down, detectors across) per model and
/// family, plus the accuracy block.
inline void render_report(std::ostream& os, const ResultTable& table) {
  os << "results (config " << table.config_hash << ")\n";
  std::vector<std::string> models;
  for (const AurocRow& r : table.rows)
    if (std::find(models.begin(), models.end(), r.model) == models.end())
      models.push_back(r.model);

  for (const std::string& m : models) {
    std::vector<std::pair<ScoreKind, double>> detectors;
    std::vector<Family> families;
    for (const AurocRow& r : table.rows) {
      if (r.model != m) continue;
      if (std::find(detectors.begin(), detectors.end(),
                    std::make_pair(r.kind, r.temperature)) == detectors.end())
        detectors.push_back({r.kind, r.temperature});
      if (std::find(families.begin(), families.end(), r.family) == families.end())
        families.push_back(r.family);
    }
    for (Family fam : families) {
      os << "\nmodel " << m << ", family " << family_name(fam) << " (AUROC)\n";
      os << std::left << std::setw(8) << "task";
      for (const auto& [kind, t] : detectors) {
        char head[48];
        std::snprintf(head, sizeof head, "%s@T=%g", score_kind_name(kind), t);
        os << std::setw(14) << head;
      }
      os << "\n";
      for (Task task : {Task::T1, Task::T2, Task::T3, Task::T4, Task::T5}) {
        bool any = false;
        for (const AurocRow& r : table.rows)
          if (r.model == m && r.family == fam && r.task == task) any = true;
        if (!any) continue;
        os << std::setw(8) << task_name(task);
        for (const auto& [kind, t] : detectors) {
          bool found = false;
          for (const AurocRow& r : table.rows) {
            if (r.model == m && r.family == fam && r.task == task && r.kind == kind &&
                r.temperature == t) {
              char cell[32];
              std::snprintf(cell, sizeof cell, "%.4f", r.auroc);
              os << std::setw(14) << cell;
              found = true;
              break;
            }
          }
          if (!found) os << std::setw(14) << "-";
        }
        os << "\n";
      }
    }
  }
  if (!table.accuracy.empty()) {
    os << "\naccuracy\n";
    for (const AccuracyRow& r : table.accuracy) {
      char cell[32];
      std::snprintf(cell, sizeof cell, "%.4f", r.accuracy);
      os << std::setw(8) << r.model << " " << r.split << " " << cell << "\n";
    }
  }
}

}  // namespace xmad
