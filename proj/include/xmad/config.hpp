#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "xmad/detect.hpp"
#include "xmad/errors.hpp"
#include "xmad/model.hpp"
#include "xmad/rng.hpp"
#include "xmad/train.hpp"
#include "xmad/world.hpp"

namespace xmad {

struct GenSizes {
  int n_id = 3000;            // split into train + calibration
  int n_id_val = 400;
  int n_anom_train = 400;     // per task, TRAIN family
  int n_anom_eval = 400;      // per task, EVAL family
  double calib_fraction = 0.1;
};

/// One structured config file drives the whole recipe; flags only override
/// paths and the seed. Unknown keys anywhere are rejected.
struct RunConfig {
  std::uint64_t seed = 0;
  WorldSpec world = WorldSpec::toy();
  GenSizes gen;

  int hidden = 32;
  int heads = 2;
  AttentionVariant variant = AttentionVariant::PAIRWISE;

  TrainConfig train;     // base training
  TrainConfig finetune;  // post-training defaults
  std::vector<std::string> mix_tasks = {"T1", "T2", "T4"};
  std::vector<double> mix_weights = {1.0, 1.0, 1.0};

  std::vector<double> t_grid = t_grid_default();
  std::vector<Family> eval_families = {Family::EVAL};

  std::string hash = "none";  // of the canonical config text

  ModelConfig model_config(std::uint64_t init_seed) const {
    ModelConfig c;
    c.hidden = hidden;
    c.heads = heads;
    c.variant = variant;
    c.num_answers = world.num_answers();
    c.K = world.K;
    c.M = world.M;
    c.d = world.d();
    c.vocab = world.vocab_size();
    c.init_seed = init_seed;
    return c;
  }
};

namespace detail {

inline void reject_unknown(const nlohmann::json& obj, const std::set<std::string>& known,
                           const std::string& where) {
  for (const auto& [key, value] : obj.items())
    if (!known.count(key)) throw ConfigError("unknown config key " + where + "." + key);
}

template <typename T>
inline void maybe(const nlohmann::json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

inline void parse_train_section(const nlohmann::json& j, const std::string& where,
                                TrainConfig& cfg) {
  reject_unknown(j, {"epochs", "batch_size", "lr", "lambda", "lambda_var", "optimizer"}, where);
  maybe(j, "epochs", cfg.epochs);
  maybe(j, "batch_size", cfg.batch_size);
  maybe(j, "lr", cfg.lr);
  maybe(j, "lambda", cfg.lambda);
  maybe(j, "lambda_var", cfg.lambda_var);
  if (j.contains("optimizer")) {
    std::string opt = j.at("optimizer").get<std::string>();
    if (opt == "adam")
      cfg.optim = OptimConfig{};
    else if (opt == "adamax")
      cfg.optim = OptimConfig::adamax_preset();
    else
      throw ConfigError("unknown optimizer: " + opt);
  }
}

}  // namespace detail

inline RunConfig parse_config(const nlohmann::json& j) {
  RunConfig cfg;
  detail::reject_unknown(j, {"seed", "world", "gen", "model", "train", "finetune", "detect",
                             "eval"},
                         "config");
  detail::maybe(j, "seed", cfg.seed);

  if (j.contains("world")) {
    const auto& w = j.at("world");
    detail::reject_unknown(
        w, {"preset", "shapes", "colors", "K", "M", "noise_sigma", "held_out_answers"},
        "world");
    if (w.contains("preset")) {
      std::string preset = w.at("preset").get<std::string>();
      if (preset == "toy")
        cfg.world = WorldSpec::toy();
      else if (preset == "paper_scale")
        cfg.world = WorldSpec::paper_scale();
      else
        throw ConfigError("unknown world preset: " + preset);
    }
    detail::maybe(w, "shapes", cfg.world.shapes);
    detail::maybe(w, "colors", cfg.world.colors);
    detail::maybe(w, "K", cfg.world.K);
    detail::maybe(w, "M", cfg.world.M);
    detail::maybe(w, "noise_sigma", cfg.world.noise_sigma);
    detail::maybe(w, "held_out_answers", cfg.world.held_out_answers);
    cfg.world.finalize();
  }

  if (j.contains("gen")) {
    const auto& g = j.at("gen");
    detail::reject_unknown(
        g, {"n_id", "n_id_val", "n_anom_train", "n_anom_eval", "calib_fraction"}, "gen");
    detail::maybe(g, "n_id", cfg.gen.n_id);
    detail::maybe(g, "n_id_val", cfg.gen.n_id_val);
    detail::maybe(g, "n_anom_train", cfg.gen.n_anom_train);
    detail::maybe(g, "n_anom_eval", cfg.gen.n_anom_eval);
    detail::maybe(g, "calib_fraction", cfg.gen.calib_fraction);
    if (cfg.gen.calib_fraction <= 0.0 || cfg.gen.calib_fraction >= 1.0)
      throw ConfigError("gen.calib_fraction must be in (0, 1)");
  }

  if (j.contains("model")) {
    const auto& m = j.at("model");
    detail::reject_unknown(m, {"hidden", "heads", "variant"}, "model");
    detail::maybe(m, "hidden", cfg.hidden);
    detail::maybe(m, "heads", cfg.heads);
    if (m.contains("variant")) cfg.variant = variant_from(m.at("variant").get<std::string>());
  }

  cfg.train.method = TrainMethod::BASE;
  if (j.contains("train")) detail::parse_train_section(j.at("train"), "train", cfg.train);

  cfg.finetune.epochs = 15;
  cfg.finetune.lr = 0.001;
  if (j.contains("finetune")) {
    const auto& f = j.at("finetune");
    detail::reject_unknown(
        f, {"epochs", "batch_size", "lr", "lambda", "lambda_var", "optimizer", "mix"},
        "finetune");
    nlohmann::json clean = f;
    clean.erase("mix");
    detail::parse_train_section(clean, "finetune", cfg.finetune);
    if (f.contains("mix")) {
      cfg.mix_tasks.clear();
      cfg.mix_weights.clear();
      for (const auto& [task, weight] : f.at("mix").items()) {
        task_from(task);  // validates the label
        if (task == "ID") throw ConfigError("finetune.mix cannot include ID");
        cfg.mix_tasks.push_back(task);
        cfg.mix_weights.push_back(weight.get<double>());
      }
    }
  }

  if (j.contains("detect")) {
    const auto& d = j.at("detect");
    detail::reject_unknown(d, {"t_grid"}, "detect");
    detail::maybe(d, "t_grid", cfg.t_grid);
    if (cfg.t_grid.empty()) throw ConfigError("detect.t_grid cannot be empty");
  }

  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    detail::reject_unknown(e, {"families"}, "eval");
    if (e.contains("families")) {
      cfg.eval_families.clear();
      for (const auto& fam : e.at("families"))
        cfg.eval_families.push_back(family_from(fam.get<std::string>()));
      if (cfg.eval_families.empty()) throw ConfigError("eval.families cannot be empty");
    }
  }

  cfg.hash = [&] {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(j.dump())));
    return std::string(buf);
  }();
  return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ResolutionError(path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const std::exception& e) {
    throw ConfigError("config parse error in " + path.string() + ": " + e.what());
  }
  try {
    return parse_config(j);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError("config error in " + path.string() + ": " + e.what());
  }
}

}  // namespace xmad
