#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "xmad/bench.hpp"
#include "xmad/config.hpp"
#include "xmad/sample.hpp"
#include "xmad/synthgen.hpp"

namespace xmad {

inline std::string dataset_filename(const std::string& split, Task task, Family family) {
  return split + "_" + task_name(task) + "_" + family_name(family) + ".jsonl";
}

/// Generates every dataset the recipe needs into `dir`:
/// train/calib/val ID splits plus all five anomaly tasks in both families.
inline void generate_datasets(const RunConfig& cfg, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["config_hash"] = cfg.hash;
  manifest["seed"] = cfg.seed;

  auto record = [&](const std::string& name, const std::vector<Sample>& data) {
    write_dataset(dir / name, data);
    manifest["files"][name] = data.size();
  };

  std::vector<Sample> id_all = gen_id(cfg.world, cfg.gen.n_id, derive_seed(cfg.seed, "gen/id"));
  auto parts = split(id_all, {1.0 - cfg.gen.calib_fraction, cfg.gen.calib_fraction},
                     derive_seed(cfg.seed, "gen/calib-split"));
  record(dataset_filename("train", Task::ID, Family::TRAIN), parts[0]);
  record(dataset_filename("calib", Task::ID, Family::TRAIN), parts[1]);
  record(dataset_filename("val", Task::ID, Family::TRAIN),
         gen_id(cfg.world, cfg.gen.n_id_val, derive_seed(cfg.seed, "gen/id-val")));

  for (Task task : {Task::T1, Task::T2, Task::T3, Task::T4, Task::T5}) {
    record(dataset_filename("anom", task, Family::TRAIN),
           gen_anomaly(cfg.world, task, Family::TRAIN, cfg.gen.n_anom_train,
                       derive_seed(cfg.seed, "gen/anom")));
    record(dataset_filename("anom", task, Family::EVAL),
           gen_anomaly(cfg.world, task, Family::EVAL, cfg.gen.n_anom_eval,
                       derive_seed(cfg.seed, "gen/anom")));
  }

  std::ofstream mf(dir / "manifest.json");
  if (!mf) throw Error("cannot open for writing: " + (dir / "manifest.json").string());
  mf << manifest.dump(2) << "\n";
}

inline std::filesystem::path require_file(const std::filesystem::path& p) {
  if (!std::filesystem::exists(p)) throw ResolutionError(p.string());
  return p;
}

/// Anomaly sources for fine-tuning, one per configured mix task, TRAIN family.
inline std::vector<std::vector<Sample>> load_anomaly_sources(const RunConfig& cfg,
                                                             const std::filesystem::path& dir) {
  std::vector<std::vector<Sample>> sources;
  for (const std::string& task : cfg.mix_tasks)
    sources.push_back(
        read_dataset(require_file(dir / dataset_filename("anom", task_from(task), Family::TRAIN))));
  return sources;
}

inline MatrixSpec build_matrix_spec(const RunConfig& cfg, const std::filesystem::path& data_dir,
                                    std::vector<std::pair<std::string, std::filesystem::path>> checkpoints,
                                    const std::filesystem::path& out_path) {
  MatrixSpec spec;
  spec.checkpoints = std::move(checkpoints);
  spec.id_eval = data_dir / dataset_filename("val", Task::ID, Family::TRAIN);
  spec.id_calib = data_dir / dataset_filename("calib", Task::ID, Family::TRAIN);
  for (Task task : {Task::T1, Task::T2, Task::T3, Task::T4, Task::T5})
    spec.calib_anomaly.push_back(data_dir / dataset_filename("anom", task, Family::TRAIN));
  for (Family family : cfg.eval_families)
    for (Task task : {Task::T1, Task::T2, Task::T3, Task::T4, Task::T5})
      spec.eval_sets.push_back({task, family, data_dir / dataset_filename("anom", task, family)});
  spec.detectors = MatrixSpec::default_detectors();
  spec.t_grid = cfg.t_grid;
  spec.out_path = out_path;
  spec.scores_path = out_path.string() + ".scores.csv";
  spec.config_hash = cfg.hash;
  return spec;
}

}  // namespace xmad
