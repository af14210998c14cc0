// Command-line front end: config-driven recipes for dataset generation,
// training, fine-tuning, evaluation and reporting.
//
// Exit codes: 0 success, 2 usage error, 3 unresolvable path, 4 numerical
// failure, 1 anything else.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "xmad/bench.hpp"
#include "xmad/config.hpp"
#include "xmad/detect.hpp"
#include "xmad/errors.hpp"
#include "xmad/metrics.hpp"
#include "xmad/model.hpp"
#include "xmad/pipeline.hpp"
#include "xmad/synthgen.hpp"
#include "xmad/train.hpp"

namespace {

namespace fs = std::filesystem;
using namespace xmad;

struct SeedOverride {
  bool set = false;
  std::uint64_t value = 0;
};

RunConfig config_with_seed(const std::string& path, const SeedOverride& seed) {
  RunConfig cfg = load_config(require_file(path));
  if (seed.set) cfg.seed = seed.value;
  return cfg;
}

int cmd_gen(const std::string& config_path, const std::string& out_dir,
            const SeedOverride& seed) {
  RunConfig cfg = config_with_seed(config_path, seed);
  generate_datasets(cfg, out_dir);
  std::cout << "generated datasets in " << out_dir << " (config " << cfg.hash << ")\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_ckpt, const SeedOverride& seed) {
  RunConfig cfg = config_with_seed(config_path, seed);
  fs::path dir(data_dir);
  auto train_set = read_dataset(require_file(dir / dataset_filename("train", Task::ID, Family::TRAIN)));
  auto val_set = read_dataset(require_file(dir / dataset_filename("val", Task::ID, Family::TRAIN)));

  Model model = init_model(cfg.model_config(derive_seed(cfg.seed, "model-init")));
  TrainConfig tc = cfg.train;
  tc.method = TrainMethod::BASE;
  tc.seed = derive_seed(cfg.seed, "train");
  TrainResult res = train_base(std::move(model), train_set, val_set, tc);

  save_model(out_ckpt, res.model, cfg.hash);
  write_trainlog(out_ckpt + ".log.csv", res.log);
  double best = 0.0;
  for (const auto& e : res.log.epochs) best = std::max(best, e.val_accuracy);
  std::printf("trained %d epochs, best val accuracy %.4f, checkpoint %s\n", tc.epochs, best,
              out_ckpt.c_str());
  return 0;
}

int cmd_finetune(const std::string& config_path, const std::string& method,
                 const std::string& model_path, const std::string& anomalies_dir,
                 const std::string& out_ckpt, double lambda_override,
                 const SeedOverride& seed) {
  RunConfig cfg = config_with_seed(config_path, seed);
  Model model = load_model(require_file(model_path));
  fs::path dir(anomalies_dir);
  auto train_set = read_dataset(require_file(dir / dataset_filename("train", Task::ID, Family::TRAIN)));
  auto val_set = read_dataset(require_file(dir / dataset_filename("val", Task::ID, Family::TRAIN)));

  TrainConfig tc = cfg.finetune;
  tc.method = method_from(method);
  tc.seed = derive_seed(cfg.seed, "finetune/" + method);
  if (lambda_override >= 0.0) tc.lambda = lambda_override;

  TrainResult res;
  if (tc.method == TrainMethod::BASE) {
    res = train_base(std::move(model), train_set, val_set, tc);
  } else {
    auto sources = load_anomaly_sources(cfg, dir);
    res = finetune(std::move(model), train_set, sources, val_set, tc, cfg.mix_weights);
  }
  save_model(out_ckpt, res.model, cfg.hash);
  write_trainlog(out_ckpt + ".log.csv", res.log);
  std::printf("fine-tuned (%s) %d epochs, final val accuracy %.4f, checkpoint %s\n",
              method.c_str(), tc.epochs,
              res.log.epochs.empty() ? 0.0 : res.log.epochs.back().val_accuracy,
              out_ckpt.c_str());
  return 0;
}

int cmd_eval(const std::string& config_path, const std::string& models_csv,
             const std::string& data_dir, const std::string& out_path,
             const SeedOverride& seed) {
  RunConfig cfg = config_with_seed(config_path, seed);
  std::vector<std::pair<std::string, fs::path>> checkpoints;
  std::size_t pos = 0;
  while (pos <= models_csv.size()) {
    std::size_t comma = models_csv.find(',', pos);
    std::string item = models_csv.substr(pos, comma == std::string::npos ? comma : comma - pos);
    if (!item.empty()) checkpoints.push_back({fs::path(item).stem().string(), item});
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  if (checkpoints.empty()) throw ConfigError("eval: no checkpoints given");

  MatrixSpec spec = build_matrix_spec(cfg, data_dir, checkpoints, out_path);
  ResultTable table = run_matrix(spec);
  write_results(spec.out_path, table);
  std::cout << "wrote " << table.rows.size() << " AUROC rows and " << table.accuracy.size()
            << " accuracy rows to " << out_path << "\n";
  return 0;
}

int cmd_report(const std::string& in_path) {
  ResultTable table = read_results(require_file(in_path));
  render_report(std::cout, table);
  return 0;
}

int cmd_verify_theorem1(int k, int trials, const SeedOverride& seed) {
  Theorem1Result res = verify_theorem1(k, trials, 1e-3, seed.set ? seed.value : 0);
  double optimum = k * std::log(1.0 - 1.0 / k);
  std::printf("K=%d trials=%d max deviation from 1/K: %.3e (tolerance 1e-3)\n", k, trials,
              res.max_deviation);
  std::printf("objective at convergence %.6f, closed-form optimum %.6f\n", res.best_value,
              optimum);
  return 0;
}

int cmd_export_features(const std::string& config_path, const std::string& model_path,
                        const std::string& data_path, const std::string& out_path) {
  (void)load_config(require_file(config_path));
  Model model = load_model(require_file(model_path));
  auto data = read_dataset(require_file(data_path));
  export_joint_features(model, data, out_path);
  std::cout << "wrote " << data.size() << " joint-feature rows to " << out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synthetic cross-modal anomaly-detection benchmark"};
  app.require_subcommand(1);

  std::string config_path, out_path, data_dir, model_path, models_csv, anomalies_dir, in_path,
      method, data_path;
  double lambda_override = -1.0;
  int k = 2, trials = 100;
  SeedOverride seed;
  auto add_seed = [&](CLI::App* cmd) {
    cmd->add_option_function<std::uint64_t>(
        "--seed", [&](const std::uint64_t& v) { seed = {true, v}; },
        "override the config seed");
  };

  CLI::App* gen = app.add_subcommand("gen", "generate datasets");
  gen->add_option("--config", config_path)->required();
  gen->add_option("--out", out_path)->required();
  add_seed(gen);

  CLI::App* train = app.add_subcommand("train", "train the base model");
  train->add_option("--config", config_path)->required();
  train->add_option("--data", data_dir)->required();
  train->add_option("--out", out_path)->required();
  add_seed(train);

  CLI::App* ft = app.add_subcommand("finetune", "post-train a checkpoint");
  ft->add_option("--config", config_path)->required();
  ft->add_option("--method", method)->required()->check(CLI::IsMember({"base", "oe", "ra", "ra-var"}));
  ft->add_option("--model", model_path)->required();
  ft->add_option("--anomalies", anomalies_dir)->required();
  ft->add_option("--out", out_path)->required();
  ft->add_option("--lambda", lambda_override);
  add_seed(ft);

  CLI::App* ev = app.add_subcommand("eval", "run the detector x task matrix");
  ev->add_option("--config", config_path)->required();
  ev->add_option("--models", models_csv)->required();
  ev->add_option("--data", data_dir)->required();
  ev->add_option("--out", out_path)->required();
  add_seed(ev);

  CLI::App* rep = app.add_subcommand("report", "render a results file");
  rep->add_option("--in", in_path)->required();

  CLI::App* thm = app.add_subcommand("verify-theorem1", "check the uniform-optimum theorem");
  thm->add_option("--k", k)->required();
  thm->add_option("--trials", trials);
  add_seed(thm);

  CLI::App* exf = app.add_subcommand("export-features", "dump fused joint features");
  exf->add_option("--config", config_path)->required();
  exf->add_option("--model", model_path)->required();
  exf->add_option("--data", data_path)->required();
  exf->add_option("--out", out_path)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen(config_path, out_path, seed);
    if (train->parsed()) return cmd_train(config_path, data_dir, out_path, seed);
    if (ft->parsed())
      return cmd_finetune(config_path, method, model_path, anomalies_dir, out_path,
                          lambda_override, seed);
    if (ev->parsed()) return cmd_eval(config_path, models_csv, data_dir, out_path, seed);
    if (rep->parsed()) return cmd_report(in_path);
    if (thm->parsed()) return cmd_verify_theorem1(k, trials, seed);
    if (exf->parsed()) return cmd_export_features(config_path, model_path, data_path, out_path);
  } catch (const ResolutionError& e) {
    std::cerr << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
