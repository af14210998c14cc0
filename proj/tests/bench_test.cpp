#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "support.hpp"
#include "xmad/bench.hpp"
#include "xmad/pipeline.hpp"
#include "xmad/synthgen.hpp"
#include "xmad/train.hpp"

using namespace xmad;
using Catch::Matchers::WithinAbs;

namespace {

struct BenchFixture {
  std::filesystem::path dir;
  WorldSpec world = WorldSpec::toy();
  MatrixSpec spec;

  BenchFixture() {
    dir = std::filesystem::temp_directory_path() / "xmad_bench_test";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);

    write_dataset(dir / "val.jsonl", gen_id(world, 60, 1));
    write_dataset(dir / "calib.jsonl", gen_id(world, 40, 2));
    write_dataset(dir / "anom_T1_TRAIN.jsonl",
                  gen_anomaly(world, Task::T1, Family::TRAIN, 40, 3));
    for (Task t : {Task::T1, Task::T2, Task::T3, Task::T4, Task::T5})
      write_dataset(dir / (std::string("anom_") + task_name(t) + "_EVAL.jsonl"),
                    gen_anomaly(world, t, Family::EVAL, 30, 4));

    ModelConfig cfg = ModelConfig::toy(world.num_answers(), world.K, world.M, world.d(),
                                       world.vocab_size(), AttentionVariant::PAIRWISE, 5);
    save_model(dir / "a.ckpt", init_model(cfg), "hash-a");
    cfg.init_seed = 6;
    save_model(dir / "b.ckpt", init_model(cfg), "hash-b");

    spec.checkpoints = {{"a", dir / "a.ckpt"}, {"b", dir / "b.ckpt"}};
    spec.id_eval = dir / "val.jsonl";
    spec.id_calib = dir / "calib.jsonl";
    spec.calib_anomaly = {dir / "anom_T1_TRAIN.jsonl"};
    for (Task t : {Task::T1, Task::T2, Task::T3, Task::T4, Task::T5})
      spec.eval_sets.push_back(
          {t, Family::EVAL, dir / (std::string("anom_") + task_name(t) + "_EVAL.jsonl")});
    spec.detectors = {{ScoreKind::MSP, false, 1.0}, {ScoreKind::MAP, false, 1.0}};
    spec.t_grid = t_grid_default();
    spec.out_path = dir / "results.csv";
    spec.config_hash = "cafebabe";
  }
};

}  // namespace

TEST_CASE("matrix produces the combinatorial row count") {
  BenchFixture f;
  ResultTable table = run_matrix(f.spec);
  // 2 checkpoints x 2 detectors x 5 tasks x 1 family
  REQUIRE(table.rows.size() == 20);
  REQUIRE(table.accuracy.size() == 2);
  for (const AurocRow& r : table.rows) {
    REQUIRE(r.auroc >= 0.0);
    REQUIRE(r.auroc <= 1.0);
    REQUIRE(r.n_id == 60);
    REQUIRE(r.n_anom == 30);
  }
}

TEST_CASE("matrix runs calibrated detectors from the grid") {
  BenchFixture f;
  f.spec.detectors = {{ScoreKind::MAP, true, 1.0}};
  ResultTable table = run_matrix(f.spec);
  REQUIRE(table.rows.size() == 10);
  auto grid = t_grid_default();
  for (const AurocRow& r : table.rows)
    REQUIRE(std::find(grid.begin(), grid.end(), r.temperature) != grid.end());
}

TEST_CASE("results files are byte-identical across reruns and round-trip") {
  BenchFixture f;
  ResultTable t1 = run_matrix(f.spec);
  write_results(f.spec.out_path, t1);
  std::stringstream s1;
  s1 << std::ifstream(f.spec.out_path).rdbuf();

  ResultTable t2 = run_matrix(f.spec);
  write_results(f.spec.out_path, t2);
  std::stringstream s2;
  s2 << std::ifstream(f.spec.out_path).rdbuf();
  REQUIRE(s1.str() == s2.str());

  ResultTable back = read_results(f.spec.out_path);
  REQUIRE(back.config_hash == "cafebabe");
  REQUIRE(back.rows.size() == t1.rows.size());
  REQUIRE(back.accuracy.size() == t1.accuracy.size());
  for (std::size_t i = 0; i < back.rows.size(); ++i) {
    REQUIRE(back.rows[i].model == t1.rows[i].model);
    REQUIRE(back.rows[i].task == t1.rows[i].task);
    REQUIRE_THAT(back.rows[i].auroc, WithinAbs(t1.rows[i].auroc, 5e-5));  // 4 decimals
  }
}

TEST_CASE("missing checkpoints and datasets are resolution errors naming the path") {
  BenchFixture f;
  f.spec.checkpoints[0].second = f.dir / "nope.ckpt";
  try {
    run_matrix(f.spec);
    FAIL("expected ResolutionError");
  } catch (const ResolutionError& e) {
    REQUIRE(std::string(e.what()).find("nope.ckpt") != std::string::npos);
  }

  BenchFixture g;
  g.spec.eval_sets[0].path = g.dir / "missing.jsonl";
  REQUIRE_THROWS_AS(run_matrix(g.spec), ResolutionError);
}

TEST_CASE("a coin-flip detector scores near one half") {
  // Monte-Carlo oracle for the AUROC pipeline: independent fair-coin scores
  Rng rng(202);
  std::vector<double> id, anom;
  for (int i = 0; i < 1000; ++i) id.push_back(rng.uniform(0.0, 1.0));
  for (int i = 0; i < 1000; ++i) anom.push_back(rng.uniform(0.0, 1.0));
  REQUIRE_THAT(auroc(id, anom), WithinAbs(0.5, 0.05));
}

TEST_CASE("score dump is written next to the results") {
  BenchFixture f;
  f.spec.scores_path = f.dir / "results.csv.scores.csv";
  run_matrix(f.spec);
  auto records = read_scores(f.spec.scores_path);
  // per checkpoint and detector: 5x30 anomaly rows + 60 ID rows
  REQUIRE(records.size() == 2 * 2 * (5 * 30 + 60));
}

TEST_CASE("report renders a grid per model") {
  BenchFixture f;
  ResultTable table = run_matrix(f.spec);
  std::ostringstream os;
  render_report(os, table);
  std::string text = os.str();
  REQUIRE(text.find("model a, family EVAL") != std::string::npos);
  REQUIRE(text.find("model b, family EVAL") != std::string::npos);
  REQUIRE(text.find("MSP@T=1") != std::string::npos);
  REQUIRE(text.find("MAP@T=1") != std::string::npos);
  REQUIRE(text.find("T5") != std::string::npos);
  REQUIRE(text.find("accuracy") != std::string::npos);
}
