#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "support.hpp"
#include "xmad/metrics.hpp"
#include "xmad/synthgen.hpp"
#include "xmad/train.hpp"

using namespace xmad;
using Catch::Matchers::WithinAbs;

namespace {

struct Fixture {
  WorldSpec world = WorldSpec::toy();
  std::vector<Sample> train, val;
  std::vector<std::vector<Sample>> anomaly_sources;
  Model model;

  Fixture() {
    train = gen_id(world, 96, 1);
    val = gen_id(world, 48, 2);
    anomaly_sources = {gen_anomaly(world, Task::T1, Family::TRAIN, 32, 3),
                       gen_anomaly(world, Task::T2, Family::TRAIN, 32, 4),
                       gen_anomaly(world, Task::T4, Family::TRAIN, 32, 5)};
    ModelConfig cfg = ModelConfig::toy(world.num_answers(), world.K, world.M, world.d(),
                                       world.vocab_size(), AttentionVariant::PAIRWISE, 11);
    model = init_model(cfg);
  }

  TrainConfig base_cfg(int epochs) const {
    TrainConfig c;
    c.method = TrainMethod::BASE;
    c.epochs = epochs;
    c.batch_size = 16;
    c.lr = 0.005;
    c.seed = 21;
    return c;
  }

  TrainConfig ft_cfg(TrainMethod method, int epochs) const {
    TrainConfig c = base_cfg(epochs);
    c.method = method;
    c.lr = 0.001;
    return c;
  }
};

}  // namespace

TEST_CASE("zero learning rate leaves parameters unchanged") {
  Fixture f;
  TrainConfig cfg = f.base_cfg(2);
  cfg.lr = 0.0;
  TrainResult res = train_base(f.model, f.train, {}, cfg);
  REQUIRE(res.model.params == f.model.params);
}

TEST_CASE("one step at default lr decreases the single-batch loss") {
  Fixture f;
  std::vector<Sample> batch(f.train.begin(), f.train.begin() + 16);
  TrainConfig cfg = f.base_cfg(1);
  cfg.batch_size = 16;

  auto batch_loss = [&](const Model& m) {
    double total = 0.0;
    for (const Sample& s : batch) total += xmad_test::model_ce_loss(m, s, s.answer);
    return total / batch.size();
  };
  double before = batch_loss(f.model);
  TrainResult res = train_base(f.model, batch, {}, cfg);
  REQUIRE(batch_loss(res.model) < before);
}

TEST_CASE("training rejects undefined answers") {
  Fixture f;
  auto bad = f.train;
  bad[0].answer = kUndefinedAnswer;
  REQUIRE_THROWS_AS(train_base(f.model, bad, f.val, f.base_cfg(1)), DataError);
}

TEST_CASE("training is bit-deterministic") {
  Fixture f;
  TrainResult a = train_base(f.model, f.train, f.val, f.base_cfg(3));
  TrainResult b = train_base(f.model, f.train, f.val, f.base_cfg(3));
  REQUIRE(a.model.params == b.model.params);
  REQUIRE(a.log == b.log);
}

TEST_CASE("finetune with lambda zero reproduces the continued-base trajectory") {
  Fixture f;
  TrainResult warm = train_base(f.model, f.train, f.val, f.base_cfg(2));

  TrainConfig ra = f.ft_cfg(TrainMethod::RA, 3);
  ra.lambda = 0.0;
  TrainResult tuned = finetune(warm.model, f.train, f.anomaly_sources, f.val, ra);

  TrainConfig cont = f.base_cfg(3);
  cont.lr = ra.lr;
  TrainResult contd = train_base(warm.model, f.train, f.val, cont);

  REQUIRE(tuned.log.epochs.size() == contd.log.epochs.size());
  for (std::size_t i = 0; i < tuned.log.epochs.size(); ++i) {
    REQUIRE(tuned.log.epochs[i].task_loss == contd.log.epochs[i].task_loss);
    REQUIRE(tuned.log.epochs[i].val_accuracy == contd.log.epochs[i].val_accuracy);
    REQUIRE(tuned.log.epochs[i].reg_loss == 0.0);
  }
}

TEST_CASE("finetune validates its inputs") {
  Fixture f;
  REQUIRE_THROWS_AS(finetune(f.model, f.train, f.anomaly_sources, f.val, f.base_cfg(1)),
                    ConfigError);  // method BASE not allowed
  auto poisoned = f.anomaly_sources;
  poisoned[0][0] = f.train[0];  // an answerable ID sample in the anomaly stream
  REQUIRE_THROWS_AS(finetune(f.model, f.train, poisoned, f.val, f.ft_cfg(TrainMethod::RA, 1)),
                    DataError);
  auto eval_family = f.anomaly_sources;
  eval_family[0] = gen_anomaly(f.world, Task::T1, Family::EVAL, 8, 9);
  REQUIRE_THROWS_AS(
      finetune(f.model, f.train, eval_family, f.val, f.ft_cfg(TrainMethod::RA, 1)), DataError);
}

TEST_CASE("RA regularizer value matches the closed form at uniform attention") {
  // uniform 2x2 attention: -lambda * 4 * ln(3/4), lambda = 1e-5
  Graph g;
  NodeId logits = g.param("a", Tensor({2, 2}, 0.0));
  NodeId probs = g.softmax(logits, 1.0, std::vector<std::uint8_t>(4, 1));
  NodeId penalty = g.scale(g.masked_sum(g.log1m(probs), std::vector<std::uint8_t>(4, 1)), -1.0);
  double value = 1e-5 * g.value(penalty).item();
  REQUIRE_THAT(value, WithinAbs(-1e-5 * 4.0 * std::log(0.75), 1e-12));
  REQUIRE_THAT(value, WithinAbs(1.1507e-5, 1e-9));
}

TEST_CASE("RA regularizer gradient stays upstream of attention") {
  Fixture f;
  Graph g;
  std::map<std::string, NodeId> ids;
  Rng rng(33);
  Sample anom = f.anomaly_sources[0][0];
  ForwardNodes fw = forward(g, f.model, ids, anom);
  std::vector<NodeId> parts;
  for (NodeId probs : fw.attn_probs)
    parts.push_back(g.scale(g.masked_sum(g.log1m(probs), fw.attn_mask), -1.0));
  NodeId reg = parts.size() == 1 ? parts[0] : g.add(parts[0], parts[1]);
  GradMap grads = g.backward(reg);

  auto all_zero = [&](const std::string& name) {
    for (double v : grads.at(name).data())
      if (v != 0.0) return false;
    return true;
  };
  auto some_nonzero = [&](const std::string& name) { return !all_zero(name); };

  REQUIRE(all_zero("output.b"));
  REQUIRE(all_zero("output.W"));
  REQUIRE(all_zero("fusion.W"));
  REQUIRE(all_zero("fusion.b"));
  REQUIRE(all_zero("context.W"));
  REQUIRE(some_nonzero("embed"));
  REQUIRE(some_nonzero("head0.visual.W"));
  REQUIRE(some_nonzero("head0.token.W"));
}

TEST_CASE("RA loss gradient matches finite differences") {
  Fixture f;
  Model m = init_model(xmad_test::small_config(AttentionVariant::PAIRWISE, 2, 55));
  Rng rng(77);
  Sample anom = xmad_test::random_sample(m.config, rng, 3);
  anom.answer = kUndefinedAnswer;

  // analytic gradient of the pure regularizer
  GradMap analytic;
  {
    Graph g;
    std::map<std::string, NodeId> ids;
    ForwardNodes fw = forward(g, m, ids, anom);
    std::vector<NodeId> parts;
    for (NodeId probs : fw.attn_probs)
      parts.push_back(g.scale(g.masked_sum(g.log1m(probs), fw.attn_mask), -1.0));
    analytic = g.backward(parts.size() == 1 ? parts[0] : g.add(parts[0], parts[1]));
  }
  auto value_at = [&](const Model& model) {
    Graph g;
    std::map<std::string, NodeId> ids;
    ForwardNodes fw = forward(g, model, ids, anom);
    double total = 0.0;
    for (NodeId probs : fw.attn_probs)
      total += g.value(g.scale(g.masked_sum(g.log1m(probs), fw.attn_mask), -1.0)).item();
    return total;
  };
  double h = 1e-4, worst = 0.0;
  for (const auto& [name, tensor] : m.params) {
    for (std::size_t i = 0; i < tensor.size(); ++i) {
      Model up = m, down = m;
      up.params[name][i] += h;
      down.params[name][i] -= h;
      double fd = (value_at(up) - value_at(down)) / (2.0 * h);
      double rel = std::abs(fd - analytic.at(name)[i]) /
                   std::max({std::abs(fd), std::abs(analytic.at(name)[i]), 1e-3});
      worst = std::max(worst, rel);
    }
  }
  REQUIRE(worst < 1e-4);
}

TEST_CASE("finetune methods run and are deterministic") {
  Fixture f;
  TrainResult warm = train_base(f.model, f.train, f.val, f.base_cfg(2));
  for (TrainMethod method : {TrainMethod::OE, TrainMethod::RA, TrainMethod::RA_VAR}) {
    TrainConfig cfg = f.ft_cfg(method, 2);
    TrainResult a = finetune(warm.model, f.train, f.anomaly_sources, f.val, cfg);
    TrainResult b = finetune(warm.model, f.train, f.anomaly_sources, f.val, cfg);
    REQUIRE(a.model.params == b.model.params);
    REQUIRE(a.log == b.log);
    REQUIRE(a.log.epochs.size() == 2);
  }
}

TEST_CASE("uniform attention maximizes the RA objective on the simplex") {
  // property check against the theorem: random simplex points score below
  // the uniform point
  Rng rng(91);
  for (int k : {2, 5, 9}) {
    double uniform_value = k * std::log(1.0 - 1.0 / k);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<double> z(k);
      for (double& v : z) v = rng.uniform(-3.0, 3.0);
      auto x = masked_softmax(z, 1.0);
      double value = 0.0;
      bool degenerate = false;
      for (double xi : x) {
        if (xi >= 1.0 - 1e-12) degenerate = true;
        value += std::log(1.0 - xi);
      }
      if (degenerate) continue;
      REQUIRE(value <= uniform_value + 1e-12);
    }
  }
}

TEST_CASE("verify_theorem1 converges for small K") {
  Theorem1Result res = verify_theorem1(2, 10, 1e-3, 123);
  REQUIRE(res.max_deviation < 1e-3);
  REQUIRE_THAT(res.best_value, WithinAbs(2.0 * std::log(0.5), 1e-5));

  Theorem1Result res5 = verify_theorem1(5, 10, 1e-3, 123);
  REQUIRE(res5.max_deviation < 1e-3);
}

TEST_CASE("verify_theorem1 rejects degenerate input") {
  REQUIRE_THROWS_AS(verify_theorem1(1, 10), DomainError);
  REQUIRE_THROWS_AS(verify_theorem1(2, 0), DomainError);
}

TEST_CASE("trainlog persists only deterministic columns") {
  Fixture f;
  TrainResult res = train_base(f.model, f.train, f.val, f.base_cfg(2));
  auto dir = std::filesystem::temp_directory_path() / "xmad_train_test";
  std::filesystem::create_directories(dir);
  auto path = dir / "log.csv";
  write_trainlog(path, res.log);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  REQUIRE(header == "epoch,task_loss,reg_loss,val_accuracy");
  int rows = 0;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  REQUIRE(rows == 2);
}
