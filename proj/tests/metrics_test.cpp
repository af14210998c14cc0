#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "support.hpp"
#include "xmad/metrics.hpp"
#include "xmad/rng.hpp"
#include "xmad/synthgen.hpp"

using namespace xmad;
using Catch::Matchers::WithinAbs;

namespace {

/// Independent O(n*m) oracle: plain pair counting with half-credit for ties.
double auroc_bruteforce(const std::vector<double>& id, const std::vector<double>& anom) {
  double wins = 0.0;
  for (double a : id)
    for (double b : anom) {
      if (a > b)
        wins += 1.0;
      else if (a == b)
        wins += 0.5;
    }
  return wins / (static_cast<double>(id.size()) * static_cast<double>(anom.size()));
}

std::vector<double> random_scores(Rng& rng, int n, int levels) {
  // quantized scores so ties actually occur
  std::vector<double> out;
  for (int i = 0; i < n; ++i)
    out.push_back(static_cast<double>(rng.uniform_int(levels)) / levels);
  return out;
}

}  // namespace

TEST_CASE("auroc of perfectly separated scores is 1") {
  REQUIRE(auroc({1.0, 0.9}, {0.2, 0.1}) == 1.0);
}

TEST_CASE("auroc of a full tie is exactly one half") {
  REQUIRE(auroc({0.5}, {0.5}) == 0.5);
}

TEST_CASE("auroc hand example") {
  // pairs: (.8,.6) win, (.8,.2) win, (.4,.6) loss, (.4,.2) win -> 3/4
  REQUIRE_THAT(auroc({0.8, 0.4}, {0.6, 0.2}), WithinAbs(0.75, 1e-15));
}

TEST_CASE("auroc rejects empty inputs") {
  REQUIRE_THROWS_AS(auroc({}, {0.5}), DomainError);
  REQUIRE_THROWS_AS(auroc({0.5}, {}), DomainError);
}

TEST_CASE("midrank auroc equals brute force on 200 random tied instances") {
  Rng rng(101);
  for (int trial = 0; trial < 200; ++trial) {
    int n = 1 + rng.uniform_int(40);
    int m = 1 + rng.uniform_int(40);
    int levels = 1 + rng.uniform_int(12);
    auto id = random_scores(rng, n, levels);
    auto anom = random_scores(rng, m, levels);
    REQUIRE_THAT(auroc(id, anom), WithinAbs(auroc_bruteforce(id, anom), 1e-12));
  }
}

TEST_CASE("auroc is exactly antisymmetric") {
  Rng rng(103);
  for (int trial = 0; trial < 200; ++trial) {
    auto a = random_scores(rng, 1 + rng.uniform_int(30), 8);
    auto b = random_scores(rng, 1 + rng.uniform_int(30), 8);
    REQUIRE(auroc(a, b) + auroc(b, a) == 1.0);
  }
}

TEST_CASE("auroc is invariant under strictly increasing transforms") {
  Rng rng(107);
  auto id = random_scores(rng, 25, 50);
  auto anom = random_scores(rng, 30, 50);
  double base = auroc(id, anom);
  auto transform = [](std::vector<double> v) {
    for (double& x : v) x = std::exp(3.0 * x) + x * x;
    return v;
  };
  REQUIRE_THAT(auroc(transform(id), transform(anom)), WithinAbs(base, 1e-15));
}

TEST_CASE("accuracy counts argmax matches with lowest-index tie-break") {
  const WorldSpec w = WorldSpec::toy();
  ModelConfig cfg =
      ModelConfig::toy(w.num_answers(), w.K, w.M, w.d(), w.vocab_size(), AttentionVariant::PAIRWISE, 3);
  Model m = init_model(cfg);

  // all-zero model predicts class 0 everywhere (tie across all classes)
  for (auto& [name, t] : m.params)
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.0;
  auto data = gen_id(w, 60, 5);
  int zeros = 0;
  for (const Sample& s : data) zeros += s.answer == 0 ? 1 : 0;
  REQUIRE_THAT(accuracy(m, data), WithinAbs(static_cast<double>(zeros) / data.size(), 1e-15));

  // single correct prediction -> accuracy 1
  std::vector<Sample> one = {data[0]};
  one[0].answer = 0;
  REQUIRE(accuracy(m, one) == 1.0);
}

TEST_CASE("an untrained model is roughly chance-level") {
  const WorldSpec w = WorldSpec::toy();
  ModelConfig cfg =
      ModelConfig::toy(w.num_answers(), w.K, w.M, w.d(), w.vocab_size(), AttentionVariant::PAIRWISE, 7);
  Model m = init_model(cfg);
  auto data = gen_id(w, 400, 11);
  double acc = accuracy(m, data);
  // loose band around 1/N = 0.1; random projections retain some signal
  REQUIRE(acc < 0.45);
}

TEST_CASE("accuracy rejects undefined answers") {
  const WorldSpec w = WorldSpec::toy();
  ModelConfig cfg =
      ModelConfig::toy(w.num_answers(), w.K, w.M, w.d(), w.vocab_size(), AttentionVariant::PAIRWISE, 3);
  Model m = init_model(cfg);
  auto data = gen_anomaly(w, Task::T5, Family::TRAIN, 3, 13);
  REQUIRE_THROWS_AS(accuracy(m, data), DataError);
}
