#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "support.hpp"
#include "xmad/detect.hpp"
#include "xmad/rng.hpp"

using namespace xmad;
using Catch::Matchers::WithinAbs;

TEST_CASE("msp of equal logits is 1/N") {
  REQUIRE_THAT(msp({0.0, 0.0, 0.0, 0.0}, 1.0), WithinAbs(0.25, 1e-15));
}

TEST_CASE("msp closed form for logits (2,0,0)") {
  double e2 = std::exp(2.0);
  REQUIRE_THAT(msp({2.0, 0.0, 0.0}, 1.0), WithinAbs(e2 / (e2 + 2.0), 1e-12));
  REQUIRE_THAT(msp({2.0, 0.0, 0.0}, 1.0), WithinAbs(0.786986, 1e-6));
}

TEST_CASE("msp at huge temperature approaches 1/N") {
  REQUIRE_THAT(msp({2.0, 0.0, 0.0}, 1e6), WithinAbs(1.0 / 3.0, 1e-6));
}

TEST_CASE("msp rejects bad input") {
  REQUIRE_THROWS_AS(msp({1.0, 2.0}, 0.0), DomainError);
  REQUIRE_THROWS_AS(msp(std::vector<double>{1.0}, 1.0), DomainError);
}

TEST_CASE("map of uniform single-head attention is 1/cells") {
  Tensor logits({2, 2}, 0.0);
  std::vector<std::uint8_t> mask(4, 1);
  REQUIRE_THAT(map_score({logits}, mask, 1.0), WithinAbs(0.25, 1e-15));
}

TEST_CASE("map closed form for logits [[ln6,0],[0,0]]") {
  Tensor logits({2, 2}, {std::log(6.0), 0.0, 0.0, 0.0});
  std::vector<std::uint8_t> mask(4, 1);
  REQUIRE_THAT(map_score({logits}, mask, 1.0), WithinAbs(2.0 / 3.0, 1e-12));
}

TEST_CASE("multi-head map averages per-head maxima") {
  // head maxima 0.5 and 0.7 -> mean 0.6
  Tensor h1({1, 2}, {0.0, 0.0});                        // max prob 0.5
  double l = std::log(7.0 / 3.0);
  Tensor h2({1, 2}, {l, 0.0});                          // max prob 0.7
  std::vector<std::uint8_t> mask(2, 1);
  REQUIRE_THAT(map_score({h1, h2}, mask, 1.0), WithinAbs(0.6, 1e-12));
  // ablation flag: max over heads instead of mean
  REQUIRE_THAT(map_score({h1, h2}, mask, 1.0, true), WithinAbs(0.7, 1e-12));
}

TEST_CASE("map masks padded cells and respects temperature limits") {
  Rng rng(3);
  Tensor logits({3, 4});
  for (std::size_t i = 0; i < logits.size(); ++i) logits[i] = rng.uniform(-3.0, 3.0);
  std::vector<std::uint8_t> mask = {1, 1, 0, 0, 1, 1, 0, 0, 1, 1, 0, 0};
  int cells = 6;
  REQUIRE_THAT(map_score({logits}, mask, 1e6), WithinAbs(1.0 / cells, 1e-6));
  std::vector<std::uint8_t> none(12, 0);
  REQUIRE_THROWS_AS(map_score({logits}, none, 1.0), DomainError);
}

TEST_CASE("scores are shift invariant") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> logits;
    for (int i = 0; i < 6; ++i) logits.push_back(rng.uniform(-4.0, 4.0));
    double c = rng.uniform(-10.0, 10.0);
    std::vector<double> shifted = logits;
    for (double& v : shifted) v += c;
    REQUIRE_THAT(msp(shifted, 2.0), WithinAbs(msp(logits, 2.0), 1e-12));

    Tensor attn({2, 3}, std::vector<double>(logits.begin(), logits.end()));
    Tensor attn_shifted({2, 3}, std::vector<double>(shifted.begin(), shifted.end()));
    std::vector<std::uint8_t> mask = {1, 1, 1, 1, 0, 1};
    REQUIRE_THAT(map_score({attn_shifted}, mask, 2.0),
                 WithinAbs(map_score({attn}, mask, 2.0), 1e-12));
  }
}

TEST_CASE("score bounds hold on random inputs") {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    int n = 2 + rng.uniform_int(8);
    std::vector<double> logits;
    for (int i = 0; i < n; ++i) logits.push_back(rng.uniform(-6.0, 6.0));
    double s = msp(logits, rng.uniform(0.5, 10.0));
    REQUIRE(s > 0.0);
    REQUIRE(s <= 1.0);
    REQUIRE(s >= 1.0 / n - 1e-12);
  }
}

TEST_CASE("detector flags scores at or below delta") {
  DetectorSpec spec{ScoreKind::MSP, 1.0, 0.5};
  REQUIRE(detect(spec, 0.5) == 1);       // boundary inclusive
  REQUIRE(detect(spec, 0.5 + 1e-12) == 0);
  REQUIRE(detect(spec, 0.1) == 1);
  DetectorSpec zero{ScoreKind::MSP, 1.0, 0.0};
  REQUIRE(detect(zero, 1e-300) == 0);    // no score in (0,1] flagged
}

TEST_CASE("lowering delta never flags more samples") {
  Rng rng(11);
  std::vector<double> scores;
  for (int i = 0; i < 100; ++i) scores.push_back(rng.uniform(0.0, 1.0));
  DetectorSpec lo{ScoreKind::MSP, 1.0, 0.3};
  DetectorSpec hi{ScoreKind::MSP, 1.0, 0.6};
  for (double s : scores)
    if (detect(lo, s) == 1) REQUIRE(detect(hi, s) == 1);
}

TEST_CASE("calibration picks the best temperature with smallest-T tie-break") {
  // perfectly separated at every temperature -> smallest grid element wins
  auto id = [](double) { return std::vector<double>{0.9, 0.8}; };
  auto anom = [](double) { return std::vector<double>{0.2, 0.1}; };
  Calibration cal = calibrate(id, anom, {5, 1, 100});
  REQUIRE(cal.temperature == 1.0);
  REQUIRE_THAT(cal.auroc_at_t, WithinAbs(1.0, 1e-15));
}

TEST_CASE("calibration threshold maximizes TPR minus FPR at smallest delta") {
  auto id = [](double) { return std::vector<double>{0.9, 0.8}; };
  auto anom = [](double) { return std::vector<double>{0.4, 0.2}; };
  Calibration cal = calibrate(id, anom, t_grid_default());
  REQUIRE_THAT(cal.delta, WithinAbs(0.4, 1e-15));
}

TEST_CASE("swapping labels mirrors the calibration AUROC") {
  Rng rng(13);
  std::vector<double> a, b;
  for (int i = 0; i < 40; ++i) a.push_back(rng.uniform(0.0, 1.0));
  for (int i = 0; i < 30; ++i) b.push_back(rng.uniform(0.0, 1.0));
  auto fa = [&](double) { return a; };
  auto fb = [&](double) { return b; };
  Calibration ab = calibrate(fa, fb, {1.0});
  Calibration ba = calibrate(fb, fa, {1.0});
  REQUIRE_THAT(ab.auroc_at_t + ba.auroc_at_t, WithinAbs(1.0, 1e-15));
}

TEST_CASE("calibration rejects empty inputs") {
  auto empty = [](double) { return std::vector<double>{}; };
  auto some = [](double) { return std::vector<double>{0.5}; };
  REQUIRE_THROWS_AS(calibrate(empty, some, {1.0}), CalibrationError);
  REQUIRE_THROWS_AS(calibrate(some, some, {}), CalibrationError);
}

TEST_CASE("score dump round-trips") {
  auto dir = std::filesystem::temp_directory_path() / "xmad_detect_test";
  std::filesystem::create_directories(dir);
  auto path = dir / "scores.csv";
  std::vector<ScoreRecord> recs = {
      {0, Task::ID, false, ScoreKind::MSP, 1.0, 0.93},
      {1, Task::T3, true, ScoreKind::MAP, 50.0, 0.0123456789012345},
  };
  write_scores(path, recs);
  auto back = read_scores(path);
  REQUIRE(back.size() == 2);
  REQUIRE(back[1].task == Task::T3);
  REQUIRE(back[1].is_anomaly);
  REQUIRE(back[1].kind == ScoreKind::MAP);
  REQUIRE(back[1].temperature == 50.0);
  REQUIRE(back[1].score == recs[1].score);
}
