#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "xmad/errors.hpp"
#include "xmad/tensor.hpp"

namespace xmad {

enum class Task { ID, T1, T2, T3, T4, T5 };
enum class Family { TRAIN, EVAL };

inline constexpr int kUndefinedAnswer = -1;

inline const char* task_name(Task t) {
  switch (t) {
    case Task::ID: return "ID";
    case Task::T1: return "T1";
    case Task::T2: return "T2";
    case Task::T3: return "T3";
    case Task::T4: return "T4";
    case Task::T5: return "T5";
  }
  return "?";
}

inline Task task_from(const std::string& s) {
  for (Task t : {Task::ID, Task::T1, Task::T2, Task::T3, Task::T4, Task::T5})
    if (s == task_name(t)) return t;
  throw ParseError("unknown task label: " + s);
}

inline const char* family_name(Family f) { return f == Family::TRAIN ? "TRAIN" : "EVAL"; }

inline Family family_from(const std::string& s) {
  if (s == "TRAIN") return Family::TRAIN;
  if (s == "EVAL") return Family::EVAL;
  throw ParseError("unknown family label: " + s);
}

/// One multimodal record: K object feature vectors, up to M question tokens
/// with a validity mask, an optional answer, and anomaly metadata.
struct Sample {
  Tensor features;                      // (K, d)
  std::vector<int> tokens;              // size M, pad token where masked off
  std::vector<std::uint8_t> token_mask; // size M
  int answer = kUndefinedAnswer;        // candidate id, or kUndefinedAnswer
  Task task = Task::ID;
  Family family = Family::TRAIN;
  int seed_index = 0;
  std::string truth;                    // T5 ground-truth name; empty otherwise

  bool is_anomaly() const { return task != Task::ID; }

  int valid_tokens() const {
    int n = 0;
    for (auto m : token_mask) n += m ? 1 : 0;
    return n;
  }

  friend bool operator==(const Sample& a, const Sample& b) {
    return a.features == b.features && a.tokens == b.tokens && a.token_mask == b.token_mask &&
           a.answer == b.answer && a.task == b.task && a.family == b.family &&
           a.seed_index == b.seed_index && a.truth == b.truth;
  }
};

inline nlohmann::json sample_to_json(const Sample& s) {
  nlohmann::json j;
  const Tensor& f = s.features;
  nlohmann::json rows = nlohmann::json::array();
  for (int r = 0; r < f.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (int c = 0; c < f.cols(); ++c) row.push_back(f.at(r, c));
    rows.push_back(std::move(row));
  }
  j["features"] = std::move(rows);
  j["tokens"] = s.tokens;
  j["token_mask"] = std::vector<int>(s.token_mask.begin(), s.token_mask.end());
  j["answer"] = s.answer;
  j["task"] = task_name(s.task);
  j["family"] = family_name(s.family);
  j["seed_index"] = s.seed_index;
  j["truth"] = s.truth;
  return j;
}

inline Sample sample_from_json(const nlohmann::json& j) {
  Sample s;
  const auto& rows = j.at("features");
  int K = static_cast<int>(rows.size());
  int d = K > 0 ? static_cast<int>(rows.at(0).size()) : 0;
  if (K == 0 || d == 0) throw ParseError("sample has empty feature matrix");
  Tensor f({K, d});
  for (int r = 0; r < K; ++r)
    for (int c = 0; c < d; ++c) f.at(r, c) = rows.at(r).at(c).get<double>();
  s.features = std::move(f);
  s.tokens = j.at("tokens").get<std::vector<int>>();
  auto mask = j.at("token_mask").get<std::vector<int>>();
  s.token_mask.assign(mask.begin(), mask.end());
  s.answer = j.at("answer").get<int>();
  s.task = task_from(j.at("task").get<std::string>());
  s.family = family_from(j.at("family").get<std::string>());
  s.seed_index = j.at("seed_index").get<int>();
  s.truth = j.at("truth").get<std::string>();
  if (s.tokens.size() != s.token_mask.size())
    throw ParseError("sample token/mask length mismatch");
  return s;
}

/// Line-delimited dataset file: one JSON object per line, fields named as in
/// Sample. Writing then reading reproduces the records exactly.
inline void write_dataset(const std::filesystem::path& path, const std::vector<Sample>& data) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open for writing: " + path.string());
  for (const Sample& s : data) out << sample_to_json(s).dump() << "\n";
}

inline std::vector<Sample> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ResolutionError(path.string());
  std::vector<Sample> data;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      data.push_back(sample_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw ParseError("parse error at " + path.string() + ":" + std::to_string(lineno) + ": " +
                       e.what());
    }
  }
  return data;
}

}  // namespace xmad
