#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "xmad/errors.hpp"

namespace xmad {

/// Token ids are positions in the fixed vocabulary below; id 0 is padding.
inline constexpr int kPadToken = 0;

/// Everything the synthetic scene-QA world is made of: attribute lists, the
/// question/statement vocabulary, answer candidates and the held-out answers
/// that realize the undefined-answer anomaly. The last shape and last color
/// are reserved: they never appear in in-distribution scenes and exist only
/// as feature patterns for the out-of-distribution image family.
struct WorldSpec {
  std::vector<std::string> shapes;
  std::vector<std::string> colors;
  int K = 6;            // objects per scene
  int M = 8;            // max question tokens
  double noise_sigma = 0.1;
  std::vector<std::string> held_out_answers;  // excluded from candidates; T5 ground truths

  // Derived, filled by finalize().
  std::vector<std::string> vocab;          // index = token id
  std::map<std::string, int> token_ids;
  std::vector<std::string> candidates;     // index = answer id
  std::map<std::string, int> answer_ids;

  static constexpr const char* kCoreWords[] = {"<pad>", "what", "color", "is", "the",
                                               "shape", "object", "there", "a"};
  static constexpr const char* kNonVisualWords[] = {"capital", "of"};
  static constexpr const char* kFillerWords[] = {"paris", "tokyo", "cairo", "oslo"};
  static constexpr const char* kOodWords[] = {"zog", "blick", "wug", "fep"};

  int d() const { return static_cast<int>(shapes.size() + colors.size()); }
  int vocab_size() const { return static_cast<int>(vocab.size()); }
  int num_answers() const { return static_cast<int>(candidates.size()); }

  int token(const std::string& w) const {
    auto it = token_ids.find(w);
    if (it == token_ids.end()) throw GenerationError("unknown vocabulary word: " + w);
    return it->second;
  }

  int answer_id(const std::string& a) const {
    auto it = answer_ids.find(a);
    if (it == answer_ids.end()) throw GenerationError("not an answer candidate: " + a);
    return it->second;
  }

  bool is_held_out(const std::string& a) const {
    return std::find(held_out_answers.begin(), held_out_answers.end(), a) !=
           held_out_answers.end();
  }

  /// Shapes/colors usable in in-distribution scenes (reserved last entry cut).
  std::vector<std::string> usable_shapes() const {
    return {shapes.begin(), shapes.end() - 1};
  }
  std::vector<std::string> usable_colors() const {
    return {colors.begin(), colors.end() - 1};
  }

  int shape_index(const std::string& s) const {
    auto it = std::find(shapes.begin(), shapes.end(), s);
    if (it == shapes.end()) throw GenerationError("unknown shape: " + s);
    return static_cast<int>(it - shapes.begin());
  }
  int color_index(const std::string& c) const {
    auto it = std::find(colors.begin(), colors.end(), c);
    if (it == colors.end()) throw GenerationError("unknown color: " + c);
    return static_cast<int>(it - colors.begin());
  }

  // False-premise pools, disjoint between families.
  std::vector<std::string> t4_pool_train() const {
    auto u = usable_shapes();
    return {u.begin(), u.begin() + (u.size() + 1) / 2};
  }
  std::vector<std::string> t4_pool_eval() const {
    auto u = usable_shapes();
    return {u.begin() + (u.size() + 1) / 2, u.end()};
  }

  void finalize() {
    if (shapes.size() < 2 || colors.size() < 2)
      throw ConfigError("WorldSpec: need at least 2 shapes and 2 colors");
    if (K < 1 || M < 7) throw ConfigError("WorldSpec: K must be >= 1 and M >= 7");
    vocab.clear();
    token_ids.clear();
    for (const char* w : kCoreWords) add_word(w);
    for (const char* w : kNonVisualWords) add_word(w);
    for (const char* w : kFillerWords) add_word(w);
    for (const char* w : kOodWords) add_word(w);
    for (const auto& s : shapes) add_word(s);
    for (const auto& c : colors) add_word(c);

    candidates.clear();
    answer_ids.clear();
    for (const auto& c : usable_colors())
      if (!is_held_out(c)) add_candidate(c);
    for (const auto& s : usable_shapes())
      if (!is_held_out(s)) add_candidate(s);
    add_candidate("yes");
    add_candidate("no");

    auto us = usable_shapes();
    auto uc = usable_colors();
    for (const auto& h : held_out_answers) {
      bool usable_attr = std::find(us.begin(), us.end(), h) != us.end() ||
                         std::find(uc.begin(), uc.end(), h) != uc.end();
      if (!usable_attr)
        throw ConfigError("WorldSpec: held-out answer must be a usable attribute: " + h);
    }
    if (num_answers() < 2) throw ConfigError("WorldSpec: fewer than 2 answer candidates");
  }

  static WorldSpec toy() {
    WorldSpec w;
    w.shapes = {"circle", "square", "triangle", "star", "cross", "hexagon"};
    w.colors = {"red", "green", "blue", "yellow", "purple", "orange"};
    w.K = 6;
    w.M = 8;
    w.noise_sigma = 0.1;
    w.held_out_answers = {"purple", "star"};
    w.finalize();
    return w;
  }

  /// Object/token counts from the large-scale setting; everything else as toy.
  static WorldSpec paper_scale() {
    WorldSpec w = toy();
    w.K = 36;
    w.M = 14;
    w.finalize();
    return w;
  }

 private:
  void add_word(const std::string& w) {
    if (token_ids.count(w)) throw ConfigError("WorldSpec: duplicate vocabulary word " + w);
    token_ids[w] = static_cast<int>(vocab.size());
    vocab.push_back(w);
  }
  void add_candidate(const std::string& a) {
    if (answer_ids.count(a)) throw ConfigError("WorldSpec: duplicate answer candidate " + a);
    answer_ids[a] = static_cast<int>(candidates.size());
    candidates.push_back(a);
  }
};

}  // namespace xmad
