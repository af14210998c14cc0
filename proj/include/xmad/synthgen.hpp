#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "xmad/errors.hpp"
#include "xmad/rng.hpp"
#include "xmad/sample.hpp"
#include "xmad/world.hpp"

namespace xmad {

/// Latent scene description before rendering to noisy features.
struct SceneObject {
  std::string shape;
  std::string color;
};

namespace detail {

/// Renders one object to a two-hot attribute vector plus Gaussian noise.
/// Re-draws the noise if it would flip the argmax decode, so answers stay
/// re-derivable from features alone.
inline void render_object(const WorldSpec& w, const SceneObject& obj, Rng& rng, Tensor& features,
                          int row) {
  int ns = static_cast<int>(w.shapes.size());
  int si = w.shape_index(obj.shape);
  int ci = w.color_index(obj.color);
  for (int attempt = 0; attempt < 64; ++attempt) {
    for (int c = 0; c < w.d(); ++c) {
      double base = (c == si || c == ns + ci) ? 1.0 : 0.0;
      features.at(row, c) = base + rng.normal(0.0, w.noise_sigma);
    }
    int s_dec = 0, c_dec = 0;
    for (int i = 1; i < ns; ++i)
      if (features.at(row, i) > features.at(row, s_dec)) s_dec = i;
    for (int i = 1; i < static_cast<int>(w.colors.size()); ++i)
      if (features.at(row, ns + i) > features.at(row, ns + c_dec)) c_dec = i;
    if (s_dec == si && c_dec == ci) return;
  }
  throw GenerationError("render_object: noise repeatedly flipped attribute decode");
}

inline Tensor render_scene(const WorldSpec& w, const std::vector<SceneObject>& objs, Rng& rng) {
  Tensor f({w.K, w.d()});
  for (int r = 0; r < w.K; ++r) render_object(w, objs[r], rng, f, r);
  return f;
}

inline void set_tokens(const WorldSpec& w, Sample& s, const std::vector<std::string>& words) {
  if (static_cast<int>(words.size()) > w.M)
    throw GenerationError("question longer than token budget M");
  s.tokens.assign(w.M, kPadToken);
  s.token_mask.assign(w.M, 0);
  for (std::size_t i = 0; i < words.size(); ++i) {
    s.tokens[i] = w.token(words[i]);
    s.token_mask[i] = 1;
  }
}

/// Builds a scene in which `pivot` occurs in exactly one object (its row 0
/// before shuffling) and every other object avoids the pivot attribute.
inline std::vector<SceneObject> scene_with_unique(const WorldSpec& w, bool pivot_is_shape,
                                                  const std::string& pivot,
                                                  const std::string& pivot_partner, Rng& rng) {
  auto us = w.usable_shapes();
  auto uc = w.usable_colors();
  std::vector<std::string> other_shapes = us;
  std::vector<std::string> other_colors = uc;
  if (pivot_is_shape)
    other_shapes.erase(std::remove(other_shapes.begin(), other_shapes.end(), pivot),
                       other_shapes.end());
  else
    other_colors.erase(std::remove(other_colors.begin(), other_colors.end(), pivot),
                       other_colors.end());
  if (w.K > 1 && (other_shapes.empty() || other_colors.empty()))
    throw GenerationError("vocabulary too small to keep the pivot attribute unique");

  std::vector<SceneObject> objs;
  objs.push_back(pivot_is_shape ? SceneObject{pivot, pivot_partner}
                                : SceneObject{pivot_partner, pivot});
  for (int i = 1; i < w.K; ++i)
    objs.push_back({rng.pick(other_shapes), rng.pick(other_colors)});
  rng.shuffle(objs);
  return objs;
}

/// Decodes the latent (shape, color) of every object by blockwise argmax.
inline std::vector<SceneObject> decode_scene(const WorldSpec& w, const Tensor& features) {
  int ns = static_cast<int>(w.shapes.size());
  std::vector<SceneObject> out;
  for (int r = 0; r < features.rows(); ++r) {
    int s = 0, c = 0;
    for (int i = 1; i < ns; ++i)
      if (features.at(r, i) > features.at(r, s)) s = i;
    for (int i = 1; i < static_cast<int>(w.colors.size()); ++i)
      if (features.at(r, ns + i) > features.at(r, ns + c)) c = i;
    out.push_back({w.shapes[s], w.colors[c]});
  }
  return out;
}

}  // namespace detail

/// Re-derives the answer of a parseable question from the rendered features.
/// Returns nullopt when the question's premise fails (no unique referenced
/// object) or the tokens do not form a known question template.
inline std::optional<std::string> derive_answer(const WorldSpec& w, const Tensor& features,
                                                const std::vector<int>& tokens,
                                                const std::vector<std::uint8_t>& mask) {
  std::vector<std::string> words;
  for (std::size_t i = 0; i < tokens.size(); ++i)
    if (i < mask.size() && mask[i]) words.push_back(w.vocab.at(tokens[i]));
  auto scene = detail::decode_scene(w, features);

  auto unique_by_shape = [&](const std::string& s) -> const SceneObject* {
    const SceneObject* hit = nullptr;
    for (const auto& o : scene)
      if (o.shape == s) {
        if (hit) return nullptr;
        hit = &o;
      }
    return hit;
  };
  auto unique_by_color = [&](const std::string& c) -> const SceneObject* {
    const SceneObject* hit = nullptr;
    for (const auto& o : scene)
      if (o.color == c) {
        if (hit) return nullptr;
        hit = &o;
      }
    return hit;
  };

  if (words.size() == 5 && words[0] == "what" && words[1] == "color") {
    const SceneObject* o = unique_by_shape(words[4]);
    return o ? std::optional<std::string>(o->color) : std::nullopt;
  }
  if (words.size() == 6 && words[0] == "what" && words[1] == "shape") {
    const SceneObject* o = unique_by_color(words[4]);
    return o ? std::optional<std::string>(o->shape) : std::nullopt;
  }
  if (words.size() == 5 && words[0] == "is" && words[1] == "there") {
    for (const auto& o : scene)
      if (o.color == words[3] && o.shape == words[4]) return std::string("yes");
    return std::string("no");
  }
  return std::nullopt;
}

/// In-distribution scene-QA samples. Questions come from three templates;
/// the attribute each question pivots on occurs exactly once in its scene and
/// the answer is always inside the candidate set.
inline std::vector<Sample> gen_id(const WorldSpec& w, int n, std::uint64_t seed) {
  if (n < 1) throw GenerationError("gen_id: n must be >= 1");
  auto us = w.usable_shapes();
  auto uc = w.usable_colors();
  std::vector<std::string> answer_shapes, answer_colors;
  for (const auto& s : us)
    if (!w.is_held_out(s)) answer_shapes.push_back(s);
  for (const auto& c : uc)
    if (!w.is_held_out(c)) answer_colors.push_back(c);
  if (answer_shapes.empty() || answer_colors.empty())
    throw GenerationError("gen_id: no usable answer attributes left");

  std::vector<Sample> out;
  for (int i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, "id/" + std::to_string(i)));
    Sample s;
    s.task = Task::ID;
    s.family = Family::TRAIN;
    s.seed_index = i;
    int tmpl = rng.uniform_int(3);
    if (tmpl == 0) {  // what color is the <shape>
      std::string shape = rng.pick(us);
      std::string color = rng.pick(answer_colors);
      auto objs = detail::scene_with_unique(w, true, shape, color, rng);
      s.features = detail::render_scene(w, objs, rng);
      detail::set_tokens(w, s, {"what", "color", "is", "the", shape});
      s.answer = w.answer_id(color);
    } else if (tmpl == 1) {  // what shape is the <color> object
      std::string color = rng.pick(uc);
      std::string shape = rng.pick(answer_shapes);
      auto objs = detail::scene_with_unique(w, false, color, shape, rng);
      s.features = detail::render_scene(w, objs, rng);
      detail::set_tokens(w, s, {"what", "shape", "is", "the", color, "object"});
      s.answer = w.answer_id(shape);
    } else {  // is there a <color> <shape>
      std::string shape = rng.pick(us);
      std::string actual = rng.pick(uc);
      bool yes = rng.uniform_int(2) == 0;
      std::string asked = actual;
      if (!yes) {
        do asked = rng.pick(uc);
        while (asked == actual);
      }
      auto objs = detail::scene_with_unique(w, true, shape, actual, rng);
      s.features = detail::render_scene(w, objs, rng);
      detail::set_tokens(w, s, {"is", "there", "a", asked, shape});
      s.answer = w.answer_id(yes ? "yes" : "no");
    }
    out.push_back(std::move(s));
  }
  return out;
}

/// Anomaly generators for the five tasks. TRAIN and EVAL families share no
/// feature pattern (T1/T3), no sentence template (T2), no false-premise shape
/// pool (T4) and no held-out answer (T5).
inline std::vector<Sample> gen_anomaly(const WorldSpec& w, Task task, Family family, int n,
                                       std::uint64_t seed) {
  if (task == Task::ID) throw GenerationError("gen_anomaly: task must be one of T1..T5");
  if (n < 1) throw GenerationError("gen_anomaly: n must be >= 1");
  auto us = w.usable_shapes();
  auto uc = w.usable_colors();

  auto ood_features = [&](Rng& rng) {
    Tensor f({w.K, w.d()});
    if (family == Family::TRAIN) {
      for (std::size_t i = 0; i < f.size(); ++i) f[i] = rng.uniform(-1.0, 1.0);
    } else {
      // One-hot on the reserved attribute indices (never seen in training)
      // plus shifted-mean noise.
      int ns = static_cast<int>(w.shapes.size());
      std::vector<int> reserved = {ns - 1, ns + static_cast<int>(w.colors.size()) - 1};
      for (int r = 0; r < w.K; ++r) {
        int hot = reserved[static_cast<std::size_t>(rng.uniform_int(2))];
        for (int c = 0; c < w.d(); ++c)
          f.at(r, c) = (c == hot ? 1.0 : 0.0) + rng.normal(0.5, w.noise_sigma);
      }
    }
    return f;
  };

  auto id_scene = [&](Rng& rng) {
    std::vector<SceneObject> objs;
    for (int i = 0; i < w.K; ++i) objs.push_back({rng.pick(us), rng.pick(uc)});
    return detail::render_scene(w, objs, rng);
  };

  auto statement_tokens = [&](Rng& rng, Sample& s) {
    if (family == Family::TRAIN) {
      // "the <c1> <s1> is a <c2> <s2>"
      detail::set_tokens(w, s,
                         {"the", rng.pick(uc), rng.pick(us), "is", "a", rng.pick(uc),
                          rng.pick(us)});
    } else if (rng.uniform_int(2) == 0) {
      // "the <s1> object is the <c1> color"
      detail::set_tokens(w, s, {"the", rng.pick(us), "object", "is", "the", rng.pick(uc),
                                "color"});
    } else {
      // Out-of-vocabulary word salad.
      std::vector<std::string> ood(std::begin(WorldSpec::kOodWords),
                                   std::end(WorldSpec::kOodWords));
      int len = 4 + rng.uniform_int(std::min(4, w.M - 3));
      std::vector<std::string> words;
      for (int t = 0; t < len; ++t) words.push_back(rng.pick(ood));
      detail::set_tokens(w, s, words);
    }
  };

  std::vector<Sample> out;
  for (int i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, std::string(task_name(task)) + "/" + family_name(family) + "/" +
                                  std::to_string(i)));
    Sample s;
    s.task = task;
    s.family = family;
    s.seed_index = i;
    s.answer = kUndefinedAnswer;

    switch (task) {
      case Task::T1: {  // OOD image, ID-style question
        s.features = ood_features(rng);
        std::string shape = rng.pick(us);
        detail::set_tokens(w, s, {"what", "color", "is", "the", shape});
        break;
      }
      case Task::T2: {  // ID image, non-question sentence
        s.features = id_scene(rng);
        statement_tokens(rng, s);
        break;
      }
      case Task::T3: {  // both OOD
        s.features = ood_features(rng);
        statement_tokens(rng, s);
        break;
      }
      case Task::T4: {  // irrelevant question over an ID image
        auto pool = family == Family::TRAIN ? w.t4_pool_train() : w.t4_pool_eval();
        if (pool.empty()) throw GenerationError("gen_anomaly: empty false-premise shape pool");
        bool non_visual = family == Family::TRAIN && rng.uniform_int(2) == 0;
        if (non_visual) {
          s.features = id_scene(rng);
          std::vector<std::string> fillers(std::begin(WorldSpec::kFillerWords),
                                           std::end(WorldSpec::kFillerWords));
          detail::set_tokens(w, s, {"what", "is", "the", "capital", "of", rng.pick(fillers)});
        } else {
          std::string absent = rng.pick(pool);
          std::vector<std::string> other_shapes = us;
          other_shapes.erase(std::remove(other_shapes.begin(), other_shapes.end(), absent),
                             other_shapes.end());
          if (other_shapes.empty())
            throw GenerationError("gen_anomaly: false-premise pool exhausted");
          std::vector<SceneObject> objs;
          for (int k = 0; k < w.K; ++k) objs.push_back({rng.pick(other_shapes), rng.pick(uc)});
          s.features = detail::render_scene(w, objs, rng);
          detail::set_tokens(w, s, {"what", "color", "is", "the", absent});
        }
        break;
      }
      case Task::T5: {  // ID pair whose true answer is outside the candidates
        std::vector<std::string> pool;
        for (std::size_t h = 0; h < w.held_out_answers.size(); ++h)
          if ((family == Family::TRAIN) == (h % 2 == 0)) pool.push_back(w.held_out_answers[h]);
        if (pool.empty()) throw GenerationError("gen_anomaly: no held-out answers for family");
        std::string held = rng.pick(pool);
        bool is_color = std::find(uc.begin(), uc.end(), held) != uc.end();
        if (is_color) {  // "what color is the <shape>" with a held-out color answer
          std::string shape = rng.pick(us);
          auto objs = detail::scene_with_unique(w, true, shape, held, rng);
          s.features = detail::render_scene(w, objs, rng);
          detail::set_tokens(w, s, {"what", "color", "is", "the", shape});
        } else {  // "what shape is the <color> object" with a held-out shape answer
          std::string color = rng.pick(uc);
          auto objs = detail::scene_with_unique(w, false, color, held, rng);
          s.features = detail::render_scene(w, objs, rng);
          detail::set_tokens(w, s, {"what", "shape", "is", "the", color, "object"});
        }
        s.truth = held;
        break;
      }
      default:
        throw GenerationError("gen_anomaly: unreachable task");
    }
    out.push_back(std::move(s));
  }
  return out;
}

/// Deterministic shuffle + partition. Sizes follow the largest-remainder rule
/// so they are exact whenever n * fraction is integral.
inline std::vector<std::vector<Sample>> split(const std::vector<Sample>& data,
                                              const std::vector<double>& fractions,
                                              std::uint64_t seed) {
  double total = 0.0;
  for (double f : fractions) {
    if (f <= 0.0) throw GenerationError("split: fractions must be positive");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw GenerationError("split: fractions must sum to 1");

  std::size_t n = data.size();
  std::vector<std::size_t> counts(fractions.size());
  std::vector<std::pair<double, std::size_t>> rema;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    double exact = fractions[i] * static_cast<double>(n);
    counts[i] = static_cast<std::size_t>(exact);
    assigned += counts[i];
    rema.push_back({exact - static_cast<double>(counts[i]), i});
  }
  std::stable_sort(rema.begin(), rema.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; assigned < n; ++r, ++assigned) counts[rema[r % rema.size()].second]++;
  for (std::size_t c : counts)
    if (c == 0) throw GenerationError("split: a partition would be empty");

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(seed, "split"));
  rng.shuffle(order);

  std::vector<std::vector<Sample>> parts(fractions.size());
  std::size_t pos = 0;
  for (std::size_t i = 0; i < fractions.size(); ++i)
    for (std::size_t k = 0; k < counts[i]; ++k) parts[i].push_back(data[order[pos++]]);
  return parts;
}

}  // namespace xmad
