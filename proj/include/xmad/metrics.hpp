#pragma once

#include <algorithm>
#include <vector>

#include "xmad/errors.hpp"
#include "xmad/model.hpp"
#include "xmad/sample.hpp"

namespace xmad {

/// AUROC of ID-vs-anomaly separability with scores oriented higher = more
/// normal: P(S_id > S_anom) + 0.5 P(S_id = S_anom), via the midrank
/// statistic. Ties get average ranks, which keeps auroc(a,b) + auroc(b,a)
/// exactly 1.
inline double auroc(const std::vector<double>& id_scores,
                    const std::vector<double>& anomaly_scores) {
  if (id_scores.empty() || anomaly_scores.empty())
    throw DomainError("auroc: score lists must be nonempty");
  struct Entry {
    double score;
    bool is_id;
  };
  std::vector<Entry> all;
  all.reserve(id_scores.size() + anomaly_scores.size());
  for (double s : id_scores) all.push_back({s, true});
  for (double s : anomaly_scores) all.push_back({s, false});
  std::sort(all.begin(), all.end(),
            [](const Entry& a, const Entry& b) { return a.score < b.score; });

  double rank_sum_id = 0.0;
  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t j = i;
    while (j < all.size() && all[j].score == all[i].score) ++j;
    double mid_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    for (std::size_t k = i; k < j; ++k)
      if (all[k].is_id) rank_sum_id += mid_rank;
    i = j;
  }
  double n_id = static_cast<double>(id_scores.size());
  double n_anom = static_cast<double>(anomaly_scores.size());
  double num = rank_sum_id - n_id * (n_id + 1.0) / 2.0;
  return num / (n_id * n_anom);
}

/// Fraction of samples whose argmax logit matches the stored answer.
/// Ties resolve to the lowest class index.
inline double accuracy(const Model& model, const std::vector<Sample>& data) {
  if (data.empty()) throw DomainError("accuracy: empty dataset");
  int correct = 0;
  for (const Sample& s : data) {
    if (s.answer == kUndefinedAnswer)
      throw DataError("accuracy: dataset contains undefined answers");
    Prediction p = predict(model, s);
    if (argmax_answer(p.logits) == s.answer) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace xmad
