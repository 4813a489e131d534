#include "hismatch/metrics.hpp"

#include <algorithm>
#include <stdexcept>

namespace hismatch {

std::string_view filter_name(FilterMode mode) {
  return mode == FilterMode::kRaw ? "raw" : "time-aware";
}

FilterMode parse_filter(std::string_view name) {
  if (name == "raw") return FilterMode::kRaw;
  if (name == "time-aware" || name == "time_aware") return FilterMode::kTimeAware;
  throw std::invalid_argument("unknown filter mode '" + std::string(name) + "'");
}

double rank_with_filter(std::span<const double> scores, std::size_t target,
                        std::span<const std::size_t> filtered) {
  if (target >= scores.size()) {
    throw std::out_of_range("rank_with_filter: target " + std::to_string(target) +
                            " outside " + std::to_string(scores.size()) +
                            " candidates");
  }
  std::vector<bool> removed(scores.size(), false);
  for (auto e : filtered) {
    if (e < scores.size() && e != target) removed[e] = true;
  }
  const double s = scores[target];
  std::size_t greater = 0;
  std::size_t ties = 0;
  for (std::size_t e = 0; e < scores.size(); ++e) {
    if (e == target || removed[e]) continue;
    if (scores[e] > s) ++greater;
    else if (scores[e] == s) ++ties;
  }
  return 1.0 + static_cast<double>(greater) + 0.5 * static_cast<double>(ties);
}

EvalReport summarize_ranks(std::vector<double> ranks, std::string split,
                           FilterMode filter) {
  EvalReport r;
  r.split = std::move(split);
  r.filter = filter;
  if (!ranks.empty()) {
    for (double rank : ranks) {
      r.mrr += 1.0 / rank;
      r.hits1 += rank <= 1.0 ? 1.0 : 0.0;
      r.hits3 += rank <= 3.0 ? 1.0 : 0.0;
      r.hits10 += rank <= 10.0 ? 1.0 : 0.0;
    }
    const double n = static_cast<double>(ranks.size());
    r.mrr /= n;
    r.hits1 /= n;
    r.hits3 /= n;
    r.hits10 /= n;
  }
  r.ranks = std::move(ranks);
  return r;
}

}  // namespace hismatch
