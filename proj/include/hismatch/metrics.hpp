#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hismatch/dataset.hpp"

namespace hismatch {

enum class FilterMode { kRaw, kTimeAware };

std::string_view filter_name(FilterMode mode);
FilterMode parse_filter(std::string_view name);

// 1-based rank of `target` by descending score after removing every entity in
// `filtered` other than the target. Ties count as the mean position of the
// tied block, so a target tied with one competitor at the top ranks 1.5.
double rank_with_filter(std::span<const double> scores, std::size_t target,
                        std::span<const std::size_t> filtered);

struct EvalReport {
  std::string split;
  FilterMode filter = FilterMode::kTimeAware;
  double mrr = 0.0;
  double hits1 = 0.0;
  double hits3 = 0.0;
  double hits10 = 0.0;
  std::vector<double> ranks;  // in query order
};

EvalReport summarize_ranks(std::vector<double> ranks, std::string split = {},
                           FilterMode filter = FilterMode::kTimeAware);

}  // namespace hismatch
