#pragma once

// Binary checkpoint container, little-endian throughout:
//
//   magic "HSMCKPT\0" | u32 version | u64 shape fingerprint | u64 seed
//   | u64 epoch | f64 validation MRR | u64 |E| | u64 |R| (with inverses)
//   | u32 config length | config text (key=value lines)
//   | u32 block count | blocks...
//
//   block: u32 name length | name | u32 rank | u64 dims[rank] | f64 values
//
// Loading validates the whole file before any state is returned.

#include <cstdint>
#include <filesystem>
#include <stdexcept>

#include "hismatch/model.hpp"

namespace hismatch {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;
  double valid_mrr = 0.0;
};

struct Checkpoint {
  ModelState state;
  CheckpointMeta meta;
};

void save_checkpoint(ModelState& state, const CheckpointMeta& meta,
                     const std::filesystem::path& path);

// Refuses files whose shape fingerprint does not match a model over
// `num_entities` entities and `num_relations` relations.
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           std::size_t num_entities, std::size_t num_relations);

}  // namespace hismatch
