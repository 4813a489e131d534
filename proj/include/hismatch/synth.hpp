#pragma once

// Synthetic temporal KGs with known generative rules.
//
//   cyclic  subject e links (relation 0) to (e + 1 + t mod period) mod N,
//           under a seeded permutation of entity ids; every timestamp has
//           one fact per entity. Fully determined by t, so the best MRR is 1.
//   parity  `subjects` subjects fire events separated by gaps drawn
//           uniformly from [gap_min, gap_max]. At each event the subject
//           links to its `set_size` "even" objects when the gap since its
//           previous event is even, otherwise to its "odd" objects. The first
//           event picks a set at random. Only the interval decides the answer.
//   random  `facts` uniformly random (s, r, o) triples per timestamp.
//
// Timestamps [0, T) are split chronologically: the last `test` timestamps
// are held out for test, the `valid` before them for validation.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "hismatch/dataset.hpp"

namespace hismatch {

enum class SynthKind { kCyclic, kParity, kRandom };

std::string_view synth_name(SynthKind kind);
SynthKind parse_synth_kind(std::string_view name);

struct SynthParams {
  SynthKind kind = SynthKind::kCyclic;
  std::uint64_t seed = 0;
  std::size_t timestamps = 30;
  std::size_t valid = 3;
  std::size_t test = 5;
  // cyclic / random
  std::size_t entities = 20;
  std::size_t period = 2;
  // parity
  std::size_t subjects = 4;
  std::size_t set_size = 3;
  std::size_t gap_min = 2;
  std::size_t gap_max = 3;
  // random
  std::size_t relations = 3;
  std::size_t facts = 10;

  // Throws std::invalid_argument naming the offending parameter.
  void validate() const;
};

// Base facts only (not inverse-augmented, no snapshots).
TkgDataset make_synthetic(const SynthParams& params);

// Human-readable generative rule and parameters.
std::string describe_synthetic(const SynthParams& params);

// train/valid/test/stat.txt plus description.txt. Same params, same bytes.
void write_synthetic(const SynthParams& params, const std::filesystem::path& dir);

// make_synthetic + inverse augmentation + snapshots.
TkgDataset load_synthetic(const SynthParams& params);

}  // namespace hismatch
