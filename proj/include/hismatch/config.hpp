#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace hismatch {

enum class Composition { kSubtract, kMultiply };

std::string_view composition_name(Composition c);

// Hyperparameters, ablation switches and training controls. Defaults are the
// ICEWS14 settings; per-dataset profiles override m, n, k and omega1.
struct TrainConfig {
  std::size_t d_e = 128;  // entity / relation dimension
  std::size_t d_t = 32;   // time encoding dimension
  std::size_t m = 5;      // query history length
  std::size_t n = 5;      // candidate history length
  std::size_t k = 4;      // snapshots in the background graph
  std::size_t omega1 = 2; // candidate CompGCN layers
  std::size_t omega2 = 2; // background CompGCN layers
  std::size_t kernels = 50;
  std::size_t kernel_width = 3;
  double dropout = 0.2;
  bool candidate_dropout = true;  // also drop out candidate CompGCN outputs
  Composition composition = Composition::kSubtract;

  bool disable_query = false;
  bool disable_candidate = false;
  bool disable_background = false;
  bool disable_time = false;

  double lr = 1e-3;
  std::size_t epochs = 100;
  std::size_t patience = 10;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
  std::size_t history_window = 0;  // 0 scans the whole past
  std::size_t workers = 1;         // evaluation threads

  // Applies one key=value setting; throws std::invalid_argument on unknown
  // keys or unparsable values.
  void set(std::string_view key, std::string_view value);
  std::string get(std::string_view key) const;
  void validate() const;

  // Applies key=value lines ('#' starts a comment) on top of this config.
  void apply(std::string_view text);

  // Canonical "key=value" lines in a stable order.
  std::string to_string() const;
  static TrainConfig from_string(std::string_view text);
  static TrainConfig from_file(const std::filesystem::path& path);

  // Hash of every setting that determines parameter shapes.
  std::uint64_t shape_fingerprint(std::size_t num_entities,
                                  std::size_t num_relations) const;
};

struct ConfigKey {
  std::string name;
  std::string help;
};

// All keys in canonical order with a short description.
const std::vector<ConfigKey>& config_keys();

// Known dataset profiles: ICEWS14, ICEWS14*, ICEWS18, ICEWS05-15, GDELT, WIKI.
TrainConfig profile_config(std::string_view dataset);
std::vector<std::string> profile_names();

}  // namespace hismatch
