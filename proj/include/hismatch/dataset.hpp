#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace hismatch {

// Malformed or inconsistent input data. The CLI maps it to exit code 2.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Quadruple {
  std::size_t subject = 0;
  std::size_t relation = 0;
  std::size_t object = 0;
  std::size_t timestamp = 0;  // snapshot index

  friend bool operator==(const Quadruple&, const Quadruple&) = default;
  friend auto operator<=>(const Quadruple&, const Quadruple&) = default;
};

struct Edge {
  std::size_t subject = 0;
  std::size_t relation = 0;
  std::size_t object = 0;

  friend bool operator==(const Edge&, const Edge&) = default;
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

// All facts of one timestamp as a multi-relational directed graph.
class SnapshotGraph {
 public:
  SnapshotGraph() = default;
  explicit SnapshotGraph(std::size_t index) : index_(index) {}

  void add_edge(const Edge& e);

  std::size_t index() const { return index_; }
  const std::vector<Edge>& edges() const { return edges_; }
  bool empty() const { return edges_.empty(); }
  std::size_t in_degree(std::size_t entity) const;
  // Edge positions whose object / subject is `entity`.
  const std::vector<std::size_t>& incoming(std::size_t entity) const;
  const std::vector<std::size_t>& outgoing(std::size_t entity) const;

 private:
  std::size_t index_ = 0;
  std::vector<Edge> edges_;
  std::unordered_map<std::size_t, std::vector<std::size_t>> incoming_;
  std::unordered_map<std::size_t, std::vector<std::size_t>> outgoing_;
};

enum class Split : int { kTrain = 0, kValid = 1, kTest = 2 };

std::string_view split_name(Split split);
Split parse_split(std::string_view name);

struct TkgDataset {
  std::string name;
  std::size_t num_entities = 0;
  std::size_t num_base_relations = 0;
  std::int64_t time_granularity = 1;  // raw units per snapshot
  std::int64_t time_origin = 0;       // raw time of snapshot 0
  std::array<std::vector<Quadruple>, 3> splits;
  bool augmented = false;
  // Indexed by snapshot index; filled by build_snapshots().
  std::vector<SnapshotGraph> snapshots;

  const std::vector<Quadruple>& split(Split s) const {
    return splits[static_cast<int>(s)];
  }
  std::vector<Quadruple>& split(Split s) { return splits[static_cast<int>(s)]; }

  std::size_t num_relations() const {
    return augmented ? 2 * num_base_relations : num_base_relations;
  }
  // One past the largest timestamp of any split.
  std::size_t num_timestamps() const;
  std::size_t num_facts() const;

  // Sorted distinct timestamps present in a split.
  std::vector<std::size_t> timestamps(Split s) const;
  // Facts of a split grouped by timestamp, keyed in ascending order.
  std::vector<std::pair<std::size_t, std::vector<Quadruple>>> facts_by_time(
      Split s) const;
};

struct ParseOptions {
  // Raw-time units per snapshot; inferred as the GCD of gaps when unset.
  std::optional<std::int64_t> granularity;
};

TkgDataset parse_dataset(const std::filesystem::path& train_path,
                         const std::filesystem::path& valid_path,
                         const std::filesystem::path& test_path,
                         const std::filesystem::path& stat_path,
                         const ParseOptions& options = {});

// Expects train.txt, valid.txt, test.txt and stat.txt inside `dir`.
TkgDataset parse_dataset_dir(const std::filesystem::path& dir,
                             const ParseOptions& options = {});

// Id of the inverse of `relation` under r^-1 = r + |R_base| (an involution).
std::size_t inverse_relation(std::size_t relation, std::size_t num_base);

// Adds (o, r + |R_base|, s, t) after every base fact. Rejects a second call.
TkgDataset augment_inverse(TkgDataset dataset);

// Rebuilds dataset.snapshots from all splits; one graph per timestamp, empty
// graphs for timestamps without facts.
void build_snapshots(TkgDataset& dataset);

// parse + augment + snapshots.
TkgDataset load_dataset(const std::filesystem::path& dir,
                        const ParseOptions& options = {});

// Writes the base (non-inverse) facts in canonical TSV layout plus stat.txt.
void write_dataset_tsv(const TkgDataset& dataset,
                       const std::filesystem::path& dir);

// Stable content hash of the base facts and vocabulary sizes.
std::uint64_t dataset_fingerprint(const TkgDataset& dataset);

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 1469598103934665603ull);

}  // namespace hismatch
