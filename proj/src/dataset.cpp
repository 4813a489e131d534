#include "hismatch/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace hismatch {

namespace {

const std::vector<std::size_t> kNoEdges;

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t pos = 0;
  while (pos < line.size()) {
    while (pos < line.size() && (line[pos] == '\t' || line[pos] == ' ')) ++pos;
    if (pos >= line.size()) break;
    auto end = line.find_first_of("\t ", pos);
    if (end == std::string_view::npos) end = line.size();
    fields.push_back(line.substr(pos, end - pos));
    pos = end;
  }
  return fields;
}

std::int64_t parse_int(std::string_view field, const std::string& where) {
  std::int64_t value = 0;
  const auto* first = field.data();
  const auto* last = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) {
    throw DataError(where + ": field '" + std::string(field) +
                    "' is not an integer");
  }
  return value;
}

struct RawFact {
  std::int64_t subject, relation, object, time;
};

std::vector<RawFact> read_facts(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<RawFact> facts;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto fields = split_fields(line);
    if (fields.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (fields.size() < 4) {
      throw DataError(where + ": expected 4 columns (s, r, o, t), got " +
                      std::to_string(fields.size()));
    }
    RawFact f{parse_int(fields[0], where), parse_int(fields[1], where),
              parse_int(fields[2], where), parse_int(fields[3], where)};
    if (f.subject < 0 || f.relation < 0 || f.object < 0 || f.time < 0) {
      throw DataError(where + ": negative id or time");
    }
    facts.push_back(f);
  }
  return facts;
}

std::pair<std::size_t, std::size_t> read_stat(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string first, second;
  if (!(in >> first >> second)) {
    throw DataError(path.string() + ": expected entity and relation counts");
  }
  const std::vector<std::string_view> fields = {first, second};
  const std::string where = path.string() + ":1";
  const auto e = parse_int(fields[0], where);
  const auto r = parse_int(fields[1], where);
  if (e <= 0 || r <= 0) throw DataError(where + ": counts must be positive");
  return {static_cast<std::size_t>(e), static_cast<std::size_t>(r)};
}

}  // namespace

void SnapshotGraph::add_edge(const Edge& e) {
  incoming_[e.object].push_back(edges_.size());
  outgoing_[e.subject].push_back(edges_.size());
  edges_.push_back(e);
}

std::size_t SnapshotGraph::in_degree(std::size_t entity) const {
  return incoming(entity).size();
}

const std::vector<std::size_t>& SnapshotGraph::incoming(std::size_t entity) const {
  auto it = incoming_.find(entity);
  return it == incoming_.end() ? kNoEdges : it->second;
}

const std::vector<std::size_t>& SnapshotGraph::outgoing(std::size_t entity) const {
  auto it = outgoing_.find(entity);
  return it == outgoing_.end() ? kNoEdges : it->second;
}

std::string_view split_name(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kValid: return "valid";
    case Split::kTest: return "test";
  }
  return "?";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "valid") return Split::kValid;
  if (name == "test") return Split::kTest;
  throw std::invalid_argument("unknown split '" + std::string(name) + "'");
}

std::size_t TkgDataset::num_timestamps() const {
  std::size_t n = 0;
  for (const auto& s : splits) {
    for (const auto& q : s) n = std::max(n, q.timestamp + 1);
  }
  return n;
}

std::size_t TkgDataset::num_facts() const {
  return splits[0].size() + splits[1].size() + splits[2].size();
}

std::vector<std::size_t> TkgDataset::timestamps(Split s) const {
  std::set<std::size_t> ts;
  for (const auto& q : split(s)) ts.insert(q.timestamp);
  return {ts.begin(), ts.end()};
}

std::vector<std::pair<std::size_t, std::vector<Quadruple>>>
TkgDataset::facts_by_time(Split s) const {
  std::map<std::size_t, std::vector<Quadruple>> grouped;
  for (const auto& q : split(s)) grouped[q.timestamp].push_back(q);
  return {grouped.begin(), grouped.end()};
}

TkgDataset parse_dataset(const std::filesystem::path& train_path,
                         const std::filesystem::path& valid_path,
                         const std::filesystem::path& test_path,
                         const std::filesystem::path& stat_path,
                         const ParseOptions& options) {
  const auto [num_entities, num_relations] = read_stat(stat_path);
  const std::array<std::filesystem::path, 3> paths = {train_path, valid_path,
                                                      test_path};
  std::array<std::vector<RawFact>, 3> raw;
  std::set<std::int64_t> times;
  for (int s = 0; s < 3; ++s) {
    raw[s] = read_facts(paths[s]);
    if (raw[s].empty()) throw DataError(paths[s].string() + ": empty split");
    for (const auto& f : raw[s]) {
      if (static_cast<std::size_t>(f.subject) >= num_entities ||
          static_cast<std::size_t>(f.object) >= num_entities) {
        throw DataError(paths[s].string() + ": entity id out of range (" +
                        std::to_string(std::max(f.subject, f.object)) +
                        " >= " + std::to_string(num_entities) + ")");
      }
      if (static_cast<std::size_t>(f.relation) >= num_relations) {
        throw DataError(paths[s].string() + ": relation id " +
                        std::to_string(f.relation) + " >= " +
                        std::to_string(num_relations));
      }
      times.insert(f.time);
    }
  }

  TkgDataset ds;
  ds.name = train_path.parent_path().filename().string();
  ds.num_entities = num_entities;
  ds.num_base_relations = num_relations;
  ds.time_origin = *times.begin();
  std::int64_t gcd = 0;
  for (auto t : times) gcd = std::gcd(gcd, t - ds.time_origin);
  ds.time_granularity = options.granularity.value_or(gcd > 0 ? gcd : 1);
  if (ds.time_granularity <= 0) {
    throw DataError("time granularity must be positive");
  }
  for (int s = 0; s < 3; ++s) {
    auto& out = ds.splits[s];
    out.reserve(raw[s].size());
    for (const auto& f : raw[s]) {
      const auto offset = f.time - ds.time_origin;
      if (offset % ds.time_granularity != 0) {
        throw DataError(paths[s].string() + ": raw time " +
                        std::to_string(f.time) +
                        " is not a multiple of granularity " +
                        std::to_string(ds.time_granularity));
      }
      out.push_back({static_cast<std::size_t>(f.subject),
                     static_cast<std::size_t>(f.relation),
                     static_cast<std::size_t>(f.object),
                     static_cast<std::size_t>(offset / ds.time_granularity)});
    }
  }

  auto range = [&](Split s) {
    const auto& v = ds.split(s);
    auto [lo, hi] = std::minmax_element(
        v.begin(), v.end(),
        [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; });
    return std::pair{lo->timestamp, hi->timestamp};
  };
  const auto [train_lo, train_hi] = range(Split::kTrain);
  const auto [valid_lo, valid_hi] = range(Split::kValid);
  const auto [test_lo, test_hi] = range(Split::kTest);
  (void)train_lo;
  (void)test_hi;
  if (!(train_hi < valid_lo && valid_hi < test_lo)) {
    throw DataError(
        "splits are not chronologically ordered: train ends at " +
        std::to_string(train_hi) + ", valid spans [" + std::to_string(valid_lo) +
        ", " + std::to_string(valid_hi) + "], test starts at " +
        std::to_string(test_lo));
  }
  return ds;
}

TkgDataset parse_dataset_dir(const std::filesystem::path& dir,
                             const ParseOptions& options) {
  for (const char* f : {"train.txt", "valid.txt", "test.txt", "stat.txt"}) {
    if (!std::filesystem::exists(dir / f)) {
      throw DataError("missing " + (dir / f).string());
    }
  }
  auto ds = parse_dataset(dir / "train.txt", dir / "valid.txt",
                          dir / "test.txt", dir / "stat.txt", options);
  ds.name = dir.filename().empty() ? dir.parent_path().filename().string()
                                   : dir.filename().string();
  return ds;
}

std::size_t inverse_relation(std::size_t relation, std::size_t num_base) {
  if (relation >= 2 * num_base) {
    throw std::out_of_range("inverse_relation: relation " + std::to_string(relation) +
                            " outside " + std::to_string(2 * num_base));
  }
  return relation < num_base ? relation + num_base : relation - num_base;
}

TkgDataset augment_inverse(TkgDataset dataset) {
  if (dataset.augmented) {
    throw std::logic_error("augment_inverse: dataset is already augmented");
  }
  for (auto& split : dataset.splits) {
    std::vector<Quadruple> out;
    out.reserve(2 * split.size());
    for (const auto& q : split) {
      out.push_back(q);
      out.push_back({q.object, q.relation + dataset.num_base_relations,
                     q.subject, q.timestamp});
    }
    split = std::move(out);
  }
  dataset.augmented = true;
  if (!dataset.snapshots.empty()) build_snapshots(dataset);
  return dataset;
}

void build_snapshots(TkgDataset& dataset) {
  const std::size_t n = dataset.num_timestamps();
  dataset.snapshots.clear();
  dataset.snapshots.reserve(n);
  for (std::size_t t = 0; t < n; ++t) dataset.snapshots.emplace_back(t);
  for (const auto& split : dataset.splits) {
    for (const auto& q : split) {
      dataset.snapshots[q.timestamp].add_edge({q.subject, q.relation, q.object});
    }
  }
}

TkgDataset load_dataset(const std::filesystem::path& dir,
                        const ParseOptions& options) {
  auto ds = augment_inverse(parse_dataset_dir(dir, options));
  build_snapshots(ds);
  return ds;
}

void write_dataset_tsv(const TkgDataset& dataset,
                       const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (Split s : {Split::kTrain, Split::kValid, Split::kTest}) {
    std::ofstream out(dir / (std::string(split_name(s)) + ".txt"));
    if (!out) throw DataError("cannot write " + (dir / split_name(s)).string());
    for (const auto& q : dataset.split(s)) {
      if (q.relation >= dataset.num_base_relations) continue;
      const auto raw = dataset.time_origin +
                       static_cast<std::int64_t>(q.timestamp) *
                           dataset.time_granularity;
      out << q.subject << '\t' << q.relation << '\t' << q.object << '\t' << raw
          << '\n';
    }
  }
  std::ofstream stat(dir / "stat.txt");
  stat << dataset.num_entities << '\t' << dataset.num_base_relations << '\n';
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t dataset_fingerprint(const TkgDataset& dataset) {
  std::ostringstream os;
  os << dataset.num_entities << ' ' << dataset.num_base_relations << '\n';
  for (Split s : {Split::kTrain, Split::kValid, Split::kTest}) {
    os << split_name(s) << '\n';
    for (const auto& q : dataset.split(s)) {
      if (q.relation >= dataset.num_base_relations) continue;
      os << q.subject << ' ' << q.relation << ' ' << q.object << ' '
         << q.timestamp << '\n';
    }
  }
  return fnv1a(os.str());
}

}  // namespace hismatch
