#include "hismatch/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "hismatch/trainer.hpp"

namespace hismatch {

namespace {

constexpr char kMagic[8] = {'H', 'S', 'M', 'C', 'K', 'P', 'T', '\0'};

class Writer {
 public:
  template <typename T>
  void put(T value) {
    std::uint64_t bits = 0;
    if constexpr (std::is_floating_point_v<T>) {
      bits = std::bit_cast<std::uint64_t>(static_cast<double>(value));
    } else {
      bits = static_cast<std::uint64_t>(value);
    }
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      buf_.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
    }
  }
  void bytes(const char* data, std::size_t n) { buf_.append(data, n); }
  void str(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  const std::string& buffer() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i]))
              << (8 * i);
    }
    pos_ += sizeof(T);
    if constexpr (std::is_same_v<T, double>) {
      return std::bit_cast<double>(bits);
    } else {
      return static_cast<T>(bits);
    }
  }
  std::string str() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void expect_magic() {
    need(sizeof(kMagic));
    if (std::memcmp(data_.data(), kMagic, sizeof(kMagic)) != 0) {
      throw CheckpointError("checkpoint: bad magic");
    }
    pos_ += sizeof(kMagic);
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) {
    if (data_.size() - pos_ < n) {
      throw CheckpointError("checkpoint: truncated file (needed " +
                            std::to_string(n) + " bytes at offset " +
                            std::to_string(pos_) + ")");
    }
  }
  std::string data_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(ModelState& state, const CheckpointMeta& meta,
                     const std::filesystem::path& path) {
  Writer w;
  w.bytes(kMagic, sizeof(kMagic));
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint64_t>(state.fingerprint());
  w.put<std::uint64_t>(meta.seed);
  w.put<std::uint64_t>(meta.epoch);
  w.put<double>(meta.valid_mrr);
  w.put<std::uint64_t>(state.num_entities);
  w.put<std::uint64_t>(state.num_relations);
  w.str(state.config.to_string());
  const auto params = state.parameters();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, p] : params) {
    w.str(name);
    const auto& shape = p->tensor.shape();
    w.put<std::uint32_t>(static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) w.put<std::uint64_t>(d);
    for (double v : p->tensor.values()) w.put<double>(v);
  }
  write_file_atomic(path, w.buffer());
}

Checkpoint load_checkpoint(const std::filesystem::path& path,
                           std::size_t num_entities, std::size_t num_relations) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open " + path.string());
  Reader r{std::string((std::istreambuf_iterator<char>(in)),
                       std::istreambuf_iterator<char>())};
  r.expect_magic();
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint: unsupported format version " +
                          std::to_string(version));
  }
  const auto fingerprint = r.get<std::uint64_t>();
  CheckpointMeta meta;
  meta.seed = r.get<std::uint64_t>();
  meta.epoch = r.get<std::uint64_t>();
  meta.valid_mrr = r.get<double>();
  const auto file_entities = r.get<std::uint64_t>();
  const auto file_relations = r.get<std::uint64_t>();
  TrainConfig config;
  try {
    config = TrainConfig::from_string(r.str());
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("checkpoint: bad embedded config: ") + e.what());
  }
  if (config.shape_fingerprint(file_entities, file_relations) != fingerprint) {
    throw CheckpointError("checkpoint: header fingerprint does not match its config");
  }
  if (config.shape_fingerprint(num_entities, num_relations) != fingerprint) {
    throw CheckpointError(
        "checkpoint: fingerprint mismatch (file built for " +
        std::to_string(file_entities) + " entities / " +
        std::to_string(file_relations) + " relations, dataset has " +
        std::to_string(num_entities) + " / " + std::to_string(num_relations) + ")");
  }

  std::map<std::string, Tensor> blocks;
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t b = 0; b < count; ++b) {
    auto name = r.str();
    const auto rank = r.get<std::uint32_t>();
    if (rank == 0 || rank > 8) {
      throw CheckpointError("checkpoint: block '" + name + "' has bad rank");
    }
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint64_t>();
    std::vector<double> values(shape_numel(shape));
    for (auto& v : values) v = r.get<double>();
    blocks.emplace(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  if (!r.done()) throw CheckpointError("checkpoint: trailing bytes");

  Checkpoint ck{ModelState::create(config, num_entities, num_relations, meta.seed),
                meta};
  const auto params = ck.state.parameters();
  if (params.size() != blocks.size()) {
    throw CheckpointError("checkpoint: expected " + std::to_string(params.size()) +
                          " parameter blocks, found " +
                          std::to_string(blocks.size()));
  }
  for (const auto& [name, p] : params) {
    auto it = blocks.find(name);
    if (it == blocks.end()) {
      throw CheckpointError("checkpoint: missing parameter block '" + name + "'");
    }
    if (it->second.shape() != p->tensor.shape()) {
      throw CheckpointError("checkpoint: block '" + name + "' has shape " +
                            shape_str(it->second.shape()) + ", expected " +
                            shape_str(p->tensor.shape()));
    }
    *p = Parameter(std::move(it->second));
  }
  return ck;
}

}  // namespace hismatch
