#include "hismatch/synth.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "hismatch/trainer.hpp"

namespace hismatch {

namespace {

// Portable uniform draw in [lo, hi]; std distributions are not specified
// bit-for-bit across standard libraries.
std::size_t draw(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  const std::uint64_t span = hi - lo + 1;
  return lo + static_cast<std::size_t>(rng() % span);
}

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument("synth: " + what);
}

Split split_of(const SynthParams& p, std::size_t t) {
  if (t + p.test >= p.timestamps) return Split::kTest;
  if (t + p.test + p.valid >= p.timestamps) return Split::kValid;
  return Split::kTrain;
}

void make_cyclic(const SynthParams& p, TkgDataset& ds, std::mt19937_64& rng) {
  std::vector<std::size_t> perm(p.entities);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t i = perm.size(); i > 1; --i) {
    std::swap(perm[i - 1], perm[draw(rng, 0, i - 1)]);
  }
  ds.num_entities = p.entities;
  ds.num_base_relations = 1;
  for (std::size_t t = 0; t < p.timestamps; ++t) {
    for (std::size_t e = 0; e < p.entities; ++e) {
      const std::size_t o = (e + 1 + t % p.period) % p.entities;
      ds.split(split_of(p, t)).push_back({perm[e], 0, perm[o], t});
    }
  }
}

void make_parity(const SynthParams& p, TkgDataset& ds, std::mt19937_64& rng) {
  // Entity layout: subjects first, then per subject its even then odd set.
  ds.num_entities = p.subjects * (1 + 2 * p.set_size);
  ds.num_base_relations = 1;
  auto object = [&](std::size_t s, bool odd, std::size_t j) {
    return p.subjects + s * 2 * p.set_size + (odd ? p.set_size : 0) + j;
  };
  std::vector<std::vector<Quadruple>> by_time(p.timestamps);
  for (std::size_t s = 0; s < p.subjects; ++s) {
    // Staggered starts at 0, 1, ... keep the inferred granularity at 1.
    std::size_t t = s;
    bool odd = draw(rng, 0, 1) == 1;
    while (t < p.timestamps) {
      for (std::size_t j = 0; j < p.set_size; ++j) {
        by_time[t].push_back({s, 0, object(s, odd, j), t});
      }
      const std::size_t gap = draw(rng, p.gap_min, p.gap_max);
      odd = gap % 2 == 1;
      t += gap;
    }
  }
  for (std::size_t t = 0; t < p.timestamps; ++t) {
    auto& split = ds.split(split_of(p, t));
    split.insert(split.end(), by_time[t].begin(), by_time[t].end());
  }
}

void make_random(const SynthParams& p, TkgDataset& ds, std::mt19937_64& rng) {
  ds.num_entities = p.entities;
  ds.num_base_relations = p.relations;
  for (std::size_t t = 0; t < p.timestamps; ++t) {
    for (std::size_t f = 0; f < p.facts; ++f) {
      ds.split(split_of(p, t))
          .push_back({draw(rng, 0, p.entities - 1), draw(rng, 0, p.relations - 1),
                      draw(rng, 0, p.entities - 1), t});
    }
  }
}

}  // namespace

std::string_view synth_name(SynthKind kind) {
  switch (kind) {
    case SynthKind::kCyclic: return "cyclic";
    case SynthKind::kParity: return "parity";
    case SynthKind::kRandom: return "random";
  }
  return "unknown";
}

SynthKind parse_synth_kind(std::string_view name) {
  if (name == "cyclic") return SynthKind::kCyclic;
  if (name == "parity") return SynthKind::kParity;
  if (name == "random") return SynthKind::kRandom;
  throw std::invalid_argument("synth: unknown kind '" + std::string(name) +
                              "' (expected cyclic, parity or random)");
}

void SynthParams::validate() const {
  require(valid >= 1 && test >= 1, "valid and test must be >= 1");
  require(timestamps > valid + test, "timestamps must exceed valid + test");
  switch (kind) {
    case SynthKind::kCyclic:
      require(entities >= 3, "entities must be >= 3");
      require(period >= 1 && period < entities, "period must be in [1, entities)");
      break;
    case SynthKind::kParity:
      require(subjects >= 2, "subjects must be >= 2");
      require(set_size >= 1, "set_size must be >= 1");
      require(gap_min >= 1 && gap_min < gap_max,
              "gaps must satisfy 1 <= gap_min < gap_max");
      require(subjects <= timestamps, "subjects must be <= timestamps");
      break;
    case SynthKind::kRandom:
      require(entities >= 2, "entities must be >= 2");
      require(relations >= 1, "relations must be >= 1");
      require(facts >= 1, "facts must be >= 1");
      break;
  }
}

TkgDataset make_synthetic(const SynthParams& params) {
  params.validate();
  TkgDataset ds;
  ds.name = std::string(synth_name(params.kind));
  std::mt19937_64 rng(mix_seed(params.seed, static_cast<std::uint64_t>(params.kind)));
  switch (params.kind) {
    case SynthKind::kCyclic: make_cyclic(params, ds, rng); break;
    case SynthKind::kParity: make_parity(params, ds, rng); break;
    case SynthKind::kRandom: make_random(params, ds, rng); break;
  }
  return ds;
}

std::string describe_synthetic(const SynthParams& p) {
  std::ostringstream os;
  os << "kind=" << synth_name(p.kind) << "\nseed=" << p.seed
     << "\ntimestamps=" << p.timestamps << "\nvalid=" << p.valid
     << "\ntest=" << p.test << '\n';
  switch (p.kind) {
    case SynthKind::kCyclic:
      os << "entities=" << p.entities << "\nperiod=" << p.period
         << "\nrule: at time t, entity e links via relation 0 to entity "
            "(e + 1 + t mod period) mod entities; ids are permuted by the seed\n";
      break;
    case SynthKind::kParity:
      os << "subjects=" << p.subjects << "\nset_size=" << p.set_size
         << "\ngap_min=" << p.gap_min << "\ngap_max=" << p.gap_max
         << "\nrule: subject s fires events separated by uniform gaps in "
            "[gap_min, gap_max]; at each event it links via relation 0 to its "
            "even object set if the gap since its previous event is even, "
            "otherwise to its odd set; ids: subjects 0..subjects-1, then "
            "per subject set_size even objects followed by set_size odd objects\n";
      break;
    case SynthKind::kRandom:
      os << "entities=" << p.entities << "\nrelations=" << p.relations
         << "\nfacts=" << p.facts
         << "\nrule: uniformly random (s, r, o) triples at every timestamp\n";
      break;
  }
  os << "split: last `test` timestamps are test, the `valid` before them are "
        "validation, the rest training\n";
  return os.str();
}

void write_synthetic(const SynthParams& params, const std::filesystem::path& dir) {
  const auto ds = make_synthetic(params);
  write_dataset_tsv(ds, dir);
  write_file_atomic(dir / "description.txt", describe_synthetic(params));
}

TkgDataset load_synthetic(const SynthParams& params) {
  auto ds = augment_inverse(make_synthetic(params));
  build_snapshots(ds);
  return ds;
}

}  // namespace hismatch
