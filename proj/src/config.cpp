#include "hismatch/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "hismatch/dataset.hpp"

namespace hismatch {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value) {
  throw std::invalid_argument("config: invalid value '" + std::string(value) +
                              "' for key '" + std::string(key) + "'");
}

std::size_t to_size(std::string_view key, std::string_view value) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || p != value.data() + value.size()) bad_value(key, value);
  return static_cast<std::size_t>(v);
}

double to_double(std::string_view key, std::string_view value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(std::string(value), &used);
    if (used != value.size()) bad_value(key, value);
    return v;
  } catch (const std::logic_error&) {
    bad_value(key, value);
  }
}

bool to_bool(std::string_view key, std::string_view value) {
  if (value == "1" || value == "true" || value == "yes" || value == "on") return true;
  if (value == "0" || value == "false" || value == "no" || value == "off") return false;
  bad_value(key, value);
}

// Shortest text that parses back to the same double.
std::string fmt_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

std::string_view composition_name(Composition c) {
  return c == Composition::kSubtract ? "subtract" : "multiply";
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      {"d_e", "entity and relation embedding dimension"},
      {"d_t", "time encoding dimension"},
      {"m", "maximum query history length"},
      {"n", "candidate history length (snapshots)"},
      {"k", "snapshots gathered into the background graph"},
      {"omega1", "CompGCN layers in the candidate encoder"},
      {"omega2", "CompGCN layers in the background encoder"},
      {"kernels", "ConvTransE kernel count"},
      {"kernel_width", "ConvTransE kernel width (height is 2)"},
      {"dropout", "dropout rate"},
      {"candidate_dropout", "apply dropout to candidate CompGCN outputs"},
      {"composition", "CompGCN composition: subtract | multiply"},
      {"disable_query", "ablation: drop the query structure encoder"},
      {"disable_candidate", "ablation: drop the candidate structure encoder"},
      {"disable_background", "ablation: drop the background knowledge encoder"},
      {"disable_time", "ablation: drop the time semantic component"},
      {"lr", "Adam learning rate"},
      {"epochs", "maximum training epochs"},
      {"patience", "early-stopping patience in epochs (validation MRR)"},
      {"grad_clip", "global gradient-norm clip threshold (0 disables)"},
      {"seed", "random seed"},
      {"history_window", "backward scan cap for query histories (0 = all)"},
      {"workers", "evaluation worker threads"},
  };
  return keys;
}

void TrainConfig::set(std::string_view raw_key, std::string_view raw_value) {
  const std::string key = trim(raw_key);
  const std::string value = trim(raw_value);
  if (key == "d_e") d_e = to_size(key, value);
  else if (key == "d_t") d_t = to_size(key, value);
  else if (key == "m") m = to_size(key, value);
  else if (key == "n") n = to_size(key, value);
  else if (key == "k") k = to_size(key, value);
  else if (key == "omega1") omega1 = to_size(key, value);
  else if (key == "omega2") omega2 = to_size(key, value);
  else if (key == "kernels") kernels = to_size(key, value);
  else if (key == "kernel_width") kernel_width = to_size(key, value);
  else if (key == "dropout") dropout = to_double(key, value);
  else if (key == "candidate_dropout") candidate_dropout = to_bool(key, value);
  else if (key == "composition") {
    if (value == "subtract" || value == "sub") composition = Composition::kSubtract;
    else if (value == "multiply" || value == "mult") composition = Composition::kMultiply;
    else bad_value(key, value);
  }
  else if (key == "disable_query") disable_query = to_bool(key, value);
  else if (key == "disable_candidate") disable_candidate = to_bool(key, value);
  else if (key == "disable_background") disable_background = to_bool(key, value);
  else if (key == "disable_time") disable_time = to_bool(key, value);
  else if (key == "lr") lr = to_double(key, value);
  else if (key == "epochs") epochs = to_size(key, value);
  else if (key == "patience") patience = to_size(key, value);
  else if (key == "grad_clip") grad_clip = to_double(key, value);
  else if (key == "seed") seed = to_size(key, value);
  else if (key == "history_window") history_window = to_size(key, value);
  else if (key == "workers") workers = to_size(key, value);
  else throw std::invalid_argument("config: unknown key '" + key + "'");
}

std::string TrainConfig::get(std::string_view key) const {
  auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  if (key == "d_e") return std::to_string(d_e);
  if (key == "d_t") return std::to_string(d_t);
  if (key == "m") return std::to_string(m);
  if (key == "n") return std::to_string(n);
  if (key == "k") return std::to_string(k);
  if (key == "omega1") return std::to_string(omega1);
  if (key == "omega2") return std::to_string(omega2);
  if (key == "kernels") return std::to_string(kernels);
  if (key == "kernel_width") return std::to_string(kernel_width);
  if (key == "dropout") return fmt_double(dropout);
  if (key == "candidate_dropout") return b(candidate_dropout);
  if (key == "composition") return std::string(composition_name(composition));
  if (key == "disable_query") return b(disable_query);
  if (key == "disable_candidate") return b(disable_candidate);
  if (key == "disable_background") return b(disable_background);
  if (key == "disable_time") return b(disable_time);
  if (key == "lr") return fmt_double(lr);
  if (key == "epochs") return std::to_string(epochs);
  if (key == "patience") return std::to_string(patience);
  if (key == "grad_clip") return fmt_double(grad_clip);
  if (key == "seed") return std::to_string(seed);
  if (key == "history_window") return std::to_string(history_window);
  if (key == "workers") return std::to_string(workers);
  throw std::invalid_argument("config: unknown key '" + std::string(key) + "'");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) {
    throw std::invalid_argument("config: " + msg);
  };
  if (d_e == 0 || d_t == 0) fail("dimensions must be positive");
  if (m == 0 || n == 0 || k == 0) fail("m, n and k must be >= 1");
  if (omega1 == 0 || omega2 == 0) fail("omega1 and omega2 must be >= 1");
  if (kernels == 0 || kernel_width % 2 == 0) {
    fail("kernels must be positive and kernel_width odd");
  }
  if (dropout < 0.0 || dropout >= 1.0) fail("dropout must lie in [0, 1)");
  if (!(lr > 0.0)) fail("lr must be positive");
  if (grad_clip < 0.0) fail("grad_clip must be >= 0");
  if (workers == 0) fail("workers must be >= 1");
  if (disable_query && disable_candidate) {
    fail("disable_query and disable_candidate leave nothing to score with");
  }
}

std::string TrainConfig::to_string() const {
  std::string out;
  for (const auto& key : config_keys()) {
    out += key.name + "=" + get(key.name) + "\n";
  }
  return out;
}

void TrainConfig::apply(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config: expected key=value, got '" +
                                  trim(line) + "'");
    }
    set(std::string_view(line).substr(0, eq),
        std::string_view(line).substr(eq + 1));
  }
}

TrainConfig TrainConfig::from_string(std::string_view text) {
  TrainConfig cfg;
  cfg.apply(text);
  return cfg;
}

TrainConfig TrainConfig::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_string(ss.str());
}

std::uint64_t TrainConfig::shape_fingerprint(std::size_t num_entities,
                                             std::size_t num_relations) const {
  std::ostringstream os;
  os << "entities=" << num_entities << ";relations=" << num_relations
     << ";d_e=" << d_e << ";d_t=" << d_t << ";omega1=" << omega1
     << ";omega2=" << omega2 << ";kernels=" << kernels
     << ";kernel_width=" << kernel_width << ";q=" << disable_query
     << ";c=" << disable_candidate << ";b=" << disable_background
     << ";t=" << disable_time;
  return fnv1a(os.str());
}

std::vector<std::string> profile_names() {
  return {"ICEWS14", "ICEWS14*", "ICEWS18", "ICEWS05-15", "GDELT", "WIKI"};
}

TrainConfig profile_config(std::string_view dataset) {
  TrainConfig cfg;
  struct Row {
    std::string_view name;
    std::size_t len, k, omega1;
  };
  static constexpr Row kRows[] = {
      {"ICEWS14", 5, 4, 2},    {"ICEWS14*", 6, 1, 2}, {"ICEWS18", 5, 1, 2},
      {"ICEWS05-15", 5, 2, 2}, {"GDELT", 5, 2, 1},    {"WIKI", 1, 2, 2},
  };
  for (const auto& row : kRows) {
    if (row.name == dataset) {
      cfg.m = cfg.n = row.len;
      cfg.k = row.k;
      cfg.omega1 = row.omega1;
      return cfg;
    }
  }
  throw std::invalid_argument("unknown dataset profile '" +
                              std::string(dataset) + "'");
}

}  // namespace hismatch
