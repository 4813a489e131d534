#include "hismatch/model.hpp"

#include <cmath>
#include <random>
#include <string>

namespace hismatch {

namespace {

Parameter uniform(std::mt19937_64& rng, Shape shape, double bound) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = dist(rng);
  return Parameter(std::move(t));
}

Parameter xavier_uniform(std::mt19937_64& rng, Shape shape, double fan_in,
                         double fan_out) {
  return uniform(rng, std::move(shape), std::sqrt(6.0 / (fan_in + fan_out)));
}

Parameter xavier_normal(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
  std::normal_distribution<double> dist(
      0.0, std::sqrt(2.0 / static_cast<double>(rows + cols)));
  Tensor t({rows, cols});
  for (auto& v : t.values()) v = dist(rng);
  return Parameter(std::move(t));
}

Parameter zeros(Shape shape) { return Parameter(Tensor(std::move(shape))); }

Parameter square(std::mt19937_64& rng, std::size_t d) {
  const auto f = static_cast<double>(d);
  return xavier_uniform(rng, {d, d}, f, f);
}

GruParams make_gru(std::mt19937_64& rng, std::size_t input, std::size_t hidden) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  GruParams g;
  g.w_r = uniform(rng, {input, hidden}, bound);
  g.w_z = uniform(rng, {input, hidden}, bound);
  g.w_n = uniform(rng, {input, hidden}, bound);
  g.u_r = uniform(rng, {hidden, hidden}, bound);
  g.u_z = uniform(rng, {hidden, hidden}, bound);
  g.u_n = uniform(rng, {hidden, hidden}, bound);
  g.b_r = zeros({hidden});
  g.b_z = zeros({hidden});
  g.b_n = zeros({hidden});
  return g;
}

CompGcnParams make_compgcn(std::mt19937_64& rng, std::size_t layers,
                           std::size_t d) {
  CompGcnParams p;
  for (std::size_t l = 0; l < layers; ++l) {
    p.neighbor.push_back(square(rng, d));
    p.self.push_back(square(rng, d));
  }
  return p;
}

void add_gru(std::vector<NamedParameter>& out, const std::string& prefix,
             GruParams& g) {
  out.push_back({prefix + ".w_r", &g.w_r});
  out.push_back({prefix + ".w_z", &g.w_z});
  out.push_back({prefix + ".w_n", &g.w_n});
  out.push_back({prefix + ".u_r", &g.u_r});
  out.push_back({prefix + ".u_z", &g.u_z});
  out.push_back({prefix + ".u_n", &g.u_n});
  out.push_back({prefix + ".b_r", &g.b_r});
  out.push_back({prefix + ".b_z", &g.b_z});
  out.push_back({prefix + ".b_n", &g.b_n});
}

void add_compgcn(std::vector<NamedParameter>& out, const std::string& prefix,
                 CompGcnParams& p) {
  for (std::size_t l = 0; l < p.layers(); ++l) {
    const auto layer = prefix + ".l" + std::to_string(l);
    out.push_back({layer + ".w_neighbor", &p.neighbor[l]});
    out.push_back({layer + ".w_self", &p.self[l]});
  }
}

}  // namespace

ModelState ModelState::create(const TrainConfig& config,
                              std::size_t num_entities,
                              std::size_t num_relations, std::uint64_t seed) {
  config.validate();
  if (num_entities == 0 || num_relations == 0) {
    throw std::invalid_argument("ModelState: empty vocabulary");
  }
  std::mt19937_64 rng(seed);
  const std::size_t d = config.d_e;
  ModelState s;
  s.config = config;
  s.num_entities = num_entities;
  s.num_relations = num_relations;
  s.entity_init = xavier_normal(rng, num_entities, d);
  s.relations = xavier_normal(rng, num_relations, d);

  if (!config.disable_time) {
    // Geometric frequency ladder, 1 down to 1e-9.
    Tensor unit({config.d_t});
    for (std::size_t i = 0; i < config.d_t; ++i) {
      const double frac = config.d_t > 1
                              ? static_cast<double>(i) / static_cast<double>(config.d_t - 1)
                              : 0.0;
      unit[i] = std::pow(10.0, -9.0 * frac);
    }
    s.time_unit = Parameter(std::move(unit));
    s.time_bias = zeros({config.d_t});
  }
  if (!config.disable_background) {
    s.background = make_compgcn(rng, config.omega2, d);
  }
  if (!config.disable_candidate) {
    s.candidate = make_compgcn(rng, config.omega1, d);
  }
  const std::size_t gru_in = s.gru_input_dim();
  if (!config.disable_query) {
    s.query_gru = make_gru(rng, gru_in, d);
    s.query_h0 = uniform(rng, {d}, 1.0 / std::sqrt(static_cast<double>(d)));
  }
  if (!config.disable_candidate) {
    s.candidate_gru = make_gru(rng, gru_in, d);
  }

  const double kw = static_cast<double>(config.kernel_width);
  s.conv_kernels = xavier_uniform(rng, {config.kernels, 2, config.kernel_width},
                                  2.0 * kw, static_cast<double>(config.kernels) * kw);
  s.conv_bias = zeros({config.kernels});
  s.fc_weight = xavier_uniform(rng, {config.kernels * d, d},
                               static_cast<double>(config.kernels * d),
                               static_cast<double>(d));
  s.fc_bias = zeros({d});
  if (config.disable_candidate) {
    s.out_weight = xavier_uniform(rng, {d, num_entities}, static_cast<double>(d),
                                  static_cast<double>(num_entities));
    s.out_bias = zeros({num_entities});
  }
  return s;
}

std::size_t ModelState::gru_input_dim() const {
  return config.d_e + (config.disable_time ? 0 : config.d_t);
}

std::vector<NamedParameter> ModelState::parameters() {
  std::vector<NamedParameter> out;
  out.push_back({"entity_init", &entity_init});
  out.push_back({"relations", &relations});
  if (time_unit) out.push_back({"time.unit", &*time_unit});
  if (time_bias) out.push_back({"time.bias", &*time_bias});
  add_compgcn(out, "background", background);
  add_compgcn(out, "candidate", candidate);
  if (query_gru) add_gru(out, "query_gru", *query_gru);
  if (query_h0) out.push_back({"query_gru.h0", &*query_h0});
  if (candidate_gru) add_gru(out, "candidate_gru", *candidate_gru);
  out.push_back({"decoder.conv_kernels", &conv_kernels});
  out.push_back({"decoder.conv_bias", &conv_bias});
  out.push_back({"decoder.fc_weight", &fc_weight});
  out.push_back({"decoder.fc_bias", &fc_bias});
  if (out_weight) out.push_back({"decoder.out_weight", &*out_weight});
  if (out_bias) out.push_back({"decoder.out_bias", &*out_bias});
  return out;
}

std::size_t ModelState::parameter_count() const {
  std::size_t total = 0;
  for (const auto& np : const_cast<ModelState*>(this)->parameters()) {
    total += np.param->size();
  }
  return total;
}

}  // namespace hismatch
