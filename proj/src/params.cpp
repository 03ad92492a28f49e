#include "fedfleet/params.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"

namespace fedfleet {

using json = nlohmann::ordered_json;

std::span<double> param_vector::group_span(std::size_t g) {
  if (g >= groups.size()) throw contract_error("param_vector: group index out of range");
  return std::span<double>(values).subspan(groups[g].offset, groups[g].size);
}

std::span<const double> param_vector::group_span(std::size_t g) const {
  if (g >= groups.size()) throw contract_error("param_vector: group index out of range");
  return std::span<const double>(values).subspan(groups[g].offset, groups[g].size);
}

std::size_t param_vector::group_index(std::string_view name) const {
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (groups[g].name == name) return g;
  }
  throw contract_error("param_vector: no group named '" + std::string(name) + "'");
}

bool same_layout(const param_vector& a, const param_vector& b) {
  if (a.groups.size() != b.groups.size()) return false;
  if (a.values.size() != b.values.size()) return false;
  for (std::size_t g = 0; g < a.groups.size(); ++g) {
    if (a.groups[g].name != b.groups[g].name) return false;
    if (a.groups[g].offset != b.groups[g].offset) return false;
    if (a.groups[g].size != b.groups[g].size) return false;
  }
  return true;
}

void validate_layout(const param_vector& p) {
  std::size_t at = 0;
  for (const auto& g : p.groups) {
    if (g.size == 0) throw contract_error("param layout: empty group '" + g.name + "'");
    if (g.offset != at) throw contract_error("param layout: group '" + g.name + "' not contiguous");
    at += g.size;
  }
  if (at != p.values.size()) throw contract_error("param layout: groups do not tile the value array");
}

param_vector make_param_vector(const std::vector<group_spec>& spec) {
  param_vector p;
  std::size_t at = 0;
  for (const auto& s : spec) {
    p.groups.push_back({s.name, at, s.size});
    at += s.size;
  }
  p.values.assign(at, 0.0);
  validate_layout(p);
  return p;
}

param_vector init_params(const std::vector<group_spec>& spec,
                         std::uint64_t seed, double scale) {
  if (spec.empty()) throw config_error("init_params: empty group spec");
  if (scale < 0) throw contract_error("init_params: scale must be >= 0");
  param_vector p = make_param_vector(spec);
  rng r(seed);
  for (double& x : p.values) x = r.uniform(-scale, scale);
  return p;
}

lr_vector uniform_lr(const param_vector& layout, double rate) {
  return lr_vector{std::vector<double>(layout.group_count(), rate)};
}

adam_state make_adam_state(std::size_t n, double beta1, double beta2,
                           double eps) {
  adam_state s;
  s.m.assign(n, 0.0);
  s.v.assign(n, 0.0);
  s.beta1 = beta1;
  s.beta2 = beta2;
  s.eps = eps;
  return s;
}

void adam_step(param_vector& p, std::span<const double> grad, adam_state& s,
               const lr_vector& lr) {
  const std::size_t n = p.size();
  if (grad.size() != n || s.m.size() != n || s.v.size() != n)
    throw contract_error("adam_step: size mismatch");
  if (lr.rates.size() != p.group_count())
    throw contract_error("adam_step: learning-rate count != group count");
  for (double g : grad) {
    if (!std::isfinite(g)) throw numeric_error("adam_step: non-finite gradient");
  }

  s.step += 1;
  const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  for (std::size_t gi = 0; gi < p.group_count(); ++gi) {
    const double rate = lr.rates[gi];
    const auto& grp = p.groups[gi];
    for (std::size_t i = grp.offset; i < grp.offset + grp.size; ++i) {
      s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * grad[i];
      s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * grad[i] * grad[i];
      const double mhat = s.m[i] / bc1;
      const double vhat = s.v[i] / bc2;
      p.values[i] -= rate * mhat / (std::sqrt(vhat) + s.eps);
    }
  }
}

param_vector mean_params(const std::vector<param_vector>& vs) {
  if (vs.empty()) throw contract_error("mean_params: empty fleet");
  for (const auto& v : vs) {
    if (!same_layout(vs[0], v)) throw contract_error("mean_params: layout mismatch");
  }
  param_vector out = vs[0];
  const double inv = 1.0 / static_cast<double>(vs.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double acc = 0.0;
    for (const auto& v : vs) acc += v.values[i];
    out.values[i] = acc * inv;
  }
  return out;
}

sigma_vector sum_sq_dev(const std::vector<param_vector>& vs) {
  if (vs.size() < 2) throw contract_error("sum_sq_dev: need at least two vectors");
  param_vector mean = mean_params(vs);
  sigma_vector s;
  s.values.assign(mean.size(), 0.0);
  for (std::size_t i = 0; i < mean.size(); ++i) {
    double acc = 0.0;
    for (const auto& v : vs) {
      const double d = v.values[i] - mean.values[i];
      acc += d * d;
    }
    s.values[i] = acc;
  }
  return s;
}

lr_vector lrs_from_sigma(const sigma_vector& sigma, double base_lr,
                         const param_vector& layout) {
  if (sigma.values.size() != layout.size())
    throw contract_error("lrs_from_sigma: sigma size != param size");
  if (!(base_lr > 0)) throw contract_error("lrs_from_sigma: base_lr must be positive");

  std::vector<double> group_sigma(layout.group_count(), 0.0);
  double max_sigma = 0.0;
  for (std::size_t g = 0; g < layout.group_count(); ++g) {
    const auto& grp = layout.groups[g];
    double acc = 0.0;
    for (std::size_t i = grp.offset; i < grp.offset + grp.size; ++i)
      acc += sigma.values[i];
    group_sigma[g] = acc / static_cast<double>(grp.size);
    max_sigma = std::max(max_sigma, group_sigma[g]);
  }

  lr_vector lr;
  lr.rates.assign(layout.group_count(), base_lr);
  if (max_sigma > 0.0) {
    for (std::size_t g = 0; g < layout.group_count(); ++g)
      lr.rates[g] = base_lr * group_sigma[g] / max_sigma;
  }
  return lr;
}

namespace {

json adam_to_json(const adam_state& s) {
  json j;
  j["m"] = s.m;
  j["v"] = s.v;
  j["step"] = s.step;
  j["beta1"] = s.beta1;
  j["beta2"] = s.beta2;
  j["eps"] = s.eps;
  return j;
}

adam_state adam_from_json(const json& j) {
  adam_state s;
  s.m = j.at("m").get<std::vector<double>>();
  s.v = j.at("v").get<std::vector<double>>();
  s.step = j.at("step").get<std::uint64_t>();
  s.beta1 = j.at("beta1").get<double>();
  s.beta2 = j.at("beta2").get<double>();
  s.eps = j.at("eps").get<double>();
  if (s.m.size() != s.v.size()) throw io_error("checkpoint: adam moment size mismatch");
  return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const param_vector& p,
                     const adam_state* adam, const std::string& meta_json) {
  validate_layout(p);
  json j;
  j["format_version"] = 1;
  json groups = json::array();
  for (const auto& g : p.groups) {
    groups.push_back({{"name", g.name}, {"size", g.size}});
  }
  j["groups"] = groups;
  j["values"] = p.values;
  if (adam != nullptr) {
    if (adam->m.size() != p.size())
      throw contract_error("save_checkpoint: adam state size != param size");
    j["adam"] = adam_to_json(*adam);
  }
  j["meta"] = meta_json.empty() ? json::object() : json::parse(meta_json);

  std::ofstream out(path);
  if (!out) throw io_error("save_checkpoint: cannot open '" + path + "'");
  // nlohmann serializes doubles with shortest-round-trip precision, which is
  // what makes the bit-exact reload guarantee hold.
  out << j.dump(2) << "\n";
  if (!out) throw io_error("save_checkpoint: write failed for '" + path + "'");
}

checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("load_checkpoint: cannot open '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw io_error("load_checkpoint: parse failure in '" + path + "': " + e.what());
  }
  if (j.value("format_version", 0) != 1)
    throw io_error("load_checkpoint: unsupported format_version in '" + path + "'");

  checkpoint c;
  std::vector<group_spec> spec;
  for (const auto& g : j.at("groups")) {
    spec.push_back({g.at("name").get<std::string>(), g.at("size").get<std::size_t>()});
  }
  c.params = make_param_vector(spec);
  auto vals = j.at("values").get<std::vector<double>>();
  if (vals.size() != c.params.size())
    throw io_error("load_checkpoint: value count does not match group layout");
  c.params.values = std::move(vals);
  if (j.contains("adam")) {
    c.adam = adam_from_json(j.at("adam"));
    if (c.adam->m.size() != c.params.size())
      throw io_error("load_checkpoint: adam state size != param size");
  }
  c.meta_json = j.contains("meta") ? j.at("meta").dump() : std::string("{}");
  return c;
}

}  // namespace fedfleet
