#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedfleet/common.hpp"

namespace fedfleet {

struct group_spec {
  std::string name;
  std::size_t size = 0;
};

struct param_group {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
};

// Flat parameter array partitioned into named contiguous groups.  Groups are
// the unit of learning-rate adaptation; all math treats `values` as one
// vector.  Copy freely: the federated engine passes these by value between
// clients and server so no shared state leaks across that boundary.
struct param_vector {
  std::vector<double> values;
  std::vector<param_group> groups;

  std::size_t size() const { return values.size(); }
  std::size_t group_count() const { return groups.size(); }

  std::span<double> group_span(std::size_t g);
  std::span<const double> group_span(std::size_t g) const;

  // Index of the group with this name; throws contract_error if absent.
  std::size_t group_index(std::string_view name) const;
  std::span<double> group_span(std::string_view name) {
    return group_span(group_index(name));
  }
  std::span<const double> group_span(std::string_view name) const {
    return group_span(group_index(name));
  }
};

// True when both vectors have identical group names/sizes/offsets.
bool same_layout(const param_vector& a, const param_vector& b);

// Throws contract_error unless groups tile [0, values.size()) contiguously.
void validate_layout(const param_vector& p);

// All-zero parameter vector with the given layout.
param_vector make_param_vector(const std::vector<group_spec>& spec);

// Uniform init in [-scale, scale], element order = storage order.
param_vector init_params(const std::vector<group_spec>& spec,
                         std::uint64_t seed, double scale);

// Per-group learning rates, aligned with param_vector::groups.
struct lr_vector {
  std::vector<double> rates;
};

lr_vector uniform_lr(const param_vector& layout, double rate);

// Per-parameter dispersion across a fleet (sum of squared deviations from the
// element-wise mean; no 1/n factor).
struct sigma_vector {
  std::vector<double> values;
};

struct adam_state {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

adam_state make_adam_state(std::size_t n, double beta1 = 0.9,
                           double beta2 = 0.999, double eps = 1e-8);

// One Adam update with bias correction; group g uses lr.rates[g] for every
// element it owns.  Throws contract_error on size mismatch, numeric_error if
// the gradient is non-finite.
void adam_step(param_vector& p, std::span<const double> grad, adam_state& s,
               const lr_vector& lr);

// Element-wise mean; requires >= 1 vectors, all same layout.
param_vector mean_params(const std::vector<param_vector>& vs);

// sigma_i = sum_k (v_k[i] - mean[i])^2 over the fleet; requires >= 2 vectors.
sigma_vector sum_sq_dev(const std::vector<param_vector>& vs);

// Group-adapted rates: rate_g = base_lr * mean(sigma over group g) / max over
// groups of that mean.  All-zero sigma degrades to uniform base_lr.
lr_vector lrs_from_sigma(const sigma_vector& sigma, double base_lr,
                         const param_vector& layout);

// Checkpoint I/O.  JSON with format_version, group layout, values, optional
// Adam moments, and a free-form meta object (e.g. architecture descriptor).
// Doubles survive a save/load round trip bit-exactly.
void save_checkpoint(const std::string& path, const param_vector& p,
                     const adam_state* adam, const std::string& meta_json);

struct checkpoint {
  param_vector params;
  std::optional<adam_state> adam;
  std::string meta_json;  // "{}" when absent
};

checkpoint load_checkpoint(const std::string& path);

}  // namespace fedfleet
