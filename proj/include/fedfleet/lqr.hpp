#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fedfleet/common.hpp"
#include "fedfleet/params.hpp"

namespace fedfleet::lqr {

using vec2 = std::array<double, 2>;
using mat2 = std::array<double, 4>;  // row-major

// Discrete double integrator: x = (position, velocity),
// x' = A x + B u with A = [[1,1],[0,1]], B = [0,1]^T.
struct lin_system {
  mat2 a{1.0, 1.0, 0.0, 1.0};
  vec2 b{0.0, 1.0};
};

struct lqr_cost {
  mat2 q{1.0, 0.0, 0.0, 1.0};
  double r = 1.0;
};

struct dare_solution {
  mat2 p;
  vec2 k;  // optimal feedback, u = -k . x
  std::size_t iterations = 0;
};

// Fixed-point Riccati iteration from P = Q; converges for this stabilizable
// system.  Throws numeric_error if max_iter is exhausted before the
// element-wise tolerance is met.
dare_solution solve_dare(const lin_system& sys, const lqr_cost& cost,
                         double tol = 1e-12, std::size_t max_iter = 1000000);

// Largest eigenvalue modulus of a 2x2 matrix.
double spectral_radius(const mat2& m);

mat2 closed_loop(const lin_system& sys, const vec2& k);

// One observed transition under the expert controller.
struct transition {
  int robot = 0;
  int t = 0;
  vec2 x{0, 0};
  double u = 0;
  vec2 x_next{0, 0};
};

// Expert rollouts: x0 ~ U[-init_range, init_range]^2, u = -k.x + noise,
// x' = A x + B u + noise, all noise iid N(0, noise_var).
std::vector<transition> generate_rollouts(const lin_system& sys, const vec2& k,
                                          std::size_t n_init,
                                          std::size_t horizon,
                                          double noise_var, std::uint64_t seed,
                                          int robot = 0,
                                          double init_range = 5.0);

// Learnable model parameters: groups "A" (4), "B" (2), "K" (2).
std::vector<group_spec> lqr_group_spec();
param_vector init_lqr_model(std::uint64_t seed, double scale);

struct model_view {
  mat2 a;
  vec2 b;
  vec2 k;
};
model_view unpack_lqr_model(const param_vector& p);

struct fit_loss {
  double state_loss = 0;    // mean squared next-state error per component
  double control_loss = 0;  // mean squared expert-action error
  double total = 0;
};

// Imitation objective over a transition set; requires a non-empty set.
fit_loss lqr_loss(const param_vector& model, std::span<const transition> data);

// Gradient of fit_loss.total in model storage order (A, B, K).
std::vector<double> lqr_grad(const param_vector& model,
                             std::span<const transition> batch);

struct param_distance {
  double dynamics = 0;  // Frobenius distance of (A,B) from the true system
  double control = 0;   // Euclidean distance of K from the optimal gains
};

param_distance distance_to_truth(const param_vector& model,
                                 const lin_system& sys, const vec2& true_k);

// JSONL dataset exchange; one transition per line, stable key order.
void save_transitions(const std::string& path, std::span<const transition> data);
std::vector<transition> load_transitions(const std::string& path);

}  // namespace fedfleet::lqr
