#include "fedfleet/lqr.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"

namespace fedfleet::lqr {

using json = nlohmann::ordered_json;

namespace {

mat2 mat_mul(const mat2& x, const mat2& y) {
  return mat2{x[0] * y[0] + x[1] * y[2], x[0] * y[1] + x[1] * y[3],
              x[2] * y[0] + x[3] * y[2], x[2] * y[1] + x[3] * y[3]};
}

mat2 transpose(const mat2& x) { return mat2{x[0], x[2], x[1], x[3]}; }

vec2 mat_vec(const mat2& m, const vec2& v) {
  return vec2{m[0] * v[0] + m[1] * v[1], m[2] * v[0] + m[3] * v[1]};
}

double dot(const vec2& a, const vec2& b) { return a[0] * b[0] + a[1] * b[1]; }

}  // namespace

dare_solution solve_dare(const lin_system& sys, const lqr_cost& cost,
                         double tol, std::size_t max_iter) {
  if (!(tol > 0)) throw contract_error("solve_dare: tol must be positive");
  if (!(cost.r > 0)) throw contract_error("solve_dare: r must be positive");

  const mat2 at = transpose(sys.a);
  mat2 p = cost.q;
  for (std::size_t it = 1; it <= max_iter; ++it) {
    // s = R + B'PB (scalar), g = A'PB (2-vector)
    const vec2 pb = mat_vec(p, sys.b);
    const double s = cost.r + dot(sys.b, pb);
    const vec2 apb = mat_vec(at, pb);
    const mat2 apa = mat_mul(at, mat_mul(p, sys.a));
    mat2 next{
        apa[0] - apb[0] * apb[0] / s + cost.q[0],
        apa[1] - apb[0] * apb[1] / s + cost.q[1],
        apa[2] - apb[1] * apb[0] / s + cost.q[2],
        apa[3] - apb[1] * apb[1] / s + cost.q[3],
    };
    double delta = 0.0;
    for (std::size_t i = 0; i < 4; ++i)
      delta = std::max(delta, std::abs(next[i] - p[i]));
    p = next;
    if (delta < tol) {
      const vec2 pb2 = mat_vec(p, sys.b);
      const double s2 = cost.r + dot(sys.b, pb2);
      // K = (R + B'PB)^{-1} B'PA
      const vec2 bpa = mat_vec(transpose(mat_mul(p, sys.a)), sys.b);
      dare_solution out;
      out.p = p;
      out.k = vec2{bpa[0] / s2, bpa[1] / s2};
      out.iterations = it;
      return out;
    }
  }
  throw numeric_error("solve_dare: no convergence within iteration budget");
}

double spectral_radius(const mat2& m) {
  const double tr = m[0] + m[3];
  const double det = m[0] * m[3] - m[1] * m[2];
  const double disc = tr * tr - 4.0 * det;
  if (disc >= 0.0) {
    const double root = std::sqrt(disc);
    return std::max(std::abs((tr + root) / 2.0), std::abs((tr - root) / 2.0));
  }
  // complex pair: modulus is sqrt(det)
  return std::sqrt(det);
}

mat2 closed_loop(const lin_system& sys, const vec2& k) {
  return mat2{sys.a[0] - sys.b[0] * k[0], sys.a[1] - sys.b[0] * k[1],
              sys.a[2] - sys.b[1] * k[0], sys.a[3] - sys.b[1] * k[1]};
}

std::vector<transition> generate_rollouts(const lin_system& sys, const vec2& k,
                                          std::size_t n_init,
                                          std::size_t horizon,
                                          double noise_var, std::uint64_t seed,
                                          int robot, double init_range) {
  if (n_init == 0 || horizon == 0)
    throw contract_error("generate_rollouts: n_init and horizon must be positive");
  if (noise_var < 0)
    throw contract_error("generate_rollouts: noise_var must be >= 0");

  const double noise_std = std::sqrt(noise_var);
  rng r(seed);
  std::vector<transition> out;
  out.reserve(n_init * horizon);
  for (std::size_t i = 0; i < n_init; ++i) {
    vec2 x{r.uniform(-init_range, init_range),
           r.uniform(-init_range, init_range)};
    for (std::size_t t = 0; t < horizon; ++t) {
      const double u = -dot(k, x) + noise_std * r.gaussian();
      vec2 next = mat_vec(sys.a, x);
      next[0] += sys.b[0] * u + noise_std * r.gaussian();
      next[1] += sys.b[1] * u + noise_std * r.gaussian();
      out.push_back({robot, static_cast<int>(t), x, u, next});
      x = next;
    }
  }
  return out;
}

std::vector<group_spec> lqr_group_spec() {
  return {{"A", 4}, {"B", 2}, {"K", 2}};
}

param_vector init_lqr_model(std::uint64_t seed, double scale) {
  return init_params(lqr_group_spec(), seed, scale);
}

model_view unpack_lqr_model(const param_vector& p) {
  const auto a = p.group_span("A");
  const auto b = p.group_span("B");
  const auto k = p.group_span("K");
  return model_view{{a[0], a[1], a[2], a[3]}, {b[0], b[1]}, {k[0], k[1]}};
}

fit_loss lqr_loss(const param_vector& model, std::span<const transition> data) {
  if (data.empty()) throw contract_error("lqr_loss: empty transition set");
  const model_view m = unpack_lqr_model(model);
  double se = 0.0, ce = 0.0;
  for (const transition& tr : data) {
    const vec2 pred{m.a[0] * tr.x[0] + m.a[1] * tr.x[1] + m.b[0] * tr.u,
                    m.a[2] * tr.x[0] + m.a[3] * tr.x[1] + m.b[1] * tr.u};
    const double ex0 = pred[0] - tr.x_next[0];
    const double ex1 = pred[1] - tr.x_next[1];
    const double eu = -(m.k[0] * tr.x[0] + m.k[1] * tr.x[1]) - tr.u;
    se += ex0 * ex0 + ex1 * ex1;
    ce += eu * eu;
  }
  const double n = static_cast<double>(data.size());
  fit_loss out;
  out.state_loss = se / (2.0 * n);  // per component
  out.control_loss = ce / n;
  out.total = out.state_loss + out.control_loss;
  if (!std::isfinite(out.total)) throw numeric_error("lqr_loss: non-finite loss");
  return out;
}

std::vector<double> lqr_grad(const param_vector& model,
                             std::span<const transition> batch) {
  if (batch.empty()) throw contract_error("lqr_grad: empty batch");
  const model_view m = unpack_lqr_model(model);
  double ga[4] = {0, 0, 0, 0};
  double gb[2] = {0, 0};
  double gk[2] = {0, 0};
  for (const transition& tr : batch) {
    const double ex0 = m.a[0] * tr.x[0] + m.a[1] * tr.x[1] + m.b[0] * tr.u -
                       tr.x_next[0];
    const double ex1 = m.a[2] * tr.x[0] + m.a[3] * tr.x[1] + m.b[1] * tr.u -
                       tr.x_next[1];
    const double eu = -(m.k[0] * tr.x[0] + m.k[1] * tr.x[1]) - tr.u;
    ga[0] += ex0 * tr.x[0];
    ga[1] += ex0 * tr.x[1];
    ga[2] += ex1 * tr.x[0];
    ga[3] += ex1 * tr.x[1];
    gb[0] += ex0 * tr.u;
    gb[1] += ex1 * tr.u;
    gk[0] += -2.0 * eu * tr.x[0];
    gk[1] += -2.0 * eu * tr.x[1];
  }
  const double n = static_cast<double>(batch.size());
  std::vector<double> g(8, 0.0);
  // d(state_loss)/dA and /dB carry 1/N (the 1/2 cancels the square's 2);
  // d(control_loss)/dK carries 2/N.
  for (std::size_t i = 0; i < 4; ++i) g[i] = ga[i] / n;
  g[4] = gb[0] / n;
  g[5] = gb[1] / n;
  g[6] = gk[0] / n;
  g[7] = gk[1] / n;
  if (!all_finite(g)) throw numeric_error("lqr_grad: non-finite gradient");
  return g;
}

param_distance distance_to_truth(const param_vector& model,
                                 const lin_system& sys, const vec2& true_k) {
  const model_view m = unpack_lqr_model(model);
  double dyn = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    const double d = m.a[i] - sys.a[i];
    dyn += d * d;
  }
  for (std::size_t i = 0; i < 2; ++i) {
    const double d = m.b[i] - sys.b[i];
    dyn += d * d;
  }
  double ctl = 0.0;
  for (std::size_t i = 0; i < 2; ++i) {
    const double d = m.k[i] - true_k[i];
    ctl += d * d;
  }
  return param_distance{std::sqrt(dyn), std::sqrt(ctl)};
}

void save_transitions(const std::string& path,
                      std::span<const transition> data) {
  std::ofstream out(path);
  if (!out) throw io_error("save_transitions: cannot open '" + path + "'");
  for (const transition& tr : data) {
    json j;
    j["robot"] = tr.robot;
    j["t"] = tr.t;
    j["x"] = tr.x;
    j["u"] = tr.u;
    j["x_next"] = tr.x_next;
    out << j.dump() << "\n";
  }
  if (!out) throw io_error("save_transitions: write failed for '" + path + "'");
}

std::vector<transition> load_transitions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("load_transitions: cannot open '" + path + "'");
  std::vector<transition> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const std::exception& e) {
      throw io_error("load_transitions: bad JSON at " + path + ":" +
                     std::to_string(lineno) + ": " + e.what());
    }
    transition tr;
    tr.robot = j.at("robot").get<int>();
    tr.t = j.at("t").get<int>();
    auto x = j.at("x").get<std::vector<double>>();
    auto xn = j.at("x_next").get<std::vector<double>>();
    if (x.size() != 2 || xn.size() != 2)
      throw io_error("load_transitions: state must have 2 components at line " +
                     std::to_string(lineno));
    tr.x = {x[0], x[1]};
    tr.x_next = {xn[0], xn[1]};
    tr.u = j.at("u").get<double>();
    out.push_back(tr);
  }
  return out;
}

}  // namespace fedfleet::lqr
