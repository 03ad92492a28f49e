#include "fedfleet/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace fedfleet::ad {

const tape::node& tape::at(var v) const {
  if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size())
    throw contract_error("tape: var does not belong to this tape");
  return nodes_[static_cast<std::size_t>(v.id)];
}

var tape::push(node n) {
  nodes_.push_back(std::move(n));
  return var{static_cast<int>(nodes_.size()) - 1};
}

var tape::leaf(std::span<const double> value) {
  node n;
  n.kind = op::leaf;
  n.value.assign(value.begin(), value.end());
  return push(std::move(n));
}

var tape::constant(std::span<const double> value) {
  node n;
  n.kind = op::constant;
  n.value.assign(value.begin(), value.end());
  return push(std::move(n));
}

var tape::add(var a, var b) {
  const node &na = at(a), &nb = at(b);
  if (na.value.size() != nb.value.size())
    throw contract_error("tape::add: size mismatch");
  node n;
  n.kind = op::add;
  n.a = a.id;
  n.b = b.id;
  n.value.resize(na.value.size());
  for (std::size_t i = 0; i < n.value.size(); ++i)
    n.value[i] = na.value[i] + nb.value[i];
  return push(std::move(n));
}

var tape::sub(var a, var b) {
  const node &na = at(a), &nb = at(b);
  if (na.value.size() != nb.value.size())
    throw contract_error("tape::sub: size mismatch");
  node n;
  n.kind = op::sub;
  n.a = a.id;
  n.b = b.id;
  n.value.resize(na.value.size());
  for (std::size_t i = 0; i < n.value.size(); ++i)
    n.value[i] = na.value[i] - nb.value[i];
  return push(std::move(n));
}

var tape::mul(var a, var b) {
  const node &na = at(a), &nb = at(b);
  if (na.value.size() != nb.value.size())
    throw contract_error("tape::mul: size mismatch");
  node n;
  n.kind = op::mul;
  n.a = a.id;
  n.b = b.id;
  n.value.resize(na.value.size());
  for (std::size_t i = 0; i < n.value.size(); ++i)
    n.value[i] = na.value[i] * nb.value[i];
  return push(std::move(n));
}

var tape::matvec(var w, std::size_t rows, std::size_t cols, var x) {
  const node &nw = at(w), &nx = at(x);
  if (nw.value.size() != rows * cols)
    throw contract_error("tape::matvec: matrix node size != rows*cols");
  if (nx.value.size() != cols)
    throw contract_error("tape::matvec: vector node size != cols");
  node n;
  n.kind = op::matvec;
  n.a = w.id;
  n.b = x.id;
  n.rows = rows;
  n.cols = cols;
  n.value.assign(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c)
      acc += nw.value[r * cols + c] * nx.value[c];
    n.value[r] = acc;
  }
  return push(std::move(n));
}

var tape::tanh(var a) {
  const node& na = at(a);
  node n;
  n.kind = op::tanh_op;
  n.a = a.id;
  n.value.resize(na.value.size());
  for (std::size_t i = 0; i < n.value.size(); ++i)
    n.value[i] = std::tanh(na.value[i]);
  return push(std::move(n));
}

var tape::sigmoid(var a) {
  const node& na = at(a);
  node n;
  n.kind = op::sigmoid_op;
  n.a = a.id;
  n.value.resize(na.value.size());
  for (std::size_t i = 0; i < n.value.size(); ++i)
    n.value[i] = 1.0 / (1.0 + std::exp(-na.value[i]));
  return push(std::move(n));
}

var tape::exp(var a) {
  const node& na = at(a);
  node n;
  n.kind = op::exp_op;
  n.a = a.id;
  n.value.resize(na.value.size());
  for (std::size_t i = 0; i < n.value.size(); ++i)
    n.value[i] = std::exp(na.value[i]);
  return push(std::move(n));
}

var tape::log(var a) {
  const node& na = at(a);
  node n;
  n.kind = op::log_op;
  n.a = a.id;
  n.value.resize(na.value.size());
  for (std::size_t i = 0; i < n.value.size(); ++i) {
    if (!(na.value[i] > 0.0))
      throw numeric_error("tape::log: non-positive input");
    n.value[i] = std::log(na.value[i]);
  }
  return push(std::move(n));
}

var tape::square(var a) {
  const node& na = at(a);
  node n;
  n.kind = op::square;
  n.a = a.id;
  n.value.resize(na.value.size());
  for (std::size_t i = 0; i < n.value.size(); ++i)
    n.value[i] = na.value[i] * na.value[i];
  return push(std::move(n));
}

var tape::sum(var a) {
  const node& na = at(a);
  node n;
  n.kind = op::sum;
  n.a = a.id;
  double acc = 0.0;
  for (double x : na.value) acc += x;
  n.value.assign(1, acc);
  return push(std::move(n));
}

var tape::concat(std::span<const var> parts) {
  if (parts.empty()) throw contract_error("tape::concat: no parts");
  node n;
  n.kind = op::concat;
  for (var p : parts) {
    const node& np = at(p);
    n.parts.push_back(p.id);
    n.value.insert(n.value.end(), np.value.begin(), np.value.end());
  }
  return push(std::move(n));
}

std::span<const double> tape::value(var v) const { return at(v).value; }

double tape::scalar(var v) const {
  const node& n = at(v);
  if (n.value.size() != 1)
    throw contract_error("tape::scalar: node is not a scalar");
  return n.value[0];
}

std::vector<std::vector<double>> tape::backward(var loss) const {
  const node& nl = at(loss);
  if (nl.value.size() != 1)
    throw contract_error("tape::backward: loss must be scalar");

  std::vector<std::vector<double>> grad(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    grad[i].assign(nodes_[i].value.size(), 0.0);
  grad[static_cast<std::size_t>(loss.id)][0] = 1.0;

  for (int id = loss.id; id >= 0; --id) {
    const node& n = nodes_[static_cast<std::size_t>(id)];
    const std::vector<double>& g = grad[static_cast<std::size_t>(id)];
    bool zero = true;
    for (double x : g) {
      if (x != 0.0) { zero = false; break; }
    }
    if (zero) continue;

    switch (n.kind) {
      case op::leaf:
      case op::constant:
        break;
      case op::add: {
        auto &ga = grad[n.a], &gb = grad[n.b];
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga[i] += g[i];
          gb[i] += g[i];
        }
        break;
      }
      case op::sub: {
        auto &ga = grad[n.a], &gb = grad[n.b];
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga[i] += g[i];
          gb[i] -= g[i];
        }
        break;
      }
      case op::mul: {
        const auto &va = nodes_[n.a].value, &vb = nodes_[n.b].value;
        auto &ga = grad[n.a], &gb = grad[n.b];
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga[i] += g[i] * vb[i];
          gb[i] += g[i] * va[i];
        }
        break;
      }
      case op::matvec: {
        const auto &vw = nodes_[n.a].value, &vx = nodes_[n.b].value;
        auto &gw = grad[n.a], &gx = grad[n.b];
        for (std::size_t r = 0; r < n.rows; ++r) {
          const double gr = g[r];
          if (gr == 0.0) continue;
          for (std::size_t c = 0; c < n.cols; ++c) {
            gw[r * n.cols + c] += gr * vx[c];
            gx[c] += gr * vw[r * n.cols + c];
          }
        }
        break;
      }
      case op::tanh_op: {
        auto& ga = grad[n.a];
        for (std::size_t i = 0; i < g.size(); ++i)
          ga[i] += g[i] * (1.0 - n.value[i] * n.value[i]);
        break;
      }
      case op::sigmoid_op: {
        auto& ga = grad[n.a];
        for (std::size_t i = 0; i < g.size(); ++i)
          ga[i] += g[i] * n.value[i] * (1.0 - n.value[i]);
        break;
      }
      case op::exp_op: {
        auto& ga = grad[n.a];
        for (std::size_t i = 0; i < g.size(); ++i)
          ga[i] += g[i] * n.value[i];
        break;
      }
      case op::log_op: {
        const auto& va = nodes_[n.a].value;
        auto& ga = grad[n.a];
        for (std::size_t i = 0; i < g.size(); ++i)
          ga[i] += g[i] / va[i];
        break;
      }
      case op::square: {
        const auto& va = nodes_[n.a].value;
        auto& ga = grad[n.a];
        for (std::size_t i = 0; i < g.size(); ++i)
          ga[i] += g[i] * 2.0 * va[i];
        break;
      }
      case op::sum: {
        auto& ga = grad[n.a];
        for (double& x : ga) x += g[0];
        break;
      }
      case op::concat: {
        std::size_t at_i = 0;
        for (int pid : n.parts) {
          auto& gp = grad[pid];
          for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[at_i + i];
          at_i += gp.size();
        }
        break;
      }
    }
  }
  // constants are non-differentiable by contract; the sweep above still
  // pushed adjoints into them, so wipe those rows before handing back
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if (nodes_[i].kind == op::constant)
      std::fill(grad[i].begin(), grad[i].end(), 0.0);
  return grad;
}

double finite_diff_check(const std::function<double(std::span<const double>)>& f,
                         std::span<const double> x,
                         std::span<const double> analytic, double step) {
  if (x.size() != analytic.size())
    throw contract_error("finite_diff_check: size mismatch");
  if (!(step > 0)) throw contract_error("finite_diff_check: step must be positive");

  std::vector<double> probe(x.begin(), x.end());
  double worst = 0.0;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double keep = probe[i];
    probe[i] = keep + step;
    const double fp = f(probe);
    probe[i] = keep - step;
    const double fm = f(probe);
    probe[i] = keep;
    const double fd = (fp - fm) / (2.0 * step);
    const double err = std::abs(analytic[i] - fd) /
                       std::max(1.0, std::abs(analytic[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace fedfleet::ad
