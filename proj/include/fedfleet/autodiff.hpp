#pragma once

#include <functional>
#include <span>
#include <vector>

#include "fedfleet/common.hpp"

namespace fedfleet::ad {

// Node handle into a tape.  Cheap to copy; only valid for the tape that
// produced it.
struct var {
  int id = -1;
};

// Reverse-mode tape over double vectors.  The op set is the minimum needed
// for the sequence model (GRU cells, Gaussian heads, ELBO): elementwise
// arithmetic, matrix-vector product, a few scalar nonlinearities, sum and
// concat.  Values are computed eagerly at record time; backward() replays the
// tape once in reverse.
class tape {
 public:
  // Differentiable input.
  var leaf(std::span<const double> value);
  var leaf(double value) { return leaf(std::span<const double>(&value, 1)); }
  // Non-differentiable input (no gradient accumulated).
  var constant(std::span<const double> value);
  var constant(double value) { return constant(std::span<const double>(&value, 1)); }

  // Elementwise; operands must have equal size.
  var add(var a, var b);
  var sub(var a, var b);
  var mul(var a, var b);

  // w is a row-major rows x cols matrix node, x a cols-vector node.
  var matvec(var w, std::size_t rows, std::size_t cols, var x);

  var tanh(var a);
  var sigmoid(var a);
  var exp(var a);
  var log(var a);      // throws numeric_error on non-positive input
  var square(var a);
  var sum(var a);      // scalar

  var concat(std::span<const var> parts);

  std::span<const double> value(var v) const;
  // Value of a single-element node.
  double scalar(var v) const;

  std::size_t node_count() const { return nodes_.size(); }

  // Gradient of the scalar node `loss` w.r.t. every node, as a dense
  // per-node table indexed by var::id.  Constant nodes get zeros.
  std::vector<std::vector<double>> backward(var loss) const;

  void clear() { nodes_.clear(); }

 private:
  enum class op {
    leaf,
    constant,
    add,
    sub,
    mul,
    matvec,
    tanh_op,
    sigmoid_op,
    exp_op,
    log_op,
    square,
    sum,
    concat,
  };

  struct node {
    op kind;
    int a = -1;
    int b = -1;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<int> parts;
    std::vector<double> value;
  };

  const node& at(var v) const;
  var push(node n);

  std::vector<node> nodes_;
};

// Max over coordinates of |analytic_i - central_difference_i| / max(1, |analytic_i|)
// for f at x.  `f` must be deterministic.
double finite_diff_check(const std::function<double(std::span<const double>)>& f,
                         std::span<const double> x,
                         std::span<const double> analytic, double step);

}  // namespace fedfleet::ad
