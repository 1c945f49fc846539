#pragma once

#include <string>
#include <vector>

#include "lvs/rng.hpp"
#include "lvs/tape.hpp"

namespace lvs {

struct GradCheckOptions {
  double step = 1e-5;
  double abs_tol = 1e-8;
  double rel_tol = 1e-3;
  // Leaves larger than this get a random coordinate subset instead of an
  // exhaustive sweep; two full rebuilds per coordinate add up fast.
  int64_t max_coords_per_leaf = 64;
  uint64_t subsample_seed = 1234;
};

struct GradCheckReport {
  bool pass = true;
  int64_t checked = 0;
  double worst_abs = 0.0;
  double worst_rel = 0.0;
  std::string worst_where;
};

// Central-difference check of reverse-mode gradients, always in double.
// `build` maps (tape, leaf vars) to a scalar loss var and must be a pure
// function of the leaf values.
template <typename BuildFn>
GradCheckReport check_gradients(const std::vector<Tensor<double>>& leaves, BuildFn build,
                                GradCheckOptions opt = {}) {
  GradCheckReport report;

  std::vector<Tensor<double>> analytic;
  {
    Tape<double> tape;
    std::vector<Var> vars;
    vars.reserve(leaves.size());
    for (const auto& t : leaves) vars.push_back(tape.leaf(t));
    Var loss = build(tape, vars);
    tape.backward(loss);
    for (Var v : vars) {
      const Tensor<double>& g = tape.grad(v);
      analytic.push_back(g.numel() ? g : Tensor<double>::zeros(tape.value(v).shape()));
    }
  }

  auto eval = [&](const std::vector<Tensor<double>>& vals) {
    Tape<double> tape;
    std::vector<Var> vars;
    vars.reserve(vals.size());
    for (const auto& t : vals) vars.push_back(tape.leaf(t));
    return tape.value(build(tape, vars))[0];
  };

  Rng rng(opt.subsample_seed);
  std::vector<Tensor<double>> work = leaves;
  for (size_t li = 0; li < leaves.size(); ++li) {
    int64_t n = leaves[li].numel();
    std::vector<int64_t> coords;
    if (n <= opt.max_coords_per_leaf) {
      coords.resize(n);
      for (int64_t i = 0; i < n; ++i) coords[i] = i;
    } else {
      for (int64_t i = 0; i < opt.max_coords_per_leaf; ++i) coords.push_back(rng.index(n));
    }
    for (int64_t c : coords) {
      double saved = work[li][c];
      work[li][c] = saved + opt.step;
      double fp = eval(work);
      work[li][c] = saved - opt.step;
      double fm = eval(work);
      work[li][c] = saved;

      double fd = (fp - fm) / (2.0 * opt.step);
      double a = analytic[li][c];
      double abs_err = std::abs(a - fd);
      double rel = abs_err / std::max(std::max(std::abs(a), std::abs(fd)), 1e-12);
      bool ok = abs_err <= opt.abs_tol || rel < opt.rel_tol;
      ++report.checked;
      if (abs_err > report.worst_abs) report.worst_abs = abs_err;
      if (!ok && rel > report.worst_rel) {
        report.worst_rel = rel;
        report.worst_where =
            "leaf " + std::to_string(li) + " coord " + std::to_string(c) + ": analytic " +
            std::to_string(a) + " vs fd " + std::to_string(fd);
      }
      if (!ok) report.pass = false;
      if (ok && rel > report.worst_rel && abs_err > opt.abs_tol) report.worst_rel = rel;
    }
  }
  return report;
}

}  // namespace lvs
