#pragma once

// Central finite-difference gradient checking shared by the tape, encoder and
// soft-bag tests.

#include <cmath>
#include <functional>
#include <vector>

#include "dcmil/params.hpp"
#include "dcmil/tape.hpp"

namespace fdcheck {

using Mat = Eigen::MatrixXd;

// build(tape, leaf ids) must return a scalar node. Returns the maximum
// relative error between analytic and central-difference gradients over all
// entries of all inputs.
inline double max_rel_err(std::vector<Mat> inputs,
                          const std::function<int(dcmil::ad::Tape&, const std::vector<int>&)>& build,
                          double step = 1e-5) {
  using dcmil::ad::Tape;
  Tape t0;
  std::vector<int> ids;
  for (const Mat& m : inputs) ids.push_back(t0.leaf(m));
  int root = build(t0, ids);
  t0.backward(root);
  std::vector<Mat> analytic;
  for (int id : ids) analytic.push_back(t0.grad(id));

  auto value_at = [&](const std::vector<Mat>& xs) {
    Tape t;
    std::vector<int> vids;
    for (const Mat& m : xs) vids.push_back(t.leaf(m));
    return t.val(build(t, vids))(0, 0);
  };

  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (Eigen::Index i = 0; i < inputs[k].rows(); ++i) {
      for (Eigen::Index j = 0; j < inputs[k].cols(); ++j) {
        std::vector<Mat> plus = inputs, minus = inputs;
        plus[k](i, j) += step;
        minus[k](i, j) -= step;
        double fd = (value_at(plus) - value_at(minus)) / (2.0 * step);
        double an = analytic[k](i, j);
        double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
        double err = std::abs(fd - an) / denom;
        if (std::abs(fd) < 1e-10 && std::abs(an) < 1e-10) err = 0.0;
        worst = std::max(worst, err);
      }
    }
  }
  return worst;
}

inline Mat random_mat(int r, int c, std::mt19937_64& rng, double scale = 1.0) {
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      m(i, j) = scale * (dcmil::uniform01(rng) * 2.0 - 1.0);
  return m;
}

}  // namespace fdcheck
