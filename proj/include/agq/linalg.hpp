#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>

#include "agq/rng.hpp"

namespace agq {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Largest singular value by power iteration on A^T A. Stops after max_iters
// or when the estimate's relative change drops below tol. The start vector is
// a fixed pseudo-random direction so results are deterministic.
inline double spectral_norm(const Mat& a, int max_iters = 100,
                            double tol = 1e-10) {
  if (a.size() == 0) return 0.0;
  const Eigen::Index n = a.cols();
  Vec v(n);
  Rng rng(0x5eed5eedULL);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = gauss(rng);
  double vn = v.norm();
  if (vn == 0.0) return 0.0;
  v /= vn;
  double sigma = 0.0;
  for (int it = 0; it < max_iters; ++it) {
    Vec w = a * v;
    const double s = w.norm();
    if (s == 0.0) return 0.0;
    Vec u = a.transpose() * w;
    const double un = u.norm();
    if (un == 0.0) return s;
    v = u / un;
    if (sigma > 0.0 && std::fabs(s - sigma) <= tol * sigma) return s;
    sigma = s;
  }
  return sigma;
}

inline double inf_norm(const Vec& v) {
  return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff();
}

inline double inf_norm(const Mat& m) {
  return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff();
}

// Row-wise softmax with max subtraction.
inline Mat softmax_rows(const Mat& s) {
  Mat p(s.rows(), s.cols());
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const double m = s.row(i).maxCoeff();
    p.row(i) = (s.row(i).array() - m).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

inline Mat random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng,
                         double stddev = 1.0) {
  std::normal_distribution<double> gauss(0.0, stddev);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = gauss(rng);
  return m;
}

inline Vec random_vector(Eigen::Index n, Rng& rng, double stddev = 1.0) {
  std::normal_distribution<double> gauss(0.0, stddev);
  Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = gauss(rng);
  return v;
}

}  // namespace agq
