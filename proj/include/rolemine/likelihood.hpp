// Apache License, Version 2.0, refer to LICENSE.txt

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "rolemine/binary_matrix.hpp"
#include "rolemine/real_matrix.hpp"

namespace rolemine {

// Numerical floor applied to cell probabilities before taking logs, so that
// optimization never sees -inf. Oracle tests that need exact zeros work with
// unclamped arithmetic on their own side.
inline constexpr double kProbFloor = 1e-12;

inline double clamp_prob(double p) {
  return std::clamp(p, kProbFloor, 1.0 - kProbFloor);
}

inline void check_unit_interval(double v, const char* name) {
  if (!(v >= 0.0 && v <= 1.0)) {
    throw ValidationError(std::string(name) + " must lie in [0,1]");
  }
}

// Bernoulli "absence" parameters for a flat model: beta(k,d) = p(u_kd = 0).
// Optionally carries the two-level analogue v_plus(k,l) = p(v_kl = 1).
struct ProbParams {
  Matrix beta;  // K x D, entries in [0,1]
  Matrix v_plus;  // optional, K x L; empty when unused

  void validate() const {
    for (double b : beta.data()) check_unit_interval(b, "beta");
    for (double v : v_plus.data()) check_unit_interval(v, "v_plus");
  }
};

// p(x_id = 0 | beta, z_i) = prod_k beta_kd^{z_ik}, unclamped.
inline double prob_absent_flat(const BinaryMatrix& z, const Matrix& beta,
                               std::size_t i, std::size_t d) {
  double p0 = 1.0;
  for (std::size_t k = 0; k < z.cols(); ++k) {
    if (z.get(i, k)) p0 *= beta(k, d);
  }
  return p0;
}

// Total log-likelihood of X under the flat model with roles marginalized out:
// sum_{i,d} log p(x_id | beta, z_i). Nonzero cell probabilities are floored
// at kProbFloor before the log; a cell probability of exactly zero (possible
// only with beta entries of exactly 0 or 1) yields -infinity.
inline double log_lik_flat(const BinaryMatrix& x, const BinaryMatrix& z, const ProbParams& params) {
  const Matrix& beta = params.beta;
  if (z.rows() != x.rows() || z.cols() != beta.rows() || beta.cols() != x.cols()) {
    throw DimensionError("log_lik_flat: X " + shape_string(x.rows(), x.cols()) +
                         ", Z " + shape_string(z.rows(), z.cols()) + ", beta " +
                         shape_string(beta.rows(), beta.cols()) + " do not conform");
  }
  for (double b : beta.data()) check_unit_interval(b, "beta");

  double total = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t d = 0; d < x.cols(); ++d) {
      double p0 = 1.0;
      for (std::size_t k = 0; k < z.cols(); ++k) {
        if (z.get(i, k)) p0 *= beta(k, d);
      }
      const double cell = x.get(i, d) ? 1.0 - p0 : p0;
      if (cell == 0.0) return -std::numeric_limits<double>::infinity();
      total += std::log(std::max(cell, kProbFloor));
    }
  }
  return total;
}

// Probability that a user is NOT assigned a permission in a two-level
// hierarchy with independent assignment probabilities:
//   prod_k (1 - z+_k + z+_k * prod_l (1 - y+_l + y+_l (1 - v+_kl))).
inline double prob_absent_two_level(const std::vector<double>& z_plus,
                                    const std::vector<double>& y_plus,
                                    const Matrix& v_plus) {
  if (v_plus.rows() != z_plus.size() || v_plus.cols() != y_plus.size()) {
    throw DimensionError("prob_absent_two_level: v_plus is " +
                         shape_string(v_plus.rows(), v_plus.cols()) + ", expected " +
                         shape_string(z_plus.size(), y_plus.size()));
  }
  for (double v : z_plus) check_unit_interval(v, "z_plus");
  for (double v : y_plus) check_unit_interval(v, "y_plus");
  for (double v : v_plus.data()) check_unit_interval(v, "v_plus");

  double outer = 1.0;
  for (std::size_t k = 0; k < z_plus.size(); ++k) {
    double inner = 1.0;
    for (std::size_t l = 0; l < y_plus.size(); ++l) {
      inner *= 1.0 - y_plus[l] + y_plus[l] * (1.0 - v_plus(k, l));
    }
    outer *= 1.0 - z_plus[k] + z_plus[k] * inner;
  }
  return outer;
}

}  // namespace rolemine
