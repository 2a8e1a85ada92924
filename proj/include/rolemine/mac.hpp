// Apache License, Version 2.0, refer to LICENSE.txt
//
// Multi-assignment clustering (MAC): flat RBAC with an explicit mixture
// noise process. Users are assigned to role *sets*; each observed bit is
// either generated by the user's roles or, with probability eps, by a
// random coin with bias r. Fitting is deterministic-annealing EM where
// every M-step condition is a monotone scalar root problem.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "rolemine/binary_matrix.hpp"
#include "rolemine/likelihood.hpp"
#include "rolemine/rbac_config.hpp"
#include "rolemine/real_matrix.hpp"
#include "rolemine/rng.hpp"
#include "rolemine/role_sets.hpp"

namespace rolemine::mac {

// Bounds that fitted parameters are projected into.
inline constexpr double kParamFloor = 1e-6;

struct MacParams {
  Matrix beta;  // K x D, beta(k,d) = p(u_kd = 0)
  double eps = 0.1;  // noise fraction
  double r = 0.5;    // noise-bit bias

  void validate() const {
    for (double b : beta.data()) check_unit_interval(b, "beta");
    check_unit_interval(eps, "eps");
    check_unit_interval(r, "r");
  }
};

// Per->user distribution over role sets at a given temperature.
struct Responsibilities {
  Matrix gamma;  // N x |catalog|, rows sum to 1
  double temperature = 1.0;
};

struct MacFitConfig {
  std::size_t num_roles = 2;
  std::size_t max_set_size = 2;
  double initial_temp_factor = 1.0;   // T0 = factor * initial mean risk
  double cooling_rate = 0.95;         // geometric schedule
  double convergence_threshold = 1e-6;  // stop when max gamma > 1 - threshold
  std::size_t max_iterations = 500;
  double newton_tol = 1e-8;
  std::size_t max_newton_iter = 60;
  std::size_t max_mstep_sweeps = 100;
  double init_jitter = 0.05;
  std::uint64_t seed = 0;
  // Independent runs; the one with the best internal score is returned.
  // Restart 0 uses `seed` unchanged, restart i > 0 a seed derived from it.
  std::size_t restarts = 1;
  // When set, the corresponding noise parameter is held fixed at this value.
  std::optional<double> fixed_eps;
  std::optional<double> fixed_r;

  void validate() const {
    if (num_roles == 0) throw ValidationError("MacFitConfig: num_roles must be >= 1");
    if (restarts == 0) throw ValidationError("MacFitConfig: restarts must be >= 1");
    if (!(cooling_rate > 0.0 && cooling_rate < 1.0)) {
      throw ValidationError("MacFitConfig: cooling_rate must lie in (0,1)");
    }
    if (!(initial_temp_factor > 0.0) || !(convergence_threshold > 0.0) ||
        !(newton_tol > 0.0)) {
      throw ValidationError("MacFitConfig: thresholds must be positive");
    }
    if (fixed_eps) check_unit_interval(*fixed_eps, "fixed_eps");
    if (fixed_r) check_unit_interval(*fixed_r, "fixed_r");
  }
};

// prod_{k in set} beta(k, d); empty product = 1.
inline double beta_set_product(const Matrix& beta, const std::vector<std::size_t>& members,
                               std::size_t d) {
  double p = 1.0;
  for (std::size_t k : members) p *= beta(k, d);
  return p;
}

// q = p(x = 1 | set) = eps*r + (1-eps)*(1 - beta_set).
inline double q_value(double beta_set, double eps, double r) {
  check_unit_interval(beta_set, "beta_set");
  check_unit_interval(eps, "eps");
  check_unit_interval(r, "r");
  return eps * r + (1.0 - eps) * (1.0 - beta_set);
}

// Mixture probability of an observed bit. Both branches are written as the
// direct two-component sum so they match the explicit noise-indicator
// marginalization term by term.
inline double mixture_prob(bool x, double beta_set, double eps, double r) {
  return x ? eps * r + (1.0 - eps) * (1.0 - beta_set)
           : eps * (1.0 - r) + (1.0 - eps) * beta_set;
}

// Negative log-likelihood of row i under one role set (cell probabilities
// clamped before the log).
inline double per_item_risk(const BinaryMatrix& x, std::size_t i,
                            const std::vector<std::size_t>& members,
                            const MacParams& params) {
  double risk = 0.0;
  for (std::size_t d = 0; d < x.cols(); ++d) {
    const double bs = beta_set_product(params.beta, members, d);
    risk -= std::log(clamp_prob(mixture_prob(x.get(i, d), bs, params.eps, params.r)));
  }
  return risk;
}

// N x |catalog| table of per-item risks.
inline Matrix risk_table(const BinaryMatrix& x, const MacParams& params,
                         const RoleSetCatalog& catalog) {
  const std::size_t n = x.rows();
  const std::size_t d_count = x.cols();
  Matrix risks(n, catalog.size());
  std::vector<double> log_q1(d_count), log_diff(d_count);
  for (std::size_t s = 0; s < catalog.size(); ++s) {
    const auto& members = catalog.members(s);
    double base = 0.0;  // sum over d of log p(x_d = 0 | set)
    for (std::size_t d = 0; d < d_count; ++d) {
      const double bs = beta_set_product(params.beta, members, d);
      const double lq1 = std::log(clamp_prob(mixture_prob(true, bs, params.eps, params.r)));
      const double lq0 = std::log(clamp_prob(mixture_prob(false, bs, params.eps, params.r)));
      log_q1[d] = lq1;
      log_diff[d] = lq1 - lq0;
      base += lq0;
    }
    for (std::size_t i = 0; i < n; ++i) {
      double ll = base;
      for (std::size_t d : x.row_ones(i)) ll += log_diff[d];
      risks(i, s) = -ll;
    }
  }
  return risks;
}

// Normalizes rows of exp(-risk/T) in log space.
inline Responsibilities responsibilities_from_risks(const Matrix& risks, double temperature) {
  if (!(temperature > 0.0)) throw ValidationError("e_step: temperature must be positive");
  Responsibilities resp;
  resp.temperature = temperature;
  resp.gamma = Matrix(risks.rows(), risks.cols());
  for (std::size_t i = 0; i < risks.rows(); ++i) {
    double mn = risks(i, 0);
    for (std::size_t s = 1; s < risks.cols(); ++s) mn = std::min(mn, risks(i, s));
    if (!std::isfinite(mn)) {
      throw std::logic_error("e_step: non-finite risk after clamping");
    }
    double total = 0.0;
    for (std::size_t s = 0; s < risks.cols(); ++s) {
      const double w = std::exp(-(risks(i, s) - mn) / temperature);
      resp.gamma(i, s) = w;
      total += w;
    }
    for (std::size_t s = 0; s < risks.cols(); ++s) resp.gamma(i, s) /= total;
  }
  return resp;
}

// E-step: gamma_{iS} proportional to exp(-(risk + extra)/T). `extra_costs`,
// when given, is an N x |catalog| additive cost table (the hybrid hook).
inline Responsibilities e_step(const BinaryMatrix& x, const MacParams& params,
                               const RoleSetCatalog& catalog, double temperature,
                               const Matrix* extra_costs = nullptr) {
  Matrix risks = risk_table(x, params, catalog);
  if (extra_costs != nullptr) {
    if (extra_costs->rows() != risks.rows() || extra_costs->cols() != risks.cols()) {
      throw DimensionError("e_step: extra_costs is " +
                           shape_string(extra_costs->rows(), extra_costs->cols()) +
                           ", expected " + shape_string(risks.rows(), risks.cols()));
    }
    for (std::size_t i = 0; i < risks.rows(); ++i) {
      for (std::size_t s = 0; s < risks.cols(); ++s) risks(i, s) += (*extra_costs)(i, s);
    }
  }
  return responsibilities_from_risks(risks, temperature);
}

// F = -T sum_i log sum_S exp(-R_iS / T).
inline double free_energy(const BinaryMatrix& x, const MacParams& params,
                          const RoleSetCatalog& catalog, double temperature) {
  if (!(temperature > 0.0)) throw ValidationError("free_energy: temperature must be positive");
  const Matrix risks = risk_table(x, params, catalog);
  double f = 0.0;
  for (std::size_t i = 0; i < risks.rows(); ++i) {
    double mn = risks(i, 0);
    for (std::size_t s = 1; s < risks.cols(); ++s) mn = std::min(mn, risks(i, s));
    double total = 0.0;
    for (std::size_t s = 0; s < risks.cols(); ++s) {
      total += std::exp(-(risks(i, s) - mn) / temperature);
    }
    f += -temperature * (std::log(total) - mn / temperature);
  }
  return f;
}

struct ParamGradient {
  Matrix beta;  // K x D
  double eps = 0.0;
  double r = 0.0;
};

namespace detail {

// Responsibility-weighted cell counts: a(s,d) = sum_{i: x_id=1} gamma_{is},
// b(s,d) = sum_{i: x_id=0} gamma_{is}. These stay fixed through an M-step.
struct CellAggregates {
  Matrix a;
  Matrix b;
};

inline CellAggregates cell_aggregates(const BinaryMatrix& x, const Matrix& gamma) {
  const std::size_t sets = gamma.cols();
  CellAggregates agg{Matrix(sets, x.cols()), Matrix(sets, x.cols())};
  std::vector<double> totals(sets, 0.0);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t s = 0; s < sets; ++s) totals[s] += gamma(i, s);
    for (std::size_t d : x.row_ones(i)) {
      for (std::size_t s = 0; s < sets; ++s) agg.a(s, d) += gamma(i, s);
    }
  }
  for (std::size_t s = 0; s < sets; ++s) {
    for (std::size_t d = 0; d < x.cols(); ++d) {
      agg.b(s, d) = std::max(0.0, totals[s] - agg.a(s, d));
    }
  }
  return agg;
}

// d/d(theta) of the expected risk sum_{i,S} gamma_iS R_iS at fixed gamma.
// These are the first-order conditions the M-step drives to zero.
inline ParamGradient expected_risk_gradient(const CellAggregates& agg,
                                            const RoleSetCatalog& catalog,
                                            const MacParams& params) {
  const Matrix& beta = params.beta;
  const double eps = params.eps;
  const double r = params.r;
  ParamGradient g;
  g.beta = Matrix(beta.rows(), beta.cols());
  for (std::size_t s = 0; s < catalog.size(); ++s) {
    const auto& members = catalog.members(s);
    for (std::size_t d = 0; d < beta.cols(); ++d) {
      const double bs = beta_set_product(beta, members, d);
      const double q1 = eps * r + (1.0 - eps) * (1.0 - bs);
      const double q0 = eps * (1.0 - r) + (1.0 - eps) * bs;
      const double a = agg.a(s, d);
      const double b = agg.b(s, d);
      const double pull = a / q1 - b / q0;  // common factor of the conditions
      for (std::size_t k : members) {
        double rest = 1.0;
        for (std::size_t k2 : members) {
          if (k2 != k) rest *= beta(k2, d);
        }
        g.beta(k, d) += (1.0 - eps) * rest * pull;
      }
      g.eps += (1.0 - r - bs) * pull;
      g.r += eps * (b / q0 - a / q1);
    }
  }
  return g;
}

}  // namespace detail

// Gradient of free_energy with respect to (beta, eps, r). Exact identity:
// dF/dtheta = sum_{i,S} gamma_iS(theta) dR_iS/dtheta with gamma from the
// current parameters at this temperature.
inline ParamGradient free_energy_gradient(const BinaryMatrix& x, const MacParams& params,
                                          const RoleSetCatalog& catalog, double temperature) {
  const Responsibilities resp = e_step(x, params, catalog, temperature);
  return detail::expected_risk_gradient(detail::cell_aggregates(x, resp.gamma), catalog,
                                        params);
}

struct MStepOptions {
  double newton_tol = 1e-8;
  std::size_t max_newton_iter = 60;
  std::size_t max_sweeps = 100;
  bool update_eps = true;
  bool update_r = true;
};

struct MStepResult {
  MacParams params;
  double max_residual = 0.0;
  bool converged = false;
  std::size_t sweeps = 0;
  // Names of parameters whose Newton iteration needed a bisection safeguard.
  std::vector<std::string> bisection_fallbacks;
};

namespace detail {

// Gaussian elimination with partial pivoting; a is n x n row-major, rhs has
// m columns. Returns false when (numerically) singular.
inline bool solve_dense(std::vector<double>& a, std::vector<double>& rhs, std::size_t n,
                        std::size_t m) {
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t row = col + 1; row < n; ++row) {
      if (std::abs(a[row * n + col]) > std::abs(a[pivot * n + col])) pivot = row;
    }
    if (std::abs(a[pivot * n + col]) < 1e-300) return false;
    if (pivot != col) {
      for (std::size_t j = 0; j < n; ++j) std::swap(a[col * n + j], a[pivot * n + j]);
      for (std::size_t j = 0; j < m; ++j) std::swap(rhs[col * m + j], rhs[pivot * m + j]);
    }
    const double inv = 1.0 / a[col * n + col];
    for (std::size_t row = col + 1; row < n; ++row) {
      const double f = a[row * n + col] * inv;
      if (f == 0.0) continue;
      for (std::size_t j = col; j < n; ++j) a[row * n + j] -= f * a[col * n + j];
      for (std::size_t j = 0; j < m; ++j) rhs[row * m + j] -= f * rhs[col * m + j];
    }
  }
  for (std::size_t col = n; col-- > 0;) {
    const double inv = 1.0 / a[col * n + col];
    for (std::size_t j = 0; j < m; ++j) {
      double v = rhs[col * m + j];
      for (std::size_t k2 = col + 1; k2 < n; ++k2) {
        v -= a[col * n + k2] * rhs[k2 * m + j];
      }
      rhs[col * m + j] = v * inv;
    }
  }
  return true;
}

// Safeguarded Newton for a nondecreasing g on [lo, hi]. Returns the root (or
// the boundary when g does not change sign). Falls back to bisection whenever
// a Newton step leaves the current bracket.
template <typename G, typename GPrime>
double solve_monotone(G&& g, GPrime&& gprime, double lo, double hi, double start,
                      double tol, std::size_t max_iter, bool* used_bisection) {
  double glo = g(lo);
  if (glo >= 0.0) return lo;
  double ghi = g(hi);
  if (ghi <= 0.0) return hi;
  double a = lo, b = hi;
  double theta = std::clamp(start, lo, hi);
  for (std::size_t it = 0; it < max_iter; ++it) {
    const double gv = g(theta);
    if (std::abs(gv) < tol) return theta;
    if (gv < 0.0) {
      a = theta;
    } else {
      b = theta;
    }
    const double slope = gprime(theta);
    double next = theta - gv / slope;
    if (!std::isfinite(next) || next <= a || next >= b) {
      next = 0.5 * (a + b);
      if (used_bisection != nullptr) *used_bisection = true;
    }
    if (b - a < 1e-16) return 0.5 * (a + b);
    theta = next;
  }
  return theta;
}

inline double expected_risk_from_aggregates(const CellAggregates& agg,
                                            const RoleSetCatalog& catalog,
                                            const MacParams& params) {
  double total = 0.0;
  for (std::size_t s = 0; s < catalog.size(); ++s) {
    const auto& members = catalog.members(s);
    for (std::size_t d = 0; d < agg.a.cols(); ++d) {
      const double bs = beta_set_product(params.beta, members, d);
      const double q1 =
          params.eps * params.r + (1.0 - params.eps) * (1.0 - bs);
      const double q0 =
          params.eps * (1.0 - params.r) + (1.0 - params.eps) * bs;
      total -= agg.a(s, d) * std::log(q1) + agg.b(s, d) * std::log(q0);
    }
  }
  return total;
}

// Damped projected Newton over all free parameters at fixed
// responsibilities. The Hessian of the expected risk is block diagonal over
// beta columns bordered by (eps, r): per-column solves plus a 2x2 Schur
// complement give the step. Coordinates pinned at a bound with the gradient
// pointing outward stay fixed.
inline void joint_newton_polish(const BinaryMatrix& x, const CellAggregates& agg,
                                const RoleSetCatalog& catalog, MacParams& params,
                                const MStepOptions& opt) {
  const double lo = kParamFloor;
  const double hi = 1.0 - kParamFloor;
  const std::size_t k_count = params.beta.rows();
  const std::size_t d_count = params.beta.cols();
  (void)x;

  for (std::size_t iter = 0; iter < opt.max_newton_iter; ++iter) {
    const double eps = params.eps;
    const double r = params.r;
    Matrix g_beta(k_count, d_count);
    std::vector<Matrix> hess(d_count, Matrix(k_count, k_count));
    Matrix border_e(k_count, d_count);  // d2E / dbeta(k,d) deps
    Matrix border_r(k_count, d_count);
    double g_e = 0.0, g_r = 0.0, c_ee = 0.0, c_rr = 0.0, c_er = 0.0;

    std::vector<double> rest(catalog.max_set_size());
    for (std::size_t s = 0; s < catalog.size(); ++s) {
      const auto& members = catalog.members(s);
      for (std::size_t d = 0; d < d_count; ++d) {
        const double bs = beta_set_product(params.beta, members, d);
        const double q1 = eps * r + (1.0 - eps) * (1.0 - bs);
        const double q0 = eps * (1.0 - r) + (1.0 - eps) * bs;
        const double a = agg.a(s, d);
        const double b = agg.b(s, d);
        const double f = a / q1 - b / q0;
        const double g2 = a / (q1 * q1) + b / (q0 * q0);
        const double c = 1.0 - r - bs;
        g_e += c * f;
        g_r += -eps * f;
        c_ee += c * c * g2;
        c_rr += eps * eps * g2;
        c_er += -f - c * eps * g2;
        for (std::size_t mi = 0; mi < members.size(); ++mi) {
          double p = 1.0;
          for (std::size_t mj = 0; mj < members.size(); ++mj) {
            if (mj != mi) p *= params.beta(members[mj], d);
          }
          rest[mi] = p;
        }
        const double e1 = 1.0 - eps;
        for (std::size_t mi = 0; mi < members.size(); ++mi) {
          const std::size_t k = members[mi];
          g_beta(k, d) += e1 * rest[mi] * f;
          hess[d](k, k) += e1 * e1 * rest[mi] * rest[mi] * g2;
          border_e(k, d) += rest[mi] * (-f + e1 * c * g2);
          border_r(k, d) += -e1 * rest[mi] * eps * g2;
          for (std::size_t mj = mi + 1; mj < members.size(); ++mj) {
            const std::size_t k2 = members[mj];
            double p_both = 1.0;
            for (std::size_t mt = 0; mt < members.size(); ++mt) {
              if (mt != mi && mt != mj) p_both *= params.beta(members[mt], d);
            }
            const double val = e1 * p_both * f + e1 * e1 * rest[mi] * rest[mj] * g2;
            hess[d](k, k2) += val;
            hess[d](k2, k) += val;
          }
        }
      }
    }

    const auto beta_pinned = [&](std::size_t k, std::size_t d) {
      const double v = params.beta(k, d);
      return (v <= lo && g_beta(k, d) > 0.0) || (v >= hi && g_beta(k, d) < 0.0);
    };
    const bool e_free = opt.update_eps &&
                        !((eps <= lo && g_e > 0.0) || (eps >= hi && g_e < 0.0));
    const bool r_free = opt.update_r &&
                        !((r <= lo && g_r > 0.0) || (r >= hi && g_r < 0.0));

    double residual = 0.0;
    if (e_free) residual = std::max(residual, std::abs(g_e));
    if (r_free) residual = std::max(residual, std::abs(g_r));
    for (std::size_t d = 0; d < d_count; ++d) {
      for (std::size_t k = 0; k < k_count; ++k) {
        if (!beta_pinned(k, d)) residual = std::max(residual, std::abs(g_beta(k, d)));
      }
    }
    if (residual < opt.newton_tol) return;

    // Border variables present in the reduced system.
    std::vector<int> er_index;  // 0 -> eps, 1 -> r
    if (e_free) er_index.push_back(0);
    if (r_free) er_index.push_back(1);
    const std::size_t nb = er_index.size();

    // Per-column solves H_d [y | W] = [g | border].
    Matrix step_beta(k_count, d_count);
    std::vector<double> schur(nb * nb, 0.0);
    std::vector<double> schur_rhs(nb, 0.0);
    const double g_border[2] = {g_e, g_r};
    {
      const double c_full[2][2] = {{c_ee, c_er}, {c_er, c_rr}};
      for (std::size_t bi = 0; bi < nb; ++bi) {
        schur_rhs[bi] = -g_border[er_index[bi]];
        for (std::size_t bj = 0; bj < nb; ++bj) {
          schur[bi * nb + bj] = c_full[er_index[bi]][er_index[bj]];
        }
      }
    }
    std::vector<std::vector<std::size_t>> free_rows(d_count);
    std::vector<std::vector<double>> col_solutions(d_count);  // (1 + nb) columns
    bool solvable = true;
    for (std::size_t d = 0; d < d_count && solvable; ++d) {
      auto& rows = free_rows[d];
      for (std::size_t k = 0; k < k_count; ++k) {
        if (!beta_pinned(k, d)) rows.push_back(k);
      }
      const std::size_t nf = rows.size();
      if (nf == 0) continue;
      std::vector<double> h(nf * nf);
      std::vector<double> rhs(nf * (1 + nb));
      double max_diag = 0.0;
      for (std::size_t a2 = 0; a2 < nf; ++a2) {
        max_diag = std::max(max_diag, hess[d](rows[a2], rows[a2]));
      }
      const double ridge = 1e-12 * (1.0 + max_diag);
      for (std::size_t a2 = 0; a2 < nf; ++a2) {
        for (std::size_t b2 = 0; b2 < nf; ++b2) {
          h[a2 * nf + b2] = hess[d](rows[a2], rows[b2]) + (a2 == b2 ? ridge : 0.0);
        }
        rhs[a2 * (1 + nb)] = g_beta(rows[a2], d);
        for (std::size_t bi = 0; bi < nb; ++bi) {
          rhs[a2 * (1 + nb) + 1 + bi] =
              (er_index[bi] == 0) ? border_e(rows[a2], d) : border_r(rows[a2], d);
        }
      }
      if (!solve_dense(h, rhs, nf, 1 + nb)) {
        solvable = false;
        break;
      }
      col_solutions[d] = rhs;
      // Schur accumulation: S -= B^T H^-1 B ; rhs += B^T H^-1 g.
      for (std::size_t bi = 0; bi < nb; ++bi) {
        double bt_y = 0.0;
        for (std::size_t a2 = 0; a2 < nf; ++a2) {
          const double bval =
              (er_index[bi] == 0) ? border_e(rows[a2], d) : border_r(rows[a2], d);
          bt_y += bval * rhs[a2 * (1 + nb)];
        }
        schur_rhs[bi] += bt_y;
        for (std::size_t bj = 0; bj < nb; ++bj) {
          double bt_w = 0.0;
          for (std::size_t a2 = 0; a2 < nf; ++a2) {
            const double bval =
                (er_index[bi] == 0) ? border_e(rows[a2], d) : border_r(rows[a2], d);
            bt_w += bval * rhs[a2 * (1 + nb) + 1 + bj];
          }
          schur[bi * nb + bj] -= bt_w;
        }
      }
    }
    if (!solvable) return;

    double step_er[2] = {0.0, 0.0};
    if (nb > 0) {
      std::vector<double> s_mat = schur;
      std::vector<double> s_rhs = schur_rhs;
      if (!solve_dense(s_mat, s_rhs, nb, 1)) return;
      for (std::size_t bi = 0; bi < nb; ++bi) step_er[er_index[bi]] = s_rhs[bi];
    }
    for (std::size_t d = 0; d < d_count; ++d) {
      const auto& rows = free_rows[d];
      const auto& sol = col_solutions[d];
      for (std::size_t a2 = 0; a2 < rows.size(); ++a2) {
        double w_der = 0.0;
        for (std::size_t bi = 0; bi < nb; ++bi) {
          w_der += sol[a2 * (1 + nb) + 1 + bi] * step_er[er_index[bi]];
        }
        step_beta(rows[a2], d) = -(sol[a2 * (1 + nb)] + w_der);
      }
    }

    const double base = expected_risk_from_aggregates(agg, catalog, params);
    double scale = 1.0;
    bool accepted = false;
    for (int damp = 0; damp < 30 && !accepted; ++damp) {
      MacParams trial = params;
      bool moved = false;
      for (std::size_t d = 0; d < d_count; ++d) {
        for (std::size_t k : free_rows[d]) {
          const double nv = std::clamp(params.beta(k, d) + scale * step_beta(k, d), lo, hi);
          if (nv != params.beta(k, d)) moved = true;
          trial.beta(k, d) = nv;
        }
      }
      if (e_free) {
        trial.eps = std::clamp(eps + scale * step_er[0], lo, hi);
        if (trial.eps != eps) moved = true;
      }
      if (r_free) {
        trial.r = std::clamp(r + scale * step_er[1], lo, hi);
        if (trial.r != r) moved = true;
      }
      if (moved && expected_risk_from_aggregates(agg, catalog, trial) <= base) {
        params = trial;
        accepted = true;
      }
      scale *= 0.5;
    }
    if (!accepted) return;
  }
}

}  // namespace detail

// One M-step at fixed responsibilities: cyclic coordinate root-solving of the
// first-order conditions for every beta entry and (unless held fixed) for eps
// and r, until all residuals fall below the Newton tolerance.
inline MStepResult m_step(const BinaryMatrix& x, const Responsibilities& resp,
                          const RoleSetCatalog& catalog, const MacParams& params_in,
                          const MStepOptions& opt = {}) {
  const detail::CellAggregates agg = detail::cell_aggregates(x, resp.gamma);
  MStepResult result;
  result.params = params_in;
  Matrix& beta = result.params.beta;
  const double lo = kParamFloor;
  const double hi = 1.0 - kParamFloor;

  const auto beta_condition = [&](std::size_t mu, std::size_t nu, double value) {
    double g = 0.0;
    for (std::size_t s : catalog.sets_containing(mu)) {
      double rest = 1.0;
      for (std::size_t k : catalog.members(s)) {
        if (k != mu) rest *= beta(k, nu);
      }
      const double bs = value * rest;
      const double q1 = result.params.eps * result.params.r +
                        (1.0 - result.params.eps) * (1.0 - bs);
      const double q0 = result.params.eps * (1.0 - result.params.r) +
                        (1.0 - result.params.eps) * bs;
      g += (1.0 - result.params.eps) * rest * (agg.a(s, nu) / q1 - agg.b(s, nu) / q0);
    }
    return g;
  };
  const auto beta_condition_slope = [&](std::size_t mu, std::size_t nu, double value) {
    double gp = 0.0;
    for (std::size_t s : catalog.sets_containing(mu)) {
      double rest = 1.0;
      for (std::size_t k : catalog.members(s)) {
        if (k != mu) rest *= beta(k, nu);
      }
      const double bs = value * rest;
      const double q1 = result.params.eps * result.params.r +
                        (1.0 - result.params.eps) * (1.0 - bs);
      const double q0 = result.params.eps * (1.0 - result.params.r) +
                        (1.0 - result.params.eps) * bs;
      const double e1 = 1.0 - result.params.eps;
      gp += e1 * rest * e1 * rest * (agg.a(s, nu) / (q1 * q1) + agg.b(s, nu) / (q0 * q0));
    }
    return gp;
  };

  // eps and r conditions aggregate over every (set, permission) pair.
  const auto noise_condition = [&](bool for_eps, double value) {
    const double eps = for_eps ? value : result.params.eps;
    const double r = for_eps ? result.params.r : value;
    double g = 0.0;
    for (std::size_t s = 0; s < catalog.size(); ++s) {
      const auto& members = catalog.members(s);
      for (std::size_t d = 0; d < x.cols(); ++d) {
        const double bs = beta_set_product(beta, members, d);
        const double q1 = eps * r + (1.0 - eps) * (1.0 - bs);
        const double q0 = eps * (1.0 - r) + (1.0 - eps) * bs;
        if (for_eps) {
          g += (1.0 - r - bs) * (agg.a(s, d) / q1 - agg.b(s, d) / q0);
        } else {
          g += eps * (agg.b(s, d) / q0 - agg.a(s, d) / q1);
        }
      }
    }
    return g;
  };
  const auto noise_condition_slope = [&](bool for_eps, double value) {
    const double eps = for_eps ? value : result.params.eps;
    const double r = for_eps ? result.params.r : value;
    double gp = 0.0;
    for (std::size_t s = 0; s < catalog.size(); ++s) {
      const auto& members = catalog.members(s);
      for (std::size_t d = 0; d < x.cols(); ++d) {
        const double bs = beta_set_product(beta, members, d);
        const double q1 = eps * r + (1.0 - eps) * (1.0 - bs);
        const double q0 = eps * (1.0 - r) + (1.0 - eps) * bs;
        const double dq = for_eps ? (r - (1.0 - bs)) : eps;
        gp += dq * dq * (agg.a(s, d) / (q1 * q1) + agg.b(s, d) / (q0 * q0));
      }
    }
    return gp;
  };

  for (result.sweeps = 1; result.sweeps <= opt.max_sweeps; ++result.sweeps) {
    for (std::size_t nu = 0; nu < beta.cols(); ++nu) {
      for (std::size_t mu = 0; mu < beta.rows(); ++mu) {
        bool fell_back = false;
        beta(mu, nu) = detail::solve_monotone(
            [&](double v) { return beta_condition(mu, nu, v); },
            [&](double v) { return beta_condition_slope(mu, nu, v); }, lo, hi,
            beta(mu, nu), opt.newton_tol, opt.max_newton_iter, &fell_back);
        if (fell_back) {
          result.bisection_fallbacks.push_back("beta(" + std::to_string(mu) + "," +
                                               std::to_string(nu) + ")");
        }
      }
    }
    if (opt.update_eps) {
      bool fell_back = false;
      result.params.eps = detail::solve_monotone(
          [&](double v) { return noise_condition(true, v); },
          [&](double v) { return noise_condition_slope(true, v); }, lo, hi,
          result.params.eps, opt.newton_tol, opt.max_newton_iter, &fell_back);
      if (fell_back) result.bisection_fallbacks.push_back("eps");
    }
    if (opt.update_r) {
      bool fell_back = false;
      result.params.r = detail::solve_monotone(
          [&](double v) { return noise_condition(false, v); },
          [&](double v) { return noise_condition_slope(false, v); }, lo, hi,
          result.params.r, opt.newton_tol, opt.max_newton_iter, &fell_back);
      if (fell_back) result.bisection_fallbacks.push_back("r");
    }

    // Cyclic solves alone can orbit a joint stationary point when several
    // parameters are weakly identified; a few damped Newton iterations on
    // the full system land it.
    if (result.sweeps >= 2) {
      detail::joint_newton_polish(x, agg, catalog, result.params, opt);
    }

    // Joint residual check; coordinates interact through shared sets.
    const ParamGradient g = detail::expected_risk_gradient(agg, catalog, result.params);
    double max_res = 0.0;
    for (std::size_t mu = 0; mu < beta.rows(); ++mu) {
      for (std::size_t nu = 0; nu < beta.cols(); ++nu) {
        const double v = beta(mu, nu);
        const double res = g.beta(mu, nu);
        // A projected parameter sitting on its bound with the gradient
        // pointing outward is stationary.
        if ((v <= lo && res > 0.0) || (v >= hi && res < 0.0)) continue;
        max_res = std::max(max_res, std::abs(res));
      }
    }
    if (opt.update_eps) {
      const double v = result.params.eps;
      if (!((v <= lo && g.eps > 0.0) || (v >= hi && g.eps < 0.0))) {
        max_res = std::max(max_res, std::abs(g.eps));
      }
    }
    if (opt.update_r) {
      const double v = result.params.r;
      if (!((v <= lo && g.r > 0.0) || (v >= hi && g.r < 0.0))) {
        max_res = std::max(max_res, std::abs(g.r));
      }
    }
    result.max_residual = max_res;
    if (max_res < opt.newton_tol) {
      result.converged = true;
      break;
    }
  }
  return result;
}

struct MacFitDiagnostics {
  bool converged = false;
  std::size_t iterations = 0;
  double initial_temperature = 0.0;
  double final_temperature = 0.0;
  double final_free_energy = 0.0;
  // Mixture log-likelihood of the hard (argmax) assignment.
  double final_log_lik = 0.0;
  // Internal restart-ranking score: final_log_lik minus the hard business
  // cost when a hook is active, equal to final_log_lik otherwise.
  double selection_score = 0.0;
  std::size_t newton_fallbacks = 0;
};

struct MacFitResult {
  FlatRbacConfig config;
  MacParams params;
  Responsibilities gamma;
  MacFitDiagnostics diagnostics;
  std::vector<std::size_t> argmax_sets;  // per-user catalog index
};

// Hook filling an additive N x |catalog| cost table from the previous
// iteration's responsibilities. Used by hybrid fitting.
using ExtraCostHook = std::function<void(const Matrix& prev_gamma, Matrix& extra_costs)>;

namespace detail {

// One annealed EM run. Beta rows start from sampled rows of 1-X with inward
// jitter; the temperature starts at initial_temp_factor times the mean
// initial risk and cools geometrically after every E/M pass. Stops once every
// user concentrates on a single role set with probability > 1 - threshold.
inline MacFitResult fit_mac_single(const BinaryMatrix& x, const MacFitConfig& cfg,
                                   const ExtraCostHook* hook) {
  cfg.validate();
  const std::size_t n = x.rows();
  const std::size_t d_count = x.cols();
  const RoleSetCatalog catalog(cfg.num_roles, cfg.max_set_size);
  Rng rng(cfg.seed);

  MacParams params;
  params.beta = Matrix(cfg.num_roles, d_count);
  std::vector<std::size_t> row_picks;
  if (cfg.num_roles <= n) {
    row_picks = rng.sample_without_replacement(cfg.num_roles, n);
  } else {
    for (std::size_t k = 0; k < cfg.num_roles; ++k) {
      row_picks.push_back(rng.uniform_below(n));
    }
  }
  for (std::size_t k = 0; k < cfg.num_roles; ++k) {
    for (std::size_t d = 0; d < d_count; ++d) {
      const double jitter = cfg.init_jitter * rng.uniform01();
      const double value = x.get(row_picks[k], d) ? jitter : 1.0 - jitter;
      params.beta(k, d) = std::clamp(value, kParamFloor, 1.0 - kParamFloor);
    }
  }
  params.eps = cfg.fixed_eps.value_or(0.1);
  params.r = cfg.fixed_r.value_or(0.5);

  MStepOptions mstep_opt;
  mstep_opt.newton_tol = cfg.newton_tol;
  mstep_opt.max_newton_iter = cfg.max_newton_iter;
  mstep_opt.max_sweeps = cfg.max_mstep_sweeps;
  mstep_opt.update_eps = !cfg.fixed_eps.has_value();
  mstep_opt.update_r = !cfg.fixed_r.has_value();

  Matrix extra(n, catalog.size());
  Matrix prev_gamma(n, catalog.size(), 1.0 / static_cast<double>(catalog.size()));

  // Calibrate T0 from the initial risks (hybrid costs included if hooked).
  double temperature;
  {
    Matrix risks = risk_table(x, params, catalog);
    if (hook != nullptr) {
      (*hook)(prev_gamma, extra);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t s = 0; s < catalog.size(); ++s) risks(i, s) += extra(i, s);
      }
    }
    double mean = 0.0;
    for (double v : risks.data()) mean += v;
    mean /= static_cast<double>(risks.data().size());
    temperature = cfg.initial_temp_factor * std::max(mean, 1e-6);
  }
  const double initial_temperature = temperature;

  Responsibilities resp;
  resp.gamma = prev_gamma;
  resp.temperature = temperature;
  bool converged = false;
  std::size_t iterations = 0;
  std::size_t fallbacks = 0;

  for (std::size_t t = 0; t < cfg.max_iterations; ++t) {
    iterations = t + 1;
    const Matrix* extra_ptr = nullptr;
    if (hook != nullptr) {
      (*hook)(prev_gamma, extra);
      extra_ptr = &extra;
    }
    resp = e_step(x, params, catalog, temperature, extra_ptr);
    prev_gamma = resp.gamma;

    double min_max = 1.0;
    for (std::size_t i = 0; i < n; ++i) {
      double mx = 0.0;
      for (std::size_t s = 0; s < catalog.size(); ++s) mx = std::max(mx, resp.gamma(i, s));
      min_max = std::min(min_max, mx);
    }
    if (min_max > 1.0 - cfg.convergence_threshold) {
      converged = true;
      break;
    }

    const MStepResult ms = m_step(x, resp, catalog, params, mstep_opt);
    params = ms.params;
    fallbacks += ms.bisection_fallbacks.size();
    temperature *= cfg.cooling_rate;
  }

  // Binarize: users take the roles of their argmax set, u_kd = 1 iff
  // beta_kd < 0.5. Ties resolve to the lowest catalog index.
  BinaryMatrix z(n, cfg.num_roles);
  std::vector<std::size_t> argmax_sets(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t s = 1; s < catalog.size(); ++s) {
      if (resp.gamma(i, s) > resp.gamma(i, best)) best = s;
    }
    argmax_sets[i] = best;
    for (std::size_t k : catalog.members(best)) z.set(i, k, true);
  }
  BinaryMatrix u(cfg.num_roles, d_count);
  for (std::size_t k = 0; k < cfg.num_roles; ++k) {
    for (std::size_t d = 0; d < d_count; ++d) {
      if (params.beta(k, d) < 0.5) u.set(k, d, true);
    }
  }

  MacFitDiagnostics diag;
  diag.converged = converged;
  diag.iterations = iterations;
  diag.initial_temperature = initial_temperature;
  diag.final_temperature = temperature;
  diag.final_free_energy = free_energy(x, params, catalog, temperature);
  diag.newton_fallbacks = fallbacks;
  double hard_ll = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    hard_ll -= per_item_risk(x, i, catalog.members(argmax_sets[i]), params);
  }
  diag.final_log_lik = hard_ll;
  diag.selection_score = hard_ll;
  if (hook != nullptr) {
    (*hook)(resp.gamma, extra);
    for (std::size_t i = 0; i < n; ++i) {
      diag.selection_score -= extra(i, argmax_sets[i]);
    }
  }

  return MacFitResult{FlatRbacConfig(std::move(z), std::move(u)), std::move(params),
                      std::move(resp), diag, std::move(argmax_sets)};
}

}  // namespace detail

// Annealed EM with optional independent restarts; the run with the best
// internal score wins (ties keep the earliest restart).
inline MacFitResult fit_mac_engine(const BinaryMatrix& x, const MacFitConfig& cfg,
                                   const ExtraCostHook* hook) {
  cfg.validate();
  if (cfg.restarts <= 1) return detail::fit_mac_single(x, cfg, hook);
  std::optional<MacFitResult> best;
  for (std::size_t restart = 0; restart < cfg.restarts; ++restart) {
    MacFitConfig one = cfg;
    one.restarts = 1;
    if (restart > 0) one.seed = derive_seed(cfg.seed, restart);
    MacFitResult fit = detail::fit_mac_single(x, one, hook);
    if (!best || fit.diagnostics.selection_score > best->diagnostics.selection_score) {
      best = std::move(fit);
    }
  }
  return std::move(*best);
}

inline MacFitResult fit_mac(const BinaryMatrix& x, const MacFitConfig& cfg) {
  return fit_mac_engine(x, cfg, nullptr);
}

// Confidence of the model in its own reconstruction: entry (i,d) is
// sum_S gamma_iS p(x_id = reconstructed bit | S, params).
inline Matrix posterior_cell_confidence(const BinaryMatrix& x, const FlatRbacConfig& config,
                                        const MacParams& params, const Responsibilities& resp,
                                        const RoleSetCatalog& catalog) {
  if (config.z.rows() != x.rows() || config.u.cols() != x.cols()) {
    throw DimensionError("posterior_cell_confidence: config does not match X");
  }
  const BinaryMatrix recon = config.reconstruct();
  Matrix conf(x.rows(), x.cols());
  std::vector<double> q1(x.cols()), q0(x.cols());
  for (std::size_t s = 0; s < catalog.size(); ++s) {
    const auto& members = catalog.members(s);
    for (std::size_t d = 0; d < x.cols(); ++d) {
      const double bs = beta_set_product(params.beta, members, d);
      q1[d] = clamp_prob(mixture_prob(true, bs, params.eps, params.r));
      q0[d] = clamp_prob(mixture_prob(false, bs, params.eps, params.r));
    }
    for (std::size_t i = 0; i < x.rows(); ++i) {
      const double g = resp.gamma(i, s);
      if (g == 0.0) continue;
      for (std::size_t d = 0; d < x.cols(); ++d) {
        conf(i, d) += g * (recon.get(i, d) ? q1[d] : q0[d]);
      }
    }
  }
  return conf;
}

}  // namespace rolemine::mac
