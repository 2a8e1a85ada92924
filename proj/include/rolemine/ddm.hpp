// Apache License, Version 2.0, refer to LICENSE.txt
//
// Disjoint decomposition model (DDM): users are partitioned into business
// roles, permissions into technical roles, and each (business, technical)
// block is Bernoulli with a symmetric Beta prior integrated out. Both
// partitions carry Chinese-restaurant-process priors with a shared
// concentration, so the number of roles is inferred. Fitting alternates
// Gibbs sweeps over users and permissions while tracking the
// maximum-a-posteriori state.

#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "rolemine/binary_matrix.hpp"
#include "rolemine/rbac_config.hpp"
#include "rolemine/rng.hpp"

namespace rolemine::ddm {

struct DdmConfig {
  double alpha = 1.0;                // CRP concentration, shared by both sides
  double beta_prior_strength = 0.5;  // symmetric Beta hyperparameter
  std::size_t max_alternations = 200;
  std::size_t stagnation_window = 5;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(alpha > 0.0)) throw ValidationError("DdmConfig: alpha must be positive");
    if (!(beta_prior_strength > 0.0)) {
      throw ValidationError("DdmConfig: beta_prior_strength must be positive");
    }
    if (stagnation_window == 0) {
      throw ValidationError("DdmConfig: stagnation_window must be >= 1");
    }
  }
};

// CRP predictive probability for one item given the other items' role sizes.
// `counts` excludes the item being (re)assigned; n_total includes it.
// role == nullopt asks for the probability of opening a new role.
inline double dp_prior(const std::vector<std::size_t>& counts, std::size_t n_total,
                       double alpha, std::optional<std::size_t> role) {
  if (!(alpha > 0.0)) throw ValidationError("dp_prior: alpha must be positive");
  const double denom = static_cast<double>(n_total) - 1.0 + alpha;
  if (!role) return alpha / denom;
  return static_cast<double>(counts.at(*role)) / denom;
}

inline double log_beta_fn(double a, double b) {
  return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

using Counters = std::vector<std::vector<long long>>;

// log p(X | Z, Y) with block Bernoulli parameters integrated out:
// sum_{k,l} log B(n1+g, n0+g) - log B(g, g). Empty blocks contribute zero.
inline double log_evidence(const Counters& n1, const Counters& n0, double gamma_prior) {
  if (!(gamma_prior > 0.0)) throw ValidationError("log_evidence: gamma_prior must be positive");
  const double base = log_beta_fn(gamma_prior, gamma_prior);
  double total = 0.0;
  for (std::size_t k = 0; k < n1.size(); ++k) {
    for (std::size_t l = 0; l < n1[k].size(); ++l) {
      total += log_beta_fn(static_cast<double>(n1[k][l]) + gamma_prior,
                           static_cast<double>(n0[k][l]) + gamma_prior) -
               base;
    }
  }
  return total;
}

// Log probability of a partition under the CRP with concentration alpha.
inline double crp_log_prob(const std::vector<std::size_t>& sizes, double alpha,
                           std::size_t n_total) {
  double lp = static_cast<double>(sizes.size()) * std::log(alpha);
  for (std::size_t s : sizes) lp += std::lgamma(static_cast<double>(s));
  lp += std::lgamma(alpha) - std::lgamma(alpha + static_cast<double>(n_total));
  return lp;
}

// Sampler state: two partitions plus per-block 1/0 counters.
// Invariant: n1[k][l] + n0[k][l] == user_role_size[k] * perm_role_size[l],
// and no role is empty.
struct DdmState {
  std::vector<std::size_t> user_assign;  // N entries in [0, K)
  std::vector<std::size_t> perm_assign;  // D entries in [0, L)
  std::vector<std::size_t> user_role_size;
  std::vector<std::size_t> perm_role_size;
  Counters n1;
  Counters n0;

  std::size_t num_users() const { return user_assign.size(); }
  std::size_t num_perms() const { return perm_assign.size(); }
  std::size_t num_business_roles() const { return user_role_size.size(); }
  std::size_t num_technical_roles() const { return perm_role_size.size(); }

  static DdmState from_assignments(const BinaryMatrix& x,
                                   std::vector<std::size_t> user_assign,
                                   std::vector<std::size_t> perm_assign) {
    if (user_assign.size() != x.rows() || perm_assign.size() != x.cols()) {
      throw DimensionError("DdmState: assignment lengths do not match X");
    }
    DdmState st;
    st.user_assign = std::move(user_assign);
    st.perm_assign = std::move(perm_assign);
    std::size_t k_count = 0, l_count = 0;
    for (std::size_t k : st.user_assign) k_count = std::max(k_count, k + 1);
    for (std::size_t l : st.perm_assign) l_count = std::max(l_count, l + 1);
    st.user_role_size.assign(k_count, 0);
    st.perm_role_size.assign(l_count, 0);
    for (std::size_t k : st.user_assign) ++st.user_role_size[k];
    for (std::size_t l : st.perm_assign) ++st.perm_role_size[l];
    for (std::size_t k = 0; k < k_count; ++k) {
      if (st.user_role_size[k] == 0) {
        throw ValidationError("DdmState: user role ids must be contiguous");
      }
    }
    for (std::size_t l = 0; l < l_count; ++l) {
      if (st.perm_role_size[l] == 0) {
        throw ValidationError("DdmState: permission role ids must be contiguous");
      }
    }
    st.n1.assign(k_count, std::vector<long long>(l_count, 0));
    st.n0.assign(k_count, std::vector<long long>(l_count, 0));
    for (std::size_t i = 0; i < x.rows(); ++i) {
      const std::size_t k = st.user_assign[i];
      for (std::size_t d = 0; d < x.cols(); ++d) {
        const std::size_t l = st.perm_assign[d];
        if (x.get(i, d)) {
          ++st.n1[k][l];
        } else {
          ++st.n0[k][l];
        }
      }
    }
    return st;
  }

  double log_joint(const DdmConfig& cfg) const {
    return log_evidence(n1, n0, cfg.beta_prior_strength) +
           crp_log_prob(user_role_size, cfg.alpha, num_users()) +
           crp_log_prob(perm_role_size, cfg.alpha, num_perms());
  }
};

namespace detail {

// One side of the sampler; the permission side runs it on transposed data.
// row_assign/col_assign name the resampled axis and the fixed axis.
struct SideView {
  std::vector<std::size_t>* row_assign;
  std::vector<std::size_t>* row_sizes;
  std::vector<std::size_t>* col_assign;
  std::vector<std::size_t>* col_sizes;
  Counters* n1;  // indexed [row role][col role]
  Counters* n0;
};

// Per-col-role 1-counts and 0-counts of one row.
inline void row_block_counts(const BinaryMatrix& rows, std::size_t row,
                             const std::vector<std::size_t>& col_assign,
                             const std::vector<std::size_t>& col_sizes,
                             std::vector<long long>& m1, std::vector<long long>& m0) {
  m1.assign(col_sizes.size(), 0);
  m0.assign(col_sizes.size(), 0);
  for (std::size_t d : rows.row_ones(row)) ++m1[col_assign[d]];
  for (std::size_t l = 0; l < col_sizes.size(); ++l) {
    m0[l] = static_cast<long long>(col_sizes[l]) - m1[l];
  }
}

// Removes `row` from its role; erases the role if it empties (ids shift down).
inline void remove_row(SideView side, std::size_t row) {
  const std::size_t k = (*side.row_assign)[row];
  if (--(*side.row_sizes)[k] == 0) {
    side.row_sizes->erase(side.row_sizes->begin() + static_cast<std::ptrdiff_t>(k));
    side.n1->erase(side.n1->begin() + static_cast<std::ptrdiff_t>(k));
    side.n0->erase(side.n0->begin() + static_cast<std::ptrdiff_t>(k));
    for (std::size_t& a : *side.row_assign) {
      if (a > k && a != SIZE_MAX) --a;
    }
  }
  (*side.row_assign)[row] = SIZE_MAX;
}

inline void subtract_row_counts(SideView side, std::size_t k,
                                const std::vector<long long>& m1,
                                const std::vector<long long>& m0) {
  for (std::size_t l = 0; l < m1.size(); ++l) {
    (*side.n1)[k][l] -= m1[l];
    (*side.n0)[k][l] -= m0[l];
  }
}

inline void add_row_counts(SideView side, std::size_t k, const std::vector<long long>& m1,
                           const std::vector<long long>& m0) {
  for (std::size_t l = 0; l < m1.size(); ++l) {
    (*side.n1)[k][l] += m1[l];
    (*side.n0)[k][l] += m0[l];
  }
}

// Unnormalized log weights for re-seating a removed row: one entry per
// existing role plus a final entry for a new role. Uses the evidence delta of
// adding the row's block counts, so terms shared by all candidates cancel.
inline std::vector<double> candidate_log_weights(const SideView& side,
                                                 const std::vector<long long>& m1,
                                                 const std::vector<long long>& m0,
                                                 std::size_t n_total, const DdmConfig& cfg) {
  const double g = cfg.beta_prior_strength;
  const double denom = std::log(static_cast<double>(n_total) - 1.0 + cfg.alpha);
  std::vector<double> log_w;
  log_w.reserve(side.row_sizes->size() + 1);
  for (std::size_t k = 0; k < side.row_sizes->size(); ++k) {
    double lw = std::log(static_cast<double>((*side.row_sizes)[k])) - denom;
    for (std::size_t l = 0; l < m1.size(); ++l) {
      const double a1 = static_cast<double>((*side.n1)[k][l]);
      const double a0 = static_cast<double>((*side.n0)[k][l]);
      lw += log_beta_fn(a1 + static_cast<double>(m1[l]) + g,
                        a0 + static_cast<double>(m0[l]) + g) -
            log_beta_fn(a1 + g, a0 + g);
    }
    log_w.push_back(lw);
  }
  double lw_new = std::log(cfg.alpha) - denom;
  const double base = log_beta_fn(g, g);
  for (std::size_t l = 0; l < m1.size(); ++l) {
    lw_new += log_beta_fn(static_cast<double>(m1[l]) + g,
                          static_cast<double>(m0[l]) + g) -
              base;
  }
  log_w.push_back(lw_new);
  return log_w;
}

inline void normalize_log_weights(std::vector<double>& log_w) {
  double mx = log_w[0];
  for (double w : log_w) mx = std::max(mx, w);
  double total = 0.0;
  for (double& w : log_w) {
    w = std::exp(w - mx);
    total += w;
  }
  for (double& w : log_w) w /= total;
}

// Full resample of one row. Returns true when the role assignment changed.
// `probs_out`, when given, receives the normalized candidate distribution
// (existing roles in order, then new-role).
inline bool resample_row(const BinaryMatrix& rows, SideView side, std::size_t row,
                         std::size_t n_total, const DdmConfig& cfg, Rng& rng,
                         std::vector<double>* probs_out = nullptr) {
  const std::size_t old_role = (*side.row_assign)[row];
  const std::size_t roles_before = side.row_sizes->size();
  std::vector<long long> m1, m0;
  row_block_counts(rows, row, *side.col_assign, *side.col_sizes, m1, m0);
  subtract_row_counts(side, old_role, m1, m0);
  remove_row(side, row);
  const bool old_erased = side.row_sizes->size() < roles_before;  // row was a singleton

  std::vector<double> log_w = candidate_log_weights(side, m1, m0, n_total, cfg);
  const std::size_t choice = rng.categorical_from_log(log_w);
  const bool opened_new = choice == side.row_sizes->size();
  if (probs_out != nullptr) {
    normalize_log_weights(log_w);
    *probs_out = log_w;
  }

  std::size_t new_role = choice;
  if (opened_new) {
    side.row_sizes->push_back(0);
    side.n1->emplace_back(side.col_sizes->size(), 0);
    side.n0->emplace_back(side.col_sizes->size(), 0);
  }
  (*side.row_assign)[row] = new_role;
  ++(*side.row_sizes)[new_role];
  add_row_counts(side, new_role, m1, m0);

  // Partition-level change; a singleton re-opening a fresh role is the same
  // partition up to relabeling. Without garbage collection the labels did not
  // shift, so the direct comparison is valid.
  if (old_erased) return !opened_new;
  if (opened_new) return true;
  return new_role != old_role;
}

inline SideView user_side(DdmState& st) {
  return SideView{&st.user_assign, &st.user_role_size, &st.perm_assign,
                  &st.perm_role_size, &st.n1, &st.n0};
}

}  // namespace detail

// In-place Gibbs update of one user's role. Returns true if it changed.
inline bool resample_user_inplace(DdmState& state, const BinaryMatrix& x, std::size_t i,
                                  const DdmConfig& cfg, Rng& rng,
                                  std::vector<double>* probs_out = nullptr) {
  return detail::resample_row(x, detail::user_side(state), i, state.num_users(), cfg, rng,
                              probs_out);
}

// Same for one permission's technical role; runs on the transposed matrix.
inline bool resample_permission_inplace(DdmState& state, const BinaryMatrix& x_transposed,
                                        std::size_t d, const DdmConfig& cfg, Rng& rng,
                                        std::vector<double>* probs_out = nullptr) {
  // The counter matrix is [user role][perm role]; swap axes for this side.
  const std::size_t k_count = state.user_role_size.size();
  const std::size_t l_count = state.perm_role_size.size();
  Counters n1t(l_count, std::vector<long long>(k_count, 0));
  Counters n0t(l_count, std::vector<long long>(k_count, 0));
  for (std::size_t k = 0; k < k_count; ++k) {
    for (std::size_t l = 0; l < l_count; ++l) {
      n1t[l][k] = state.n1[k][l];
      n0t[l][k] = state.n0[k][l];
    }
  }
  detail::SideView side{&state.perm_assign, &state.perm_role_size, &state.user_assign,
                        &state.user_role_size, &n1t, &n0t};
  const bool changed =
      detail::resample_row(x_transposed, side, d, state.num_perms(), cfg, rng, probs_out);
  const std::size_t new_l = state.perm_role_size.size();
  state.n1.assign(k_count, std::vector<long long>(new_l, 0));
  state.n0.assign(k_count, std::vector<long long>(new_l, 0));
  for (std::size_t l = 0; l < new_l; ++l) {
    for (std::size_t k = 0; k < k_count; ++k) {
      state.n1[k][l] = n1t[l][k];
      state.n0[k][l] = n0t[l][k];
    }
  }
  return changed;
}

// Value-semantics wrappers.
inline DdmState gibbs_resample_user(const DdmState& state, const BinaryMatrix& x,
                                    std::size_t i, const DdmConfig& cfg, Rng& rng) {
  DdmState next = state;
  resample_user_inplace(next, x, i, cfg, rng);
  return next;
}

inline DdmState gibbs_resample_permission(const DdmState& state, const BinaryMatrix& x,
                                          std::size_t d, const DdmConfig& cfg, Rng& rng) {
  DdmState next = state;
  resample_permission_inplace(next, x.transposed(), d, cfg, rng);
  return next;
}

// Candidate distribution a user resample would draw from (no mutation).
inline std::vector<double> user_assignment_distribution(const DdmState& state,
                                                        const BinaryMatrix& x, std::size_t i,
                                                        const DdmConfig& cfg) {
  DdmState scratch = state;
  Rng throwaway(0);
  std::vector<double> probs;
  resample_user_inplace(scratch, x, i, cfg, throwaway, &probs);
  return probs;
}

struct DdmFitDiagnostics {
  std::size_t alternations = 0;
  bool stagnated = false;
  double map_log_joint = 0.0;
  std::size_t num_business_roles = 0;
  std::size_t num_technical_roles = 0;
};

struct DdmFitResult {
  HierRbacConfig config;
  DdmState map_state;
  DdmFitDiagnostics diagnostics;
};

namespace detail {

inline std::vector<std::size_t> crp_draw(std::size_t n, double alpha, Rng& rng) {
  std::vector<std::size_t> assign(n);
  std::vector<std::size_t> sizes;
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.uniform01() * (static_cast<double>(i) + alpha);
    double acc = 0.0;
    std::size_t pick = sizes.size();
    for (std::size_t k = 0; k < sizes.size(); ++k) {
      acc += static_cast<double>(sizes[k]);
      if (u < acc) {
        pick = k;
        break;
      }
    }
    if (pick == sizes.size()) sizes.push_back(0);
    ++sizes[pick];
    assign[i] = pick;
  }
  return assign;
}

}  // namespace detail

// Alternating Gibbs sampling with MAP tracking. Initial partitions are drawn
// from the CRP prior. Stops after max_alternations, or once assignments have
// not changed for stagnation_window consecutive alternations. The returned
// configuration binarizes V by thresholding each block's posterior mean at
// one half.
inline DdmFitResult fit_ddm(const BinaryMatrix& x, const DdmConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const BinaryMatrix xt = x.transposed();

  DdmState state = DdmState::from_assignments(
      x, detail::crp_draw(x.rows(), cfg.alpha, rng), detail::crp_draw(x.cols(), cfg.alpha, rng));

  DdmState best = state;
  double best_joint = state.log_joint(cfg);

  DdmFitDiagnostics diag;
  std::size_t quiet_alternations = 0;
  for (std::size_t t = 0; t < cfg.max_alternations; ++t) {
    diag.alternations = t + 1;
    std::size_t changes = 0;
    for (std::size_t i = 0; i < x.rows(); ++i) {
      if (resample_user_inplace(state, x, i, cfg, rng)) ++changes;
      const double joint = state.log_joint(cfg);
      if (joint > best_joint) {
        best_joint = joint;
        best = state;
      }
    }
    for (std::size_t d = 0; d < x.cols(); ++d) {
      if (resample_permission_inplace(state, xt, d, cfg, rng)) ++changes;
      const double joint = state.log_joint(cfg);
      if (joint > best_joint) {
        best_joint = joint;
        best = state;
      }
    }
    quiet_alternations = (changes == 0) ? quiet_alternations + 1 : 0;
    if (quiet_alternations >= cfg.stagnation_window) {
      diag.stagnated = true;
      break;
    }
  }

  const std::size_t k_count = best.num_business_roles();
  const std::size_t l_count = best.num_technical_roles();
  BinaryMatrix z(x.rows(), k_count);
  for (std::size_t i = 0; i < x.rows(); ++i) z.set(i, best.user_assign[i], true);
  BinaryMatrix y(l_count, x.cols());
  for (std::size_t d = 0; d < x.cols(); ++d) y.set(best.perm_assign[d], d, true);
  BinaryMatrix v(k_count, l_count);
  const double g = cfg.beta_prior_strength;
  for (std::size_t k = 0; k < k_count; ++k) {
    for (std::size_t l = 0; l < l_count; ++l) {
      const double mean = (static_cast<double>(best.n1[k][l]) + g) /
                          (static_cast<double>(best.n1[k][l] + best.n0[k][l]) + 2.0 * g);
      if (mean > 0.5) v.set(k, l, true);
    }
  }

  diag.map_log_joint = best_joint;
  diag.num_business_roles = k_count;
  diag.num_technical_roles = l_count;
  return DdmFitResult{HierRbacConfig(std::move(z), std::move(v), std::move(y)),
                      std::move(best), diag};
}

// Z o V o Y.
inline BinaryMatrix ddm_reconstruct(const HierRbacConfig& config) {
  return config.reconstruct();
}

}  // namespace rolemine::ddm
