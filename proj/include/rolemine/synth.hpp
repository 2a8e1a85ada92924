// Apache License, Version 2.0, refer to LICENSE.txt
//
// Synthetic access-control data with retained ground truth. Two generators:
// a flat one (random roles, random role combinations per user) and a
// nonparametric hierarchical one (CRP partitions on both axes joined by
// Beta-Bernoulli blocks). Noise replaces a fixed number of distinct cells
// with fair coin flips, so an expected half of the noised cells keep their
// value.

#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rolemine/binary_matrix.hpp"
#include "rolemine/ddm.hpp"
#include "rolemine/rbac_config.hpp"
#include "rolemine/rng.hpp"

namespace rolemine::synth {

struct SyntheticDataset {
  BinaryMatrix x_observed;
  BinaryMatrix x_clean;
  std::optional<FlatRbacConfig> true_flat;
  std::optional<HierRbacConfig> true_hier;
  double noise_fraction = 0.0;
  std::string generator;  // "mac" | "ddm"
  std::uint64_t seed = 0;
  std::vector<std::size_t> noise_cells;  // row-major indices of randomized cells
};

struct GenMacConfig {
  std::size_t users = 400;
  std::size_t perms = 50;
  std::size_t roles = 10;
  std::size_t max_roles_per_user = 2;
  double noise = 0.0;
  double role_density = 0.3;  // per-role permission probability
  std::uint64_t seed = 0;
};

struct GenDdmConfig {
  std::size_t users = 400;
  std::size_t perms = 50;
  double alpha = 1.0;
  double beta_prior_strength = 0.5;
  double noise = 0.0;
  std::uint64_t seed = 0;
};

namespace detail {

inline void apply_coin_noise(SyntheticDataset& data, double noise, Rng& rng) {
  data.x_observed = data.x_clean;
  data.noise_fraction = noise;
  const std::size_t cells = data.x_clean.rows() * data.x_clean.cols();
  const std::size_t count = static_cast<std::size_t>(
      std::floor(noise * static_cast<double>(cells)));
  data.noise_cells = rng.sample_without_replacement(count, cells);
  for (std::size_t cell : data.noise_cells) {
    const std::size_t i = cell / data.x_clean.cols();
    const std::size_t d = cell % data.x_clean.cols();
    data.x_observed.set(i, d, rng.bernoulli(0.5));
  }
}

}  // namespace detail

// Flat generator: distinct nonempty role rows at the given density, each user
// a uniformly random nonempty role subset of size <= max_roles_per_user.
inline SyntheticDataset gen_mac_data(const GenMacConfig& cfg) {
  if (cfg.users == 0 || cfg.perms == 0 || cfg.roles == 0) {
    throw ValidationError("gen_mac_data: users, perms and roles must be positive");
  }
  if (cfg.max_roles_per_user == 0 || cfg.max_roles_per_user > cfg.roles) {
    throw ValidationError("gen_mac_data: max_roles_per_user must lie in [1, roles]");
  }
  if (!(cfg.noise >= 0.0 && cfg.noise <= 1.0)) {
    throw ValidationError("gen_mac_data: noise must lie in [0,1]");
  }
  if (!(cfg.role_density > 0.0 && cfg.role_density < 1.0)) {
    throw ValidationError("gen_mac_data: role_density must lie in (0,1)");
  }
  if (cfg.perms < 64 && cfg.roles > (std::size_t{1} << cfg.perms)) {
    throw ValidationError("gen_mac_data: cannot draw " + std::to_string(cfg.roles) +
                          " distinct roles over " + std::to_string(cfg.perms) +
                          " permissions");
  }
  Rng rng(cfg.seed);

  BinaryMatrix u(cfg.roles, cfg.perms);
  for (std::size_t k = 0; k < cfg.roles; ++k) {
    for (std::size_t attempt = 0;; ++attempt) {
      if (attempt >= 1000) {
        throw ValidationError("gen_mac_data: could not draw distinct nonempty roles");
      }
      std::size_t ones = 0;
      for (std::size_t d = 0; d < cfg.perms; ++d) {
        const bool bit = rng.bernoulli(cfg.role_density);
        u.set(k, d, bit);
        if (bit) ++ones;
      }
      bool duplicate = false;
      for (std::size_t k2 = 0; k2 < k && !duplicate; ++k2) {
        duplicate = u.rows_equal(k, k2);
      }
      if (ones > 0 && !duplicate) break;
    }
  }

  // Subset size m drawn with probability proportional to C(roles, m).
  std::vector<double> size_weights(cfg.max_roles_per_user + 1, 0.0);
  double binom = static_cast<double>(cfg.roles);
  for (std::size_t m = 1; m <= cfg.max_roles_per_user; ++m) {
    size_weights[m] = size_weights[m - 1] + binom;
    binom = binom * static_cast<double>(cfg.roles - m) / static_cast<double>(m + 1);
  }
  BinaryMatrix z(cfg.users, cfg.roles);
  for (std::size_t i = 0; i < cfg.users; ++i) {
    const double pick = rng.uniform01() * size_weights[cfg.max_roles_per_user];
    std::size_t m = cfg.max_roles_per_user;
    for (std::size_t cand = 1; cand <= cfg.max_roles_per_user; ++cand) {
      if (pick < size_weights[cand]) {
        m = cand;
        break;
      }
    }
    for (std::size_t k : rng.sample_without_replacement(m, cfg.roles)) z.set(i, k, true);
  }

  SyntheticDataset data{bool_mat_prod(z, u), bool_mat_prod(z, u),
                        FlatRbacConfig(std::move(z), std::move(u)), std::nullopt,
                        0.0, "mac", cfg.seed, {}};
  detail::apply_coin_noise(data, cfg.noise, rng);
  return data;
}

// Hierarchical generator: user and permission partitions from sequential CRP
// draws, block connection probabilities from the symmetric Beta prior.
inline SyntheticDataset gen_ddm_data(const GenDdmConfig& cfg) {
  if (cfg.users == 0 || cfg.perms == 0) {
    throw ValidationError("gen_ddm_data: users and perms must be positive");
  }
  if (!(cfg.alpha > 0.0) || !(cfg.beta_prior_strength > 0.0)) {
    throw ValidationError("gen_ddm_data: alpha and beta_prior_strength must be positive");
  }
  if (!(cfg.noise >= 0.0 && cfg.noise <= 1.0)) {
    throw ValidationError("gen_ddm_data: noise must lie in [0,1]");
  }
  Rng rng(cfg.seed);
  const std::vector<std::size_t> user_assign = ddm::detail::crp_draw(cfg.users, cfg.alpha, rng);
  const std::vector<std::size_t> perm_assign = ddm::detail::crp_draw(cfg.perms, cfg.alpha, rng);
  std::size_t k_count = 0, l_count = 0;
  for (std::size_t k : user_assign) k_count = std::max(k_count, k + 1);
  for (std::size_t l : perm_assign) l_count = std::max(l_count, l + 1);

  BinaryMatrix z(cfg.users, k_count);
  for (std::size_t i = 0; i < cfg.users; ++i) z.set(i, user_assign[i], true);
  BinaryMatrix y(l_count, cfg.perms);
  for (std::size_t d = 0; d < cfg.perms; ++d) y.set(perm_assign[d], d, true);
  BinaryMatrix v(k_count, l_count);
  for (std::size_t k = 0; k < k_count; ++k) {
    for (std::size_t l = 0; l < l_count; ++l) {
      const double absent = rng.beta(cfg.beta_prior_strength, cfg.beta_prior_strength);
      if (rng.bernoulli(1.0 - absent)) v.set(k, l, true);
    }
  }

  HierRbacConfig truth(std::move(z), std::move(v), std::move(y));
  BinaryMatrix clean = truth.reconstruct();
  SyntheticDataset data{clean, clean, std::nullopt, std::move(truth),
                        0.0, "ddm", cfg.seed, {}};
  detail::apply_coin_noise(data, cfg.noise, rng);
  return data;
}

}  // namespace rolemine::synth
