// Apache License, Version 2.0, refer to LICENSE.txt

#include <cmath>
#include <map>

#include <gtest/gtest.h>

#include "rolemine/ddm.hpp"
#include "rolemine/rng.hpp"
#include "support/oracles.hpp"

using namespace rolemine;
using namespace rolemine::ddm;

namespace {

BinaryMatrix random_binary(std::size_t rows, std::size_t cols, double density, Rng& rng) {
  BinaryMatrix m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      if (rng.bernoulli(density)) m.set(i, j, true);
    }
  }
  return m;
}

double partition_pair_joint(const BinaryMatrix& x, const std::vector<std::size_t>& z,
                            const std::vector<std::size_t>& y, const DdmConfig& cfg) {
  return DdmState::from_assignments(x, z, y).log_joint(cfg);
}

}  // namespace

TEST(DpPrior, DirectSubstitution) {
  EXPECT_DOUBLE_EQ(dp_prior({3, 4, 2}, 10, 1.0, 0), 0.3);
}

TEST(DpPrior, NewRole) {
  EXPECT_DOUBLE_EQ(dp_prior({3, 4, 2}, 10, 1.0, std::nullopt), 0.1);
}

TEST(DpPrior, ProbabilitiesSumToOne) {
  const std::vector<std::size_t> counts{3, 4, 2};  // excludes the reassigned item
  double total = dp_prior(counts, 10, 1.0, std::nullopt);
  for (std::size_t k = 0; k < counts.size(); ++k) total += dp_prior(counts, 10, 1.0, k);
  EXPECT_NEAR(total, 1.0, 1e-15);
}

TEST(DpPrior, RejectsNonPositiveAlpha) {
  EXPECT_THROW(dp_prior({1}, 2, 0.0, 0), ValidationError);
}

TEST(LogEvidence, NoBlocksIsZero) {
  EXPECT_EQ(log_evidence({}, {}, 0.5), 0.0);
}

TEST(LogEvidence, FactorialIdentity) {
  // One block, n1=2, n0=1, gamma=1: B(3,2)/B(1,1) = 2!*1!/4! = 1/12.
  const double got = log_evidence({{2}}, {{1}}, 1.0);
  EXPECT_NEAR(got, std::log(1.0 / 12.0), 1e-12);
}

TEST(LogEvidence, MatchesQuadraturePerBlock) {
  Rng rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    const double gamma_prior = 0.3 + 2.7 * rng.uniform01();
    Counters n1(2, std::vector<long long>(2));
    Counters n0(2, std::vector<long long>(2));
    double expected = 0.0;
    for (std::size_t k = 0; k < 2; ++k) {
      for (std::size_t l = 0; l < 2; ++l) {
        n1[k][l] = static_cast<long long>(rng.uniform_below(20));
        n0[k][l] = static_cast<long long>(rng.uniform_below(20));
        const double a = static_cast<double>(n1[k][l]);
        const double b = static_cast<double>(n0[k][l]);
        const double integral = oracles::tanh_sinh_01([&](double beta, double one_minus) {
          return std::exp(a * std::log(one_minus) + b * std::log(beta) +
                          (gamma_prior - 1.0) * (std::log(beta) + std::log(one_minus)) -
                          log_beta_fn(gamma_prior, gamma_prior));
        });
        expected += std::log(integral);
      }
    }
    EXPECT_NEAR(log_evidence(n1, n0, gamma_prior), expected, 1e-6);
  }
}

TEST(LogEvidence, EmptyRoleAddsNothing) {
  Counters n1{{3, 1}, {0, 7}};
  Counters n0{{2, 5}, {4, 1}};
  const double base = log_evidence(n1, n0, 0.5);
  n1.push_back({0, 0});
  n0.push_back({0, 0});
  EXPECT_EQ(log_evidence(n1, n0, 0.5), base);
}

TEST(DdmState, FromAssignmentsCountsBlocks) {
  const BinaryMatrix x = BinaryMatrix::from_rows({{1, 1, 0}, {1, 0, 0}, {0, 0, 1}});
  const DdmState st = DdmState::from_assignments(x, {0, 0, 1}, {0, 0, 1});
  EXPECT_EQ(st.num_business_roles(), 2u);
  EXPECT_EQ(st.num_technical_roles(), 2u);
  EXPECT_EQ(st.n1[0][0], 3);  // users {0,1} x perms {0,1}: bits 1,1,1,0
  EXPECT_EQ(st.n0[0][0], 1);
  EXPECT_EQ(st.n1[0][1], 0);
  EXPECT_EQ(st.n0[0][1], 2);
  EXPECT_EQ(st.n1[1][1], 1);
  EXPECT_EQ(st.n0[1][1], 0);
  for (std::size_t k = 0; k < 2; ++k) {
    for (std::size_t l = 0; l < 2; ++l) {
      EXPECT_EQ(st.n1[k][l] + st.n0[k][l],
                static_cast<long long>(st.user_role_size[k] * st.perm_role_size[l]));
    }
  }
}

TEST(GibbsResampleUser, TinyAlphaRejoinsTheOnlyRole) {
  const BinaryMatrix x = BinaryMatrix::from_rows({{1, 1}, {1, 1}, {1, 1}});
  const DdmState st = DdmState::from_assignments(x, {0, 0, 0}, {0, 0});
  DdmConfig cfg;
  cfg.alpha = 1e-9;
  const std::vector<double> probs = user_assignment_distribution(st, x, 1, cfg);
  ASSERT_EQ(probs.size(), 2u);  // existing role + new
  EXPECT_GT(probs[0], 1.0 - 1e-6);
}

TEST(GibbsResampleUser, DistributionIsNormalized) {
  Rng rng(22);
  const BinaryMatrix x = random_binary(6, 5, 0.4, rng);
  const DdmState st =
      DdmState::from_assignments(x, {0, 1, 0, 2, 1, 0}, {0, 1, 1, 0, 2});
  DdmConfig cfg;
  for (std::size_t i = 0; i < 6; ++i) {
    const std::vector<double> probs = user_assignment_distribution(st, x, i, cfg);
    double total = 0.0;
    for (double p : probs) total += p;
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(GibbsResampleUser, SingleUserGoesToFreshRole) {
  const BinaryMatrix x = BinaryMatrix::from_rows({{1, 0, 1}});
  const DdmState st = DdmState::from_assignments(x, {0}, {0, 1, 0});
  DdmConfig cfg;
  const std::vector<double> probs = user_assignment_distribution(st, x, 0, cfg);
  ASSERT_EQ(probs.size(), 1u);
  EXPECT_DOUBLE_EQ(probs[0], 1.0);
  Rng rng(1);
  const DdmState next = gibbs_resample_user(st, x, 0, cfg, rng);
  EXPECT_EQ(next.num_business_roles(), 1u);
  EXPECT_EQ(next.user_assign[0], 0u);
}

TEST(GibbsResampleUser, IdenticalUsersCoAssign) {
  // Two identical, highly structured rows: after many sweeps they share a
  // role most of the time.
  std::vector<std::vector<int>> rows(2, std::vector<int>(8, 0));
  for (std::size_t d = 0; d < 4; ++d) rows[0][d] = rows[1][d] = 1;
  const BinaryMatrix x = BinaryMatrix::from_rows(rows);
  DdmConfig cfg;
  cfg.alpha = 0.1;
  cfg.beta_prior_strength = 0.5;
  Rng rng(33);
  DdmState st = DdmState::from_assignments(x, {0, 1}, {0, 0, 0, 0, 1, 1, 1, 1});
  std::size_t together = 0;
  const std::size_t sweeps = 1000;
  for (std::size_t t = 0; t < sweeps; ++t) {
    for (std::size_t i = 0; i < 2; ++i) resample_user_inplace(st, x, i, cfg, rng);
    if (st.num_business_roles() == 1) ++together;
  }
  EXPECT_GT(static_cast<double>(together) / static_cast<double>(sweeps), 0.9);
}

TEST(GibbsResampleUser, CountersMatchRecountAfterSteps) {
  Rng rng(23);
  const BinaryMatrix x = random_binary(7, 6, 0.5, rng);
  DdmConfig cfg;
  cfg.seed = 17;
  DdmState st = DdmState::from_assignments(x, {0, 0, 1, 1, 2, 0, 1}, {0, 1, 0, 1, 2, 2});
  const BinaryMatrix xt = x.transposed();
  Rng sampler_rng(99);
  for (int step = 0; step < 50; ++step) {
    const std::size_t i = sampler_rng.uniform_below(7);
    resample_user_inplace(st, x, i, cfg, sampler_rng);
    const std::size_t d = sampler_rng.uniform_below(6);
    resample_permission_inplace(st, xt, d, cfg, sampler_rng);
    const DdmState recount = DdmState::from_assignments(x, st.user_assign, st.perm_assign);
    EXPECT_EQ(st.n1, recount.n1);
    EXPECT_EQ(st.n0, recount.n0);
    EXPECT_EQ(st.user_role_size, recount.user_role_size);
    EXPECT_EQ(st.perm_role_size, recount.perm_role_size);
  }
}

TEST(GibbsResamplePermission, TranspositionConsistency) {
  // Resampling permission d on X is resampling user d on X^T with the
  // partitions swapped, draw for draw.
  Rng rng(24);
  const BinaryMatrix x = random_binary(5, 4, 0.5, rng);
  const BinaryMatrix xt = x.transposed();
  const std::vector<std::size_t> z{0, 1, 0, 2, 1};
  const std::vector<std::size_t> y{0, 1, 1, 0};
  DdmConfig cfg;
  for (std::size_t d = 0; d < 4; ++d) {
    DdmState st = DdmState::from_assignments(x, z, y);
    DdmState mirror = DdmState::from_assignments(xt, y, z);
    Rng rng_a(1234);
    Rng rng_b(1234);
    resample_permission_inplace(st, xt, d, cfg, rng_a);
    resample_user_inplace(mirror, xt, d, cfg, rng_b);
    EXPECT_EQ(st.perm_assign, mirror.user_assign);
    EXPECT_EQ(st.user_assign, mirror.perm_assign);
  }
}

TEST(GibbsResamplePermission, SinglePermissionGoesToFreshRole) {
  const BinaryMatrix x = BinaryMatrix::from_rows({{1}, {0}, {1}});
  const DdmState st = DdmState::from_assignments(x, {0, 1, 0}, {0});
  DdmConfig cfg;
  Rng rng(5);
  const DdmState next = gibbs_resample_permission(st, x, 0, cfg, rng);
  EXPECT_EQ(next.num_technical_roles(), 1u);
  EXPECT_EQ(next.perm_assign[0], 0u);
}

TEST(FitDdm, RecoversBlockDiagonalStructure) {
  // Two pure user blocks x two pure permission blocks.
  const std::size_t n = 16, d = 12;
  BinaryMatrix x(n, d);
  for (std::size_t i = 0; i < n / 2; ++i) {
    for (std::size_t j = 0; j < d / 2; ++j) x.set(i, j, true);
  }
  for (std::size_t i = n / 2; i < n; ++i) {
    for (std::size_t j = d / 2; j < d; ++j) x.set(i, j, true);
  }
  std::size_t successes = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    DdmConfig cfg;
    cfg.seed = seed;
    const DdmFitResult fit = fit_ddm(x, cfg);
    if (fit.diagnostics.num_business_roles == 2 &&
        fit.diagnostics.num_technical_roles == 2 &&
        fit.config.reconstruct() == x) {
      ++successes;
    }
  }
  EXPECT_GE(successes, 9u);
}

TEST(FitDdm, AllZerosPrefersSinglePartition) {
  const BinaryMatrix x(5, 5);
  DdmConfig cfg;
  cfg.alpha = 0.5;
  cfg.seed = 7;
  const DdmFitResult fit = fit_ddm(x, cfg);
  const double map_joint = fit.diagnostics.map_log_joint;
  // MAP beats every partition pair; with all-zero data and small alpha the
  // single/single partition is among the maximizers.
  const auto partitions = oracles::all_partitions(5);
  for (const auto& z : partitions) {
    for (const auto& y : partitions) {
      EXPECT_GE(map_joint + 1e-9, partition_pair_joint(x, z, y, cfg));
    }
  }
  EXPECT_EQ(fit.diagnostics.num_business_roles, 1u);
  EXPECT_EQ(fit.diagnostics.num_technical_roles, 1u);
}

TEST(FitDdm, TinyInstanceReachesExhaustiveOptimum) {
  Rng rng(25);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const BinaryMatrix x = random_binary(3, 3, 0.5, rng);
    DdmConfig cfg;
    cfg.seed = seed;
    const DdmFitResult fit = fit_ddm(x, cfg);
    double best = -1e300;
    const auto partitions = oracles::all_partitions(3);
    for (const auto& z : partitions) {
      for (const auto& y : partitions) {
        best = std::max(best, partition_pair_joint(x, z, y, cfg));
      }
    }
    // Log joints are negative; within 1% of the optimum.
    EXPECT_GE(fit.diagnostics.map_log_joint, best - std::abs(best) * 0.01);
  }
}

TEST(FitDdm, MapStateMatchesReportedJoint) {
  Rng rng(26);
  const BinaryMatrix x = random_binary(6, 6, 0.4, rng);
  DdmConfig cfg;
  cfg.seed = 11;
  const DdmFitResult fit = fit_ddm(x, cfg);
  EXPECT_NEAR(fit.map_state.log_joint(cfg), fit.diagnostics.map_log_joint, 1e-9);
  const DdmState recount =
      DdmState::from_assignments(x, fit.map_state.user_assign, fit.map_state.perm_assign);
  EXPECT_EQ(fit.map_state.n1, recount.n1);
  EXPECT_EQ(fit.map_state.n0, recount.n0);
}

TEST(FitDdm, MapJointDominatesVisitedStates) {
  // Replay the sampler and confirm the fit's MAP tracking saw nothing better.
  Rng rng(27);
  const BinaryMatrix x = random_binary(6, 5, 0.5, rng);
  DdmConfig cfg;
  cfg.seed = 3;
  cfg.max_alternations = 40;
  const DdmFitResult fit = fit_ddm(x, cfg);

  Rng replay(cfg.seed);
  const BinaryMatrix xt = x.transposed();
  DdmState st = DdmState::from_assignments(
      x, ddm::detail::crp_draw(x.rows(), cfg.alpha, replay),
      ddm::detail::crp_draw(x.cols(), cfg.alpha, replay));
  double best_seen = st.log_joint(cfg);
  std::size_t quiet = 0;
  for (std::size_t t = 0; t < cfg.max_alternations; ++t) {
    std::size_t changes = 0;
    for (std::size_t i = 0; i < x.rows(); ++i) {
      if (resample_user_inplace(st, x, i, cfg, replay)) ++changes;
      best_seen = std::max(best_seen, st.log_joint(cfg));
    }
    for (std::size_t d = 0; d < x.cols(); ++d) {
      if (resample_permission_inplace(st, xt, d, cfg, replay)) ++changes;
      best_seen = std::max(best_seen, st.log_joint(cfg));
    }
    quiet = (changes == 0) ? quiet + 1 : 0;
    if (quiet >= cfg.stagnation_window) break;
  }
  EXPECT_NEAR(fit.diagnostics.map_log_joint, best_seen, 1e-9);
}

TEST(FitDdm, RoleCountDistributionInvariantUnderUserPermutation) {
  // Exchangeability smoke test: the posterior over the number of business
  // roles should not depend on the order of the users.
  Rng data_rng(28);
  const BinaryMatrix x = random_binary(8, 8, 0.4, data_rng);
  BinaryMatrix x_perm(8, 8);
  std::vector<std::size_t> perm{5, 2, 7, 0, 3, 6, 1, 4};
  for (std::size_t i = 0; i < 8; ++i) x_perm.copy_row_from(x, perm[i], i);

  DdmConfig cfg;
  const auto collect = [&](const BinaryMatrix& data, std::uint64_t seed) {
    Rng rng(seed);
    const BinaryMatrix dt = data.transposed();
    DdmState st = DdmState::from_assignments(
        data, ddm::detail::crp_draw(data.rows(), cfg.alpha, rng),
        ddm::detail::crp_draw(data.cols(), cfg.alpha, rng));
    std::vector<std::size_t> hist(9, 0);
    for (std::size_t t = 0; t < 600; ++t) {
      for (std::size_t i = 0; i < data.rows(); ++i) {
        resample_user_inplace(st, data, i, cfg, rng);
      }
      for (std::size_t d = 0; d < data.cols(); ++d) {
        resample_permission_inplace(st, dt, d, cfg, rng);
      }
      if (t >= 100) ++hist[std::min<std::size_t>(st.num_business_roles(), 8)];
    }
    return hist;
  };
  const auto h1 = collect(x, 1001);
  const auto h2 = collect(x_perm, 2002);
  EXPECT_GT(oracles::chi_square_two_sample_p(h1, h2), 0.01);
}

TEST(DdmReconstruct, ComposesBooleanProducts) {
  Rng rng(29);
  const BinaryMatrix z = random_binary(4, 2, 0.5, rng);
  const BinaryMatrix v = random_binary(2, 3, 0.5, rng);
  const BinaryMatrix y = random_binary(3, 5, 0.5, rng);
  const HierRbacConfig config(z, v, y);
  EXPECT_EQ(ddm_reconstruct(config),
            oracles::bool_product_loop(oracles::bool_product_loop(z, v), y));
}
