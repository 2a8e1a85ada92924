// Apache License, Version 2.0, refer to LICENSE.txt

#include <cmath>

#include <gtest/gtest.h>

#include "rolemine/eval.hpp"
#include "rolemine/mac.hpp"
#include "rolemine/rng.hpp"
#include "rolemine/synth.hpp"
#include "support/oracles.hpp"

using namespace rolemine;
using namespace rolemine::eval;

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

}  // namespace

TEST(SplitUsers, EightyTwentyRowCounts) {
  Rng rng(51);
  const BinaryMatrix x = random_binary(10, 4, 0.5, rng);
  SplitSpec spec;
  const UserSplit split = split_users(x, spec);
  EXPECT_EQ(split.train.rows(), 8u);
  EXPECT_EQ(split.validation.rows(), 2u);
}

TEST(SplitUsers, DeterministicGivenSeed) {
  Rng rng(52);
  const BinaryMatrix x = random_binary(12, 5, 0.5, rng);
  SplitSpec spec;
  spec.seed = 321;
  const UserSplit a = split_users(x, spec);
  const UserSplit b = split_users(x, spec);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.validation, b.validation);
  EXPECT_EQ(a.train_index, b.train_index);
}

TEST(SplitUsers, IndexMapsPartitionTheUsers) {
  Rng rng(53);
  const BinaryMatrix x = random_binary(11, 3, 0.5, rng);
  SplitSpec spec;
  spec.train_fraction = 0.7;
  spec.seed = 5;
  const UserSplit split = split_users(x, spec);
  std::vector<bool> seen(11, false);
  for (std::size_t idx : split.train_index) {
    EXPECT_FALSE(seen[idx]);
    seen[idx] = true;
  }
  for (std::size_t idx : split.validation_index) {
    EXPECT_FALSE(seen[idx]);
    seen[idx] = true;
  }
  for (bool s : seen) EXPECT_TRUE(s);
  // rows were copied faithfully
  for (std::size_t i = 0; i < split.train.rows(); ++i) {
    EXPECT_EQ(split.train.row_string(i), x.row_string(split.train_index[i]));
  }
}

TEST(SplitUsers, RejectsDegenerateSplits) {
  Rng rng(54);
  const BinaryMatrix x = random_binary(2, 3, 0.5, rng);
  SplitSpec spec;
  spec.train_fraction = 0.1;  // rounds to zero training rows
  EXPECT_THROW(split_users(x, spec), ValidationError);
  const BinaryMatrix one(1, 3);
  SplitSpec ok;
  EXPECT_THROW(split_users(one, ok), ValidationError);
}

TEST(TransferRoles, ExactRowGetsExactRoles) {
  const BinaryMatrix x1 = BinaryMatrix::from_rows({{1, 1, 0}, {0, 0, 1}});
  const BinaryMatrix z_hat = BinaryMatrix::from_rows({{1, 0}, {0, 1}});
  const BinaryMatrix x2 = BinaryMatrix::from_rows({{0, 0, 1}});
  const BinaryMatrix z_prime = transfer_roles(x1, z_hat, x2);
  EXPECT_EQ(z_prime, BinaryMatrix::from_rows({{0, 1}}));
}

TEST(TransferRoles, SelfTransferIsIdentityForDistinctRows) {
  Rng rng(55);
  BinaryMatrix x1(6, 8);
  for (std::size_t i = 0; i < 6; ++i) {
    // distinct rows by construction
    x1.set(i, i, true);
    if (rng.bernoulli(0.5)) x1.set(i, 6, true);
  }
  const BinaryMatrix z_hat = random_binary(6, 3, 0.5, rng);
  EXPECT_EQ(transfer_roles(x1, z_hat, x1), z_hat);
}

TEST(TransferRoles, MatchesLoopOracleWithTies) {
  const BinaryMatrix x1 = BinaryMatrix::from_rows({{1, 0, 0}, {0, 1, 0}, {1, 1, 0}});
  const BinaryMatrix z_hat = BinaryMatrix::from_rows({{1, 0}, {0, 1}, {1, 1}});
  const BinaryMatrix x2 = BinaryMatrix::from_rows({{1, 0, 0}, {1, 1, 1}, {0, 0, 0}});
  const BinaryMatrix z_prime = transfer_roles(x1, z_hat, x2);
  // row 0: exact match to row 0. row 1: distance 1 to row 2. row 2: distance
  // 1 to rows 0 and 1 -> lowest index wins.
  EXPECT_EQ(z_prime, BinaryMatrix::from_rows({{1, 0}, {1, 1}, {1, 0}}));
}

TEST(TransferRoles, SelfTransferErrorBoundedByTrainingError) {
  // Holds whenever equal training rows carry equal role rows, which any
  // deterministic fit produces; enforce that consistency here.
  Rng rng(56);
  for (int trial = 0; trial < 10; ++trial) {
    const BinaryMatrix x1 = random_binary(8, 6, 0.4, rng);
    BinaryMatrix z_hat = random_binary(8, 3, 0.4, rng);
    for (std::size_t i = 0; i < x1.rows(); ++i) {
      for (std::size_t j = 0; j < i; ++j) {
        if (x1.rows_equal(i, j)) {
          z_hat.copy_row_from(z_hat, j, i);
          break;
        }
      }
    }
    const BinaryMatrix u_hat = random_binary(3, 6, 0.4, rng);
    const double train_err =
        static_cast<double>(hamming(bool_mat_prod(z_hat, u_hat), x1)) /
        static_cast<double>(x1.rows() * x1.cols());
    const BinaryMatrix z_prime = transfer_roles(x1, z_hat, x1);
    EXPECT_LE(generalization_error(z_prime, u_hat, x1), train_err + 1e-12);
  }
}

TEST(GeneralizationError, PerfectModelScoresZero) {
  Rng rng(57);
  const BinaryMatrix z = random_binary(5, 2, 0.5, rng);
  const BinaryMatrix u = random_binary(2, 6, 0.5, rng);
  const BinaryMatrix x = bool_mat_prod(z, u);
  EXPECT_EQ(generalization_error(z, u, x), 0.0);
}

TEST(GeneralizationError, AllWrongScoresOne) {
  const BinaryMatrix z(3, 2);
  const BinaryMatrix u(2, 4);
  BinaryMatrix x(3, 4);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 4; ++j) x.set(i, j, true);
  }
  EXPECT_EQ(generalization_error(z, u, x), 1.0);
}

TEST(GeneralizationError, MatchesDirectComputation) {
  Rng rng(58);
  const BinaryMatrix z = random_binary(4, 2, 0.5, rng);
  const BinaryMatrix u = random_binary(2, 5, 0.5, rng);
  const BinaryMatrix x = random_binary(4, 5, 0.5, rng);
  const BinaryMatrix recon = oracles::bool_product_loop(z, u);
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      if (recon.get(i, j) != x.get(i, j)) ++wrong;
    }
  }
  EXPECT_DOUBLE_EQ(generalization_error(z, u, x), static_cast<double>(wrong) / 20.0);
}

TEST(ErrorBreakdown, PerfectReconstructionIsAllCorrect) {
  Rng rng(59);
  const BinaryMatrix clean = random_binary(4, 4, 0.5, rng);
  const BinaryMatrix observed = random_binary(4, 4, 0.5, rng);
  const ErrorBreakdown b = error_breakdown(clean, observed, clean);
  EXPECT_EQ(b.new_fp, 0.0);
  EXPECT_EQ(b.new_fn, 0.0);
  EXPECT_EQ(b.repeated_fp, 0.0);
  EXPECT_EQ(b.repeated_fn, 0.0);
  EXPECT_EQ(b.correct, 1.0);
}

TEST(ErrorBreakdown, ReconstructingTheObservedRepeatsItsNoise) {
  Rng rng(60);
  const BinaryMatrix clean = random_binary(4, 4, 0.5, rng);
  BinaryMatrix observed = clean;
  observed.flip(0, 0);
  observed.flip(1, 2);
  observed.flip(3, 3);
  const ErrorBreakdown b = error_breakdown(observed, observed, clean);
  EXPECT_EQ(b.new_fp + b.new_fn, 0.0);
  EXPECT_DOUBLE_EQ(b.repeated_fp + b.repeated_fn, 3.0 / 16.0);
}

TEST(ErrorBreakdown, HandLabeledCategories) {
  // Cells: (0,0) new FP, (0,1) new FN, (0,2) repeated FP, (1,0) repeated FN.
  const BinaryMatrix clean = BinaryMatrix::from_rows({{0, 1, 0}, {1, 0, 0}});
  const BinaryMatrix observed = BinaryMatrix::from_rows({{0, 1, 1}, {0, 0, 0}});
  const BinaryMatrix recon = BinaryMatrix::from_rows({{1, 0, 1}, {0, 0, 0}});
  const ErrorBreakdown b = error_breakdown(recon, observed, clean);
  EXPECT_DOUBLE_EQ(b.new_fp, 1.0 / 6.0);
  EXPECT_DOUBLE_EQ(b.new_fn, 1.0 / 6.0);
  EXPECT_DOUBLE_EQ(b.repeated_fp, 1.0 / 6.0);
  EXPECT_DOUBLE_EQ(b.repeated_fn, 1.0 / 6.0);
  EXPECT_DOUBLE_EQ(b.correct, 2.0 / 6.0);
  EXPECT_DOUBLE_EQ(b.new_fp + b.new_fn + b.repeated_fp + b.repeated_fn + b.correct, 1.0);
}

TEST(CalibrationCurve, CertainAndCorrectFillsTopBin) {
  Rng rng(61);
  const BinaryMatrix clean = random_binary(3, 4, 0.5, rng);
  Matrix conf(3, 4, 1.0);
  const auto table = calibration_curve(conf, clean, clean, 10);
  std::size_t total = 0;
  for (std::size_t b = 0; b < table.size(); ++b) {
    total += table[b].count;
    if (b + 1 < table.size()) EXPECT_FALSE(table[b].occupied);
  }
  EXPECT_TRUE(table.back().occupied);
  EXPECT_EQ(table.back().error_rate, 0.0);
  EXPECT_EQ(total, 12u);
}

TEST(CalibrationCurve, PureNoiseConfidenceHalfErrorHalf) {
  Rng rng(62);
  const std::size_t n = 50, d = 40;
  const BinaryMatrix clean = random_binary(n, d, 0.5, rng);
  const BinaryMatrix recon = random_binary(n, d, 0.5, rng);
  Matrix conf(n, d, 0.5);
  const auto table = calibration_curve(conf, recon, clean, 10);
  for (const auto& bin : table) {
    if (!bin.occupied) continue;
    EXPECT_EQ(bin.count, n * d);
    const double sigma = std::sqrt(0.25 / static_cast<double>(n * d));
    EXPECT_NEAR(bin.error_rate, 0.5, 3.0 * sigma);
  }
}

TEST(CalibrationCurve, RejectsBadInput) {
  Matrix conf(2, 2, 0.5);
  const BinaryMatrix m(2, 2);
  EXPECT_THROW(calibration_curve(conf, m, m, 1), ValidationError);
  Matrix bad(2, 2, 1.5);
  EXPECT_THROW(calibration_curve(bad, m, m, 4), ValidationError);
}

namespace {

KFitFunction mac_fitter(std::size_t max_set_size = 2) {
  return [max_set_size](const BinaryMatrix& train, std::size_t k, std::uint64_t seed) {
    mac::MacFitConfig cfg;
    cfg.num_roles = k;
    cfg.max_set_size = std::min(max_set_size, k);
    cfg.seed = seed;
    return mac::fit_mac(train, cfg).config;
  };
}

}  // namespace

TEST(CrossValidateK, SingleCandidateIsReturned) {
  Rng rng(63);
  const BinaryMatrix x = random_binary(12, 6, 0.4, rng);
  SplitSpec spec;
  spec.repetitions = 2;
  const KSweepReport report = cross_validate_k(x, {3}, mac_fitter(), spec);
  EXPECT_EQ(report.selected_k, 3u);
  EXPECT_EQ(report.entries.size(), 1u);
}

TEST(CrossValidateK, NoiselessSingleRoleScoresZero) {
  BinaryMatrix x(10, 6);
  for (std::size_t i = 0; i < 10; ++i) {
    for (std::size_t j = 0; j < 3; ++j) x.set(i, j, true);
  }
  SplitSpec spec;
  spec.repetitions = 3;
  const KSweepReport report = cross_validate_k(x, {1}, mac_fitter(1), spec);
  EXPECT_EQ(report.selected_k, 1u);
  EXPECT_EQ(report.entries[0].median, 0.0);
}

TEST(CrossValidateK, RecoversPlantedRoleCount) {
  // Three well-separated roles; the sweep should settle on k = 3 or an
  // equal-error superset.
  std::size_t hits = 0;
  for (std::uint64_t run = 0; run < 5; ++run) {
    synth::GenMacConfig gen;
    gen.users = 45;
    gen.perms = 12;
    gen.roles = 3;
    gen.max_roles_per_user = 1;
    gen.role_density = 0.4;
    gen.seed = 500 + run;
    const synth::SyntheticDataset data = synth::gen_mac_data(gen);
    SplitSpec spec;
    spec.repetitions = 3;
    spec.seed = run;
    const KSweepReport report =
        cross_validate_k(data.x_observed, {2, 3, 4, 5}, mac_fitter(1), spec);
    if (report.selected_k == 3 || report.selected_k == 4) ++hits;
  }
  EXPECT_GE(hits, 4u);
}

TEST(CrossValidateK, FailingCandidateIsDisqualified) {
  Rng rng(64);
  const BinaryMatrix x = random_binary(12, 6, 0.4, rng);
  SplitSpec spec;
  spec.repetitions = 3;
  const KFitFunction flaky = [](const BinaryMatrix& train, std::size_t k,
                                std::uint64_t seed) {
    if (k == 2) throw ValidationError("deliberate failure");
    return mac_fitter()(train, k, seed);
  };
  const KSweepReport report = cross_validate_k(x, {2, 3}, flaky, spec);
  EXPECT_TRUE(report.entries[0].disqualified);
  EXPECT_EQ(report.entries[0].failed_folds, 3u);
  EXPECT_EQ(report.selected_k, 3u);

  const KFitFunction always_fails = [](const BinaryMatrix&, std::size_t,
                                       std::uint64_t) -> FlatRbacConfig {
    throw ValidationError("no fit");
  };
  EXPECT_THROW(cross_validate_k(x, {2, 3}, always_fails, spec), ValidationError);
}

TEST(CrossValidateK, DeterministicAcrossWorkerCounts) {
  Rng rng(65);
  const BinaryMatrix x = random_binary(14, 6, 0.4, rng);
  SplitSpec spec;
  spec.repetitions = 4;
  spec.seed = 99;
  const KSweepReport serial = cross_validate_k(x, {2, 3}, mac_fitter(), spec, 1);
  const KSweepReport parallel = cross_validate_k(x, {2, 3}, mac_fitter(), spec, 4);
  ASSERT_EQ(serial.entries.size(), parallel.entries.size());
  for (std::size_t i = 0; i < serial.entries.size(); ++i) {
    EXPECT_EQ(serial.entries[i].errors, parallel.entries[i].errors);
  }
  EXPECT_EQ(serial.selected_k, parallel.selected_k);
}
