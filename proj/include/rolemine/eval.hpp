// Apache License, Version 2.0, refer to LICENSE.txt
//
// Generalization-error protocol: split users, fit on the training block,
// transfer roles to held-out users by nearest-neighbor rows, and score the
// Boolean reconstruction against the held-out block. Works for any fitter
// that yields a (Z, U) pair. Also: reconstruction error breakdown against
// synthetic ground truth, confidence calibration, and model-order selection
// by validation error.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "rolemine/binary_matrix.hpp"
#include "rolemine/parallel.hpp"
#include "rolemine/rbac_config.hpp"
#include "rolemine/real_matrix.hpp"
#include "rolemine/rng.hpp"

namespace rolemine::eval {

struct SplitSpec {
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
  std::size_t repetitions = 5;

  void validate() const {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
      throw ValidationError("SplitSpec: train_fraction must lie in (0,1)");
    }
    if (repetitions == 0) throw ValidationError("SplitSpec: repetitions must be >= 1");
  }
};

struct UserSplit {
  BinaryMatrix train;
  BinaryMatrix validation;
  std::vector<std::size_t> train_index;       // original row of each train row
  std::vector<std::size_t> validation_index;  // original row of each validation row
};

// Disjoint row split; train gets round(fraction * N) rows. Deterministic
// given the seed.
inline UserSplit split_users(const BinaryMatrix& x, const SplitSpec& spec) {
  spec.validate();
  const std::size_t n = x.rows();
  if (n < 2) throw ValidationError("split_users: need at least two users");
  const std::size_t n_train =
      static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(n)));
  if (n_train == 0 || n_train == n) {
    throw ValidationError("split_users: split is degenerate (one side empty)");
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(spec.seed);
  rng.shuffle(order);

  BinaryMatrix train(n_train, x.cols());
  BinaryMatrix validation(n - n_train, x.cols());
  UserSplit split{std::move(train), std::move(validation), {}, {}};
  for (std::size_t i = 0; i < n_train; ++i) {
    split.train.copy_row_from(x, order[i], i);
    split.train_index.push_back(order[i]);
  }
  for (std::size_t i = n_train; i < n; ++i) {
    split.validation.copy_row_from(x, order[i], i - n_train);
    split.validation_index.push_back(order[i]);
  }
  return split;
}

// For each row of x2, copy the z_hat row of its nearest (Hamming) x1 row.
// Ties break towards the smallest training index.
inline BinaryMatrix transfer_roles(const BinaryMatrix& x1, const BinaryMatrix& z_hat,
                                   const BinaryMatrix& x2) {
  if (z_hat.rows() != x1.rows()) {
    throw DimensionError("transfer_roles: z_hat rows != training rows");
  }
  if (x1.cols() != x2.cols()) {
    throw DimensionError("transfer_roles: permission counts differ");
  }
  BinaryMatrix z_prime(x2.rows(), z_hat.cols());
  for (std::size_t i = 0; i < x2.rows(); ++i) {
    std::size_t best = 0;
    std::size_t best_dist = x2.row_hamming(i, x1, 0);
    for (std::size_t j = 1; j < x1.rows(); ++j) {
      const std::size_t dist = x2.row_hamming(i, x1, j);
      if (dist < best_dist) {
        best_dist = dist;
        best = j;
      }
    }
    z_prime.copy_row_from(z_hat, best, i);
  }
  return z_prime;
}

// Fraction of hold-out cells mispredicted by the transferred configuration.
inline double generalization_error(const BinaryMatrix& z_prime, const BinaryMatrix& u_hat,
                                   const BinaryMatrix& x2) {
  const BinaryMatrix recon = bool_mat_prod(z_prime, u_hat);
  return static_cast<double>(hamming(recon, x2)) /
         static_cast<double>(x2.rows() * x2.cols());
}

// Reconstruction errors against ground truth, split by whether the observed
// matrix already carried the error (repeated) or not (new), and by direction.
struct ErrorBreakdown {
  double new_fp = 0.0;       // recon 1, clean 0, observed 0
  double new_fn = 0.0;       // recon 0, clean 1, observed 1
  double repeated_fp = 0.0;  // recon 1, clean 0, observed 1
  double repeated_fn = 0.0;  // recon 0, clean 1, observed 0
  double correct = 0.0;      // recon == clean
};

inline ErrorBreakdown error_breakdown(const BinaryMatrix& recon, const BinaryMatrix& observed,
                                      const BinaryMatrix& clean) {
  if (recon.rows() != observed.rows() || recon.cols() != observed.cols() ||
      recon.rows() != clean.rows() || recon.cols() != clean.cols()) {
    throw DimensionError("error_breakdown: shapes differ");
  }
  std::size_t new_fp = 0, new_fn = 0, rep_fp = 0, rep_fn = 0;
  for (std::size_t i = 0; i < recon.rows(); ++i) {
    for (std::size_t d = 0; d < recon.cols(); ++d) {
      const bool r = recon.get(i, d);
      const bool c = clean.get(i, d);
      if (r == c) continue;
      const bool o = observed.get(i, d);
      if (r && !c) {
        (o == c ? new_fp : rep_fp) += 1;
      } else {
        (o == c ? new_fn : rep_fn) += 1;
      }
    }
  }
  const double cells = static_cast<double>(recon.rows() * recon.cols());
  ErrorBreakdown out;
  out.new_fp = static_cast<double>(new_fp) / cells;
  out.new_fn = static_cast<double>(new_fn) / cells;
  out.repeated_fp = static_cast<double>(rep_fp) / cells;
  out.repeated_fn = static_cast<double>(rep_fn) / cells;
  out.correct = 1.0 - out.new_fp - out.new_fn - out.repeated_fp - out.repeated_fn;
  return out;
}

struct CalibrationBin {
  double center = 0.0;
  double error_rate = 0.0;
  std::size_t count = 0;
  bool occupied = false;
};

// Bins cells by the model's posterior probability of the *clean* value and
// reports the empirical reconstruction error rate per bin. `confidences`
// holds the posterior of the reconstructed value; the posterior of the clean
// value is its complement wherever reconstruction and truth disagree.
inline std::vector<CalibrationBin> calibration_curve(const Matrix& confidences,
                                                     const BinaryMatrix& recon,
                                                     const BinaryMatrix& clean,
                                                     std::size_t bins) {
  if (bins < 2) throw ValidationError("calibration_curve: need at least 2 bins");
  if (confidences.rows() != recon.rows() || confidences.cols() != recon.cols() ||
      recon.rows() != clean.rows() || recon.cols() != clean.cols()) {
    throw DimensionError("calibration_curve: shapes differ");
  }
  std::vector<CalibrationBin> table(bins);
  std::vector<std::size_t> errors(bins, 0);
  for (std::size_t b = 0; b < bins; ++b) {
    table[b].center = (static_cast<double>(b) + 0.5) / static_cast<double>(bins);
  }
  for (std::size_t i = 0; i < recon.rows(); ++i) {
    for (std::size_t d = 0; d < recon.cols(); ++d) {
      const double conf = confidences(i, d);
      if (!(conf >= 0.0 && conf <= 1.0)) {
        throw ValidationError("calibration_curve: confidence outside [0,1]");
      }
      const bool wrong = recon.get(i, d) != clean.get(i, d);
      const double p_correct = wrong ? 1.0 - conf : conf;
      std::size_t b = static_cast<std::size_t>(p_correct * static_cast<double>(bins));
      if (b >= bins) b = bins - 1;
      ++table[b].count;
      if (wrong) ++errors[b];
    }
  }
  for (std::size_t b = 0; b < bins; ++b) {
    table[b].occupied = table[b].count > 0;
    table[b].error_rate = table[b].occupied ? static_cast<double>(errors[b]) /
                                                  static_cast<double>(table[b].count)
                                            : 0.0;
  }
  return table;
}

// Linear-interpolation percentile of a sorted sample, q in [0,1].
inline double percentile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw ValidationError("percentile: empty sample");
  const double h = q * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(h);
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

// Fits a flat configuration on a training matrix with k roles and the given
// seed. Must raise on failure; non-convergence should still return its best
// configuration.
using KFitFunction =
    std::function<FlatRbacConfig(const BinaryMatrix& train, std::size_t k, std::uint64_t seed)>;

struct KSweepEntry {
  std::size_t k = 0;
  std::vector<double> errors;  // per successful repetition, in repetition order
  double median = 0.0;
  double p25 = 0.0;
  double p75 = 0.0;
  std::size_t failed_folds = 0;
  bool disqualified = false;
};

struct KSweepReport {
  std::vector<KSweepEntry> entries;
  std::size_t selected_k = 0;
  bool stopped_early = false;
};

// Validation-error sweep over candidate role counts. Every candidate sees the
// same repeated splits. Candidates whose median exceeds the best-so-far
// median by more than the best's interquartile range end the sweep early;
// a candidate with more than half of its folds failed is disqualified.
inline KSweepReport cross_validate_k(const BinaryMatrix& x,
                                     const std::vector<std::size_t>& k_candidates,
                                     const KFitFunction& fit, const SplitSpec& spec,
                                     std::size_t workers = 1) {
  if (k_candidates.empty()) {
    throw ValidationError("cross_validate_k: no candidates");
  }
  spec.validate();

  std::vector<UserSplit> splits;
  splits.reserve(spec.repetitions);
  for (std::size_t rep = 0; rep < spec.repetitions; ++rep) {
    SplitSpec one = spec;
    one.seed = derive_seed(spec.seed, rep);
    splits.push_back(split_users(x, one));
  }

  KSweepReport report;
  bool have_best = false;
  double best_median = 0.0;
  double best_iqr = 0.0;

  for (std::size_t ki = 0; ki < k_candidates.size(); ++ki) {
    const std::size_t k = k_candidates[ki];
    KSweepEntry entry;
    entry.k = k;
    std::vector<double> fold_errors(spec.repetitions, -1.0);  // -1 marks failure
    parallel_for(spec.repetitions, workers, [&](std::size_t rep) {
      try {
        const UserSplit& split = splits[rep];
        const FlatRbacConfig config =
            fit(split.train, k, derive_seed(spec.seed ^ 0x535345ULL, ki * spec.repetitions + rep));
        const BinaryMatrix z_prime = transfer_roles(split.train, config.z, split.validation);
        fold_errors[rep] = generalization_error(z_prime, config.u, split.validation);
      } catch (const Error&) {
        fold_errors[rep] = -1.0;
      }
    });
    for (double e : fold_errors) {
      if (e < 0.0) {
        ++entry.failed_folds;
      } else {
        entry.errors.push_back(e);
      }
    }
    entry.disqualified = entry.failed_folds * 2 > spec.repetitions;
    if (!entry.errors.empty()) {
      std::vector<double> sorted = entry.errors;
      std::sort(sorted.begin(), sorted.end());
      entry.median = percentile_sorted(sorted, 0.5);
      entry.p25 = percentile_sorted(sorted, 0.25);
      entry.p75 = percentile_sorted(sorted, 0.75);
    }
    report.entries.push_back(entry);

    if (!entry.disqualified) {
      if (have_best && entry.median > best_median + best_iqr) {
        report.stopped_early = true;
        break;
      }
      if (!have_best || entry.median < best_median) {
        have_best = true;
        best_median = entry.median;
        best_iqr = entry.p75 - entry.p25;
      }
    }
  }

  if (!have_best) throw ValidationError("cross_validate_k: every candidate failed");
  double min_median = 0.0;
  bool first = true;
  for (const KSweepEntry& e : report.entries) {
    if (e.disqualified) continue;
    if (first || e.median < min_median) {
      min_median = e.median;
      report.selected_k = e.k;
      first = false;
    }
  }
  return report;
}

}  // namespace rolemine::eval
