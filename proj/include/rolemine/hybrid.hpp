// Apache License, Version 2.0, refer to LICENSE.txt
//
// Hybrid role mining: a business-attribute dispersion cost folded into the
// MAC E-step, plus the information measures used to vet attributes
// (relative mutual information) and to judge results (conditional role
// entropy).

#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "rolemine/binary_matrix.hpp"
#include "rolemine/mac.hpp"
#include "rolemine/real_matrix.hpp"

namespace rolemine::hybrid {

// One business attribute kind (e.g. organizational unit): every user carries
// exactly one value.
struct AttributeTable {
  std::string kind;
  std::vector<std::size_t> values;      // per-user value id
  std::vector<std::string> vocabulary;  // label per value id

  std::size_t num_users() const { return values.size(); }
  std::size_t num_values() const { return vocabulary.size(); }

  void validate() const {
    if (values.empty()) throw ValidationError("AttributeTable: no users");
    for (std::size_t v : values) {
      if (v >= vocabulary.size()) {
        throw ValidationError("AttributeTable: value id out of vocabulary range");
      }
    }
  }

  std::vector<std::size_t> value_counts() const {
    std::vector<std::size_t> counts(vocabulary.size(), 0);
    for (std::size_t v : values) ++counts[v];
    return counts;
  }
};

// Dispersion cost of a user-role assignment: over all ordered user pairs
// (self-pairs included) sharing an attribute value, role agreements are
// rewarded and disagreements penalized. Computed through the per-(value,
// role) counts; equal to the pairwise double sum exactly.
inline double business_cost(const BinaryMatrix& z, const AttributeTable& attrs) {
  if (z.rows() != attrs.num_users()) {
    throw DimensionError("business_cost: Z has " + std::to_string(z.rows()) +
                         " rows but attribute table covers " +
                         std::to_string(attrs.num_users()) + " users");
  }
  const std::size_t k_count = z.cols();
  std::vector<std::vector<long long>> n_sk(attrs.num_values(),
                                           std::vector<long long>(k_count, 0));
  for (std::size_t i = 0; i < z.rows(); ++i) {
    for (std::size_t k : z.row_ones(i)) ++n_sk[attrs.values[i]][k];
  }
  long long numerator = 0;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    const auto& row = n_sk[attrs.values[i]];
    for (std::size_t k = 0; k < k_count; ++k) {
      numerator += (z.get(i, k) ? -1 : 1) * row[k];
    }
  }
  return static_cast<double>(numerator) / static_cast<double>(z.rows());
}

// Individual contribution of assigning user i to one role set, given
// (expected) per-(value, role) counts:
//   sum_{k not in set} N_{s_i,k}/N - sum_{k in set} N_{s_i,k}/N.
inline double per_item_business_cost(const std::vector<std::size_t>& set_members,
                                     std::size_t user, const Matrix& expected_counts,
                                     const AttributeTable& attrs) {
  const std::size_t s = attrs.values.at(user);
  if (s >= expected_counts.rows()) {
    throw ValidationError("per_item_business_cost: attribute value has no count row");
  }
  double total = 0.0;
  for (std::size_t k = 0; k < expected_counts.cols(); ++k) total += expected_counts(s, k);
  double inside = 0.0;
  for (std::size_t k : set_members) inside += expected_counts(s, k);
  return (total - 2.0 * inside) / static_cast<double>(attrs.num_users());
}

// Expected per-(value, role) assignment counts under soft responsibilities:
// N_sk = sum_{sets containing k} sum_i w_{i s} gamma_{i,set}.
inline Matrix expected_counts(const mac::Responsibilities& resp,
                              const RoleSetCatalog& catalog, const AttributeTable& attrs) {
  if (resp.gamma.rows() != attrs.num_users()) {
    throw DimensionError("expected_counts: gamma rows != users");
  }
  Matrix counts(attrs.num_values(), catalog.num_roles());
  for (std::size_t i = 0; i < resp.gamma.rows(); ++i) {
    const std::size_t s = attrs.values[i];
    for (std::size_t set = 0; set < catalog.size(); ++set) {
      const double g = resp.gamma(i, set);
      if (g == 0.0) continue;
      for (std::size_t k : catalog.members(set)) counts(s, k) += g;
    }
  }
  return counts;
}

struct HybridConfig {
  double lambda = 0.0;  // weight of the business term
  mac::MacFitConfig mac;

  void validate() const {
    if (!(lambda >= 0.0)) throw ValidationError("HybridConfig: lambda must be >= 0");
    mac.validate();
  }
};

// MAC fit with the E-step cost extended by the attribute-dispersion term.
// The business cost enters scaled by lambda * D; since the starting
// temperature is calibrated from the combined costs, this is the same
// trajectory as weighting the per-bit likelihood term by 1/D. With
// lambda == 0 this is the plain MAC code path, byte for byte.
inline mac::MacFitResult fit_hybrid(const BinaryMatrix& x, const AttributeTable& attrs,
                                    const HybridConfig& cfg) {
  cfg.validate();
  attrs.validate();
  if (attrs.num_users() != x.rows()) {
    throw DimensionError("fit_hybrid: attribute table covers " +
                         std::to_string(attrs.num_users()) + " users, X has " +
                         std::to_string(x.rows()) + " rows");
  }
  if (cfg.lambda == 0.0) return mac::fit_mac(x, cfg.mac);

  const RoleSetCatalog catalog(cfg.mac.num_roles, cfg.mac.max_set_size);
  const double scale = cfg.lambda * static_cast<double>(x.cols());
  const double n_users = static_cast<double>(x.rows());
  mac::ExtraCostHook hook = [&](const Matrix& prev_gamma, Matrix& extra) {
    mac::Responsibilities prev;
    prev.gamma = prev_gamma;
    const Matrix counts = expected_counts(prev, catalog, attrs);
    std::vector<double> row_total(attrs.num_values(), 0.0);
    for (std::size_t s = 0; s < counts.rows(); ++s) {
      for (std::size_t k = 0; k < counts.cols(); ++k) row_total[s] += counts(s, k);
    }
    for (std::size_t i = 0; i < x.rows(); ++i) {
      const std::size_t s = attrs.values[i];
      for (std::size_t set = 0; set < catalog.size(); ++set) {
        double inside = 0.0;
        for (std::size_t k : catalog.members(set)) inside += counts(s, k);
        extra(i, set) = scale * (row_total[s] - 2.0 * inside) / n_users;
      }
    }
  };
  return mac::fit_mac_engine(x, cfg.mac, &hook);
}

// Average conditional role entropy h(set | attribute) in bits: how uncertain
// a user's role set is given their attribute value, under the empirical
// distribution of binarized role sets within each value group.
inline double conditional_role_entropy(const BinaryMatrix& z, const AttributeTable& attrs) {
  if (z.rows() != attrs.num_users()) {
    throw DimensionError("conditional_role_entropy: Z rows != users");
  }
  const std::size_t n = z.rows();
  std::map<std::pair<std::size_t, std::string>, std::size_t> set_counts;
  std::vector<std::size_t> group_sizes(attrs.num_values(), 0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t s = attrs.values[i];
    ++group_sizes[s];
    ++set_counts[{s, z.row_string(i)}];
  }
  double h = 0.0;
  for (const auto& [key, count] : set_counts) {
    const double p_set_given_s =
        static_cast<double>(count) / static_cast<double>(group_sizes[key.first]);
    const double weight = static_cast<double>(count) / static_cast<double>(n);
    h -= weight * std::log2(p_set_given_s);
  }
  return h;
}

inline double binary_entropy(double p) {
  if (p <= 0.0 || p >= 1.0) return 0.0;
  return -p * std::log2(p) - (1.0 - p) * std::log2(1.0 - p);
}

struct PermissionRelevance {
  double h_x = 0.0;          // entropy of the permission bit
  double h_x_given_s = 0.0;  // conditional entropy given the attribute
  double mutual_info = 0.0;
  double rho = 1.0;  // relative mutual information, 0/0 := 1
  bool sufficient_data = true;
};

// Relative mutual information rho_d = 1 - h(X_d|S)/h(X_d) per permission.
// Attribute values with fewer than min_count users are dropped, and both
// entropies are estimated on the surviving users only (which keeps
// h(X_d|S) <= h(X_d)). With no surviving value, every permission is flagged
// as having insufficient data.
inline std::vector<PermissionRelevance> attribute_relevance(const BinaryMatrix& x,
                                                            const AttributeTable& attrs,
                                                            std::size_t min_count = 10) {
  if (x.rows() != attrs.num_users()) {
    throw DimensionError("attribute_relevance: X rows != users");
  }
  if (min_count < 1) throw ValidationError("attribute_relevance: min_count must be >= 1");
  attrs.validate();

  const std::vector<std::size_t> counts = attrs.value_counts();
  std::vector<bool> keep(counts.size());
  std::size_t surviving_users = 0;
  for (std::size_t s = 0; s < counts.size(); ++s) {
    keep[s] = counts[s] >= min_count;
    if (keep[s]) surviving_users += counts[s];
  }

  std::vector<PermissionRelevance> out(x.cols());
  if (surviving_users == 0) {
    for (auto& pr : out) {
      pr.sufficient_data = false;
      pr.h_x = pr.h_x_given_s = pr.mutual_info = std::nan("");
      pr.rho = std::nan("");
    }
    return out;
  }

  for (std::size_t d = 0; d < x.cols(); ++d) {
    std::size_t total_ones = 0;
    std::vector<std::size_t> ones_per_value(counts.size(), 0);
    for (std::size_t i = 0; i < x.rows(); ++i) {
      const std::size_t s = attrs.values[i];
      if (!keep[s]) continue;
      if (x.get(i, d)) {
        ++total_ones;
        ++ones_per_value[s];
      }
    }
    PermissionRelevance pr;
    pr.h_x = binary_entropy(static_cast<double>(total_ones) /
                            static_cast<double>(surviving_users));
    double h_cond = 0.0;
    for (std::size_t s = 0; s < counts.size(); ++s) {
      if (!keep[s]) continue;
      const double p_s =
          static_cast<double>(counts[s]) / static_cast<double>(surviving_users);
      h_cond += p_s * binary_entropy(static_cast<double>(ones_per_value[s]) /
                                     static_cast<double>(counts[s]));
    }
    pr.h_x_given_s = h_cond;
    pr.mutual_info = std::max(0.0, pr.h_x - h_cond);
    pr.rho = (pr.h_x == 0.0) ? 1.0 : std::clamp(1.0 - h_cond / pr.h_x, 0.0, 1.0);
    out[d] = pr;
  }
  return out;
}

}  // namespace rolemine::hybrid
