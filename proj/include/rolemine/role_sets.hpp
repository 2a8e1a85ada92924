// Apache License, Version 2.0, refer to LICENSE.txt

#pragma once

#include <cstdint>
#include <vector>

#include "rolemine/errors.hpp"

namespace rolemine {

// Catalog of candidate role sets: all subsets of {0..K-1} with at most
// max_set_size members, including the empty set. Ordered by size, then
// lexicographically by members, so indices are stable across runs.
class RoleSetCatalog {
 public:
  RoleSetCatalog(std::size_t num_roles, std::size_t max_set_size)
      : num_roles_(num_roles), max_set_size_(std::min(max_set_size, num_roles)) {
    if (num_roles == 0) throw ValidationError("RoleSetCatalog: need at least one role");
    if (num_roles > 63) throw ValidationError("RoleSetCatalog: at most 63 roles supported");
    if (max_set_size == 0) {
      throw ValidationError("RoleSetCatalog: max_set_size must be at least 1");
    }
    check_catalog_size();
    sets_.push_back({});
    masks_.push_back(0);
    std::vector<std::size_t> members;
    for (std::size_t m = 1; m <= max_set_size_; ++m) {
      members.assign(m, 0);
      emit_combinations(members, 0, 0);
    }
    sets_by_role_.assign(num_roles_, {});
    for (std::size_t s = 0; s < sets_.size(); ++s) {
      for (std::size_t k : sets_[s]) sets_by_role_[k].push_back(s);
    }
  }

  std::size_t num_roles() const { return num_roles_; }
  std::size_t max_set_size() const { return max_set_size_; }
  std::size_t size() const { return sets_.size(); }

  const std::vector<std::size_t>& members(std::size_t set_index) const {
    return sets_[set_index];
  }
  std::uint64_t mask(std::size_t set_index) const { return masks_[set_index]; }

  bool contains(std::size_t set_index, std::size_t role) const {
    return (masks_[set_index] >> role) & 1u;
  }

  // Indices of all sets that contain the given role.
  const std::vector<std::size_t>& sets_containing(std::size_t role) const {
    return sets_by_role_[role];
  }

 private:
  void check_catalog_size() const {
    // |catalog| = sum_{m<=M} C(K,m); refuse combinatorial blowups early.
    double total = 0.0;
    double c = 1.0;
    for (std::size_t m = 0; m <= max_set_size_; ++m) {
      total += c;
      if (total > 1e6) {
        throw ValidationError("RoleSetCatalog: catalog would exceed 1e6 sets; "
                              "reduce num_roles or max_set_size");
      }
      c = c * static_cast<double>(num_roles_ - m) / static_cast<double>(m + 1);
    }
  }

  void emit_combinations(std::vector<std::size_t>& members, std::size_t pos, std::size_t next) {
    if (pos == members.size()) {
      sets_.push_back(members);
      std::uint64_t mask = 0;
      for (std::size_t k : members) mask |= std::uint64_t{1} << k;
      masks_.push_back(mask);
      return;
    }
    for (std::size_t k = next; k + (members.size() - pos) <= num_roles_; ++k) {
      members[pos] = k;
      emit_combinations(members, pos + 1, k + 1);
    }
  }

  std::size_t num_roles_;
  std::size_t max_set_size_;
  std::vector<std::vector<std::size_t>> sets_;
  std::vector<std::uint64_t> masks_;
  std::vector<std::vector<std::size_t>> sets_by_role_;
};

}  // namespace rolemine
