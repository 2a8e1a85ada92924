// Apache License, Version 2.0, refer to LICENSE.txt

#pragma once

#include "rolemine/binary_matrix.hpp"

namespace rolemine {

// Flat RBAC configuration: Z assigns users to roles, U assigns roles to
// permissions. Shared role count K = z.cols() = u.rows().
struct FlatRbacConfig {
  BinaryMatrix z;  // N x K
  BinaryMatrix u;  // K x D

  FlatRbacConfig(BinaryMatrix z_, BinaryMatrix u_) : z(std::move(z_)), u(std::move(u_)) {
    if (z.cols() != u.rows()) {
      throw DimensionError("FlatRbacConfig: z.cols() != u.rows(), " +
                           shape_string(z.rows(), z.cols()) + " vs " +
                           shape_string(u.rows(), u.cols()));
    }
  }

  std::size_t num_users() const { return z.rows(); }
  std::size_t num_roles() const { return z.cols(); }
  std::size_t num_perms() const { return u.cols(); }

  BinaryMatrix reconstruct() const { return bool_mat_prod(z, u); }

  friend bool operator==(const FlatRbacConfig& a, const FlatRbacConfig& b) {
    return a.z == b.z && a.u == b.u;
  }
};

// Two-level configuration: Z (users x business roles), V (business x
// technical roles), Y (technical roles x permissions).
struct HierRbacConfig {
  BinaryMatrix z;  // N x K
  BinaryMatrix v;  // K x L
  BinaryMatrix y;  // L x D

  HierRbacConfig(BinaryMatrix z_, BinaryMatrix v_, BinaryMatrix y_)
      : z(std::move(z_)), v(std::move(v_)), y(std::move(y_)) {
    if (z.cols() != v.rows() || v.cols() != y.rows()) {
      throw DimensionError("HierRbacConfig: chain Z(" + shape_string(z.rows(), z.cols()) +
                           ") V(" + shape_string(v.rows(), v.cols()) + ") Y(" +
                           shape_string(y.rows(), y.cols()) + ") does not conform");
    }
  }

  std::size_t num_users() const { return z.rows(); }
  std::size_t num_business_roles() const { return z.cols(); }
  std::size_t num_technical_roles() const { return v.cols(); }
  std::size_t num_perms() const { return y.cols(); }

  BinaryMatrix reconstruct() const { return bool_mat_prod(bool_mat_prod(z, v), y); }

  // Collapse to a flat configuration with U = V o Y.
  FlatRbacConfig collapsed() const { return FlatRbacConfig(z, bool_mat_prod(v, y)); }

  friend bool operator==(const HierRbacConfig& a, const HierRbacConfig& b) {
    return a.z == b.z && a.v == b.v && a.y == b.y;
  }
};

// u_kd = OR_l (v_kl AND y_ld): fold the technical-role layer into a flat
// role-permission matrix.
inline BinaryMatrix collapse_hierarchy(const BinaryMatrix& v, const BinaryMatrix& y) {
  return bool_mat_prod(v, y);
}

}  // namespace rolemine
