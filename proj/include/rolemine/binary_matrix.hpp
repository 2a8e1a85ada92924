// Apache License, Version 2.0, refer to LICENSE.txt

#pragma once

#include <bit>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "rolemine/errors.hpp"

namespace rolemine {

// Dense 0/1 matrix, row-major, packed into 64-bit words.
//
// Model code treats instances as immutable values; mutation (set/flip) is
// meant for builders, generators and file parsers. Unused high bits of the
// last word in each row are always zero.
class BinaryMatrix {
 public:
  BinaryMatrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), words_per_row_((cols + 63) / 64),
        bits_(rows * ((cols + 63) / 64), 0) {
    if (rows == 0 || cols == 0) {
      throw ValidationError("BinaryMatrix: empty matrices are rejected (" +
                            shape_string(rows, cols) + ")");
    }
  }

  static BinaryMatrix from_rows(std::initializer_list<std::initializer_list<int>> rows) {
    std::vector<std::vector<int>> copy;
    for (const auto& r : rows) copy.emplace_back(r);
    return from_rows(copy);
  }

  static BinaryMatrix from_rows(const std::vector<std::vector<int>>& rows) {
    if (rows.empty() || rows[0].empty()) {
      throw ValidationError("BinaryMatrix: empty matrices are rejected");
    }
    BinaryMatrix m(rows.size(), rows[0].size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != m.cols_) {
        throw ValidationError("BinaryMatrix: ragged rows");
      }
      for (std::size_t j = 0; j < m.cols_; ++j) {
        const int v = rows[i][j];
        if (v != 0 && v != 1) {
          throw ValidationError("BinaryMatrix: entries must be 0 or 1");
        }
        if (v) m.set(i, j, true);
      }
    }
    return m;
  }

  static BinaryMatrix identity(std::size_t n) {
    BinaryMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m.set(i, i, true);
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  bool get(std::size_t i, std::size_t j) const {
    return (word(i, j >> 6) >> (j & 63)) & 1u;
  }

  void set(std::size_t i, std::size_t j, bool v) {
    std::uint64_t& w = bits_[i * words_per_row_ + (j >> 6)];
    const std::uint64_t mask = std::uint64_t{1} << (j & 63);
    if (v) {
      w |= mask;
    } else {
      w &= ~mask;
    }
  }

  void flip(std::size_t i, std::size_t j) { set(i, j, !get(i, j)); }

  std::size_t count_ones() const {
    std::size_t n = 0;
    for (std::uint64_t w : bits_) n += std::popcount(w);
    return n;
  }

  std::size_t row_count_ones(std::size_t i) const {
    std::size_t n = 0;
    for (std::size_t w = 0; w < words_per_row_; ++w) n += std::popcount(word(i, w));
    return n;
  }

  // Column indices of the 1-entries in row i, ascending.
  std::vector<std::size_t> row_ones(std::size_t i) const {
    std::vector<std::size_t> out;
    for (std::size_t w = 0; w < words_per_row_; ++w) {
      std::uint64_t bitsw = word(i, w);
      while (bitsw) {
        const int b = std::countr_zero(bitsw);
        out.push_back(w * 64 + static_cast<std::size_t>(b));
        bitsw &= bitsw - 1;
      }
    }
    return out;
  }

  std::size_t row_hamming(std::size_t i, const BinaryMatrix& other, std::size_t j) const {
    std::size_t n = 0;
    for (std::size_t w = 0; w < words_per_row_; ++w) {
      n += std::popcount(word(i, w) ^ other.word(j, w));
    }
    return n;
  }

  bool rows_equal(std::size_t i, std::size_t j) const {
    for (std::size_t w = 0; w < words_per_row_; ++w) {
      if (word(i, w) != word(j, w)) return false;
    }
    return true;
  }

  void copy_row_from(const BinaryMatrix& src, std::size_t src_row, std::size_t dst_row) {
    for (std::size_t w = 0; w < words_per_row_; ++w) {
      bits_[dst_row * words_per_row_ + w] = src.word(src_row, w);
    }
  }

  void or_row_from(const BinaryMatrix& src, std::size_t src_row, std::size_t dst_row) {
    for (std::size_t w = 0; w < words_per_row_; ++w) {
      bits_[dst_row * words_per_row_ + w] |= src.word(src_row, w);
    }
  }

  BinaryMatrix transposed() const {
    BinaryMatrix t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i) {
      for (std::size_t j : row_ones(i)) t.set(j, i, true);
    }
    return t;
  }

  std::string row_string(std::size_t i) const {
    std::string s(cols_, '0');
    for (std::size_t j : row_ones(i)) s[j] = '1';
    return s;
  }

  friend bool operator==(const BinaryMatrix& a, const BinaryMatrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.bits_ == b.bits_;
  }
  friend bool operator!=(const BinaryMatrix& a, const BinaryMatrix& b) {
    return !(a == b);
  }

 private:
  std::uint64_t word(std::size_t i, std::size_t w) const {
    return bits_[i * words_per_row_ + w];
  }

  std::size_t rows_;
  std::size_t cols_;
  std::size_t words_per_row_;
  std::vector<std::uint64_t> bits_;
};

// Boolean matrix product: result[i][d] = OR_k (a[i][k] AND b[k][d]).
inline BinaryMatrix bool_mat_prod(const BinaryMatrix& a, const BinaryMatrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("bool_mat_prod: inner dimensions differ, " +
                         shape_string(a.rows(), a.cols()) + " * " +
                         shape_string(b.rows(), b.cols()));
  }
  BinaryMatrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k : a.row_ones(i)) {
      out.or_row_from(b, k, i);
    }
  }
  return out;
}

// Number of differing entries between two same-shape matrices.
inline std::size_t hamming(const BinaryMatrix& a, const BinaryMatrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError("hamming: shapes differ, " +
                         shape_string(a.rows(), a.cols()) + " vs " +
                         shape_string(b.rows(), b.cols()));
  }
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.rows(); ++i) n += a.row_hamming(i, b, i);
  return n;
}

}  // namespace rolemine
