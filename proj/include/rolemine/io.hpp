// Apache License, Version 2.0, refer to LICENSE.txt
//
// File formats: 0/1 matrices (dense or sparse), business-attribute tables,
// and fitted configuration files. See docs/formats.md for the byte-level
// contracts. Writers emit the canonical form; parsers are tolerant of blank
// lines and '#' comments.

#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "rolemine/binary_matrix.hpp"
#include "rolemine/hybrid.hpp"
#include "rolemine/rbac_config.hpp"
#include "rolemine/real_matrix.hpp"

namespace rolemine::io {

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& s, const std::string& file, std::size_t line) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError(file, line, "expected a number, got '" + s + "'");
  }
}

inline std::size_t parse_count(const std::string& s, const std::string& file,
                               std::size_t line) {
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(s, &pos);
    if (pos != s.size() || v < 0) throw std::invalid_argument(s);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw ParseError(file, line, "expected a nonnegative integer, got '" + s + "'");
  }
}

namespace detail {

// Reads logical lines, skipping blanks and '#' comments, tracking numbers.
class LineReader {
 public:
  LineReader(std::istream& in, std::string name) : in_(in), name_(std::move(name)) {}

  bool next(std::string& out) {
    std::string raw;
    while (std::getline(in_, raw)) {
      ++line_;
      if (!raw.empty() && raw.back() == '\r') raw.pop_back();
      std::size_t start = raw.find_first_not_of(" \t");
      if (start == std::string::npos) continue;
      if (raw[start] == '#') continue;
      std::size_t end = raw.find_last_not_of(" \t");
      out = raw.substr(start, end - start + 1);
      return true;
    }
    return false;
  }

  std::size_t line() const { return line_; }
  const std::string& name() const { return name_; }

  ParseError error(const std::string& what) const { return ParseError(name_, line_, what); }

 private:
  std::istream& in_;
  std::string name_;
  std::size_t line_ = 0;
};

inline std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream iss(s);
  std::string tok;
  while (iss >> tok) out.push_back(tok);
  return out;
}

inline std::vector<std::string> split_char(const std::string& s, char delim) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == delim) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  for (std::string& tok : out) {
    const std::size_t a = tok.find_first_not_of(" \t");
    if (a == std::string::npos) {
      tok.clear();
      continue;
    }
    const std::size_t b = tok.find_last_not_of(" \t");
    tok = tok.substr(a, b - a + 1);
  }
  return out;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError(path, 0, "cannot open for writing");
  return out;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path, 0, "cannot open for reading");
  return in;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Matrix files
// ---------------------------------------------------------------------------

enum class MatrixFileFormat { dense, sparse };

inline void write_matrix(std::ostream& out, const BinaryMatrix& m, MatrixFileFormat format) {
  out << "matrix " << m.rows() << ' ' << m.cols() << ' '
      << (format == MatrixFileFormat::dense ? "dense" : "sparse") << '\n';
  if (format == MatrixFileFormat::dense) {
    for (std::size_t i = 0; i < m.rows(); ++i) out << m.row_string(i) << '\n';
  } else {
    for (std::size_t i = 0; i < m.rows(); ++i) {
      for (std::size_t d : m.row_ones(i)) out << (i + 1) << ' ' << (d + 1) << '\n';
    }
  }
}

inline void write_matrix_file(const std::string& path, const BinaryMatrix& m,
                              MatrixFileFormat format = MatrixFileFormat::dense) {
  auto out = detail::open_out(path);
  write_matrix(out, m, format);
}

inline BinaryMatrix read_matrix(std::istream& in, const std::string& name,
                                MatrixFileFormat* format_out = nullptr) {
  detail::LineReader reader(in, name);
  std::string line;
  if (!reader.next(line)) throw reader.error("empty matrix file");
  const auto header = detail::split_ws(line);
  if (header.size() != 4 || header[0] != "matrix") {
    throw reader.error("expected header 'matrix <rows> <cols> <dense|sparse>'");
  }
  const std::size_t rows = parse_count(header[1], name, reader.line());
  const std::size_t cols = parse_count(header[2], name, reader.line());
  if (rows == 0 || cols == 0) throw reader.error("matrix dimensions must be positive");
  BinaryMatrix m(rows, cols);
  if (header[3] == "dense") {
    if (format_out != nullptr) *format_out = MatrixFileFormat::dense;
    for (std::size_t i = 0; i < rows; ++i) {
      if (!reader.next(line)) throw reader.error("dense body ended early");
      if (line.size() != cols) {
        throw reader.error("row has " + std::to_string(line.size()) +
                           " characters, expected " + std::to_string(cols));
      }
      for (std::size_t d = 0; d < cols; ++d) {
        if (line[d] == '1') {
          m.set(i, d, true);
        } else if (line[d] != '0') {
          throw reader.error("dense rows may contain only '0' and '1'");
        }
      }
    }
    if (reader.next(line)) throw reader.error("trailing content after dense body");
  } else if (header[3] == "sparse") {
    if (format_out != nullptr) *format_out = MatrixFileFormat::sparse;
    while (reader.next(line)) {
      const auto toks = detail::split_ws(line);
      if (toks.size() != 2) throw reader.error("sparse lines are '<row> <col>' (1-based)");
      const std::size_t i = parse_count(toks[0], name, reader.line());
      const std::size_t d = parse_count(toks[1], name, reader.line());
      if (i < 1 || i > rows || d < 1 || d > cols) {
        throw reader.error("sparse index (" + toks[0] + "," + toks[1] + ") out of range");
      }
      if (m.get(i - 1, d - 1)) {
        throw reader.error("duplicate sparse entry (" + toks[0] + "," + toks[1] + ")");
      }
      m.set(i - 1, d - 1, true);
    }
  } else {
    throw reader.error("unknown matrix format tag '" + header[3] + "'");
  }
  return m;
}

inline BinaryMatrix read_matrix_file(const std::string& path,
                                     MatrixFileFormat* format_out = nullptr) {
  auto in = detail::open_in(path);
  return read_matrix(in, path, format_out);
}

// ---------------------------------------------------------------------------
// Attribute files: CSV with header "user,kind,value", 1-based user indices.
// ---------------------------------------------------------------------------

struct AttributeFileEntry {
  std::size_t user = 0;  // 1-based as written
  std::string kind;
  std::string value;
};

inline std::vector<AttributeFileEntry> read_attribute_stream(std::istream& in,
                                                             const std::string& name) {
  detail::LineReader reader(in, name);
  std::string line;
  if (!reader.next(line)) throw reader.error("empty attribute file");
  {
    const auto head = detail::split_char(line, ',');
    if (head.size() != 3 || head[0] != "user" || head[1] != "kind" || head[2] != "value") {
      throw reader.error("expected header 'user,kind,value'");
    }
  }
  std::vector<AttributeFileEntry> entries;
  while (reader.next(line)) {
    const auto toks = detail::split_char(line, ',');
    if (toks.size() != 3) throw reader.error("expected 'user,kind,value'");
    AttributeFileEntry e;
    e.user = parse_count(toks[0], name, reader.line());
    if (e.user == 0) throw reader.error("user indices are 1-based");
    e.kind = toks[1];
    e.value = toks[2];
    if (e.kind.empty() || e.value.empty()) throw reader.error("empty kind or value");
    entries.push_back(std::move(e));
  }
  return entries;
}

inline std::vector<AttributeFileEntry> read_attribute_file(const std::string& path) {
  auto in = detail::open_in(path);
  return read_attribute_stream(in, path);
}

inline void write_attribute_file(const std::string& path,
                                 const std::vector<AttributeFileEntry>& entries) {
  auto out = detail::open_out(path);
  out << "user,kind,value\n";
  std::vector<const AttributeFileEntry*> sorted;
  sorted.reserve(entries.size());
  for (const auto& e : entries) sorted.push_back(&e);
  std::sort(sorted.begin(), sorted.end(),
            [](const AttributeFileEntry* a, const AttributeFileEntry* b) {
              if (a->kind != b->kind) return a->kind < b->kind;
              return a->user < b->user;
            });
  for (const auto* e : sorted) {
    out << e->user << ',' << e->kind << ',' << e->value << '\n';
  }
}

inline std::vector<std::string> attribute_kinds(const std::vector<AttributeFileEntry>& entries) {
  std::vector<std::string> kinds;
  for (const auto& e : entries) {
    bool known = false;
    for (const auto& k : kinds) known = known || k == e.kind;
    if (!known) kinds.push_back(e.kind);
  }
  std::sort(kinds.begin(), kinds.end());
  return kinds;
}

// Builds the table for one kind; every user 1..n_users must appear exactly
// once for that kind. Value ids follow first appearance in user order.
inline hybrid::AttributeTable attribute_table_for_kind(
    const std::vector<AttributeFileEntry>& entries, const std::string& kind,
    std::size_t n_users) {
  std::vector<std::optional<std::string>> labels(n_users);
  for (const auto& e : entries) {
    if (e.kind != kind) continue;
    if (e.user > n_users) {
      throw ValidationError("attribute file names user " + std::to_string(e.user) +
                            " but the matrix has " + std::to_string(n_users) + " users");
    }
    if (labels[e.user - 1]) {
      throw ValidationError("user " + std::to_string(e.user) +
                            " appears twice for attribute kind '" + kind + "'");
    }
    labels[e.user - 1] = e.value;
  }
  hybrid::AttributeTable table;
  table.kind = kind;
  table.values.resize(n_users);
  std::map<std::string, std::size_t> ids;
  for (std::size_t i = 0; i < n_users; ++i) {
    if (!labels[i]) {
      throw ValidationError("user " + std::to_string(i + 1) +
                            " has no value for attribute kind '" + kind + "'");
    }
    auto [it, inserted] = ids.emplace(*labels[i], table.vocabulary.size());
    if (inserted) table.vocabulary.push_back(*labels[i]);
    table.values[i] = it->second;
  }
  return table;
}

// ---------------------------------------------------------------------------
// Fitted configuration files
// ---------------------------------------------------------------------------

struct RbacConfigFile {
  std::string model;  // "mac" | "ddm" | "hybrid"
  std::optional<FlatRbacConfig> flat;
  std::optional<Matrix> beta;
  std::optional<double> eps;
  std::optional<double> r;
  std::optional<double> lambda;
  std::string attribute_kind;
  std::optional<HierRbacConfig> hier;
  std::optional<double> alpha;
  std::optional<double> beta_prior_strength;
  std::vector<std::pair<std::string, std::string>> diagnostics;
  std::string confidence_file;

  friend bool operator==(const RbacConfigFile& a, const RbacConfigFile& b) {
    return a.model == b.model && a.flat == b.flat && a.beta == b.beta && a.eps == b.eps &&
           a.r == b.r && a.lambda == b.lambda && a.attribute_kind == b.attribute_kind &&
           a.hier == b.hier && a.alpha == b.alpha &&
           a.beta_prior_strength == b.beta_prior_strength &&
           a.diagnostics == b.diagnostics && a.confidence_file == b.confidence_file;
  }
};

namespace detail {

inline void write_binary_section(std::ostream& out, const std::string& name,
                                 const BinaryMatrix& m) {
  out << '[' << name << "]\n";
  for (std::size_t i = 0; i < m.rows(); ++i) out << m.row_string(i) << '\n';
}

inline void write_real_section(std::ostream& out, const std::string& name, const Matrix& m) {
  out << '[' << name << "]\n";
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) {
      if (j) out << ' ';
      out << format_double(m(i, j));
    }
    out << '\n';
  }
}

inline BinaryMatrix read_binary_section(LineReader& reader, std::size_t rows,
                                        std::size_t cols) {
  BinaryMatrix m(rows, cols);
  std::string line;
  for (std::size_t i = 0; i < rows; ++i) {
    if (!reader.next(line)) throw reader.error("binary section ended early");
    if (line.size() != cols) throw reader.error("binary row width mismatch");
    for (std::size_t j = 0; j < cols; ++j) {
      if (line[j] == '1') {
        m.set(i, j, true);
      } else if (line[j] != '0') {
        throw reader.error("binary rows may contain only '0' and '1'");
      }
    }
  }
  return m;
}

inline Matrix read_real_section(LineReader& reader, std::size_t rows, std::size_t cols) {
  Matrix m(rows, cols);
  std::string line;
  for (std::size_t i = 0; i < rows; ++i) {
    if (!reader.next(line)) throw reader.error("real section ended early");
    const auto toks = split_ws(line);
    if (toks.size() != cols) throw reader.error("real row width mismatch");
    for (std::size_t j = 0; j < cols; ++j) {
      m(i, j) = parse_double(toks[j], reader.name(), reader.line());
    }
  }
  return m;
}

}  // namespace detail

inline void write_rbac_config(std::ostream& out, const RbacConfigFile& c) {
  out << "rbac-config 1\n";
  out << "model " << c.model << '\n';
  if (c.model == "ddm") {
    const HierRbacConfig& h = *c.hier;
    out << "users " << h.num_users() << '\n';
    out << "business_roles " << h.num_business_roles() << '\n';
    out << "technical_roles " << h.num_technical_roles() << '\n';
    out << "perms " << h.num_perms() << '\n';
    detail::write_binary_section(out, "z", h.z);
    detail::write_binary_section(out, "v", h.v);
    detail::write_binary_section(out, "y", h.y);
    out << "[prior]\n";
    out << "alpha " << format_double(*c.alpha) << '\n';
    out << "beta_prior_strength " << format_double(*c.beta_prior_strength) << '\n';
  } else {
    const FlatRbacConfig& f = *c.flat;
    out << "users " << f.num_users() << '\n';
    out << "roles " << f.num_roles() << '\n';
    out << "perms " << f.num_perms() << '\n';
    detail::write_binary_section(out, "z", f.z);
    detail::write_binary_section(out, "u", f.u);
    if (c.beta) detail::write_real_section(out, "beta", *c.beta);
    out << "[noise]\n";
    out << "eps " << format_double(*c.eps) << '\n';
    out << "r " << format_double(*c.r) << '\n';
    if (c.model == "hybrid") {
      out << "[hybrid]\n";
      out << "lambda " << format_double(*c.lambda) << '\n';
      out << "attribute_kind " << c.attribute_kind << '\n';
    }
  }
  if (!c.diagnostics.empty()) {
    out << "[diagnostics]\n";
    for (const auto& [key, value] : c.diagnostics) out << key << ' ' << value << '\n';
  }
  if (!c.confidence_file.empty()) {
    out << "[confidence]\n";
    out << "file " << c.confidence_file << '\n';
  }
}

inline void write_rbac_config_file(const std::string& path, const RbacConfigFile& c) {
  auto out = detail::open_out(path);
  write_rbac_config(out, c);
}

inline RbacConfigFile read_rbac_config(std::istream& in, const std::string& name) {
  detail::LineReader reader(in, name);
  std::string line;
  if (!reader.next(line) || line != "rbac-config 1") {
    throw ParseError(name, 1, "expected 'rbac-config 1' header");
  }
  RbacConfigFile c;
  auto expect_kv = [&](const std::string& key) {
    if (!reader.next(line)) throw reader.error("unexpected end of file");
    const auto toks = detail::split_ws(line);
    if (toks.size() != 2 || toks[0] != key) {
      throw reader.error("expected '" + key + " <value>'");
    }
    return toks[1];
  };
  c.model = expect_kv("model");
  if (c.model != "mac" && c.model != "ddm" && c.model != "hybrid") {
    throw reader.error("unknown model '" + c.model + "'");
  }

  if (c.model == "ddm") {
    const std::size_t users = parse_count(expect_kv("users"), name, reader.line());
    const std::size_t k = parse_count(expect_kv("business_roles"), name, reader.line());
    const std::size_t l = parse_count(expect_kv("technical_roles"), name, reader.line());
    const std::size_t perms = parse_count(expect_kv("perms"), name, reader.line());
    if (!reader.next(line) || line != "[z]") throw reader.error("expected [z]");
    BinaryMatrix z = detail::read_binary_section(reader, users, k);
    if (!reader.next(line) || line != "[v]") throw reader.error("expected [v]");
    BinaryMatrix v = detail::read_binary_section(reader, k, l);
    if (!reader.next(line) || line != "[y]") throw reader.error("expected [y]");
    BinaryMatrix y = detail::read_binary_section(reader, l, perms);
    c.hier = HierRbacConfig(std::move(z), std::move(v), std::move(y));
    if (!reader.next(line) || line != "[prior]") throw reader.error("expected [prior]");
    c.alpha = parse_double(expect_kv("alpha"), name, reader.line());
    c.beta_prior_strength =
        parse_double(expect_kv("beta_prior_strength"), name, reader.line());
  } else {
    const std::size_t users = parse_count(expect_kv("users"), name, reader.line());
    const std::size_t roles = parse_count(expect_kv("roles"), name, reader.line());
    const std::size_t perms = parse_count(expect_kv("perms"), name, reader.line());
    if (!reader.next(line) || line != "[z]") throw reader.error("expected [z]");
    BinaryMatrix z = detail::read_binary_section(reader, users, roles);
    if (!reader.next(line) || line != "[u]") throw reader.error("expected [u]");
    BinaryMatrix u = detail::read_binary_section(reader, roles, perms);
    c.flat = FlatRbacConfig(std::move(z), std::move(u));
    if (!reader.next(line)) throw reader.error("expected [beta] or [noise]");
    if (line == "[beta]") {
      c.beta = detail::read_real_section(reader, roles, perms);
      if (!reader.next(line)) throw reader.error("expected [noise]");
    }
    if (line != "[noise]") throw reader.error("expected [noise]");
    c.eps = parse_double(expect_kv("eps"), name, reader.line());
    c.r = parse_double(expect_kv("r"), name, reader.line());
    if (c.model == "hybrid") {
      if (!reader.next(line) || line != "[hybrid]") throw reader.error("expected [hybrid]");
      c.lambda = parse_double(expect_kv("lambda"), name, reader.line());
      c.attribute_kind = expect_kv("attribute_kind");
    }
  }

  bool have_line = reader.next(line);
  while (have_line) {
    if (line == "[diagnostics]") {
      have_line = false;
      while (reader.next(line)) {
        if (!line.empty() && line.front() == '[') {
          have_line = true;
          break;
        }
        const auto toks = detail::split_ws(line);
        if (toks.size() < 2) throw reader.error("diagnostics lines are 'key value'");
        std::string value = toks[1];
        for (std::size_t t = 2; t < toks.size(); ++t) value += " " + toks[t];
        c.diagnostics.emplace_back(toks[0], value);
      }
    } else if (line == "[confidence]") {
      c.confidence_file = expect_kv("file");
      have_line = reader.next(line);
    } else {
      throw reader.error("unexpected content '" + line + "'");
    }
  }
  return c;
}

inline RbacConfigFile read_rbac_config_file(const std::string& path) {
  auto in = detail::open_in(path);
  return read_rbac_config(in, path);
}

}  // namespace rolemine::io
