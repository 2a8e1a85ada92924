// Apache License, Version 2.0, refer to LICENSE.txt
//
// Command-line front end: generate | mine | evaluate | relevance |
// confidence | report. Every command takes --seed and is deterministic given
// it. Exit codes: 0 success, 1 usage, 2 file parse error, 3 validation
// error, 4 non-convergence (best-effort output is still written).

#pragma once

#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "rolemine/ddm.hpp"
#include "rolemine/eval.hpp"
#include "rolemine/hybrid.hpp"
#include "rolemine/io.hpp"
#include "rolemine/mac.hpp"
#include "rolemine/parallel.hpp"
#include "rolemine/synth.hpp"

namespace rolemine::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitParse = 2;
inline constexpr int kExitValidation = 3;
inline constexpr int kExitNonConvergence = 4;

namespace detail {

inline std::vector<std::size_t> parse_k_range(const std::string& text) {
  const std::size_t dots = text.find("..");
  std::vector<std::size_t> out;
  try {
    if (dots == std::string::npos) {
      out.push_back(static_cast<std::size_t>(std::stoull(text)));
    } else {
      const std::size_t a = std::stoull(text.substr(0, dots));
      const std::size_t b = std::stoull(text.substr(dots + 2));
      if (a == 0 || b < a) throw std::invalid_argument(text);
      for (std::size_t k = a; k <= b; ++k) out.push_back(k);
    }
  } catch (const std::exception&) {
    throw ValidationError("bad k range '" + text + "', expected 'a..b' or a single value");
  }
  if (out.empty() || out[0] == 0) throw ValidationError("k candidates must be >= 1");
  return out;
}

inline std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> out;
  std::string cur;
  std::istringstream iss(text);
  while (std::getline(iss, cur, ',')) {
    try {
      out.push_back(std::stod(cur));
    } catch (const std::exception&) {
      throw ValidationError("bad number '" + cur + "' in list '" + text + "'");
    }
  }
  if (out.empty()) throw ValidationError("empty list '" + text + "'");
  return out;
}

inline void write_manifest(const std::string& path, const nlohmann::json& manifest) {
  std::ofstream out(path);
  if (!out) throw ParseError(path, 0, "cannot open for writing");
  out << manifest.dump(2) << '\n';
}

inline std::string diag_double(double v) { return io::format_double(v); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Shared options
// ---------------------------------------------------------------------------

struct MacOptions {
  std::size_t roles = 2;
  std::size_t max_set_size = 2;
  double cooling_rate = 0.95;
  double initial_temp_factor = 1.0;
  std::size_t max_iterations = 500;
  std::size_t restarts = 1;
  std::uint64_t seed = 0;

  mac::MacFitConfig to_config(std::size_t k) const {
    mac::MacFitConfig cfg;
    cfg.num_roles = k;
    cfg.max_set_size = std::min(max_set_size, k);
    cfg.cooling_rate = cooling_rate;
    cfg.initial_temp_factor = initial_temp_factor;
    cfg.max_iterations = max_iterations;
    cfg.restarts = restarts;
    cfg.seed = seed;
    return cfg;
  }
};

struct ModelOptions {
  std::string model = "mac";  // mac | ddm | hybrid
  MacOptions mac;
  double alpha = 1.0;
  double gamma = 0.5;
  std::size_t max_alternations = 200;
  double lambda = 0.0;
  std::string attrs_path;
  std::string attribute_kind;

  ddm::DdmConfig to_ddm_config(std::uint64_t seed) const {
    ddm::DdmConfig cfg;
    cfg.alpha = alpha;
    cfg.beta_prior_strength = gamma;
    cfg.max_alternations = max_alternations;
    cfg.seed = seed;
    return cfg;
  }
};

// Loads the attribute table when the model needs one.
inline hybrid::AttributeTable load_attribute_table(const ModelOptions& opt,
                                                   std::size_t n_users) {
  if (opt.attrs_path.empty()) {
    throw ValidationError("hybrid mining requires --attrs");
  }
  const auto entries = io::read_attribute_file(opt.attrs_path);
  std::string kind = opt.attribute_kind;
  if (kind.empty()) {
    const auto kinds = io::attribute_kinds(entries);
    if (kinds.size() != 1) {
      throw ValidationError("attribute file has several kinds; pick one with --kind");
    }
    kind = kinds[0];
  }
  return io::attribute_table_for_kind(entries, kind, n_users);
}

// Flat fit dispatcher used by mine/evaluate (mac and hybrid paths).
inline mac::MacFitResult fit_flat_model(const BinaryMatrix& x, const ModelOptions& opt,
                                        std::size_t k, std::uint64_t seed,
                                        const hybrid::AttributeTable* attrs) {
  if (opt.model == "hybrid") {
    hybrid::HybridConfig cfg;
    cfg.lambda = opt.lambda;
    cfg.mac = opt.mac.to_config(k);
    cfg.mac.seed = seed;
    return hybrid::fit_hybrid(x, *attrs, cfg);
  }
  mac::MacFitConfig cfg = opt.mac.to_config(k);
  cfg.seed = seed;
  return mac::fit_mac(x, cfg);
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

struct GenerateArgs {
  std::string kind = "mac";
  std::size_t users = 400;
  std::size_t perms = 50;
  std::size_t roles = 10;
  std::size_t max_roles_per_user = 2;
  double density = 0.3;
  double noise = 0.0;
  double alpha = 1.0;
  double gamma = 0.5;
  std::uint64_t seed = 0;
  std::string format = "dense";
  std::string out_prefix = "dataset";
};

inline int cmd_generate(const GenerateArgs& args) {
  synth::SyntheticDataset data = [&] {
    if (args.kind == "mac") {
      synth::GenMacConfig cfg;
      cfg.users = args.users;
      cfg.perms = args.perms;
      cfg.roles = args.roles;
      cfg.max_roles_per_user = args.max_roles_per_user;
      cfg.role_density = args.density;
      cfg.noise = args.noise;
      cfg.seed = args.seed;
      return synth::gen_mac_data(cfg);
    }
    if (args.kind == "ddm") {
      synth::GenDdmConfig cfg;
      cfg.users = args.users;
      cfg.perms = args.perms;
      cfg.alpha = args.alpha;
      cfg.beta_prior_strength = args.gamma;
      cfg.noise = args.noise;
      cfg.seed = args.seed;
      return synth::gen_ddm_data(cfg);
    }
    throw ValidationError("unknown generator kind '" + args.kind + "'");
  }();

  const io::MatrixFileFormat fmt = [&] {
    if (args.format == "dense") return io::MatrixFileFormat::dense;
    if (args.format == "sparse") return io::MatrixFileFormat::sparse;
    throw ValidationError("unknown matrix format '" + args.format + "'");
  }();

  const std::string observed_path = args.out_prefix + "_observed.mtx";
  const std::string clean_path = args.out_prefix + "_clean.mtx";
  const std::string config_path = args.out_prefix + "_true.rbac";
  const std::string manifest_path = args.out_prefix + "_manifest.json";
  io::write_matrix_file(observed_path, data.x_observed, fmt);
  io::write_matrix_file(clean_path, data.x_clean, fmt);

  io::RbacConfigFile truth;
  if (data.true_flat) {
    truth.model = "mac";
    truth.flat = data.true_flat;
    truth.eps = args.noise;
    truth.r = 0.5;
  } else {
    truth.model = "ddm";
    truth.hier = data.true_hier;
    truth.alpha = args.alpha;
    truth.beta_prior_strength = args.gamma;
  }
  truth.diagnostics.emplace_back("generator", data.generator);
  truth.diagnostics.emplace_back("noise_cells", std::to_string(data.noise_cells.size()));
  io::write_rbac_config_file(config_path, truth);

  nlohmann::json manifest{{"command", "generate"},
                          {"kind", args.kind},
                          {"users", args.users},
                          {"perms", args.perms},
                          {"noise", args.noise},
                          {"seed", args.seed},
                          {"format", args.format},
                          {"outputs", {observed_path, clean_path, config_path}}};
  if (args.kind == "mac") {
    manifest["roles"] = args.roles;
    manifest["max_roles_per_user"] = args.max_roles_per_user;
    manifest["density"] = args.density;
  } else {
    manifest["alpha"] = args.alpha;
    manifest["gamma"] = args.gamma;
  }
  detail::write_manifest(manifest_path, manifest);
  std::cout << "wrote " << observed_path << ", " << clean_path << ", " << config_path
            << ", " << manifest_path << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// mine
// ---------------------------------------------------------------------------

struct MineArgs {
  std::string input;
  std::string out = "mined.rbac";
  std::string sweep_out;
  std::string confidence_out;
  std::string sweep_k;  // "a..b"; empty means fixed --roles
  std::size_t workers = 1;
  ModelOptions model;
};

inline void write_confidence_csv(const std::string& path, const Matrix& conf) {
  auto out = io::detail::open_out(path);
  out << "user,permission,confidence\n";
  for (std::size_t i = 0; i < conf.rows(); ++i) {
    for (std::size_t d = 0; d < conf.cols(); ++d) {
      out << (i + 1) << ',' << (d + 1) << ',' << io::format_double(conf(i, d)) << '\n';
    }
  }
}

inline void write_sweep_csv(const std::string& path, const eval::KSweepReport& report) {
  auto out = io::detail::open_out(path);
  out << "k,median,p25,p75,failed_folds,disqualified,selected\n";
  for (const auto& e : report.entries) {
    out << e.k << ',' << io::format_double(e.median) << ',' << io::format_double(e.p25)
        << ',' << io::format_double(e.p75) << ',' << e.failed_folds << ','
        << (e.disqualified ? 1 : 0) << ',' << (e.k == report.selected_k ? 1 : 0) << '\n';
  }
}

inline int cmd_mine(const MineArgs& args) {
  const BinaryMatrix x = io::read_matrix_file(args.input);
  const auto started = std::chrono::steady_clock::now();
  io::RbacConfigFile out_config;
  bool converged = true;

  if (args.model.model == "ddm") {
    const ddm::DdmFitResult fit = ddm::fit_ddm(x, args.model.to_ddm_config(args.model.mac.seed));
    out_config.model = "ddm";
    out_config.hier = fit.config;
    out_config.alpha = args.model.alpha;
    out_config.beta_prior_strength = args.model.gamma;
    const double recon_err =
        static_cast<double>(hamming(fit.config.reconstruct(), x)) /
        static_cast<double>(x.rows() * x.cols());
    out_config.diagnostics.emplace_back("alternations", std::to_string(fit.diagnostics.alternations));
    out_config.diagnostics.emplace_back("stagnated", fit.diagnostics.stagnated ? "1" : "0");
    out_config.diagnostics.emplace_back("map_log_joint",
                                        detail::diag_double(fit.diagnostics.map_log_joint));
    out_config.diagnostics.emplace_back("business_roles",
                                        std::to_string(fit.diagnostics.num_business_roles));
    out_config.diagnostics.emplace_back("technical_roles",
                                        std::to_string(fit.diagnostics.num_technical_roles));
    out_config.diagnostics.emplace_back("reconstruction_error", detail::diag_double(recon_err));
  } else {
    std::optional<hybrid::AttributeTable> attrs;
    if (args.model.model == "hybrid") {
      if (!(args.model.lambda >= 0.0)) throw ValidationError("lambda must be >= 0");
      attrs = load_attribute_table(args.model, x.rows());
    }
    std::size_t k = args.model.mac.roles;
    std::optional<eval::KSweepReport> sweep;
    if (!args.sweep_k.empty()) {
      const auto candidates = detail::parse_k_range(args.sweep_k);
      eval::SplitSpec spec;
      spec.seed = args.model.mac.seed;
      const eval::KFitFunction fit_fn = [&](const BinaryMatrix& train, std::size_t kk,
                                            std::uint64_t seed) {
        hybrid::AttributeTable train_attrs;
        // Attribute rows follow the training users; hybrid sweeps are not
        // supported through this path.
        if (args.model.model == "hybrid") {
          throw ValidationError("--sweep-k with hybrid is not supported; fix --roles");
        }
        (void)train_attrs;
        return fit_flat_model(train, args.model, kk, seed, nullptr).config;
      };
      sweep = eval::cross_validate_k(x, candidates, fit_fn, spec, args.workers);
      k = sweep->selected_k;
      if (!args.sweep_out.empty()) write_sweep_csv(args.sweep_out, *sweep);
    }

    const mac::MacFitResult fit =
        fit_flat_model(x, args.model, k, args.model.mac.seed, attrs ? &*attrs : nullptr);
    converged = fit.diagnostics.converged;
    out_config.model = args.model.model;
    out_config.flat = fit.config;
    out_config.beta = fit.params.beta;
    out_config.eps = fit.params.eps;
    out_config.r = fit.params.r;
    if (args.model.model == "hybrid") {
      out_config.lambda = args.model.lambda;
      out_config.attribute_kind = attrs->kind;
    }
    const double recon_err =
        static_cast<double>(hamming(fit.config.reconstruct(), x)) /
        static_cast<double>(x.rows() * x.cols());
    out_config.diagnostics.emplace_back("converged", converged ? "1" : "0");
    out_config.diagnostics.emplace_back("iterations", std::to_string(fit.diagnostics.iterations));
    out_config.diagnostics.emplace_back("final_log_lik",
                                        detail::diag_double(fit.diagnostics.final_log_lik));
    out_config.diagnostics.emplace_back("final_free_energy",
                                        detail::diag_double(fit.diagnostics.final_free_energy));
    out_config.diagnostics.emplace_back("reconstruction_error", detail::diag_double(recon_err));
    out_config.diagnostics.emplace_back("max_set_size",
                                        std::to_string(std::min(args.model.mac.max_set_size, k)));
    if (sweep) {
      out_config.diagnostics.emplace_back("selected_k", std::to_string(k));
    }

    if (!args.confidence_out.empty()) {
      const RoleSetCatalog catalog(k, std::min(args.model.mac.max_set_size, k));
      const Matrix conf =
          mac::posterior_cell_confidence(x, fit.config, fit.params, fit.gamma, catalog);
      write_confidence_csv(args.confidence_out, conf);
      out_config.confidence_file = args.confidence_out;
    }
  }

  const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
      std::chrono::steady_clock::now() - started);
  out_config.diagnostics.emplace_back("runtime_ms", std::to_string(elapsed.count()));
  io::write_rbac_config_file(args.out, out_config);

  nlohmann::json manifest{{"command", "mine"},
                          {"model", args.model.model},
                          {"input", args.input},
                          {"seed", args.model.mac.seed},
                          {"workers", args.workers},
                          {"output", args.out}};
  if (!args.sweep_k.empty()) manifest["sweep_k"] = args.sweep_k;
  if (args.model.model == "hybrid") {
    manifest["lambda"] = args.model.lambda;
    manifest["attrs"] = args.model.attrs_path;
  }
  detail::write_manifest(args.out + ".manifest.json", manifest);

  std::cout << "wrote " << args.out << '\n';
  return converged ? kExitOk : kExitNonConvergence;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

struct EvaluateArgs {
  std::string input;
  std::string clean;
  std::string out = "eval.csv";
  std::string sweep_k;
  std::string noise_sweep;  // comma list of noise levels -> synthetic curve
  std::string gen_kind = "mac";
  std::size_t gen_seeds = 10;
  std::string calibration_out;
  std::size_t bins = 10;
  double train_fraction = 0.8;
  std::size_t repetitions = 5;
  std::size_t workers = 1;
  ModelOptions model;
  GenerateArgs gen;  // generator knobs for --noise-sweep
};

struct EvalRow {
  std::size_t repetition = 0;
  std::size_t k = 0;
  double train_error = 0.0;
  double gen_error = 0.0;
  std::optional<eval::ErrorBreakdown> breakdown;
};

inline void write_eval_csv(const std::string& path, const std::vector<EvalRow>& rows,
                           bool with_breakdown) {
  auto out = io::detail::open_out(path);
  out << "repetition,k,train_error,gen_error";
  if (with_breakdown) out << ",new_fp,new_fn,repeated_fp,repeated_fn";
  out << '\n';
  std::vector<double> errors;
  for (const auto& row : rows) {
    errors.push_back(row.gen_error);
    out << row.repetition << ',' << row.k << ',' << io::format_double(row.train_error)
        << ',' << io::format_double(row.gen_error);
    if (with_breakdown) {
      const auto& b = row.breakdown.value();
      out << ',' << io::format_double(b.new_fp) << ',' << io::format_double(b.new_fn)
          << ',' << io::format_double(b.repeated_fp) << ','
          << io::format_double(b.repeated_fn);
    }
    out << '\n';
  }
  std::sort(errors.begin(), errors.end());
  const auto summary_row = [&](const char* label, double q) {
    out << label << ",,," << io::format_double(eval::percentile_sorted(errors, q));
    if (with_breakdown) out << ",,,,";
    out << '\n';
  };
  summary_row("median", 0.5);
  summary_row("p25", 0.25);
  summary_row("p75", 0.75);
}

// One repetition of the split/fit/transfer/score protocol.
inline EvalRow evaluate_once(const BinaryMatrix& x, const BinaryMatrix* clean,
                             const EvaluateArgs& args, const hybrid::AttributeTable* attrs,
                             std::size_t rep) {
  eval::SplitSpec spec;
  spec.train_fraction = args.train_fraction;
  spec.seed = derive_seed(args.model.mac.seed, rep);
  const eval::UserSplit split = eval::split_users(x, spec);
  const std::uint64_t fit_seed = derive_seed(args.model.mac.seed ^ 0xE7A1ULL, rep);

  EvalRow row;
  row.repetition = rep + 1;
  FlatRbacConfig fitted = [&]() -> FlatRbacConfig {
    if (args.model.model == "ddm") {
      const auto fit = ddm::fit_ddm(split.train, args.model.to_ddm_config(fit_seed));
      row.k = fit.diagnostics.num_business_roles;
      return fit.config.collapsed();
    }
    std::size_t k = args.model.mac.roles;
    if (!args.sweep_k.empty()) {
      eval::SplitSpec inner = spec;
      inner.seed = derive_seed(spec.seed, 7777);
      inner.repetitions = args.repetitions;
      const auto sweep = eval::cross_validate_k(
          split.train, detail::parse_k_range(args.sweep_k),
          [&](const BinaryMatrix& train, std::size_t kk, std::uint64_t seed) {
            return fit_flat_model(train, args.model, kk, seed, nullptr).config;
          },
          inner, 1);
      k = sweep.selected_k;
    }
    hybrid::AttributeTable train_attrs;
    if (attrs != nullptr) {
      train_attrs.kind = attrs->kind;
      train_attrs.vocabulary = attrs->vocabulary;
      for (std::size_t idx : split.train_index) {
        train_attrs.values.push_back(attrs->values[idx]);
      }
    }
    const auto fit = fit_flat_model(split.train, args.model, k, fit_seed,
                                    attrs != nullptr ? &train_attrs : nullptr);
    row.k = k;
    return fit.config;
  }();

  row.train_error = static_cast<double>(hamming(fitted.reconstruct(), split.train)) /
                    static_cast<double>(split.train.rows() * split.train.cols());
  const BinaryMatrix z_prime = eval::transfer_roles(split.train, fitted.z, split.validation);
  row.gen_error = eval::generalization_error(z_prime, fitted.u, split.validation);

  if (clean != nullptr) {
    BinaryMatrix clean_val(split.validation.rows(), x.cols());
    for (std::size_t i = 0; i < split.validation_index.size(); ++i) {
      clean_val.copy_row_from(*clean, split.validation_index[i], i);
    }
    row.breakdown = eval::error_breakdown(bool_mat_prod(z_prime, fitted.u),
                                          split.validation, clean_val);
  }
  return row;
}

inline int cmd_evaluate(const EvaluateArgs& args) {
  // Synthetic noise curve mode.
  if (!args.noise_sweep.empty()) {
    const std::vector<double> levels = detail::parse_double_list(args.noise_sweep);
    auto out = io::detail::open_out(args.out);
    out << "noise,median,p25,p75\n";
    for (const double noise : levels) {
      std::vector<double> errors(args.gen_seeds);
      parallel_for(args.gen_seeds, args.workers, [&](std::size_t s) {
        GenerateArgs gen = args.gen;
        gen.kind = args.gen_kind;
        gen.noise = noise;
        gen.seed = derive_seed(args.model.mac.seed, s);
        synth::SyntheticDataset data = [&] {
          if (gen.kind == "mac") {
            synth::GenMacConfig cfg;
            cfg.users = gen.users;
            cfg.perms = gen.perms;
            cfg.roles = gen.roles;
            cfg.max_roles_per_user = gen.max_roles_per_user;
            cfg.role_density = gen.density;
            cfg.noise = noise;
            cfg.seed = gen.seed;
            return synth::gen_mac_data(cfg);
          }
          synth::GenDdmConfig cfg;
          cfg.users = gen.users;
          cfg.perms = gen.perms;
          cfg.alpha = gen.alpha;
          cfg.beta_prior_strength = gen.gamma;
          cfg.noise = noise;
          cfg.seed = gen.seed;
          return synth::gen_ddm_data(cfg);
        }();
        EvaluateArgs one = args;
        one.model.mac.seed = derive_seed(args.model.mac.seed ^ 0xCAFEULL, s);
        const EvalRow row = evaluate_once(data.x_observed, nullptr, one, nullptr, 0);
        errors[s] = row.gen_error;
      });
      std::sort(errors.begin(), errors.end());
      out << io::format_double(noise) << ',' << io::format_double(eval::percentile_sorted(errors, 0.5))
          << ',' << io::format_double(eval::percentile_sorted(errors, 0.25)) << ','
          << io::format_double(eval::percentile_sorted(errors, 0.75)) << '\n';
    }
    std::cout << "wrote " << args.out << '\n';
    return kExitOk;
  }

  const BinaryMatrix x = io::read_matrix_file(args.input);
  std::optional<BinaryMatrix> clean;
  if (!args.clean.empty()) {
    clean = io::read_matrix_file(args.clean);
    if (clean->rows() != x.rows() || clean->cols() != x.cols()) {
      throw ValidationError("--clean matrix shape differs from --input");
    }
  }
  std::optional<hybrid::AttributeTable> attrs;
  if (args.model.model == "hybrid") {
    attrs = load_attribute_table(args.model, x.rows());
    if (!args.sweep_k.empty()) {
      throw ValidationError("--sweep-k with hybrid is not supported; fix --roles");
    }
  }

  std::vector<EvalRow> rows(args.repetitions);
  parallel_for(args.repetitions, args.workers, [&](std::size_t rep) {
    rows[rep] = evaluate_once(x, clean ? &*clean : nullptr, args,
                              attrs ? &*attrs : nullptr, rep);
  });
  write_eval_csv(args.out, rows, clean.has_value());

  // Optional confidence calibration on a full-data fit.
  if (!args.calibration_out.empty()) {
    if (!clean) throw ValidationError("--calibration-out requires --clean");
    if (args.model.model == "ddm") {
      throw ValidationError("--calibration-out requires a mac or hybrid model");
    }
    const std::size_t k = args.model.mac.roles;
    const auto fit = fit_flat_model(x, args.model, k, args.model.mac.seed,
                                    attrs ? &*attrs : nullptr);
    const RoleSetCatalog catalog(k, std::min(args.model.mac.max_set_size, k));
    const Matrix conf =
        mac::posterior_cell_confidence(x, fit.config, fit.params, fit.gamma, catalog);
    const auto table =
        eval::calibration_curve(conf, fit.config.reconstruct(), *clean, args.bins);
    auto out = io::detail::open_out(args.calibration_out);
    out << "bin,confidence,error_rate,count\n";
    for (std::size_t b = 0; b < table.size(); ++b) {
      out << b << ',' << io::format_double(table[b].center) << ','
          << io::format_double(table[b].error_rate) << ',' << table[b].count << '\n';
    }
  }

  std::vector<double> errors;
  for (const auto& row : rows) errors.push_back(row.gen_error);
  std::sort(errors.begin(), errors.end());
  std::cout << "generalization error: median " << eval::percentile_sorted(errors, 0.5)
            << " p25 " << eval::percentile_sorted(errors, 0.25) << " p75 "
            << eval::percentile_sorted(errors, 0.75) << " over " << rows.size()
            << " repetitions\n";

  nlohmann::json manifest{{"command", "evaluate"},   {"model", args.model.model},
                          {"input", args.input},     {"seed", args.model.mac.seed},
                          {"reps", args.repetitions}, {"train_fraction", args.train_fraction},
                          {"output", args.out}};
  detail::write_manifest(args.out + ".manifest.json", manifest);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// relevance
// ---------------------------------------------------------------------------

struct RelevanceArgs {
  std::string input;
  std::string attrs_path;
  std::string kind;  // empty: all kinds
  std::size_t min_count = 10;
  std::size_t histogram_bins = 20;
  std::string out = "relevance.csv";
};

inline int cmd_relevance(const RelevanceArgs& args) {
  const BinaryMatrix x = io::read_matrix_file(args.input);
  const auto entries = io::read_attribute_file(args.attrs_path);
  std::vector<std::string> kinds;
  if (args.kind.empty()) {
    kinds = io::attribute_kinds(entries);
  } else {
    kinds.push_back(args.kind);
  }

  auto out = io::detail::open_out(args.out);
  out << "kind,permission,h_x,h_x_given_s,mutual_info,rho,sufficient_data\n";
  const std::string hist_path = args.out + ".hist.csv";
  auto hist_out = io::detail::open_out(hist_path);
  hist_out << "kind,bin_low,bin_high,count\n";
  const std::string summary_path = args.out + ".summary.csv";
  auto summary_out = io::detail::open_out(summary_path);
  summary_out << "kind,mean_rho,permissions_counted\n";

  for (const std::string& kind : kinds) {
    const auto table = io::attribute_table_for_kind(entries, kind, x.rows());
    const auto rel = hybrid::attribute_relevance(x, table, args.min_count);
    std::vector<std::size_t> hist(args.histogram_bins, 0);
    double mean_rho = 0.0;
    std::size_t counted = 0;
    for (std::size_t d = 0; d < rel.size(); ++d) {
      const auto& pr = rel[d];
      out << kind << ',' << (d + 1) << ','
          << (pr.sufficient_data ? io::format_double(pr.h_x) : "nan") << ','
          << (pr.sufficient_data ? io::format_double(pr.h_x_given_s) : "nan") << ','
          << (pr.sufficient_data ? io::format_double(pr.mutual_info) : "nan") << ','
          << (pr.sufficient_data ? io::format_double(pr.rho) : "nan") << ','
          << (pr.sufficient_data ? 1 : 0) << '\n';
      if (pr.sufficient_data) {
        mean_rho += pr.rho;
        ++counted;
        std::size_t b = static_cast<std::size_t>(pr.rho * static_cast<double>(args.histogram_bins));
        if (b >= args.histogram_bins) b = args.histogram_bins - 1;
        ++hist[b];
      }
    }
    for (std::size_t b = 0; b < args.histogram_bins; ++b) {
      const double w = 1.0 / static_cast<double>(args.histogram_bins);
      hist_out << kind << ',' << io::format_double(static_cast<double>(b) * w) << ','
               << io::format_double(static_cast<double>(b + 1) * w) << ',' << hist[b] << '\n';
    }
    if (counted > 0) mean_rho /= static_cast<double>(counted);
    summary_out << kind << ','
                << (counted > 0 ? io::format_double(mean_rho) : "nan") << ',' << counted
                << '\n';
    std::cout << "kind " << kind << ": mean rho "
              << (counted > 0 ? io::format_double(mean_rho) : "n/a (insufficient data)")
              << " over " << counted << " permissions\n";
  }
  std::cout << "wrote " << args.out << ", " << hist_path << ", " << summary_path << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// confidence
// ---------------------------------------------------------------------------

struct ConfidenceArgs {
  std::string input;
  std::string config;
  std::string out = "confidence.csv";
  std::string clean;
  std::string calibration_out;
  std::size_t bins = 10;
  std::size_t max_set_size = 0;  // 0: take from config diagnostics
};

inline int cmd_confidence(const ConfidenceArgs& args) {
  const BinaryMatrix x = io::read_matrix_file(args.input);
  const io::RbacConfigFile config = io::read_rbac_config_file(args.config);
  if (config.model == "ddm" || !config.beta || !config.flat) {
    throw ValidationError("confidence scoring needs a mac/hybrid config with [beta]");
  }
  if (config.flat->num_users() != x.rows() || config.flat->num_perms() != x.cols()) {
    throw ValidationError("config shape does not match the input matrix");
  }
  std::size_t max_set_size = args.max_set_size;
  if (max_set_size == 0) {
    for (const auto& [key, value] : config.diagnostics) {
      if (key == "max_set_size") max_set_size = io::parse_count(value, args.config, 0);
    }
  }
  if (max_set_size == 0) {
    throw ValidationError("config lacks a max_set_size diagnostic; pass --max-set-size");
  }

  mac::MacParams params;
  params.beta = *config.beta;
  params.eps = *config.eps;
  params.r = *config.r;
  const RoleSetCatalog catalog(config.flat->num_roles(), max_set_size);
  // Posterior responsibilities at unit temperature.
  const mac::Responsibilities resp = mac::e_step(x, params, catalog, 1.0);
  const Matrix conf = mac::posterior_cell_confidence(x, *config.flat, params, resp, catalog);
  write_confidence_csv(args.out, conf);
  std::cout << "wrote " << args.out << '\n';

  if (!args.calibration_out.empty()) {
    if (args.clean.empty()) throw ValidationError("--calibration-out requires --clean");
    const BinaryMatrix clean = io::read_matrix_file(args.clean);
    const auto table = eval::calibration_curve(conf, config.flat->reconstruct(), clean,
                                               args.bins);
    auto out = io::detail::open_out(args.calibration_out);
    out << "bin,confidence,error_rate,count\n";
    for (std::size_t b = 0; b < table.size(); ++b) {
      out << b << ',' << io::format_double(table[b].center) << ','
          << io::format_double(table[b].error_rate) << ',' << table[b].count << '\n';
    }
    std::cout << "wrote " << args.calibration_out << '\n';
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

struct ReportArgs {
  std::string config;
  std::string eval_csv;
};

inline int cmd_report(const ReportArgs& args) {
  const io::RbacConfigFile c = io::read_rbac_config_file(args.config);
  std::cout << "model: " << c.model << '\n';
  if (c.model == "ddm") {
    const auto& h = *c.hier;
    std::cout << "users: " << h.num_users() << ", permissions: " << h.num_perms() << '\n';
    std::cout << "business roles: " << h.num_business_roles()
              << ", technical roles: " << h.num_technical_roles() << '\n';
    std::cout << "alpha: " << *c.alpha << ", beta_prior_strength: " << *c.beta_prior_strength
              << '\n';
    for (std::size_t k = 0; k < h.num_business_roles(); ++k) {
      std::size_t members = 0;
      for (std::size_t i = 0; i < h.num_users(); ++i) {
        if (h.z.get(i, k)) ++members;
      }
      std::cout << "  business role " << (k + 1) << ": " << members << " users, "
                << h.v.row_count_ones(k) << " technical roles\n";
    }
  } else {
    const auto& f = *c.flat;
    std::cout << "users: " << f.num_users() << ", permissions: " << f.num_perms()
              << ", roles: " << f.num_roles() << '\n';
    std::cout << "noise: eps " << *c.eps << ", r " << *c.r << '\n';
    if (c.lambda) {
      std::cout << "hybrid: lambda " << *c.lambda << ", attribute kind " << c.attribute_kind
                << '\n';
    }
    for (std::size_t k = 0; k < f.num_roles(); ++k) {
      std::size_t members = 0;
      for (std::size_t i = 0; i < f.num_users(); ++i) {
        if (f.z.get(i, k)) ++members;
      }
      std::cout << "  role " << (k + 1) << ": " << members << " users, "
                << f.u.row_count_ones(k) << " permissions\n";
    }
  }
  if (!c.diagnostics.empty()) {
    std::cout << "diagnostics:\n";
    for (const auto& [key, value] : c.diagnostics) {
      std::cout << "  " << key << " " << value << '\n';
    }
  }
  if (!c.confidence_file.empty()) {
    std::cout << "confidence file: " << c.confidence_file << '\n';
  }
  if (!args.eval_csv.empty()) {
    auto in = io::detail::open_in(args.eval_csv);
    std::cout << "evaluation (" << args.eval_csv << "):\n";
    std::string line;
    while (std::getline(in, line)) std::cout << "  " << line << '\n';
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// Argument wiring
// ---------------------------------------------------------------------------

inline void add_model_options(CLI::App* cmd, ModelOptions& model) {
  cmd->add_option("--model", model.model, "Model: mac, ddm or hybrid")
      ->check(CLI::IsMember({"mac", "ddm", "hybrid"}));
  cmd->add_option("--roles", model.mac.roles, "Number of roles (mac/hybrid)");
  cmd->add_option("--max-set-size", model.mac.max_set_size,
                  "Largest role set considered per user");
  cmd->add_option("--cooling-rate", model.mac.cooling_rate, "Annealing cooling rate");
  cmd->add_option("--initial-temp-factor", model.mac.initial_temp_factor,
                  "Starting temperature factor");
  cmd->add_option("--max-iter", model.mac.max_iterations, "Maximum EM iterations");
  cmd->add_option("--restarts", model.mac.restarts,
                  "Independent runs; the best internal score wins (mac/hybrid)");
  cmd->add_option("--alpha", model.alpha, "CRP concentration (ddm)");
  cmd->add_option("--gamma", model.gamma, "Beta prior strength (ddm)");
  cmd->add_option("--max-alternations", model.max_alternations,
                  "Maximum Gibbs alternations (ddm)");
  cmd->add_option("--lambda", model.lambda, "Business cost weight (hybrid)");
  cmd->add_option("--attrs", model.attrs_path, "Attribute CSV file (hybrid)");
  cmd->add_option("--kind", model.attribute_kind, "Attribute kind to use (hybrid)");
  cmd->add_option("--seed", model.mac.seed, "Random seed");
}

inline int run(int argc, const char* const* argv) {
  CLI::App app{"Probabilistic role mining from binary user-permission matrices"};
  app.require_subcommand(1);
  app.set_config("--config-file");

  GenerateArgs gen_args;
  auto* gen = app.add_subcommand("generate", "Generate a synthetic dataset");
  gen->add_option("--kind", gen_args.kind, "Generator kind: mac or ddm")
      ->check(CLI::IsMember({"mac", "ddm"}));
  gen->add_option("--users", gen_args.users, "Number of users");
  gen->add_option("--perms", gen_args.perms, "Number of permissions");
  gen->add_option("--roles", gen_args.roles, "Number of roles (mac kind)");
  gen->add_option("--max-roles-per-user", gen_args.max_roles_per_user,
                  "Largest role combination per user (mac kind)");
  gen->add_option("--density", gen_args.density, "Per-role permission density (mac kind)");
  gen->add_option("--noise", gen_args.noise, "Fraction of cells replaced by coin flips");
  gen->add_option("--alpha", gen_args.alpha, "CRP concentration (ddm kind)");
  gen->add_option("--gamma", gen_args.gamma, "Beta prior strength (ddm kind)");
  gen->add_option("--seed", gen_args.seed, "Random seed");
  gen->add_option("--format", gen_args.format, "Matrix format: dense or sparse")
      ->check(CLI::IsMember({"dense", "sparse"}));
  gen->add_option("--out-prefix", gen_args.out_prefix, "Output file prefix");

  MineArgs mine_args;
  auto* mine = app.add_subcommand("mine", "Infer a configuration from a matrix");
  mine->add_option("--input", mine_args.input, "Observed matrix file")->required();
  mine->add_option("--out", mine_args.out, "Output configuration file");
  mine->add_option("--sweep-k", mine_args.sweep_k, "Candidate role counts, e.g. 2..8");
  mine->add_option("--sweep-out", mine_args.sweep_out, "Per-k validation error CSV");
  mine->add_option("--confidence-out", mine_args.confidence_out,
                   "Per-cell confidence CSV (mac/hybrid)");
  mine->add_option("--workers", mine_args.workers, "Worker threads for folds");
  add_model_options(mine, mine_args.model);

  EvaluateArgs eval_args;
  auto* evaluate = app.add_subcommand("evaluate", "Estimate generalization error");
  evaluate->add_option("--input", eval_args.input, "Observed matrix file");
  evaluate->add_option("--clean", eval_args.clean, "Ground-truth matrix (adds breakdown)");
  evaluate->add_option("--out", eval_args.out, "Report CSV path");
  evaluate->add_option("--sweep-k", eval_args.sweep_k, "Role counts swept per repetition");
  evaluate->add_option("--train-frac", eval_args.train_fraction, "Training fraction");
  evaluate->add_option("--reps", eval_args.repetitions, "Number of repetitions");
  evaluate->add_option("--workers", eval_args.workers, "Worker threads");
  evaluate->add_option("--noise-sweep", eval_args.noise_sweep,
                       "Comma list of noise levels; runs the synthetic curve protocol");
  evaluate->add_option("--gen-kind", eval_args.gen_kind, "Generator for --noise-sweep")
      ->check(CLI::IsMember({"mac", "ddm"}));
  evaluate->add_option("--gen-seeds", eval_args.gen_seeds, "Datasets per noise level");
  evaluate->add_option("--users", eval_args.gen.users, "Users for --noise-sweep");
  evaluate->add_option("--perms", eval_args.gen.perms, "Permissions for --noise-sweep");
  evaluate->add_option("--gen-roles", eval_args.gen.roles, "True roles for --noise-sweep");
  evaluate->add_option("--density", eval_args.gen.density, "Role density for --noise-sweep");
  evaluate->add_option("--calibration-out", eval_args.calibration_out,
                       "Confidence calibration CSV (needs --clean)");
  evaluate->add_option("--bins", eval_args.bins, "Calibration bins");
  add_model_options(evaluate, eval_args.model);

  RelevanceArgs rel_args;
  auto* relevance = app.add_subcommand("relevance", "Attribute relevance per permission");
  relevance->add_option("--input", rel_args.input, "Observed matrix file")->required();
  relevance->add_option("--attrs", rel_args.attrs_path, "Attribute CSV file")->required();
  relevance->add_option("--kind", rel_args.kind, "Attribute kind (default: all)");
  relevance->add_option("--min-count", rel_args.min_count,
                        "Minimum users per attribute value");
  relevance->add_option("--histogram-bins", rel_args.histogram_bins, "Histogram bins");
  relevance->add_option("--out", rel_args.out, "Output CSV path");

  ConfidenceArgs conf_args;
  auto* confidence = app.add_subcommand("confidence", "Per-cell confidence of a fit");
  confidence->add_option("--input", conf_args.input, "Observed matrix file")->required();
  confidence->add_option("--config", conf_args.config, "Fitted configuration file")
      ->required();
  confidence->add_option("--out", conf_args.out, "Confidence CSV path");
  confidence->add_option("--clean", conf_args.clean, "Ground-truth matrix");
  confidence->add_option("--calibration-out", conf_args.calibration_out,
                         "Calibration CSV (needs --clean)");
  confidence->add_option("--bins", conf_args.bins, "Calibration bins");
  confidence->add_option("--max-set-size", conf_args.max_set_size,
                         "Override the role-set bound recorded in the config");

  ReportArgs report_args;
  auto* report = app.add_subcommand("report", "Summarize a configuration file");
  report->add_option("--config", report_args.config, "Configuration file")->required();
  report->add_option("--eval", report_args.eval_csv, "Evaluation CSV to include");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (gen->parsed()) return cmd_generate(gen_args);
    if (mine->parsed()) return cmd_mine(mine_args);
    if (evaluate->parsed()) return cmd_evaluate(eval_args);
    if (relevance->parsed()) return cmd_relevance(rel_args);
    if (confidence->parsed()) return cmd_confidence(conf_args);
    if (report->parsed()) return cmd_report(report_args);
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitParse;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  }
  return kExitOk;
}

}  // namespace rolemine::cli
