// Copyright 2026 The whitenlab Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// File formats: matrix CSV, run configs (JSON), metrics CSV / JSON lines and
// probe summaries. Needs json.hpp from vendor/ on the include path.

#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "whitenlab/diagnostics.hpp"
#include "whitenlab/error.hpp"
#include "whitenlab/experiment.hpp"
#include "whitenlab/matrix.hpp"

namespace whitenlab::io {

using json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;

// ---------------------------------------------------------------------------
// Matrix CSV: optional "# d=<d> m=<m>" line, then one line per row.

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline double parse_double(std::string_view field, std::size_t line) {
  field = trim(field);
  if (!field.empty() && field.front() == '+') field.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (field.empty() || ec != std::errc() || ptr != field.data() + field.size() || !std::isfinite(v)) {
    throw Error(Errc::ParseError, "line " + std::to_string(line) + ": '" + std::string(field) + "' is not a finite number");
  }
  return v;
}

inline std::size_t parse_count(std::string_view s, std::string_view what) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    throw Error(Errc::ParseError, "bad " + std::string(what) + " in header: '" + std::string(s) + "'");
  }
  return v;
}

// Accepts "# d=3 m=5" with the two fields in either order.
inline std::pair<std::size_t, std::size_t> parse_shape_header(std::string_view line) {
  line = trim(line.substr(1));
  std::optional<std::size_t> d, m;
  std::istringstream in{std::string(line)};
  std::string tok;
  while (in >> tok) {
    if (tok.rfind("d=", 0) == 0) {
      d = parse_count(std::string_view(tok).substr(2), "d");
    } else if (tok.rfind("m=", 0) == 0) {
      m = parse_count(std::string_view(tok).substr(2), "m");
    } else {
      throw Error(Errc::ParseError, "unexpected header token '" + tok + "'");
    }
  }
  if (!d || !m) throw Error(Errc::ParseError, "header must give both d= and m=");
  return {*d, *m};
}

}  // namespace detail

inline Matrix parse_matrix_csv(std::istream& in) {
  std::optional<std::pair<std::size_t, std::size_t>> shape;
  std::vector<double> data;
  std::size_t cols = 0, rows = 0, lineno = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view s = detail::trim(line);
    if (s.empty()) continue;
    if (s.front() == '#') {
      if (rows > 0 || shape) throw Error(Errc::ParseError, "line " + std::to_string(lineno) + ": misplaced header");
      shape = detail::parse_shape_header(s);
      continue;
    }
    std::size_t n = 0;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = s.find(',', start);
      data.push_back(detail::parse_double(s.substr(start, comma == std::string_view::npos ? s.npos : comma - start), lineno));
      ++n;
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (rows == 0) cols = n;
    if (n != cols) {
      throw Error(Errc::ParseError, "line " + std::to_string(lineno) + ": expected " + std::to_string(cols) +
                                        " fields, found " + std::to_string(n));
    }
    ++rows;
  }
  if (rows == 0) throw Error(Errc::ParseError, "no matrix rows");
  if (shape && (shape->first != rows || shape->second != cols)) {
    throw Error(Errc::ParseError, "header says d=" + std::to_string(shape->first) + " m=" +
                                      std::to_string(shape->second) + " but data is " + std::to_string(rows) + "x" +
                                      std::to_string(cols));
  }
  return Matrix(rows, cols, std::move(data));
}

inline Matrix read_matrix_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::ParseError, "cannot open " + path.string());
  return parse_matrix_csv(in);
}

inline void write_matrix_csv(std::ostream& out, const Matrix& a) {
  out << "# d=" << a.rows() << " m=" << a.cols() << '\n';
  out.precision(17);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) {
      if (j) out << ',';
      out << a(i, j);
    }
    out << '\n';
  }
}

inline void write_matrix_csv(const std::filesystem::path& path, const Matrix& a) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::InvalidArgument, "cannot write " + path.string());
  write_matrix_csv(out, a);
}

// ---------------------------------------------------------------------------
// Run configuration. A config document is a TrainConfig with the dataset
// nested under "dataset"; every key is optional and unknown keys are errors.

struct RunConfig {
  TrainConfig train;
  DatasetSpec dataset;
};

inline std::string_view loss_variant_name(LossVariant v) { return v == LossVariant::Raw ? "raw" : "normalized"; }

inline LossVariant parse_loss_variant(std::string_view s) {
  if (s == "raw") return LossVariant::Raw;
  if (s == "normalized") return LossVariant::Normalized;
  throw Error(Errc::ParseError, "loss_variant must be 'raw' or 'normalized', got '" + std::string(s) + "'");
}

inline json to_json(const ModelConfig& m) {
  return json{{"encoder_widths", m.encoder_widths},
              {"encoder_standardize", m.encoder_standardize},
              {"projector_hidden", m.projector_hidden},
              {"d_z", m.d_z},
              {"std_eps", m.std_eps}};
}

inline json to_json(const AugmentConfig& a) {
  return json{{"noise_sigma", a.noise_sigma}, {"scale_lo", a.scale_lo}, {"scale_hi", a.scale_hi},
              {"mask_prob", a.mask_prob},     {"views", a.views}};
}

inline json to_json(const DatasetSpec& d) {
  return json{{"ambient_dim", d.ambient_dim}, {"classes", d.classes},         {"per_class", d.per_class},
              {"class_sep", d.class_sep},     {"intrinsic_dim", d.intrinsic_dim}, {"noise_sigma", d.noise_sigma},
              {"seed", d.seed}};
}

inline json to_json(const RunConfig& rc) {
  const TrainConfig& c = rc.train;
  return json{{"schema_version", kSchemaVersion},
              {"method", train_method_name(c.method)},
              {"group_g", c.group_g},
              {"batch_m", c.batch_m},
              {"epochs", c.epochs},
              {"lr", c.lr},
              {"warmup_iters", c.warmup_iters},
              {"weight_decay", c.weight_decay},
              {"lr_drops", c.lr_drops},
              {"lr_drop_factor", c.lr_drop_factor},
              {"seed", c.seed},
              {"loss_variant", loss_variant_name(c.loss_variant)},
              {"eps", c.eps},
              {"vicreg", {{"alpha", c.vicreg.alpha}, {"lambda", c.vicreg.lambda}}},
              {"cov_loss_weight", c.cov_loss_weight},
              {"slice_size", c.slice_size},
              {"train_fraction", c.train_fraction},
              {"eval_every", c.eval_every},
              {"linear_eval", c.linear_eval},
              {"knn_eval", c.knn_eval},
              {"metrics_batch", c.metrics_batch},
              {"probe", c.probe},
              {"probe_batch", c.probe_batch},
              {"rank_policy", c.rank_policy},
              {"model", to_json(c.model)},
              {"augment", to_json(c.augment)},
              {"dataset", to_json(rc.dataset)}};
}

namespace detail {

using Setter = std::function<void(const json&)>;

template <class T>
Setter field(T& dst) {
  return [&dst](const json& v) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw std::invalid_argument("expected a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_unsigned()) throw std::invalid_argument("expected a nonnegative integer");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw std::invalid_argument("expected a number");
    }
    dst = v.get<T>();
  };
}

template <class T>
Setter list(std::vector<T>& dst) {
  return [&dst](const json& v) {
    if (!v.is_array()) throw std::invalid_argument("expected an array");
    std::vector<T> out;
    for (const auto& e : v) {
      T x{};
      field(x)(e);
      out.push_back(x);
    }
    dst = std::move(out);
  };
}

inline void apply(const json& obj, const std::map<std::string, Setter>& setters, const std::string& where) {
  if (!obj.is_object()) throw Error(Errc::ParseError, where + ": expected a JSON object");
  for (const auto& [key, value] : obj.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    auto it = setters.find(key);
    if (it == setters.end()) throw Error(Errc::ParseError, "unknown config key '" + path + "'");
    try {
      it->second(value);
    } catch (const Error&) {
      throw;
    } catch (const std::exception& e) {
      throw Error(Errc::ParseError, "config key '" + path + "': " + e.what());
    }
  }
}

}  // namespace detail

/// Overlays `doc` onto `rc`; keys absent from `doc` keep their values.
inline void merge_config(RunConfig& rc, const json& doc) {
  using detail::field;
  using detail::list;
  TrainConfig& c = rc.train;
  const std::map<std::string, detail::Setter> model{
      {"encoder_widths", list(c.model.encoder_widths)},
      {"encoder_standardize", field(c.model.encoder_standardize)},
      {"projector_hidden", list(c.model.projector_hidden)},
      {"d_z", field(c.model.d_z)},
      {"std_eps", field(c.model.std_eps)}};
  const std::map<std::string, detail::Setter> augment{
      {"noise_sigma", field(c.augment.noise_sigma)}, {"scale_lo", field(c.augment.scale_lo)},
      {"scale_hi", field(c.augment.scale_hi)},       {"mask_prob", field(c.augment.mask_prob)},
      {"views", field(c.augment.views)}};
  const std::map<std::string, detail::Setter> dataset{
      {"ambient_dim", field(rc.dataset.ambient_dim)}, {"classes", field(rc.dataset.classes)},
      {"per_class", field(rc.dataset.per_class)},     {"class_sep", field(rc.dataset.class_sep)},
      {"intrinsic_dim", field(rc.dataset.intrinsic_dim)}, {"noise_sigma", field(rc.dataset.noise_sigma)},
      {"seed", field(rc.dataset.seed)}};
  const std::map<std::string, detail::Setter> vicreg{{"alpha", field(c.vicreg.alpha)},
                                                     {"lambda", field(c.vicreg.lambda)}};
  const std::map<std::string, detail::Setter> top{
      {"schema_version",
       [](const json& v) {
         if (!v.is_number_integer() || v.get<int>() != kSchemaVersion) {
           throw std::invalid_argument("unsupported schema_version (expected " + std::to_string(kSchemaVersion) + ")");
         }
       }},
      {"method",
       [&c](const json& v) {
         if (!v.is_string()) throw std::invalid_argument("expected a string");
         try {
           c.method = parse_train_method(v.get<std::string>());
         } catch (const Error& e) {
           throw std::invalid_argument(e.what());
         }
       }},
      {"loss_variant",
       [&c](const json& v) {
         if (!v.is_string()) throw std::invalid_argument("expected a string");
         c.loss_variant = parse_loss_variant(v.get<std::string>());
       }},
      {"group_g", field(c.group_g)},
      {"batch_m", field(c.batch_m)},
      {"epochs", field(c.epochs)},
      {"lr", field(c.lr)},
      {"warmup_iters", field(c.warmup_iters)},
      {"weight_decay", field(c.weight_decay)},
      {"lr_drops", list(c.lr_drops)},
      {"lr_drop_factor", field(c.lr_drop_factor)},
      {"seed", field(c.seed)},
      {"eps", field(c.eps)},
      {"cov_loss_weight", field(c.cov_loss_weight)},
      {"slice_size", field(c.slice_size)},
      {"train_fraction", field(c.train_fraction)},
      {"eval_every", field(c.eval_every)},
      {"linear_eval", field(c.linear_eval)},
      {"knn_eval", field(c.knn_eval)},
      {"metrics_batch", field(c.metrics_batch)},
      {"probe", field(c.probe)},
      {"probe_batch", field(c.probe_batch)},
      {"rank_policy", field(c.rank_policy)},
      {"vicreg", [&](const json& v) { detail::apply(v, vicreg, "vicreg"); }},
      {"model", [&](const json& v) { detail::apply(v, model, "model"); }},
      {"augment", [&](const json& v) { detail::apply(v, augment, "augment"); }},
      {"dataset", [&](const json& v) { detail::apply(v, dataset, "dataset"); }}};
  detail::apply(doc, top, "");
}

inline json parse_json(std::string_view text, std::string_view what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(Errc::ParseError, std::string(what) + ": " + e.what());
  }
}

/// Parses and validates a full config document on top of the defaults.
inline RunConfig parse_config(std::string_view text) {
  RunConfig rc;
  merge_config(rc, parse_json(text, "config"));
  rc.train.validate();
  rc.dataset.validate();
  return rc;
}

inline RunConfig read_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::ParseError, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

// ---------------------------------------------------------------------------
// Presets: JSON overlays on the defaults.

// Shared by every preset. The weight decay sits well above the large-scale
// value so that the Plain collapse reaches numerical rank; see README.
inline constexpr std::string_view kDeskRecipe =
    R"({"loss_variant": "normalized", "weight_decay": 0.001, "batch_m": 64, "model": {"d_z": 16}})";

inline const std::map<std::string, std::string, std::less<>>& preset_table() {
  static const std::map<std::string, std::string, std::less<>> table{
      {"plain", R"({"method": "plain"})"},
      {"bn", R"({"method": "bn"})"},
      {"zca", R"({"method": "zca"})"},
      {"cd", R"({"method": "cd"})"},
      {"pca", R"({"method": "pca", "loss_variant": "raw", "group_g": 4})"},
      {"cw", R"({"method": "cw", "group_g": 1, "batch_m": 16, "model": {"d_z": 128}})"},
      {"cw-gp", R"({"method": "cw", "group_g": 4, "batch_m": 16, "model": {"d_z": 128}})"},
      {"cw-rgp", R"({"method": "cw-rgp", "group_g": 4, "batch_m": 16, "model": {"d_z": 128}})"},
      {"cw-rgp-cov",
       R"({"method": "cw-rgp-cov", "group_g": 4, "batch_m": 16, "cov_loss_weight": 0.001, "model": {"d_z": 128}})"},
      {"vicreg", R"({"method": "vicreg"})"},
  };
  return table;
}

inline std::vector<std::string> preset_names() {
  std::vector<std::string> out;
  for (const auto& [name, _] : preset_table()) out.push_back(name);
  return out;
}

inline RunConfig preset(std::string_view name) {
  auto it = preset_table().find(name);
  if (it == preset_table().end()) throw Error(Errc::InvalidArgument, "unknown preset '" + std::string(name) + "'");
  RunConfig rc;
  merge_config(rc, parse_json(kDeskRecipe, "recipe"));
  merge_config(rc, parse_json(it->second, "preset"));
  return rc;
}

// Seed precedence: explicit flag, then WHITENLAB_SEED, then the config.
inline std::uint64_t resolve_seed(std::optional<std::uint64_t> flag, const char* env, std::uint64_t config_seed) {
  if (flag) return *flag;
  if (env != nullptr && *env != '\0') {
    std::string_view s(env);
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
      throw Error(Errc::InvalidArgument, "WHITENLAB_SEED must be a nonnegative integer, got '" + std::string(s) + "'");
    }
    return v;
  }
  return config_seed;
}

// ---------------------------------------------------------------------------
// Metrics

inline const std::vector<std::string>& metrics_columns() {
  static const std::vector<std::string> cols{"schema_version", "epoch",         "loss",         "rank_z",
                                             "rank_h",         "stable_rank_z", "stable_rank_h", "norm_rank_z",
                                             "norm_rank_h",    "norm_srank_z",  "norm_srank_h", "neg_cos",
                                             "linear_acc",     "knn_acc"};
  return cols;
}

namespace detail {

inline json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline std::string csv_number(double v) {
  if (!std::isfinite(v)) return "";
  std::ostringstream s;
  s.precision(12);
  s << v;
  return s.str();
}

}  // namespace detail

inline void write_metrics_csv(std::ostream& out, const MetricsLog& log) {
  const auto& cols = metrics_columns();
  for (std::size_t k = 0; k < cols.size(); ++k) out << (k ? "," : "") << cols[k];
  out << '\n';
  for (const MetricsRow& r : log.rows) {
    using detail::csv_number;
    out << kSchemaVersion << ',' << r.epoch << ',' << csv_number(r.loss) << ',' << r.rank_z << ',' << r.rank_h << ','
        << csv_number(r.stable_rank_z) << ',' << csv_number(r.stable_rank_h) << ',' << csv_number(r.norm_rank_z) << ','
        << csv_number(r.norm_rank_h) << ',' << csv_number(r.norm_srank_z) << ',' << csv_number(r.norm_srank_h) << ','
        << csv_number(r.neg_cos) << ',' << csv_number(r.linear_acc) << ',' << csv_number(r.knn_acc) << '\n';
  }
}

inline json row_json(const MetricsRow& r) {
  using detail::number_or_null;
  return json{{"type", "epoch"},
              {"schema_version", kSchemaVersion},
              {"epoch", r.epoch},
              {"loss", number_or_null(r.loss)},
              {"rank_z", r.rank_z},
              {"rank_h", r.rank_h},
              {"stable_rank_z", number_or_null(r.stable_rank_z)},
              {"stable_rank_h", number_or_null(r.stable_rank_h)},
              {"norm_rank_z", number_or_null(r.norm_rank_z)},
              {"norm_rank_h", number_or_null(r.norm_rank_h)},
              {"norm_srank_z", number_or_null(r.norm_srank_z)},
              {"norm_srank_h", number_or_null(r.norm_srank_h)},
              {"neg_cos", number_or_null(r.neg_cos)},
              {"linear_acc", number_or_null(r.linear_acc)},
              {"knn_acc", number_or_null(r.knn_acc)},
              {"skipped_steps", r.skipped_steps}};
}

// First line is a header record carrying both seeds and the resolved config.
inline json header_json(const MetricsLog& log) {
  return json{{"type", "header"},
              {"schema_version", kSchemaVersion},
              {"seed", log.config.seed},
              {"dataset_seed", log.dataset.seed},
              {"raw_knn_baseline", detail::number_or_null(log.raw_knn_baseline)},
              {"config", to_json(RunConfig{log.config, log.dataset})}};
}

inline json footer_json(const MetricsLog& log) {
  return json{{"type", "summary"},
              {"schema_version", kSchemaVersion},
              {"epochs", log.rows.size()},
              {"degenerate_events", log.degenerate_events},
              {"warnings", log.warnings}};
}

inline void write_metrics_jsonl(std::ostream& out, const MetricsLog& log) {
  out << header_json(log).dump() << '\n';
  for (const MetricsRow& r : log.rows) out << row_json(r).dump() << '\n';
  out << footer_json(log).dump() << '\n';
}

// ---------------------------------------------------------------------------
// Probe summaries

inline json probe_json(const ProbeSummary& p, std::string_view method, std::uint64_t seed) {
  json hist{{"edges", p.phi_hist.edges},
            {"counts", p.phi_hist.counts},
            {"underflow", p.phi_hist.underflow},
            {"overflow", p.phi_hist.overflow}};
  json records = json::array();
  for (auto [metric, value] : {std::pair<const char*, double>{"mean_z_var", p.mean_z_var},
                               {"max_z_var", p.max_z_var},
                               {"mean_phi_var", p.mean_phi_var},
                               {"max_phi_var", p.max_phi_var}}) {
    records.push_back(json{{"epoch", p.last_epoch}, {"metric", metric}, {"value", value}});
  }
  return json{{"schema_version", kSchemaVersion},
              {"method", method},
              {"seed", seed},
              {"snapshots", p.snapshots},
              {"first_epoch", p.first_epoch},
              {"last_epoch", p.last_epoch},
              {"mean_z_var", p.mean_z_var},
              {"max_z_var", p.max_z_var},
              {"mean_phi_var", p.mean_phi_var},
              {"max_phi_var", p.max_phi_var},
              {"phi_var_histogram", hist},
              {"records", records}};
}

inline json spectral_json(const SpectralReport& r) {
  return json{{"rank", r.rank},
              {"stable_rank", r.stable_rank},
              {"normalized_rank", r.normalized_rank},
              {"normalized_stable_rank", r.normalized_stable_rank},
              {"threshold", r.threshold},
              {"singular_values", r.singular_values}};
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::InvalidArgument, "cannot write " + path.string());
  out << text;
}

}  // namespace whitenlab::io
