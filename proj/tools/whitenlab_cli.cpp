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

// whitenlab command line: gradient checks, one-shot whitening, identity
// checks and training runs.
//
// Exit codes: 0 success, 1 check failed, 2 numerical failure, 64 usage,
// 65 data format.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "whitenlab/diagnostics.hpp"
#include "whitenlab/experiment.hpp"
#include "whitenlab/gradcheck.hpp"
#include "whitenlab/io.hpp"
#include "whitenlab/whitening.hpp"

namespace fs = std::filesystem;
using namespace whitenlab;
using io::json;

namespace {

constexpr int kOk = 0;
constexpr int kCheckFailed = 1;
constexpr int kNumerical = 2;
constexpr int kUsage = 64;
constexpr int kDataFormat = 65;

int exit_code(Errc c) {
  if (c == Errc::ParseError) return kDataFormat;
  if (c == Errc::TooFewSnapshots) return kCheckFailed;
  return is_numerical(c) ? kNumerical : kUsage;
}

// Raised for problems in a config document, which map to 65 regardless of
// the underlying code.
struct ConfigError {
  Error error;
};

void print_resolved(std::string_view command, const json& j) {
  std::cout << json{{"command", command}, {"resolved", j}}.dump() << std::endl;
}

std::uint64_t seed_from(const std::optional<std::uint64_t>& flag, std::uint64_t fallback) {
  return io::resolve_seed(flag, std::getenv("WHITENLAB_SEED"), fallback);
}

void make_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw Error(Errc::InvalidArgument, "cannot create " + p.string() + ": " + ec.message());
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradcheckArgs {
  std::string method = "zca";
  std::size_t d = 4, m = 8, groups = 1, trials = 3;
  std::optional<std::uint64_t> seed;
  double tol = 1e-5, eps = 0.0;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  if (a.d == 0 || a.m == 0) throw Error(Errc::InvalidArgument, "--d and --m must be positive");
  const WhitenMethod method = parse_method(a.method);
  const std::uint64_t seed = seed_from(a.seed, 0);
  print_resolved("gradcheck", {{"method", a.method}, {"d", a.d}, {"m", a.m}, {"groups", a.groups}, {"trials", a.trials},
                               {"seed", seed}, {"tol", a.tol}, {"eps", a.eps}});
  Rng rng(seed, "gradcheck");
  std::map<std::string, double> worst;
  for (std::size_t t = 0; t < a.trials; ++t) {
    for (const GradCheck& g : check_whitening_gradients(method, a.d, a.m, rng, a.groups, a.eps))
      worst[g.name] = std::max(worst[g.name], g.rel_error);
    for (const GradCheck& g : check_loss_gradients(a.d, a.m, rng)) worst[g.name] = std::max(worst[g.name], g.rel_error);
  }
  bool ok = true;
  for (const auto& [name, err] : worst) {
    const bool pass = err < a.tol;
    ok = ok && pass;
    std::printf("%-24s max_rel_error %.3e  %s\n", name.c_str(), err, pass ? "ok" : "FAIL");
  }
  return ok ? kOk : kCheckFailed;
}

// ---------------------------------------------------------------------------
// whiten

struct WhitenArgs {
  std::string in, out, report, method = "zca";
  std::size_t group = 1, slice = 0;
  double eps = 0.0;
  bool random_groups = false;
  std::optional<std::uint64_t> seed;
};

int cmd_whiten(const WhitenArgs& a) {
  const WhitenMethod method = parse_method(a.method);
  const std::uint64_t seed = seed_from(a.seed, 0);
  print_resolved("whiten", {{"in", a.in}, {"out", a.out}, {"report", a.report}, {"method", a.method},
                            {"group", a.group}, {"random_groups", a.random_groups}, {"slice", a.slice},
                            {"eps", a.eps}, {"seed", seed}});
  const Matrix z = io::read_matrix_csv(a.in);
  WhitenConfig cfg{method, std::nullopt, a.slice, a.eps};
  if (a.group > 1 || a.random_groups) {
    if (a.group == 0 || z.rows() % a.group != 0) {
      throw Error(Errc::NotDivisible, "d=" + std::to_string(z.rows()) + " is not divisible by --group " +
                                          std::to_string(a.group));
    }
    Rng stream(seed, "partition");
    cfg.groups = make_group_partition(z.rows(), a.group, a.random_groups ? PartitionMode::Random : PartitionMode::Fixed,
                                      stream, seed);
  }
  const WhitenOutput w = whiten(z, cfg);
  if (!a.out.empty()) io::write_matrix_csv(fs::path(a.out), w.whitened);
  const json report{{"schema_version", io::kSchemaVersion},
                    {"method", a.method},
                    {"d", z.rows()},
                    {"m", z.cols()},
                    {"group", a.group},
                    {"eps", a.eps},
                    {"input", io::spectral_json(spectral_report(z))},
                    {"output", io::spectral_json(spectral_report(w.whitened))},
                    {"warnings", w.warnings}};
  if (!a.report.empty()) io::write_text(a.report, report.dump(2) + "\n");
  for (const auto& msg : w.warnings) std::cerr << "warning: " << msg << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------
// prop-check / equiv-check

struct PropArgs {
  std::size_t dz = 2, m = 8, draws = 20;
  std::optional<std::uint64_t> seed;
  double tol = 1e-10;
};

int cmd_prop_check(const PropArgs& a) {
  if (a.dz == 0) throw Error(Errc::InvalidArgument, "--dz must be positive");
  if (a.m <= a.dz) throw Error(Errc::PreconditionViolation, "--m must exceed --dz");
  const std::uint64_t seed = seed_from(a.seed, 0);
  print_resolved("prop-check", {{"dz", a.dz}, {"m", a.m}, {"draws", a.draws}, {"seed", seed}, {"tol", a.tol}});
  Rng rng(seed, "full_rank_optimum");
  const std::vector<double> values = check_full_rank_optimum(a.dz, a.m, a.draws, rng);
  const auto worst = std::max_element(values.begin(), values.end());
  const double w = worst == values.end() ? 0.0 : *worst;
  std::printf("draws %zu worst_loss %.3e (draw %td) tol %.1e\n", values.size(), w,
              worst == values.end() ? -1 : worst - values.begin(), a.tol);
  return w < a.tol ? kOk : kCheckFailed;
}

struct EquivArgs {
  std::size_t trials = 20;
  std::optional<std::uint64_t> seed;
  double tol = 1e-8;
  bool frozen_phi = false;
};

int cmd_equiv_check(const EquivArgs& a) {
  const std::uint64_t seed = seed_from(a.seed, 0);
  print_resolved("equiv-check", {{"trials", a.trials}, {"seed", seed}, {"tol", a.tol}, {"frozen_phi", a.frozen_phi}});
  Rng rng(seed, "equivalence");
  double worst = 0.0, worst_rel = 0.0;
  std::size_t worst_trial = 0;
  const auto trials = equivalence_trials(a.trials, rng, a.frozen_phi);
  for (std::size_t k = 0; k < trials.size(); ++k) {
    const GradientComparison& r = trials[k].result;
    if (r.max_abs_diff >= worst) {
      worst = r.max_abs_diff;
      worst_rel = r.relative();
      worst_trial = k;
    }
  }
  std::printf("trials %zu worst_max_abs_diff %.3e relative %.3e (trial %zu) tol %.1e\n", trials.size(), worst,
              worst_rel, worst_trial, a.tol);
  return worst < a.tol ? kOk : kCheckFailed;
}

// ---------------------------------------------------------------------------
// run / probe / study

struct RunOverrides {
  std::string config, preset, set;
  std::optional<std::uint64_t> seed, dataset_seed;
  std::optional<std::size_t> epochs, batch_m, d_z, group;
  std::optional<double> lr, weight_decay, eps;
  bool probe = false, quiet = false;
};

io::RunConfig resolve_config(const RunOverrides& o) {
  try {
    io::RunConfig rc = o.config.empty() ? io::preset(o.preset.empty() ? "zca" : o.preset) : io::read_config(o.config);
    if (!o.set.empty()) io::merge_config(rc, io::parse_json(o.set, "--set"));
    if (o.epochs) rc.train.epochs = *o.epochs;
    if (o.batch_m) rc.train.batch_m = *o.batch_m;
    if (o.d_z) rc.train.model.d_z = *o.d_z;
    if (o.group) rc.train.group_g = *o.group;
    if (o.lr) rc.train.lr = *o.lr;
    if (o.weight_decay) rc.train.weight_decay = *o.weight_decay;
    if (o.eps) rc.train.eps = *o.eps;
    if (o.probe) rc.train.probe = true;
    if (o.dataset_seed) rc.dataset.seed = *o.dataset_seed;
    rc.train.seed = seed_from(o.seed, rc.train.seed);
    rc.train.validate();
    rc.dataset.validate();
    return rc;
  } catch (const Error& e) {
    if (!o.config.empty()) throw ConfigError{Error(Errc::ParseError, e.what())};
    throw;
  }
}

void print_row(const MetricsRow& r) {
  std::fprintf(stderr, "epoch %3zu loss %.5g rank_z %zu rank_h %zu srank_z %.3f neg_cos %.3f%s\n", r.epoch, r.loss,
               r.rank_z, r.rank_h, r.stable_rank_z, r.neg_cos, r.skipped_steps ? " (skipped steps)" : "");
}

void write_outputs(const fs::path& dir, const MetricsLog& log) {
  make_dir(dir);
  {
    std::ofstream csv(dir / "metrics.csv");
    io::write_metrics_csv(csv, log);
  }
  {
    std::ofstream jl(dir / "metrics.jsonl");
    io::write_metrics_jsonl(jl, log);
  }
  io::write_text(dir / "resolved-config.json", io::to_json(io::RunConfig{log.config, log.dataset}).dump(2) + "\n");
  if (log.probe) {
    io::write_text(dir / "probe.json",
                   io::probe_json(*log.probe, train_method_name(log.config.method), log.config.seed).dump(2) + "\n");
  }
}

// Runs one experiment, writing whatever rows completed even on failure.
MetricsLog run_to(const io::RunConfig& rc, const fs::path& dir, bool quiet) {
  Experiment e(rc.train, rc.dataset);
  try {
    e.run([&](const MetricsRow& r) {
      if (!quiet) print_row(r);
    });
  } catch (...) {
    write_outputs(dir, e.log());
    throw;
  }
  write_outputs(dir, e.log());
  return e.log();
}

int cmd_run(const RunOverrides& o, const std::string& out) {
  const io::RunConfig rc = resolve_config(o);
  print_resolved("run", io::to_json(rc));
  const MetricsLog log = run_to(rc, out, o.quiet);
  const MetricsRow& f = log.final_row();
  std::printf("final epoch %zu loss %.6g norm_rank_z %.4f norm_rank_h %.4f norm_srank_z %.4f linear_acc %.4f knn_acc %.4f\n",
              f.epoch, f.loss, f.norm_rank_z, f.norm_rank_h, f.norm_srank_z, f.linear_acc, f.knn_acc);
  return kOk;
}

int cmd_probe(const RunOverrides& o, const std::string& methods_csv, const std::string& out) {
  std::vector<std::string> methods;
  std::stringstream ss(methods_csv);
  for (std::string m; std::getline(ss, m, ',');)
    if (!m.empty()) methods.push_back(m);
  if (methods.empty()) throw Error(Errc::InvalidArgument, "--methods is empty");

  json comparison{{"schema_version", io::kSchemaVersion}, {"methods", json::array()}};
  std::vector<std::pair<double, std::string>> order;
  for (std::size_t k = 0; k < methods.size(); ++k) {
    RunOverrides each = o;
    each.preset = methods[k];
    each.probe = true;
    const io::RunConfig rc = resolve_config(each);
    print_resolved("probe", io::to_json(rc));
    const fs::path dir = fs::path(out) / (std::to_string(k) + "-" + methods[k]);
    Experiment e(rc.train, rc.dataset);
    e.run([&](const MetricsRow& r) {
      if (!o.quiet) print_row(r);
    });
    write_outputs(dir, e.log());
    const ProbeSummary s = e.probe()->summarize();  // TooFewSnapshots on a single epoch
    io::write_text(dir / "probe.json", io::probe_json(s, methods[k], rc.train.seed).dump(2) + "\n");
    comparison["methods"].push_back(
        {{"label", dir.filename().string()}, {"method", methods[k]}, {"mean_z_var", s.mean_z_var},
         {"max_z_var", s.max_z_var}, {"mean_phi_var", s.mean_phi_var}});
    order.emplace_back(s.mean_z_var, dir.filename().string());
    std::printf("%-16s mean_z_var %.4e max_z_var %.4e mean_phi_var %.4e\n", methods[k].c_str(), s.mean_z_var,
                s.max_z_var, s.mean_phi_var);
  }
  std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  json ordering = json::array();
  for (const auto& [_, label] : order) ordering.push_back(label);
  comparison["mean_z_var_descending"] = ordering;
  make_dir(out);
  io::write_text(fs::path(out) / "comparison.json", comparison.dump(2) + "\n");
  return kOk;
}

std::vector<std::size_t> parse_sizes(const std::string& csv) {
  std::vector<std::size_t> out;
  std::stringstream ss(csv);
  for (std::string tok; std::getline(ss, tok, ',');) {
    if (tok.empty()) continue;
    try {
      std::size_t pos = 0;
      const unsigned long v = std::stoul(tok, &pos);
      if (pos != tok.size() || v == 0) throw std::invalid_argument(tok);
      out.push_back(v);
    } catch (const std::exception&) {
      throw Error(Errc::InvalidArgument, "expected a positive integer, got '" + tok + "'");
    }
  }
  return out;
}

int cmd_study(const RunOverrides& o, const std::string& widths, std::size_t depth, const std::string& depths,
              std::size_t width, const std::string& out) {
  const io::RunConfig base = resolve_config(o);
  print_resolved("study", io::to_json(base));
  std::vector<ProjectorCell> grid;
  if (!depths.empty()) {
    for (std::size_t d : parse_sizes(depths))
      grid.push_back({"depth-" + std::to_string(d), std::vector<std::size_t>(d, width)});
  } else {
    for (std::size_t w : parse_sizes(widths))
      grid.push_back({"width-" + std::to_string(w), std::vector<std::size_t>(depth, w)});
  }
  if (grid.empty()) throw Error(Errc::InvalidArgument, "empty study grid");
  json summary{{"schema_version", io::kSchemaVersion}, {"cells", json::array()}};
  for (const ProjectorCell& cell : grid) {
    io::RunConfig rc = base;
    rc.train.model.projector_hidden = cell.hidden;
    const MetricsLog log = run_to(rc, fs::path(out) / cell.label, o.quiet);
    const MetricsRow& f = log.final_row();
    summary["cells"].push_back({{"label", cell.label},
                                {"projector_hidden", cell.hidden},
                                {"norm_rank_z", f.norm_rank_z},
                                {"norm_rank_h", f.norm_rank_h},
                                {"norm_srank_z", f.norm_srank_z},
                                {"norm_srank_h", f.norm_srank_h}});
    std::printf("%-12s norm_srank_h %.4f norm_srank_z %.4f\n", cell.label.c_str(), f.norm_srank_h, f.norm_srank_z);
  }
  make_dir(out);
  io::write_text(fs::path(out) / "study.json", summary.dump(2) + "\n");
  return kOk;
}

void add_run_options(CLI::App* cmd, RunOverrides& o, bool with_preset) {
  if (with_preset) {
    auto* cfg = cmd->add_option("--config", o.config, "experiment config (JSON)")->check(CLI::ExistingFile);
    cmd->add_option("--preset", o.preset, "named preset")
        ->check(CLI::IsMember(io::preset_names()))
        ->excludes(cfg);
  }
  cmd->add_option("--set", o.set, "JSON object merged over the config");
  cmd->add_option("--seed", o.seed, "run seed (overrides WHITENLAB_SEED and the config)");
  cmd->add_option("--dataset-seed", o.dataset_seed, "dataset seed");
  cmd->add_option("--epochs", o.epochs)->check(CLI::PositiveNumber);
  cmd->add_option("--batch-m", o.batch_m)->check(CLI::Range(std::size_t{2}, std::size_t{1} << 20));
  cmd->add_option("--dz", o.d_z)->check(CLI::PositiveNumber);
  cmd->add_option("--group", o.group)->check(CLI::PositiveNumber);
  cmd->add_option("--lr", o.lr)->check(CLI::NonNegativeNumber);
  cmd->add_option("--weight-decay", o.weight_decay)->check(CLI::NonNegativeNumber);
  cmd->add_option("--eps", o.eps)->check(CLI::NonNegativeNumber);
  cmd->add_flag("--quiet", o.quiet, "no per-epoch progress on stderr");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"whitenlab: whitening losses for self-supervised learning at desk scale"};
  app.require_subcommand(1);

  GradcheckArgs ga;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference checks of whitening adjoints and losses");
  gc->add_option("--method", ga.method)->check(CLI::IsMember({"zca", "pca", "cd", "bn", "cw"}));
  gc->add_option("--d", ga.d, "channels");
  gc->add_option("--m", ga.m, "batch size");
  gc->add_option("--groups", ga.groups)->check(CLI::PositiveNumber);
  gc->add_option("--trials", ga.trials)->check(CLI::PositiveNumber);
  gc->add_option("--eps", ga.eps)->check(CLI::NonNegativeNumber);
  gc->add_option("--seed", ga.seed);
  gc->add_option("--tol", ga.tol)->check(CLI::PositiveNumber);

  WhitenArgs wa;
  auto* wh = app.add_subcommand("whiten", "whiten a matrix CSV (rows are channels)");
  wh->add_option("--in", wa.in)->required()->check(CLI::ExistingFile);
  wh->add_option("--method", wa.method)->check(CLI::IsMember({"zca", "pca", "cd", "bn", "cw"}));
  wh->add_option("--group", wa.group)->check(CLI::PositiveNumber);
  wh->add_flag("--random-groups", wa.random_groups, "random channel partition (seeded)");
  wh->add_option("--slice", wa.slice, "sub-batch size; 0 whitens the whole batch");
  wh->add_option("--eps", wa.eps)->check(CLI::NonNegativeNumber);
  wh->add_option("--out", wa.out, "whitened matrix CSV");
  wh->add_option("--report", wa.report, "JSON spectral report");
  wh->add_option("--seed", wa.seed);

  PropArgs pa;
  auto* pc = app.add_subcommand("prop-check", "full-rank online branch reaches the whitened target");
  pc->add_option("--dz", pa.dz);
  pc->add_option("--m", pa.m);
  pc->add_option("--draws", pa.draws)->check(CLI::PositiveNumber);
  pc->add_option("--seed", pa.seed);
  pc->add_option("--tol", pa.tol)->check(CLI::PositiveNumber);

  EquivArgs ea;
  auto* ec = app.add_subcommand("equiv-check", "symmetric loss and stop-gradient proxy give equal gradients");
  ec->add_option("--trials", ea.trials)->check(CLI::PositiveNumber);
  ec->add_option("--seed", ea.seed);
  ec->add_option("--tol", ea.tol)->check(CLI::PositiveNumber);
  ec->add_flag("--frozen-phi", ea.frozen_phi, "hold the first view's whitening matrix constant (negative control)");

  RunOverrides ro;
  std::string run_out;
  auto* rn = app.add_subcommand("run", "train one configuration");
  add_run_options(rn, ro, true);
  rn->add_option("--out", run_out, "output directory")->required();
  rn->add_flag("--probe", ro.probe, "attach the variance probe");

  RunOverrides po;
  std::string probe_out, probe_methods = "zca,pca";
  auto* pr = app.add_subcommand("probe", "variance probe comparison across presets");
  add_run_options(pr, po, false);
  pr->add_option("--methods", probe_methods, "comma-separated preset names");
  pr->add_option("--out", probe_out)->required();

  RunOverrides so;
  std::string study_out, widths = "32,64,128", depths;
  std::size_t depth = 1, width = 128;
  auto* st = app.add_subcommand("study", "projector width / depth grid");
  add_run_options(st, so, true);
  st->add_option("--widths", widths, "hidden widths (one hidden layer each, see --depth)");
  st->add_option("--depth", depth, "hidden layers per width cell")->check(CLI::PositiveNumber);
  st->add_option("--depths", depths, "hidden layer counts at --width (replaces --widths)");
  st->add_option("--width", width)->check(CLI::PositiveNumber);
  st->add_option("--out", study_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*gc) return cmd_gradcheck(ga);
    if (*wh) return cmd_whiten(wa);
    if (*pc) return cmd_prop_check(pa);
    if (*ec) return cmd_equiv_check(ea);
    if (*rn) return cmd_run(ro, run_out);
    if (*pr) return cmd_probe(po, probe_methods, probe_out);
    if (*st) return cmd_study(so, widths, depth, depths, width, study_out);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.error.what() << '\n';
    return kDataFormat;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kNumerical;
  }
  return kUsage;
}
