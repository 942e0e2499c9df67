#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "twogroups/coverage.hpp"
#include "twogroups/error.hpp"
#include "twogroups/estimation.hpp"
#include "twogroups/io.hpp"
#include "twogroups/model.hpp"
#include "twogroups/moderation.hpp"
#include "twogroups/posterior.hpp"
#include "twogroups/svg.hpp"

namespace twogroups::cli {

enum class Command { fit, select, simulate, coverage, moderate, reproduce_paper };

inline std::string to_string(Command c) {
  switch (c) {
    case Command::fit: return "fit";
    case Command::select: return "select";
    case Command::simulate: return "simulate";
    case Command::coverage: return "coverage";
    case Command::moderate: return "moderate";
    case Command::reproduce_paper: return "reproduce-paper";
  }
  return "unknown";
}

inline std::string to_string(Tail t) {
  switch (t) {
    case Tail::lower: return "lower";
    case Tail::upper: return "upper";
    case Tail::two_sided: return "two";
  }
  return "unknown";
}

inline Tail tail_from_string(const std::string& s) {
  if (s == "upper") return Tail::upper;
  if (s == "lower") return Tail::lower;
  if (s == "two" || s == "two_sided") return Tail::two_sided;
  throw invalid_input("tail must be 'upper', 'lower' or 'two'");
}

struct RunConfig {
  Command command = Command::reproduce_paper;
  std::string input;
  std::string model;
  std::string config;  // coverage study file
  std::string out;
  std::vector<double> ks;
  double threshold_z = 3.5;
  Tail tail = Tail::upper;
  double nominal = 0.95;
  std::size_t replications = 2000;
  std::uint64_t seed = 0;
  unsigned threads = 0;
  bool force = false;

  // fit
  std::string method = "parametric";  // parametric | npmle
  std::string null_kind = "theoretical";
  double center_fraction = 0.5;
  std::string grid = "0:5:0.1";
  std::optional<double> fixed_p0;
  bool allow_negative_mean = false;

  // simulate
  std::size_t units = 3000;
  std::vector<double> variances;
};

struct CommandOutput {
  int exit_code = 0;
  std::string text;  // human-readable summary for stdout
  std::vector<std::string> files;
};

// ---- shared helpers ---------------------------------------------------------

inline std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw invalid_input("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::string list_text(const std::vector<double>& xs) { return io::join(xs); }

// Output directory guard: creates the directory and refuses to replace existing
// files unless forced.
class OutputDir {
public:
  OutputDir(const std::string& dir, bool force) : dir_(dir.empty() ? "." : dir), force_(force) {
    std::filesystem::create_directories(dir_);
  }

  std::string write(const std::string& name, const std::string& contents) {
    const auto path = dir_ / name;
    if (std::filesystem::exists(path) && !force_)
      throw invalid_input("refusing to overwrite '" + path.string() + "' (use --force)");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw invalid_input("cannot write '" + path.string() + "'");
    os << contents;
    return path.string();
  }

  // Fails before any work is done if a target exists.
  void check(std::initializer_list<std::string> names) const {
    if (force_) return;
    for (const auto& n : names)
      if (std::filesystem::exists(dir_ / n))
        throw invalid_input("refusing to overwrite '" + (dir_ / n).string() + "' (use --force)");
  }

private:
  std::filesystem::path dir_;
  bool force_;
};

inline nlohmann::ordered_json header_json(const io::RunHeader& h) {
  nlohmann::ordered_json j;
  j["tool"] = "twogroups";
  j["version"] = io::tool_version;
  j["command"] = h.command;
  j["seed"] = h.seed ? nlohmann::ordered_json(*h.seed) : nlohmann::ordered_json(nullptr);
  j["config_hash"] = h.config_hash();
  return j;
}

inline std::string dump(const nlohmann::ordered_json& j) { return j.dump(2) + "\n"; }

inline std::vector<double> parse_grid_spec(const std::string& spec) {
  const auto parts = io::split(spec, ':');
  if (parts.size() == 3)
    return make_grid(io::parse_double(parts[0], 0, "grid start"), io::parse_double(parts[1], 0, "grid end"),
                     io::parse_double(parts[2], 0, "grid step"));
  return io::parse_list(spec, 0, "grid");
}

// ---- reproduce-paper ----------------------------------------------------------

struct ExampleCheck {
  std::string name;
  double value = 0.0;
  std::optional<double> low, high;
  std::string target;
  bool pass() const { return !low || (value >= *low && value <= *high); }
};

// The worked two-groups example: N = 3000, p0 = 0.9, theoretical null, g = N(2.5, 0.5)
// (variance 0.5), z ~ N(mu, 1), selection z >= 3.5.
inline TwoGroupsModel example_model() {
  return TwoGroupsModel(0.9, NullComponent::theoretical(), MixingDistribution::normal(2.5, 0.5), 1.0);
}

inline std::vector<ExampleCheck> example_checks(const std::vector<double>& only_ks = {}) {
  const TwoGroupsModel m = example_model();
  constexpr double z = 3.5;
  std::vector<ExampleCheck> checks;
  auto band_for = [](double k) -> std::optional<std::pair<double, double>> {
    if (k == 2.8) return std::pair{0.55, 0.65};
    if (k == 2.0) return std::pair{0.93, 0.97};
    if (k == 0.0) return std::pair{0.96, 0.995};
    return std::nullopt;
  };
  auto averaged = [&](double k) {
    ExampleCheck c;
    c.name = "mean P(mu>" + io::format_sig4(k) + "|z) over z>=3.5";
    c.value = population_averaged_exceedance(m, z, k, 1.0);
    if (auto b = band_for(k)) {
      c.low = b->first;
      c.high = b->second;
      c.target = "[" + io::format_sig4(b->first) + ", " + io::format_sig4(b->second) + "]";
    } else {
      c.target = "-";
    }
    return c;
  };
  if (!only_ks.empty()) {
    for (double k : only_ks) checks.push_back(averaged(k));
    return checks;
  }
  const double tail = marginal_upper_tail(m, z, 1.0);
  checks.push_back({"P(Z>=3.5)", tail, 0.0205, 0.0215, "0.021 +- 0.0005"});
  checks.push_back({"expected count at N=3000", 3000.0 * tail, 62.0, 64.0, "63 +- 1"});
  checks.push_back({"P(mu>2.8|z=3.5)", exceedance_probability(m, z, 1.0, 2.8), 0.504, 0.508, "0.506 +- 0.002"});
  checks.push_back({"P(mu>2.0|z=3.5)", exceedance_probability(m, z, 1.0, 2.0), 0.89, 0.91, "0.90 +- 0.01"});
  for (double k : {2.8, 2.0, 0.0}) checks.push_back(averaged(k));
  return checks;
}

inline std::string checks_table(const std::vector<ExampleCheck>& checks) {
  std::ostringstream os;
  auto pad = [](std::string s, std::size_t w) {
    s.resize(std::max(w, s.size()), ' ');
    return s;
  };
  os << pad("check", 36) << pad("value", 12) << pad("target", 20) << "status\n";
  for (const auto& c : checks)
    os << pad(c.name, 36) << pad(io::format_sig4(c.value), 12) << pad(c.target, 20)
       << (c.low ? (c.pass() ? "PASS" : "FAIL") : "-") << '\n';
  return os.str();
}

inline CommandOutput cmd_reproduce_paper(const RunConfig& cfg) {
  const auto checks = example_checks(cfg.ks);
  CommandOutput out;
  out.text = checks_table(checks);
  out.exit_code = std::all_of(checks.begin(), checks.end(), [](const ExampleCheck& c) { return c.pass(); }) ? 0 : 1;
  if (!cfg.out.empty()) {
    OutputDir dir(cfg.out, cfg.force);
    io::RunHeader h{"reproduce-paper", cfg.seed, "ks=" + list_text(cfg.ks)};
    std::ostringstream csv;
    h.write_comment_block(csv);
    csv << "check,value,low,high,status\n";
    for (const auto& c : checks)
      csv << '"' << c.name << "\"," << io::format_double(c.value) << ',' << (c.low ? io::format_double(*c.low) : "")
          << ',' << (c.high ? io::format_double(*c.high) : "") << ',' << (c.low ? (c.pass() ? "PASS" : "FAIL") : "-")
          << '\n';
    out.files.push_back(dir.write("reproduce.csv", csv.str()));
  }
  return out;
}

// ---- select ---------------------------------------------------------------------

inline std::string selection_csv(const SelectionReport& r, const io::RunHeader& h) {
  std::ostringstream os;
  h.write_comment_block(os);
  os << "id,z,variance,fdr";
  for (double k : r.ks) os << ",exceedance@" << io::format_double(k);
  os << ",rank\n";
  for (std::size_t i = 0; i < r.selected.size(); ++i) {
    const auto& s = r.selected[i];
    os << s.id << ',' << io::format_double(s.z) << ',' << io::format_double(s.sampling_variance) << ','
       << io::format_double(s.fdr);
    for (double k : r.ks) os << ',' << io::format_double(s.exceedance.at(k));
    os << ',' << (i + 1) << '\n';
  }
  return os.str();
}

inline std::string selection_svg(const TwoGroupsModel& model, const ZPanel& panel, const io::RunHeader& h) {
  const auto z = panel.z_values();
  const auto [zmin_it, zmax_it] = std::minmax_element(z.begin(), z.end());
  const double lo = std::floor(std::min(*zmin_it, -4.0)), hi = std::ceil(std::max(*zmax_it, 4.0));
  constexpr int bins = 60;
  const double width = (hi - lo) / bins;
  std::vector<double> counts(bins, 0.0);
  for (double x : z) counts[std::min(bins - 1, static_cast<int>((x - lo) / width))] += 1.0;
  const double scale = static_cast<double>(z.size()) * width;
  const double v = model.default_sampling_variance();
  std::vector<std::pair<double, double>> f, f0, fdr;
  double ymax = *std::max_element(counts.begin(), counts.end());
  for (int i = 0; i <= 400; ++i) {
    const double x = lo + (hi - lo) * i / 400.0;
    f.emplace_back(x, scale * marginal_density(model, x, v));
    f0.emplace_back(x, scale * model.p0() * null_density(model, x, v));
    fdr.emplace_back(x, local_fdr(model, x, v));
    ymax = std::max(ymax, f.back().second);
  }
  svg::Chart chart("z histogram with fitted densities and local fdr", "z", "count per bin");
  chart.set_x_range(lo, hi);
  chart.set_y_range(0.0, ymax * 1.05);
  chart.set_secondary_axis("local fdr", 0.0, 1.0);
  for (int b = 0; b < bins; ++b) chart.add_bar(lo + b * width, lo + (b + 1) * width, counts[b], "#9db4d0");
  chart.add_legend_entry("#9db4d0", "observed z");
  chart.add_line(f, "#1f4e79", "f(z)");
  chart.add_line(f0, "#c0504d", "p0 f0(z)");
  chart.add_line(fdr, "#2e7d32", "fdr(z)", true);
  return chart.render(h.lines());
}

inline CommandOutput cmd_select(const RunConfig& cfg) {
  if (cfg.input.empty() || cfg.model.empty()) throw invalid_input("select needs --input and --model");
  OutputDir dir(cfg.out, cfg.force);
  dir.check({"selection.csv", "selection.json", "selection.svg"});
  const std::string panel_bytes = read_bytes(cfg.input);
  const std::string model_bytes = read_bytes(cfg.model);
  std::istringstream panel_in(panel_bytes), model_in(model_bytes);
  const ZPanel panel = io::read_panel(panel_in);
  const TwoGroupsModel model = io::read_model(model_in);
  const std::vector<double> ks = cfg.ks.empty() ? std::vector<double>{2.8} : cfg.ks;

  io::RunHeader h{"select", cfg.seed,
                  "input=" + io::hex64(io::fnv1a(panel_bytes)) + "\nmodel=" + io::hex64(io::fnv1a(model_bytes)) +
                      "\nthreshold=" + io::format_double(cfg.threshold_z) + "\nks=" + list_text(ks) +
                      "\ntail=" + to_string(cfg.tail)};
  const SelectionReport report = select_and_rank(model, panel, cfg.threshold_z, ks, cfg.tail, cfg.threads);

  std::vector<std::string> warnings;
  const bool any_sized = std::any_of(panel.units().begin(), panel.units().end(),
                                     [](const Unit& u) { return u.sample_size.has_value(); });
  const bool any_var = std::any_of(panel.units().begin(), panel.units().end(),
                                   [](const Unit& u) { return u.sampling_variance.has_value(); });
  if (any_sized)
    warnings.push_back("panel gives sample sizes; variances are sampling_variance / n with sampling_variance = " +
                       io::format_double(model.default_sampling_variance()));
  if (any_var)
    warnings.push_back("panel gives per-unit variances; the model default sampling_variance = " +
                       io::format_double(model.default_sampling_variance()) + " applies only to units without one");

  nlohmann::ordered_json j;
  j["header"] = header_json(h);
  j["threshold_z"] = report.threshold_z;
  j["tail"] = to_string(report.tail);
  j["k"] = report.k;
  j["ks"] = report.ks;
  j["panel_size"] = panel.size();
  j["selected_count"] = report.selected.size();
  j["empty_selection"] = report.selected.empty();
  j["averaged_exceedance"] =
      report.averaged_exceedance ? nlohmann::ordered_json(*report.averaged_exceedance) : nlohmann::ordered_json(nullptr);
  j["expected_true_exceedances"] = report.expected_true_exceedances;
  nlohmann::ordered_json by_k = nlohmann::ordered_json::array();
  for (const auto& [k, avg] : report.averaged_by_k) by_k.push_back({{"k", k}, {"averaged_exceedance", avg}});
  j["averaged_by_k"] = by_k;
  j["warnings"] = warnings;

  CommandOutput out;
  out.files.push_back(dir.write("selection.csv", selection_csv(report, h)));
  out.files.push_back(dir.write("selection.json", dump(j)));
  out.files.push_back(dir.write("selection.svg", selection_svg(model, panel, h)));
  std::ostringstream text;
  text << "selected " << report.selected.size() << " of " << panel.size() << " units";
  if (report.averaged_exceedance)
    text << "; averaged exceedance at k=" << io::format_sig4(report.k) << ": "
         << io::format_sig4(*report.averaged_exceedance) << "; expected true exceedances: "
         << io::format_sig4(report.expected_true_exceedances);
  else
    text << "; empty selection";
  text << '\n';
  for (const auto& w : warnings) text << "warning: " << w << '\n';
  out.text = text.str();
  return out;
}

// ---- fit --------------------------------------------------------------------------

inline CommandOutput cmd_fit(const RunConfig& cfg) {
  if (cfg.input.empty()) throw invalid_input("fit needs --input");
  OutputDir dir(cfg.out, cfg.force);
  dir.check({"model.cfg", "fit_report.json"});
  const std::string panel_bytes = read_bytes(cfg.input);
  std::istringstream panel_in(panel_bytes);
  const ZPanel panel = io::read_panel(panel_in);

  NullComponent null = NullComponent::theoretical();
  if (cfg.null_kind == "empirical") null = fit_empirical_null(panel, {.center_fraction = cfg.center_fraction});
  else if (cfg.null_kind != "theoretical") throw invalid_input("--null must be 'theoretical' or 'empirical'");

  FitOptions opts;
  opts.threads = cfg.threads;
  opts.allow_negative_mean = cfg.allow_negative_mean;
  std::optional<FitResult> fit;
  if (cfg.method == "parametric") {
    fit = fit_parametric(panel, null, std::nullopt, opts);
  } else if (cfg.method == "npmle") {
    opts.max_iterations = 10000;
    const auto grid = parse_grid_spec(cfg.grid);
    fit = fit_npmle_grid(panel, null, grid, cfg.fixed_p0 ? P0Mode::fixed_at(*cfg.fixed_p0) : P0Mode::free(), opts);
  } else {
    throw invalid_input("--method must be 'parametric' or 'npmle'");
  }

  io::RunHeader h{"fit", cfg.seed,
                  "input=" + io::hex64(io::fnv1a(panel_bytes)) + "\nmethod=" + cfg.method + "\nnull=" + cfg.null_kind +
                      "\ncenter_fraction=" + io::format_double(cfg.center_fraction) + "\ngrid=" + cfg.grid +
                      "\nfixed_p0=" + (cfg.fixed_p0 ? io::format_double(*cfg.fixed_p0) : "free") +
                      "\nallow_negative_mean=" + (cfg.allow_negative_mean ? "1" : "0")};
  std::ostringstream model_text;
  io::write_model(model_text, fit->model, &h);

  nlohmann::ordered_json j;
  j["header"] = header_json(h);
  j["method"] = cfg.method;
  j["null"] = {{"kind", null.kind == NullKind::theoretical ? "theoretical" : "empirical"},
               {"delta0", null.delta0},
               {"sigma0", null.sigma0}};
  j["p0"] = fit->model.p0();
  if (auto n = fit->model.g().as_normal()) {
    j["g"] = {{"kind", "normal"}, {"mean", n->mean}, {"variance", n->variance}};
  } else {
    j["g"] = {{"kind", "grid"}, {"mean", fit->model.g().mean()}, {"variance", fit->model.g().variance()}};
  }
  j["log_likelihood"] = fit->log_likelihood;
  j["iterations"] = fit->iterations;
  j["converged"] = fit->converged;
  j["trace"] = fit->trace;
  j["warnings"] = fit->warnings;

  CommandOutput out;
  out.files.push_back(dir.write("model.cfg", model_text.str()));
  out.files.push_back(dir.write("fit_report.json", dump(j)));
  std::ostringstream text;
  text << "fit " << cfg.method << ": p0 = " << io::format_sig4(fit->model.p0())
       << ", g mean = " << io::format_sig4(fit->model.g().mean())
       << ", g variance = " << io::format_sig4(fit->model.g().variance())
       << ", log-likelihood = " << io::format_sig4(fit->log_likelihood) << ", iterations = " << fit->iterations
       << (fit->converged ? " (converged)" : " (not converged)") << '\n';
  for (const auto& w : fit->warnings) text << "warning: " << w << '\n';
  out.text = text.str();
  return out;
}

// ---- moderate ---------------------------------------------------------------------

inline CommandOutput cmd_moderate(const RunConfig& cfg) {
  if (cfg.input.empty()) throw invalid_input("moderate needs --input");
  OutputDir dir(cfg.out, cfg.force);
  dir.check({"panel.csv", "moderation.csv", "moderation.json"});
  const std::string bytes = read_bytes(cfg.input);
  std::istringstream in(bytes);
  const ExpressionMatrix x = io::read_matrix(in);
  const ModerationResult result = moderated_pipeline(x);
  io::RunHeader h{"moderate", cfg.seed, "input=" + io::hex64(io::fnv1a(bytes))};

  std::ostringstream panel_csv;
  io::write_panel(panel_csv, result.panel, &h);
  std::ostringstream report;
  h.write_comment_block(report);
  report << "id,s_raw,s_shrunk,raw_t,moderated_t,z\n";
  for (const auto& s : result.scores)
    report << s.id << ',' << io::format_double(s.s_raw) << ',' << io::format_double(s.s_shrunk) << ','
           << io::format_double(s.raw_t) << ',' << io::format_double(s.moderated_t) << ',' << io::format_double(s.z)
           << '\n';
  nlohmann::ordered_json j;
  j["header"] = header_json(h);
  j["rows"] = x.rows();
  j["group_a"] = x.group_a();
  j["group_b"] = x.group_b();
  j["df"] = result.scores.empty() ? 0 : result.scores.front().df;
  j["d0"] = std::isinf(result.d0) ? nlohmann::ordered_json("inf") : nlohmann::ordered_json(result.d0);
  j["s0"] = result.s0;
  j["total_shrinkage"] = result.total_shrinkage;
  j["flagged"] = result.flagged;

  CommandOutput out;
  out.files.push_back(dir.write("panel.csv", panel_csv.str()));
  out.files.push_back(dir.write("moderation.csv", report.str()));
  out.files.push_back(dir.write("moderation.json", dump(j)));
  std::ostringstream text;
  text << "moderated " << result.scores.size() << " rows; d0 = " << io::format_sig4(result.d0)
       << ", s0 = " << io::format_sig4(result.s0);
  if (!result.flagged.empty()) text << "; " << result.flagged.size() << " rows flagged (zero within-group variance)";
  text << '\n';
  out.text = text.str();
  return out;
}

// ---- simulate -----------------------------------------------------------------------

inline CommandOutput cmd_simulate(const RunConfig& cfg) {
  if (cfg.model.empty()) throw invalid_input("simulate needs --model");
  OutputDir dir(cfg.out, cfg.force);
  dir.check({"panel.csv", "truth.csv"});
  const std::string model_bytes = read_bytes(cfg.model);
  std::istringstream model_in(model_bytes);
  const TwoGroupsModel model = io::read_model(model_in);
  const SampledPanel draw = sample_panel(model, cfg.units, cfg.variances, cfg.seed);
  io::RunHeader h{"simulate", cfg.seed,
                  "model=" + io::hex64(io::fnv1a(model_bytes)) + "\nunits=" + std::to_string(cfg.units) +
                      "\nvariances=" + list_text(cfg.variances)};
  std::ostringstream panel_csv, truth;
  io::write_panel(panel_csv, draw.panel, &h);
  h.write_comment_block(truth);
  truth << "id,mu\n";
  for (std::size_t i = 0; i < draw.panel.size(); ++i)
    truth << draw.panel[i].id << ',' << io::format_double(draw.effects[i]) << '\n';
  CommandOutput out;
  out.files.push_back(dir.write("panel.csv", panel_csv.str()));
  out.files.push_back(dir.write("truth.csv", truth.str()));
  out.text = "simulated " + std::to_string(cfg.units) + " units with seed " + std::to_string(cfg.seed) + "\n";
  return out;
}

// ---- coverage -------------------------------------------------------------------------

// Default study: mu ~ N(0, 1), unit sampling variance, 15 units.
inline CoverageStudy default_coverage_study() {
  CoverageStudy s{TwoGroupsModel(0.0, NullComponent::theoretical(), MixingDistribution::normal(0.0, 1.0), 1.0), 15, {}};
  return s;
}

struct CoverageConfig {
  CoverageStudy study = default_coverage_study();
  std::uint64_t seed = 0;
};

// Study file: the model keys plus n, variances, methods, nominal, replications, seed.
inline CoverageConfig read_coverage_config(std::istream& in, const RunConfig& cfg) {
  auto kv = io::read_key_values(in);
  CoverageConfig c;
  c.seed = cfg.seed;
  c.study.replications = cfg.replications;
  c.study.nominal = cfg.nominal;
  if (kv.count("p0")) c.study.generator = io::model_from_keys(kv);
  for (const auto& [key, value] : kv) {
    const auto& [text, line] = value;
    if (std::find(io::model_keys().begin(), io::model_keys().end(), key) != io::model_keys().end()) continue;
    if (key == "n") c.study.units = static_cast<std::size_t>(io::parse_long(text, line, key));
    else if (key == "variances") c.study.variances = io::parse_list(text, line, key);
    else if (key == "nominal") c.study.nominal = io::parse_double(text, line, key);
    else if (key == "replications") c.study.replications = static_cast<std::size_t>(io::parse_long(text, line, key));
    else if (key == "seed") c.seed = static_cast<std::uint64_t>(io::parse_long(text, line, key));
    else if (key == "methods") {
      c.study.methods.clear();
      for (const auto& m : io::split(text, ',')) c.study.methods.push_back(interval_kind_from_string(m));
    } else {
      throw parse_error("unknown coverage key '" + key + "'", line);
    }
  }
  return c;
}

inline std::string coverage_svg(const CoverageConfig& c, const std::vector<CoverageResult>& results,
                                const io::RunHeader& h) {
  svg::Chart bars("Empirical coverage by interval method", "method", "pooled coverage");
  const double k = static_cast<double>(results.size());
  double lo = 1.0;
  for (const auto& r : results) lo = std::min(lo, r.empirical_coverage);
  lo = std::max(0.0, std::floor((std::min(lo, c.study.nominal) - 0.05) * 20.0) / 20.0);
  bars.set_x_range(0.0, k);
  bars.set_y_range(lo, 1.0);
  const char* colors[] = {"#4f81bd", "#c0504d", "#9bbb59"};
  for (std::size_t m = 0; m < results.size(); ++m) {
    bars.add_bar(m + 0.15, m + 0.85, results[m].empirical_coverage, colors[m % 3]);
    bars.add_legend_entry(colors[m % 3], to_string(results[m].method.kind));
    bars.add_text(m + 0.5, results[m].empirical_coverage, io::format_sig4(results[m].empirical_coverage));
  }
  bars.add_hline(c.study.nominal, "#000000", "nominal");

  // Width against distance from the fitted center for the first replication's panel.
  const SampledPanel draw = sample_panel(c.study.generator, c.study.units, c.study.variances, derive_seed(c.seed, 0, 0x636f76));
  const auto z = draw.panel.z_values();
  const auto v = draw.panel.variances(c.study.generator.default_sampling_variance());
  svg::Chart bow("Interval width vs distance from the fitted center", "|z - center|", "interval width");
  double dmax = 0.0, wmin = 1e300, wmax = 0.0;
  std::vector<std::pair<IntervalKind, BowingProfile>> profiles;
  for (auto kind : c.study.methods) {
    const IntervalMethod method{kind, c.study.nominal};
    const BowingProfile p = bowing_profile(method, z, v, fit_shrinkage(kind, z, v));
    for (const auto& [d, w] : p.points) {
      dmax = std::max(dmax, d);
      wmin = std::min(wmin, w);
      wmax = std::max(wmax, w);
    }
    wmin = std::min(wmin, p.center_width);
    profiles.emplace_back(kind, p);
  }
  bow.set_x_range(0.0, std::max(dmax, 1e-9));
  bow.set_y_range(std::max(0.0, wmin * 0.9), wmax * 1.05 + 1e-9);
  for (std::size_t m = 0; m < profiles.size(); ++m) {
    std::vector<std::pair<double, double>> pts{{0.0, profiles[m].second.center_width}};
    pts.insert(pts.end(), profiles[m].second.points.begin(), profiles[m].second.points.end());
    bow.add_line(pts, colors[m % 3], to_string(profiles[m].first));
  }
  return svg::stack({bars, bow}, h.lines());
}

inline CommandOutput cmd_coverage(const RunConfig& cfg) {
  OutputDir dir(cfg.out, cfg.force);
  dir.check({"coverage.csv", "coverage_by_decile.csv", "coverage.svg"});
  std::string config_bytes;
  CoverageConfig c;
  if (!cfg.config.empty()) {
    config_bytes = read_bytes(cfg.config);
    std::istringstream in(config_bytes);
    c = read_coverage_config(in, cfg);
  } else {
    c.seed = cfg.seed;
    c.study.replications = cfg.replications;
    c.study.nominal = cfg.nominal;
  }
  const auto results = run_coverage_study(c.study, c.seed, cfg.threads);

  std::string methods;
  for (auto m : c.study.methods) methods += to_string(m) + ",";
  io::RunHeader h{"coverage", c.seed,
                  "config=" + io::hex64(io::fnv1a(config_bytes)) + "\nunits=" + std::to_string(c.study.units) +
                      "\nvariances=" + list_text(c.study.variances) + "\nmethods=" + methods +
                      "\nnominal=" + io::format_double(c.study.nominal) +
                      "\nreplications=" + std::to_string(c.study.replications)};

  std::ostringstream csv, deciles;
  h.write_comment_block(csv);
  csv << "method,nominal,replications,units,empirical_coverage,mc_stderr,mean_width,center_mse,mean_slope,"
         "boundary_fraction\n";
  h.write_comment_block(deciles);
  deciles << "method,decile,variance_low,variance_high,coverage\n";
  std::ostringstream text;
  text << "method             coverage  stderr    width\n";
  for (const auto& r : results) {
    csv << to_string(r.method.kind) << ',' << io::format_double(r.method.nominal) << ',' << r.replications << ','
        << r.units << ',' << io::format_double(r.empirical_coverage) << ',' << io::format_double(r.mc_stderr) << ','
        << io::format_double(r.mean_width) << ',' << io::format_double(r.center_mse) << ','
        << io::format_double(r.mean_slope) << ',' << io::format_double(r.boundary_fraction) << '\n';
    for (std::size_t d = 0; d < r.by_variance_decile.size(); ++d) {
      const auto& b = r.by_variance_decile[d];
      deciles << to_string(r.method.kind) << ',' << (d + 1) << ',' << io::format_double(b.variance_low) << ','
              << io::format_double(b.variance_high) << ',' << io::format_double(b.coverage) << '\n';
    }
    std::string name = to_string(r.method.kind);
    name.resize(19, ' ');
    std::string cov = io::format_sig4(r.empirical_coverage), se = io::format_sig4(r.mc_stderr);
    cov.resize(10, ' ');
    se.resize(10, ' ');
    text << name << cov << se << io::format_sig4(r.mean_width) << '\n';
  }
  CommandOutput out;
  out.files.push_back(dir.write("coverage.csv", csv.str()));
  out.files.push_back(dir.write("coverage_by_decile.csv", deciles.str()));
  out.files.push_back(dir.write("coverage.svg", coverage_svg(c, results, h)));
  out.text = text.str();
  return out;
}

inline CommandOutput run(const RunConfig& cfg) {
  switch (cfg.command) {
    case Command::fit: return cmd_fit(cfg);
    case Command::select: return cmd_select(cfg);
    case Command::simulate: return cmd_simulate(cfg);
    case Command::coverage: return cmd_coverage(cfg);
    case Command::moderate: return cmd_moderate(cfg);
    case Command::reproduce_paper: return cmd_reproduce_paper(cfg);
  }
  throw invalid_input("unknown command");
}

// Exit codes: 0 success, 1 validation failure, 2 numerical failure.
inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const degenerate_point*>(&e) || dynamic_cast<const empirical_null_failure*>(&e)) return 2;
  return 1;
}

}  // namespace twogroups::cli
