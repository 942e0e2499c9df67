// Acceptance suite: one PASS/FAIL line per criterion.
//   acceptance               run all criteria, exit 1 if any fails
//   acceptance --criterion N run one criterion

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "twogroups/cli.hpp"

using namespace twogroups;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

TwoGroupsModel example() { return cli::example_model(); }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double x) { return io::format_sig4(x); }

// Golden values of the worked example.
Outcome golden_values() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto checks = cli::example_checks();
  const double secs = seconds_since(t0);
  Outcome o{secs < 1.0, ""};
  for (const auto& c : checks) {
    o.pass = o.pass && c.pass();
    if (!c.pass()) o.detail += c.name + " = " + fmt(c.value) + " outside " + c.target + "; ";
  }
  o.detail += std::to_string(checks.size()) + " checks in " + fmt(secs) + " s";
  return o;
}

// E(fdr(Z) | Z <= z) by quadrature against the closed-form lower-tail Fdr.
Outcome fdr_identity() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto m = example();
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    const double z = -3.0 + 0.5 * i;
    worst = std::max(worst, std::abs(averaged_local_fdr_below(m, z, 1.0) - tail_fdr(m, z, 1.0, Tail::lower)));
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 5.0, "max |difference| " + fmt(worst) + " over 20 z in " + fmt(secs) + " s"};
}

// fit_parametric on 50 seeded worked-example panels.
Outcome parameter_recovery() {
  const auto t0 = std::chrono::steady_clock::now();
  constexpr std::size_t seeds = 50;
  std::vector<int> recovered(seeds), monotone(seeds);
  parallel_for(seeds, 0, [&](std::size_t s) {
    const auto panel = sample_panel(example(), 3000, {}, derive_seed(2024, s, 0x616333)).panel;
    const auto fit = fit_parametric(panel, NullComponent::theoretical());
    const auto g = *fit.model.g().as_normal();
    recovered[s] = std::abs(fit.model.p0() - 0.9) <= 0.03 && std::abs(g.mean - 2.5) <= 0.10 &&
                   std::abs(g.variance - 0.5) <= 0.15;
    monotone[s] = 1;
    for (std::size_t i = 1; i < fit.trace.size(); ++i)
      if (fit.trace[i] < fit.trace[i - 1] - 1e-9 * std::abs(fit.trace[i - 1])) monotone[s] = 0;
  });
  const double secs = seconds_since(t0);
  const int rec = std::accumulate(recovered.begin(), recovered.end(), 0);
  const int mono = std::accumulate(monotone.begin(), monotone.end(), 0);
  return {rec >= 45 && mono == 50 && secs < 60.0,
          "recovered " + std::to_string(rec) + "/50 (need 45), EM monotone " + std::to_string(mono) + "/50, " +
              fmt(secs) + " s"};
}

// NPMLE marginal against the true marginal.
Outcome npmle_sanity() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto panel = sample_panel(example(), 3000, {}, derive_seed(2024, 0, 0x616334)).panel;
  const auto grid = make_grid(0.0, 5.0, 0.1);
  const auto fit = fit_npmle_grid(panel, NullComponent::theoretical(), grid);
  double sup = 0.0;
  for (double z = -4.0; z <= 8.0 + 1e-12; z += 0.01)
    sup = std::max(sup, std::abs(marginal_density(fit.model, z, 1.0) - marginal_density(example(), z, 1.0)));
  const double secs = seconds_since(t0);
  return {sup < 0.01 && secs < 120.0,
          "sup distance " + fmt(sup) + " on [-4, 8], g mean " + fmt(fit.model.g().mean()) + ", " + fmt(secs) + " s"};
}

double eb_bowing_ratio(std::size_t n, std::uint64_t seed) {
  const TwoGroupsModel gen(0.0, NullComponent::theoretical(), MixingDistribution::normal(0.0, 1.0), 1.0);
  const auto draw = sample_panel(gen, n, {}, seed);
  const auto z = draw.panel.z_values();
  const auto v = draw.panel.variances(1.0);
  const IntervalMethod eb{IntervalKind::eb_adjusted, 0.95};
  return bowing_profile(eb, z, v, fit_shrinkage(eb.kind, z, v)).ratio;
}

// Coverage contrast and bowing.
Outcome coverage_contrast() {
  const auto t0 = std::chrono::steady_clock::now();
  CoverageStudy study = cli::default_coverage_study();
  study.units = 15;
  study.nominal = 0.95;
  study.replications = 2000;
  const auto rs = run_coverage_study(study, 20240515, 0);
  double plug = 0, eb = 0, raw = 0, raw_se = 0;
  for (const auto& r : rs) {
    if (r.method.kind == IntervalKind::plugin_shrunken) plug = r.empirical_coverage;
    if (r.method.kind == IntervalKind::eb_adjusted) eb = r.empirical_coverage;
    if (r.method.kind == IntervalKind::raw) raw = r.empirical_coverage, raw_se = r.mc_stderr;
  }
  const double secs = seconds_since(t0);
  const double bow18 = eb_bowing_ratio(18, 1), bow10k = eb_bowing_ratio(10000, 1);
  const bool pass = plug < 0.90 && eb >= 0.93 && std::abs(raw - 0.95) <= 3.0 * raw_se && secs < 60.0 && bow18 > 1.01 &&
                    bow10k < 1.005;
  return {pass, "plugin " + fmt(plug) + ", eb_adjusted " + fmt(eb) + ", raw " + fmt(raw) + " (se " + fmt(raw_se) +
                    "), bowing N=18 " + fmt(bow18) + ", N=10000 " + fmt(bow10k) + ", " + fmt(secs) + " s"};
}

// Top-100 false-discovery proportion, ranking by |score|.
double top_fdp(const std::vector<double>& score, const std::vector<bool>& non_null) {
  std::vector<std::size_t> idx(score.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return std::abs(score[a]) > std::abs(score[b]); });
  int false_hits = 0;
  for (std::size_t i = 0; i < 100; ++i) false_hits += !non_null[idx[i]];
  return false_hits / 100.0;
}

// Variance moderation lowers the false-discovery proportion.
Outcome moderation_fdp() {
  const auto t0 = std::chrono::steady_clock::now();
  constexpr std::size_t seeds = 50;
  std::vector<int> better(seeds);
  std::vector<double> raw_fdp(seeds), mod_fdp(seeds);
  parallel_for(seeds, 0, [&](std::size_t s) {
    const auto sim = simulate_expression({.rows = 2000, .per_group = 3, .non_null_fraction = 0.05, .shift = 2.0},
                                         derive_seed(2024, s, 0x616336));
    const auto r = moderated_pipeline(sim.matrix);
    std::vector<double> raw, mod;
    std::vector<bool> truth;
    // Flagged rows (none expected for continuous data) are dropped from both rankings.
    std::size_t row = 0;
    for (const auto& score : r.scores) {
      while (sim.matrix.row_ids()[row] != score.id) ++row;
      raw.push_back(score.raw_t);
      mod.push_back(score.z);
      truth.push_back(sim.non_null[row]);
    }
    raw_fdp[s] = top_fdp(raw, truth);
    mod_fdp[s] = top_fdp(mod, truth);
    better[s] = mod_fdp[s] < raw_fdp[s];
  });
  const double secs = seconds_since(t0);
  const int wins = std::accumulate(better.begin(), better.end(), 0);
  const double mean_raw = std::accumulate(raw_fdp.begin(), raw_fdp.end(), 0.0) / seeds;
  const double mean_mod = std::accumulate(mod_fdp.begin(), mod_fdp.end(), 0.0) / seeds;
  return {wins >= 45 && secs < 60.0, "moderated below raw in " + std::to_string(wins) + "/50 seeds (need 45); mean FDP raw " +
                                         fmt(mean_raw) + ", moderated " + fmt(mean_mod) + ", " + fmt(secs) + " s"};
}

// Ranking and k: invariant for equal variances, a stored unequal pair swaps.
Outcome ranking_k() {
  const auto m = example();
  const std::vector<double> ks{0.0, 1.0, 2.0, 2.8, 3.5};
  int invariant = 0;
  for (std::uint64_t p = 0; p < 100; ++p) {
    std::mt19937_64 rng(p);
    const double v = std::uniform_real_distribution<double>(0.2, 3.0)(rng);
    const std::size_t n = 2 + rng() % 60;
    const auto panel = sample_panel(m, n, std::vector<double>{v}, derive_seed(7, p)).panel;
    invariant += !ranking_k_sensitivity(m, panel, ks).any_order_change;
  }
  const ZPanel pair({Unit{"u1", 3.0, 1.0, std::nullopt}, Unit{"u2", 2.2, 0.25, std::nullopt}});
  const std::vector<double> pair_ks{0.5, 3.0};
  const bool swaps = ranking_k_sensitivity(m, pair, pair_ks).any_order_change;
  return {invariant == 100 && swaps, "k-invariant on " + std::to_string(invariant) +
                                         "/100 equal-variance panels; (z=3.0,V=1) vs (z=2.2,V=0.25) swaps between k=0.5 "
                                         "and k=3.0: " + (swaps ? "yes" : "no")};
}

// Byte-identical outputs across runs and worker counts.
Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "twogroups_acceptance_determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  {
    std::ofstream(root / "example.cfg") << "p0 = 0.9\ng.kind = normal\ng.mean = 2.5\ng.variance = 0.5\n";
  }
  const auto sim = simulate_expression({.rows = 300, .per_group = 3, .non_null_fraction = 0.05}, 4);
  {
    std::ofstream os(root / "x.tsv");
    io::write_matrix(os, sim.matrix);
  }

  auto run_all = [&](unsigned threads, const std::string& tag) {
    const fs::path out = root / tag;
    cli::RunConfig base;
    base.threads = threads;
    base.seed = 17;
    base.force = true;

    cli::RunConfig sim_cfg = base;
    sim_cfg.command = cli::Command::simulate;
    sim_cfg.model = (root / "example.cfg").string();
    sim_cfg.out = (out / "simulate").string();
    cli::run(sim_cfg);

    cli::RunConfig fit = base;
    fit.command = cli::Command::fit;
    fit.input = (out / "simulate" / "panel.csv").string();
    fit.out = (out / "fit").string();
    cli::run(fit);
    fit.method = "npmle";
    fit.out = (out / "npmle").string();
    cli::run(fit);

    cli::RunConfig sel = base;
    sel.command = cli::Command::select;
    sel.input = fit.input;
    sel.model = (out / "fit" / "model.cfg").string();
    sel.ks = {2.8, 2.0};
    sel.out = (out / "select").string();
    cli::run(sel);

    cli::RunConfig mod = base;
    mod.command = cli::Command::moderate;
    mod.input = (root / "x.tsv").string();
    mod.out = (out / "moderate").string();
    cli::run(mod);

    cli::RunConfig cov = base;
    cov.command = cli::Command::coverage;
    cov.replications = 300;
    cov.out = (out / "coverage").string();
    cli::run(cov);

    cli::RunConfig rep = base;
    rep.out = (out / "reproduce").string();
    cli::run(rep);

    std::vector<std::pair<std::string, std::string>> files;
    for (const auto& e : fs::recursive_directory_iterator(out))
      if (e.is_regular_file()) files.emplace_back(fs::relative(e.path(), out).string(), cli::read_bytes(e.path().string()));
    std::sort(files.begin(), files.end());
    return files;
  };

  const auto reference = run_all(1, "t1");
  std::size_t mismatches = 0;
  std::string first_mismatch;
  for (const auto& [threads, tag] : std::vector<std::pair<unsigned, std::string>>{{1, "t1b"}, {4, "t4"}, {16, "t16"}}) {
    const auto other = run_all(threads, tag);
    if (other.size() != reference.size()) {
      ++mismatches;
      first_mismatch = tag + ": file count differs";
      continue;
    }
    for (std::size_t i = 0; i < other.size(); ++i)
      if (other[i] != reference[i]) {
        ++mismatches;
        if (first_mismatch.empty()) first_mismatch = tag + "/" + other[i].first;
      }
  }
  fs::remove_all(root);
  return {mismatches == 0 && !reference.empty(),
          std::to_string(reference.size()) + " files compared at 1 (twice), 4 and 16 workers; " +
              std::to_string(mismatches) + " mismatches" + (first_mismatch.empty() ? "" : " (first: " + first_mismatch + ")")};
}

struct Criterion {
  int id;
  std::string title;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {1, "golden values of the worked example", golden_values},
      {2, "fdr/Fdr tail identity", fdr_identity},
      {3, "parametric EM parameter recovery", parameter_recovery},
      {4, "NPMLE marginal sanity", npmle_sanity},
      {5, "interval coverage contrast and bowing", coverage_contrast},
      {6, "variance moderation lowers false discoveries", moderation_fdp},
      {7, "ranking depends on k only under unequal variances", ranking_k},
      {8, "determinism across runs and worker counts", determinism},
  };
  int only = 0;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--criterion" && i + 1 < argc) only = std::stoi(argv[++i]);
    else {
      std::cerr << "usage: acceptance [--criterion N]\n";
      return 2;
    }
  }
  bool all = true;
  for (const auto& c : criteria) {
    if (only && c.id != only) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    all = all && o.pass;
    std::cout << "AC" << c.id << ' ' << (o.pass ? "PASS" : "FAIL") << "  " << c.title << ": " << o.detail << std::endl;
  }
  return all ? 0 : 1;
}
