// Acceptance harness. Prints one PASS/FAIL line per criterion; the exit code
// is nonzero when any selected criterion fails.
//
// Criteria 4 to 7 need the desk experiment (9 search + retrain runs). Runs
// already present under <work>/runs/<mode>/ are reused when their resolved
// config matches the protocol; missing ones are launched here.

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "dot_grammar.hpp"
#include "nasood/cli.hpp"
#include "nasood/nasood.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace nasood;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

json read_json(const fs::path& path) { return json::parse(slurp(path)); }

struct Verdict {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(const std::string& id, const Verdict& v) {
  if (!v.pass) ++failures;
  std::cout << "criterion " << id << ": " << (v.pass ? "PASS" : "FAIL") << "  " << v.detail << std::endl;
}

void report_error(const std::string& id, const std::exception& e) {
  report(id, {false, std::string("error: ") + e.what()});
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

// --- 1 ----------------------------------------------------------------------

Verdict property_suite(const fs::path& unit_tests) {
  const auto start = Clock::now();
  const std::string cmd = "\"" + unit_tests.string() + "\" --test-case=\"property:*\" --no-intro --minimal";
  const int rc = std::system(cmd.c_str());
  const double secs = seconds_since(start);
  return {rc == 0 && secs < 120.0, "unit_tests property:* exit=" + std::to_string(rc) + " runtime=" + fmt(secs) + "s"};
}

// --- 2 ----------------------------------------------------------------------

Verdict gradient_checks() {
  const auto start = Clock::now();
  const auto g = testing::generator_gradient_check(0, 20);
  const auto a = testing::alpha_gradient_check(0, 20);
  const double secs = seconds_since(start);
  const bool pass = g.entries == 20 && a.entries == 20 && g.max_relative_error < 1e-3 &&
                    a.max_relative_error < 1e-3 && secs < 300.0;
  return {pass, "theta_G max_rel=" + fmt(g.max_relative_error) + " (kinks skipped " +
                    std::to_string(g.skipped_kinks) + ")  alpha max_rel=" + fmt(a.max_relative_error) +
                    " (kinks skipped " + std::to_string(a.skipped_kinks) + ")  runtime=" + fmt(secs) + "s"};
}

// Not a criterion: how often the 1e-3 step still lands on a kink.
void gradient_seed_sweep() {
  int gen_ok = 0, alpha_ok = 0;
  constexpr int kSeeds = 8;
  for (uint64_t seed = 0; seed < kSeeds; ++seed) {
    gen_ok += testing::generator_gradient_check(seed, 20).max_relative_error < 1e-3;
    alpha_ok += testing::alpha_gradient_check(seed, 20).max_relative_error < 1e-3;
  }
  std::cout << "info 2: seeds 0-" << kSeeds - 1 << " at step 1e-3 within 1e-3: theta_G " << gen_ok << "/" << kSeeds
            << ", alpha " << alpha_ok << "/" << kSeeds << std::endl;
}

// --- 3 ----------------------------------------------------------------------

Verdict directionality() {
  constexpr double kTol = 1e-8;
  bool pass = true;
  std::ostringstream detail;
  for (uint64_t seed : {0, 1, 2}) {
    const auto d = testing::minimax_directionality(seed, 1e-4);
    const bool ok = d.generator_after >= d.generator_before - kTol && d.omega_after <= d.omega_before + kTol &&
                    d.alpha_after <= d.alpha_before + kTol;
    pass = pass && ok;
    detail << "seed" << seed << "[dG=" << fmt(d.generator_after - d.generator_before, 3)
           << " dW=" << fmt(d.omega_after - d.omega_before, 3) << " dA=" << fmt(d.alpha_after - d.alpha_before, 3)
           << "] ";
  }
  return {pass, detail.str()};
}

// --- 4 to 7 -------------------------------------------------------------------

struct Protocol {
  int64_t epochs = 30;
  int64_t layers = 4;
  int64_t init_channels = 8;
  int64_t batch_size = 64;
  int64_t retrain_epochs = 30;
  int64_t samples_per_cell = 200;
  std::string target = "d3";
};

struct DeskRun {
  fs::path dir;
  json metrics;
};

int call_cli(const std::vector<std::string>& args, std::string& out_line) {
  std::vector<const char*> argv{"nasood"};
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int rc = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  std::istringstream lines(out.str());
  std::getline(lines, out_line);
  if (rc != 0) std::cerr << err.str();
  return rc;
}

class Desk {
 public:
  Desk(fs::path work, Protocol p) : work_(std::move(work)), p_(std::move(p)) {}

  fs::path data() {
    const auto dir = work_ / "data";
    if (!fs::exists(dir)) {
      std::string line;
      const int rc = call_cli({"synth-data", "--out", dir.string(), "--seed", "0", "--samples-per-cell",
                               std::to_string(p_.samples_per_cell), "--image-size", "16"},
                              line);
      if (rc != 0) throw std::runtime_error("synth-data failed");
    }
    return dir;
  }

  std::vector<std::string> search_args(const std::string& mode, uint64_t seed, int64_t retrain_epochs,
                                       const fs::path& out) {
    return {"search",          "--mode",          mode,
            "--data",          data().string(),   "--target-domain",
            p_.target,         "--layers",        std::to_string(p_.layers),
            "--init-channels", std::to_string(p_.init_channels), "--epochs",
            std::to_string(p_.epochs), "--batch-size", std::to_string(p_.batch_size),
            "--seed",          std::to_string(seed), "--retrain-epochs",
            std::to_string(retrain_epochs), "--deterministic", "--out",
            out.string()};
  }

  bool matches(const json& r, const std::string& mode, uint64_t seed) const {
    return r.value("mode", "") == mode && r.value("seed", uint64_t{0}) == seed && r.value("epochs", 0) == p_.epochs &&
           r.value("layers", 0) == p_.layers && r.value("init_channels", 0) == p_.init_channels &&
           r.value("batch_size", 0) == p_.batch_size && r.value("retrain_epochs", 0) == p_.retrain_epochs &&
           r.value("target_domain", "") == p_.target && r.value("deterministic", false);
  }

  DeskRun get(const std::string& mode, uint64_t seed) {
    const auto root = work_ / "runs" / mode;
    if (fs::exists(root)) {
      std::vector<fs::path> dirs;
      for (const auto& e : fs::directory_iterator(root)) dirs.push_back(e.path());
      std::sort(dirs.begin(), dirs.end());
      for (const auto& dir : dirs) {
        if (!fs::exists(dir / "metrics.json") || !fs::exists(dir / "resolved_config.json")) continue;
        if (matches(read_json(dir / "resolved_config.json"), mode, seed)) return {dir, read_json(dir / "metrics.json")};
      }
    }
    std::cerr << "running " << mode << " seed " << seed << " (not cached)" << std::endl;
    std::string line;
    if (call_cli(search_args(mode, seed, p_.retrain_epochs, root), line) != 0) {
      throw std::runtime_error(mode + " seed " + std::to_string(seed) + " failed");
    }
    return {fs::path(line), read_json(fs::path(line) / "metrics.json")};
  }

  fs::path rerun_genotype(const std::string& mode, uint64_t seed) {
    const auto root = work_ / "rerun";
    fs::remove_all(root);
    std::string line;
    if (call_cli(search_args(mode, seed, 0, root), line) != 0) throw std::runtime_error("rerun failed");
    return fs::path(line) / "genotype.json";
  }

 private:
  fs::path work_;
  Protocol p_;
};

double accuracy(const DeskRun& r) { return r.metrics.at("target_accuracy").get<double>(); }

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); }

std::string list(const std::vector<double>& v) {
  std::string s;
  for (double x : v) s += (s.empty() ? "" : ",") + fmt(100.0 * x, 4);
  return s;
}

double timing(const DeskRun& r) {
  const auto path = r.dir / "timing.json";
  return fs::exists(path) ? read_json(path).value("wall_time_s", 0.0) : 0.0;
}

Verdict adversarial_evidence(const DeskRun& run) {
  std::ifstream in(run.dir / "history.jsonl");
  std::vector<json> rows;
  int64_t last_epoch = 0;
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    rows.push_back(json::parse(line));
    last_epoch = std::max<int64_t>(last_epoch, rows.back().at("epoch").get<int64_t>());
  }
  double val = 0.0, train = 0.0;
  int64_t n = 0;
  for (const auto& r : rows) {
    if (r.at("epoch").get<int64_t>() <= last_epoch - 10) continue;
    val += r.at("l_val_synth").get<double>();
    train += r.at("l_train").get<double>();
    ++n;
  }
  if (n == 0) return {false, "empty history"};
  val /= n;
  train /= n;
  return {val >= train, "epochs " + std::to_string(last_epoch - 9) + "-" + std::to_string(last_epoch) +
                            " mean l_val_synth=" + fmt(val) + " mean l_train=" + fmt(train) + " (" +
                            std::to_string(n) + " steps)"};
}

// --- 8 ----------------------------------------------------------------------

Verdict analysis_fidelity() {
  using K = OperationKind;
  // Hand counts over the fixture's 16 slots.
  std::array<double, kNumOperations> expected{};
  expected[op_index(K::kMaxPool3x3)] = 4;
  expected[op_index(K::kAvgPool3x3)] = 1;
  expected[op_index(K::kSkipConnect)] = 3;
  expected[op_index(K::kSepConv3x3)] = 4;
  expected[op_index(K::kSepConv5x5)] = 1;
  expected[op_index(K::kDilConv3x3)] = 2;
  expected[op_index(K::kDilConv5x5)] = 1;
  const auto fixture = testing::fixture_genotype();
  const auto counted = op_percentages(fixture);
  bool counts_ok = true;
  for (int i = 0; i < kNumOperations; ++i) counts_ok = counts_ok && counted[i] == expected[i] / 16.0;

  std::vector<Genotype> snapshots;
  for (uint64_t s = 0; s < 30; ++s) snapshots.push_back(random_genotype(s));
  const auto csv = temporal_stability_csv(temporal_stability(snapshots));
  const auto lines = std::count(csv.begin(), csv.end(), '\n');
  const bool rows_ok = lines == 1 + 30 * 7;

  bool dot_ok = true;
  std::string dot_detail;
  try {
    for (uint64_t s = 0; s < 20; ++s) {
      auto g = s == 0 ? fixture : random_genotype(s);
      if (s > 0) g.meta = {"synthetic", static_cast<int64_t>(s), 30};
      const auto dot = export_genotype_dot(g);
      const auto graphs = testing::parse_dot(dot);
      dot_ok = dot_ok && graphs.size() == 2 && testing::genotype_from_dot(dot) == g;
    }
  } catch (const std::exception& e) {
    dot_ok = false;
    dot_detail = std::string(" (") + e.what() + ")";
  }
  return {counts_ok && rows_ok && dot_ok, std::string("fixture counts ") + (counts_ok ? "exact" : "WRONG") +
                                              "; temporal rows=" + std::to_string(lines - 1) +
                                              "; dot parse+round-trip " + (dot_ok ? "ok" : "failed") + dot_detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"NAS-OoD acceptance checks"};
  std::string unit_tests = NASOOD_UNIT_TESTS;
  std::string work = NASOOD_ACCEPTANCE_WORK;
  std::vector<int> only;
  bool sweep = false;
  app.add_option("--unit-tests", unit_tests, "Path to the unit_tests binary");
  app.add_option("--work-dir", work, "Desk experiment directory (data, runs)");
  app.add_option("--only", only, "Run only these criteria")->delimiter(',');
  app.add_flag("--gradient-sweep", sweep, "Also report the multi-seed gradient sweep");
  CLI11_PARSE(app, argc, argv);

  auto selected = [&](int c) { return only.empty() || std::count(only.begin(), only.end(), c) > 0; };

  if (selected(1)) {
    try { report("1", property_suite(unit_tests)); } catch (const std::exception& e) { report_error("1", e); }
  }
  if (selected(2)) {
    try { report("2", gradient_checks()); } catch (const std::exception& e) { report_error("2", e); }
    if (sweep) gradient_seed_sweep();
  }
  if (selected(3)) {
    try { report("3", directionality()); } catch (const std::exception& e) { report_error("3", e); }
  }

  if (selected(4) || selected(5) || selected(6) || selected(7)) {
    Desk desk(work, Protocol{});
    std::optional<DeskRun> nasood0;
    std::vector<double> full;
    try {
      std::vector<DeskRun> nas, rnd;
      std::vector<double> random;
      double cpu = 0.0;
      for (uint64_t s : {0, 1, 2}) {
        nas.push_back(desk.get("nasood", s));
        rnd.push_back(desk.get("random", s));
        full.push_back(accuracy(nas.back()));
        random.push_back(accuracy(rnd.back()));
        cpu += timing(nas.back()) + timing(rnd.back());
      }
      nasood0 = nas.front();
      if (selected(4)) {
        const double gap = 100.0 * (mean(full) - mean(random));
        std::cout << "info 4: runtime of the six runs " << fmt(cpu / 60.0) << " min (envelope ~45 min)" << std::endl;
        report("4", {gap >= 3.0 && cpu <= 45.0 * 60.0, "nasood [" + list(full) + "] mean " + fmt(100.0 * mean(full)) +
                                                           "  random [" + list(random) + "] mean " +
                                                           fmt(100.0 * mean(random)) + "  gap " + fmt(gap) +
                                                           " points  runtime " + fmt(cpu / 60.0) + " min"});
      }
    } catch (const std::exception& e) {
      if (selected(4)) report_error("4", e);
    }
    if (selected(5)) {
      try {
        if (full.size() != 3) throw std::runtime_error("nasood runs unavailable");
        std::vector<double> ablated;
        for (uint64_t s : {0, 1, 2}) ablated.push_back(accuracy(desk.get("nasood-no-cycle", s)));
        report("5", {mean(ablated) <= mean(full), "nasood-no-cycle [" + list(ablated) + "] mean " +
                                                      fmt(100.0 * mean(ablated)) + "  nasood mean " +
                                                      fmt(100.0 * mean(full))});
      } catch (const std::exception& e) {
        report_error("5", e);
      }
    }
    if (selected(6)) {
      if (nasood0) report("6", adversarial_evidence(*nasood0));
      else report("6", {false, "nasood seed 0 unavailable"});
    }
    if (selected(7)) {
      try {
        if (!nasood0) throw std::runtime_error("nasood seed 0 unavailable");
        const auto again = desk.rerun_genotype("nasood", 0);
        const auto a = slurp(nasood0->dir / "genotype.json");
        const auto b = slurp(again);
        report("7", {!a.empty() && a == b, nasood0->dir.filename().string() + " vs fresh rerun: " +
                                               (a == b ? "byte-identical" : "DIFFERENT") + " (" +
                                               std::to_string(a.size()) + " bytes)"});
      } catch (const std::exception& e) {
        report_error("7", e);
      }
    }
  }

  if (selected(8)) {
    try { report("8", analysis_fidelity()); } catch (const std::exception& e) { report_error("8", e); }
  }
  return failures == 0 ? 0 : 1;
}
