#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "bison/diagnostics.hpp"
#include "bison/experiment.hpp"
#include "bison/report.hpp"

using namespace bison;

namespace {

constexpr double kGradTolerance = 1e-4;

int fail(const std::string& type, const std::string& message, json extra = json::object(), int code = 1) {
  json err = {{"type", type}, {"message", message}};
  err.update(extra);
  std::cerr << json{{"error", err}}.dump() << "\n";
  return code;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%6.2f", v * 100.0);
  return buf;
}

void print_summary(const RunReport& report) {
  std::printf("%-12s %8s %5s %16s %16s %16s\n", "method", "capacity", "runs", "AA (%)", "AF (%)", "AI (%)");
  auto cell = [](const std::optional<MeanStd>& m) {
    if (!m) return std::string("n/a");
    return pct(m->mean) + (m->std ? " +- " + pct(*m->std) : std::string());
  };
  for (const auto& a : report.aggregates) {
    std::printf("%-12s %8zu %5zu %16s %16s %16s\n", a.method.c_str(), a.capacity, a.runs,
                cell(a.aa).c_str(), cell(a.af).c_str(), cell(a.ai).c_str());
  }
}

int cmd_run(const std::string& config_path, std::uint64_t seed_offset, std::size_t jobs, bool fixed_order,
            const std::string& out) {
  ExperimentConfig config;
  try {
    config = ExperimentConfig::from_json(read_json_file(config_path));
    if (fixed_order) config.fixed_class_order = true;
    config.validate();
  } catch (const ConfigError& e) {
    return fail("config", e.what(), {{"field", e.field()}});
  }
  const std::string outdir = out.empty() ? config.output_dir : out;
  const auto report = run_experiment(config, {jobs, seed_offset});
  const auto files = emit_report(report, outdir);
  print_summary(report);
  std::cout << "wrote " << files.size() << " files to " << outdir << "\n";

  json failed = json::array();
  for (const auto& c : report.cells)
    if (!c.ok()) failed.push_back({{"cell", c.cell_name()}, {"message", *c.error}});
  for (const auto& b : report.upper_bounds)
    if (b.error) failed.push_back({{"upper_bound_seed", b.seed}, {"message", *b.error}});
  if (!failed.empty()) return fail("cells", "some grid cells failed", {{"cells", failed}}, 3);
  return 0;
}

int cmd_report(const std::string& results, const std::string& outdir) {
  const auto report = report_from_json(read_json_file(results));
  const auto files = emit_report(report, outdir);
  print_summary(report);
  std::cout << "wrote " << files.size() << " files to " << outdir << "\n";
  return 0;
}

int cmd_grad_check(std::uint64_t seed, std::size_t instances) {
  bool ok = true;
  for (const auto& r : grad_check_suite(seed, instances)) {
    const bool pass = r.max_rel_error <= kGradTolerance;
    ok = ok && pass;
    std::printf("%-6s instances=%zu max_rel_error=%.3e %s\n", r.loss.c_str(), r.instances, r.max_rel_error,
                pass ? "PASS" : "FAIL");
  }
  const auto flow = gradient_flow_suite(seed, instances);
  std::printf("flow   instances=%zu align->W_str=%zu ce_buf->W_str=%zu stream->W_buf=%zu swap_diff=%zu %s\n",
              flow.instances, flow.align_wstr_nonzero, flow.cebuf_wstr_nonzero, flow.stream_wbuf_nonzero,
              flow.stream_swap_wbuf_diff, flow.ok() ? "PASS" : "FAIL");
  ok = ok && flow.ok();
  if (!ok) return fail("grad-check", "gradient check failed");
  return 0;
}

int cmd_bench(const std::string& which, std::uint64_t seed) {
  if (which == "reservoir") {
    const auto r = reservoir_bench(seed);
    const bool pass = std::abs(r.first_half_fraction - 0.5) <= 0.05 && r.capacity_violations == 0;
    std::printf("trials=%zu first_half_fraction=%.4f sequences=%zu max_size=%zu violations=%zu %s\n", r.trials,
                r.first_half_fraction, r.property_sequences, r.max_size_seen, r.capacity_violations,
                pass ? "PASS" : "FAIL");
    return pass ? 0 : fail("bench", "reservoir statistics out of range");
  }
  const auto r = metrics_bench(seed);
  const bool pass = r.max_abs_diff <= 1e-12;
  std::printf("matrices=%zu max_abs_diff=%.3e %s\n", r.matrices, r.max_abs_diff, pass ? "PASS" : "FAIL");
  return pass ? 0 : fail("bench", "metrics disagree with the direct transcription");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Online class-incremental learning experiments"};
  app.require_subcommand(0, 1);
  bool print_schema = false;
  app.add_flag("--print-schema", print_schema, "Print the experiment config JSON schema and exit");

  auto* run = app.add_subcommand("run", "Run an experiment grid and write its report");
  std::string config_path, out;
  std::uint64_t seed_offset = 0;
  std::size_t jobs = 1;
  bool fixed_order = false;
  run->add_option("config", config_path, "Experiment config (JSON)")->required();
  run->add_option("--seed-offset", seed_offset, "Added to every configured seed");
  run->add_option("--jobs", jobs, "Grid cells run in parallel")->check(CLI::PositiveNumber);
  run->add_flag("--fixed-class-order", fixed_order, "Use the fixed similar-pair class schedule");
  run->add_option("--out", out, "Output directory (default: the config's output_dir)");

  auto* report = app.add_subcommand("report", "Re-emit CSV/SVG outputs from a results.json");
  std::string results, outdir;
  report->add_option("results", results, "results.json")->required();
  report->add_option("outdir", outdir, "Output directory")->required();

  auto* grad = app.add_subcommand("grad-check", "Run the finite-difference gradient suite");
  std::uint64_t seed = 0;
  std::size_t instances = 20;
  grad->add_option("--seed", seed);
  grad->add_option("--instances", instances)->check(CLI::PositiveNumber);

  auto* bench = app.add_subcommand("bench", "Statistical oracles");
  std::string which;
  bench->add_option("which", which, "reservoir | metrics")->required()->check(CLI::IsMember({"reservoir", "metrics"}));
  bench->add_option("--seed", seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), json::object(), 2);
  }

  try {
    if (print_schema) {
      std::cout << config_schema().dump(2) << "\n";
      return 0;
    }
    if (*run) return cmd_run(config_path, seed_offset, jobs, fixed_order, out);
    if (*report) return cmd_report(results, outdir);
    if (*grad) return cmd_grad_check(seed, instances);
    if (*bench) return cmd_bench(which, seed);
    std::cout << app.help();
    return 2;
  } catch (const ConfigError& e) {
    return fail("config", e.what(), {{"field", e.field()}});
  } catch (const ReportError& e) {
    return fail("io", e.what(), {{"path", e.path().string()}});
  } catch (const std::exception& e) {
    return fail("runtime", e.what());
  }
}
