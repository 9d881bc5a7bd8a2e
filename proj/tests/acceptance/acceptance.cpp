// Prints one PASS/FAIL line per acceptance criterion; exits 1 if any fail.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <thread>

#include "bison/diagnostics.hpp"
#include "bison/experiment.hpp"
#include "bison/report.hpp"

using namespace bison;

namespace {

using Clock = std::chrono::steady_clock;

int failures = 0;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void report_line(int n, bool pass, const std::string& detail) {
  std::printf("Criterion %d: %s %s\n", n, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  failures += !pass;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::size_t jobs() { return std::max(1u, std::thread::hardware_concurrency()); }

const Aggregate* find(const RunReport& r, const std::string& method) {
  for (const auto& a : r.aggregates)
    if (a.method == method) return &a;
  return nullptr;
}

void criterion1() {
  const auto t0 = Clock::now();
  bool pass = true;
  std::string detail;
  for (const auto& r : grad_check_suite(2024, 20, 1e-5)) {
    pass = pass && r.instances == 20 && r.max_rel_error <= 1e-4;
    detail += r.loss + "=" + fmt("%.2e", r.max_rel_error) + " ";
  }
  const double secs = seconds_since(t0);
  pass = pass && secs < 30.0;
  report_line(1, pass, detail + fmt("runtime=%.1fs", secs));
}

void criterion2() {
  const auto r = gradient_flow_suite(2025, 10);
  std::ostringstream d;
  d << "instances=" << r.instances << " align_wstr_nonzero=" << r.align_wstr_nonzero
    << " cebuf_wstr_nonzero=" << r.cebuf_wstr_nonzero << " stream_wbuf_nonzero=" << r.stream_wbuf_nonzero
    << " stream_swap_wbuf_diff=" << r.stream_swap_wbuf_diff;
  report_line(2, r.instances == 10 && r.ok(), d.str());
}

void criterion3() {
  const auto r = metrics_bench(2026, 1000, 10);
  AccuracyMatrix a(2);
  a.set(1, 1, 0.8);
  a.set(2, 1, 0.5);
  a.set(2, 2, 0.9);
  a.set_upper_bounds({0.9, 0.9});
  const double aa = average_accuracy(a, 2), af = average_forgetting(a, 2), ai = average_intransigence(a, 2);
  const bool worked = std::abs(aa - 0.7) <= 1e-12 && std::abs(af - 0.3) <= 1e-12 && std::abs(ai - 0.05) <= 1e-12;
  const bool pass = r.matrices == 1000 && r.max_abs_diff <= 1e-12 && worked;
  report_line(3, pass,
              "matrices=" + std::to_string(r.matrices) + fmt(" max_abs_diff=%.2e", r.max_abs_diff) +
                  fmt(" AA_2=%.15g", aa) + fmt(" AF_2=%.15g", af) + fmt(" AI_2=%.15g", ai));
}

void criterion4() {
  const auto r = reservoir_bench(2027, 100, 10000, 500, 100000);
  const bool pass = r.trials == 500 && std::abs(r.first_half_fraction - 0.5) <= 0.05 &&
                    r.property_sequences == 100000 && r.capacity_violations == 0;
  report_line(4, pass,
              fmt("first_half_fraction=%.4f", r.first_half_fraction) +
                  " property_sequences=" + std::to_string(r.property_sequences) +
                  " max_size_seen=" + std::to_string(r.max_size_seen) +
                  " capacity_violations=" + std::to_string(r.capacity_violations));
}

RunReport criterion5() {
  const auto t0 = Clock::now();
  const auto report = run_experiment(ExperimentConfig::defaults(), {jobs(), 0});
  const double secs = seconds_since(t0);
  const auto *ft = find(report, "finetune"), *er = find(report, "er"), *bi = find(report, "bison");
  bool errors = false;
  for (const auto& c : report.cells) errors = errors || !c.ok();
  if (errors || !ft || !er || !bi || !er->af || !bi->af) {
    report_line(5, false, "experiment cells failed");
    return report;
  }
  const bool a = ft->aa.mean <= 0.35 && bi->aa.mean >= ft->aa.mean + 0.15;
  const bool b = bi->aa.mean >= er->aa.mean;
  const bool c = bi->af->mean <= er->af->mean;
  report_line(5, a && b && c && secs < 300.0,
              fmt("finetune_AA=%.4f", ft->aa.mean) + fmt(" er_AA=%.4f", er->aa.mean) +
                  fmt(" bison_AA=%.4f", bi->aa.mean) + fmt(" er_AF=%.4f", er->af->mean) +
                  fmt(" bison_AF=%.4f", bi->af->mean) + fmt(" runtime=%.1fs", secs));
  return report;
}

void criterion6() {
  const auto cfg = ExperimentConfig::defaults();
  const auto dataset = load_dataset(cfg.dataset);
  ModelConfig model;
  model.input_dim = dataset.dim;
  model.num_classes = dataset.num_classes;
  model.hidden = cfg.hidden;
  model.embed_dim = cfg.embed_dim;
  bool pass = true;
  std::string detail;
  for (auto id : {MethodId::bison, MethodId::finetune, MethodId::er, MethodId::er_ncm, MethodId::ssil_lite}) {
    TaskStream stream(dataset, cfg.num_tasks, cfg.classes_per_task, stream_seeds(0), cfg.stream_batch_size);
    const auto total = stream.total_train_samples();
    std::map<std::size_t, int> count;
    std::size_t firsts = 0, resets = 0;
    auto method = MethodConfig::preset(id);
    run_method(stream, method, model, 200, run_seeds(0), std::nullopt, [&](const StepEvent& e) {
      for (auto i : e.report->trained_ids) count[i]++;
      if (e.first_in_task) {
        ++firsts;
        resets += e.report->alpha_at_start == 0.5;
      }
    });
    bool once = count.size() == total;
    for (auto [i, n] : count) once = once && n == 1;
    const bool alpha_ok = id != MethodId::bison || (firsts == cfg.num_tasks && resets == cfg.num_tasks);
    pass = pass && once && alpha_ok;
    if (!detail.empty()) detail += " ";
    detail += to_string(id) + (once ? ":once" : ":MISSED");
    if (id == MethodId::bison) detail += "/alpha_resets=" + std::to_string(resets) + "of" + std::to_string(firsts);
  }
  report_line(6, pass, detail);
}

void criterion7(const RunReport& random_order) {
  ConfusionMatrix m(4);
  const std::uint64_t counts[4][4] = {{6, 3, 1, 0}, {2, 2, 0, 4}, {0, 0, 5, 5}, {0, 0, 0, 0}};
  for (int c = 0; c < 4; ++c)
    for (int d = 0; d < 4; ++d)
      if (counts[c][d]) m.add(c, d, counts[c][d]);
  const std::pair<int, int> p[] = {{0, 1}};
  SimilarPairs pairs(4, p);
  const auto r = row_normalize(m);
  const double eps = kRowEpsilon;
  const double r00 = 6 / (10 + eps), r01 = 3 / (10 + eps), r10 = 2 / (8 + eps), r11 = 2 / (8 + eps);
  double hand = 0.0;
  hand = std::max(hand, std::abs(sc_at_1(r, pairs, 0) - r01));
  hand = std::max(hand, std::abs(sc_at_1(r, pairs, 1) - r10));
  hand = std::max(hand, std::abs(*p_sim(r, pairs, 0) - r00 / (r00 + r01)));
  hand = std::max(hand, std::abs(*p_sim(r, pairs, 1) - r11 / (r11 + r10)));
  hand = std::max(hand, std::abs(sc_at_1(r, pairs, 2)));
  const bool hand_ok = hand <= 1e-12 && !p_sim(r, pairs, 3);

  // Invariant on experiment outputs: the default run under the fixed
  // similar-pair class order, plus every confusion matrix of the random-order run.
  auto cfg = ExperimentConfig::defaults();
  cfg.fixed_class_order = true;
  const auto fixed = run_experiment(cfg, {jobs(), 0});
  std::size_t checked = 0, violations = 0;
  auto all_pairs = cifar10::kSimilarPairs;
  const SimilarPairs cifar_pairs(10, all_pairs);
  for (const auto* rep : {&fixed, &random_order}) {
    for (const auto& cell : rep->cells) {
      if (!cell.ok()) {
        ++violations;
        continue;
      }
      for (const auto& cm : cell.confusion_by_task) {
        const auto mr = row_normalize(cm);
        for (int c = 0; c < 10; ++c) {
          ++checked;
          violations += sc_at_1(mr, cifar_pairs, c) + mr[c][c] > 1.0;
        }
      }
      for (const auto& row : cell.similarity) {
        const auto mr = row_normalize(cell.confusion_by_task[row.after_task - 1]);
        for (std::size_t i = 0; i < row.classes.size(); ++i) {
          ++checked;
          violations += row.sc_at_1[i] + mr[row.classes[i]][row.classes[i]] > 1.0;
        }
      }
    }
  }
  report_line(7, hand_ok && violations == 0 && checked > 0,
              fmt("hand_max_abs_diff=%.2e", hand) + " invariant_checks=" + std::to_string(checked) +
                  " violations=" + std::to_string(violations));
}

std::string results_without_durations(const std::filesystem::path& file) {
  std::ifstream in(file);
  auto j = json::parse(in);
  for (auto& c : j.at("cells")) c.erase("duration_seconds");
  return j.dump(2);
}

void criterion8(const RunReport& first) {
  const auto base = std::filesystem::temp_directory_path() / "bison_acceptance";
  std::filesystem::remove_all(base);
  emit_report(first, base / "a");
  // Second execution with a different worker count.
  emit_report(run_experiment(ExperimentConfig::defaults(), {1, 0}), base / "b");
  const auto a = results_without_durations(base / "a" / "results.json");
  const auto b = results_without_durations(base / "b" / "results.json");
  std::filesystem::remove_all(base);
  report_line(8, a == b, "results_json_bytes=" + std::to_string(a.size()) + (a == b ? " identical" : " differ"));
}

}  // namespace

int main() {
  try {
    criterion1();
    criterion2();
    criterion3();
    criterion4();
    const auto report = criterion5();
    criterion6();
    criterion7(report);
    criterion8(report);
  } catch (const std::exception& e) {
    std::printf("acceptance aborted: %s\n", e.what());
    return 1;
  }
  return failures == 0 ? 0 : 1;
}
