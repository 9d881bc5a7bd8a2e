#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace bison {

struct GradCheckResult {
  std::string loss;
  std::size_t instances = 0;
  double max_rel_error = 0.0;
};

// Random small instances (C <= 6, D <= 16, batch <= 8). Each loss is checked
// against central differences over every trainable it reaches: the
// extractor, both heads, both scales and alpha_raw.
std::vector<GradCheckResult> grad_check_suite(std::uint64_t seed, std::size_t instances = 20,
                                              double eps = 1e-5);

struct FlowCheckResult {
  std::size_t instances = 0;
  std::size_t align_wstr_nonzero = 0;      // entries of dAlign/dW_str that are not exactly 0
  std::size_t cebuf_wstr_nonzero = 0;      // entries of d(1-a)CE_buf/dW_str that are not exactly 0
  std::size_t stream_wbuf_nonzero = 0;     // entries of dCE_stream/dW_buf that are not exactly 0
  std::size_t stream_swap_wbuf_diff = 0;   // dL/dW_buf entries that change when the stream batch changes

  bool ok() const {
    return align_wstr_nonzero == 0 && cebuf_wstr_nonzero == 0 && stream_wbuf_nonzero == 0 &&
           stream_swap_wbuf_diff == 0;
  }
};

FlowCheckResult gradient_flow_suite(std::uint64_t seed, std::size_t instances = 10);

// AA/AF/AI transcribed straight from their definitions on plain nested
// vectors, sharing no code with the metrics module.
namespace oracle {
double aa(const std::vector<std::vector<double>>& a, std::size_t k);
double af(const std::vector<std::vector<double>>& a, std::size_t k);
double ai(const std::vector<std::vector<double>>& a, const std::vector<double>& best, std::size_t k);
}  // namespace oracle

struct MetricsBenchResult {
  std::size_t matrices = 0;
  double max_abs_diff = 0.0;
};

// Random lower-triangular accuracy matrices with k <= max_tasks.
MetricsBenchResult metrics_bench(std::uint64_t seed, std::size_t matrices = 1000, std::size_t max_tasks = 10);

struct ReservoirBenchResult {
  std::size_t trials = 0;
  double first_half_fraction = 0.0;
  std::size_t property_sequences = 0;
  std::size_t max_size_seen = 0;
  std::size_t capacity_violations = 0;
};

ReservoirBenchResult reservoir_bench(std::uint64_t seed, std::size_t capacity = 100, std::size_t stream = 10000,
                                     std::size_t trials = 500, std::size_t property_sequences = 100000);

}  // namespace bison
