#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "bison/losses.hpp"
#include "bison/metrics.hpp"
#include "bison/model.hpp"
#include "bison/replay.hpp"
#include "bison/stream.hpp"

namespace bison {

enum class MethodId { bison, finetune, er, er_ncm, ssil_lite };
enum class InferenceMode { ncm, linear_softmax };

MethodId parse_method_id(const std::string& name);
std::string to_string(MethodId id);
InferenceMode parse_inference_mode(const std::string& name);
std::string to_string(InferenceMode mode);

struct MethodConfig {
  MethodId id = MethodId::bison;
  LossWeights weights;
  SgdConfig sgd;
  InferenceMode inference = InferenceMode::ncm;
  AugmentConfig augment;
  // Buffer samples retrieved per step; 0 retrieves as many as the stream batch holds.
  std::size_t buffer_batch = 0;

  // Default configuration of a method: BISON with the 10-class preset
  // (beta 0.1, lambda 3.0), ER+NCM with NCM inference, the rest linear.
  static MethodConfig preset(MethodId id);
  // BISON coefficients used for 100-class benchmarks (beta 0.2, lambda 10.0).
  static MethodConfig bison_large_preset();

  void validate() const;
  std::string label() const { return to_string(id); }
  bool uses_buffer() const { return id != MethodId::finetune; }
};

struct StepReport {
  std::vector<std::size_t> trained_ids;
  std::size_t stream_size = 0;
  std::size_t buffer_batch_size = 0;
  // sigmoid(alpha_raw) when the step began.
  double alpha_at_start = 0.0;
  double loss = 0.0;
  std::size_t buffer_size_after = 0;
};

// One learner: a model, its replay buffer and its random stream. Each
// step() consumes one stream batch with exactly one SGD update.
class Learner {
 public:
  Learner(MethodConfig config, ModelState model, std::size_t buffer_capacity, std::uint64_t seed,
          std::optional<ImageShape> image = std::nullopt);

  // Called before a task's first step; BISON re-initialises its smoother here.
  void begin_task(std::size_t task, const std::vector<int>& task_classes);
  StepReport step(const StreamBatch& batch);

  // Predictions restricted to the classes seen so far.
  std::vector<int> predict(const Tensor& x) const;

  const MethodConfig& config() const { return config_; }
  const ModelState& model() const { return model_; }
  ModelState& model() { return model_; }
  const std::optional<MemoryBuffer>& buffer() const { return buffer_; }
  const std::vector<bool>& seen_classes() const { return seen_; }
  const std::vector<int>& current_task_classes() const { return current_; }

 private:
  StepReport step_finetune(const StreamBatch& batch);
  StepReport step_er(const StreamBatch& batch);
  StepReport step_ssil(const StreamBatch& batch);
  StepReport step_bison(const StreamBatch& batch);
  void store(const StreamBatch& batch);
  std::size_t retrieve_count(const StreamBatch& batch) const;

  MethodConfig config_;
  ModelState model_;
  std::optional<MemoryBuffer> buffer_;
  Rng rng_;
  std::optional<ImageShape> image_;
  std::vector<bool> seen_;
  std::vector<int> current_;
};

// Logits of the plain linear head used by the baselines: z W_str^T.
Var linear_logits(Var z, Var w);

// ---------------------------------------------------------------------------
// Harness

struct RunSeeds {
  std::uint64_t model_init = 0;
  std::uint64_t learner = 1;
};

// Deterministic seed derivation from a run seed and a purpose tag.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag);
RunSeeds run_seeds(std::uint64_t seed);
StreamSeeds stream_seeds(std::uint64_t seed);

struct StepEvent {
  std::size_t task = 0;
  std::size_t step_in_task = 0;
  bool first_in_task = false;
  const StepReport* report = nullptr;
  const Learner* learner = nullptr;
};

using StepObserver = std::function<void(const StepEvent&)>;

struct RunResult {
  AccuracyMatrix accuracy;
  // confusion[k] is over all test samples of tasks 1..k+1 after task k+1.
  std::vector<ConfusionMatrix> confusion;
  std::size_t steps = 0;
  std::size_t samples_trained = 0;

  const ConfusionMatrix& final_confusion() const { return confusion.back(); }
};

// Trains over the stream in a single pass, evaluating at every task boundary.
RunResult run_method(TaskStream stream, const MethodConfig& method, const ModelConfig& model,
                     std::size_t buffer_capacity, RunSeeds seeds,
                     std::optional<ImageShape> image = std::nullopt,
                     const StepObserver& observer = {});

enum class UpperBoundMode { sequential, per_task };

UpperBoundMode parse_upper_bound_mode(const std::string& name);
std::string to_string(UpperBoundMode mode);

// a_j* per task from a FINE-TUNE learner: its diagonal a_{j,j} when run
// sequentially, or a fresh learner per task in per_task mode.
std::vector<double> compute_upper_bounds(const TaskStream& stream, const ModelConfig& model,
                                         RunSeeds seeds, const MethodConfig& finetune,
                                         UpperBoundMode mode = UpperBoundMode::sequential,
                                         std::optional<ImageShape> image = std::nullopt);

}  // namespace bison
