#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "bison/methods.hpp"
#include "json.hpp"

namespace bison {

using json = nlohmann::json;

// Configuration problem located by a JSON path such as "methods[1].beta".
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string field, const std::string& message)
      : std::runtime_error(field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

struct DatasetSpec {
  std::string kind = "synthetic-gaussian";  // | "cifar-binary" | "jsonl"
  GaussianConfig gaussian;
  std::uint64_t seed = 0;
  CifarVariant variant = CifarVariant::cifar10;
  std::vector<std::string> train_files;
  std::vector<std::string> test_files;
  std::string path;  // jsonl
};

Dataset load_dataset(const DatasetSpec& spec);

struct MethodSpec {
  std::string name;  // unique label; defaults to the method id
  MethodConfig config;
};

struct ExperimentConfig {
  DatasetSpec dataset;
  std::size_t num_tasks = 5;
  std::size_t classes_per_task = 2;
  std::vector<std::size_t> buffer_capacities = {200};
  std::vector<MethodSpec> methods;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  std::size_t stream_batch_size = 10;
  std::size_t buffer_batch_size = 10;
  std::vector<std::size_t> hidden = {128, 64};
  std::size_t embed_dim = 32;
  UpperBoundMode upper_bound_mode = UpperBoundMode::sequential;
  MethodConfig upper_bound_method = MethodConfig::preset(MethodId::finetune);
  bool fixed_class_order = false;
  std::optional<std::vector<int>> class_order;
  std::vector<std::pair<int, int>> similar_pairs;
  std::string output_dir = "results";

  // The desk-scale default: Split-Gaussian-10, four methods, five seeds.
  static ExperimentConfig defaults();
  static ExperimentConfig from_json(const json& j);
  json to_json() const;
  void validate() const;

  // Order used when fixed_class_order is set: class_order if given, else
  // the CIFAR-10 similar-pair schedule.
  std::vector<int> fixed_order() const;
  std::vector<std::pair<int, int>> effective_similar_pairs() const;
};

json config_schema();

struct FinalMetrics {
  double aa = 0.0;
  std::optional<double> af;
  std::optional<double> ai;
};

struct SimilarityRow {
  std::size_t after_task = 0;
  std::vector<int> classes;
  std::vector<double> sc_at_1;
  std::vector<std::optional<double>> p_sim;
};

struct CellResult {
  std::string method;
  std::size_t capacity = 0;
  std::uint64_t seed = 0;
  std::optional<std::string> error;
  std::vector<int> class_order;
  AccuracyMatrix accuracy;
  std::vector<ConfusionMatrix> confusion_by_task;
  std::vector<SimilarityRow> similarity;
  FinalMetrics final;
  std::size_t steps = 0;
  std::size_t samples_trained = 0;
  double duration_seconds = 0.0;

  bool ok() const { return !error; }
  std::string cell_name() const;
};

struct MeanStd {
  double mean = 0.0;
  std::optional<double> std;  // sample standard deviation; needs >= 2 runs
};

struct Aggregate {
  std::string method;
  std::size_t capacity = 0;
  std::size_t runs = 0;
  MeanStd aa;
  std::optional<MeanStd> af;
  std::optional<MeanStd> ai;
};

struct SeedBounds {
  std::uint64_t seed = 0;
  std::vector<double> bounds;
  std::optional<std::string> error;
};

struct RunReport {
  ExperimentConfig config;
  std::vector<SeedBounds> upper_bounds;
  std::vector<CellResult> cells;
  std::vector<Aggregate> aggregates;
};

struct RunOptions {
  std::size_t jobs = 1;
  std::uint64_t seed_offset = 0;
};

RunReport run_experiment(const ExperimentConfig& config, const RunOptions& options = {});
MeanStd mean_std(const std::vector<double>& values);
std::vector<Aggregate> aggregate(const std::vector<CellResult>& cells);

json report_to_json(const RunReport& report);
RunReport report_from_json(const json& j);

}  // namespace bison
