#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bison/replay.hpp"

namespace bison {

// Planar channel-major image layout (the CIFAR binary layout): c * h * w values.
struct ImageShape {
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;

  std::size_t size() const { return channels * height * width; }
};

struct Dataset {
  std::string name;
  std::size_t num_classes = 0;
  std::size_t dim = 0;
  std::vector<Sample> train;
  std::vector<Sample> test;
  std::optional<ImageShape> image;
  std::vector<std::string> class_names;
};

// ---------------------------------------------------------------------------
// Loaders and generators

struct GaussianConfig {
  std::size_t num_classes = 10;
  std::size_t dim = 32;
  std::size_t train_per_class = 500;
  std::size_t test_per_class = 100;
  double radius = 3.0;
  double sigma = 1.0;
};

Dataset gen_synthetic_gaussian(const GaussianConfig& config, std::uint64_t seed);

enum class CifarVariant { cifar10, cifar100 };

inline constexpr std::size_t kCifar10RecordBytes = 3073;
inline constexpr std::size_t kCifar100RecordBytes = 3074;

std::vector<Sample> load_cifar_binary(const std::filesystem::path& path, CifarVariant variant);
std::vector<Sample> parse_cifar_binary(std::span<const unsigned char> bytes, CifarVariant variant);
Dataset load_cifar_dataset(const std::vector<std::filesystem::path>& train_files,
                           const std::vector<std::filesystem::path>& test_files,
                           CifarVariant variant);

// One JSON object per line: {"features": [...], "label": y, "split": "train"|"test"}.
void export_jsonl(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_jsonl(const std::filesystem::path& path);

// CIFAR-10 class indices and the cross-task schedule used for the
// similar-pair confusion study.
namespace cifar10 {
inline constexpr int airplane = 0, automobile = 1, bird = 2, cat = 3, deer = 4, dog = 5, frog = 6,
                     horse = 7, ship = 8, truck = 9;
inline const std::vector<int> kConfusionOrder = {cat, deer, dog, automobile, horse,
                                                 airplane, truck, bird, ship, frog};
inline const std::vector<std::pair<int, int>> kSimilarPairs = {
    {cat, dog}, {deer, horse}, {automobile, truck}, {airplane, ship}, {bird, frog}};
}  // namespace cifar10

// ---------------------------------------------------------------------------
// Task stream

struct StreamSeeds {
  std::uint64_t class_order = 0;
  std::uint64_t sample_order = 1;
};

struct TaskData {
  std::vector<int> classes;
  std::vector<Sample> train;
  std::vector<Sample> test;
};

struct StreamBatch {
  std::vector<Sample> samples;
  std::size_t task = 0;
  bool first_in_task = false;
  bool last_in_task = false;
};

class TaskStream {
 public:
  // Classes are shuffled by seeds.class_order (or taken from fixed_order
  // when given) and partitioned consecutively into tasks.
  TaskStream(const Dataset& dataset, std::size_t num_tasks, std::size_t classes_per_task,
             StreamSeeds seeds, std::size_t batch_size = 10,
             std::optional<std::vector<int>> fixed_order = std::nullopt);

  // A stream over pre-built tasks, in the given order.
  static TaskStream from_tasks(std::vector<TaskData> tasks, std::size_t batch_size = 10);

  std::size_t num_tasks() const { return tasks_.size(); }
  std::size_t batch_size() const { return batch_size_; }
  const std::vector<TaskData>& tasks() const { return tasks_; }
  const TaskData& task(std::size_t t) const { return tasks_.at(t); }
  std::vector<int> class_order() const;
  std::size_t total_train_samples() const;

  // Up to batch_size samples of the current task; nullopt once exhausted.
  std::optional<StreamBatch> next_batch();
  void rewind();

 private:
  TaskStream() = default;

  std::vector<TaskData> tasks_;
  std::size_t batch_size_ = 10;
  std::size_t task_ = 0;
  std::size_t offset_ = 0;
};

// ---------------------------------------------------------------------------
// Augmentation

enum class AugmentPolicy { none, vector_noise, image_basic };

struct AugmentConfig {
  AugmentPolicy policy = AugmentPolicy::vector_noise;
  double noise_sigma = 0.05;
  double dropout = 0.1;
  std::size_t crop_padding = 4;
  bool crop = true;
  bool flip = true;
};

AugmentPolicy parse_augment_policy(const std::string& name);
std::string to_string(AugmentPolicy policy);

// Augmented copies of the inputs; the originals are not modified.
std::vector<std::vector<double>> augment(std::span<const std::vector<double>> batch,
                                         const AugmentConfig& config,
                                         const std::optional<ImageShape>& image, Rng& rng);

std::vector<double> flip_horizontal(std::span<const double> image, const ImageShape& shape);

}  // namespace bison
