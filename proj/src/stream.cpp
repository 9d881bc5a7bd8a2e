#include "bison/stream.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <set>
#include <stdexcept>

#include "json.hpp"

namespace bison {

// ---------------------------------------------------------------------------
// Synthetic Gaussian tasks

Dataset gen_synthetic_gaussian(const GaussianConfig& config, std::uint64_t seed) {
  if (config.num_classes == 0 || config.dim == 0) {
    throw std::invalid_argument("synthetic dataset needs at least one class and one dimension");
  }
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<std::vector<double>> means(config.num_classes);
  for (auto& mu : means) {
    double norm = 0.0;
    do {
      mu.assign(config.dim, 0.0);
      for (auto& v : mu) v = normal(rng);
      norm = std::sqrt(std::inner_product(mu.begin(), mu.end(), mu.begin(), 0.0));
    } while (norm == 0.0);
    for (auto& v : mu) v *= config.radius / norm;
  }

  Dataset ds;
  ds.name = "split-gaussian-" + std::to_string(config.num_classes);
  ds.num_classes = config.num_classes;
  ds.dim = config.dim;
  auto draw = [&](int label) {
    Sample s;
    s.label = label;
    s.features.resize(config.dim);
    for (std::size_t j = 0; j < config.dim; ++j) {
      s.features[j] = means[static_cast<std::size_t>(label)][j] + config.sigma * normal(rng);
    }
    return s;
  };
  for (std::size_t c = 0; c < config.num_classes; ++c) {
    for (std::size_t i = 0; i < config.train_per_class; ++i) {
      ds.train.push_back(draw(static_cast<int>(c)));
      ds.train.back().id = ds.train.size() - 1;
    }
    for (std::size_t i = 0; i < config.test_per_class; ++i) {
      ds.test.push_back(draw(static_cast<int>(c)));
      ds.test.back().id = ds.test.size() - 1;
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// CIFAR binary

std::vector<Sample> parse_cifar_binary(std::span<const unsigned char> bytes, CifarVariant variant) {
  const std::size_t record =
      variant == CifarVariant::cifar10 ? kCifar10RecordBytes : kCifar100RecordBytes;
  const std::size_t label_bytes = record - 3072;
  const int max_label = variant == CifarVariant::cifar10 ? 10 : 100;
  if (bytes.size() % record != 0) {
    throw std::runtime_error("CIFAR file length " + std::to_string(bytes.size()) +
                             " is not a multiple of " + std::to_string(record) +
                             "; partial record at byte offset " +
                             std::to_string(bytes.size() - bytes.size() % record));
  }
  std::vector<Sample> out;
  out.reserve(bytes.size() / record);
  for (std::size_t off = 0; off < bytes.size(); off += record) {
    // CIFAR-100 records carry (coarse, fine); the fine label is used.
    const int label = bytes[off + label_bytes - 1];
    if (label >= max_label) {
      throw std::runtime_error("CIFAR label " + std::to_string(label) + " out of range at byte offset " +
                               std::to_string(off + label_bytes - 1));
    }
    Sample s;
    s.label = label;
    s.id = out.size();
    s.features.resize(3072);
    for (std::size_t k = 0; k < 3072; ++k) s.features[k] = bytes[off + label_bytes + k] / 255.0;
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<Sample> load_cifar_binary(const std::filesystem::path& path, CifarVariant variant) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  try {
    return parse_cifar_binary(bytes, variant);
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

Dataset load_cifar_dataset(const std::vector<std::filesystem::path>& train_files,
                           const std::vector<std::filesystem::path>& test_files, CifarVariant variant) {
  Dataset ds;
  ds.name = variant == CifarVariant::cifar10 ? "cifar10" : "cifar100";
  ds.num_classes = variant == CifarVariant::cifar10 ? 10 : 100;
  ds.dim = 3072;
  ds.image = ImageShape{};
  if (variant == CifarVariant::cifar10) {
    ds.class_names = {"airplane", "automobile", "bird", "cat", "deer",
                      "dog", "frog", "horse", "ship", "truck"};
  }
  auto append = [&](const std::vector<std::filesystem::path>& files, std::vector<Sample>& into) {
    for (const auto& f : files) {
      for (auto& s : load_cifar_binary(f, variant)) {
        s.id = into.size();
        into.push_back(std::move(s));
      }
    }
  };
  append(train_files, ds.train);
  append(test_files, ds.test);
  return ds;
}

// ---------------------------------------------------------------------------
// JSON lines

void export_jsonl(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  auto emit = [&](const std::vector<Sample>& samples, const char* split) {
    for (const auto& s : samples) {
      nlohmann::json rec{{"features", s.features}, {"label", s.label}, {"split", split}};
      os << rec.dump() << '\n';
    }
  };
  emit(dataset.train, "train");
  emit(dataset.test, "test");
}

Dataset load_jsonl(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  Dataset ds;
  ds.name = path.stem().string();
  std::string line;
  std::size_t lineno = 0;
  int max_label = -1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto where = path.string() + ":" + std::to_string(lineno);
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(where + ": " + e.what());
    }
    Sample s;
    try {
      s.features = rec.at("features").get<std::vector<double>>();
      s.label = rec.at("label").get<int>();
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(where + ": " + e.what());
    }
    if (s.label < 0) throw std::runtime_error(where + ": negative label");
    if (ds.dim == 0) ds.dim = s.features.size();
    if (s.features.size() != ds.dim) throw std::runtime_error(where + ": inconsistent feature width");
    max_label = std::max(max_label, s.label);
    const auto split = rec.value("split", std::string("train"));
    auto& into = split == "test" ? ds.test : ds.train;
    if (split != "train" && split != "test") throw std::runtime_error(where + ": unknown split " + split);
    s.id = into.size();
    into.push_back(std::move(s));
  }
  ds.num_classes = static_cast<std::size_t>(max_label + 1);
  return ds;
}

// ---------------------------------------------------------------------------
// Task stream

TaskStream::TaskStream(const Dataset& dataset, std::size_t num_tasks, std::size_t classes_per_task,
                       StreamSeeds seeds, std::size_t batch_size,
                       std::optional<std::vector<int>> fixed_order)
    : batch_size_(batch_size) {
  if (num_tasks == 0 || classes_per_task == 0) {
    throw std::invalid_argument("num_tasks and classes_per_task must be positive");
  }
  if (batch_size == 0) throw std::invalid_argument("stream batch size must be positive");
  const std::size_t needed = num_tasks * classes_per_task;
  if (needed > dataset.num_classes) {
    throw std::invalid_argument(std::to_string(num_tasks) + " tasks x " +
                                std::to_string(classes_per_task) + " classes exceed the " +
                                std::to_string(dataset.num_classes) + " available");
  }

  std::vector<int> order;
  if (fixed_order) {
    order = *fixed_order;
    std::set<int> distinct(order.begin(), order.end());
    if (order.size() < needed || distinct.size() != order.size()) {
      throw std::invalid_argument("fixed class order must list at least " + std::to_string(needed) +
                                  " distinct classes");
    }
    for (int c : order)
      if (c < 0 || static_cast<std::size_t>(c) >= dataset.num_classes) {
        throw std::invalid_argument("fixed class order names unknown class " + std::to_string(c));
      }
  } else {
    order.resize(dataset.num_classes);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seeds.class_order);
    std::shuffle(order.begin(), order.end(), rng);
  }

  std::vector<int> task_of(dataset.num_classes, -1);
  tasks_.resize(num_tasks);
  for (std::size_t t = 0; t < num_tasks; ++t) {
    for (std::size_t k = 0; k < classes_per_task; ++k) {
      const int c = order[t * classes_per_task + k];
      tasks_[t].classes.push_back(c);
      task_of[static_cast<std::size_t>(c)] = static_cast<int>(t);
    }
  }
  auto route = [&](const std::vector<Sample>& from, auto member) {
    for (const auto& s : from) {
      if (s.label < 0 || static_cast<std::size_t>(s.label) >= dataset.num_classes) {
        throw std::invalid_argument("sample label " + std::to_string(s.label) + " out of range");
      }
      const int t = task_of[static_cast<std::size_t>(s.label)];
      if (t < 0) continue;
      Sample copy = s;
      copy.task = t;
      (tasks_[static_cast<std::size_t>(t)].*member).push_back(std::move(copy));
    }
  };
  route(dataset.train, &TaskData::train);
  route(dataset.test, &TaskData::test);

  Rng rng(seeds.sample_order);
  for (std::size_t t = 0; t < num_tasks; ++t) {
    if (tasks_[t].train.empty()) {
      throw std::invalid_argument("task " + std::to_string(t) + " has no training samples");
    }
    std::shuffle(tasks_[t].train.begin(), tasks_[t].train.end(), rng);
  }
}

TaskStream TaskStream::from_tasks(std::vector<TaskData> tasks, std::size_t batch_size) {
  if (tasks.empty()) throw std::invalid_argument("a stream needs at least one task");
  if (batch_size == 0) throw std::invalid_argument("stream batch size must be positive");
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    if (tasks[t].train.empty()) {
      throw std::invalid_argument("task " + std::to_string(t) + " has no training samples");
    }
  }
  TaskStream s;
  s.tasks_ = std::move(tasks);
  s.batch_size_ = batch_size;
  return s;
}

std::vector<int> TaskStream::class_order() const {
  std::vector<int> out;
  for (const auto& t : tasks_) out.insert(out.end(), t.classes.begin(), t.classes.end());
  return out;
}

std::size_t TaskStream::total_train_samples() const {
  std::size_t n = 0;
  for (const auto& t : tasks_) n += t.train.size();
  return n;
}

std::optional<StreamBatch> TaskStream::next_batch() {
  if (task_ >= tasks_.size()) return std::nullopt;
  const auto& data = tasks_[task_].train;
  StreamBatch b;
  b.task = task_;
  b.first_in_task = offset_ == 0;
  const std::size_t end = std::min(offset_ + batch_size_, data.size());
  b.samples.assign(data.begin() + static_cast<std::ptrdiff_t>(offset_),
                   data.begin() + static_cast<std::ptrdiff_t>(end));
  offset_ = end;
  if (offset_ >= data.size()) {
    b.last_in_task = true;
    ++task_;
    offset_ = 0;
  }
  return b;
}

void TaskStream::rewind() {
  task_ = 0;
  offset_ = 0;
}

// ---------------------------------------------------------------------------
// Augmentation

AugmentPolicy parse_augment_policy(const std::string& name) {
  if (name == "none") return AugmentPolicy::none;
  if (name == "vector-noise") return AugmentPolicy::vector_noise;
  if (name == "image-basic") return AugmentPolicy::image_basic;
  throw std::invalid_argument("unknown augmentation policy '" + name + "'");
}

std::string to_string(AugmentPolicy policy) {
  switch (policy) {
    case AugmentPolicy::none: return "none";
    case AugmentPolicy::vector_noise: return "vector-noise";
    case AugmentPolicy::image_basic: return "image-basic";
  }
  return "none";
}

std::vector<double> flip_horizontal(std::span<const double> image, const ImageShape& shape) {
  std::vector<double> out(image.size());
  for (std::size_t c = 0; c < shape.channels; ++c)
    for (std::size_t y = 0; y < shape.height; ++y)
      for (std::size_t x = 0; x < shape.width; ++x) {
        const std::size_t row = (c * shape.height + y) * shape.width;
        out[row + x] = image[row + shape.width - 1 - x];
      }
  return out;
}

namespace {

std::vector<double> pad_crop(std::span<const double> image, const ImageShape& shape,
                             std::ptrdiff_t dy, std::ptrdiff_t dx) {
  std::vector<double> out(image.size(), 0.0);
  const auto h = static_cast<std::ptrdiff_t>(shape.height);
  const auto w = static_cast<std::ptrdiff_t>(shape.width);
  for (std::size_t c = 0; c < shape.channels; ++c)
    for (std::ptrdiff_t y = 0; y < h; ++y)
      for (std::ptrdiff_t x = 0; x < w; ++x) {
        const auto sy = y + dy, sx = x + dx;
        if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
        const auto base = static_cast<std::ptrdiff_t>(c) * h * w;
        out[static_cast<std::size_t>(base + y * w + x)] =
            image[static_cast<std::size_t>(base + sy * w + sx)];
      }
  return out;
}

}  // namespace

std::vector<std::vector<double>> augment(std::span<const std::vector<double>> batch,
                                         const AugmentConfig& config,
                                         const std::optional<ImageShape>& image, Rng& rng) {
  std::vector<std::vector<double>> out(batch.begin(), batch.end());
  switch (config.policy) {
    case AugmentPolicy::none:
      return out;
    case AugmentPolicy::vector_noise: {
      std::normal_distribution<double> noise(0.0, 1.0);
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      for (auto& x : out) {
        for (auto& v : x) {
          if (config.noise_sigma > 0.0) v += config.noise_sigma * noise(rng);
          if (config.dropout > 0.0 && unit(rng) < config.dropout) v = 0.0;
        }
      }
      return out;
    }
    case AugmentPolicy::image_basic: {
      for (const auto& x : batch) {
        if (!image || x.size() != image->size()) {
          throw std::invalid_argument("image-basic augmentation needs " +
                                      std::string(image ? "images of " + std::to_string(image->size()) +
                                                              " values"
                                                        : "an image layout") +
                                      ", got a vector of " + std::to_string(x.size()));
        }
      }
      const auto pad = static_cast<std::ptrdiff_t>(config.crop_padding);
      std::uniform_int_distribution<std::ptrdiff_t> offset(-pad, pad);
      std::bernoulli_distribution coin(0.5);
      for (auto& x : out) {
        if (config.crop && pad > 0) {
          const auto dy = offset(rng);
          const auto dx = offset(rng);
          x = pad_crop(x, *image, dy, dx);
        }
        if (config.flip && coin(rng)) x = flip_horizontal(x, *image);
      }
      return out;
    }
  }
  return out;
}

}  // namespace bison
