#include "bison/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>
#include <stdexcept>

#include "bison/replay.hpp"

namespace bison {

void ModelConfig::validate() const {
  if (input_dim == 0) throw std::invalid_argument("model.input_dim must be positive");
  if (embed_dim == 0) throw std::invalid_argument("model.embed_dim must be positive");
  if (num_classes == 0) throw std::invalid_argument("model.num_classes must be positive");
  for (auto h : hidden)
    if (h == 0) throw std::invalid_argument("model.hidden widths must be positive");
  if (output_width != 0 && output_width != embed_dim) {
    throw std::invalid_argument("embedding dimension " + std::to_string(embed_dim) +
                                " differs from last layer width " + std::to_string(output_width));
  }
}

std::vector<Tensor*> ModelState::extractor_parameters() {
  std::vector<Tensor*> out;
  for (auto& layer : extractor) {
    out.push_back(&layer.weight);
    out.push_back(&layer.bias);
  }
  return out;
}

std::vector<Tensor*> ModelState::parameters() {
  auto out = extractor_parameters();
  for (Tensor* t : {&w_str, &w_buf, &eta_str, &eta_buf, &alpha_raw}) out.push_back(t);
  return out;
}

double ModelState::alpha() const { return 1.0 / (1.0 + std::exp(-alpha_raw.item())); }

namespace {

Tensor uniform(Shape shape, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (auto& v : t.data) v = dist(rng);
  return t;
}

}  // namespace

ModelState init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  ModelState m;
  m.config = config;

  std::vector<std::size_t> widths{config.input_dim};
  widths.insert(widths.end(), config.hidden.begin(), config.hidden.end());
  widths.push_back(config.embed_dim);
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const auto fan_in = static_cast<double>(widths[l]);
    LinearLayer layer;
    layer.weight = uniform({widths[l + 1], widths[l]}, std::sqrt(6.0 / fan_in), rng);
    layer.bias = Tensor::zeros({widths[l + 1]}, true);
    m.extractor.push_back(std::move(layer));
  }
  const double head_bound = std::sqrt(6.0 / static_cast<double>(config.embed_dim));
  m.w_str = uniform({config.num_classes, config.embed_dim}, head_bound, rng);
  m.w_buf = uniform({config.num_classes, config.embed_dim}, head_bound, rng);
  m.eta_str = Tensor::scalar(kInitialScale, true);
  m.eta_buf = Tensor::scalar(kInitialScale, true);
  m.alpha_raw = Tensor::scalar(0.0, true);
  return m;
}

Var extractor_forward(Tape& tape, ModelState& model, Var x) {
  if (x.shape().size() != 2 || x.shape()[1] != model.config.input_dim) {
    throw std::invalid_argument("extractor input " + shape_str(x.shape()) + " does not have width " +
                                std::to_string(model.config.input_dim));
  }
  Var h = x;
  for (std::size_t l = 0; l < model.extractor.size(); ++l) {
    auto& layer = model.extractor[l];
    h = add(matmul(h, transpose(tape.leaf(layer.weight))), tape.leaf(layer.bias));
    if (l + 1 < model.extractor.size()) h = relu(h);
  }
  return h;
}

Tensor extractor_forward(const ModelState& model, const Tensor& x) {
  if (x.ndim() != 2 || x.cols() != model.config.input_dim) {
    throw std::invalid_argument("extractor input " + shape_str(x.shape) + " does not have width " +
                                std::to_string(model.config.input_dim));
  }
  std::vector<double> cur = x.data;
  std::size_t rows = x.rows(), width = x.cols();
  for (std::size_t l = 0; l < model.extractor.size(); ++l) {
    const auto& w = model.extractor[l].weight;
    const auto& b = model.extractor[l].bias;
    const std::size_t out_w = w.rows();
    std::vector<double> next(rows * out_w);
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t o = 0; o < out_w; ++o) {
        double acc = b.data[o];
        for (std::size_t k = 0; k < width; ++k) acc += cur[i * width + k] * w.data[o * width + k];
        if (l + 1 < model.extractor.size() && acc < 0.0) acc = 0.0;
        next[i * out_w + o] = acc;
      }
    }
    cur = std::move(next);
    width = out_w;
  }
  return Tensor({rows, width}, std::move(cur));
}

Var cosine_logits(Var z, Var w, Var eta) {
  if (eta.value().size() != 1) throw std::invalid_argument("cosine_logits: eta must be a scalar");
  return mul(cosine_matrix(z, w), eta);
}

// ---------------------------------------------------------------------------
// Nearest class mean

Centroids centroids_from_embeddings(const Tensor& z, std::span<const int> labels) {
  if (z.ndim() != 2 || z.rows() != labels.size()) {
    throw std::invalid_argument("centroids: " + std::to_string(labels.size()) + " labels for " +
                                shape_str(z.shape));
  }
  if (labels.empty()) throw std::invalid_argument("centroids: no samples");
  Centroids c;
  c.dim = z.cols();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto& mu = c.mean[labels[i]];
    if (mu.empty()) mu.assign(c.dim, 0.0);
    for (std::size_t j = 0; j < c.dim; ++j) mu[j] += z.at(i, j);
    ++c.count[labels[i]];
  }
  for (auto& [label, mu] : c.mean) {
    const auto n = static_cast<double>(c.count[label]);
    for (auto& v : mu) v /= n;
  }
  return c;
}

Centroids ncm_centroids(const MemoryBuffer& buffer, const ModelState& model) {
  if (buffer.empty()) throw std::invalid_argument("ncm_centroids: buffer is empty");
  const auto& slots = buffer.slots();
  const std::size_t d = model.config.input_dim;
  Tensor x = Tensor::zeros({slots.size(), d});
  std::vector<int> labels;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (slots[i].features.size() != d) {
      throw std::invalid_argument("ncm_centroids: buffered sample has width " +
                                  std::to_string(slots[i].features.size()));
    }
    std::copy(slots[i].features.begin(), slots[i].features.end(), x.data.begin() + i * d);
    labels.push_back(slots[i].label);
  }
  return centroids_from_embeddings(extractor_forward(model, x), labels);
}

int ncm_predict(std::span<const double> embedding, const Centroids& centroids) {
  if (centroids.empty()) throw std::invalid_argument("ncm_predict: no centroids");
  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  // std::map iterates labels in ascending order, so strict < keeps the smallest on ties.
  for (const auto& [label, mu] : centroids.mean) {
    double d = 0.0;
    for (std::size_t j = 0; j < mu.size(); ++j) {
      const double diff = embedding[j] - mu[j];
      d += diff * diff;
    }
    if (d < best_d || best < 0) {
      best_d = d;
      best = label;
    }
  }
  return best;
}

std::vector<int> ncm_predict(const Tensor& x, const Centroids& centroids, const ModelState& model) {
  Tensor z = extractor_forward(model, x);
  std::vector<int> out(z.rows());
  for (std::size_t i = 0; i < z.rows(); ++i) {
    out[i] = ncm_predict(std::span<const double>(&z.data[i * z.cols()], z.cols()), centroids);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'B', 'I', 'S', 'O', 'N', 'C', 'K', '1'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_le(std::ostream& os, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
  unsigned char bytes[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
    throw std::runtime_error("checkpoint truncated");
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

std::vector<const Tensor*> checkpoint_tensors(const ModelState& m) {
  std::vector<const Tensor*> out;
  for (const auto& layer : m.extractor) {
    out.push_back(&layer.weight);
    out.push_back(&layer.bias);
  }
  for (const Tensor* t : {&m.w_str, &m.w_buf, &m.eta_str, &m.eta_buf, &m.alpha_raw}) out.push_back(t);
  return out;
}

}  // namespace

void save_checkpoint(const ModelState& model, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write(kMagic, sizeof(kMagic));
  write_le<std::uint32_t>(os, kVersion);
  const auto& c = model.config;
  write_le<std::uint64_t>(os, c.input_dim);
  write_le<std::uint64_t>(os, c.embed_dim);
  write_le<std::uint64_t>(os, c.num_classes);
  write_le<std::uint64_t>(os, c.hidden.size());
  for (auto h : c.hidden) write_le<std::uint64_t>(os, h);
  const auto tensors = checkpoint_tensors(model);
  write_le<std::uint64_t>(os, tensors.size());
  for (const Tensor* t : tensors) {
    write_le<std::uint64_t>(os, t->shape.size());
    for (auto d : t->shape) write_le<std::uint64_t>(os, d);
    for (double v : t->data) write_le<double>(os, v);
  }
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

ModelState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  char magic[8];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error(path.string() + " is not a checkpoint");
  }
  if (auto v = read_le<std::uint32_t>(is); v != kVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(v));
  }
  ModelConfig c;
  c.input_dim = read_le<std::uint64_t>(is);
  c.embed_dim = read_le<std::uint64_t>(is);
  c.num_classes = read_le<std::uint64_t>(is);
  c.hidden.resize(read_le<std::uint64_t>(is));
  for (auto& h : c.hidden) h = read_le<std::uint64_t>(is);

  ModelState m = init_model(c, 0);
  auto targets = m.parameters();
  const auto count = read_le<std::uint64_t>(is);
  if (count != targets.size()) {
    throw std::runtime_error("checkpoint holds " + std::to_string(count) + " tensors, expected " +
                             std::to_string(targets.size()));
  }
  for (Tensor* t : targets) {
    Shape shape(read_le<std::uint64_t>(is));
    for (auto& d : shape) d = read_le<std::uint64_t>(is);
    if (shape != t->shape) {
      throw std::runtime_error("checkpoint tensor shape " + shape_str(shape) + " expected " +
                               shape_str(t->shape));
    }
    for (auto& v : t->data) v = read_le<double>(is);
  }
  return m;
}

}  // namespace bison
