#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <vector>

#include "bison/tensor.hpp"

namespace bison {

class MemoryBuffer;

struct ModelConfig {
  std::size_t input_dim = 32;
  std::vector<std::size_t> hidden = {128, 64};
  std::size_t embed_dim = 32;
  std::size_t num_classes = 10;
  // Width of the last extractor layer; defaults to embed_dim when zero.
  std::size_t output_width = 0;

  void validate() const;
};

struct LinearLayer {
  Tensor weight;  // (out, in)
  Tensor bias;    // (out,)
};

inline constexpr double kInitialScale = 10.0;

// Every trainable of the dual-classifier learner.
struct ModelState {
  ModelConfig config;
  std::vector<LinearLayer> extractor;
  Tensor w_str;  // (C, D) stream classifier, also the proxies of the PAL term
  Tensor w_buf;  // (C, D) buffer classifier
  Tensor eta_str;
  Tensor eta_buf;
  Tensor alpha_raw;  // separation smoother before the sigmoid

  std::vector<Tensor*> parameters();
  std::vector<Tensor*> extractor_parameters();

  double alpha() const;
  void reset_alpha() { alpha_raw.data[0] = 0.0; }
};

ModelState init_model(const ModelConfig& config, std::uint64_t seed);

// z = MLP(x), ReLU between layers, nothing after the last.
Var extractor_forward(Tape& tape, ModelState& model, Var x);
Tensor extractor_forward(const ModelState& model, const Tensor& x);

// s[i][j] = eta * cos(W_j, z_i)
Var cosine_logits(Var z, Var w, Var eta);

struct Centroids {
  std::size_t dim = 0;
  std::map<int, std::vector<double>> mean;
  std::map<int, std::size_t> count;

  bool empty() const { return mean.empty(); }
};

Centroids ncm_centroids(const MemoryBuffer& buffer, const ModelState& model);
// Centroids from pre-computed embeddings (rows of z) and their labels.
Centroids centroids_from_embeddings(const Tensor& z, std::span<const int> labels);

int ncm_predict(std::span<const double> embedding, const Centroids& centroids);
std::vector<int> ncm_predict(const Tensor& x, const Centroids& centroids, const ModelState& model);

// Checkpoint I/O; the layout is described in docs/checkpoint.md.
void save_checkpoint(const ModelState& model, const std::filesystem::path& path);
ModelState load_checkpoint(const std::filesystem::path& path);

}  // namespace bison
