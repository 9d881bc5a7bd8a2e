#include "bison/losses.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace bison {

void LossWeights::validate() const {
  if (!(gamma > 0.0)) throw std::invalid_argument("gamma must be positive");
  if (!(delta >= 0.0)) throw std::invalid_argument("delta must be non-negative");
  if (!(beta >= 0.0)) throw std::invalid_argument("beta must be non-negative");
  if (!(lambda_paf >= 0.0)) throw std::invalid_argument("lambda_paf must be non-negative");
}

namespace {

void check_labels(std::span<const int> labels, std::size_t num_classes, const char* what) {
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw std::invalid_argument(std::string(what) + ": label " + std::to_string(y) +
                                  " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
}

}  // namespace

void StepBatch::validate(std::size_t num_classes) const {
  if (z_stream.shape().size() != 2 || z_stream.shape()[0] != y_stream.size()) {
    throw std::invalid_argument("stream features " + shape_str(z_stream.shape()) + " with " +
                                std::to_string(y_stream.size()) + " labels");
  }
  check_labels(y_stream, num_classes, "stream batch");
  if (z_buffer) {
    if (z_buffer->shape().size() != 2 || z_buffer->shape()[0] != y_buffer.size()) {
      throw std::invalid_argument("buffer features " + shape_str(z_buffer->shape()) + " with " +
                                  std::to_string(y_buffer.size()) + " labels");
    }
  } else if (!y_buffer.empty()) {
    throw std::invalid_argument("buffer labels without buffer features");
  }
  check_labels(y_buffer, num_classes, "buffer batch");
  std::vector<int> prev(y_buffer_prev.begin(), y_buffer_prev.end());
  check_labels(prev, num_classes, "previous buffer labels");
}

Var cross_entropy(std::span<const int> labels, Var logits, const std::vector<bool>& seen_classes) {
  const auto& s = logits.shape();
  if (s.size() != 2 || s[0] != labels.size()) {
    throw std::invalid_argument("cross_entropy: " + std::to_string(labels.size()) +
                                " labels for logits " + shape_str(s));
  }
  if (labels.empty()) throw std::invalid_argument("cross_entropy: empty batch");
  const std::size_t c = s[1];
  std::vector<bool> mask = seen_classes.empty() ? std::vector<bool>(c, true) : seen_classes;
  if (mask.size() != c) throw std::invalid_argument("cross_entropy: class mask has wrong length");
  std::vector<std::size_t> idx;
  idx.reserve(labels.size());
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= c || !mask[static_cast<std::size_t>(y)]) {
      throw std::invalid_argument("cross_entropy: label " + std::to_string(y) +
                                  " is not among the classes seen so far");
    }
    idx.push_back(static_cast<std::size_t>(y));
  }
  return neg(mean(pick(log_softmax(logits, mask), idx)));
}

DcTerms dc_loss(const StepBatch& batch, Var w_str, Var w_buf, Var eta_str, Var eta_buf,
                Var alpha_raw) {
  if (batch.y_stream.empty()) throw std::invalid_argument("dc_loss: empty stream batch");
  DcTerms out;
  out.ce_stream =
      cross_entropy(batch.y_stream, cosine_logits(batch.z_stream, w_str, eta_str), batch.seen_classes);
  out.total = out.ce_stream;
  if (!batch.z_buffer || batch.y_buffer.empty()) return out;

  // The buffer head only ever sees buffer features.
  Var z_m = *batch.z_buffer;
  Var alpha = sigmoid(alpha_raw);
  out.ce_str_buffer =
      cross_entropy(batch.y_buffer, cosine_logits(z_m, w_str, eta_str), batch.seen_classes);
  out.ce_buf_buffer =
      cross_entropy(batch.y_buffer, cosine_logits(z_m, w_buf, eta_buf), batch.seen_classes);
  out.total = out.total + alpha * *out.ce_str_buffer + shift(neg(alpha), 1.0) * *out.ce_buf_buffer;
  return out;
}

Var pal_loss(Var z, std::span<const int> labels, Var proxies, const LossWeights& weights) {
  weights.validate();
  const auto& zs = z.shape();
  const auto& ps = proxies.shape();
  if (zs.size() != 2 || zs[0] == 0) throw std::invalid_argument("pal_loss: no buffer features");
  if (zs[0] != labels.size()) {
    throw std::invalid_argument("pal_loss: " + std::to_string(labels.size()) + " labels for " +
                                shape_str(zs));
  }
  const std::size_t n = zs[0], c = ps[0];
  check_labels(labels, c, "pal_loss");

  Tensor positive = Tensor::zeros({n, c});
  Tensor negative = Tensor::zeros({n, c});
  std::set<int> present(labels.begin(), labels.end());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      const bool same = labels[i] == static_cast<int>(j);
      positive.at(i, j) = same ? 1.0 : 0.0;
      negative.at(i, j) = same ? 0.0 : 1.0;
    }
  }

  Var cos = cosine_matrix(z, proxies);
  // Proxies absent from the batch contribute log(1 + 0) = 0 to the positive sum.
  Var pos = log_one_plus_sum_exp(scale(shift(cos, -weights.delta), -weights.gamma), positive);
  Var negs = log_one_plus_sum_exp(scale(shift(cos, weights.delta), weights.gamma), negative);
  return scale(sum(pos), 1.0 / static_cast<double>(present.size())) +
         scale(sum(negs), 1.0 / static_cast<double>(c));
}

std::optional<Var> align_loss(Var w_buf, Var w_str, const std::set<int>& classes) {
  if (classes.empty()) return std::nullopt;
  if (w_buf.shape() != w_str.shape() || w_buf.shape().size() != 2) {
    throw std::invalid_argument("align_loss: head shapes " + shape_str(w_buf.shape()) + " and " +
                                shape_str(w_str.shape()));
  }
  std::vector<std::size_t> rows;
  for (int c : classes) {
    if (c < 0 || static_cast<std::size_t>(c) >= w_buf.shape()[0]) {
      throw std::invalid_argument("align_loss: class " + std::to_string(c) + " out of range");
    }
    rows.push_back(static_cast<std::size_t>(c));
  }
  Var teacher = select_rows(stop_gradient(w_str), rows);
  Var student = select_rows(w_buf, rows);
  return shift(neg(mean(cosine_similarity(student, teacher))), 1.0);
}

BisonTerms bison_loss(const StepBatch& batch, Var w_str, Var w_buf, Var eta_str, Var eta_buf,
                      Var alpha_raw, const LossWeights& weights) {
  weights.validate();
  batch.validate(w_str.shape()[0]);
  BisonTerms out;
  out.dc = dc_loss(batch, w_str, w_buf, eta_str, eta_buf, alpha_raw);
  out.total = out.dc.total;
  if (batch.z_buffer && !batch.y_buffer.empty()) {
    out.pal = pal_loss(*batch.z_buffer, batch.y_buffer, w_str, weights);
    out.total = out.total + scale(*out.pal, weights.beta);
  }
  out.align = align_loss(w_buf, w_str, batch.y_buffer_prev);
  if (out.align) out.total = out.total + scale(*out.align, weights.lambda_paf);
  return out;
}

BisonTerms bison_loss(const StepBatch& batch, ModelState& model, const LossWeights& weights) {
  Tape& tape = batch.z_stream.tape();
  return bison_loss(batch, tape.leaf(model.w_str), tape.leaf(model.w_buf), tape.leaf(model.eta_str),
                    tape.leaf(model.eta_buf), tape.leaf(model.alpha_raw), weights);
}

}  // namespace bison
