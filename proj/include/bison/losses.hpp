#pragma once

#include <set>
#include <vector>

#include "bison/model.hpp"
#include "bison/tensor.hpp"

namespace bison {

struct LossWeights {
  double beta = 0.1;        // proxy-anchor coefficient
  double lambda_paf = 3.0;  // proxy alignment coefficient
  double gamma = 32.0;      // proxy-anchor sharpness
  double delta = 0.1;       // proxy-anchor margin

  void validate() const;
};

// Features of one training step. z_stream/z_buffer already contain the
// originals followed by their augmented copies.
struct StepBatch {
  Var z_stream;
  std::vector<int> y_stream;
  std::optional<Var> z_buffer;
  std::vector<int> y_buffer;
  std::set<int> y_buffer_prev;
  // Classes seen so far; cross-entropy normalises over these columns only.
  std::vector<bool> seen_classes;

  void validate(std::size_t num_classes) const;
};

// Mean over rows of -log softmax(s)[y], softmax restricted to seen columns.
Var cross_entropy(std::span<const int> labels, Var logits, const std::vector<bool>& seen_classes);

struct DcTerms {
  Var total;
  Var ce_stream;
  std::optional<Var> ce_str_buffer;
  std::optional<Var> ce_buf_buffer;
};

// L_DC = CE_str(z_D) + a * CE_str(z_M) + (1 - a) * CE_buf(z_M), a = sigmoid(alpha_raw).
DcTerms dc_loss(const StepBatch& batch, Var w_str, Var w_buf, Var eta_str, Var eta_buf,
                Var alpha_raw);

// Proxy-anchor loss over buffer features with the stream-head rows as proxies.
Var pal_loss(Var z, std::span<const int> labels, Var proxies, const LossWeights& weights);

// Mean over classes c of 1 - cos(w_buf[c], w_str[c]); w_str is detached.
// Returns nullopt when the class set is empty.
std::optional<Var> align_loss(Var w_buf, Var w_str, const std::set<int>& classes);

struct BisonTerms {
  Var total;
  DcTerms dc;
  std::optional<Var> pal;
  std::optional<Var> align;
};

// L_DC + beta * L_PAL + lambda_paf * L_Align, skipping terms whose inputs are empty.
BisonTerms bison_loss(const StepBatch& batch, Var w_str, Var w_buf, Var eta_str, Var eta_buf,
                      Var alpha_raw, const LossWeights& weights);

// Convenience overload binding the heads of a model on the batch's tape.
BisonTerms bison_loss(const StepBatch& batch, ModelState& model, const LossWeights& weights);

}  // namespace bison
