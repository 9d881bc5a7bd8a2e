#include "bison/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "bison/losses.hpp"
#include "bison/methods.hpp"
#include "bison/metrics.hpp"
#include "bison/replay.hpp"

namespace bison {

namespace {

struct Instance {
  ModelState model;
  Tensor xs, xs_alt, xm;
  std::vector<int> ys, ys_alt, ym;
  std::set<int> prev;
  std::vector<bool> seen;
  LossWeights weights;
};

std::size_t uniform(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

Tensor random_matrix(Rng& rng, std::size_t rows, std::size_t cols) {
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor t = Tensor::zeros({rows, cols});
  for (auto& v : t.data) v = n(rng);
  return t;
}

std::vector<int> random_labels(Rng& rng, std::size_t n, std::size_t c) {
  std::vector<int> out(n);
  for (auto& y : out) y = static_cast<int>(uniform(rng, 0, c - 1));
  return out;
}

Instance make_instance(Rng& rng) {
  ModelConfig cfg;
  cfg.num_classes = uniform(rng, 2, 6);
  cfg.embed_dim = uniform(rng, 2, 16);
  cfg.input_dim = uniform(rng, 2, 6);
  cfg.hidden = {uniform(rng, 2, 8)};

  Instance in;
  in.model = init_model(cfg, rng());
  std::uniform_real_distribution<double> scale(1.0, 4.0);
  std::normal_distribution<double> n(0.0, 1.0);
  in.model.eta_str.data[0] = scale(rng);
  in.model.eta_buf.data[0] = scale(rng);
  in.model.alpha_raw.data[0] = n(rng);
  // Zero biases with all-dead ReLUs give z = 0, where the cosine is not differentiable.
  for (auto& layer : in.model.extractor)
    for (auto& b : layer.bias.data) b = 0.5 * n(rng);

  const std::size_t bs = uniform(rng, 1, 8), bm = uniform(rng, 1, 8);
  in.xs = random_matrix(rng, bs, cfg.input_dim);
  in.xs_alt = random_matrix(rng, bs, cfg.input_dim);
  in.xm = random_matrix(rng, bm, cfg.input_dim);
  in.ys = random_labels(rng, bs, cfg.num_classes);
  in.ys_alt = random_labels(rng, bs, cfg.num_classes);
  in.ym = random_labels(rng, bm, cfg.num_classes);
  for (std::size_t c = 0; c < cfg.num_classes; ++c)
    if (uniform(rng, 0, 1)) in.prev.insert(static_cast<int>(c));
  if (in.prev.empty()) in.prev.insert(static_cast<int>(uniform(rng, 0, cfg.num_classes - 1)));
  in.seen.assign(cfg.num_classes, true);
  return in;
}

struct Bound {
  Var w_str, w_buf, eta_str, eta_buf, alpha_raw;
};

Bound bind_heads(Tape& tape, ModelState& m) {
  return {tape.leaf(m.w_str), tape.leaf(m.w_buf), tape.leaf(m.eta_str), tape.leaf(m.eta_buf),
          tape.leaf(m.alpha_raw)};
}

StepBatch make_batch(Tape& tape, Instance& in, bool alt_stream = false) {
  StepBatch b;
  b.z_stream = extractor_forward(tape, in.model, tape.constant(alt_stream ? in.xs_alt : in.xs));
  b.y_stream = alt_stream ? in.ys_alt : in.ys;
  b.z_buffer = extractor_forward(tape, in.model, tape.constant(in.xm));
  b.y_buffer = in.ym;
  b.y_buffer_prev = in.prev;
  b.seen_classes = in.seen;
  return b;
}

// L_BISON with the alignment target held as a constant: the function whose
// derivative the stop-gradient defines.
Var bison_composite(Tape& tape, Instance& in, const Tensor& w_str_snapshot) {
  auto b = make_batch(tape, in);
  auto h = bind_heads(tape, in.model);
  auto dc = dc_loss(b, h.w_str, h.w_buf, h.eta_str, h.eta_buf, h.alpha_raw);
  Var pal = pal_loss(*b.z_buffer, b.y_buffer, h.w_str, in.weights);
  Var align = *align_loss(h.w_buf, tape.constant(w_str_snapshot), in.prev);
  return dc.total + scale(pal, in.weights.beta) + scale(align, in.weights.lambda_paf);
}

std::vector<std::vector<double>> grads_of(const std::vector<Tensor*>& params) {
  std::vector<std::vector<double>> out;
  for (Tensor* p : params) {
    out.push_back(p->grad ? *p->grad : std::vector<double>(p->size(), 0.0));
    p->grad.reset();
  }
  return out;
}

std::size_t count_nonzero(const Tensor& t) {
  if (!t.grad) return 0;
  return static_cast<std::size_t>(std::count_if(t.grad->begin(), t.grad->end(), [](double g) { return g != 0.0; }));
}

}  // namespace

std::vector<GradCheckResult> grad_check_suite(std::uint64_t seed, std::size_t instances, double eps) {
  std::vector<GradCheckResult> results{{"CE", 0, 0.0}, {"DC", 0, 0.0}, {"PAL", 0, 0.0},
                                       {"Align", 0, 0.0}, {"BISON", 0, 0.0}};
  Rng rng(derive_seed(seed, 101));
  for (std::size_t n = 0; n < instances; ++n) {
    Instance in = make_instance(rng);
    auto params = in.model.parameters();
    std::vector<std::function<Var(Tape&)>> builders;

    builders.push_back([&](Tape& tape) {
      Var z = extractor_forward(tape, in.model, tape.constant(in.xs));
      auto h = bind_heads(tape, in.model);
      return cross_entropy(in.ys, cosine_logits(z, h.w_str, h.eta_str), in.seen);
    });
    builders.push_back([&](Tape& tape) {
      auto b = make_batch(tape, in);
      auto h = bind_heads(tape, in.model);
      return dc_loss(b, h.w_str, h.w_buf, h.eta_str, h.eta_buf, h.alpha_raw).total;
    });
    builders.push_back([&](Tape& tape) {
      Var z = extractor_forward(tape, in.model, tape.constant(in.xm));
      auto h = bind_heads(tape, in.model);
      return pal_loss(z, in.ym, h.w_str, in.weights);
    });
    const Tensor snapshot = in.model.w_str;
    builders.push_back([&](Tape& tape) {
      auto h = bind_heads(tape, in.model);
      return *align_loss(h.w_buf, tape.constant(snapshot), in.prev);
    });
    builders.push_back([&](Tape& tape) { return bison_composite(tape, in, snapshot); });

    for (std::size_t i = 0; i < builders.size(); ++i) {
      const double err = finite_diff_check(builders[i], params, eps);
      results[i].max_rel_error = std::max(results[i].max_rel_error, err);
      results[i].instances++;
    }

    // The library's bison_loss must produce the composite's gradients.
    {
      Tape tape;
      auto b = make_batch(tape, in);
      tape.backward(bison_loss(b, in.model, in.weights).total);
    }
    auto lib = grads_of(params);
    {
      Tape tape;
      tape.backward(bison_composite(tape, in, snapshot));
    }
    auto ref = grads_of(params);
    for (std::size_t p = 0; p < lib.size(); ++p)
      for (std::size_t k = 0; k < lib[p].size(); ++k)
        results[4].max_rel_error =
            std::max(results[4].max_rel_error, std::abs(lib[p][k] - ref[p][k]) / std::max(1.0, std::abs(ref[p][k])));
  }
  return results;
}

FlowCheckResult gradient_flow_suite(std::uint64_t seed, std::size_t instances) {
  FlowCheckResult r;
  Rng rng(derive_seed(seed, 102));
  for (std::size_t n = 0; n < instances; ++n) {
    Instance in = make_instance(rng);
    auto& m = in.model;
    auto params = m.parameters();
    auto clear = [&] {
      for (Tensor* p : params) p->grad.reset();
    };

    {
      Tape tape;
      auto h = bind_heads(tape, m);
      tape.backward(*align_loss(h.w_buf, h.w_str, in.prev));
      r.align_wstr_nonzero += count_nonzero(m.w_str);
      clear();
    }
    {
      Tape tape;
      auto b = make_batch(tape, in);
      auto h = bind_heads(tape, m);
      auto dc = dc_loss(b, h.w_str, h.w_buf, h.eta_str, h.eta_buf, h.alpha_raw);
      Var term = shift(neg(sigmoid(h.alpha_raw)), 1.0) * *dc.ce_buf_buffer;
      tape.backward(term);
      r.cebuf_wstr_nonzero += count_nonzero(m.w_str);
      clear();
    }
    {
      Tape tape;
      auto b = make_batch(tape, in);
      auto h = bind_heads(tape, m);
      tape.backward(dc_loss(b, h.w_str, h.w_buf, h.eta_str, h.eta_buf, h.alpha_raw).ce_stream);
      r.stream_wbuf_nonzero += count_nonzero(m.w_buf);
      clear();
    }
    {
      std::vector<double> first, second;
      for (bool alt : {false, true}) {
        Tape tape;
        auto b = make_batch(tape, in, alt);
        tape.backward(bison_loss(b, m, in.weights).total);
        (alt ? second : first) = m.w_buf.grad.value_or(std::vector<double>(m.w_buf.size(), 0.0));
        clear();
      }
      for (std::size_t k = 0; k < first.size(); ++k)
        if (first[k] != second[k]) r.stream_swap_wbuf_diff++;
    }
    r.instances++;
  }
  return r;
}

namespace oracle {

double aa(const std::vector<std::vector<double>>& a, std::size_t k) {
  double s = 0.0;
  for (std::size_t j = 1; j <= k; ++j) s += a[k - 1][j - 1];
  return s / static_cast<double>(k);
}

double af(const std::vector<std::vector<double>>& a, std::size_t k) {
  double s = 0.0;
  for (std::size_t j = 1; j <= k - 1; ++j) {
    double best = -1e300;
    for (std::size_t i = j; i <= k - 1; ++i) best = std::max(best, a[i - 1][j - 1] - a[k - 1][j - 1]);
    s += best;
  }
  return s / static_cast<double>(k - 1);
}

double ai(const std::vector<std::vector<double>>& a, const std::vector<double>& best, std::size_t k) {
  double s = 0.0;
  for (std::size_t j = 1; j <= k; ++j) s += best[j - 1] - a[j - 1][j - 1];
  return s / static_cast<double>(k);
}

}  // namespace oracle

MetricsBenchResult metrics_bench(std::uint64_t seed, std::size_t matrices, std::size_t max_tasks) {
  MetricsBenchResult r;
  Rng rng(derive_seed(seed, 103));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t n = 0; n < matrices; ++n) {
    const std::size_t t = uniform(rng, 1, max_tasks);
    std::vector<std::vector<double>> raw(t);
    AccuracyMatrix a(t);
    for (std::size_t k = 0; k < t; ++k) {
      for (std::size_t j = 0; j <= k; ++j) {
        raw[k].push_back(u(rng));
        a.set(k + 1, j + 1, raw[k][j]);
      }
    }
    std::vector<double> best(t);
    for (auto& b : best) b = u(rng);
    a.set_upper_bounds(best);
    for (std::size_t k = 1; k <= t; ++k) {
      r.max_abs_diff = std::max(r.max_abs_diff, std::abs(average_accuracy(a, k) - oracle::aa(raw, k)));
      r.max_abs_diff = std::max(r.max_abs_diff, std::abs(average_intransigence(a, k) - oracle::ai(raw, best, k)));
      if (k >= 2)
        r.max_abs_diff = std::max(r.max_abs_diff, std::abs(average_forgetting(a, k) - oracle::af(raw, k)));
    }
    r.matrices++;
  }
  return r;
}

ReservoirBenchResult reservoir_bench(std::uint64_t seed, std::size_t capacity, std::size_t stream,
                                     std::size_t trials, std::size_t property_sequences) {
  ReservoirBenchResult r;
  Rng rng(derive_seed(seed, 104));
  std::size_t first_half = 0, stored = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    MemoryBuffer buf(capacity);
    Sample s;
    for (std::size_t i = 0; i < stream; ++i) {
      s.id = i;
      buf.reservoir_update(s, rng);
    }
    for (const auto& slot : buf.slots()) first_half += slot.id < stream / 2 ? 1 : 0;
    stored += buf.size();
    r.trials++;
  }
  r.first_half_fraction = stored ? static_cast<double>(first_half) / static_cast<double>(stored) : 0.0;

  for (std::size_t n = 0; n < property_sequences; ++n) {
    const std::size_t cap = uniform(rng, 1, 32);
    const std::size_t len = uniform(rng, 0, 200);
    MemoryBuffer buf(cap);
    Sample s;
    for (std::size_t i = 0; i < len; ++i) {
      s.id = i;
      s.label = static_cast<int>(i % 7);
      buf.reservoir_update(s, rng);
      r.max_size_seen = std::max(r.max_size_seen, buf.size());
      if (buf.size() > cap || buf.size() != std::min<std::size_t>(i + 1, cap)) r.capacity_violations++;
    }
    r.property_sequences++;
  }
  return r;
}

}  // namespace bison
