#include "bison/methods.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>

namespace bison {

MethodId parse_method_id(const std::string& name) {
  if (name == "bison") return MethodId::bison;
  if (name == "finetune" || name == "fine-tune") return MethodId::finetune;
  if (name == "er") return MethodId::er;
  if (name == "er-ncm" || name == "er+ncm") return MethodId::er_ncm;
  if (name == "ssil-lite") return MethodId::ssil_lite;
  throw std::invalid_argument("unknown method '" + name + "'");
}

std::string to_string(MethodId id) {
  switch (id) {
    case MethodId::bison: return "bison";
    case MethodId::finetune: return "finetune";
    case MethodId::er: return "er";
    case MethodId::er_ncm: return "er-ncm";
    case MethodId::ssil_lite: return "ssil-lite";
  }
  return "?";
}

InferenceMode parse_inference_mode(const std::string& name) {
  if (name == "ncm") return InferenceMode::ncm;
  if (name == "linear-softmax") return InferenceMode::linear_softmax;
  throw std::invalid_argument("unknown inference mode '" + name + "'");
}

std::string to_string(InferenceMode mode) {
  return mode == InferenceMode::ncm ? "ncm" : "linear-softmax";
}

MethodConfig MethodConfig::preset(MethodId id) {
  MethodConfig c;
  c.id = id;
  c.inference = (id == MethodId::bison || id == MethodId::er_ncm) ? InferenceMode::ncm
                                                                   : InferenceMode::linear_softmax;
  return c;
}

MethodConfig MethodConfig::bison_large_preset() {
  MethodConfig c = preset(MethodId::bison);
  c.weights.beta = 0.2;
  c.weights.lambda_paf = 10.0;
  return c;
}

void MethodConfig::validate() const {
  weights.validate();
  sgd.validate();
  if ((id == MethodId::bison || id == MethodId::er_ncm) && inference != InferenceMode::ncm) {
    throw std::invalid_argument(to_string(id) + " requires ncm inference");
  }
  if (id == MethodId::finetune && inference == InferenceMode::ncm) {
    throw std::invalid_argument("finetune keeps no buffer, so ncm inference is unavailable");
  }
  if (augment.noise_sigma < 0.0 || augment.dropout < 0.0 || augment.dropout > 1.0) {
    throw std::invalid_argument("augmentation noise_sigma must be >= 0 and dropout in [0, 1]");
  }
}

Var linear_logits(Var z, Var w) { return matmul(z, transpose(w)); }

// ---------------------------------------------------------------------------

namespace {

Tensor stack_rows(std::span<const std::vector<double>> a, std::span<const std::vector<double>> b,
                  std::size_t width) {
  Tensor t = Tensor::zeros({a.size() + b.size(), width});
  std::size_t r = 0;
  for (auto part : {a, b}) {
    for (const auto& row : part) {
      if (row.size() != width) {
        throw std::invalid_argument("sample of width " + std::to_string(row.size()) +
                                    ", expected " + std::to_string(width));
      }
      std::copy(row.begin(), row.end(), t.data.begin() + static_cast<std::ptrdiff_t>(r * width));
      ++r;
    }
  }
  return t;
}

std::vector<std::vector<double>> features_of(const std::vector<Sample>& samples) {
  std::vector<std::vector<double>> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.features);
  return out;
}

std::vector<int> doubled_labels(const std::vector<Sample>& samples) {
  std::vector<int> out;
  for (int rep = 0; rep < 2; ++rep)
    for (const auto& s : samples) out.push_back(s.label);
  return out;
}

std::vector<std::size_t> ids_of(const std::vector<Sample>& samples) {
  std::vector<std::size_t> out;
  for (const auto& s : samples) out.push_back(s.id);
  return out;
}

}  // namespace

Learner::Learner(MethodConfig config, ModelState model, std::size_t buffer_capacity,
                 std::uint64_t seed, std::optional<ImageShape> image)
    : config_(std::move(config)),
      model_(std::move(model)),
      rng_(seed),
      image_(image),
      seen_(model_.config.num_classes, false) {
  config_.validate();
  if (config_.uses_buffer()) buffer_.emplace(buffer_capacity);
}

void Learner::begin_task(std::size_t, const std::vector<int>& task_classes) {
  current_ = task_classes;
  for (int c : task_classes) {
    if (c < 0 || static_cast<std::size_t>(c) >= seen_.size()) {
      throw std::invalid_argument("task class " + std::to_string(c) + " exceeds the model's " +
                                  std::to_string(seen_.size()) + " classes");
    }
    seen_[static_cast<std::size_t>(c)] = true;
  }
  if (config_.id == MethodId::bison) model_.reset_alpha();
}

StepReport Learner::step(const StreamBatch& batch) {
  if (batch.samples.empty()) throw std::invalid_argument("empty stream batch");
  if (current_.empty()) throw std::logic_error("step() before begin_task()");
  switch (config_.id) {
    case MethodId::finetune: return step_finetune(batch);
    case MethodId::er:
    case MethodId::er_ncm: return step_er(batch);
    case MethodId::ssil_lite: return step_ssil(batch);
    case MethodId::bison: return step_bison(batch);
  }
  throw std::logic_error("unhandled method");
}

std::size_t Learner::retrieve_count(const StreamBatch& batch) const {
  return config_.buffer_batch == 0 ? batch.samples.size() : config_.buffer_batch;
}

void Learner::store(const StreamBatch& batch) {
  for (const auto& s : batch.samples) buffer_->reservoir_update(s, rng_);
}

StepReport Learner::step_finetune(const StreamBatch& batch) {
  StepReport rep;
  rep.trained_ids = ids_of(batch.samples);
  rep.stream_size = batch.samples.size();
  rep.alpha_at_start = model_.alpha();

  auto x = features_of(batch.samples);
  auto x_aug = augment(x, config_.augment, image_, rng_);
  Tape tape;
  Var z = extractor_forward(tape, model_, tape.constant(stack_rows(x, x_aug, model_.config.input_dim)));
  auto y = doubled_labels(batch.samples);
  Var loss = cross_entropy(y, linear_logits(z, tape.leaf(model_.w_str)), seen_);
  tape.backward(loss);
  sgd_step(tape.parameters(), config_.sgd);
  rep.loss = loss.value().item();
  return rep;
}

StepReport Learner::step_er(const StreamBatch& batch) {
  StepReport rep;
  rep.trained_ids = ids_of(batch.samples);
  rep.stream_size = batch.samples.size();
  rep.alpha_at_start = model_.alpha();

  auto mem = buffer_->random_retrieve(retrieve_count(batch), rng_);
  rep.buffer_batch_size = mem.size();
  auto xd = features_of(batch.samples);
  auto xd_aug = augment(xd, config_.augment, image_, rng_);
  auto xm = features_of(mem);
  auto xm_aug = augment(xm, config_.augment, image_, rng_);

  std::vector<std::vector<double>> rows = xd;
  rows.insert(rows.end(), xd_aug.begin(), xd_aug.end());
  std::vector<std::vector<double>> mem_rows = xm;
  mem_rows.insert(mem_rows.end(), xm_aug.begin(), xm_aug.end());
  auto y = doubled_labels(batch.samples);
  auto ym = doubled_labels(mem);
  y.insert(y.end(), ym.begin(), ym.end());

  Tape tape;
  Var z = extractor_forward(tape, model_, tape.constant(stack_rows(rows, mem_rows, model_.config.input_dim)));
  Var loss = cross_entropy(y, linear_logits(z, tape.leaf(model_.w_str)), seen_);
  tape.backward(loss);
  sgd_step(tape.parameters(), config_.sgd);
  rep.loss = loss.value().item();

  store(batch);
  buffer_->remember_labels(ym);
  rep.buffer_size_after = buffer_->size();
  return rep;
}

StepReport Learner::step_ssil(const StreamBatch& batch) {
  StepReport rep;
  rep.trained_ids = ids_of(batch.samples);
  rep.stream_size = batch.samples.size();
  rep.alpha_at_start = model_.alpha();

  auto mem = buffer_->random_retrieve(retrieve_count(batch), rng_);
  rep.buffer_batch_size = mem.size();
  auto xd = features_of(batch.samples);
  auto xd_aug = augment(xd, config_.augment, image_, rng_);
  auto xm = features_of(mem);
  auto xm_aug = augment(xm, config_.augment, image_, rng_);

  std::vector<bool> new_mask(seen_.size(), false), old_mask = seen_;
  for (int c : current_) {
    new_mask[static_cast<std::size_t>(c)] = true;
    old_mask[static_cast<std::size_t>(c)] = false;
  }

  // Rows whose label belongs to the current task go to the new-class softmax,
  // all others to the old-class softmax. Buffered samples of the current task
  // therefore join the new-class term.
  std::vector<std::vector<double>> new_rows, old_rows;
  std::vector<int> new_y, old_y;
  auto route = [&](const std::vector<Sample>& samples, const std::vector<std::vector<double>>& orig,
                   const std::vector<std::vector<double>>& aug) {
    for (const auto* part : {&orig, &aug}) {
      for (std::size_t i = 0; i < samples.size(); ++i) {
        const bool is_new = new_mask[static_cast<std::size_t>(samples[i].label)];
        (is_new ? new_rows : old_rows).push_back((*part)[i]);
        (is_new ? new_y : old_y).push_back(samples[i].label);
      }
    }
  };
  route(batch.samples, xd, xd_aug);
  route(mem, xm, xm_aug);

  Tape tape;
  Var w = tape.leaf(model_.w_str);
  const std::vector<std::vector<double>> none;
  Var loss = cross_entropy(
      new_y,
      linear_logits(extractor_forward(tape, model_,
                                      tape.constant(stack_rows(new_rows, none, model_.config.input_dim))),
                    w),
      new_mask);
  if (!old_rows.empty()) {
    Var z_old = extractor_forward(tape, model_,
                                  tape.constant(stack_rows(old_rows, none, model_.config.input_dim)));
    loss = loss + cross_entropy(old_y, linear_logits(z_old, w), old_mask);
  }
  tape.backward(loss);
  sgd_step(tape.parameters(), config_.sgd);
  rep.loss = loss.value().item();

  store(batch);
  buffer_->remember_labels(doubled_labels(mem));
  rep.buffer_size_after = buffer_->size();
  return rep;
}

StepReport Learner::step_bison(const StreamBatch& batch) {
  StepReport rep;
  rep.trained_ids = ids_of(batch.samples);
  rep.stream_size = batch.samples.size();
  rep.alpha_at_start = model_.alpha();

  auto mem = buffer_->random_retrieve(retrieve_count(batch), rng_);
  rep.buffer_batch_size = mem.size();
  auto xd = features_of(batch.samples);
  auto xd_aug = augment(xd, config_.augment, image_, rng_);
  auto xm = features_of(mem);
  auto xm_aug = augment(xm, config_.augment, image_, rng_);

  Tape tape;
  StepBatch sb;
  sb.z_stream =
      extractor_forward(tape, model_, tape.constant(stack_rows(xd, xd_aug, model_.config.input_dim)));
  sb.y_stream = doubled_labels(batch.samples);
  if (!mem.empty()) {
    sb.z_buffer =
        extractor_forward(tape, model_, tape.constant(stack_rows(xm, xm_aug, model_.config.input_dim)));
    sb.y_buffer = doubled_labels(mem);
  }
  sb.y_buffer_prev = buffer_->prev_labels();
  sb.seen_classes = seen_;

  auto terms = bison_loss(sb, model_, config_.weights);
  tape.backward(terms.total);
  sgd_step(tape.parameters(), config_.sgd);
  rep.loss = terms.total.value().item();

  store(batch);
  buffer_->remember_labels(sb.y_buffer);
  rep.buffer_size_after = buffer_->size();
  return rep;
}

std::vector<int> Learner::predict(const Tensor& x) const {
  if (x.rows() == 0) return {};
  if (config_.inference == InferenceMode::ncm) {
    return ncm_predict(x, ncm_centroids(*buffer_, model_), model_);
  }
  Tensor z = extractor_forward(model_, x);
  const auto& w = model_.w_str;
  const std::size_t c = w.rows(), d = w.cols();
  std::vector<int> out(z.rows(), -1);
  for (std::size_t i = 0; i < z.rows(); ++i) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < c; ++k) {
      if (!seen_[k]) continue;
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += z.at(i, j) * w.at(k, j);
      if (out[i] < 0 || s > best) {
        best = s;
        out[i] = static_cast<int>(k);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Harness

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  // splitmix64 over the combined value
  std::uint64_t z = seed * 0x9E3779B97F4A7C15ULL + tag + 0x632BE59BD9B4E019ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

RunSeeds run_seeds(std::uint64_t seed) { return {derive_seed(seed, 1), derive_seed(seed, 2)}; }

StreamSeeds stream_seeds(std::uint64_t seed) { return {derive_seed(seed, 3), derive_seed(seed, 4)}; }

namespace {

Tensor test_matrix(const std::vector<Sample>& samples, std::size_t width) {
  std::vector<std::vector<double>> rows;
  rows.reserve(samples.size());
  for (const auto& s : samples) rows.push_back(s.features);
  return stack_rows(rows, {}, width);
}

}  // namespace

RunResult run_method(TaskStream stream, const MethodConfig& method, const ModelConfig& model,
                     std::size_t buffer_capacity, RunSeeds seeds, std::optional<ImageShape> image,
                     const StepObserver& observer) {
  Learner learner(method, init_model(model, seeds.model_init), buffer_capacity, seeds.learner, image);
  const std::size_t num_tasks = stream.num_tasks();
  RunResult result;
  result.accuracy = AccuracyMatrix(num_tasks);

  std::vector<Tensor> test_x;
  for (const auto& t : stream.tasks()) test_x.push_back(test_matrix(t.test, model.input_dim));

  stream.rewind();
  std::size_t step_in_task = 0;
  while (auto batch = stream.next_batch()) {
    if (batch->first_in_task) {
      learner.begin_task(batch->task, stream.task(batch->task).classes);
      step_in_task = 0;
    }
    StepReport rep = learner.step(*batch);
    ++result.steps;
    result.samples_trained += rep.trained_ids.size();
    if (observer) {
      observer(StepEvent{batch->task, step_in_task, batch->first_in_task, &rep, &learner});
    }
    ++step_in_task;

    if (batch->last_in_task) {
      const std::size_t k = batch->task + 1;
      ConfusionMatrix confusion(model.num_classes);
      for (std::size_t j = 0; j < k; ++j) {
        const auto& tests = stream.task(j).test;
        if (tests.empty()) {
          throw std::invalid_argument("task " + std::to_string(j) + " has no test samples");
        }
        auto pred = learner.predict(test_x[j]);
        std::size_t correct = 0;
        for (std::size_t i = 0; i < pred.size(); ++i) {
          correct += pred[i] == tests[i].label;
          confusion.add(tests[i].label, pred[i]);
        }
        result.accuracy.set(k, j + 1, static_cast<double>(correct) / static_cast<double>(pred.size()));
      }
      result.confusion.push_back(std::move(confusion));
    }
  }
  return result;
}

UpperBoundMode parse_upper_bound_mode(const std::string& name) {
  if (name == "sequential") return UpperBoundMode::sequential;
  if (name == "per-task") return UpperBoundMode::per_task;
  throw std::invalid_argument("unknown upper bound mode '" + name + "'");
}

std::string to_string(UpperBoundMode mode) {
  return mode == UpperBoundMode::sequential ? "sequential" : "per-task";
}

std::vector<double> compute_upper_bounds(const TaskStream& stream, const ModelConfig& model,
                                         RunSeeds seeds, const MethodConfig& finetune,
                                         UpperBoundMode mode, std::optional<ImageShape> image) {
  if (finetune.id != MethodId::finetune) {
    throw std::invalid_argument("upper bounds come from a finetune learner");
  }
  std::vector<double> bounds;
  if (mode == UpperBoundMode::sequential) {
    auto run = run_method(stream, finetune, model, 1, seeds, image);
    for (std::size_t j = 1; j <= stream.num_tasks(); ++j) bounds.push_back(run.accuracy.get(j, j));
    return bounds;
  }
  for (std::size_t j = 0; j < stream.num_tasks(); ++j) {
    auto single = TaskStream::from_tasks({stream.task(j)}, stream.batch_size());
    auto run = run_method(std::move(single), finetune, model, 1, seeds, image);
    bounds.push_back(run.accuracy.get(1, 1));
  }
  return bounds;
}

}  // namespace bison
