#include "bison/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <mutex>
#include <set>
#include <thread>

namespace bison {

// ---------------------------------------------------------------------------
// Config parsing

namespace {

class Reader {
 public:
  Reader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(path_.empty() ? "$" : path_, "expected an object");
  }

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  bool has(const std::string& key) const { return obj_.contains(key); }

  template <typename T>
  T get(const std::string& key, T fallback) {
    seen_.insert(key);
    if (!obj_.contains(key)) return fallback;
    try {
      return obj_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(at(key), "has the wrong type");
    }
  }

  const json& child(const std::string& key) {
    seen_.insert(key);
    return obj_.at(key);
  }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(at(it.key()), "unknown field");
    }
  }

 private:
  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

double positive(double v, const std::string& field) {
  if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(field, "must be positive");
  return v;
}

double non_negative(double v, const std::string& field) {
  if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError(field, "must be non-negative");
  return v;
}

AugmentConfig parse_augment(const json& j, const std::string& path) {
  AugmentConfig a;
  if (j.is_string()) {
    try {
      a.policy = parse_augment_policy(j.get<std::string>());
    } catch (const std::invalid_argument& e) {
      throw ConfigError(path, e.what());
    }
    return a;
  }
  Reader r(j, path);
  try {
    a.policy = parse_augment_policy(r.get<std::string>("policy", to_string(a.policy)));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(r.at("policy"), e.what());
  }
  a.noise_sigma = non_negative(r.get("noise_sigma", a.noise_sigma), r.at("noise_sigma"));
  a.dropout = r.get("dropout", a.dropout);
  if (!(a.dropout >= 0.0 && a.dropout <= 1.0)) throw ConfigError(r.at("dropout"), "must lie in [0, 1]");
  a.crop_padding = r.get("crop_padding", a.crop_padding);
  a.crop = r.get("crop", a.crop);
  a.flip = r.get("flip", a.flip);
  r.finish();
  return a;
}

json augment_json(const AugmentConfig& a) {
  return {{"policy", to_string(a.policy)}, {"noise_sigma", a.noise_sigma}, {"dropout", a.dropout},
          {"crop_padding", a.crop_padding}, {"crop", a.crop},           {"flip", a.flip}};
}

MethodConfig parse_method_config(Reader& r, MethodConfig base) {
  auto& w = base.weights;
  w.beta = non_negative(r.get("beta", w.beta), r.at("beta"));
  w.lambda_paf = non_negative(r.get("lambda_paf", w.lambda_paf), r.at("lambda_paf"));
  w.gamma = positive(r.get("gamma", w.gamma), r.at("gamma"));
  w.delta = non_negative(r.get("delta", w.delta), r.at("delta"));
  base.sgd.learning_rate = positive(r.get("learning_rate", base.sgd.learning_rate), r.at("learning_rate"));
  if (r.has("inference")) {
    try {
      base.inference = parse_inference_mode(r.get<std::string>("inference", ""));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(r.at("inference"), e.what());
    }
  }
  if (r.has("augmentation")) base.augment = parse_augment(r.child("augmentation"), r.at("augmentation"));
  return base;
}

MethodSpec parse_method(const json& j, const std::string& path) {
  MethodSpec spec;
  if (j.is_string()) {
    try {
      spec.config = MethodConfig::preset(parse_method_id(j.get<std::string>()));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(path, e.what());
    }
    spec.name = to_string(spec.config.id);
    return spec;
  }
  Reader r(j, path);
  if (!r.has("id")) throw ConfigError(r.at("id"), "is required");
  MethodId id;
  try {
    id = parse_method_id(r.get<std::string>("id", ""));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(r.at("id"), e.what());
  }
  spec.name = r.get<std::string>("name", to_string(id));
  spec.config = parse_method_config(r, MethodConfig::preset(id));
  r.finish();
  try {
    spec.config.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path, e.what());
  }
  return spec;
}

json method_json(const MethodSpec& m) {
  const auto& c = m.config;
  return {{"id", to_string(c.id)},
          {"name", m.name},
          {"beta", c.weights.beta},
          {"lambda_paf", c.weights.lambda_paf},
          {"gamma", c.weights.gamma},
          {"delta", c.weights.delta},
          {"learning_rate", c.sgd.learning_rate},
          {"inference", to_string(c.inference)},
          {"augmentation", augment_json(c.augment)}};
}

DatasetSpec parse_dataset(const json& j, const std::string& path) {
  DatasetSpec d;
  Reader r(j, path);
  d.kind = r.get<std::string>("kind", d.kind);
  if (d.kind == "synthetic-gaussian") {
    auto& g = d.gaussian;
    g.num_classes = r.get("num_classes", g.num_classes);
    g.dim = r.get("dim", g.dim);
    g.train_per_class = r.get("train_per_class", g.train_per_class);
    g.test_per_class = r.get("test_per_class", g.test_per_class);
    g.radius = non_negative(r.get("radius", g.radius), r.at("radius"));
    g.sigma = non_negative(r.get("sigma", g.sigma), r.at("sigma"));
    d.seed = r.get("seed", d.seed);
    if (g.num_classes == 0) throw ConfigError(r.at("num_classes"), "must be positive");
    if (g.dim == 0) throw ConfigError(r.at("dim"), "must be positive");
    if (g.train_per_class == 0) throw ConfigError(r.at("train_per_class"), "must be positive");
    if (g.test_per_class == 0) throw ConfigError(r.at("test_per_class"), "must be positive");
  } else if (d.kind == "cifar-binary") {
    const auto v = r.get<std::string>("variant", "cifar10");
    if (v == "cifar10") d.variant = CifarVariant::cifar10;
    else if (v == "cifar100") d.variant = CifarVariant::cifar100;
    else throw ConfigError(r.at("variant"), "must be cifar10 or cifar100");
    d.train_files = r.get("train_files", d.train_files);
    d.test_files = r.get("test_files", d.test_files);
    if (d.train_files.empty()) throw ConfigError(r.at("train_files"), "must list at least one file");
    if (d.test_files.empty()) throw ConfigError(r.at("test_files"), "must list at least one file");
  } else if (d.kind == "jsonl") {
    d.path = r.get<std::string>("path", "");
    if (d.path.empty()) throw ConfigError(r.at("path"), "is required");
  } else {
    throw ConfigError(r.at("kind"), "unknown dataset kind '" + d.kind + "'");
  }
  r.finish();
  return d;
}

json dataset_json(const DatasetSpec& d) {
  if (d.kind == "synthetic-gaussian") {
    const auto& g = d.gaussian;
    return {{"kind", d.kind},          {"num_classes", g.num_classes},
            {"dim", g.dim},            {"train_per_class", g.train_per_class},
            {"test_per_class", g.test_per_class}, {"radius", g.radius},
            {"sigma", g.sigma},        {"seed", d.seed}};
  }
  if (d.kind == "cifar-binary") {
    return {{"kind", d.kind},
            {"variant", d.variant == CifarVariant::cifar10 ? "cifar10" : "cifar100"},
            {"train_files", d.train_files},
            {"test_files", d.test_files}};
  }
  return {{"kind", d.kind}, {"path", d.path}};
}

}  // namespace

Dataset load_dataset(const DatasetSpec& spec) {
  if (spec.kind == "synthetic-gaussian") return gen_synthetic_gaussian(spec.gaussian, spec.seed);
  if (spec.kind == "cifar-binary") {
    std::vector<std::filesystem::path> train(spec.train_files.begin(), spec.train_files.end());
    std::vector<std::filesystem::path> test(spec.test_files.begin(), spec.test_files.end());
    return load_cifar_dataset(train, test, spec.variant);
  }
  if (spec.kind == "jsonl") return load_jsonl(spec.path);
  throw std::invalid_argument("unknown dataset kind '" + spec.kind + "'");
}

ExperimentConfig ExperimentConfig::defaults() {
  ExperimentConfig c;
  for (auto id : {MethodId::finetune, MethodId::er, MethodId::er_ncm, MethodId::bison}) {
    c.methods.push_back({to_string(id), MethodConfig::preset(id)});
  }
  return c;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  Reader r(j, "");
  if (r.has("dataset")) c.dataset = parse_dataset(r.child("dataset"), "dataset");
  c.num_tasks = r.get("num_tasks", c.num_tasks);
  c.classes_per_task = r.get("classes_per_task", c.classes_per_task);
  c.buffer_capacities = r.get("buffer_capacities", c.buffer_capacities);
  c.seeds = r.get("seeds", c.seeds);
  c.stream_batch_size = r.get("stream_batch_size", c.stream_batch_size);
  c.buffer_batch_size = r.get("buffer_batch_size", c.buffer_batch_size);
  c.output_dir = r.get("output_dir", c.output_dir);
  c.fixed_class_order = r.get("fixed_class_order", c.fixed_class_order);
  if (r.has("class_order")) c.class_order = r.get<std::vector<int>>("class_order", {});
  c.similar_pairs = r.get("similar_pairs", c.similar_pairs);

  if (r.has("model")) {
    Reader m(r.child("model"), "model");
    c.hidden = m.get("hidden", c.hidden);
    c.embed_dim = m.get("embed_dim", c.embed_dim);
    m.finish();
  }

  if (r.has("methods")) {
    const auto& arr = r.child("methods");
    if (!arr.is_array()) throw ConfigError("methods", "expected an array");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      c.methods.push_back(parse_method(arr[i], "methods[" + std::to_string(i) + "]"));
    }
  } else {
    c.methods = defaults().methods;
  }

  if (r.has("upper_bound")) {
    Reader u(r.child("upper_bound"), "upper_bound");
    try {
      c.upper_bound_mode = parse_upper_bound_mode(u.get<std::string>("mode", "sequential"));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(u.at("mode"), e.what());
    }
    c.upper_bound_method = parse_method_config(u, MethodConfig::preset(MethodId::finetune));
    u.finish();
  }
  r.finish();
  c.validate();
  return c;
}

void ExperimentConfig::validate() const {
  if (num_tasks == 0) throw ConfigError("num_tasks", "must be positive");
  if (classes_per_task == 0) throw ConfigError("classes_per_task", "must be positive");
  if (seeds.empty()) throw ConfigError("seeds", "must list at least one seed");
  if (methods.empty()) throw ConfigError("methods", "must list at least one method");
  if (buffer_capacities.empty()) throw ConfigError("buffer_capacities", "must list at least one capacity");
  for (std::size_t i = 0; i < buffer_capacities.size(); ++i) {
    if (buffer_capacities[i] == 0) {
      throw ConfigError("buffer_capacities[" + std::to_string(i) + "]", "must be positive");
    }
  }
  if (stream_batch_size == 0) throw ConfigError("stream_batch_size", "must be >= 1");
  if (buffer_batch_size == 0) throw ConfigError("buffer_batch_size", "must be >= 1");
  if (embed_dim == 0) throw ConfigError("model.embed_dim", "must be positive");
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    if (hidden[i] == 0) throw ConfigError("model.hidden[" + std::to_string(i) + "]", "must be positive");
  }
  std::set<std::string> names;
  for (std::size_t i = 0; i < methods.size(); ++i) {
    const auto field = "methods[" + std::to_string(i) + "]";
    if (!names.insert(methods[i].name).second) {
      throw ConfigError(field + ".name", "duplicate method name '" + methods[i].name + "'");
    }
    try {
      methods[i].config.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(field, e.what());
    }
  }
  if (upper_bound_method.id != MethodId::finetune) {
    throw ConfigError("upper_bound", "upper bounds use the finetune learner");
  }
  if (dataset.kind == "synthetic-gaussian" &&
      num_tasks * classes_per_task > dataset.gaussian.num_classes) {
    throw ConfigError("num_tasks", "num_tasks x classes_per_task exceeds dataset.num_classes");
  }
}

std::vector<int> ExperimentConfig::fixed_order() const {
  return class_order ? *class_order : cifar10::kConfusionOrder;
}

std::vector<std::pair<int, int>> ExperimentConfig::effective_similar_pairs() const {
  if (!similar_pairs.empty()) return similar_pairs;
  if (fixed_class_order && !class_order) return cifar10::kSimilarPairs;
  return {};
}

json ExperimentConfig::to_json() const {
  json methods_json = json::array();
  for (const auto& m : methods) methods_json.push_back(method_json(m));
  json j{{"dataset", dataset_json(dataset)},
         {"num_tasks", num_tasks},
         {"classes_per_task", classes_per_task},
         {"buffer_capacities", buffer_capacities},
         {"methods", methods_json},
         {"seeds", seeds},
         {"stream_batch_size", stream_batch_size},
         {"buffer_batch_size", buffer_batch_size},
         {"model", {{"hidden", hidden}, {"embed_dim", embed_dim}}},
         {"upper_bound",
          {{"mode", to_string(upper_bound_mode)},
           {"learning_rate", upper_bound_method.sgd.learning_rate},
           {"augmentation", augment_json(upper_bound_method.augment)}}},
         {"fixed_class_order", fixed_class_order},
         {"similar_pairs", similar_pairs},
         {"output_dir", output_dir}};
  if (class_order) j["class_order"] = *class_order;
  return j;
}

json config_schema() {
  const json number = {{"type", "number"}};
  const json count = {{"type", "integer"}, {"minimum", 1}};
  const json augmentation = {
      {"oneOf",
       {{{"type", "string"}, {"enum", {"none", "vector-noise", "image-basic"}}},
        {{"type", "object"},
         {"additionalProperties", false},
         {"properties",
          {{"policy", {{"enum", {"none", "vector-noise", "image-basic"}}}},
           {"noise_sigma", {{"type", "number"}, {"minimum", 0}}},
           {"dropout", {{"type", "number"}, {"minimum", 0}, {"maximum", 1}}},
           {"crop_padding", {{"type", "integer"}, {"minimum", 0}}},
           {"crop", {{"type", "boolean"}}},
           {"flip", {{"type", "boolean"}}}}}}}}};
  const json method = {
      {"oneOf",
       {{{"type", "string"}, {"enum", {"bison", "finetune", "er", "er-ncm", "ssil-lite"}}},
        {{"type", "object"},
         {"required", {"id"}},
         {"additionalProperties", false},
         {"properties",
          {{"id", {{"enum", {"bison", "finetune", "er", "er-ncm", "ssil-lite"}}}},
           {"name", {{"type", "string"}}},
           {"beta", {{"type", "number"}, {"minimum", 0}, {"default", 0.1}}},
           {"lambda_paf", {{"type", "number"}, {"minimum", 0}, {"default", 3.0}}},
           {"gamma", {{"type", "number"}, {"exclusiveMinimum", 0}, {"default", 32}}},
           {"delta", {{"type", "number"}, {"minimum", 0}, {"default", 0.1}}},
           {"learning_rate", {{"type", "number"}, {"exclusiveMinimum", 0}, {"default", 0.1}}},
           {"inference", {{"enum", {"ncm", "linear-softmax"}}}},
           {"augmentation", augmentation}}}}}}};
  const json dataset = {
      {"type", "object"},
      {"properties",
       {{"kind", {{"enum", {"synthetic-gaussian", "cifar-binary", "jsonl"}}}},
        {"num_classes", count},
        {"dim", count},
        {"train_per_class", count},
        {"test_per_class", count},
        {"radius", number},
        {"sigma", number},
        {"seed", {{"type", "integer"}, {"minimum", 0}}},
        {"variant", {{"enum", {"cifar10", "cifar100"}}}},
        {"train_files", {{"type", "array"}, {"items", {{"type", "string"}}}}},
        {"test_files", {{"type", "array"}, {"items", {{"type", "string"}}}}},
        {"path", {{"type", "string"}}}}}};
  return {
      {"$schema", "https://json-schema.org/draft/2020-12/schema"},
      {"title", "bison-ocil experiment"},
      {"type", "object"},
      {"additionalProperties", false},
      {"properties",
       {{"dataset", dataset},
        {"num_tasks", count},
        {"classes_per_task", count},
        {"buffer_capacities", {{"type", "array"}, {"minItems", 1}, {"items", count}}},
        {"methods", {{"type", "array"}, {"minItems", 1}, {"items", method}}},
        {"seeds", {{"type", "array"}, {"minItems", 1}, {"items", {{"type", "integer"}, {"minimum", 0}}}}},
        {"stream_batch_size", count},
        {"buffer_batch_size", count},
        {"model",
         {{"type", "object"},
          {"properties", {{"hidden", {{"type", "array"}, {"items", count}}}, {"embed_dim", count}}}}},
        {"upper_bound",
         {{"type", "object"},
          {"properties",
           {{"mode", {{"enum", {"sequential", "per-task"}}}},
            {"learning_rate", number},
            {"augmentation", augmentation}}}}},
        {"fixed_class_order", {{"type", "boolean"}}},
        {"class_order", {{"type", "array"}, {"items", {{"type", "integer"}, {"minimum", 0}}}}},
        {"similar_pairs",
         {{"type", "array"},
          {"items", {{"type", "array"}, {"minItems", 2}, {"maxItems", 2}, {"items", {{"type", "integer"}}}}}}},
        {"output_dir", {{"type", "string"}}}}}};
}

// ---------------------------------------------------------------------------
// Running

std::string CellResult::cell_name() const {
  return method + "_m" + std::to_string(capacity) + "_s" + std::to_string(seed);
}

MeanStd mean_std(const std::vector<double>& values) {
  MeanStd out;
  if (values.empty()) return out;
  double s = 0.0;
  for (double v : values) s += v;
  out.mean = s / static_cast<double>(values.size());
  if (values.size() >= 2) {
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return out;
}

std::vector<Aggregate> aggregate(const std::vector<CellResult>& cells) {
  std::vector<Aggregate> out;
  std::vector<std::pair<std::string, std::size_t>> keys;
  for (const auto& c : cells) {
    std::pair<std::string, std::size_t> key{c.method, c.capacity};
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) keys.push_back(key);
  }
  for (const auto& [method, capacity] : keys) {
    std::vector<double> aa, af, ai;
    for (const auto& c : cells) {
      if (c.method != method || c.capacity != capacity || !c.ok()) continue;
      aa.push_back(c.final.aa);
      if (c.final.af) af.push_back(*c.final.af);
      if (c.final.ai) ai.push_back(*c.final.ai);
    }
    Aggregate a;
    a.method = method;
    a.capacity = capacity;
    a.runs = aa.size();
    a.aa = mean_std(aa);
    if (!af.empty()) a.af = mean_std(af);
    if (!ai.empty()) a.ai = mean_std(ai);
    out.push_back(std::move(a));
  }
  return out;
}

namespace {

void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& body) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) body(i);
    });
  }
  for (auto& t : workers) t.join();
}

std::vector<SimilarityRow> similarity_rows(const std::vector<ConfusionMatrix>& confusion,
                                           const std::vector<int>& class_order,
                                           std::size_t classes_per_task, const SimilarPairs& pairs) {
  std::vector<SimilarityRow> rows;
  for (std::size_t k = 0; k < confusion.size(); ++k) {
    SimilarityRow row;
    row.after_task = k + 1;
    const auto m_row = row_normalize(confusion[k]);
    const std::size_t seen = std::min(class_order.size(), (k + 1) * classes_per_task);
    std::vector<int> classes(class_order.begin(), class_order.begin() + static_cast<std::ptrdiff_t>(seen));
    std::sort(classes.begin(), classes.end());
    for (int c : classes) {
      if (!pairs.has_neighbors(c)) continue;
      row.classes.push_back(c);
      row.sc_at_1.push_back(sc_at_1(m_row, pairs, c));
      row.p_sim.push_back(p_sim(m_row, pairs, c));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

RunReport run_experiment(const ExperimentConfig& config, const RunOptions& options) {
  config.validate();
  RunReport report;
  report.config = config;
  for (auto& s : report.config.seeds) s += options.seed_offset;
  const auto& cfg = report.config;

  const Dataset dataset = load_dataset(cfg.dataset);
  ModelConfig model;
  model.input_dim = dataset.dim;
  model.hidden = cfg.hidden;
  model.embed_dim = cfg.embed_dim;
  model.num_classes = dataset.num_classes;
  model.validate();

  const auto pair_list = cfg.effective_similar_pairs();
  std::optional<SimilarPairs> pairs;
  if (!pair_list.empty()) pairs.emplace(dataset.num_classes, pair_list);

  auto make_stream = [&](std::uint64_t seed) {
    std::optional<std::vector<int>> order;
    if (cfg.fixed_class_order) order = cfg.fixed_order();
    else if (cfg.class_order) order = cfg.class_order;
    return TaskStream(dataset, cfg.num_tasks, cfg.classes_per_task, stream_seeds(seed),
                      cfg.stream_batch_size, order);
  };
  // Streams are validated up front so configuration errors abort before any work.
  make_stream(cfg.seeds.front());

  report.upper_bounds.resize(cfg.seeds.size());
  parallel_for(cfg.seeds.size(), options.jobs, [&](std::size_t i) {
    auto& out = report.upper_bounds[i];
    out.seed = cfg.seeds[i];
    try {
      out.bounds = compute_upper_bounds(make_stream(out.seed), model, run_seeds(out.seed),
                                        cfg.upper_bound_method, cfg.upper_bound_mode, dataset.image);
    } catch (const std::exception& e) {
      out.error = e.what();
    }
  });

  struct CellSpec {
    const MethodSpec* method;
    std::size_t capacity;
    std::size_t seed_index;
  };
  std::vector<CellSpec> grid;
  for (const auto& m : cfg.methods)
    for (auto cap : cfg.buffer_capacities)
      for (std::size_t s = 0; s < cfg.seeds.size(); ++s) grid.push_back({&m, cap, s});

  report.cells.resize(grid.size());
  parallel_for(grid.size(), options.jobs, [&](std::size_t i) {
    const auto& spec = grid[i];
    auto& cell = report.cells[i];
    cell.method = spec.method->name;
    cell.capacity = spec.capacity;
    cell.seed = cfg.seeds[spec.seed_index];
    const auto start = std::chrono::steady_clock::now();
    try {
      auto stream = make_stream(cell.seed);
      cell.class_order = stream.class_order();
      MethodConfig method = spec.method->config;
      method.buffer_batch = cfg.buffer_batch_size == cfg.stream_batch_size ? 0 : cfg.buffer_batch_size;
      auto run = run_method(std::move(stream), method, model, spec.capacity, run_seeds(cell.seed),
                            dataset.image);
      cell.accuracy = std::move(run.accuracy);
      cell.confusion_by_task = std::move(run.confusion);
      cell.steps = run.steps;
      cell.samples_trained = run.samples_trained;
      const auto& bounds = report.upper_bounds[spec.seed_index];
      if (!bounds.error) cell.accuracy.set_upper_bounds(bounds.bounds);
      const std::size_t t = cfg.num_tasks;
      cell.final.aa = average_accuracy(cell.accuracy, t);
      if (t >= 2) cell.final.af = average_forgetting(cell.accuracy, t);
      if (!bounds.error) cell.final.ai = average_intransigence(cell.accuracy, t);
      if (pairs) {
        cell.similarity =
            similarity_rows(cell.confusion_by_task, cell.class_order, cfg.classes_per_task, *pairs);
      }
    } catch (const std::exception& e) {
      cell.error = e.what();
    }
    cell.duration_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  });

  report.aggregates = aggregate(report.cells);
  return report;
}

// ---------------------------------------------------------------------------
// JSON (de)serialisation

namespace {

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> opt_double(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

json mean_std_json(const std::optional<MeanStd>& m) {
  if (!m) return nullptr;
  return {{"mean", m->mean}, {"std", opt(m->std)}};
}

std::optional<MeanStd> mean_std_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  return MeanStd{j.at("mean").get<double>(), opt_double(j.at("std"))};
}

json confusion_json(const ConfusionMatrix& m) {
  json rows = json::array();
  const auto n = m.num_classes();
  for (std::size_t c = 0; c < n; ++c) {
    json row = json::array();
    for (std::size_t d = 0; d < n; ++d) row.push_back(m.count(static_cast<int>(c), static_cast<int>(d)));
    rows.push_back(row);
  }
  return rows;
}

ConfusionMatrix confusion_from(const json& j) {
  ConfusionMatrix m(j.size());
  for (std::size_t c = 0; c < j.size(); ++c) {
    if (j[c].size() != j.size()) throw std::runtime_error("confusion matrix is not square");
    for (std::size_t d = 0; d < j.size(); ++d) {
      const auto v = j[c][d].get<std::uint64_t>();
      if (v) m.add(static_cast<int>(c), static_cast<int>(d), v);
    }
  }
  return m;
}

}  // namespace

json report_to_json(const RunReport& report) {
  json bounds = json::array();
  for (const auto& b : report.upper_bounds) {
    json e{{"seed", b.seed}, {"bounds", b.bounds}};
    if (b.error) e["error"] = *b.error;
    bounds.push_back(e);
  }

  json cells = json::array();
  for (const auto& c : report.cells) {
    json cell{{"name", c.cell_name()},
              {"method", c.method},
              {"capacity", c.capacity},
              {"seed", c.seed},
              {"status", c.ok() ? "ok" : "error"}};
    if (c.error) {
      cell["error"] = *c.error;
    } else {
      json acc = json::array();
      for (const auto& row : c.accuracy.rows()) {
        json r = json::array();
        for (const auto& v : row) r.push_back(opt(v));
        acc.push_back(r);
      }
      json by_task = json::array();
      for (const auto& m : c.confusion_by_task) by_task.push_back(confusion_json(m));
      json sim = json::array();
      for (const auto& s : c.similarity) {
        json p = json::array();
        for (const auto& v : s.p_sim) p.push_back(opt(v));
        sim.push_back({{"after_task", s.after_task}, {"classes", s.classes}, {"sc_at_1", s.sc_at_1}, {"p_sim", p}});
      }
      cell["class_order"] = c.class_order;
      cell["accuracy_matrix"] = acc;
      cell["upper_bounds"] = c.accuracy.upper_bounds();
      cell["final"] = {{"aa", c.final.aa}, {"af", opt(c.final.af)}, {"ai", opt(c.final.ai)}};
      cell["confusion"] = c.confusion_by_task.empty() ? json::array() : confusion_json(c.confusion_by_task.back());
      cell["confusion_by_task"] = by_task;
      cell["similarity"] = sim;
      cell["steps"] = c.steps;
      cell["samples_trained"] = c.samples_trained;
    }
    cell["duration_seconds"] = c.duration_seconds;
    cells.push_back(cell);
  }

  json aggs = json::array();
  for (const auto& a : report.aggregates) {
    aggs.push_back({{"method", a.method},
                    {"capacity", a.capacity},
                    {"runs", a.runs},
                    {"aa", mean_std_json(a.aa)},
                    {"af", mean_std_json(a.af)},
                    {"ai", mean_std_json(a.ai)}});
  }
  return {{"format", "bison-ocil-results/1"},
          {"config", report.config.to_json()},
          {"upper_bounds", bounds},
          {"cells", cells},
          {"aggregates", aggs}};
}

RunReport report_from_json(const json& j) {
  if (j.value("format", std::string()) != "bison-ocil-results/1") {
    throw std::runtime_error("not a bison-ocil results document");
  }
  RunReport r;
  r.config = ExperimentConfig::from_json(j.at("config"));
  for (const auto& b : j.at("upper_bounds")) {
    SeedBounds sb{b.at("seed").get<std::uint64_t>(), b.at("bounds").get<std::vector<double>>(), std::nullopt};
    if (b.contains("error")) sb.error = b.at("error").get<std::string>();
    r.upper_bounds.push_back(std::move(sb));
  }
  for (const auto& jc : j.at("cells")) {
    CellResult c;
    c.method = jc.at("method").get<std::string>();
    c.capacity = jc.at("capacity").get<std::size_t>();
    c.seed = jc.at("seed").get<std::uint64_t>();
    c.duration_seconds = jc.value("duration_seconds", 0.0);
    if (jc.contains("error")) {
      c.error = jc.at("error").get<std::string>();
      r.cells.push_back(std::move(c));
      continue;
    }
    c.class_order = jc.at("class_order").get<std::vector<int>>();
    const auto& acc = jc.at("accuracy_matrix");
    c.accuracy = AccuracyMatrix(acc.size());
    for (std::size_t k = 0; k < acc.size(); ++k)
      for (std::size_t jj = 0; jj < acc[k].size(); ++jj)
        if (!acc[k][jj].is_null()) c.accuracy.set(k + 1, jj + 1, acc[k][jj].get<double>());
    c.accuracy.set_upper_bounds(jc.at("upper_bounds").get<std::vector<double>>());
    for (const auto& m : jc.at("confusion_by_task")) c.confusion_by_task.push_back(confusion_from(m));
    for (const auto& s : jc.at("similarity")) {
      SimilarityRow row;
      row.after_task = s.at("after_task").get<std::size_t>();
      row.classes = s.at("classes").get<std::vector<int>>();
      row.sc_at_1 = s.at("sc_at_1").get<std::vector<double>>();
      for (const auto& p : s.at("p_sim")) row.p_sim.push_back(opt_double(p));
      c.similarity.push_back(std::move(row));
    }
    const auto& f = jc.at("final");
    c.final = {f.at("aa").get<double>(), opt_double(f.at("af")), opt_double(f.at("ai"))};
    c.steps = jc.value("steps", std::size_t{0});
    c.samples_trained = jc.value("samples_trained", std::size_t{0});
    r.cells.push_back(std::move(c));
  }
  for (const auto& ja : j.at("aggregates")) {
    Aggregate a;
    a.method = ja.at("method").get<std::string>();
    a.capacity = ja.at("capacity").get<std::size_t>();
    a.runs = ja.at("runs").get<std::size_t>();
    a.aa = *mean_std_from(ja.at("aa"));
    a.af = mean_std_from(ja.at("af"));
    a.ai = mean_std_from(ja.at("ai"));
    r.aggregates.push_back(std::move(a));
  }
  return r;
}

}  // namespace bison
