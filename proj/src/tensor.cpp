#include "bison/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace bison {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  if (shape.size() == 1) os << ',';
  os << ')';
  return os.str();
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

Tensor::Tensor(Shape s, std::vector<double> d, bool rg)
    : shape(std::move(s)), data(std::move(d)), requires_grad(rg) {
  if (shape_size(shape) != data.size()) {
    throw std::invalid_argument("tensor shape " + shape_str(shape) + " does not match " +
                                std::to_string(data.size()) + " values");
  }
}

Tensor Tensor::zeros(Shape s, bool rg) {
  auto n = shape_size(s);
  return Tensor(std::move(s), std::vector<double>(n, 0.0), rg);
}

Tensor Tensor::scalar(double value, bool rg) { return Tensor({1}, {value}, rg); }

Tensor Tensor::matrix(std::size_t r, std::size_t c, std::vector<double> d) {
  return Tensor({r, c}, std::move(d));
}

Tensor Tensor::vector(std::vector<double> d) {
  auto n = d.size();
  return Tensor({n}, std::move(d));
}

std::size_t Tensor::rows() const {
  if (shape.size() != 2) throw std::invalid_argument("rows() on non-matrix " + shape_str(shape));
  return shape[0];
}

std::size_t Tensor::cols() const {
  if (shape.size() != 2) throw std::invalid_argument("cols() on non-matrix " + shape_str(shape));
  return shape[1];
}

double Tensor::item() const {
  if (data.size() != 1) {
    throw std::invalid_argument("item() on tensor of shape " + shape_str(shape));
  }
  return data[0];
}

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

// ---------------------------------------------------------------------------
// Tape

Var Tape::leaf(Tensor& param) {
  Node n;
  n.value = param;
  n.value.grad.reset();
  n.requires_grad = param.requires_grad;
  n.bound = &param;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.value.requires_grad = false;
  n.value.grad.reset();
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  for (const auto& v : inputs) {
    if (&v.tape() != this) throw std::invalid_argument("operands recorded on different tapes");
    n.inputs.push_back(v.id());
    n.requires_grad = n.requires_grad || nodes_[v.id()].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  n.value.requires_grad = n.requires_grad;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

void Tape::backward(Var loss) {
  if (&loss.tape() != this) throw std::invalid_argument("loss belongs to another tape");
  const auto& lv = nodes_[loss.id()].value;
  if (lv.size() != 1) {
    throw std::invalid_argument("backward needs a scalar loss, got shape " + shape_str(lv.shape));
  }
  grads_.assign(nodes_.size(), {});
  if (nodes_[loss.id()].requires_grad) grads_[loss.id()].assign(1, 1.0);

  std::vector<const Tensor*> in_values;
  std::vector<std::vector<double>*> in_grads;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (!node.requires_grad || grads_[i].empty() || !node.backward) continue;
    in_values.clear();
    in_grads.clear();
    for (auto id : node.inputs) {
      in_values.push_back(&nodes_[id].value);
      if (nodes_[id].requires_grad) {
        if (grads_[id].empty()) grads_[id].assign(nodes_[id].value.size(), 0.0);
        in_grads.push_back(&grads_[id]);
      } else {
        in_grads.push_back(nullptr);
      }
    }
    node.backward(BackwardArgs{in_values, node.value, grads_[i], in_grads});
  }

  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    auto& node = nodes_[i];
    if (!node.bound || !node.requires_grad) continue;
    auto& target = node.bound->grad;
    if (!target) target.emplace(node.value.size(), 0.0);
    if (!grads_[i].empty()) {
      for (std::size_t k = 0; k < grads_[i].size(); ++k) (*target)[k] += grads_[i][k];
    }
  }
}

std::span<const double> Tape::grad(Var v) const {
  if (v.id() >= grads_.size()) return {};
  return grads_[v.id()];
}

std::vector<Tensor*> Tape::parameters() const {
  std::vector<Tensor*> out;
  for (const auto& n : nodes_) {
    if (n.bound && n.requires_grad &&
        std::find(out.begin(), out.end(), n.bound) == out.end()) {
      out.push_back(n.bound);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise binary ops

namespace {

enum class Broadcast { same, scalar_rhs, scalar_lhs, row_rhs, row_lhs };

struct BinaryPlan {
  Broadcast mode;
  Shape out_shape;
  std::size_t cols = 1;

  std::size_t ia(std::size_t k) const {
    switch (mode) {
      case Broadcast::scalar_lhs: return 0;
      case Broadcast::row_lhs: return k % cols;
      default: return k;
    }
  }
  std::size_t ib(std::size_t k) const {
    switch (mode) {
      case Broadcast::scalar_rhs: return 0;
      case Broadcast::row_rhs: return k % cols;
      default: return k;
    }
  }
};

BinaryPlan plan_binary(const char* op, const Shape& a, const Shape& b) {
  if (a == b) return {Broadcast::same, a};
  if (shape_size(b) == 1) return {Broadcast::scalar_rhs, a};
  if (shape_size(a) == 1) return {Broadcast::scalar_lhs, b};
  if (a.size() == 2 && b.size() == 1 && a[1] == b[0]) return {Broadcast::row_rhs, a, a[1]};
  if (a.size() == 1 && b.size() == 2 && b[1] == a[0]) return {Broadcast::row_lhs, b, b[1]};
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                              shape_str(b));
}

Var unary(Var a, std::vector<double> out, Shape shape,
          std::function<void(const BackwardArgs&)> bw) {
  Var in[] = {a};
  return a.tape().record(Tensor(std::move(shape), std::move(out)), in, std::move(bw));
}

void require_matrix(const char* op, const Tensor& t) {
  if (t.ndim() != 2) {
    throw std::invalid_argument(std::string(op) + ": expected a matrix, got " + shape_str(t.shape));
  }
}

}  // namespace

Var add(Var a, Var b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  auto plan = plan_binary("add", av.shape, bv.shape);
  std::vector<double> out(shape_size(plan.out_shape));
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = av.data[plan.ia(k)] + bv.data[plan.ib(k)];
  Var in[] = {a, b};
  return a.tape().record(Tensor(plan.out_shape, std::move(out)), in, [plan](const BackwardArgs& g) {
    for (std::size_t k = 0; k < g.grad_out.size(); ++k) {
      if (g.grad_in[0]) (*g.grad_in[0])[plan.ia(k)] += g.grad_out[k];
      if (g.grad_in[1]) (*g.grad_in[1])[plan.ib(k)] += g.grad_out[k];
    }
  });
}

Var sub(Var a, Var b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  auto plan = plan_binary("sub", av.shape, bv.shape);
  std::vector<double> out(shape_size(plan.out_shape));
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = av.data[plan.ia(k)] - bv.data[plan.ib(k)];
  Var in[] = {a, b};
  return a.tape().record(Tensor(plan.out_shape, std::move(out)), in, [plan](const BackwardArgs& g) {
    for (std::size_t k = 0; k < g.grad_out.size(); ++k) {
      if (g.grad_in[0]) (*g.grad_in[0])[plan.ia(k)] += g.grad_out[k];
      if (g.grad_in[1]) (*g.grad_in[1])[plan.ib(k)] -= g.grad_out[k];
    }
  });
}

Var mul(Var a, Var b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  auto plan = plan_binary("mul", av.shape, bv.shape);
  std::vector<double> out(shape_size(plan.out_shape));
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = av.data[plan.ia(k)] * bv.data[plan.ib(k)];
  Var in[] = {a, b};
  return a.tape().record(Tensor(plan.out_shape, std::move(out)), in, [plan](const BackwardArgs& g) {
    const auto& x = g.inputs[0]->data;
    const auto& y = g.inputs[1]->data;
    for (std::size_t k = 0; k < g.grad_out.size(); ++k) {
      if (g.grad_in[0]) (*g.grad_in[0])[plan.ia(k)] += g.grad_out[k] * y[plan.ib(k)];
      if (g.grad_in[1]) (*g.grad_in[1])[plan.ib(k)] += g.grad_out[k] * x[plan.ia(k)];
    }
  });
}

Var scale(Var a, double k) {
  const auto& av = a.value();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = k * av.data[i];
  return unary(a, std::move(out), av.shape, [k](const BackwardArgs& g) {
    for (std::size_t i = 0; i < g.grad_out.size(); ++i) (*g.grad_in[0])[i] += k * g.grad_out[i];
  });
}

Var shift(Var a, double k) {
  const auto& av = a.value();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av.data[i] + k;
  return unary(a, std::move(out), av.shape, [](const BackwardArgs& g) {
    for (std::size_t i = 0; i < g.grad_out.size(); ++i) (*g.grad_in[0])[i] += g.grad_out[i];
  });
}

Var neg(Var a) { return scale(a, -1.0); }

// ---------------------------------------------------------------------------
// Linear algebra

Var matmul(Var a, Var b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  require_matrix("matmul", av);
  require_matrix("matmul", bv);
  const std::size_t m = av.rows(), n = av.cols(), p = bv.cols();
  if (bv.rows() != n) {
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(av.shape) + " and " +
                                shape_str(bv.shape));
  }
  std::vector<double> out(m * p, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t k = 0; k < n; ++k) {
      const double aik = av.data[i * n + k];
      for (std::size_t j = 0; j < p; ++j) out[i * p + j] += aik * bv.data[k * p + j];
    }
  }
  Var in[] = {a, b};
  return a.tape().record(Tensor({m, p}, std::move(out)), in, [m, n, p](const BackwardArgs& g) {
    const auto& x = g.inputs[0]->data;
    const auto& y = g.inputs[1]->data;
    const auto& go = g.grad_out;
    if (auto* ga = g.grad_in[0]) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t k = 0; k < n; ++k) {
          double acc = 0.0;
          for (std::size_t j = 0; j < p; ++j) acc += go[i * p + j] * y[k * p + j];
          (*ga)[i * n + k] += acc;
        }
    }
    if (auto* gb = g.grad_in[1]) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t k = 0; k < n; ++k) {
          const double xik = x[i * n + k];
          for (std::size_t j = 0; j < p; ++j) (*gb)[k * p + j] += xik * go[i * p + j];
        }
    }
  });
}

Var transpose(Var a) {
  const auto& av = a.value();
  require_matrix("transpose", av);
  const std::size_t m = av.rows(), n = av.cols();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av.data[i * n + j];
  return unary(a, std::move(out), {n, m}, [m, n](const BackwardArgs& g) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) (*g.grad_in[0])[i * n + j] += g.grad_out[j * m + i];
  });
}

// ---------------------------------------------------------------------------
// Pointwise

Var relu(Var a) {
  const auto& av = a.value();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av.data[i] > 0.0 ? av.data[i] : 0.0;
  return unary(a, std::move(out), av.shape, [](const BackwardArgs& g) {
    const auto& x = g.inputs[0]->data;
    for (std::size_t i = 0; i < g.grad_out.size(); ++i)
      if (x[i] > 0.0) (*g.grad_in[0])[i] += g.grad_out[i];
  });
}

Var sigmoid(Var a) {
  const auto& av = a.value();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = av.data[i];
    out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  return unary(a, std::move(out), av.shape, [](const BackwardArgs& g) {
    const auto& y = g.output.data;
    for (std::size_t i = 0; i < g.grad_out.size(); ++i)
      (*g.grad_in[0])[i] += g.grad_out[i] * y[i] * (1.0 - y[i]);
  });
}

Var exp(Var a) {
  const auto& av = a.value();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(av.data[i]);
  return unary(a, std::move(out), av.shape, [](const BackwardArgs& g) {
    const auto& y = g.output.data;
    for (std::size_t i = 0; i < g.grad_out.size(); ++i) (*g.grad_in[0])[i] += g.grad_out[i] * y[i];
  });
}

Var log(Var a) {
  const auto& av = a.value();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(av.data[i]);
  return unary(a, std::move(out), av.shape, [](const BackwardArgs& g) {
    const auto& x = g.inputs[0]->data;
    for (std::size_t i = 0; i < g.grad_out.size(); ++i) (*g.grad_in[0])[i] += g.grad_out[i] / x[i];
  });
}

// ---------------------------------------------------------------------------
// Reductions and reshaping

Var sum(Var a) {
  const auto& av = a.value();
  double s = 0.0;
  for (double x : av.data) s += x;
  return unary(a, {s}, {1}, [](const BackwardArgs& g) {
    for (auto& v : *g.grad_in[0]) v += g.grad_out[0];
  });
}

Var sum(Var a, std::size_t axis) {
  const auto& av = a.value();
  require_matrix("sum", av);
  if (axis > 1) throw std::invalid_argument("sum: axis must be 0 or 1");
  const std::size_t m = av.rows(), n = av.cols();
  std::vector<double> out(axis == 0 ? n : m, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[axis == 0 ? j : i] += av.data[i * n + j];
  Shape shape{out.size()};
  return unary(a, std::move(out), shape, [m, n, axis](const BackwardArgs& g) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) (*g.grad_in[0])[i * n + j] += g.grad_out[axis == 0 ? j : i];
  });
}

Var mean(Var a) {
  const auto n = a.value().size();
  if (n == 0) throw std::invalid_argument("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no operands");
  const auto& first = parts[0].value();
  const bool vec = first.ndim() == 1;
  if (vec && axis != 0) throw std::invalid_argument("concat: vectors only concatenate on axis 0");
  if (!vec && (first.ndim() != 2 || axis > 1)) {
    throw std::invalid_argument("concat: unsupported shape " + shape_str(first.shape));
  }
  std::vector<std::size_t> extents;
  std::size_t fixed = vec ? 1 : first.shape[1 - axis];
  std::size_t total = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    if (s.size() != first.ndim() || (!vec && s[1 - axis] != fixed)) {
      throw std::invalid_argument("concat: incompatible shapes " + shape_str(first.shape) + " and " +
                                  shape_str(s));
    }
    extents.push_back(s[vec ? 0 : axis]);
    total += extents.back();
  }

  Shape out_shape;
  if (vec) out_shape = {total};
  else if (axis == 0) out_shape = {total, fixed};
  else out_shape = {fixed, total};

  // Maps element k of part p to its offset in the output.
  auto locate = [vec, axis, fixed, total, extents](std::size_t p, std::size_t k) {
    std::size_t before = 0;
    for (std::size_t q = 0; q < p; ++q) before += extents[q];
    if (vec || axis == 0) return before * fixed + k;
    const std::size_t r = k / extents[p], c = k % extents[p];
    return r * total + before + c;
  };

  std::vector<double> out(shape_size(out_shape));
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto& d = parts[p].value().data;
    for (std::size_t k = 0; k < d.size(); ++k) out[locate(p, k)] = d[k];
  }
  return parts[0].tape().record(Tensor(out_shape, std::move(out)), parts,
                                [locate](const BackwardArgs& g) {
                                  for (std::size_t p = 0; p < g.inputs.size(); ++p) {
                                    if (!g.grad_in[p]) continue;
                                    auto& gp = *g.grad_in[p];
                                    for (std::size_t k = 0; k < gp.size(); ++k)
                                      gp[k] += g.grad_out[locate(p, k)];
                                  }
                                });
}

// ---------------------------------------------------------------------------
// Norms and cosine similarity

Var row_norm(Var a) {
  const auto& av = a.value();
  require_matrix("row_norm", av);
  const std::size_t m = av.rows(), n = av.cols();
  std::vector<double> out(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += av.data[i * n + j] * av.data[i * n + j];
    out[i] = std::sqrt(s);
  }
  return unary(a, std::move(out), {m}, [m, n](const BackwardArgs& g) {
    const auto& x = g.inputs[0]->data;
    const auto& y = g.output.data;
    for (std::size_t i = 0; i < m; ++i) {
      if (y[i] == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) (*g.grad_in[0])[i * n + j] += g.grad_out[i] * x[i * n + j] / y[i];
    }
  });
}

Var normalize_rows(Var a) {
  const auto& av = a.value();
  require_matrix("normalize_rows", av);
  const std::size_t m = av.rows(), n = av.cols();
  std::vector<double> norms(m), out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += av.data[i * n + j] * av.data[i * n + j];
    norms[i] = std::max(std::sqrt(s), kNormFloor);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = av.data[i * n + j] / norms[i];
  }
  return unary(a, std::move(out), {m, n}, [m, n, norms](const BackwardArgs& g) {
    const auto& y = g.output.data;
    for (std::size_t i = 0; i < m; ++i) {
      const double* gi = &g.grad_out[i * n];
      const double* yi = &y[i * n];
      auto* dx = &(*g.grad_in[0])[i * n];
      if (norms[i] == kNormFloor) {
        // Clamped branch: y = x / floor is linear in x.
        for (std::size_t j = 0; j < n; ++j) dx[j] += gi[j] / kNormFloor;
        continue;
      }
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += yi[j] * gi[j];
      for (std::size_t j = 0; j < n; ++j) dx[j] += (gi[j] - yi[j] * dot) / norms[i];
    }
  });
}

Var cosine_similarity(Var a, Var b) {
  if (a.shape() != b.shape() || a.shape().size() != 2) {
    throw std::invalid_argument("cosine_similarity: incompatible shapes " + shape_str(a.shape()) +
                                " and " + shape_str(b.shape()));
  }
  return sum(mul(normalize_rows(a), normalize_rows(b)), 1);
}

Var cosine_matrix(Var a, Var b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (as.size() != 2 || bs.size() != 2 || as[1] != bs[1]) {
    throw std::invalid_argument("cosine_matrix: incompatible shapes " + shape_str(as) + " and " +
                                shape_str(bs));
  }
  return matmul(normalize_rows(a), transpose(normalize_rows(b)));
}

// ---------------------------------------------------------------------------
// Softmax family

Var log_softmax(Var a, const std::vector<bool>& column_mask) {
  const auto& av = a.value();
  require_matrix("log_softmax", av);
  const std::size_t m = av.rows(), n = av.cols();
  if (!column_mask.empty() && column_mask.size() != n) {
    throw std::invalid_argument("log_softmax: mask of length " + std::to_string(column_mask.size()) +
                                " for " + std::to_string(n) + " columns");
  }
  std::vector<bool> mask = column_mask.empty() ? std::vector<bool>(n, true) : column_mask;
  if (std::none_of(mask.begin(), mask.end(), [](bool b) { return b; })) {
    throw std::invalid_argument("log_softmax: every column is masked");
  }
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  std::vector<double> out(m * n, kNegInf);
  for (std::size_t i = 0; i < m; ++i) {
    double mx = kNegInf;
    for (std::size_t j = 0; j < n; ++j)
      if (mask[j]) mx = std::max(mx, av.data[i * n + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if (mask[j]) s += std::exp(av.data[i * n + j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < n; ++j)
      if (mask[j]) out[i * n + j] = av.data[i * n + j] - lse;
  }
  return unary(a, std::move(out), {m, n}, [m, n, mask](const BackwardArgs& g) {
    const auto& y = g.output.data;
    for (std::size_t i = 0; i < m; ++i) {
      double gs = 0.0;
      for (std::size_t j = 0; j < n; ++j)
        if (mask[j]) gs += g.grad_out[i * n + j];
      for (std::size_t j = 0; j < n; ++j)
        if (mask[j]) (*g.grad_in[0])[i * n + j] += g.grad_out[i * n + j] - std::exp(y[i * n + j]) * gs;
    }
  });
}

Var softmax(Var a) { return exp(log_softmax(a)); }

Var pick(Var a, std::span<const std::size_t> index) {
  const auto& av = a.value();
  require_matrix("pick", av);
  const std::size_t m = av.rows(), n = av.cols();
  if (index.size() != m) {
    throw std::invalid_argument("pick: " + std::to_string(index.size()) + " indices for " +
                                shape_str(av.shape));
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  std::vector<double> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    if (idx[i] >= n) throw std::invalid_argument("pick: column index out of range");
    out[i] = av.data[i * n + idx[i]];
  }
  return unary(a, std::move(out), {m}, [n, idx](const BackwardArgs& g) {
    for (std::size_t i = 0; i < idx.size(); ++i) (*g.grad_in[0])[i * n + idx[i]] += g.grad_out[i];
  });
}

Var select_rows(Var a, std::span<const std::size_t> rows) {
  const auto& av = a.value();
  require_matrix("select_rows", av);
  const std::size_t m = av.rows(), n = av.cols();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  std::vector<double> out(idx.size() * n);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= m) throw std::invalid_argument("select_rows: row index out of range");
    std::copy_n(&av.data[idx[r] * n], n, &out[r * n]);
  }
  return unary(a, std::move(out), {idx.size(), n}, [n, idx](const BackwardArgs& g) {
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < n; ++j) (*g.grad_in[0])[idx[r] * n + j] += g.grad_out[r * n + j];
  });
}

Var log_one_plus_sum_exp(Var a, const Tensor& mask) {
  const auto& av = a.value();
  require_matrix("log_one_plus_sum_exp", av);
  if (mask.shape != av.shape) {
    throw std::invalid_argument("log_one_plus_sum_exp: mask shape " + shape_str(mask.shape) +
                                " differs from " + shape_str(av.shape));
  }
  const std::size_t m = av.rows(), n = av.cols();
  std::vector<double> out(n), shifts(n);
  for (std::size_t j = 0; j < n; ++j) {
    double mx = 0.0;  // the implicit "1" is exp(0)
    for (std::size_t i = 0; i < m; ++i)
      if (mask.data[i * n + j] != 0.0) mx = std::max(mx, av.data[i * n + j]);
    double s = std::exp(-mx);
    for (std::size_t i = 0; i < m; ++i)
      if (mask.data[i * n + j] != 0.0) s += mask.data[i * n + j] * std::exp(av.data[i * n + j] - mx);
    out[j] = mx + std::log(s);
  }
  std::vector<double> md = mask.data;
  return unary(a, std::move(out), {n}, [m, n, md](const BackwardArgs& g) {
    const auto& x = g.inputs[0]->data;
    const auto& y = g.output.data;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        if (md[i * n + j] == 0.0) continue;
        (*g.grad_in[0])[i * n + j] += g.grad_out[j] * md[i * n + j] * std::exp(x[i * n + j] - y[j]);
      }
  });
}

Var stop_gradient(Var a) { return a.tape().constant(a.value()); }

// ---------------------------------------------------------------------------
// Optimiser and gradient checking

void SgdConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("learning_rate must be positive, got " + std::to_string(learning_rate));
  }
}

void sgd_step(std::span<Tensor* const> params, const SgdConfig& cfg) {
  cfg.validate();
  for (Tensor* p : params) {
    if (!p->requires_grad) continue;
    if (!p->grad) {
      throw std::logic_error("sgd_step: trainable parameter of shape " + shape_str(p->shape) +
                             " has no gradient");
    }
    if (p->grad->size() != p->data.size()) {
      throw std::invalid_argument("sgd_step: gradient size does not match parameter " +
                                  shape_str(p->shape));
    }
  }
  for (Tensor* p : params) {
    if (!p->requires_grad) continue;
    for (std::size_t i = 0; i < p->data.size(); ++i) p->data[i] -= cfg.learning_rate * (*p->grad)[i];
    p->grad.reset();
  }
}

double finite_diff_check(const std::function<Var(Tape&)>& build, std::span<Tensor* const> params,
                         double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("finite_diff_check: eps must be positive");
  for (Tensor* p : params) p->grad.reset();
  {
    Tape tape;
    Var loss = build(tape);
    tape.backward(loss);
  }
  auto evaluate = [&] {
    Tape tape;
    return build(tape).value().item();
  };
  double worst = 0.0;
  for (Tensor* p : params) {
    std::vector<double> analytic = p->grad ? *p->grad : std::vector<double>(p->size(), 0.0);
    for (std::size_t i = 0; i < p->data.size(); ++i) {
      const double orig = p->data[i];
      p->data[i] = orig + eps;
      const double up = evaluate();
      p->data[i] = orig - eps;
      const double down = evaluate();
      p->data[i] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
      worst = std::max(worst, err);
    }
    p->grad.reset();
  }
  return worst;
}

double finite_diff_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x, double eps) {
  Tensor param = x;
  param.requires_grad = true;
  Tensor* params[] = {&param};
  return finite_diff_check([&](Tape& t) { return f(t, t.leaf(param)); }, params, eps);
}

}  // namespace bison
