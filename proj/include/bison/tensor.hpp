#pragma once

// Dense float64 tensors with a recording tape for reverse-mode differentiation.
//
// A Tape owns every intermediate value of one computation. Parameters live
// outside the tape as plain Tensors and are bound with Tape::leaf(); after
// Tape::backward() their gradients are accumulated into Tensor::grad.

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace bison {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_size(const Shape& shape);

struct Tensor {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::optional<std::vector<double>> grad;

  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  static Tensor vector(std::vector<double> data);

  std::size_t size() const { return data.size(); }
  std::size_t ndim() const { return shape.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  // Value of a one-element tensor.
  double item() const;

  void zero_grad() { grad.reset(); }
};

class Tape;

// Handle to a node recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape; }
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

struct BackwardArgs {
  std::span<const Tensor* const> inputs;
  const Tensor& output;
  std::span<const double> grad_out;
  // One accumulator per input; null when that input does not require grad.
  std::span<std::vector<double>* const> grad_in;
};

using BackwardFn = std::function<void(const BackwardArgs&)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Binds an externally owned parameter. The parameter must outlive backward().
  Var leaf(Tensor& param);
  Var constant(Tensor value);

  Var record(Tensor value, std::span<const Var> inputs, BackwardFn backward);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Reverse sweep from a scalar loss. Every bound leaf with requires_grad
  // receives a gradient (zeros when unreachable), added to any existing one.
  void backward(Var loss);

  // Gradient of an arbitrary node from the most recent backward(); empty if
  // the node was not reached.
  std::span<const double> grad(Var v) const;

  std::vector<Tensor*> parameters() const;

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    bool requires_grad = false;
    BackwardFn backward;
    Tensor* bound = nullptr;
  };

  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
};

// ---------------------------------------------------------------------------
// Operations. Broadcasting is limited to scalar-vs-tensor and a row vector
// of shape {n} against a matrix of shape {m, n}.

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double k);
Var shift(Var a, double k);
Var neg(Var a);

Var matmul(Var a, Var b);
Var transpose(Var a);

Var relu(Var a);
Var sigmoid(Var a);
Var exp(Var a);
Var log(Var a);

Var sum(Var a);
// Reduction of a matrix along an axis: axis 0 gives {cols}, axis 1 gives {rows}.
Var sum(Var a, std::size_t axis);
Var mean(Var a);

Var concat(std::span<const Var> parts, std::size_t axis);

inline constexpr double kNormFloor = 1e-12;

Var row_norm(Var a);
Var normalize_rows(Var a);
// Row i of a against row i of b, giving {rows}.
Var cosine_similarity(Var a, Var b);
// Every row of a against every row of b, giving {rows(a), rows(b)}.
Var cosine_matrix(Var a, Var b);

// Row-wise log-softmax. Columns with column_mask[j] == false are excluded
// from the normaliser; their output is -inf and they receive no gradient.
Var log_softmax(Var a, const std::vector<bool>& column_mask = {});
Var softmax(Var a);

// out[i] = a[i, index[i]]
Var pick(Var a, std::span<const std::size_t> index);
Var select_rows(Var a, std::span<const std::size_t> rows);

// Column-wise out[j] = log(1 + sum_i mask[i, j] * exp(a[i, j])), computed
// stably. mask has the same shape as a.
Var log_one_plus_sum_exp(Var a, const Tensor& mask);

Var stop_gradient(Var a);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(double k, Var a) { return scale(a, k); }

// ---------------------------------------------------------------------------

struct SgdConfig {
  double learning_rate = 0.1;

  void validate() const;
};

// p <- p - lr * g for every parameter, then clears the gradients.
void sgd_step(std::span<Tensor* const> params, const SgdConfig& cfg);

// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
double finite_diff_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x,
                         double eps = 1e-5);

// Same check over several parameters. build() must bind each parameter with
// Tape::leaf and return a scalar.
double finite_diff_check(const std::function<Var(Tape&)>& build,
                         std::span<Tensor* const> params, double eps = 1e-5);

}  // namespace bison
