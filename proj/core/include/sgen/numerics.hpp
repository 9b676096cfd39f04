#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace sgen {

// Dense row-major matrix of doubles.
class Tensor2 {
 public:
  Tensor2() = default;
  Tensor2(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Tensor2(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Tensor2 identity(std::size_t n);
  static Tensor2 row(std::span<const double> values);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const double& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  const double& operator[](std::size_t i) const { return data_[i]; }

  std::span<double> row_span(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row_span(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  void fill(double value);
  bool same_shape(const Tensor2& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  bool all_finite() const;

  friend bool operator==(const Tensor2&, const Tensor2&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// A named trainable tensor with its accumulated gradient.
struct Parameter {
  std::string name;
  Tensor2 value;
  Tensor2 grad;
};

// Owns parameters with stable addresses, in registration order.
class ParameterStore {
 public:
  Parameter& add(const std::string& name, Tensor2 value);
  /// Xavier-uniform weight matrix.
  Parameter& add_xavier(const std::string& name, std::size_t fan_in, std::size_t fan_out,
                        std::mt19937_64& rng);
  Parameter& add_zeros(const std::string& name, std::size_t rows, std::size_t cols);

  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;

  std::size_t size() const { return params_.size(); }
  std::size_t coordinate_count() const;
  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }

  void zero_grad();
  /// Copies values (not gradients) from a store with identical layout.
  void copy_values_from(const ParameterStore& other);

  ParameterStore() = default;
  ParameterStore(const ParameterStore& other);
  ParameterStore& operator=(const ParameterStore& other);
  ParameterStore(ParameterStore&&) noexcept = default;
  ParameterStore& operator=(ParameterStore&&) noexcept = default;

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

class Tape;

// Handle to a node recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Tensor2& value() const;
  const Tensor2& grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

// Records forward values and replays gradient closures in reverse order.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  Var constant(Tensor2 value);
  Var param(Parameter& p);
  /// Records a node computed by an op; `backward` reads grad(self) and
  /// accumulates into its inputs via accumulate().
  Var record(Tensor2 value, BackwardFn backward);

  /// Seeds d(loss)/d(loss) = 1 and visits every node once in reverse order.
  /// Parameter leaves add their gradient into Parameter::grad.
  void backward(Var loss);

  const Tensor2& value(int id) const { return nodes_[id].value; }
  const Tensor2& grad(int id) const { return nodes_[id].grad; }
  Tensor2& grad_mut(int id);
  void accumulate(int id, const Tensor2& g);
  bool has_grad(int id) const { return !nodes_[id].grad.empty(); }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor2 value;
    Tensor2 grad;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };
  std::deque<Node> nodes_;  // stable references across push_back
};

// Differentiable primitives. Shape mismatches throw Error(kShapeMismatch).
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var add_bias(Var x, Var bias);  // bias is 1 x cols
Var relu(Var x);
Var gelu(Var x);                // tanh approximation
Var exp(Var x);
Var scale(Var x, double factor);
Var add_scalar(Var x, double value);
Var scale_by(Var x, Var scalar);  // scalar is 1 x 1
Var layer_norm(Var x, double eps = 1e-5);
/// RMS-normalizes each contiguous column group of width group_size, times gain.
Var group_rms_norm(Var x, std::size_t group_size, double gain, double eps = 1e-5);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var softmax_rows(Var x);
Var gather_rows(Var x, std::span<const int> index);
Var sum_all(Var x);
Var mean_all(Var x);
Var dot(Var a, Var b);  // same shape -> 1 x 1
/// Mean over rows of -log softmax(logits)[r, target[r]].
Var cross_entropy(Var logits, std::span<const int> targets);
/// Mean of (x - target)^2 with a constant target of the same shape.
Var mse(Var x, const Tensor2& target);
/// Mean of |tau - 1(u > 0)| * u^2 over all entries of u.
Var expectile_mean(Var u, double tau);

/// Sparse multi-head attention over variable key sets.
/// queries: Nq x (heads*dk); keys: P x (heads*dk); values: P x (heads*dv), one row
/// per (query, key) pair. Pairs must be grouped by query: segment_start has Nq+1
/// offsets into the pair rows. Output Nq x (heads*dv); a query with an empty segment
/// yields zeros. Scores are scaled by 1/sqrt(dk).
Var segment_attention(Var queries, Var keys, Var values,
                      std::span<const int> segment_start, std::size_t heads);

struct GradCheckOptions {
  double step = 1e-5;
  std::size_t full_check_limit = 10000;  // per parameter tensor
  double sample_fraction = 0.01;
  std::size_t min_samples = 50;
  std::uint64_t seed = 7;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  std::size_t coordinates_checked = 0;
};

/// Compares tape gradients of `loss` against central finite differences.
/// `loss` must build a fresh graph on the given tape and return a 1 x 1 Var.
GradCheckReport grad_check(const std::function<Var(Tape&)>& loss, ParameterStore& params,
                           const GradCheckOptions& options = {});

/// Relative error used by grad_check; magnitudes below `floor` compare absolutely.
double relative_error(double analytic, double numeric, double floor = 1e-6);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double grad_clip = 0.0;  // global-norm clip, 0 disables
};

struct OptimizerState {
  AdamConfig config;
  std::int64_t step = 0;
  std::vector<Tensor2> first_moment;
  std::vector<Tensor2> second_moment;
};

OptimizerState make_optimizer_state(const ParameterStore& params, AdamConfig config);
/// Applies one bias-corrected Adam update from the gradients held in `params`.
void adam_step(ParameterStore& params, OptimizerState& state);

}  // namespace sgen
