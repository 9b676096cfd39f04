#include "sgen/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "sgen/error.hpp"

namespace sgen {

namespace {

[[noreturn]] void shape_error(const std::string& op, const Tensor2& a, const Tensor2& b) {
  throw Error(ErrorKind::kShapeMismatch,
              op + ": " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                  " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
}

bool needs(const Tape& tape, Var v) { return tape.requires_grad(v.id); }

Tape& tape_of(Var a) {
  if (a.tape == nullptr) throw Error(ErrorKind::kShapeMismatch, "unbound Var");
  return *a.tape;
}

void check_same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw Error(ErrorKind::kShapeMismatch, "Vars from different tapes");
}

}  // namespace

// ---------------------------------------------------------------- Tensor2

Tensor2::Tensor2(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw Error(ErrorKind::kShapeMismatch,
                "Tensor2 data length " + std::to_string(data_.size()) + " != " +
                    std::to_string(rows_) + "x" + std::to_string(cols_));
  }
}

Tensor2 Tensor2::identity(std::size_t n) {
  Tensor2 t(n, n);
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

Tensor2 Tensor2::row(std::span<const double> values) {
  return Tensor2(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

void Tensor2::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor2::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double d) { return std::isfinite(d); });
}

// ---------------------------------------------------------------- ParameterStore

Parameter& ParameterStore::add(const std::string& name, Tensor2 value) {
  if (find(name) != nullptr) {
    throw Error(ErrorKind::kConfiguration, "duplicate parameter name " + name);
  }
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->grad = Tensor2(value.rows(), value.cols());
  p->value = std::move(value);
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter& ParameterStore::add_xavier(const std::string& name, std::size_t fan_in,
                                      std::size_t fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor2 w(fan_in, fan_out);
  for (double& x : w.data()) x = dist(rng);
  return add(name, std::move(w));
}

Parameter& ParameterStore::add_zeros(const std::string& name, std::size_t rows,
                                     std::size_t cols) {
  return add(name, Tensor2(rows, cols));
}

Parameter* ParameterStore::find(const std::string& name) {
  for (auto& p : params_) {
    if (p->name == name) return p.get();
  }
  return nullptr;
}

const Parameter* ParameterStore::find(const std::string& name) const {
  for (const auto& p : params_) {
    if (p->name == name) return p.get();
  }
  return nullptr;
}

Parameter& ParameterStore::at(const std::string& name) {
  Parameter* p = find(name);
  if (p == nullptr) throw Error(ErrorKind::kConfiguration, "unknown parameter " + name);
  return *p;
}

const Parameter& ParameterStore::at(const std::string& name) const {
  const Parameter* p = find(name);
  if (p == nullptr) throw Error(ErrorKind::kConfiguration, "unknown parameter " + name);
  return *p;
}

std::size_t ParameterStore::coordinate_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) {
    if (!p->grad.same_shape(p->value)) p->grad = Tensor2(p->value.rows(), p->value.cols());
    p->grad.fill(0.0);
  }
}

void ParameterStore::copy_values_from(const ParameterStore& other) {
  if (other.size() != size()) {
    throw Error(ErrorKind::kShapeMismatch, "parameter store layouts differ");
  }
  for (std::size_t i = 0; i < size(); ++i) {
    if (!params_[i]->value.same_shape(other[i].value) || params_[i]->name != other[i].name) {
      throw Error(ErrorKind::kShapeMismatch, "parameter mismatch at " + other[i].name);
    }
    params_[i]->value = other[i].value;
  }
}

ParameterStore::ParameterStore(const ParameterStore& other) {
  for (const auto& p : other.params_) params_.push_back(std::make_unique<Parameter>(*p));
}

ParameterStore& ParameterStore::operator=(const ParameterStore& other) {
  if (this != &other) {
    params_.clear();
    for (const auto& p : other.params_) params_.push_back(std::make_unique<Parameter>(*p));
  }
  return *this;
}

// ---------------------------------------------------------------- Tape

const Tensor2& Var::value() const { return tape->value(id); }
const Tensor2& Var::grad() const { return tape->grad(id); }

Var Tape::constant(Tensor2 value) {
  nodes_.push_back(Node{std::move(value), {}, nullptr, nullptr, false});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::param(Parameter& p) {
  nodes_.push_back(Node{p.value, {}, nullptr, &p, true});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::record(Tensor2 value, BackwardFn backward) {
  nodes_.push_back(Node{std::move(value), {}, std::move(backward), nullptr, true});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Tensor2& Tape::grad_mut(int id) {
  Node& n = nodes_[id];
  if (n.grad.empty() && !n.value.empty()) n.grad = Tensor2(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::accumulate(int id, const Tensor2& g) {
  if (!nodes_[id].requires_grad) return;
  Tensor2& dst = grad_mut(id);
  if (!dst.same_shape(g)) shape_error("accumulate", dst, g);
  auto& d = dst.data();
  const auto& s = g.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw Error(ErrorKind::kShapeMismatch, "loss from another tape");
  const Tensor2& lv = nodes_[loss.id].value;
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw Error(ErrorKind::kShapeMismatch, "backward needs a 1x1 loss");
  }
  grad_mut(loss.id)(0, 0) += 1.0;
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.grad.empty()) continue;
    if (n.param != nullptr) {
      Tensor2& pg = n.param->grad;
      if (!pg.same_shape(n.value)) pg = Tensor2(n.value.rows(), n.value.cols());
      for (std::size_t k = 0; k < pg.size(); ++k) pg[k] += n.grad[k];
    } else if (n.backward) {
      // Closures only touch earlier nodes; nodes_ never grows during backward.
      n.backward(*this, i);
    }
  }
}

// ---------------------------------------------------------------- primitives

namespace {

// Column-blocked kernels keep a slice of B resident in cache across rows of A.
constexpr std::size_t kColumnBlock = 256;

// C += A * B
void gemm_nn(const Tensor2& A, const Tensor2& B, Tensor2& C) {
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  for (std::size_t j0 = 0; j0 < n; j0 += kColumnBlock) {
    const std::size_t j1 = std::min(n, j0 + kColumnBlock);
    for (std::size_t i = 0; i < m; ++i) {
      double* c = &C(i, 0);
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = A(i, p);
        if (aip == 0.0) continue;
        const double* brow = &B(p, 0);
        for (std::size_t j = j0; j < j1; ++j) c[j] += aip * brow[j];
      }
    }
  }
}

// dA += G * B^T
void gemm_nt(const Tensor2& G, const Tensor2& B, Tensor2& dA) {
  const std::size_t m = G.rows(), k = B.rows(), n = G.cols();
  for (std::size_t j0 = 0; j0 < n; j0 += kColumnBlock) {
    const std::size_t j1 = std::min(n, j0 + kColumnBlock);
    for (std::size_t i = 0; i < m; ++i) {
      const double* g = &G(i, 0);
      for (std::size_t p = 0; p < k; ++p) {
        const double* brow = &B(p, 0);
        double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
        std::size_t j = j0;
        for (; j + 4 <= j1; j += 4) {
          s0 += g[j] * brow[j];
          s1 += g[j + 1] * brow[j + 1];
          s2 += g[j + 2] * brow[j + 2];
          s3 += g[j + 3] * brow[j + 3];
        }
        for (; j < j1; ++j) s0 += g[j] * brow[j];
        dA(i, p) += (s0 + s1) + (s2 + s3);
      }
    }
  }
}

// dB += A^T * G
void gemm_tn(const Tensor2& A, const Tensor2& G, Tensor2& dB) {
  const std::size_t m = A.rows(), k = A.cols(), n = G.cols();
  for (std::size_t j0 = 0; j0 < n; j0 += kColumnBlock) {
    const std::size_t j1 = std::min(n, j0 + kColumnBlock);
    for (std::size_t i = 0; i < m; ++i) {
      const double* g = &G(i, 0);
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = A(i, p);
        if (aip == 0.0) continue;
        double* d = &dB(p, 0);
        for (std::size_t j = j0; j < j1; ++j) d[j] += aip * g[j];
      }
    }
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  check_same_tape(a, b);
  Tape& t = tape_of(a);
  const Tensor2& A = a.value();
  const Tensor2& B = b.value();
  if (A.cols() != B.rows()) shape_error("matmul", A, B);
  Tensor2 C(A.rows(), B.cols());
  gemm_nn(A, B, C);
  if (!needs(t, a) && !needs(t, b)) return t.constant(std::move(C));
  const int ia = a.id, ib = b.id;
  return t.record(std::move(C), [ia, ib](Tape& tp, int self) {
    const Tensor2& G = tp.grad(self);
    if (tp.requires_grad(ia)) gemm_nt(G, tp.value(ib), tp.grad_mut(ia));
    if (tp.requires_grad(ib)) gemm_tn(tp.value(ia), G, tp.grad_mut(ib));
  });
}

namespace {

Var elementwise_binary(Var a, Var b, double sign_b, const char* name) {
  check_same_tape(a, b);
  Tape& t = tape_of(a);
  const Tensor2& A = a.value();
  const Tensor2& B = b.value();
  if (!A.same_shape(B)) shape_error(name, A, B);
  Tensor2 C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C[i] += sign_b * B[i];
  if (!needs(t, a) && !needs(t, b)) return t.constant(std::move(C));
  const int ia = a.id, ib = b.id;
  return t.record(std::move(C), [ia, ib, sign_b](Tape& tp, int self) {
    const Tensor2& G = tp.grad(self);
    tp.accumulate(ia, G);
    if (tp.requires_grad(ib)) {
      Tensor2& dB = tp.grad_mut(ib);
      for (std::size_t i = 0; i < G.size(); ++i) dB[i] += sign_b * G[i];
    }
  });
}

template <typename Fwd, typename Deriv>
Var elementwise_unary(Var x, Fwd fwd, Deriv deriv) {
  Tape& t = tape_of(x);
  const Tensor2& X = x.value();
  Tensor2 Y(X.rows(), X.cols());
  for (std::size_t i = 0; i < X.size(); ++i) Y[i] = fwd(X[i]);
  if (!needs(t, x)) return t.constant(std::move(Y));
  const int ix = x.id;
  return t.record(std::move(Y), [ix, deriv](Tape& tp, int self) {
    const Tensor2& G = tp.grad(self);
    const Tensor2& X = tp.value(ix);
    const Tensor2& Y = tp.value(self);
    Tensor2& dX = tp.grad_mut(ix);
    for (std::size_t i = 0; i < G.size(); ++i) dX[i] += G[i] * deriv(X[i], Y[i]);
  });
}

}  // namespace

Var add(Var a, Var b) { return elementwise_binary(a, b, 1.0, "add"); }
Var sub(Var a, Var b) { return elementwise_binary(a, b, -1.0, "sub"); }

Var add_bias(Var x, Var bias) {
  check_same_tape(x, bias);
  Tape& t = tape_of(x);
  const Tensor2& X = x.value();
  const Tensor2& B = bias.value();
  if (B.rows() != 1 || B.cols() != X.cols()) shape_error("add_bias", X, B);
  Tensor2 Y = X;
  for (std::size_t r = 0; r < Y.rows(); ++r) {
    for (std::size_t c = 0; c < Y.cols(); ++c) Y(r, c) += B(0, c);
  }
  if (!needs(t, x) && !needs(t, bias)) return t.constant(std::move(Y));
  const int ix = x.id, ib = bias.id;
  return t.record(std::move(Y), [ix, ib](Tape& tp, int self) {
    const Tensor2& G = tp.grad(self);
    tp.accumulate(ix, G);
    if (tp.requires_grad(ib)) {
      Tensor2& dB = tp.grad_mut(ib);
      for (std::size_t r = 0; r < G.rows(); ++r) {
        for (std::size_t c = 0; c < G.cols(); ++c) dB(0, c) += G(r, c);
      }
    }
  });
}

Var relu(Var x) {
  return elementwise_unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var gelu(Var x) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double c = 0.044715;
  return elementwise_unary(
      x,
      [](double v) { return 0.5 * v * (1.0 + std::tanh(k * (v + c * v * v * v))); },
      [](double v, double) {
        const double th = std::tanh(k * (v + c * v * v * v));
        return 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * k * (1.0 + 3.0 * c * v * v);
      });
}

Var exp(Var x) {
  return elementwise_unary(
      x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var scale(Var x, double factor) {
  return elementwise_unary(
      x, [factor](double v) { return factor * v; }, [factor](double, double) { return factor; });
}

Var add_scalar(Var x, double value) {
  return elementwise_unary(
      x, [value](double v) { return v + value; }, [](double, double) { return 1.0; });
}

Var scale_by(Var x, Var scalar) {
  check_same_tape(x, scalar);
  Tape& t = tape_of(x);
  const Tensor2& S = scalar.value();
  if (S.rows() != 1 || S.cols() != 1) shape_error("scale_by", x.value(), S);
  const double s = S(0, 0);
  Tensor2 Y = x.value();
  for (double& v : Y.data()) v *= s;
  if (!needs(t, x) && !needs(t, scalar)) return t.constant(std::move(Y));
  const int ix = x.id, is = scalar.id;
  return t.record(std::move(Y), [ix, is](Tape& tp, int self) {
    const Tensor2& G = tp.grad(self);
    const Tensor2& X = tp.value(ix);
    const double s = tp.value(is)(0, 0);
    if (tp.requires_grad(ix)) {
      Tensor2& dX = tp.grad_mut(ix);
      for (std::size_t i = 0; i < G.size(); ++i) dX[i] += s * G[i];
    }
    if (tp.requires_grad(is)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < G.size(); ++i) acc += X[i] * G[i];
      tp.grad_mut(is)(0, 0) += acc;
    }
  });
}

Var layer_norm(Var x, double eps) {
  Tape& t = tape_of(x);
  const Tensor2& X = x.value();
  const std::size_t n = X.rows(), c = X.cols();
  Tensor2 Y(n, c);
  std::vector<double> inv_std(n);
  for (std::size_t r = 0; r < n; ++r) {
    double mean = 0.0;
    for (std::size_t j = 0; j < c; ++j) mean += X(r, j);
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (X(r, j) - mean) * (X(r, j) - mean);
    var /= static_cast<double>(c);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) Y(r, j) = (X(r, j) - mean) * inv_std[r];
  }
  if (!needs(t, x)) return t.constant(std::move(Y));
  const int ix = x.id;
  return t.record(std::move(Y), [ix, inv_std = std::move(inv_std)](Tape& tp, int self) {
    const Tensor2& G = tp.grad(self);
    const Tensor2& Y = tp.value(self);
    Tensor2& dX = tp.grad_mut(ix);
    const std::size_t c = G.cols();
    for (std::size_t r = 0; r < G.rows(); ++r) {
      double mg = 0.0, mgy = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        mg += G(r, j);
        mgy += G(r, j) * Y(r, j);
      }
      mg /= static_cast<double>(c);
      mgy /= static_cast<double>(c);
      for (std::size_t j = 0; j < c; ++j) {
        dX(r, j) += inv_std[r] * (G(r, j) - mg - Y(r, j) * mgy);
      }
    }
  });
}

Var group_rms_norm(Var x, std::size_t group_size, double gain, double eps) {
  Tape& t = tape_of(x);
  const Tensor2& X = x.value();
  if (group_size == 0 || X.cols() % group_size != 0) {
    throw Error(ErrorKind::kShapeMismatch, "group_rms_norm: cols not divisible by group");
  }
  const std::size_t groups = X.cols() / group_size;
  Tensor2 Y(X.rows(), X.cols());
  std::vector<double> inv_rms(X.rows() * groups);
  for (std::size_t r = 0; r < X.rows(); ++r) {
    for (std::size_t g = 0; g < groups; ++g) {
      double ms = 0.0;
      for (std::size_t j = 0; j < group_size; ++j) {
        const double v = X(r, g * group_size + j);
        ms += v * v;
      }
      ms /= static_cast<double>(group_size);
      const double inv = 1.0 / std::sqrt(ms + eps);
      inv_rms[r * groups + g] = inv;
      for (std::size_t j = 0; j < group_size; ++j) {
        Y(r, g * group_size + j) = gain * X(r, g * group_size + j) * inv;
      }
    }
  }
  if (!needs(t, x)) return t.constant(std::move(Y));
  const int ix = x.id;
  return t.record(std::move(Y), [ix, group_size, groups, gain,
                                 inv_rms = std::move(inv_rms)](Tape& tp, int self) {
    const Tensor2& G = tp.grad(self);
    const Tensor2& X = tp.value(ix);
    Tensor2& dX = tp.grad_mut(ix);
    for (std::size_t r = 0; r < G.rows(); ++r) {
      for (std::size_t g = 0; g < groups; ++g) {
        const double inv = inv_rms[r * groups + g];
        double gx = 0.0;
        for (std::size_t j = 0; j < group_size; ++j) {
          const std::size_t c = g * group_size + j;
          gx += G(r, c) * X(r, c);
        }
        const double k = gain * inv * inv * inv * gx / static_cast<double>(group_size);
        for (std::size_t j = 0; j < group_size; ++j) {
          const std::size_t c = g * group_size + j;
          dX(r, c) += gain * inv * G(r, c) - k * X(r, c);
        }
      }
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw Error(ErrorKind::kShapeMismatch, "concat_cols: no inputs");
  Tape& t = tape_of(parts[0]);
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  bool any_grad = false;
  for (const Var& p : parts) {
    check_same_tape(parts[0], p);
    if (p.rows() != rows) shape_error("concat_cols", parts[0].value(), p.value());
    cols += p.cols();
    any_grad = any_grad || needs(t, p);
  }
  Tensor2 Y(rows, cols);
  std::vector<int> ids;
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor2& P = p.value();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy(P.row_span(r).begin(), P.row_span(r).end(), &Y(r, off));
    }
    ids.push_back(p.id);
    offsets.push_back(off);
    off += P.cols();
  }
  if (!any_grad) return t.constant(std::move(Y));
  return t.record(std::move(Y), [ids = std::move(ids), offsets = std::move(offsets)](
                                    Tape& tp, int self) {
    const Tensor2& G = tp.grad(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!tp.requires_grad(ids[k])) continue;
      Tensor2& dP = tp.grad_mut(ids[k]);
      for (std::size_t r = 0; r < dP.rows(); ++r) {
        for (std::size_t j = 0; j < dP.cols(); ++j) dP(r, j) += G(r, offsets[k] + j);
      }
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw Error(ErrorKind::kShapeMismatch, "concat_rows: no inputs");
  Tape& t = tape_of(parts[0]);
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  bool any_grad = false;
  for (const Var& p : parts) {
    check_same_tape(parts[0], p);
    if (p.cols() != cols) shape_error("concat_rows", parts[0].value(), p.value());
    rows += p.rows();
    any_grad = any_grad || needs(t, p);
  }
  Tensor2 Y(rows, cols);
  std::vector<int> ids;
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor2& P = p.value();
    std::copy(P.data().begin(), P.data().end(), Y.data().begin() + off * cols);
    ids.push_back(p.id);
    offsets.push_back(off);
    off += P.rows();
  }
  if (!any_grad) return t.constant(std::move(Y));
  return t.record(std::move(Y), [ids = std::move(ids), offsets = std::move(offsets)](
                                    Tape& tp, int self) {
    const Tensor2& G = tp.grad(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!tp.requires_grad(ids[k])) continue;
      Tensor2& dP = tp.grad_mut(ids[k]);
      const double* g = G.data().data() + offsets[k] * G.cols();
      for (std::size_t i = 0; i < dP.size(); ++i) dP[i] += g[i];
    }
  });
}

namespace {

void softmax_inplace(std::span<double> row) {
  if (row.empty()) return;
  const double mx = *std::max_element(row.begin(), row.end());
  double s = 0.0;
  for (double& v : row) {
    v = std::exp(v - mx);
    s += v;
  }
  for (double& v : row) v /= s;
}

}  // namespace

Var softmax_rows(Var x) {
  Tape& t = tape_of(x);
  Tensor2 Y = x.value();
  for (std::size_t r = 0; r < Y.rows(); ++r) softmax_inplace(Y.row_span(r));
  if (!needs(t, x)) return t.constant(std::move(Y));
  const int ix = x.id;
  return t.record(std::move(Y), [ix](Tape& tp, int self) {
    const Tensor2& G = tp.grad(self);
    const Tensor2& Y = tp.value(self);
    Tensor2& dX = tp.grad_mut(ix);
    for (std::size_t r = 0; r < G.rows(); ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < G.cols(); ++j) s += G(r, j) * Y(r, j);
      for (std::size_t j = 0; j < G.cols(); ++j) dX(r, j) += Y(r, j) * (G(r, j) - s);
    }
  });
}

Var gather_rows(Var x, std::span<const int> index) {
  Tape& t = tape_of(x);
  const Tensor2& X = x.value();
  Tensor2 Y(index.size(), X.cols());
  for (std::size_t r = 0; r < index.size(); ++r) {
    const int src = index[r];
    if (src < 0 || static_cast<std::size_t>(src) >= X.rows()) {
      throw Error(ErrorKind::kShapeMismatch, "gather_rows: index out of range");
    }
    std::copy(X.row_span(src).begin(), X.row_span(src).end(), &Y(r, 0));
  }
  if (!needs(t, x)) return t.constant(std::move(Y));
  const int ix = x.id;
  return t.record(std::move(Y), [ix, idx = std::vector<int>(index.begin(), index.end())](
                                    Tape& tp, int self) {
    const Tensor2& G = tp.grad(self);
    Tensor2& dX = tp.grad_mut(ix);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      for (std::size_t j = 0; j < G.cols(); ++j) dX(idx[r], j) += G(r, j);
    }
  });
}

Var sum_all(Var x) {
  Tape& t = tape_of(x);
  const Tensor2& X = x.value();
  Tensor2 Y(1, 1, std::accumulate(X.data().begin(), X.data().end(), 0.0));
  if (!needs(t, x)) return t.constant(std::move(Y));
  const int ix = x.id;
  return t.record(std::move(Y), [ix](Tape& tp, int self) {
    const double g = tp.grad(self)(0, 0);
    Tensor2& dX = tp.grad_mut(ix);
    for (double& v : dX.data()) v += g;
  });
}

Var mean_all(Var x) {
  const double n = static_cast<double>(std::max<std::size_t>(1, x.value().size()));
  return scale(sum_all(x), 1.0 / n);
}

Var dot(Var a, Var b) {
  check_same_tape(a, b);
  Tape& t = tape_of(a);
  const Tensor2& A = a.value();
  const Tensor2& B = b.value();
  if (!A.same_shape(B)) shape_error("dot", A, B);
  double s = 0.0;
  for (std::size_t i = 0; i < A.size(); ++i) s += A[i] * B[i];
  if (!needs(t, a) && !needs(t, b)) return t.constant(Tensor2(1, 1, s));
  const int ia = a.id, ib = b.id;
  return t.record(Tensor2(1, 1, s), [ia, ib](Tape& tp, int self) {
    const double g = tp.grad(self)(0, 0);
    const Tensor2& A = tp.value(ia);
    const Tensor2& B = tp.value(ib);
    if (tp.requires_grad(ia)) {
      Tensor2& dA = tp.grad_mut(ia);
      for (std::size_t i = 0; i < A.size(); ++i) dA[i] += g * B[i];
    }
    if (tp.requires_grad(ib)) {
      Tensor2& dB = tp.grad_mut(ib);
      for (std::size_t i = 0; i < B.size(); ++i) dB[i] += g * A[i];
    }
  });
}

Var cross_entropy(Var logits, std::span<const int> targets) {
  Tape& t = tape_of(logits);
  const Tensor2& L = logits.value();
  if (targets.size() != L.rows()) {
    throw Error(ErrorKind::kShapeMismatch, "cross_entropy: one target per row required");
  }
  Tensor2 P = L;
  double loss = 0.0;
  for (std::size_t r = 0; r < P.rows(); ++r) {
    const int y = targets[r];
    if (y < 0 || static_cast<std::size_t>(y) >= P.cols()) {
      throw Error(ErrorKind::kShapeMismatch, "cross_entropy: target out of range");
    }
    auto row = P.row_span(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (double v : row) s += std::exp(v - mx);
    loss += mx + std::log(s) - row[y];
    softmax_inplace(row);
  }
  const double n = static_cast<double>(std::max<std::size_t>(1, P.rows()));
  loss /= n;
  if (!needs(t, logits)) return t.constant(Tensor2(1, 1, loss));
  const int il = logits.id;
  return t.record(Tensor2(1, 1, loss),
                  [il, n, P = std::move(P),
                   y = std::vector<int>(targets.begin(), targets.end())](Tape& tp, int self) {
                    const double g = tp.grad(self)(0, 0) / n;
                    Tensor2& dL = tp.grad_mut(il);
                    for (std::size_t r = 0; r < P.rows(); ++r) {
                      for (std::size_t j = 0; j < P.cols(); ++j) dL(r, j) += g * P(r, j);
                      dL(r, y[r]) -= g;
                    }
                  });
}

Var mse(Var x, const Tensor2& target) {
  Tape& t = tape_of(x);
  const Tensor2& X = x.value();
  if (!X.same_shape(target)) shape_error("mse", X, target);
  double s = 0.0;
  for (std::size_t i = 0; i < X.size(); ++i) s += (X[i] - target[i]) * (X[i] - target[i]);
  const double n = static_cast<double>(std::max<std::size_t>(1, X.size()));
  if (!needs(t, x)) return t.constant(Tensor2(1, 1, s / n));
  const int ix = x.id;
  return t.record(Tensor2(1, 1, s / n), [ix, n, target](Tape& tp, int self) {
    const double g = tp.grad(self)(0, 0);
    const Tensor2& X = tp.value(ix);
    Tensor2& dX = tp.grad_mut(ix);
    for (std::size_t i = 0; i < X.size(); ++i) dX[i] += g * 2.0 * (X[i] - target[i]) / n;
  });
}

Var expectile_mean(Var u, double tau) {
  Tape& t = tape_of(u);
  const Tensor2& U = u.value();
  double s = 0.0;
  for (double v : U.data()) s += std::abs(tau - (v > 0.0 ? 1.0 : 0.0)) * v * v;
  const double n = static_cast<double>(std::max<std::size_t>(1, U.size()));
  if (!needs(t, u)) return t.constant(Tensor2(1, 1, s / n));
  const int iu = u.id;
  return t.record(Tensor2(1, 1, s / n), [iu, n, tau](Tape& tp, int self) {
    const double g = tp.grad(self)(0, 0);
    const Tensor2& U = tp.value(iu);
    Tensor2& dU = tp.grad_mut(iu);
    for (std::size_t i = 0; i < U.size(); ++i) {
      const double w = std::abs(tau - (U[i] > 0.0 ? 1.0 : 0.0));
      dU[i] += g * 2.0 * w * U[i] / n;
    }
  });
}

Var segment_attention(Var queries, Var keys, Var values, std::span<const int> segment_start,
                      std::size_t heads) {
  check_same_tape(queries, keys);
  check_same_tape(queries, values);
  Tape& t = tape_of(queries);
  const Tensor2& Q = queries.value();
  const Tensor2& K = keys.value();
  const Tensor2& V = values.value();
  const std::size_t nq = Q.rows();
  const std::size_t np = K.rows();
  if (heads == 0 || Q.cols() % heads != 0 || K.cols() != Q.cols() || V.rows() != np ||
      V.cols() % heads != 0 || segment_start.size() != nq + 1 ||
      static_cast<std::size_t>(segment_start[nq]) != np) {
    throw Error(ErrorKind::kShapeMismatch, "segment_attention: inconsistent shapes");
  }
  const std::size_t dk = Q.cols() / heads;
  const std::size_t dv = V.cols() / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));

  Tensor2 A(np, heads);  // attention weight of each pair, per head
  Tensor2 O(nq, heads * dv);
  for (std::size_t i = 0; i < nq; ++i) {
    const int p0 = segment_start[i], p1 = segment_start[i + 1];
    if (p1 <= p0) continue;
    for (std::size_t h = 0; h < heads; ++h) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int p = p0; p < p1; ++p) {
        double s = 0.0;
        for (std::size_t c = 0; c < dk; ++c) s += Q(i, h * dk + c) * K(p, h * dk + c);
        A(p, h) = s * inv_sqrt;
        mx = std::max(mx, A(p, h));
      }
      double z = 0.0;
      for (int p = p0; p < p1; ++p) {
        A(p, h) = std::exp(A(p, h) - mx);
        z += A(p, h);
      }
      for (int p = p0; p < p1; ++p) {
        A(p, h) /= z;
        for (std::size_t c = 0; c < dv; ++c) O(i, h * dv + c) += A(p, h) * V(p, h * dv + c);
      }
    }
  }
  if (!needs(t, queries) && !needs(t, keys) && !needs(t, values)) {
    return t.constant(std::move(O));
  }
  const int iq = queries.id, ik = keys.id, iv = values.id;
  std::vector<int> seg(segment_start.begin(), segment_start.end());
  return t.record(std::move(O), [iq, ik, iv, heads, dk, dv, inv_sqrt, A = std::move(A),
                                 seg = std::move(seg)](Tape& tp, int self) {
    const Tensor2& G = tp.grad(self);
    const Tensor2& Q = tp.value(iq);
    const Tensor2& K = tp.value(ik);
    const Tensor2& V = tp.value(iv);
    const bool gq = tp.requires_grad(iq), gk = tp.requires_grad(ik), gv = tp.requires_grad(iv);
    Tensor2* dQ = gq ? &tp.grad_mut(iq) : nullptr;
    Tensor2* dK = gk ? &tp.grad_mut(ik) : nullptr;
    Tensor2* dV = gv ? &tp.grad_mut(iv) : nullptr;
    std::vector<double> da;
    const std::size_t nq = seg.size() - 1;
    for (std::size_t i = 0; i < nq; ++i) {
      const int p0 = seg[i], p1 = seg[i + 1];
      if (p1 <= p0) continue;
      da.assign(static_cast<std::size_t>(p1 - p0), 0.0);
      for (std::size_t h = 0; h < heads; ++h) {
        double weighted = 0.0;
        for (int p = p0; p < p1; ++p) {
          double s = 0.0;
          for (std::size_t c = 0; c < dv; ++c) {
            s += G(i, h * dv + c) * V(p, h * dv + c);
            if (dV != nullptr) (*dV)(p, h * dv + c) += A(p, h) * G(i, h * dv + c);
          }
          da[p - p0] = s;
          weighted += A(p, h) * s;
        }
        for (int p = p0; p < p1; ++p) {
          const double ds = A(p, h) * (da[p - p0] - weighted) * inv_sqrt;
          if (ds == 0.0) continue;
          for (std::size_t c = 0; c < dk; ++c) {
            if (dQ != nullptr) (*dQ)(i, h * dk + c) += ds * K(p, h * dk + c);
            if (dK != nullptr) (*dK)(p, h * dk + c) += ds * Q(i, h * dk + c);
          }
        }
      }
    }
  });
}

// ---------------------------------------------------------------- verification

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport grad_check(const std::function<Var(Tape&)>& loss, ParameterStore& params,
                           const GradCheckOptions& options) {
  params.zero_grad();
  double loss_value = 0.0;
  {
    Tape tape;
    Var l = loss(tape);
    loss_value = l.value()(0, 0);
    tape.backward(l);
  }
  // Rounding in f(x +- h) scales with |f|, so the floor below which gradients are
  // compared absolutely does too.
  const double floor = 1e-6 * std::max(1.0, std::abs(loss_value));
  std::vector<Tensor2> analytic;
  for (std::size_t i = 0; i < params.size(); ++i) analytic.push_back(params[i].grad);

  auto eval = [&]() {
    Tape tape;
    return loss(tape).value()(0, 0);
  };

  std::mt19937_64 rng(options.seed);
  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = params[pi];
    std::vector<std::size_t> coords(p.value.size());
    std::iota(coords.begin(), coords.end(), 0);
    if (coords.size() > options.full_check_limit) {
      std::shuffle(coords.begin(), coords.end(), rng);
      const auto keep = std::max<std::size_t>(
          options.min_samples,
          static_cast<std::size_t>(options.sample_fraction * static_cast<double>(coords.size())));
      coords.resize(std::min(keep, coords.size()));
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t c : coords) {
      const double saved = p.value[c];
      p.value[c] = saved + options.step;
      const double fp = eval();
      p.value[c] = saved - options.step;
      const double fm = eval();
      p.value[c] = saved;
      const double numeric = (fp - fm) / (2.0 * options.step);
      const double err = relative_error(analytic[pi][c], numeric, floor);
      ++report.coordinates_checked;
      if (err >= report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_parameter = p.name;
        report.worst_index = c;
      }
    }
  }
  params.zero_grad();
  return report;
}

// ---------------------------------------------------------------- optimizer

OptimizerState make_optimizer_state(const ParameterStore& params, AdamConfig config) {
  OptimizerState s;
  s.config = config;
  for (std::size_t i = 0; i < params.size(); ++i) {
    s.first_moment.emplace_back(params[i].value.rows(), params[i].value.cols());
    s.second_moment.emplace_back(params[i].value.rows(), params[i].value.cols());
  }
  return s;
}

void adam_step(ParameterStore& params, OptimizerState& state) {
  if (state.first_moment.size() != params.size()) {
    throw Error(ErrorKind::kShapeMismatch, "optimizer state does not match parameters");
  }
  const AdamConfig& cfg = state.config;
  double clip_scale = 1.0;
  if (cfg.grad_clip > 0.0) {
    double norm2 = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      for (double g : params[i].grad.data()) norm2 += g * g;
    }
    const double norm = std::sqrt(norm2);
    if (norm > cfg.grad_clip) clip_scale = cfg.grad_clip / norm;
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params[i];
    Tensor2& m = state.first_moment[i];
    Tensor2& v = state.second_moment[i];
    if (!m.same_shape(p.value)) shape_error("adam_step", m, p.value);
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double g = p.grad[k] * clip_scale;
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g;
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g;
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      p.value[k] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon);
    }
  }
}

}  // namespace sgen
