#include "surfpool/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <sstream>

namespace surfpool::ad {

std::string Tensor::shape_str() const {
  std::ostringstream ss;
  ss << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) ss << (i ? "x" : "") << shape[i];
  ss << "]";
  return ss.str();
}

const Tensor& Value::tensor() const {
  if (!valid()) throw StateError("Value: empty handle");
  return tape->val(id);
}

const Tensor& Value::grad() const {
  if (!valid()) throw StateError("Value: empty handle");
  return tape->grad(id);
}

Value Tape::input(Tensor t, bool requires_grad) {
  Node node;
  node.value = std::move(t);
  node.requires_grad = requires_grad;
  node.is_leaf = true;
  nodes_.push_back(std::move(node));
  evaluated_ = true;
  return Value{this, static_cast<int>(nodes_.size()) - 1};
}

Value Tape::make_node(std::vector<std::size_t> shape, const std::vector<Value>& inputs,
                      std::function<void(Tape&, int)> fwd, std::function<void(Tape&, int)> bwd) {
  Node node;
  node.value = Tensor(std::move(shape));
  node.is_leaf = false;
  for (const auto& in : inputs) {
    if (!in.valid() || in.tape != this) throw StateError("make_node: input from another tape");
    node.requires_grad = node.requires_grad || nodes_[in.id].requires_grad;
  }
  node.fwd = std::move(fwd);
  node.bwd = std::move(bwd);
  nodes_.push_back(std::move(node));
  const int id = static_cast<int>(nodes_.size()) - 1;
  nodes_[id].fwd(*this, id);
  return Value{this, id};
}

const Tensor& Tape::grad(int id) const {
  const Node& n = nodes_[id];
  if (!n.requires_grad) throw StateError("Tape::grad: node does not require grad");
  if (n.grad.numel() != n.value.numel())
    throw StateError("Tape::grad: backward has not been run");
  return n.grad;
}

void Tape::backward(const Value& out) {
  if (!out.valid() || out.tape != this || out.id >= static_cast<int>(nodes_.size()) ||
      nodes_.empty() || !evaluated_)
    throw StateError("Tape::backward: called before forward evaluation");
  if (!nodes_[out.id].value.is_scalar())
    throw StateError("Tape::backward: output must be scalar, got " +
                     nodes_[out.id].value.shape_str());

  for (auto& n : nodes_) {
    if (n.requires_grad) {
      n.grad.shape = n.value.shape;
      n.grad.data.assign(n.value.numel(), 0.0);
    } else {
      n.grad = Tensor();
    }
  }
  if (!nodes_[out.id].requires_grad)
    throw StateError("Tape::backward: output does not depend on any requires_grad input");
  nodes_[out.id].grad.data[0] = 1.0;
  for (int id = out.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.is_leaf && n.requires_grad && n.bwd) n.bwd(*this, id);
  }
}

void Tape::replay() {
  for (int id = 0; id < static_cast<int>(nodes_.size()); ++id)
    if (!nodes_[id].is_leaf) nodes_[id].fwd(*this, id);
}

void Tape::reset() {
  nodes_.clear();
  evaluated_ = false;
}

// --- helpers ------------------------------------------------------------------

namespace {

void check_2d(const Tensor& t, const char* op) {
  if (t.shape.size() > 2)
    throw ShapeError(std::string(op) + ": expected a 1-D or 2-D tensor, got " + t.shape_str());
}

[[noreturn]] void shape_fail(const char* op, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + a.shape_str() + " vs " +
                   b.shape_str());
}

}  // namespace

// --- matmul family --------------------------------------------------------------

Value matmul(const Value& a, const Value& b) {
  Tape& t = *a.tape;
  const Tensor &ta = a.tensor(), &tb = b.tensor();
  check_2d(ta, "matmul");
  check_2d(tb, "matmul");
  if (ta.cols() != tb.rows()) shape_fail("matmul", ta, tb);
  const std::size_t n = ta.rows(), k = ta.cols(), m = tb.cols();
  auto fwd = [n, k, m, ia = a.id, ib = b.id](Tape& tp, int out) {
    const double* A = tp.val(ia).data.data();
    const double* B = tp.val(ib).data.data();
    double* C = tp.mutable_val(out).data.data();
    std::fill(C, C + n * m, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t kk = 0; kk < k; ++kk) {
        const double av = A[i * k + kk];
        const double* brow = B + kk * m;
        double* crow = C + i * m;
        for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
      }
  };
  auto bwd = [n, k, m, ia = a.id, ib = b.id](Tape& tp, int out) {
    const double* G = tp.grad_buf(out).data.data();
    if (tp.requires_grad(ia)) {
      double* GA = tp.grad_buf(ia).data.data();
      const double* B = tp.val(ib).data.data();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t kk = 0; kk < k; ++kk) {
          double s = 0.0;
          const double* grow = G + i * m;
          const double* brow = B + kk * m;
          for (std::size_t j = 0; j < m; ++j) s += grow[j] * brow[j];
          GA[i * k + kk] += s;
        }
    }
    if (tp.requires_grad(ib)) {
      double* GB = tp.grad_buf(ib).data.data();
      const double* A = tp.val(ia).data.data();
      for (std::size_t kk = 0; kk < k; ++kk)
        for (std::size_t i = 0; i < n; ++i) {
          const double av = A[i * k + kk];
          const double* grow = G + i * m;
          double* gbrow = GB + kk * m;
          for (std::size_t j = 0; j < m; ++j) gbrow[j] += av * grow[j];
        }
    }
  };
  return t.make_node({n, m}, {a, b}, fwd, bwd);
}

Value matmul_tn(const Value& a, const Value& b) {
  Tape& t = *a.tape;
  const Tensor &ta = a.tensor(), &tb = b.tensor();
  check_2d(ta, "matmul_tn");
  check_2d(tb, "matmul_tn");
  if (ta.rows() != tb.rows()) shape_fail("matmul_tn", ta, tb);
  const std::size_t k = ta.rows(), n = ta.cols(), m = tb.cols();
  auto fwd = [n, k, m, ia = a.id, ib = b.id](Tape& tp, int out) {
    const double* A = tp.val(ia).data.data();
    const double* B = tp.val(ib).data.data();
    double* C = tp.mutable_val(out).data.data();
    std::fill(C, C + n * m, 0.0);
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double* arow = A + kk * n;
      const double* brow = B + kk * m;
      for (std::size_t i = 0; i < n; ++i) {
        const double av = arow[i];
        double* crow = C + i * m;
        for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
      }
    }
  };
  auto bwd = [n, k, m, ia = a.id, ib = b.id](Tape& tp, int out) {
    const double* G = tp.grad_buf(out).data.data();
    if (tp.requires_grad(ia)) {
      // dA = B G^T laid out as (k,n)
      double* GA = tp.grad_buf(ia).data.data();
      const double* B = tp.val(ib).data.data();
      for (std::size_t kk = 0; kk < k; ++kk)
        for (std::size_t i = 0; i < n; ++i) {
          double s = 0.0;
          const double* brow = B + kk * m;
          const double* grow = G + i * m;
          for (std::size_t j = 0; j < m; ++j) s += brow[j] * grow[j];
          GA[kk * n + i] += s;
        }
    }
    if (tp.requires_grad(ib)) {
      // dB = A G laid out as (k,m)
      double* GB = tp.grad_buf(ib).data.data();
      const double* A = tp.val(ia).data.data();
      for (std::size_t kk = 0; kk < k; ++kk) {
        const double* arow = A + kk * n;
        double* gbrow = GB + kk * m;
        for (std::size_t i = 0; i < n; ++i) {
          const double av = arow[i];
          const double* grow = G + i * m;
          for (std::size_t j = 0; j < m; ++j) gbrow[j] += av * grow[j];
        }
      }
    }
  };
  return t.make_node({n, m}, {a, b}, fwd, bwd);
}

Value matmul_nt(const Value& a, const Value& b) {
  Tape& t = *a.tape;
  const Tensor &ta = a.tensor(), &tb = b.tensor();
  check_2d(ta, "matmul_nt");
  check_2d(tb, "matmul_nt");
  if (ta.cols() != tb.cols()) shape_fail("matmul_nt", ta, tb);
  const std::size_t n = ta.rows(), k = ta.cols(), m = tb.rows();
  auto fwd = [n, k, m, ia = a.id, ib = b.id](Tape& tp, int out) {
    const double* A = tp.val(ia).data.data();
    const double* B = tp.val(ib).data.data();
    double* C = tp.mutable_val(out).data.data();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        double s = 0.0;
        const double* arow = A + i * k;
        const double* brow = B + j * k;
        for (std::size_t kk = 0; kk < k; ++kk) s += arow[kk] * brow[kk];
        C[i * m + j] = s;
      }
  };
  auto bwd = [n, k, m, ia = a.id, ib = b.id](Tape& tp, int out) {
    const double* G = tp.grad_buf(out).data.data();
    if (tp.requires_grad(ia)) {
      double* GA = tp.grad_buf(ia).data.data();
      const double* B = tp.val(ib).data.data();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
          const double g = G[i * m + j];
          const double* brow = B + j * k;
          double* garow = GA + i * k;
          for (std::size_t kk = 0; kk < k; ++kk) garow[kk] += g * brow[kk];
        }
    }
    if (tp.requires_grad(ib)) {
      double* GB = tp.grad_buf(ib).data.data();
      const double* A = tp.val(ia).data.data();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
          const double g = G[i * m + j];
          const double* arow = A + i * k;
          double* gbrow = GB + j * k;
          for (std::size_t kk = 0; kk < k; ++kk) gbrow[kk] += g * arow[kk];
        }
    }
  };
  return t.make_node({n, m}, {a, b}, fwd, bwd);
}

// --- elementwise -----------------------------------------------------------------

namespace {

enum class EwKind { add, sub, mul };

Value elementwise(const Value& a, const Value& b, EwKind kind, const char* opname) {
  Tape& t = *a.tape;
  const Tensor &ta = a.tensor(), &tb = b.tensor();
  const bool broadcast = ta.shape != tb.shape;
  if (broadcast) {
    // Only a single row broadcast over a's leading dimension is supported.
    if (!(tb.rows() == 1 && tb.cols() == ta.cols() && ta.shape.size() <= 2))
      shape_fail(opname, ta, tb);
  }
  const std::size_t n = ta.rows(), m = ta.cols();
  auto fwd = [n, m, kind, broadcast, ia = a.id, ib = b.id](Tape& tp, int out) {
    const double* A = tp.val(ia).data.data();
    const double* B = tp.val(ib).data.data();
    double* C = tp.mutable_val(out).data.data();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        const double bv = broadcast ? B[j] : B[i * m + j];
        const double av = A[i * m + j];
        C[i * m + j] = kind == EwKind::add ? av + bv : (kind == EwKind::sub ? av - bv : av * bv);
      }
  };
  auto bwd = [n, m, kind, broadcast, ia = a.id, ib = b.id](Tape& tp, int out) {
    const double* G = tp.grad_buf(out).data.data();
    const double* A = tp.val(ia).data.data();
    const double* B = tp.val(ib).data.data();
    if (tp.requires_grad(ia)) {
      double* GA = tp.grad_buf(ia).data.data();
      for (std::size_t e = 0; e < n * m; ++e)
        GA[e] += kind == EwKind::mul ? G[e] * (broadcast ? B[e % m] : B[e]) : G[e];
    }
    if (tp.requires_grad(ib)) {
      double* GB = tp.grad_buf(ib).data.data();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
          const double g = G[i * m + j];
          double contrib;
          if (kind == EwKind::mul)
            contrib = g * A[i * m + j];
          else if (kind == EwKind::sub)
            contrib = -g;
          else
            contrib = g;
          GB[broadcast ? j : i * m + j] += contrib;
        }
    }
  };
  return t.make_node(ta.shape, {a, b}, fwd, bwd);
}

Value unary(const Value& a, std::function<double(double)> f, std::function<double(double, double)> df) {
  // df receives (x, fx) and returns d f / d x.
  Tape& t = *a.tape;
  const std::size_t count = a.tensor().numel();
  auto fwd = [count, f, ia = a.id](Tape& tp, int out) {
    const double* A = tp.val(ia).data.data();
    double* C = tp.mutable_val(out).data.data();
    for (std::size_t e = 0; e < count; ++e) C[e] = f(A[e]);
  };
  auto bwd = [count, df, ia = a.id](Tape& tp, int out) {
    if (!tp.requires_grad(ia)) return;
    const double* G = tp.grad_buf(out).data.data();
    const double* A = tp.val(ia).data.data();
    const double* C = tp.val(out).data.data();
    double* GA = tp.grad_buf(ia).data.data();
    for (std::size_t e = 0; e < count; ++e) GA[e] += G[e] * df(A[e], C[e]);
  };
  return t.make_node(a.tensor().shape, {a}, fwd, bwd);
}

}  // namespace

Value add(const Value& a, const Value& b) { return elementwise(a, b, EwKind::add, "add"); }
Value sub(const Value& a, const Value& b) { return elementwise(a, b, EwKind::sub, "sub"); }
Value mul(const Value& a, const Value& b) { return elementwise(a, b, EwKind::mul, "mul"); }

Value scalar_mul(const Value& a, double c) {
  return unary(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Value neg(const Value& a) {
  return unary(a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Value exp_(const Value& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double fx) { return fx; });
}

Value square(const Value& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Value leaky_relu(const Value& a, double slope) {
  return unary(
      a, [slope](double x) { return x >= 0.0 ? x : slope * x; },
      [slope](double x, double) { return x >= 0.0 ? 1.0 : slope; });
}

Value reduce_sum(const Value& a) {
  Tape& t = *a.tape;
  const std::size_t count = a.tensor().numel();
  auto fwd = [count, ia = a.id](Tape& tp, int out) {
    const double* A = tp.val(ia).data.data();
    double s = 0.0;  // fixed left-to-right order
    for (std::size_t e = 0; e < count; ++e) s += A[e];
    tp.mutable_val(out).data[0] = s;
  };
  auto bwd = [count, ia = a.id](Tape& tp, int out) {
    if (!tp.requires_grad(ia)) return;
    const double g = tp.grad_buf(out).data[0];
    double* GA = tp.grad_buf(ia).data.data();
    for (std::size_t e = 0; e < count; ++e) GA[e] += g;
  };
  return t.make_node({1, 1}, {a}, fwd, bwd);
}

Value mean_rows(const Value& a) {
  Tape& t = *a.tape;
  const Tensor& ta = a.tensor();
  check_2d(ta, "mean_rows");
  const std::size_t n = ta.rows(), m = ta.cols();
  if (n == 0) throw ShapeError("mean_rows: empty tensor");
  auto fwd = [n, m, ia = a.id](Tape& tp, int out) {
    const double* A = tp.val(ia).data.data();
    double* C = tp.mutable_val(out).data.data();
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += A[i * m + j];
      C[j] = s / static_cast<double>(n);
    }
  };
  auto bwd = [n, m, ia = a.id](Tape& tp, int out) {
    if (!tp.requires_grad(ia)) return;
    const double* G = tp.grad_buf(out).data.data();
    double* GA = tp.grad_buf(ia).data.data();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) GA[i * m + j] += G[j] / static_cast<double>(n);
  };
  return t.make_node({1, m}, {a}, fwd, bwd);
}

Value gather_rows(const Value& a, std::vector<int> index_list) {
  Tape& t = *a.tape;
  const Tensor& ta = a.tensor();
  check_2d(ta, "gather_rows");
  const std::size_t m = ta.cols();
  for (int idx : index_list)
    if (idx < 0 || idx >= static_cast<int>(ta.rows()))
      throw ArgumentError("gather_rows: index " + std::to_string(idx) + " out of range");
  const std::size_t n = index_list.size();
  auto idx_shared = std::make_shared<std::vector<int>>(std::move(index_list));
  auto fwd = [n, m, idx_shared, ia = a.id](Tape& tp, int out) {
    const double* A = tp.val(ia).data.data();
    double* C = tp.mutable_val(out).data.data();
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < m; ++j) C[r * m + j] = A[(*idx_shared)[r] * m + j];
  };
  auto bwd = [n, m, idx_shared, ia = a.id](Tape& tp, int out) {
    if (!tp.requires_grad(ia)) return;
    const double* G = tp.grad_buf(out).data.data();
    double* GA = tp.grad_buf(ia).data.data();
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < m; ++j) GA[(*idx_shared)[r] * m + j] += G[r * m + j];
  };
  return t.make_node({n, m}, {a}, fwd, bwd);
}

namespace {

Value segment_agg(const Value& a, std::vector<int> segment_ids, int n_segments, bool mean) {
  Tape& t = *a.tape;
  const Tensor& ta = a.tensor();
  check_2d(ta, "segment_sum");
  if (segment_ids.size() != ta.rows())
    throw ShapeError("segment_sum: ids length " + std::to_string(segment_ids.size()) +
                     " vs rows " + std::to_string(ta.rows()));
  for (int s : segment_ids)
    if (s < 0 || s >= n_segments) throw ArgumentError("segment_sum: segment id out of range");
  const std::size_t n = ta.rows(), m = ta.cols(), c = n_segments;
  auto counts = std::make_shared<std::vector<double>>(c, 0.0);
  for (int s : segment_ids) (*counts)[s] += 1.0;
  auto ids = std::make_shared<std::vector<int>>(std::move(segment_ids));
  auto fwd = [n, m, c, ids, counts, mean, ia = a.id](Tape& tp, int out) {
    const double* A = tp.val(ia).data.data();
    double* C = tp.mutable_val(out).data.data();
    std::fill(C, C + c * m, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double* crow = C + (*ids)[i] * m;
      const double* arow = A + i * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += arow[j];
    }
    if (mean)
      for (std::size_t s = 0; s < c; ++s)
        if ((*counts)[s] > 0.0)
          for (std::size_t j = 0; j < m; ++j) C[s * m + j] /= (*counts)[s];
  };
  auto bwd = [n, m, ids, counts, mean, ia = a.id](Tape& tp, int out) {
    if (!tp.requires_grad(ia)) return;
    const double* G = tp.grad_buf(out).data.data();
    double* GA = tp.grad_buf(ia).data.data();
    for (std::size_t i = 0; i < n; ++i) {
      const int s = (*ids)[i];
      const double scale = mean ? 1.0 / (*counts)[s] : 1.0;
      for (std::size_t j = 0; j < m; ++j) GA[i * m + j] += scale * G[s * m + j];
    }
  };
  return t.make_node({c, m}, {a}, fwd, bwd);
}

}  // namespace

Value segment_sum(const Value& a, std::vector<int> segment_ids, int n_segments) {
  return segment_agg(a, std::move(segment_ids), n_segments, false);
}

Value segment_mean(const Value& a, std::vector<int> segment_ids, int n_segments) {
  return segment_agg(a, std::move(segment_ids), n_segments, true);
}

Value row_softmax(const Value& a) {
  Tape& t = *a.tape;
  const Tensor& ta = a.tensor();
  check_2d(ta, "row_softmax");
  const std::size_t n = ta.rows(), m = ta.cols();
  auto fwd = [n, m, ia = a.id](Tape& tp, int out) {
    const double* A = tp.val(ia).data.data();
    double* C = tp.mutable_val(out).data.data();
    for (std::size_t i = 0; i < n; ++i) {
      const double* arow = A + i * m;
      double* crow = C + i * m;
      double mx = arow[0];
      for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, arow[j]);
      double denom = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        crow[j] = std::exp(arow[j] - mx);
        denom += crow[j];
      }
      for (std::size_t j = 0; j < m; ++j) crow[j] /= denom;
    }
  };
  auto bwd = [n, m, ia = a.id](Tape& tp, int out) {
    if (!tp.requires_grad(ia)) return;
    const double* G = tp.grad_buf(out).data.data();
    const double* S = tp.val(out).data.data();
    double* GA = tp.grad_buf(ia).data.data();
    for (std::size_t i = 0; i < n; ++i) {
      const double* srow = S + i * m;
      const double* grow = G + i * m;
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j) dot += grow[j] * srow[j];
      double* garow = GA + i * m;
      for (std::size_t j = 0; j < m; ++j) garow[j] += srow[j] * (grow[j] - dot);
    }
  };
  return t.make_node(ta.shape, {a}, fwd, bwd);
}

Value reshape(const Value& a, std::vector<std::size_t> shape) {
  Tape& t = *a.tape;
  if (Tensor::numel_of(shape) != a.tensor().numel())
    throw ShapeError("reshape: cannot view " + a.tensor().shape_str() + " as " +
                     Tensor(shape).shape_str());
  const std::size_t count = a.tensor().numel();
  auto fwd = [count, ia = a.id](Tape& tp, int out) {
    const double* A = tp.val(ia).data.data();
    double* C = tp.mutable_val(out).data.data();
    std::copy(A, A + count, C);
  };
  auto bwd = [count, ia = a.id](Tape& tp, int out) {
    if (!tp.requires_grad(ia)) return;
    const double* G = tp.grad_buf(out).data.data();
    double* GA = tp.grad_buf(ia).data.data();
    for (std::size_t e = 0; e < count; ++e) GA[e] += G[e];
  };
  return t.make_node(std::move(shape), {a}, fwd, bwd);
}

Value cross_entropy_with_logits(const Value& logits, int target) {
  Tape& t = *logits.tape;
  const Tensor& tl = logits.tensor();
  check_2d(tl, "cross_entropy_with_logits");
  if (tl.rows() != 1) throw ShapeError("cross_entropy_with_logits: expected a 1 x C row");
  const std::size_t c = tl.cols();
  if (target < 0 || target >= static_cast<int>(c))
    throw ArgumentError("cross_entropy_with_logits: class index " + std::to_string(target) +
                        " out of range [0, " + std::to_string(c) + ")");
  auto fwd = [c, target, il = logits.id](Tape& tp, int out) {
    const double* z = tp.val(il).data.data();
    double mx = z[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, z[j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < c; ++j) denom += std::exp(z[j] - mx);
    tp.mutable_val(out).data[0] = std::log(denom) + mx - z[target];
  };
  auto bwd = [c, target, il = logits.id](Tape& tp, int out) {
    if (!tp.requires_grad(il)) return;
    const double g = tp.grad_buf(out).data[0];
    const double* z = tp.val(il).data.data();
    double* gz = tp.grad_buf(il).data.data();
    double mx = z[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, z[j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < c; ++j) denom += std::exp(z[j] - mx);
    for (std::size_t j = 0; j < c; ++j) {
      const double p = std::exp(z[j] - mx) / denom;
      gz[j] += g * (p - (static_cast<int>(j) == target ? 1.0 : 0.0));
    }
  };
  return t.make_node({1, 1}, {logits}, fwd, bwd);
}

// --- grad_check -----------------------------------------------------------------

GradCheckReport grad_check(Tape& tape, const Value& output,
                           const std::vector<std::pair<std::string, Value>>& params, double h) {
  if (!output.valid()) throw StateError("grad_check: invalid output value");
  tape.backward(output);

  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (const auto& [name, v] : params) analytic.push_back(v.grad());

  GradCheckReport report;
  for (std::size_t p = 0; p < params.size(); ++p) {
    const auto& [name, v] = params[p];
    Tensor& storage = tape.mutable_val(v.id);
    GradCheckEntry entry;
    entry.name = name;
    for (std::size_t e = 0; e < storage.numel(); ++e) {
      const double saved = storage.data[e];
      storage.data[e] = saved + h;
      tape.replay();
      const double f_plus = tape.val(output.id).data[0];
      storage.data[e] = saved - h;
      tape.replay();
      const double f_minus = tape.val(output.id).data[0];
      storage.data[e] = saved;
      if (!std::isfinite(f_plus) || !std::isfinite(f_minus))
        throw NumericalError("grad_check: non-finite objective at parameter " + name);
      const double fd = (f_plus - f_minus) / (2.0 * h);
      const double adv = analytic[p].data[e];
      const double rel = std::abs(adv - fd) / std::max(1e-8, std::abs(adv) + std::abs(fd));
      if (rel > entry.max_rel_err) {
        entry.max_rel_err = rel;
        entry.worst_index = e;
      }
    }
    if (entry.max_rel_err > report.max_rel_err) {
      report.max_rel_err = entry.max_rel_err;
      report.worst_param = entry.name;
      report.worst_index = entry.worst_index;
    }
    report.per_param.push_back(std::move(entry));
  }
  tape.replay();  // restore all intermediate values
  return report;
}

}  // namespace surfpool::ad
