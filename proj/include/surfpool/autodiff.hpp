#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "surfpool/errors.hpp"

namespace surfpool::ad {

/// Dense row-major double tensor. Most values are 2-D (rows x cols);
/// convolution weights are 3-D (kernel x in-channel x out-channel).
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
    data.assign(numel_of(shape), 0.0);
  }

  static std::size_t numel_of(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
  }

  std::size_t numel() const { return data.size(); }
  std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
  std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }
  bool is_scalar() const { return numel() == 1; }

  double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  std::string shape_str() const;
};

class Tape;

/// Handle to a node on a tape.
struct Value {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Tensor& tensor() const;
  const Tensor& grad() const;
};

/// Reverse-mode tape. Nodes are appended in topological order; backward
/// traverses them in exact reverse order. Forward closures make the tape
/// replayable after leaf data has been mutated (used by grad_check).
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Value input(Tensor t, bool requires_grad = false);

  /// Runs the reverse sweep from a scalar output, accumulating gradients
  /// into every requires_grad node. Throws StateError if the tape has not
  /// been evaluated or `out` is not a scalar on this tape.
  void backward(const Value& out);

  /// Recomputes every non-leaf value in order (after leaf mutation).
  void replay();

  void reset();
  std::size_t size() const { return nodes_.size(); }

  // Node access (used by op implementations and grad_check).
  const Tensor& val(int id) const { return nodes_[id].value; }
  Tensor& mutable_val(int id) { return nodes_[id].value; }
  Tensor& grad_buf(int id) { return nodes_[id].grad; }
  const Tensor& grad(int id) const;
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }

  /// Appends an op node. `fwd` recomputes the node's value from its inputs;
  /// `bwd` accumulates into the inputs' grad buffers (guarded by
  /// requires_grad). The node requires grad iff any input does.
  Value make_node(std::vector<std::size_t> shape, const std::vector<Value>& inputs,
                  std::function<void(Tape&, int)> fwd, std::function<void(Tape&, int)> bwd);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool is_leaf = true;
    std::function<void(Tape&, int)> fwd;
    std::function<void(Tape&, int)> bwd;
  };
  std::vector<Node> nodes_;
  bool evaluated_ = false;

  friend struct Value;
};

// --- Core op set ------------------------------------------------------------

Value matmul(const Value& a, const Value& b);     // (n,k)x(k,m) -> (n,m)
Value matmul_tn(const Value& a, const Value& b);  // a^T b: (k,n)x(k,m) -> (n,m)
Value matmul_nt(const Value& a, const Value& b);  // a b^T: (n,k)x(m,k) -> (n,m)

/// Elementwise add/mul; `b` may be a single row broadcast over a's rows.
Value add(const Value& a, const Value& b);
Value sub(const Value& a, const Value& b);
Value mul(const Value& a, const Value& b);

Value scalar_mul(const Value& a, double c);
Value neg(const Value& a);
Value exp_(const Value& a);
Value square(const Value& a);
Value leaky_relu(const Value& a, double slope = 0.01);

/// Sum of all entries, accumulated left-to-right, as a 1x1 value.
Value reduce_sum(const Value& a);

/// Mean over rows -> 1 x cols.
Value mean_rows(const Value& a);

Value gather_rows(const Value& a, std::vector<int> index_list);

/// Hard segment aggregation over rows; ids in [0, n_segments).
Value segment_sum(const Value& a, std::vector<int> segment_ids, int n_segments);
Value segment_mean(const Value& a, std::vector<int> segment_ids, int n_segments);

/// Row-wise softmax (numerically stabilized).
Value row_softmax(const Value& a);

/// Same data viewed under a new shape (element count must match).
Value reshape(const Value& a, std::vector<std::size_t> shape);

/// Softmax cross-entropy against an integer class target, via log-sum-exp.
Value cross_entropy_with_logits(const Value& logits, int target);

// --- Gradient checking -------------------------------------------------------

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  std::size_t worst_index = 0;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::vector<GradCheckEntry> per_param;
};

/// Central-difference check of reverse-mode gradients for a scalar output.
/// For every entry of every listed parameter, compares the analytic gradient
/// to (f(p+h) - f(p-h)) / 2h with relative error
/// |ad - fd| / max(1e-8, |ad| + |fd|). Leaves tape values restored.
GradCheckReport grad_check(Tape& tape, const Value& output,
                           const std::vector<std::pair<std::string, Value>>& params,
                           double h = 1e-5);

}  // namespace surfpool::ad
