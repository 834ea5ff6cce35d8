#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tobac/tensor.hpp"

namespace tobac::ag {

template <typename T>
class Graph;

/// Handle to a node in a Graph. Cheap to copy; valid while the graph lives.
template <typename T>
struct Var {
  Graph<T>* graph = nullptr;
  int id = -1;

  const TensorT<T>& value() const;
};

/// Tape of operation records for reverse-mode differentiation.
///
/// Nodes are appended as ops execute. `backward` orders the sub-graph that
/// reaches the loss by depth-first search (so edited or malformed graphs are
/// still checked for cycles) and visits each node once in reverse order.
/// Parameter leaves carry a pointer to an external gradient buffer which
/// backward accumulates into; callers zero those buffers between steps.
template <typename T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, int self)>;

  struct Node {
    std::string op;
    TensorT<T> value;
    TensorT<T> grad;
    std::vector<int> inputs;
    bool requires_grad = false;
    TensorT<T>* grad_sink = nullptr;
    BackwardFn backward;
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<T> constant(TensorT<T> value);
  /// Leaf whose gradient is accumulated into `grad_sink` (same shape).
  Var<T> parameter(const TensorT<T>& value, TensorT<T>& grad_sink);

  /// Appends an op result. `backward` may be empty for non-differentiable ops.
  Var<T> record(std::string op, TensorT<T> value, std::vector<int> inputs, BackwardFn backward);

  Node& node(int id) { return nodes_.at(static_cast<std::size_t>(id)); }
  const Node& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient buffer of a node, zero-initialized on first access.
  TensorT<T>& grad(int id);

  /// Propagates d(loss)/d(node) to every reachable node. Loss must be scalar.
  void backward(Var<T> loss);

 private:
  std::vector<Node> nodes_;
};

template <typename T>
const TensorT<T>& Var<T>::value() const {
  return graph->node(id).value;
}

// --- Differentiable ops -------------------------------------------------

template <typename T>
Var<T> add(Var<T> a, Var<T> b);
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);
template <typename T>
Var<T> scale(Var<T> a, T s);
/// Sum of all entries as a 1-element tensor.
template <typename T>
Var<T> sum(Var<T> a);
/// a[N x d] + b[d] broadcast over rows.
template <typename T>
Var<T> add_row(Var<T> a, Var<T> b);
/// a[m x k] * b[k x n]
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b);
/// a[m x k] * b[n x k]^T
template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b);
/// out[i] = table[ids[i]]
template <typename T>
Var<T> gather_rows(Var<T> table, std::vector<int> ids);
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps = T(1e-5));
/// tanh-approximated GELU.
template <typename T>
Var<T> gelu(Var<T> x);
template <typename T>
Var<T> softmax_rows(Var<T> x);

/// Contiguous run of rows belonging to one sequence in a packed batch.
struct Segment {
  int start = 0;
  int length = 0;
};

/// Multi-head causal scaled dot-product attention over packed sequences.
/// q, k, v are [N x d]; rows of different segments never attend to each other.
template <typename T>
Var<T> causal_attention(Var<T> q, Var<T> k, Var<T> v, std::vector<Segment> segments, int n_heads);

/// sum_r weights[r] * (-log softmax(logits[r])[targets[r]]); rows with
/// weight 0 are skipped.
template <typename T>
Var<T> weighted_cross_entropy(Var<T> logits, std::vector<int> targets, std::vector<T> weights);

/// sum_k weights[k] * KL(softmax(teacher[k]) || softmax(student[rows[k]])).
/// The teacher logits are constants; gradients flow only to the student.
template <typename T>
Var<T> weighted_kl(Var<T> student_logits, const TensorT<T>& teacher_logits, std::vector<int> rows,
                   std::vector<T> weights);

}  // namespace tobac::ag
