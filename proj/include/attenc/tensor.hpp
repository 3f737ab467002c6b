#pragma once

// Dense double-precision tensors with reverse-mode differentiation.
//
// A Tensor is a cheap, shared handle to a graph node. Every op validates
// shapes when it is called and returns a new node that remembers its inputs
// and a backward rule. Node ids are handed out monotonically, so sorting the
// nodes reachable from a loss by id is a topological order of the graph.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace attenc {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_size(const Shape& s);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Node;

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor scalar(double value);
  /// Leaf that collects gradients during backward.
  static Tensor parameter(Shape shape, std::vector<double> values);

  explicit operator bool() const { return node_ != nullptr; }

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  // Rank-1 tensors behave as a single row in 2-D ops.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const;
  // Direct write access. Only for leaves owned by the caller (parameters,
  // inputs); never for intermediates of a live graph.
  std::span<double> mutable_values();
  double item() const;
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  std::uint64_t id() const;
  std::string_view op() const;
  bool is_leaf() const;

  /// Deep copy of values (and the requires-grad flag) into a fresh leaf.
  Tensor clone() const;

  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Receives the output gradient and one gradient slot per input. A slot is
// empty when that input does not require a gradient. Rules accumulate (+=).
using BackwardFn =
    std::function<void(std::span<const double> out_grad, std::span<const std::span<double>> in_grads)>;

struct Node {
  std::uint64_t id = 0;
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::string_view op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;
};

/// Builds an op result. Used by the ops below and by layers with fused
/// backward rules. Rejects non-finite values.
Tensor make_op(Shape shape, std::vector<double> values, std::string_view op, std::vector<Tensor> inputs,
               BackwardFn backward);

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

struct OpRecord {
  std::string_view op;
  std::vector<std::uint64_t> inputs;
  std::uint64_t output;
};

/// The ops reachable from a root, in topological order.
class Graph {
 public:
  static Graph trace(const Tensor& root);

  const std::vector<OpRecord>& ops() const { return ops_; }
  const std::vector<std::shared_ptr<Node>>& nodes() const { return nodes_; }
  std::vector<std::uint64_t> leaves() const;
  bool is_topological() const;

 private:
  std::vector<std::shared_ptr<Node>> nodes_;  // ascending id
  std::vector<OpRecord> ops_;
};

/// Populates gradients of every node reachable from a scalar loss. Leaf
/// gradients accumulate across calls; intermediate gradients are reset.
void backward(const Tensor& loss);
void backward(const Tensor& loss, const Graph& graph);

// --- ops -------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);

// Same-shape elementwise. add() also broadcasts a row vector (rank-1 or 1xN)
// across the rows of a matrix.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor relu(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Column means of a [R x C] tensor, returned as rank-1 [C].
Tensor mean_rows(const Tensor& x);

Tensor softmax_lastdim(const Tensor& x);

Tensor concat_lastdim(std::span<const Tensor> parts);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count);
Tensor reshape(const Tensor& x, Shape shape);

/// Squared Euclidean distance between every row of a and every row of b.
Tensor pairwise_sq_dist(const Tensor& a, const Tensor& b);

/// Mean negative log-softmax of the labelled entry of each row of logits.
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);

}  // namespace attenc
