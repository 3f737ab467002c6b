#include "attenc/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace attenc {

namespace {

std::atomic<std::uint64_t> next_id{1};
thread_local bool recording = true;

std::shared_ptr<Node> new_node(Shape shape, std::vector<double> values) {
  if (shape_size(shape) != values.size()) {
    throw ShapeError("tensor: shape " + shape_str(shape) + " holds " + std::to_string(shape_size(shape)) +
                     " values, got " + std::to_string(values.size()));
  }
  auto n = std::make_shared<Node>();
  n->id = next_id.fetch_add(1, std::memory_order_relaxed);
  n->shape = std::move(shape);
  n->value = std::move(values);
  return n;
}

void require_finite(std::span<const double> v, std::string_view what, std::string_view op) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw NumericError(std::string(op) + ": non-finite " + std::string(what));
    }
  }
}

void require_rank2(const Tensor& t, std::string_view op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
  }
}

void require_same(const Tensor& a, const Tensor& b, std::string_view op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

bool is_row_vector(const Tensor& t) { return t.rank() == 1 || (t.rank() == 2 && t.shape()[0] == 1); }

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    os << (i ? "x" : "") << s[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

// --- Tensor ----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape) {
  const auto n = shape_size(shape);
  return Tensor(new_node(std::move(shape), std::vector<double>(n, 0.0)));
}

Tensor Tensor::full(Shape shape, double value) {
  const auto n = shape_size(shape);
  return Tensor(new_node(std::move(shape), std::vector<double>(n, value)));
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  for (auto e : shape) {
    if (e == 0) throw ShapeError("tensor: zero extent in " + shape_str(shape));
  }
  require_finite(values, "value", "tensor");
  return Tensor(new_node(std::move(shape), std::move(values)));
}

Tensor Tensor::scalar(double value) { return from({}, {value}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  auto t = from(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::size() const { return node_->value.size(); }

std::size_t Tensor::rows() const {
  const auto& s = shape();
  if (s.size() < 2) return 1;
  return node_->value.size() / s.back();
}

std::size_t Tensor::cols() const {
  const auto& s = shape();
  return s.empty() ? 1 : s.back();
}

std::span<const double> Tensor::values() const { return node_->value; }
std::span<double> Tensor::mutable_values() { return node_->value; }

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item: tensor " + shape_str(shape()) + " is not a scalar");
  return node_->value[0];
}

double Tensor::at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

bool Tensor::requires_grad() const { return node_->requires_grad; }
bool Tensor::has_grad() const { return !node_->grad.empty(); }
std::span<const double> Tensor::grad() const { return node_->grad; }
void Tensor::zero_grad() { node_->grad.clear(); }
std::uint64_t Tensor::id() const { return node_->id; }
std::string_view Tensor::op() const { return node_->op; }
bool Tensor::is_leaf() const { return node_->inputs.empty() && !node_->backward; }

Tensor Tensor::clone() const {
  auto n = new_node(shape(), node_->value);
  n->requires_grad = node_->requires_grad && is_leaf();
  return Tensor(std::move(n));
}

// --- graph -----------------------------------------------------------------

NoGradGuard::NoGradGuard() : previous_(recording) { recording = false; }
NoGradGuard::~NoGradGuard() { recording = previous_; }
bool grad_enabled() { return recording; }

Tensor make_op(Shape shape, std::vector<double> values, std::string_view op, std::vector<Tensor> inputs,
               BackwardFn backward) {
  require_finite(values, "value", op);
  auto n = new_node(std::move(shape), std::move(values));
  n->op = op;
  const bool needs = recording && std::any_of(inputs.begin(), inputs.end(),
                                              [](const Tensor& t) { return t.requires_grad(); });
  if (needs) {
    n->requires_grad = true;
    n->inputs.reserve(inputs.size());
    for (auto& t : inputs) n->inputs.push_back(t.node());
    n->backward = std::move(backward);
  }
  return Tensor(std::move(n));
}

Graph Graph::trace(const Tensor& root) {
  Graph g;
  std::unordered_set<const Node*> seen;
  std::vector<std::shared_ptr<Node>> stack{root.node()};
  while (!stack.empty()) {
    auto n = std::move(stack.back());
    stack.pop_back();
    if (!seen.insert(n.get()).second) continue;
    for (auto& in : n->inputs) stack.push_back(in);
    g.nodes_.push_back(std::move(n));
  }
  std::sort(g.nodes_.begin(), g.nodes_.end(), [](const auto& a, const auto& b) { return a->id < b->id; });
  for (const auto& n : g.nodes_) {
    if (n->inputs.empty()) continue;
    OpRecord rec{n->op, {}, n->id};
    for (const auto& in : n->inputs) rec.inputs.push_back(in->id);
    g.ops_.push_back(std::move(rec));
  }
  return g;
}

std::vector<std::uint64_t> Graph::leaves() const {
  std::vector<std::uint64_t> out;
  for (const auto& n : nodes_) {
    if (n->inputs.empty()) out.push_back(n->id);
  }
  return out;
}

bool Graph::is_topological() const {
  std::unordered_set<std::uint64_t> defined;
  for (const auto& n : nodes_) {
    for (const auto& in : n->inputs) {
      if (!defined.count(in->id)) return false;
    }
    defined.insert(n->id);
  }
  return true;
}

void backward(const Tensor& loss) { backward(loss, Graph::trace(loss)); }

void backward(const Tensor& loss, const Graph& graph) {
  if (loss.size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;
  const auto& nodes = graph.nodes();
  for (const auto& n : nodes) {
    if (!n->inputs.empty()) n->grad.assign(n->value.size(), 0.0);
  }
  loss.node()->grad.assign(1, 1.0);

  std::vector<std::span<double>> slots;
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    Node& n = **it;
    if (n.inputs.empty() || !n.backward) continue;
    slots.clear();
    for (auto& in : n.inputs) {
      if (in->requires_grad) {
        if (in->grad.empty()) in->grad.assign(in->value.size(), 0.0);
        slots.emplace_back(in->grad);
      } else {
        slots.emplace_back();
      }
    }
    n.backward(n.grad, slots);
    for (auto s : slots) require_finite(s, "gradient", n.op);
  }
}

// --- ops -------------------------------------------------------------------

namespace {

// c[m x n] += a[m x k] * b[k x n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

// c[m x k] += g[m x n] * b[k x n]^T
void gemm_nt(const double* g, const double* b, double* c, std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* gi = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double* bp = b + p * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += gi[j] * bp[j];
      c[i * k + p] += s;
    }
  }
}

// c[k x n] += a[m x k]^T * g[m x n]
void gemm_tn(const double* a, const double* g, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* gi = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += aip * gi[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw ShapeError("matmul: inner extents disagree, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  gemm_nn(a.values().data(), b.values().data(), out.data(), m, k, n);
  return make_op({m, n}, std::move(out), "matmul", {a, b},
                 [a, b, m, k, n](std::span<const double> g, std::span<const std::span<double>> in) {
                   if (!in[0].empty()) gemm_nt(g.data(), b.values().data(), in[0].data(), m, n, k);
                   if (!in[1].empty()) gemm_tn(a.values().data(), g.data(), in[1].data(), m, k, n);
                 });
}

Tensor transpose(const Tensor& x) {
  require_rank2(x, "transpose");
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  std::vector<double> out(r * c);
  auto v = x.values();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = v[i * c + j];
  return make_op({c, r}, std::move(out), "transpose", {x},
                 [r, c](std::span<const double> g, std::span<const std::span<double>> in) {
                   for (std::size_t i = 0; i < r; ++i)
                     for (std::size_t j = 0; j < c; ++j) in[0][i * c + j] += g[j * r + i];
                 });
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) {
    std::vector<double> out(a.values().begin(), a.values().end());
    auto bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return make_op(a.shape(), std::move(out), "add", {a, b},
                   [](std::span<const double> g, std::span<const std::span<double>> in) {
                     for (auto slot : in) {
                       if (slot.empty()) continue;
                       for (std::size_t i = 0; i < g.size(); ++i) slot[i] += g[i];
                     }
                   });
  }
  if (a.rank() == 2 && is_row_vector(b) && b.size() == a.cols()) {
    const std::size_t r = a.rows(), c = a.cols();
    std::vector<double> out(a.values().begin(), a.values().end());
    auto bv = b.values();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out[i * c + j] += bv[j];
    return make_op(a.shape(), std::move(out), "add_bias", {a, b},
                   [r, c](std::span<const double> g, std::span<const std::span<double>> in) {
                     if (!in[0].empty())
                       for (std::size_t i = 0; i < g.size(); ++i) in[0][i] += g[i];
                     if (!in[1].empty())
                       for (std::size_t i = 0; i < r; ++i)
                         for (std::size_t j = 0; j < c; ++j) in[1][j] += g[i * c + j];
                   });
  }
  throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same(a, b, "sub");
  std::vector<double> out(a.values().begin(), a.values().end());
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return make_op(a.shape(), std::move(out), "sub", {a, b},
                 [](std::span<const double> g, std::span<const std::span<double>> in) {
                   if (!in[0].empty())
                     for (std::size_t i = 0; i < g.size(); ++i) in[0][i] += g[i];
                   if (!in[1].empty())
                     for (std::size_t i = 0; i < g.size(); ++i) in[1][i] -= g[i];
                 });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same(a, b, "mul");
  std::vector<double> out(a.values().begin(), a.values().end());
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return make_op(a.shape(), std::move(out), "mul", {a, b},
                 [a, b](std::span<const double> g, std::span<const std::span<double>> in) {
                   auto av = a.values();
                   auto bv = b.values();
                   if (!in[0].empty())
                     for (std::size_t i = 0; i < g.size(); ++i) in[0][i] += g[i] * bv[i];
                   if (!in[1].empty())
                     for (std::size_t i = 0; i < g.size(); ++i) in[1][i] += g[i] * av[i];
                 });
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.values().begin(), x.values().end());
  for (auto& v : out) v *= factor;
  return make_op(x.shape(), std::move(out), "scale", {x},
                 [factor](std::span<const double> g, std::span<const std::span<double>> in) {
                   for (std::size_t i = 0; i < g.size(); ++i) in[0][i] += g[i] * factor;
                 });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.values().begin(), x.values().end());
  for (auto& v : out) v = v > 0.0 ? v : 0.0;
  return make_op(x.shape(), std::move(out), "relu", {x},
                 [x](std::span<const double> g, std::span<const std::span<double>> in) {
                   auto xv = x.values();
                   for (std::size_t i = 0; i < g.size(); ++i)
                     if (xv[i] > 0.0) in[0][i] += g[i];
                 });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return make_op({}, {s}, "sum", {x}, [](std::span<const double> g, std::span<const std::span<double>> in) {
    for (auto& v : in[0]) v += g[0];
  });
}

Tensor mean(const Tensor& x) {
  const double n = static_cast<double>(x.size());
  double s = 0.0;
  for (double v : x.values()) s += v;
  return make_op({}, {s / n}, "mean", {x}, [n](std::span<const double> g, std::span<const std::span<double>> in) {
    for (auto& v : in[0]) v += g[0] / n;
  });
}

Tensor mean_rows(const Tensor& x) {
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<double> out(c, 0.0);
  auto v = x.values();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += v[i * c + j];
  for (auto& o : out) o /= static_cast<double>(r);
  return make_op({c}, std::move(out), "mean_rows", {x},
                 [r, c](std::span<const double> g, std::span<const std::span<double>> in) {
                   const double inv = 1.0 / static_cast<double>(r);
                   for (std::size_t i = 0; i < r; ++i)
                     for (std::size_t j = 0; j < c; ++j) in[0][i * c + j] += g[j] * inv;
                 });
}

Tensor softmax_lastdim(const Tensor& x) {
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<double> out(x.size());
  auto v = x.values();
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = v.data() + i * c;
    double* o = out.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += (o[j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < c; ++j) o[j] /= z;
  }
  auto probs = std::make_shared<std::vector<double>>(out);
  return make_op(x.shape(), std::move(out), "softmax", {x},
                 [probs, r, c](std::span<const double> g, std::span<const std::span<double>> in) {
                   const auto& p = *probs;
                   for (std::size_t i = 0; i < r; ++i) {
                     double dot = 0.0;
                     for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * p[i * c + j];
                     for (std::size_t j = 0; j < c; ++j) in[0][i * c + j] += p[i * c + j] * (g[i * c + j] - dot);
                   }
                 });
}

Tensor concat_lastdim(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_lastdim: no inputs");
  const std::size_t r = parts[0].rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rows() != r || p.rank() != parts[0].rank()) {
      throw ShapeError("concat_lastdim: " + shape_str(p.shape()) + " does not stack with " +
                       shape_str(parts[0].shape()));
    }
    widths.push_back(p.cols());
    total += p.cols();
  }
  std::vector<double> out(r * total);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t c = p.cols();
    auto v = p.values();
    for (std::size_t i = 0; i < r; ++i) std::copy_n(v.data() + i * c, c, out.data() + i * total + off);
    off += c;
  }
  Shape shape = parts[0].shape();
  shape.back() = total;
  return make_op(std::move(shape), std::move(out), "concat_lastdim", {parts.begin(), parts.end()},
                 [r, total, widths](std::span<const double> g, std::span<const std::span<double>> in) {
                   std::size_t off = 0;
                   for (std::size_t k = 0; k < in.size(); ++k) {
                     const std::size_t c = widths[k];
                     if (!in[k].empty())
                       for (std::size_t i = 0; i < r; ++i)
                         for (std::size_t j = 0; j < c; ++j) in[k][i * c + j] += g[i * total + off + j];
                     off += c;
                   }
                 });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t c = parts[0].cols();
  std::size_t r = 0;
  std::vector<double> out;
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) {
    if (p.rank() > 2 || p.cols() != c) {
      throw ShapeError("concat_rows: " + shape_str(p.shape()) + " does not stack with " +
                       shape_str(parts[0].shape()));
    }
    r += p.rows();
    sizes.push_back(p.size());
    out.insert(out.end(), p.values().begin(), p.values().end());
  }
  return make_op({r, c}, std::move(out), "concat_rows", {parts.begin(), parts.end()},
                 [sizes](std::span<const double> g, std::span<const std::span<double>> in) {
                   std::size_t off = 0;
                   for (std::size_t k = 0; k < in.size(); ++k) {
                     if (!in[k].empty())
                       for (std::size_t i = 0; i < sizes[k]; ++i) in[k][i] += g[off + i];
                     off += sizes[k];
                   }
                 });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
  require_rank2(x, "slice_rows");
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  if (count == 0 || begin + count > r) {
    throw ShapeError("slice_rows: rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") out of range for " + shape_str(x.shape()));
  }
  auto v = x.values();
  std::vector<double> out(v.begin() + static_cast<std::ptrdiff_t>(begin * c),
                          v.begin() + static_cast<std::ptrdiff_t>((begin + count) * c));
  return make_op({count, c}, std::move(out), "slice_rows", {x},
                 [begin, c](std::span<const double> g, std::span<const std::span<double>> in) {
                   for (std::size_t i = 0; i < g.size(); ++i) in[0][begin * c + i] += g[i];
                 });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  return make_op(std::move(shape), std::move(out), "reshape", {x},
                 [](std::span<const double> g, std::span<const std::span<double>> in) {
                   for (std::size_t i = 0; i < g.size(); ++i) in[0][i] += g[i];
                 });
}

Tensor pairwise_sq_dist(const Tensor& a, const Tensor& b) {
  if (a.rank() > 2 || b.rank() > 2 || a.cols() != b.cols()) {
    throw ShapeError("pairwise_sq_dist: width mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const std::size_t m = a.rows(), n = b.rows(), k = a.cols();
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        const double d = av[i * k + p] - bv[j * k + p];
        s += d * d;
      }
      out[i * n + j] = s;
    }
  return make_op({m, n}, std::move(out), "pairwise_sq_dist", {a, b},
                 [a, b, m, n, k](std::span<const double> g, std::span<const std::span<double>> in) {
                   auto av = a.values();
                   auto bv = b.values();
                   for (std::size_t i = 0; i < m; ++i)
                     for (std::size_t j = 0; j < n; ++j) {
                       const double gij = 2.0 * g[i * n + j];
                       for (std::size_t p = 0; p < k; ++p) {
                         const double d = av[i * k + p] - bv[j * k + p];
                         if (!in[0].empty()) in[0][i * k + p] += gij * d;
                         if (!in[1].empty()) in[1][j * k + p] -= gij * d;
                       }
                     }
                 });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  const std::size_t r = logits.rows(), c = logits.cols();
  if (labels.size() != r) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(r) +
                     " rows");
  }
  auto v = logits.values();
  auto probs = std::make_shared<std::vector<double>>(r * c);
  double loss = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    if (labels[i] >= c) {
      throw ShapeError("cross_entropy: label " + std::to_string(labels[i]) + " out of range for " +
                       std::to_string(c) + " classes");
    }
    const double* row = v.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    const double log_z = mx + std::log(z);
    for (std::size_t j = 0; j < c; ++j) (*probs)[i * c + j] = std::exp(row[j] - log_z);
    loss += log_z - row[labels[i]];
  }
  loss /= static_cast<double>(r);
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  return make_op({}, {loss}, "cross_entropy", {logits},
                 [probs, lab, r, c](std::span<const double> g, std::span<const std::span<double>> in) {
                   const double s = g[0] / static_cast<double>(r);
                   for (std::size_t i = 0; i < r; ++i) {
                     for (std::size_t j = 0; j < c; ++j) {
                       const double target = j == lab[i] ? 1.0 : 0.0;
                       in[0][i * c + j] += s * ((*probs)[i * c + j] - target);
                     }
                   }
                 });
}

}  // namespace attenc
