#pragma once

// Dense row-major float64 tensors with tape-free reverse-mode
// differentiation. Every op records its parents and a backward closure on
// the result node; Graph walks that DAG in reverse topological order.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace sg {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward_fn;

  std::vector<double>& ensure_grad();
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor filled(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor identity(std::size_t n);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const { return data().size(); }
  // Matrix views: rank-2 only.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  // Only leaves may be written (parameters, optimizer updates, loaders).
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const;
  bool has_grad() const;
  // Zeros when no gradient has been accumulated yet.
  std::vector<double> grad() const;
  std::span<const double> grad_view() const;
  void zero_grad();
  bool is_leaf() const;

  // Seeds d(self)/d(self) = 1 and runs the reverse pass. Scalar roots only.
  void backward() const;

  // Fresh leaf holding a copy of the values, detached from any graph.
  Tensor detach() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

// Reverse-mode driver over the DAG reachable from a scalar root.
class Graph {
 public:
  explicit Graph(const Tensor& root);

  // Nodes requiring grad, each exactly once, parents before children.
  const std::vector<detail::Node*>& order() const { return order_; }
  void backward();

 private:
  Tensor root_;
  std::vector<detail::Node*> order_;
};

// Disables graph recording on the current thread for its lifetime.
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

// Counts multiply-accumulates executed by matmul and attention forwards on
// the current thread while alive. Used to cross-check the analytic cost
// model against what the denoiser actually executes.
class MacCounter {
 public:
  MacCounter();
  ~MacCounter();
  MacCounter(const MacCounter&) = delete;
  MacCounter& operator=(const MacCounter&) = delete;
  std::uint64_t count() const;

 private:
  std::uint64_t start_;
  bool previous_active_;
};

// ---- ops ----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);

// Same-shape, or either side holding exactly one element.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);

Tensor gelu(const Tensor& a);
Tensor softmax_lastdim(const Tensor& a);
// Row-wise x / sqrt(mean(x^2) + eps), optionally times a 1 x n gain.
Tensor rmsnorm(const Tensor& a, double eps = 1e-6);
Tensor rmsnorm(const Tensor& a, const Tensor& gain, double eps = 1e-6);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// sum_r w_r * ||row_r||^2 as a scalar.
Tensor weighted_row_sq_sum(const Tensor& a, std::span<const double> row_weights);

Tensor reshape(const Tensor& a, Shape shape);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> index);
// Copy of base with rows index[i] replaced by rows.row(i).
Tensor place_rows(const Tensor& base, const Tensor& rows,
                  std::span<const std::size_t> index);
// Row s of a (S x m) repeated counts[s] times, in order.
Tensor repeat_rows(const Tensor& a, std::span<const std::size_t> counts);

// Rotary embedding. angles holds rows() x (head_dim / 2) rotation angles,
// shared across heads; consecutive feature pairs within a head rotate.
Tensor rope(const Tensor& a, std::span<const double> angles, std::size_t heads);

// Multi-head softmax attention over contiguous row segments:
// rows [offsets[s], offsets[s+1]) attend only among themselves.
Tensor segmented_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                           std::size_t heads,
                           std::span<const std::size_t> offsets);

}  // namespace sg
