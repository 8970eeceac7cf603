#include "sglab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <unordered_set>

#include <Eigen/Core>

#include "sglab/error.hpp"

namespace sg {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMat>;
using ConstRowMap = Eigen::Map<const RowMat>;

thread_local bool g_grad_enabled = true;
thread_local bool g_mac_active = false;
thread_local std::uint64_t g_mac_total = 0;

void count_macs(std::uint64_t n) {
  if (g_mac_active) g_mac_total += n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

using NodePtr = std::shared_ptr<detail::Node>;

NodePtr make_node(Shape shape, std::vector<double> value) {
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  return n;
}

// Attaches parents and the backward closure when recording is on and any
// parent needs a gradient.
Tensor finish(NodePtr out, std::initializer_list<const Tensor*> parents,
              std::function<void(detail::Node&)> backward) {
  if (g_grad_enabled) {
    bool any = false;
    for (const Tensor* p : parents) any = any || p->requires_grad();
    if (any) {
      out->requires_grad = true;
      for (const Tensor* p : parents) out->parents.push_back(p->node());
      out->backward_fn = std::move(backward);
    }
  }
  return Tensor(std::move(out));
}

void require_matrix(const Tensor& t, const char* op) {
  if (!t.defined() || t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " +
                         (t.defined() ? shape_str(t.shape()) : "undefined"));
  }
}

bool wants_grad(const NodePtr& p) { return p->requires_grad; }

enum class Broadcast { same, left_scalar, right_scalar };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::same;
  if (b.numel() == 1) return Broadcast::right_scalar;
  if (a.numel() == 1) return Broadcast::left_scalar;
  throw DimensionError(std::string(op) + ": incompatible shapes " +
                       shape_str(a.shape()) + " and " + shape_str(b.shape()));
}

// Binary elementwise op with scalar broadcasting. df_da/df_db return the
// local partials given (a, b).
template <class F, class DA, class DB>
Tensor binary(const Tensor& a, const Tensor& b, const char* op, F f, DA df_da,
              DB df_db) {
  const Broadcast kind = broadcast_kind(a, b, op);
  const Shape out_shape = kind == Broadcast::left_scalar ? b.shape() : a.shape();
  const std::size_t n = shape_numel(out_shape);
  auto av = a.data();
  auto bv = b.data();
  auto ai = [&](std::size_t i) { return kind == Broadcast::left_scalar ? av[0] : av[i]; };
  auto bi = [&](std::size_t i) { return kind == Broadcast::right_scalar ? bv[0] : bv[i]; };
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = f(ai(i), bi(i));
  NodePtr pa = a.node(), pb = b.node();
  return finish(make_node(out_shape, std::move(out)), {&a, &b},
                [pa, pb, kind, df_da, df_db](detail::Node& self) {
                  const auto& g = self.grad;
                  const auto& av = pa->value;
                  const auto& bv = pb->value;
                  auto ai = [&](std::size_t i) { return kind == Broadcast::left_scalar ? av[0] : av[i]; };
                  auto bi = [&](std::size_t i) { return kind == Broadcast::right_scalar ? bv[0] : bv[i]; };
                  if (wants_grad(pa)) {
                    auto& ga = pa->ensure_grad();
                    for (std::size_t i = 0; i < g.size(); ++i) {
                      ga[kind == Broadcast::left_scalar ? 0 : i] += g[i] * df_da(ai(i), bi(i));
                    }
                  }
                  if (wants_grad(pb)) {
                    auto& gb = pb->ensure_grad();
                    for (std::size_t i = 0; i < g.size(); ++i) {
                      gb[kind == Broadcast::right_scalar ? 0 : i] += g[i] * df_db(ai(i), bi(i));
                    }
                  }
                });
}

template <class F, class DF>
Tensor unary(const Tensor& a, F f, DF df) {
  auto av = a.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  NodePtr pa = a.node();
  return finish(make_node(a.shape(), std::move(out)), {&a},
                [pa, df](detail::Node& self) {
                  auto& ga = pa->ensure_grad();
                  for (std::size_t i = 0; i < ga.size(); ++i) {
                    ga[i] += self.grad[i] * df(pa->value[i]);
                  }
                });
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::vector<double>& detail::Node::ensure_grad() {
  if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  return grad;
}

// ---- Tensor ---------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return filled(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::filled(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  auto node = make_node(std::move(shape), std::vector<double>(n, value));
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("Tensor::from: shape " + shape_str(shape) + " holds " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  auto node = make_node(std::move(shape), std::move(values));
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

Tensor Tensor::identity(std::size_t n) {
  auto t = zeros({n, n});
  auto d = t.mutable_data();
  for (std::size_t i = 0; i < n; ++i) d[i * n + i] = 1.0;
  return t;
}

const Shape& Tensor::shape() const {
  if (!node_) throw DimensionError("undefined tensor");
  return node_->shape;
}

std::size_t Tensor::rows() const {
  if (rank() != 2) throw DimensionError("rows(): tensor is not a matrix");
  return node_->shape[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw DimensionError("cols(): tensor is not a matrix");
  return node_->shape[1];
}

std::span<const double> Tensor::data() const {
  if (!node_) throw DimensionError("undefined tensor");
  return node_->value;
}

std::span<double> Tensor::mutable_data() {
  if (!node_) throw DimensionError("undefined tensor");
  if (!node_->parents.empty()) throw DimensionError("mutable_data(): not a leaf");
  return node_->value;
}

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item(): tensor has " + std::to_string(numel()) + " elements");
  return node_->value[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  return node_->value[r * cols() + c];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::vector<double> Tensor::grad() const {
  if (has_grad()) return node_->grad;
  return std::vector<double>(numel(), 0.0);
}

std::span<const double> Tensor::grad_view() const {
  if (!node_) throw DimensionError("undefined tensor");
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

bool Tensor::is_leaf() const { return node_ && node_->parents.empty(); }

void Tensor::backward() const {
  Graph g(*this);
  g.backward();
}

Tensor Tensor::detach() const {
  return from(shape(), std::vector<double>(data().begin(), data().end()));
}

// ---- Graph ----------------------------------------------------------------

Graph::Graph(const Tensor& root) : root_(root) {
  if (!root.defined()) throw DimensionError("Graph: undefined root");
  if (!root.requires_grad()) return;
  // Iterative post-order DFS; order_ ends up parents-first.
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order_.push_back(node);
      stack.pop_back();
    }
  }
}

void Graph::backward() {
  if (root_.numel() != 1) {
    throw DimensionError("backward(): root must be a scalar");
  }
  if (!root_.requires_grad()) return;
  NoGradGuard no_record;
  root_.node()->ensure_grad()[0] += 1.0;
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

MacCounter::MacCounter() : start_(g_mac_total), previous_active_(g_mac_active) {
  g_mac_active = true;
}
MacCounter::~MacCounter() { g_mac_active = previous_active_; }
std::uint64_t MacCounter::count() const { return g_mac_total - start_; }

// ---- matmul ---------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  const auto M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(k),
             N = static_cast<Eigen::Index>(n);
  RowMap(out.data(), M, N).noalias() = ConstRowMap(a.data().data(), M, K) * ConstRowMap(b.data().data(), K, N);
  count_macs(static_cast<std::uint64_t>(m) * k * n);
  NodePtr pa = a.node(), pb = b.node();
  return finish(make_node({m, n}, std::move(out)), {&a, &b},
                [pa, pb, M, K, N](detail::Node& self) {
                  ConstRowMap G(self.grad.data(), M, N);
                  if (wants_grad(pa)) {
                    RowMap(pa->ensure_grad().data(), M, K).noalias() +=
                        G * ConstRowMap(pb->value.data(), K, N).transpose();
                  }
                  if (wants_grad(pb)) {
                    RowMap(pb->ensure_grad().data(), K, N).noalias() +=
                        ConstRowMap(pa->value.data(), M, K).transpose() * G;
                  }
                });
}

// ---- elementwise ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor scale(const Tensor& a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double) { return 1.0; });
}

Tensor gelu(const Tensor& a) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt_2pi = 0.39894228040143267794;
  return unary(
      a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
      [](double x) {
        return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
      });
}

Tensor softmax_lastdim(const Tensor& a) {
  const std::size_t n = a.shape().empty() ? 1 : a.shape().back();
  const std::size_t rows = n == 0 ? 0 : a.numel() / n;
  auto av = a.data();
  std::vector<double> out(av.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * n;
    double* y = out.data() + r * n;
    const double mx = *std::max_element(x, x + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < n; ++j) y[j] /= z;
  }
  NodePtr pa = a.node();
  auto node = make_node(a.shape(), std::move(out));
  detail::Node* raw = node.get();
  return finish(std::move(node), {&a}, [pa, raw, n, rows](detail::Node& self) {
    auto& ga = pa->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = raw->value.data() + r * n;
      const double* g = self.grad.data() + r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < n; ++j) ga[r * n + j] += y[j] * (g[j] - dot);
    }
  });
}

namespace {

Tensor rmsnorm_impl(const Tensor& a, const Tensor* gain, double eps) {
  require_matrix(a, "rmsnorm");
  const std::size_t rows = a.rows(), n = a.cols();
  if (gain && (gain->numel() != n)) {
    throw DimensionError("rmsnorm: gain must hold " + std::to_string(n) + " values");
  }
  auto av = a.data();
  std::vector<double> out(av.size());
  std::vector<double> inv_rms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * n;
    double ms = 0.0;
    for (std::size_t j = 0; j < n; ++j) ms += x[j] * x[j];
    inv_rms[r] = 1.0 / std::sqrt(ms / static_cast<double>(n) + eps);
    for (std::size_t j = 0; j < n; ++j) {
      out[r * n + j] = x[j] * inv_rms[r] * (gain ? gain->data()[j] : 1.0);
    }
  }
  NodePtr pa = a.node();
  NodePtr pg = gain ? gain->node() : nullptr;
  auto backward = [pa, pg, rows, n, inv_rms = std::move(inv_rms)](detail::Node& self) {
    std::vector<double> dxhat(n);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* x = pa->value.data() + r * n;
      const double* g = self.grad.data() + r * n;
      const double ir = inv_rms[r];
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        dxhat[j] = g[j] * (pg ? pg->value[j] : 1.0);
        dot += dxhat[j] * x[j] * ir;
      }
      if (pg && pg->requires_grad) {
        auto& gg = pg->ensure_grad();
        for (std::size_t j = 0; j < n; ++j) gg[j] += g[j] * x[j] * ir;
      }
      if (pa->requires_grad) {
        auto& ga = pa->ensure_grad();
        const double m = dot / static_cast<double>(n);
        for (std::size_t j = 0; j < n; ++j) {
          ga[r * n + j] += ir * (dxhat[j] - x[j] * ir * m);
        }
      }
    }
  };
  auto node = make_node(a.shape(), std::move(out));
  if (gain) return finish(std::move(node), {&a, gain}, std::move(backward));
  return finish(std::move(node), {&a}, std::move(backward));
}

}  // namespace

Tensor rmsnorm(const Tensor& a, double eps) { return rmsnorm_impl(a, nullptr, eps); }

Tensor rmsnorm(const Tensor& a, const Tensor& gain, double eps) {
  return rmsnorm_impl(a, &gain, eps);
}

// ---- reductions -------------------------------------------------------------

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double x : a.data()) s += x;
  NodePtr pa = a.node();
  return finish(make_node({}, {s}), {&a}, [pa](detail::Node& self) {
    auto& ga = pa->ensure_grad();
    for (auto& g : ga) g += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw DimensionError("mean(): empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor weighted_row_sq_sum(const Tensor& a, std::span<const double> row_weights) {
  require_matrix(a, "weighted_row_sq_sum");
  const std::size_t rows = a.rows(), n = a.cols();
  if (row_weights.size() != rows) {
    throw DimensionError("weighted_row_sq_sum: expected " + std::to_string(rows) + " weights");
  }
  auto av = a.data();
  double s = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (row_weights[r] == 0.0) continue;
    double row = 0.0;
    for (std::size_t j = 0; j < n; ++j) row += av[r * n + j] * av[r * n + j];
    s += row_weights[r] * row;
  }
  NodePtr pa = a.node();
  std::vector<double> w(row_weights.begin(), row_weights.end());
  return finish(make_node({}, {s}), {&a}, [pa, w = std::move(w), n](detail::Node& self) {
    auto& ga = pa->ensure_grad();
    const double g = self.grad[0];
    for (std::size_t r = 0; r < w.size(); ++r) {
      if (w[r] == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) ga[r * n + j] += 2.0 * g * w[r] * pa->value[r * n + j];
    }
  });
}

// ---- structural -------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  auto av = a.data();
  NodePtr pa = a.node();
  return finish(make_node(std::move(shape), std::vector<double>(av.begin(), av.end())), {&a},
                [pa](detail::Node& self) {
                  auto& ga = pa->ensure_grad();
                  for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
                });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  require_matrix(a, "slice_cols");
  if (begin > end || end > a.cols()) throw DimensionError("slice_cols: bad column range");
  const std::size_t rows = a.rows(), n = a.cols(), w = end - begin;
  auto av = a.data();
  std::vector<double> out(rows * w);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(av.data() + r * n + begin, w, out.data() + r * w);
  }
  NodePtr pa = a.node();
  return finish(make_node({rows, w}, std::move(out)), {&a},
                [pa, rows, n, w, begin](detail::Node& self) {
                  auto& ga = pa->ensure_grad();
                  for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t j = 0; j < w; ++j) ga[r * n + begin + j] += self.grad[r * w + j];
                  }
                });
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> index) {
  require_matrix(a, "gather_rows");
  const std::size_t n = a.cols();
  auto av = a.data();
  std::vector<double> out(index.size() * n);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= a.rows()) throw DimensionError("gather_rows: index out of range");
    std::copy_n(av.data() + index[i] * n, n, out.data() + i * n);
  }
  NodePtr pa = a.node();
  std::vector<std::size_t> idx(index.begin(), index.end());
  return finish(make_node({index.size(), n}, std::move(out)), {&a},
                [pa, idx = std::move(idx), n](detail::Node& self) {
                  auto& ga = pa->ensure_grad();
                  for (std::size_t i = 0; i < idx.size(); ++i) {
                    for (std::size_t j = 0; j < n; ++j) ga[idx[i] * n + j] += self.grad[i * n + j];
                  }
                });
}

Tensor place_rows(const Tensor& base, const Tensor& rows, std::span<const std::size_t> index) {
  require_matrix(base, "place_rows");
  require_matrix(rows, "place_rows");
  const std::size_t n = base.cols();
  if (rows.cols() != n || rows.rows() != index.size()) {
    throw DimensionError("place_rows: rows do not match index/base width");
  }
  auto bv = base.data();
  auto rv = rows.data();
  std::vector<double> out(bv.begin(), bv.end());
  std::vector<char> replaced(base.rows(), 0);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= base.rows()) throw DimensionError("place_rows: index out of range");
    if (replaced[index[i]]) throw DimensionError("place_rows: duplicate index");
    replaced[index[i]] = 1;
    std::copy_n(rv.data() + i * n, n, out.data() + index[i] * n);
  }
  NodePtr pb = base.node(), pr = rows.node();
  std::vector<std::size_t> idx(index.begin(), index.end());
  return finish(make_node(base.shape(), std::move(out)), {&base, &rows},
                [pb, pr, n, idx = std::move(idx), replaced = std::move(replaced)](detail::Node& self) {
                  if (pb->requires_grad) {
                    auto& gb = pb->ensure_grad();
                    for (std::size_t r = 0; r < replaced.size(); ++r) {
                      if (replaced[r]) continue;
                      for (std::size_t j = 0; j < n; ++j) gb[r * n + j] += self.grad[r * n + j];
                    }
                  }
                  if (pr->requires_grad) {
                    auto& gr = pr->ensure_grad();
                    for (std::size_t i = 0; i < idx.size(); ++i) {
                      for (std::size_t j = 0; j < n; ++j) gr[i * n + j] += self.grad[idx[i] * n + j];
                    }
                  }
                });
}

Tensor repeat_rows(const Tensor& a, std::span<const std::size_t> counts) {
  require_matrix(a, "repeat_rows");
  if (counts.size() != a.rows()) throw DimensionError("repeat_rows: one count per row required");
  const std::size_t n = a.cols();
  std::size_t total = 0;
  for (auto c : counts) total += c;
  auto av = a.data();
  std::vector<double> out(total * n);
  std::size_t o = 0;
  for (std::size_t s = 0; s < counts.size(); ++s) {
    for (std::size_t c = 0; c < counts[s]; ++c, ++o) std::copy_n(av.data() + s * n, n, out.data() + o * n);
  }
  NodePtr pa = a.node();
  std::vector<std::size_t> cnt(counts.begin(), counts.end());
  return finish(make_node({total, n}, std::move(out)), {&a},
                [pa, cnt = std::move(cnt), n](detail::Node& self) {
                  auto& ga = pa->ensure_grad();
                  std::size_t o = 0;
                  for (std::size_t s = 0; s < cnt.size(); ++s) {
                    for (std::size_t c = 0; c < cnt[s]; ++c, ++o) {
                      for (std::size_t j = 0; j < n; ++j) ga[s * n + j] += self.grad[o * n + j];
                    }
                  }
                });
}

// ---- attention --------------------------------------------------------------

Tensor rope(const Tensor& a, std::span<const double> angles, std::size_t heads) {
  require_matrix(a, "rope");
  const std::size_t rows = a.rows(), d = a.cols();
  if (heads == 0 || d % heads != 0 || (d / heads) % 2 != 0) {
    throw DimensionError("rope: head dim must be even and divide the width");
  }
  const std::size_t hd = d / heads, pairs = hd / 2;
  if (angles.size() != rows * pairs) throw DimensionError("rope: angle table has wrong size");
  std::vector<double> cs(rows * pairs), sn(rows * pairs);
  for (std::size_t i = 0; i < cs.size(); ++i) {
    cs[i] = std::cos(angles[i]);
    sn[i] = std::sin(angles[i]);
  }
  auto av = a.data();
  std::vector<double> out(av.size());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t p = 0; p < pairs; ++p) {
        const std::size_t i0 = r * d + h * hd + 2 * p;
        const double c = cs[r * pairs + p], s = sn[r * pairs + p];
        out[i0] = c * av[i0] - s * av[i0 + 1];
        out[i0 + 1] = s * av[i0] + c * av[i0 + 1];
      }
    }
  }
  NodePtr pa = a.node();
  return finish(make_node(a.shape(), std::move(out)), {&a},
                [pa, rows, d, heads, hd, pairs, cs = std::move(cs), sn = std::move(sn)](detail::Node& self) {
                  auto& ga = pa->ensure_grad();
                  const auto& g = self.grad;
                  for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t h = 0; h < heads; ++h) {
                      for (std::size_t p = 0; p < pairs; ++p) {
                        const std::size_t i0 = r * d + h * hd + 2 * p;
                        const double c = cs[r * pairs + p], s = sn[r * pairs + p];
                        ga[i0] += c * g[i0] + s * g[i0 + 1];
                        ga[i0 + 1] += -s * g[i0] + c * g[i0 + 1];
                      }
                    }
                  }
                });
}

Tensor segmented_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                           std::size_t heads, std::span<const std::size_t> offsets) {
  require_matrix(q, "attention");
  require_matrix(k, "attention");
  require_matrix(v, "attention");
  if (q.shape() != k.shape() || q.shape() != v.shape()) {
    throw DimensionError("attention: q, k, v shapes differ");
  }
  const std::size_t n = q.rows(), d = q.cols();
  if (heads == 0 || d % heads != 0) throw DimensionError("attention: heads must divide width");
  if (offsets.empty() || offsets.front() != 0 || offsets.back() != n) {
    throw DimensionError("attention: offsets must span [0, rows]");
  }
  const std::size_t hd = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  const double* Q = q.data().data();
  const double* K = k.data().data();
  const double* V = v.data().data();

  // Probabilities per (segment, head) stored back to back for backward.
  std::vector<std::size_t> prob_offset(offsets.size());
  std::size_t total = 0;
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
    if (offsets[s + 1] < offsets[s]) throw DimensionError("attention: offsets must be sorted");
    prob_offset[s] = total;
    const std::size_t len = offsets[s + 1] - offsets[s];
    total += heads * len * len;
  }
  std::vector<double> probs(total);
  std::vector<double> out(n * d, 0.0);
  std::uint64_t macs = 0;
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
    const std::size_t b = offsets[s], len = offsets[s + 1] - b;
    macs += 2ULL * len * len * d;
    for (std::size_t h = 0; h < heads; ++h) {
      double* P = probs.data() + prob_offset[s] + h * len * len;
      for (std::size_t i = 0; i < len; ++i) {
        const double* qi = Q + (b + i) * d + h * hd;
        double mx = -INFINITY;
        for (std::size_t j = 0; j < len; ++j) {
          const double* kj = K + (b + j) * d + h * hd;
          double acc = 0.0;
          for (std::size_t c = 0; c < hd; ++c) acc += qi[c] * kj[c];
          P[i * len + j] = acc * inv_sqrt;
          mx = std::max(mx, P[i * len + j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < len; ++j) z += (P[i * len + j] = std::exp(P[i * len + j] - mx));
        double* oi = out.data() + (b + i) * d + h * hd;
        for (std::size_t j = 0; j < len; ++j) {
          P[i * len + j] /= z;
          const double* vj = V + (b + j) * d + h * hd;
          for (std::size_t c = 0; c < hd; ++c) oi[c] += P[i * len + j] * vj[c];
        }
      }
    }
  }
  count_macs(macs);
  NodePtr pq = q.node(), pk = k.node(), pv = v.node();
  std::vector<std::size_t> offs(offsets.begin(), offsets.end());
  return finish(
      make_node({n, d}, std::move(out)), {&q, &k, &v},
      [pq, pk, pv, heads, hd, d, inv_sqrt, offs = std::move(offs), prob_offset = std::move(prob_offset),
       probs = std::move(probs)](detail::Node& self) {
        const double* G = self.grad.data();
        const double* Q = pq->value.data();
        const double* K = pk->value.data();
        const double* V = pv->value.data();
        double* gq = pq->requires_grad ? pq->ensure_grad().data() : nullptr;
        double* gk = pk->requires_grad ? pk->ensure_grad().data() : nullptr;
        double* gv = pv->requires_grad ? pv->ensure_grad().data() : nullptr;
        std::vector<double> dS;
        for (std::size_t s = 0; s + 1 < offs.size(); ++s) {
          const std::size_t b = offs[s], len = offs[s + 1] - b;
          dS.assign(len * len, 0.0);
          for (std::size_t h = 0; h < heads; ++h) {
            const double* P = probs.data() + prob_offset[s] + h * len * len;
            for (std::size_t i = 0; i < len; ++i) {
              const double* gi = G + (b + i) * d + h * hd;
              double dot = 0.0;
              for (std::size_t j = 0; j < len; ++j) {
                const double* vj = V + (b + j) * d + h * hd;
                double dp = 0.0;
                for (std::size_t c = 0; c < hd; ++c) dp += gi[c] * vj[c];
                dS[i * len + j] = dp;
                dot += dp * P[i * len + j];
                if (gv) {
                  double* gvj = gv + (b + j) * d + h * hd;
                  for (std::size_t c = 0; c < hd; ++c) gvj[c] += P[i * len + j] * gi[c];
                }
              }
              for (std::size_t j = 0; j < len; ++j) {
                dS[i * len + j] = P[i * len + j] * (dS[i * len + j] - dot) * inv_sqrt;
              }
            }
            for (std::size_t i = 0; i < len; ++i) {
              const double* qi = Q + (b + i) * d + h * hd;
              for (std::size_t j = 0; j < len; ++j) {
                const double ds = dS[i * len + j];
                if (ds == 0.0) continue;
                const double* kj = K + (b + j) * d + h * hd;
                if (gq) {
                  double* gqi = gq + (b + i) * d + h * hd;
                  for (std::size_t c = 0; c < hd; ++c) gqi[c] += ds * kj[c];
                }
                if (gk) {
                  double* gkj = gk + (b + j) * d + h * hd;
                  for (std::size_t c = 0; c < hd; ++c) gkj[c] += ds * qi[c];
                }
              }
            }
          }
        }
      });
}

}  // namespace sg
