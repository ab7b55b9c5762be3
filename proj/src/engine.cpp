#include "mclstm/engine.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_set>

namespace mclstm::engine {
namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMajor>;
using ConstMatMap = Eigen::Map<const RowMajor>;

thread_local bool g_grad_enabled = true;

[[noreturn]] void shape_fail(std::string_view op, const Shape& a, const Shape& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                       shape_str(b));
}

// (outer, n, inner) decomposition of a shape around `axis`.
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t n = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis, std::string_view op) {
  if (axis >= shape.size()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for shape " + shape_str(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

// Dense products on row-major buffers. Blocked GEMM only pays off once the
// operands are reasonably large; the recurrent cells mostly multiply skinny
// (B x 2) or (B x 10) blocks, where plain loops with a contiguous inner loop win.
bool use_gemm(std::size_t m, std::size_t k, std::size_t n) {
  return k > 16 && m * k * n > 65536;
}

// C (m x n) (+)= A (m x k) . B (k x n)
void gemm_nn(double* __restrict__ c, const double* __restrict__ a, const double* __restrict__ b, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
  const auto M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(k),
             N = static_cast<Eigen::Index>(n);
  if (use_gemm(m, k, n)) {
    MatMap cm(c, M, N);
    if (accumulate) cm.noalias() += ConstMatMap(a, M, K) * ConstMatMap(b, K, N);
    else cm.noalias() = ConstMatMap(a, M, K) * ConstMatMap(b, K, N);
    return;
  }
  if (!accumulate) std::fill_n(c, m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C (k x n) += A (m x k)^T . G (m x n)
void gemm_tn(double* __restrict__ c, const double* __restrict__ a, const double* __restrict__ g, std::size_t m, std::size_t k,
             std::size_t n) {
  const auto M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(k),
             N = static_cast<Eigen::Index>(n);
  if (use_gemm(k, m, n)) {
    MatMap(c, K, N).noalias() += ConstMatMap(a, M, K).transpose() * ConstMatMap(g, M, N);
    return;
  }
  for (std::size_t i = 0; i < m; ++i) {
    const double* gi = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * gi[j];
    }
  }
}

// C (m x k) (+)= G (m x n) . B (k x n)^T
void gemm_nt(double* __restrict__ c, const double* __restrict__ g, const double* __restrict__ b, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
  const auto M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(k),
             N = static_cast<Eigen::Index>(n);
  if (use_gemm(m, n, k)) {
    MatMap cm(c, M, K);
    if (accumulate) cm.noalias() += ConstMatMap(g, M, N) * ConstMatMap(b, K, N).transpose();
    else cm.noalias() = ConstMatMap(g, M, N) * ConstMatMap(b, K, N).transpose();
    return;
  }
  for (std::size_t i = 0; i < m; ++i) {
    const double* gi = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double* bp = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += gi[j] * bp[j];
      c[i * k + p] = accumulate ? c[i * k + p] + acc : acc;
    }
  }
}

bool broadcastable(const Shape& a, const Shape& b) {
  if (shape_size(b) == 1) return true;
  if (b.size() > a.size()) return false;
  return std::equal(b.begin(), b.end(), a.end() - static_cast<std::ptrdiff_t>(b.size()));
}

std::shared_ptr<Node> make_node(OpKind op, Tensor value, std::vector<Var> inputs) {
  auto node = std::make_shared<Node>();
  node->op = op;
  node->value = std::move(value);
  if (g_grad_enabled) {
    const bool any = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Var& v) { return v.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      node->parents.reserve(inputs.size());
      for (auto& in : inputs) node->parents.push_back(in.node());
    }
  }
  return node;
}

Tensor& grad_of(Node& node) {
  if (node.grad.size() != node.value.size() || node.grad.shape() != node.value.shape()) {
    node.grad = Tensor(node.value.shape(), 0.0);
  }
  return node.grad;
}

// Sums a full-shape gradient down to a broadcast operand's shape.
void accumulate_broadcast(Node& target, const Tensor& g, double sign) {
  Tensor& tg = grad_of(target);
  const std::size_t inner = tg.size();
  if (inner == g.size()) {
    for (std::size_t i = 0; i < inner; ++i) tg[i] += sign * g[i];
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) tg[i % inner] += sign * g[i];
}

template <typename F>
Tensor map_unary(const Tensor& x, F f) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return out;
}

template <typename F>
Tensor map_binary(const Tensor& a, const Tensor& b, F f) {
  Tensor out(a.shape());
  const std::size_t inner = b.size();
  if (inner == a.size()) {
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
  } else if (inner == 1) {
    const double bv = b[0];
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], bv);
  } else {
    for (std::size_t base = 0; base < a.size(); base += inner) {
      for (std::size_t j = 0; j < inner; ++j) out[base + j] = f(a[base + j], b[j]);
    }
  }
  return out;
}

Var binary(OpKind op, const Var& a, const Var& b) {
  if (!broadcastable(a.shape(), b.shape())) shape_fail(op_name(op), a.shape(), b.shape());
  Tensor value;
  switch (op) {
    case OpKind::Add: value = map_binary(a.value(), b.value(), std::plus<>()); break;
    case OpKind::Sub: value = map_binary(a.value(), b.value(), std::minus<>()); break;
    case OpKind::Mul: value = map_binary(a.value(), b.value(), std::multiplies<>()); break;
    case OpKind::Div: value = map_binary(a.value(), b.value(), std::divides<>()); break;
    default: throw ContractError("not a binary op");
  }
  return Var(make_node(op, std::move(value), {a, b}));
}

Var unary(OpKind op, const Var& x, Tensor value) {
  return Var(make_node(op, std::move(value), {x}));
}

void backward_node(Node& node) {
  const Tensor& g = node.grad;
  auto& ps = node.parents;
  auto wants = [&](std::size_t i) { return ps.size() > i && ps[i]->requires_grad; };

  switch (node.op) {
    case OpKind::Leaf:
      break;
    case OpKind::Add:
    case OpKind::Sub: {
      if (wants(0)) accumulate_broadcast(*ps[0], g, 1.0);
      if (wants(1)) accumulate_broadcast(*ps[1], g, node.op == OpKind::Add ? 1.0 : -1.0);
      break;
    }
    case OpKind::Mul: {
      const Tensor& a = ps[0]->value;
      const Tensor& b = ps[1]->value;
      if (wants(0)) {
        Tensor ga = map_binary(g, b, std::multiplies<>());
        accumulate_broadcast(*ps[0], ga, 1.0);
      }
      if (wants(1)) {
        Tensor gb(g.shape());
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] = g[i] * a[i];
        accumulate_broadcast(*ps[1], gb, 1.0);
      }
      break;
    }
    case OpKind::Div: {
      const Tensor& b = ps[1]->value;
      if (wants(0)) {
        Tensor ga = map_binary(g, b, std::divides<>());
        accumulate_broadcast(*ps[0], ga, 1.0);
      }
      if (wants(1)) {
        // d(a/b)/db = -a / b^2 = -out / b
        Tensor q = map_binary(node.value, b, std::divides<>());
        Tensor gb(g.shape());
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] = -g[i] * q[i];
        accumulate_broadcast(*ps[1], gb, 1.0);
      }
      break;
    }
    case OpKind::Affine: {
      Tensor& gx = grad_of(*ps[0]);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += node.alpha * g[i];
      break;
    }
    case OpKind::Matmul: {
      const Tensor& a = ps[0]->value;
      const Tensor& b = ps[1]->value;
      const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
      if (wants(0)) {
        gemm_nt(grad_of(*ps[0]).data().data(), g.data().data(), b.data().data(), m, k, n, true);
      }
      if (wants(1)) {
        gemm_tn(grad_of(*ps[1]).data().data(), a.data().data(), g.data().data(), m, k, n);
      }
      break;
    }
    case OpKind::BatchMatVec: {
      const Tensor& a = ps[0]->value;
      const Tensor& v = ps[1]->value;
      const std::size_t batch = v.dim(0), q = v.dim(1);
      const std::size_t p = g.dim(1);
      if (a.rank() == 2) {
        if (wants(0)) {
          gemm_tn(grad_of(*ps[0]).data().data(), g.data().data(), v.data().data(), batch, p, q);
        }
        if (wants(1)) {
          gemm_nn(grad_of(*ps[1]).data().data(), g.data().data(), a.data().data(), batch, p, q, true);
        }
      } else {
        if (wants(0)) {
          Tensor& ga = grad_of(*ps[0]);
          for (std::size_t s = 0; s < batch; ++s) {
            for (std::size_t r = 0; r < p; ++r) {
              const double gr = g[s * p + r];
              double* row = &ga[(s * p + r) * q];
              const double* vs = &v[s * q];
              for (std::size_t c = 0; c < q; ++c) row[c] += gr * vs[c];
            }
          }
        }
        if (wants(1)) {
          Tensor& gv = grad_of(*ps[1]);
          for (std::size_t s = 0; s < batch; ++s) {
            for (std::size_t r = 0; r < p; ++r) {
              const double gr = g[s * p + r];
              const double* row = &a[(s * p + r) * q];
              double* out = &gv[s * q];
              for (std::size_t c = 0; c < q; ++c) out[c] += gr * row[c];
            }
          }
        }
      }
      break;
    }
    case OpKind::Sigmoid: {
      Tensor& gx = grad_of(*ps[0]);
      const Tensor& y = node.value;
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
      break;
    }
    case OpKind::Tanh: {
      Tensor& gx = grad_of(*ps[0]);
      const Tensor& y = node.value;
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (1.0 - y[i] * y[i]);
      break;
    }
    case OpKind::Relu: {
      Tensor& gx = grad_of(*ps[0]);
      const Tensor& x = ps[0]->value;
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += x[i] > 0.0 ? g[i] : 0.0;
      break;
    }
    case OpKind::Exp: {
      Tensor& gx = grad_of(*ps[0]);
      const Tensor& y = node.value;
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i];
      break;
    }
    case OpKind::Log: {
      Tensor& gx = grad_of(*ps[0]);
      const Tensor& x = ps[0]->value;
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / x[i];
      break;
    }
    case OpKind::Sqrt: {
      Tensor& gx = grad_of(*ps[0]);
      const Tensor& y = node.value;
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += 0.5 * g[i] / y[i];
      break;
    }
    case OpKind::Softmax: {
      Tensor& gx = grad_of(*ps[0]);
      const Tensor& y = node.value;
      const AxisSplit s = split_axis(y.shape(), node.axis, "softmax");
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t in = 0; in < s.inner; ++in) {
          const std::size_t base = o * s.n * s.inner + in;
          double dot = 0.0;
          for (std::size_t k = 0; k < s.n; ++k) dot += g[base + k * s.inner] * y[base + k * s.inner];
          for (std::size_t k = 0; k < s.n; ++k) {
            const std::size_t idx = base + k * s.inner;
            gx[idx] += y[idx] * (g[idx] - dot);
          }
        }
      }
      break;
    }
    case OpKind::L1Normalize: {
      Tensor& gx = grad_of(*ps[0]);
      const Tensor& x = ps[0]->value;
      const AxisSplit s = split_axis(x.shape(), node.axis, "l1_normalize");
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t in = 0; in < s.inner; ++in) {
          const std::size_t base = o * s.n * s.inner + in;
          double norm = 0.0;
          double gx_dot = 0.0;
          for (std::size_t k = 0; k < s.n; ++k) {
            const std::size_t idx = base + k * s.inner;
            norm += std::abs(x[idx]);
            gx_dot += g[idx] * x[idx];
          }
          if (norm == 0.0) continue;
          const double inv = 1.0 / norm;
          const double corr = gx_dot * inv * inv;
          for (std::size_t k = 0; k < s.n; ++k) {
            const std::size_t idx = base + k * s.inner;
            const double sign = x[idx] > 0.0 ? 1.0 : (x[idx] < 0.0 ? -1.0 : 0.0);
            gx[idx] += g[idx] * inv - sign * corr;
          }
        }
      }
      break;
    }
    case OpKind::Sum: {
      Tensor& gx = grad_of(*ps[0]);
      const double g0 = g[0];
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g0;
      break;
    }
    case OpKind::SumAxis: {
      Tensor& gx = grad_of(*ps[0]);
      const AxisSplit s = split_axis(ps[0]->value.shape(), node.axis, "sum_axis");
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t k = 0; k < s.n; ++k) {
          for (std::size_t in = 0; in < s.inner; ++in) {
            gx[(o * s.n + k) * s.inner + in] += g[o * s.inner + in];
          }
        }
      }
      break;
    }
    case OpKind::Concat: {
      const AxisSplit out = split_axis(node.value.shape(), node.axis, "concat");
      std::size_t offset = 0;
      for (auto& parent : ps) {
        const std::size_t n = parent->value.dim(node.axis);
        if (parent->requires_grad) {
          Tensor& gp = grad_of(*parent);
          for (std::size_t o = 0; o < out.outer; ++o) {
            for (std::size_t k = 0; k < n; ++k) {
              for (std::size_t in = 0; in < out.inner; ++in) {
                gp[(o * n + k) * out.inner + in] +=
                    g[(o * out.n + offset + k) * out.inner + in];
              }
            }
          }
        }
        offset += n;
      }
      break;
    }
    case OpKind::Slice: {
      Tensor& gx = grad_of(*ps[0]);
      const AxisSplit src = split_axis(ps[0]->value.shape(), node.axis, "slice");
      const std::size_t len = node.value.dim(node.axis);
      for (std::size_t o = 0; o < src.outer; ++o) {
        for (std::size_t k = 0; k < len; ++k) {
          for (std::size_t in = 0; in < src.inner; ++in) {
            gx[(o * src.n + node.start + k) * src.inner + in] += g[(o * len + k) * src.inner + in];
          }
        }
      }
      break;
    }
    case OpKind::Reshape: {
      Tensor& gx = grad_of(*ps[0]);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      break;
    }
  }
}

}  // namespace

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Div: return "div";
    case OpKind::Affine: return "affine";
    case OpKind::Matmul: return "matmul";
    case OpKind::BatchMatVec: return "batch_matvec";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Tanh: return "tanh";
    case OpKind::Relu: return "relu";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::Sqrt: return "sqrt";
    case OpKind::Softmax: return "softmax";
    case OpKind::L1Normalize: return "l1_normalize";
    case OpKind::Sum: return "sum";
    case OpKind::SumAxis: return "sum_axis";
    case OpKind::Concat: return "concat";
    case OpKind::Slice: return "slice";
    case OpKind::Reshape: return "reshape";
  }
  return "unknown";
}

Node::~Node() {
  // Release long parent chains iteratively; a recursive cascade of shared_ptr
  // destructors overflows the stack on long unrolled sequences.
  std::vector<std::shared_ptr<Node>> pending = std::move(parents);
  while (!pending.empty()) {
    std::shared_ptr<Node> next = std::move(pending.back());
    pending.pop_back();
    if (next && next.use_count() == 1) {
      for (auto& p : next->parents) pending.push_back(std::move(p));
      next->parents.clear();
    }
  }
}

Tensor Var::grad() const {
  if (node_->grad.shape() == node_->value.shape() && node_->grad.size() == node_->value.size()) {
    return node_->grad;
  }
  return Tensor(node_->value.shape(), 0.0);
}

Var constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var parameter(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

Var add(const Var& a, const Var& b) { return binary(OpKind::Add, a, b); }
Var sub(const Var& a, const Var& b) { return binary(OpKind::Sub, a, b); }
Var mul(const Var& a, const Var& b) { return binary(OpKind::Mul, a, b); }
Var div(const Var& a, const Var& b) { return binary(OpKind::Div, a, b); }

Var affine(const Var& x, double alpha, double beta) {
  Tensor value = map_unary(x.value(), [=](double v) { return alpha * v + beta; });
  auto node = make_node(OpKind::Affine, std::move(value), {x});
  node->alpha = alpha;
  node->beta = beta;
  return Var(std::move(node));
}

Var matmul(const Var& a, const Var& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) shape_fail("matmul", sa, sb);
  Tensor out({sa[0], sb[1]});
  gemm_nn(out.data().data(), a.value().data().data(), b.value().data().data(), sa[0], sa[1], sb[1], false);
  return Var(make_node(OpKind::Matmul, std::move(out), {a, b}));
}

Var batch_matvec(const Var& a, const Var& v) {
  const Shape& sa = a.shape();
  const Shape& sv = v.shape();
  if (sv.size() != 2) shape_fail("batch_matvec", sa, sv);
  const std::size_t batch = sv[0], q = sv[1];
  if (sa.size() == 2) {
    if (sa[1] != q) shape_fail("batch_matvec", sa, sv);
    const std::size_t p = sa[0];
    Tensor out({batch, p});
    gemm_nt(out.data().data(), v.value().data().data(), a.value().data().data(), batch, p, q, false);
    return Var(make_node(OpKind::BatchMatVec, std::move(out), {a, v}));
  }
  if (sa.size() != 3 || sa[0] != batch || sa[2] != q) shape_fail("batch_matvec", sa, sv);
  const std::size_t p = sa[1];
  Tensor out({batch, p});
  const Tensor& av = a.value();
  const Tensor& vv = v.value();
  for (std::size_t s = 0; s < batch; ++s) {
    const double* vs = &vv[s * q];
    for (std::size_t r = 0; r < p; ++r) {
      const double* row = &av[(s * p + r) * q];
      double acc = 0.0;
      for (std::size_t c = 0; c < q; ++c) acc += row[c] * vs[c];
      out[s * p + r] = acc;
    }
  }
  return Var(make_node(OpKind::BatchMatVec, std::move(out), {a, v}));
}

Var sigmoid(const Var& x) {
  return unary(OpKind::Sigmoid, x, map_unary(x.value(), [](double v) {
                 if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
                 const double e = std::exp(v);
                 return e / (1.0 + e);
               }));
}

Var tanh(const Var& x) {
  return unary(OpKind::Tanh, x, map_unary(x.value(), [](double v) { return std::tanh(v); }));
}

Var relu(const Var& x) {
  return unary(OpKind::Relu, x, map_unary(x.value(), [](double v) { return v > 0.0 ? v : 0.0; }));
}

Var exp(const Var& x) {
  return unary(OpKind::Exp, x, map_unary(x.value(), [](double v) { return std::exp(v); }));
}

Var log(const Var& x) {
  return unary(OpKind::Log, x, map_unary(x.value(), [](double v) { return std::log(v); }));
}

Var sqrt(const Var& x) {
  return unary(OpKind::Sqrt, x, map_unary(x.value(), [](double v) { return std::sqrt(v); }));
}

Var softmax(const Var& x, std::size_t axis) {
  const Tensor& xv = x.value();
  const AxisSplit s = split_axis(xv.shape(), axis, "softmax");
  Tensor out(xv.shape());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.n * s.inner + in;
      double hi = xv[base];
      for (std::size_t k = 1; k < s.n; ++k) hi = std::max(hi, xv[base + k * s.inner]);
      double total = 0.0;
      for (std::size_t k = 0; k < s.n; ++k) {
        const std::size_t idx = base + k * s.inner;
        out[idx] = std::exp(xv[idx] - hi);
        total += out[idx];
      }
      const double inv = 1.0 / total;
      for (std::size_t k = 0; k < s.n; ++k) out[base + k * s.inner] *= inv;
    }
  }
  auto node = make_node(OpKind::Softmax, std::move(out), {x});
  node->axis = axis;
  return Var(std::move(node));
}

Var l1_normalize(const Var& x, std::size_t axis) {
  const Tensor& xv = x.value();
  const AxisSplit s = split_axis(xv.shape(), axis, "l1_normalize");
  Tensor out(xv.shape());
  const double uniform = 1.0 / static_cast<double>(s.n);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.n * s.inner + in;
      double norm = 0.0;
      for (std::size_t k = 0; k < s.n; ++k) norm += std::abs(xv[base + k * s.inner]);
      for (std::size_t k = 0; k < s.n; ++k) {
        const std::size_t idx = base + k * s.inner;
        out[idx] = norm == 0.0 ? uniform : xv[idx] / norm;
      }
    }
  }
  auto node = make_node(OpKind::L1Normalize, std::move(out), {x});
  node->axis = axis;
  return Var(std::move(node));
}

Var sum(const Var& x) {
  return Var(make_node(OpKind::Sum, Tensor::scalar(mclstm::sum(x.value())), {x}));
}

Var mean(const Var& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.value().size()));
}

Var sum_axis(const Var& x, std::size_t axis) {
  const Tensor& xv = x.value();
  const AxisSplit s = split_axis(xv.shape(), axis, "sum_axis");
  Shape shape = xv.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor out(shape);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t k = 0; k < s.n; ++k) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        out[o * s.inner + in] += xv[(o * s.n + k) * s.inner + in];
      }
    }
  }
  auto node = make_node(OpKind::SumAxis, std::move(out), {x});
  node->axis = axis;
  return Var(std::move(node));
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& first = parts.front().shape();
  Shape shape = first;
  split_axis(first, axis, "concat");
  shape[axis] = 0;
  for (const Var& p : parts) {
    const Shape& sp = p.shape();
    if (sp.size() != first.size()) shape_fail("concat", first, sp);
    for (std::size_t i = 0; i < sp.size(); ++i) {
      if (i != axis && sp[i] != first[i]) shape_fail("concat", first, sp);
    }
    shape[axis] += sp[axis];
  }
  Tensor out(shape);
  const AxisSplit so = split_axis(shape, axis, "concat");
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Tensor& pv = p.value();
    const std::size_t n = pv.dim(axis);
    for (std::size_t o = 0; o < so.outer; ++o) {
      std::copy_n(&pv[o * n * so.inner], n * so.inner, &out[(o * so.n + offset) * so.inner]);
    }
    offset += n;
  }
  auto node = make_node(OpKind::Concat, std::move(out), std::vector<Var>(parts.begin(), parts.end()));
  node->axis = axis;
  return Var(std::move(node));
}

Var slice(const Var& x, std::size_t axis, std::size_t start, std::size_t length) {
  const Tensor& xv = x.value();
  const AxisSplit s = split_axis(xv.shape(), axis, "slice");
  if (start + length > s.n) {
    throw DimensionError("slice: range [" + std::to_string(start) + ", " +
                         std::to_string(start + length) + ") exceeds axis of shape " +
                         shape_str(xv.shape()));
  }
  Shape shape = xv.shape();
  shape[axis] = length;
  Tensor out(shape);
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(&xv[(o * s.n + start) * s.inner], length * s.inner, &out[o * length * s.inner]);
  }
  auto node = make_node(OpKind::Slice, std::move(out), {x});
  node->axis = axis;
  node->start = start;
  return Var(std::move(node));
}

Var reshape(const Var& x, Shape shape) {
  return Var(make_node(OpKind::Reshape, x.value().reshaped(std::move(shape)), {x}));
}

Var primitive_forward(OpKind kind, std::span<const Var> in, const OpAttrs& attrs) {
  auto need = [&](std::size_t n) {
    if (in.size() != n) {
      throw ContractError(std::string(op_name(kind)) + " expects " + std::to_string(n) +
                          " inputs, got " + std::to_string(in.size()));
    }
  };
  switch (kind) {
    case OpKind::Leaf: need(1); return constant(in[0].value());
    case OpKind::Add: need(2); return add(in[0], in[1]);
    case OpKind::Sub: need(2); return sub(in[0], in[1]);
    case OpKind::Mul: need(2); return mul(in[0], in[1]);
    case OpKind::Div: need(2); return div(in[0], in[1]);
    case OpKind::Affine: need(1); return affine(in[0], attrs.alpha, attrs.beta);
    case OpKind::Matmul: need(2); return matmul(in[0], in[1]);
    case OpKind::BatchMatVec: need(2); return batch_matvec(in[0], in[1]);
    case OpKind::Sigmoid: need(1); return sigmoid(in[0]);
    case OpKind::Tanh: need(1); return tanh(in[0]);
    case OpKind::Relu: need(1); return relu(in[0]);
    case OpKind::Exp: need(1); return exp(in[0]);
    case OpKind::Log: need(1); return log(in[0]);
    case OpKind::Sqrt: need(1); return sqrt(in[0]);
    case OpKind::Softmax: need(1); return softmax(in[0], attrs.axis);
    case OpKind::L1Normalize: need(1); return l1_normalize(in[0], attrs.axis);
    case OpKind::Sum: need(1); return sum(in[0]);
    case OpKind::SumAxis: need(1); return sum_axis(in[0], attrs.axis);
    case OpKind::Concat: return concat(in, attrs.axis);
    case OpKind::Slice: need(1); return slice(in[0], attrs.axis, attrs.start, attrs.length);
    case OpKind::Reshape: need(1); return reshape(in[0], attrs.shape);
  }
  throw ContractError("unknown primitive");
}

void backward(const Var& loss) {
  if (loss.value().size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order (parents before children).
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  grad_of(*loss.node())[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->grad.size() == 0 && node->value.size() != 0) continue;  // unreachable gradient
    backward_node(*node);
  }
}

Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f,
                                  const Tensor& x, double eps) {
  if (!(eps > 0.0)) throw ContractError("finite_difference_gradient: eps must be positive");
  Tensor grad(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double up = f(probe);
    probe[i] = orig - eps;
    const double down = f(probe);
    probe[i] = orig;
    grad[i] = (up - down) / (2.0 * eps);
  }
  return grad;
}

}  // namespace mclstm::engine
