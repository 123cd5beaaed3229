#include "esbn/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

namespace esbn {

namespace {

template <typename S>
using NodeT = detail::Node<S>;
template <typename S>
using BackwardFn = std::function<void(NodeT<S>&)>;

template <typename S>
using MatR = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using CMap = Eigen::Map<const MatR<S>>;
template <typename S>
using MMap = Eigen::Map<MatR<S>>;

[[noreturn]] void fail(const char* op, const std::string& msg) {
  throw TensorError(std::string(op) + ": " + msg);
}

template <typename S>
Tensor<S> make_result(const char* op, Shape shape, std::vector<S> value, const std::vector<Tensor<S>>& inputs,
                      BackwardFn<S> backward) {
  for (const auto& v : value) {
    if (!std::isfinite(v)) fail(op, "non-finite value in output");
  }
  auto node = std::make_shared<NodeT<S>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  bool track = false;
  if (grad_enabled()) {
    for (const auto& in : inputs) track = track || (in.defined() && in.requires_grad());
  }
  if (track) {
    node->requires_grad = true;
    for (const auto& in : inputs) {
      if (in.defined()) node->parents.push_back(in.node());
    }
    node->backward = std::move(backward);
  }
  return Tensor<S>(std::move(node));
}

template <typename S>
std::vector<S>* grad_of(const std::shared_ptr<NodeT<S>>& n) {
  return n->requires_grad ? &n->ensure_grad() : nullptr;
}

// Splits a shape around `axis` into (outer, extent, inner) for strided loops.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

void check_axis(const char* op, const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) fail(op, "axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
}

// ---------------------------------------------------------------------------
// Broadcasting

struct Broadcast {
  Shape out;
  bool same = false;
  std::vector<std::size_t> ia, ib;
};

Broadcast plan_broadcast(const char* op, const Shape& a, const Shape& b) {
  Broadcast p;
  if (a == b) {
    p.out = a;
    p.same = true;
    return p;
  }
  const std::size_t rank = std::max(a.size(), b.size());
  Shape pa(rank, 1), pb(rank, 1);
  std::copy(a.begin(), a.end(), pa.begin() + (rank - a.size()));
  std::copy(b.begin(), b.end(), pb.begin() + (rank - b.size()));
  p.out.resize(rank);
  for (std::size_t d = 0; d < rank; ++d) {
    if (pa[d] != pb[d] && pa[d] != 1 && pb[d] != 1) {
      fail(op, "cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    p.out[d] = std::max(pa[d], pb[d]);
  }
  // Strides of the padded inputs, zeroed on broadcast axes.
  std::vector<std::size_t> sa(rank), sb(rank);
  std::size_t ra = 1, rb = 1;
  for (std::size_t d = rank; d-- > 0;) {
    sa[d] = pa[d] == 1 ? 0 : ra;
    sb[d] = pb[d] == 1 ? 0 : rb;
    ra *= pa[d];
    rb *= pb[d];
  }
  const std::size_t n = shape_numel(p.out);
  p.ia.resize(n);
  p.ib.resize(n);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t oa = 0, ob = 0;
  for (std::size_t i = 0; i < n; ++i) {
    p.ia[i] = oa;
    p.ib[i] = ob;
    for (std::size_t d = rank; d-- > 0;) {
      if (++idx[d] < p.out[d]) {
        oa += sa[d];
        ob += sb[d];
        break;
      }
      oa -= sa[d] * (p.out[d] - 1);
      ob -= sb[d] * (p.out[d] - 1);
      idx[d] = 0;
    }
  }
  return p;
}

template <typename S, typename F, typename DA, typename DB>
Tensor<S> binary(const char* op, const Tensor<S>& a, const Tensor<S>& b, F f, DA da, DB db) {
  auto plan = std::make_shared<Broadcast>(plan_broadcast(op, a.shape(), b.shape()));
  const auto av = a.data();
  const auto bv = b.data();
  const std::size_t n = shape_numel(plan->out);
  std::vector<S> out(n);
  if (plan->same) {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i], bv[i]);
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(av[plan->ia[i]], bv[plan->ib[i]]);
  }
  auto an = a.node();
  auto bn = b.node();
  return make_result<S>(op, plan->out, std::move(out), {a, b}, [an, bn, plan, da, db](NodeT<S>& self) {
    const auto& g = self.grad;
    const auto& x = an->value;
    const auto& y = bn->value;
    const std::size_t n = g.size();
    if (auto* ga = grad_of(an)) {
      if (plan->same) {
        for (std::size_t i = 0; i < n; ++i) (*ga)[i] += da(g[i], x[i], y[i]);
      } else {
        for (std::size_t i = 0; i < n; ++i) (*ga)[plan->ia[i]] += da(g[i], x[plan->ia[i]], y[plan->ib[i]]);
      }
    }
    if (auto* gb = grad_of(bn)) {
      if (plan->same) {
        for (std::size_t i = 0; i < n; ++i) (*gb)[i] += db(g[i], x[i], y[i]);
      } else {
        for (std::size_t i = 0; i < n; ++i) (*gb)[plan->ib[i]] += db(g[i], x[plan->ia[i]], y[plan->ib[i]]);
      }
    }
  });
}

// Unary op whose derivative is expressed through input x and output y.
template <typename S, typename F, typename D>
Tensor<S> unary(const char* op, const Tensor<S>& x, F f, D d) {
  const auto xv = x.data();
  std::vector<S> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  auto xn = x.node();
  return make_result<S>(op, x.shape(), std::move(out), {x}, [xn, d](NodeT<S>& self) {
    if (auto* gx = grad_of(xn)) {
      const auto& g = self.grad;
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * d(xn->value[i], self.value[i]);
    }
  });
}

template <typename S>
S stable_sigmoid(S x) {
  if (x >= 0) return S(1) / (S(1) + std::exp(-x));
  const S e = std::exp(x);
  return e / (S(1) + e);
}

template <typename S>
S stable_softplus(S x) {
  return std::max(x, S(0)) + std::log1p(std::exp(-std::abs(x)));
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  return binary<S>(
      "add", a, b, [](S x, S y) { return x + y; }, [](S g, S, S) { return g; }, [](S g, S, S) { return g; });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  return binary<S>(
      "sub", a, b, [](S x, S y) { return x - y; }, [](S g, S, S) { return g; }, [](S g, S, S) { return -g; });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  return binary<S>(
      "mul", a, b, [](S x, S y) { return x * y; }, [](S g, S, S y) { return g * y; },
      [](S g, S x, S) { return g * x; });
}

template <typename S>
Tensor<S> div(const Tensor<S>& a, const Tensor<S>& b) {
  return binary<S>(
      "div", a, b, [](S x, S y) { return x / y; }, [](S g, S, S y) { return g / y; },
      [](S g, S x, S y) { return -g * x / (y * y); });
}

template <typename S>
Tensor<S> affine(const Tensor<S>& a, S factor, S offset) {
  return unary<S>(
      "affine", a, [=](S x) { return x * factor + offset; }, [=](S, S) { return factor; });
}

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  return unary<S>(
      "relu", x, [](S v) { return v > 0 ? v : S(0); }, [](S v, S) { return v > 0 ? S(1) : S(0); });
}

template <typename S>
Tensor<S> tanh(const Tensor<S>& x) {
  return unary<S>(
      "tanh", x, [](S v) { return std::tanh(v); }, [](S, S y) { return S(1) - y * y; });
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  return unary<S>(
      "sigmoid", x, [](S v) { return stable_sigmoid(v); }, [](S, S y) { return y * (S(1) - y); });
}

template <typename S>
Tensor<S> softplus(const Tensor<S>& x) {
  return unary<S>(
      "softplus", x, [](S v) { return stable_softplus(v); }, [](S v, S) { return stable_sigmoid(v); });
}

template <typename S>
Tensor<S> exp(const Tensor<S>& x) {
  return unary<S>(
      "exp", x, [](S v) { return std::exp(v); }, [](S, S y) { return y; });
}

template <typename S>
Tensor<S> log(const Tensor<S>& x) {
  return unary<S>(
      "log", x, [](S v) { return std::log(v); }, [](S v, S) { return S(1) / v; });
}

template <typename S>
Tensor<S> sqrt(const Tensor<S>& x) {
  return unary<S>(
      "sqrt", x, [](S v) { return std::sqrt(v); }, [](S, S y) { return S(0.5) / y; });
}

template <typename S>
Tensor<S> square(const Tensor<S>& x) {
  return unary<S>(
      "square", x, [](S v) { return v * v; }, [](S v, S) { return S(2) * v; });
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  const char* op = "matmul";
  if (a.dim() != 2 || b.dim() != 2) fail(op, "expects 2-D operands, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::size_t m = a.size(0), k = a.size(1), n = b.size(1);
  if (b.size(0) != k) fail(op, "inner dimensions differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<S> out(m * n);
  MMap<S>(out.data(), m, n).noalias() = CMap<S>(a.data().data(), m, k) * CMap<S>(b.data().data(), k, n);
  auto an = a.node();
  auto bn = b.node();
  return make_result<S>(op, {m, n}, std::move(out), {a, b}, [an, bn, m, k, n](NodeT<S>& self) {
    CMap<S> g(self.grad.data(), m, n);
    if (auto* ga = grad_of(an)) MMap<S>(ga->data(), m, k).noalias() += g * CMap<S>(bn->value.data(), k, n).transpose();
    if (auto* gb = grad_of(bn)) MMap<S>(gb->data(), k, n).noalias() += CMap<S>(an->value.data(), m, k).transpose() * g;
  });
}

template <typename S>
Tensor<S> bmm(const Tensor<S>& a, const Tensor<S>& b, bool transpose_b) {
  const char* op = "bmm";
  if (a.dim() != 3 || b.dim() != 3) fail(op, "expects 3-D operands, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::size_t groups = a.size(0), m = a.size(1), k = a.size(2);
  const std::size_t n = transpose_b ? b.size(1) : b.size(2);
  const std::size_t bk = transpose_b ? b.size(2) : b.size(1);
  if (b.size(0) != groups || bk != k) fail(op, "incompatible operands " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<S> out(groups * m * n);
  for (std::size_t gi = 0; gi < groups; ++gi) {
    CMap<S> A(a.data().data() + gi * m * k, m, k);
    MMap<S> C(out.data() + gi * m * n, m, n);
    if (transpose_b) {
      C.noalias() = A * CMap<S>(b.data().data() + gi * n * k, n, k).transpose();
    } else {
      C.noalias() = A * CMap<S>(b.data().data() + gi * k * n, k, n);
    }
  }
  auto an = a.node();
  auto bn = b.node();
  return make_result<S>(op, {groups, m, n}, std::move(out), {a, b},
                        [an, bn, groups, m, k, n, transpose_b](NodeT<S>& self) {
                          auto* ga = grad_of(an);
                          auto* gb = grad_of(bn);
                          for (std::size_t gi = 0; gi < groups; ++gi) {
                            CMap<S> G(self.grad.data() + gi * m * n, m, n);
                            CMap<S> A(an->value.data() + gi * m * k, m, k);
                            if (transpose_b) {
                              CMap<S> B(bn->value.data() + gi * n * k, n, k);
                              if (ga) MMap<S>(ga->data() + gi * m * k, m, k).noalias() += G * B;
                              if (gb) MMap<S>(gb->data() + gi * n * k, n, k).noalias() += G.transpose() * A;
                            } else {
                              CMap<S> B(bn->value.data() + gi * k * n, k, n);
                              if (ga) MMap<S>(ga->data() + gi * m * k, m, k).noalias() += G * B.transpose();
                              if (gb) MMap<S>(gb->data() + gi * k * n, k, n).noalias() += A.transpose() * G;
                            }
                          }
                        });
}

template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias) {
  const char* op = "linear";
  if (weight.dim() != 2) fail(op, "weight must be 2-D, got " + shape_str(weight.shape()));
  const std::size_t out_dim = weight.size(0), in_dim = weight.size(1);
  if (x.dim() < 1 || x.shape().back() != in_dim) {
    fail(op, "input " + shape_str(x.shape()) + " does not match weight " + shape_str(weight.shape()));
  }
  if (bias.defined() && (bias.dim() != 1 || bias.size(0) != out_dim)) {
    fail(op, "bias " + shape_str(bias.shape()) + " does not match weight " + shape_str(weight.shape()));
  }
  const std::size_t rows = x.numel() / in_dim;
  Shape out_shape = x.shape();
  out_shape.back() = out_dim;
  std::vector<S> out(rows * out_dim);
  MMap<S> Y(out.data(), rows, out_dim);
  Y.noalias() = CMap<S>(x.data().data(), rows, in_dim) * CMap<S>(weight.data().data(), out_dim, in_dim).transpose();
  if (bias.defined()) {
    Y.rowwise() += Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>(bias.data().data(), out_dim);
  }
  auto xn = x.node();
  auto wn = weight.node();
  std::shared_ptr<NodeT<S>> bn = bias.defined() ? bias.node() : nullptr;
  return make_result<S>(op, std::move(out_shape), std::move(out), {x, weight, bias},
                        [xn, wn, bn, rows, in_dim, out_dim](NodeT<S>& self) {
                          CMap<S> G(self.grad.data(), rows, out_dim);
                          if (auto* gx = grad_of(xn)) {
                            MMap<S>(gx->data(), rows, in_dim).noalias() +=
                                G * CMap<S>(wn->value.data(), out_dim, in_dim);
                          }
                          if (auto* gw = grad_of(wn)) {
                            MMap<S>(gw->data(), out_dim, in_dim).noalias() +=
                                G.transpose() * CMap<S>(xn->value.data(), rows, in_dim);
                          }
                          if (bn) {
                            if (auto* gb = grad_of(bn)) {
                              Eigen::Map<Eigen::Matrix<S, 1, Eigen::Dynamic>>(gb->data(), out_dim) +=
                                  G.colwise().sum();
                            }
                          }
                        });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
  S total = 0;
  for (auto v : x.data()) total += v;
  auto xn = x.node();
  return make_result<S>("sum", {1}, {total}, {x}, [xn](NodeT<S>& self) {
    if (auto* gx = grad_of(xn)) {
      for (auto& v : *gx) v += self.grad[0];
    }
  });
}

template <typename S>
Tensor<S> mean(const Tensor<S>& x) {
  return scale(sum(x), S(1) / static_cast<S>(x.numel()));
}

template <typename S>
Tensor<S> sum(const Tensor<S>& x, std::size_t axis, bool keepdim) {
  check_axis("sum", x.shape(), axis);
  const auto sp = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  if (keepdim) {
    out_shape[axis] = 1;
  } else {
    out_shape.erase(out_shape.begin() + static_cast<long>(axis));
    if (out_shape.empty()) out_shape = {1};
  }
  std::vector<S> out(sp.outer * sp.inner, S(0));
  const auto xv = x.data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t e = 0; e < sp.extent; ++e) {
      const S* src = xv.data() + (o * sp.extent + e) * sp.inner;
      S* dst = out.data() + o * sp.inner;
      for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
    }
  }
  auto xn = x.node();
  return make_result<S>("sum_axis", std::move(out_shape), std::move(out), {x}, [xn, sp](NodeT<S>& self) {
    if (auto* gx = grad_of(xn)) {
      for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t e = 0; e < sp.extent; ++e) {
          S* dst = gx->data() + (o * sp.extent + e) * sp.inner;
          const S* g = self.grad.data() + o * sp.inner;
          for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += g[i];
        }
      }
    }
  });
}

template <typename S>
Tensor<S> mean(const Tensor<S>& x, std::size_t axis, bool keepdim) {
  check_axis("mean", x.shape(), axis);
  return scale(sum(x, axis, keepdim), S(1) / static_cast<S>(x.size(axis)));
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    fail("reshape", "cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  std::vector<S> out(x.data().begin(), x.data().end());
  auto xn = x.node();
  return make_result<S>("reshape", std::move(shape), std::move(out), {x}, [xn](NodeT<S>& self) {
    if (auto* gx = grad_of(xn)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*gx)[i] += self.grad[i];
    }
  });
}

template <typename S>
Tensor<S> permute(const Tensor<S>& x, const std::vector<std::size_t>& axes) {
  const auto& in = x.shape();
  const std::size_t rank = in.size();
  if (axes.size() != rank) fail("permute", "axis list length differs from rank");
  std::vector<bool> seen(rank, false);
  for (auto a : axes) {
    if (a >= rank || seen[a]) fail("permute", "invalid axis permutation");
    seen[a] = true;
  }
  std::vector<std::size_t> in_stride(rank);
  std::size_t st = 1;
  for (std::size_t d = rank; d-- > 0;) {
    in_stride[d] = st;
    st *= in[d];
  }
  Shape out_shape(rank);
  std::vector<std::size_t> stride(rank);
  for (std::size_t d = 0; d < rank; ++d) {
    out_shape[d] = in[axes[d]];
    stride[d] = in_stride[axes[d]];
  }
  const std::size_t n = x.numel();
  auto src = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t off = 0;
  for (std::size_t i = 0; i < n; ++i) {
    (*src)[i] = off;
    for (std::size_t d = rank; d-- > 0;) {
      if (++idx[d] < out_shape[d]) {
        off += stride[d];
        break;
      }
      off -= stride[d] * (out_shape[d] - 1);
      idx[d] = 0;
    }
  }
  std::vector<S> out(n);
  const auto xv = x.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = xv[(*src)[i]];
  auto xn = x.node();
  return make_result<S>("permute", std::move(out_shape), std::move(out), {x}, [xn, src](NodeT<S>& self) {
    if (auto* gx = grad_of(xn)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*gx)[(*src)[i]] += self.grad[i];
    }
  });
}

template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts, std::size_t axis) {
  const char* op = "concat";
  if (parts.empty()) fail(op, "no inputs");
  const Shape& ref = parts.front().shape();
  check_axis(op, ref, axis);
  Shape out_shape = ref;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    if (s.size() != ref.size()) fail(op, "rank mismatch: " + shape_str(s) + " vs " + shape_str(ref));
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != axis && s[d] != ref[d]) fail(op, "shape mismatch: " + shape_str(s) + " vs " + shape_str(ref));
    }
    out_shape[axis] += s[axis];
  }
  const auto sp = split_at(out_shape, axis);
  std::vector<S> out(shape_numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t len = p.size(axis) * sp.inner;
    const auto pv = p.data();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy_n(pv.data() + o * len, len, out.data() + o * sp.extent * sp.inner + offset);
    }
    offset += len;
  }
  std::vector<std::shared_ptr<NodeT<S>>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  return make_result<S>(op, std::move(out_shape), std::move(out), parts,
                        [nodes, offsets, sp, axis](NodeT<S>& self) {
                          for (std::size_t k = 0; k < nodes.size(); ++k) {
                            auto* gp = grad_of(nodes[k]);
                            if (!gp) continue;
                            const std::size_t len = nodes[k]->shape[axis] * sp.inner;
                            for (std::size_t o = 0; o < sp.outer; ++o) {
                              const S* g = self.grad.data() + o * sp.extent * sp.inner + offsets[k];
                              S* dst = gp->data() + o * len;
                              for (std::size_t i = 0; i < len; ++i) dst[i] += g[i];
                            }
                          }
                        });
}

template <typename S>
Tensor<S> stack(const std::vector<Tensor<S>>& parts, std::size_t axis) {
  if (parts.empty()) fail("stack", "no inputs");
  if (axis > parts.front().dim()) fail("stack", "axis out of range");
  std::vector<Tensor<S>> expanded;
  expanded.reserve(parts.size());
  for (const auto& p : parts) {
    Shape s = p.shape();
    s.insert(s.begin() + static_cast<long>(axis), 1);
    expanded.push_back(reshape(p, std::move(s)));
  }
  return concat(expanded, axis);
}

template <typename S>
Tensor<S> slice(const Tensor<S>& x, std::size_t axis, std::size_t start, std::size_t length) {
  const char* op = "slice";
  check_axis(op, x.shape(), axis);
  if (length == 0 || start + length > x.size(axis)) {
    fail(op, "range [" + std::to_string(start) + "," + std::to_string(start + length) + ") out of bounds for " +
                 shape_str(x.shape()));
  }
  const auto sp = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  std::vector<S> out(sp.outer * length * sp.inner);
  const auto xv = x.data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(xv.data() + (o * sp.extent + start) * sp.inner, length * sp.inner,
                out.data() + o * length * sp.inner);
  }
  auto xn = x.node();
  return make_result<S>(op, std::move(out_shape), std::move(out), {x}, [xn, sp, start, length](NodeT<S>& self) {
    if (auto* gx = grad_of(xn)) {
      for (std::size_t o = 0; o < sp.outer; ++o) {
        const S* g = self.grad.data() + o * length * sp.inner;
        S* dst = gx->data() + (o * sp.extent + start) * sp.inner;
        for (std::size_t i = 0; i < length * sp.inner; ++i) dst[i] += g[i];
      }
    }
  });
}

template <typename S>
Tensor<S> index_select(const Tensor<S>& x, std::size_t axis, std::span<const std::size_t> indices) {
  const char* op = "index_select";
  check_axis(op, x.shape(), axis);
  if (indices.empty()) fail(op, "empty index list");
  const auto sp = split_at(x.shape(), axis);
  for (auto i : indices) {
    if (i >= sp.extent) fail(op, "index " + std::to_string(i) + " out of range for " + shape_str(x.shape()));
  }
  auto idx = std::make_shared<std::vector<std::size_t>>(indices.begin(), indices.end());
  Shape out_shape = x.shape();
  out_shape[axis] = idx->size();
  const std::size_t k = idx->size();
  std::vector<S> out(sp.outer * k * sp.inner);
  const auto xv = x.data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t j = 0; j < k; ++j) {
      std::copy_n(xv.data() + (o * sp.extent + (*idx)[j]) * sp.inner, sp.inner,
                  out.data() + (o * k + j) * sp.inner);
    }
  }
  auto xn = x.node();
  return make_result<S>(op, std::move(out_shape), std::move(out), {x}, [xn, sp, idx](NodeT<S>& self) {
    if (auto* gx = grad_of(xn)) {
      const std::size_t k = idx->size();
      for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t j = 0; j < k; ++j) {
          const S* g = self.grad.data() + (o * k + j) * sp.inner;
          S* dst = gx->data() + (o * sp.extent + (*idx)[j]) * sp.inner;
          for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += g[i];
        }
      }
    }
  });
}

template <typename S>
Tensor<S> roll(const Tensor<S>& x, long shift, std::size_t axis) {
  check_axis("roll", x.shape(), axis);
  const auto n = static_cast<long>(x.size(axis));
  std::vector<std::size_t> order(static_cast<std::size_t>(n));
  for (long i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = static_cast<std::size_t>(((i - shift) % n + n) % n);
  return index_select(x, axis, std::span<const std::size_t>(order));
}

// ---------------------------------------------------------------------------
// Normalization and probability

template <typename S>
Tensor<S> softmax(const Tensor<S>& x) {
  const std::size_t width = x.shape().back();
  const std::size_t rows = x.numel() / width;
  std::vector<S> out(x.numel());
  const auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const S* in = xv.data() + r * width;
    S* y = out.data() + r * width;
    const S mx = *std::max_element(in, in + width);
    S total = 0;
    for (std::size_t i = 0; i < width; ++i) total += (y[i] = std::exp(in[i] - mx));
    for (std::size_t i = 0; i < width; ++i) y[i] /= total;
  }
  auto xn = x.node();
  return make_result<S>("softmax", x.shape(), std::move(out), {x}, [xn, rows, width](NodeT<S>& self) {
    if (auto* gx = grad_of(xn)) {
      for (std::size_t r = 0; r < rows; ++r) {
        const S* y = self.value.data() + r * width;
        const S* g = self.grad.data() + r * width;
        S dot = 0;
        for (std::size_t i = 0; i < width; ++i) dot += g[i] * y[i];
        S* dst = gx->data() + r * width;
        for (std::size_t i = 0; i < width; ++i) dst[i] += y[i] * (g[i] - dot);
      }
    }
  });
}

template <typename S>
Tensor<S> log_softmax(const Tensor<S>& x) {
  const std::size_t width = x.shape().back();
  const std::size_t rows = x.numel() / width;
  std::vector<S> out(x.numel());
  const auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const S* in = xv.data() + r * width;
    const S mx = *std::max_element(in, in + width);
    S total = 0;
    for (std::size_t i = 0; i < width; ++i) total += std::exp(in[i] - mx);
    const S lse = mx + std::log(total);
    for (std::size_t i = 0; i < width; ++i) out[r * width + i] = in[i] - lse;
  }
  auto xn = x.node();
  return make_result<S>("log_softmax", x.shape(), std::move(out), {x}, [xn, rows, width](NodeT<S>& self) {
    if (auto* gx = grad_of(xn)) {
      for (std::size_t r = 0; r < rows; ++r) {
        const S* y = self.value.data() + r * width;
        const S* g = self.grad.data() + r * width;
        S gsum = 0;
        for (std::size_t i = 0; i < width; ++i) gsum += g[i];
        S* dst = gx->data() + r * width;
        for (std::size_t i = 0; i < width; ++i) dst[i] += g[i] - std::exp(y[i]) * gsum;
      }
    }
  });
}

template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta, S eps) {
  const char* op = "layer_norm";
  const std::size_t width = x.shape().back();
  if (gamma.numel() != width || beta.numel() != width) {
    fail(op, "affine parameters must have " + std::to_string(width) + " elements");
  }
  const std::size_t rows = x.numel() / width;
  auto xhat = std::make_shared<std::vector<S>>(x.numel());
  auto inv_std = std::make_shared<std::vector<S>>(rows);
  std::vector<S> out(x.numel());
  const auto xv = x.data();
  const auto gv = gamma.data();
  const auto bv = beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const S* in = xv.data() + r * width;
    S mu = 0;
    for (std::size_t i = 0; i < width; ++i) mu += in[i];
    mu /= static_cast<S>(width);
    S var = 0;
    for (std::size_t i = 0; i < width; ++i) var += (in[i] - mu) * (in[i] - mu);
    var /= static_cast<S>(width);
    const S inv = S(1) / std::sqrt(var + eps);
    (*inv_std)[r] = inv;
    for (std::size_t i = 0; i < width; ++i) {
      const S h = (in[i] - mu) * inv;
      (*xhat)[r * width + i] = h;
      out[r * width + i] = gv[i] * h + bv[i];
    }
  }
  auto xn = x.node();
  auto gn = gamma.node();
  auto bn = beta.node();
  return make_result<S>(op, x.shape(), std::move(out), {x, gamma, beta},
                        [xn, gn, bn, xhat, inv_std, rows, width](NodeT<S>& self) {
                          auto* gx = grad_of(xn);
                          auto* gg = grad_of(gn);
                          auto* gb = grad_of(bn);
                          const S n = static_cast<S>(width);
                          for (std::size_t r = 0; r < rows; ++r) {
                            const S* g = self.grad.data() + r * width;
                            const S* h = xhat->data() + r * width;
                            if (gg) {
                              for (std::size_t i = 0; i < width; ++i) (*gg)[i] += g[i] * h[i];
                            }
                            if (gb) {
                              for (std::size_t i = 0; i < width; ++i) (*gb)[i] += g[i];
                            }
                            if (gx) {
                              S sum_d = 0, sum_dh = 0;
                              for (std::size_t i = 0; i < width; ++i) {
                                const S d = g[i] * gn->value[i];
                                sum_d += d;
                                sum_dh += d * h[i];
                              }
                              const S inv = (*inv_std)[r];
                              S* dst = gx->data() + r * width;
                              for (std::size_t i = 0; i < width; ++i) {
                                const S d = g[i] * gn->value[i];
                                dst[i] += inv / n * (n * d - sum_d - h[i] * sum_dh);
                              }
                            }
                          }
                        });
}

// ---------------------------------------------------------------------------
// Convolution (im2col + GEMM)

template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias, std::size_t stride,
                 std::size_t pad) {
  const char* op = "conv2d";
  if (x.dim() != 4) fail(op, "input must be [N,C,H,W], got " + shape_str(x.shape()));
  if (weight.dim() != 4 || weight.size(2) != weight.size(3)) {
    fail(op, "weight must be [O,C,K,K], got " + shape_str(weight.shape()));
  }
  const std::size_t batch = x.size(0), channels = x.size(1), height = x.size(2), width = x.size(3);
  const std::size_t out_ch = weight.size(0), kernel = weight.size(2);
  if (weight.size(1) != channels) {
    fail(op, "input channels " + std::to_string(channels) + " do not match weight " + shape_str(weight.shape()));
  }
  if (!bias.defined() || bias.dim() != 1 || bias.size(0) != out_ch) fail(op, "bias must be [" + std::to_string(out_ch) + "]");
  if (stride == 0) fail(op, "stride must be positive");
  if (height + 2 * pad < kernel || width + 2 * pad < kernel) fail(op, "input smaller than kernel after padding");
  const std::size_t oh = (height + 2 * pad - kernel) / stride + 1;
  const std::size_t ow = (width + 2 * pad - kernel) / stride + 1;
  const std::size_t patch = channels * kernel * kernel;
  const std::size_t spatial = oh * ow;

  auto cols = std::make_shared<std::vector<S>>(batch * patch * spatial, S(0));
  const auto xv = x.data();
  for (std::size_t b = 0; b < batch; ++b) {
    S* col = cols->data() + b * patch * spatial;
    const S* img = xv.data() + b * channels * height * width;
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t ki = 0; ki < kernel; ++ki) {
        for (std::size_t kj = 0; kj < kernel; ++kj) {
          S* row = col + ((c * kernel + ki) * kernel + kj) * spatial;
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const long iy = static_cast<long>(oy * stride + ki) - static_cast<long>(pad);
            if (iy < 0 || iy >= static_cast<long>(height)) continue;
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const long ix = static_cast<long>(ox * stride + kj) - static_cast<long>(pad);
              if (ix < 0 || ix >= static_cast<long>(width)) continue;
              row[oy * ow + ox] = img[(c * height + static_cast<std::size_t>(iy)) * width + static_cast<std::size_t>(ix)];
            }
          }
        }
      }
    }
  }
  std::vector<S> out(batch * out_ch * spatial);
  CMap<S> W(weight.data().data(), out_ch, patch);
  const auto bv = bias.data();
  for (std::size_t b = 0; b < batch; ++b) {
    MMap<S> Y(out.data() + b * out_ch * spatial, out_ch, spatial);
    Y.noalias() = W * CMap<S>(cols->data() + b * patch * spatial, patch, spatial);
    for (std::size_t o = 0; o < out_ch; ++o) Y.row(static_cast<long>(o)).array() += bv[o];
  }
  auto xn = x.node();
  auto wn = weight.node();
  auto bn = bias.node();
  return make_result<S>(
      op, {batch, out_ch, oh, ow}, std::move(out), {x, weight, bias},
      [=](NodeT<S>& self) {
        auto* gx = grad_of(xn);
        auto* gw = grad_of(wn);
        auto* gb = grad_of(bn);
        CMap<S> Wm(wn->value.data(), out_ch, patch);
        std::vector<S> dcol(gx ? patch * spatial : 0);
        for (std::size_t b = 0; b < batch; ++b) {
          CMap<S> G(self.grad.data() + b * out_ch * spatial, out_ch, spatial);
          CMap<S> C(cols->data() + b * patch * spatial, patch, spatial);
          if (gw) MMap<S>(gw->data(), out_ch, patch).noalias() += G * C.transpose();
          if (gb) {
            for (std::size_t o = 0; o < out_ch; ++o) (*gb)[o] += G.row(static_cast<long>(o)).sum();
          }
          if (gx) {
            MMap<S>(dcol.data(), patch, spatial).noalias() = Wm.transpose() * G;
            S* img = gx->data() + b * channels * height * width;
            for (std::size_t c = 0; c < channels; ++c) {
              for (std::size_t ki = 0; ki < kernel; ++ki) {
                for (std::size_t kj = 0; kj < kernel; ++kj) {
                  const S* row = dcol.data() + ((c * kernel + ki) * kernel + kj) * spatial;
                  for (std::size_t oy = 0; oy < oh; ++oy) {
                    const long iy = static_cast<long>(oy * stride + ki) - static_cast<long>(pad);
                    if (iy < 0 || iy >= static_cast<long>(height)) continue;
                    for (std::size_t ox = 0; ox < ow; ++ox) {
                      const long ix = static_cast<long>(ox * stride + kj) - static_cast<long>(pad);
                      if (ix < 0 || ix >= static_cast<long>(width)) continue;
                      img[(c * height + static_cast<std::size_t>(iy)) * width + static_cast<std::size_t>(ix)] +=
                          row[oy * ow + ox];
                    }
                  }
                }
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Losses

template <typename S>
Tensor<S> bce_with_logits(const Tensor<S>& logits, std::span<const int> targets) {
  const char* op = "bce_with_logits";
  const std::size_t n = logits.numel();
  if (!(logits.dim() == 1 || (logits.dim() == 2 && logits.size(1) == 1))) {
    fail(op, "logits must be [N] or [N,1], got " + shape_str(logits.shape()));
  }
  if (targets.size() != n) fail(op, "target count differs from batch size");
  const auto xv = logits.data();
  S total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] != 0 && targets[i] != 1) fail(op, "binary targets must be 0 or 1");
    const S x = xv[i];
    total += std::max(x, S(0)) - x * static_cast<S>(targets[i]) + std::log1p(std::exp(-std::abs(x)));
  }
  std::vector<int> t(targets.begin(), targets.end());
  auto xn = logits.node();
  return make_result<S>(op, {1}, {total / static_cast<S>(n)}, {logits}, [xn, t, n](NodeT<S>& self) {
    if (auto* gx = grad_of(xn)) {
      const S g = self.grad[0] / static_cast<S>(n);
      for (std::size_t i = 0; i < n; ++i) (*gx)[i] += g * (stable_sigmoid(xn->value[i]) - static_cast<S>(t[i]));
    }
  });
}

template <typename S>
Tensor<S> cross_entropy(const Tensor<S>& logits, std::span<const int> targets) {
  const char* op = "cross_entropy";
  if (logits.dim() != 2) fail(op, "logits must be [N,C], got " + shape_str(logits.shape()));
  const std::size_t n = logits.size(0), classes = logits.size(1);
  if (targets.size() != n) fail(op, "target count differs from batch size");
  for (auto t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= classes) fail(op, "class target out of range");
  }
  const auto ls = log_softmax(logits.detach());
  const auto lv = ls.data();
  S total = 0;
  for (std::size_t i = 0; i < n; ++i) total -= lv[i * classes + static_cast<std::size_t>(targets[i])];
  auto probs = std::make_shared<std::vector<S>>(lv.size());
  for (std::size_t i = 0; i < lv.size(); ++i) (*probs)[i] = std::exp(lv[i]);
  std::vector<int> t(targets.begin(), targets.end());
  auto xn = logits.node();
  return make_result<S>(op, {1}, {total / static_cast<S>(n)}, {logits}, [xn, t, n, classes, probs](NodeT<S>& self) {
    if (auto* gx = grad_of(xn)) {
      const S g = self.grad[0] / static_cast<S>(n);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < classes; ++c) {
          const S onehot = static_cast<std::size_t>(t[i]) == c ? S(1) : S(0);
          (*gx)[i * classes + c] += g * ((*probs)[i * classes + c] - onehot);
        }
      }
    }
  });
}

template <typename S>
Tensor<S> positional_encoding(std::size_t length, std::size_t width) {
  std::vector<S> table(length * width);
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < width; ++i) {
      const double rate = std::pow(10000.0, static_cast<double>(2 * (i / 2)) / static_cast<double>(width));
      const double angle = static_cast<double>(pos) / rate;
      table[pos * width + i] = static_cast<S>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return Tensor<S>::from_data({length, width}, std::move(table));
}

// ---------------------------------------------------------------------------

#define ESBN_INSTANTIATE_OPS(S)                                                                          \
  template Tensor<S> add(const Tensor<S>&, const Tensor<S>&);                                            \
  template Tensor<S> sub(const Tensor<S>&, const Tensor<S>&);                                            \
  template Tensor<S> mul(const Tensor<S>&, const Tensor<S>&);                                            \
  template Tensor<S> div(const Tensor<S>&, const Tensor<S>&);                                            \
  template Tensor<S> affine(const Tensor<S>&, S, S);                                                     \
  template Tensor<S> relu(const Tensor<S>&);                                                             \
  template Tensor<S> tanh(const Tensor<S>&);                                                             \
  template Tensor<S> sigmoid(const Tensor<S>&);                                                          \
  template Tensor<S> softplus(const Tensor<S>&);                                                         \
  template Tensor<S> exp(const Tensor<S>&);                                                              \
  template Tensor<S> log(const Tensor<S>&);                                                              \
  template Tensor<S> sqrt(const Tensor<S>&);                                                             \
  template Tensor<S> square(const Tensor<S>&);                                                           \
  template Tensor<S> matmul(const Tensor<S>&, const Tensor<S>&);                                         \
  template Tensor<S> bmm(const Tensor<S>&, const Tensor<S>&, bool);                                      \
  template Tensor<S> linear(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);                       \
  template Tensor<S> sum(const Tensor<S>&);                                                              \
  template Tensor<S> mean(const Tensor<S>&);                                                             \
  template Tensor<S> sum(const Tensor<S>&, std::size_t, bool);                                           \
  template Tensor<S> mean(const Tensor<S>&, std::size_t, bool);                                          \
  template Tensor<S> reshape(const Tensor<S>&, Shape);                                                   \
  template Tensor<S> permute(const Tensor<S>&, const std::vector<std::size_t>&);                         \
  template Tensor<S> concat(const std::vector<Tensor<S>>&, std::size_t);                                 \
  template Tensor<S> stack(const std::vector<Tensor<S>>&, std::size_t);                                  \
  template Tensor<S> slice(const Tensor<S>&, std::size_t, std::size_t, std::size_t);                     \
  template Tensor<S> index_select(const Tensor<S>&, std::size_t, std::span<const std::size_t>);          \
  template Tensor<S> roll(const Tensor<S>&, long, std::size_t);                                          \
  template Tensor<S> softmax(const Tensor<S>&);                                                          \
  template Tensor<S> log_softmax(const Tensor<S>&);                                                      \
  template Tensor<S> layer_norm(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, S);                \
  template Tensor<S> conv2d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, std::size_t, std::size_t); \
  template Tensor<S> bce_with_logits(const Tensor<S>&, std::span<const int>);                            \
  template Tensor<S> cross_entropy(const Tensor<S>&, std::span<const int>);                              \
  template Tensor<S> positional_encoding<S>(std::size_t, std::size_t);

ESBN_INSTANTIATE_OPS(float)
ESBN_INSTANTIATE_OPS(double)

#undef ESBN_INSTANTIATE_OPS

}  // namespace esbn
