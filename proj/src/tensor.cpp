#include "morphbench/tensor.hpp"

#include "morphbench/error.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>
#include <unordered_set>
#include <utility>

namespace morphbench {

Index numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) { return fmt::format("[{}]", fmt::join(shape, ", ")); }

// ---------------------------------------------------------------------------
// Tensor handle

Tensor::Tensor() : node_(std::make_shared<detail::Node>()) { node_->value = Buffer::Zero(1); }

Tensor::Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

Tensor Tensor::from(Shape shape, Buffer values, bool requires_grad) {
  for (Index d : shape) {
    if (d < 0) throw ShapeError(fmt::format("negative dimension in shape {}", to_string(shape)));
  }
  if (numel(shape) != values.size()) {
    throw ShapeError(fmt::format("shape {} holds {} values, got {}", to_string(shape), numel(shape),
                                 values.size()));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({}, Buffer::Constant(1, value), requires_grad);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const Index n = numel(shape);
  return from(std::move(shape), Buffer::Constant(n, value), requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }
Index Tensor::dim(std::size_t axis) const { return node_->shape.at(axis); }
std::size_t Tensor::rank() const { return node_->shape.size(); }
Index Tensor::size() const { return node_->value.size(); }
OpKind Tensor::op() const { return node_->op; }
const Buffer& Tensor::value() const { return node_->value; }

double Tensor::item() const {
  if (size() != 1) throw ShapeError(fmt::format("item() on tensor of shape {}", to_string(shape())));
  return node_->value(0);
}

Eigen::Map<const RowMatrix<double>> Tensor::matrix() const {
  if (rank() != 2) throw ShapeError(fmt::format("matrix() on tensor of shape {}", to_string(shape())));
  return {node_->value.data(), dim(0), dim(1)};
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
bool Tensor::has_grad() const { return node_->grad.has_value(); }

const Buffer& Tensor::grad() const {
  if (!node_->grad) throw ValueError("tensor has no accumulated gradient");
  return *node_->grad;
}

void Tensor::zero_grad() { node_->grad.reset(); }

void Tensor::assign(const Buffer& values) {
  if (!node_->parents.empty() || node_->op != OpKind::Leaf) throw ValueError("assign() is only valid on leaf tensors");
  if (values.size() != size()) {
    throw ShapeError(fmt::format("assign: {} values into shape {}", values.size(), to_string(shape())));
  }
  node_->value = values;
}

Tensor Tensor::detach() const { return from(shape(), value(), false); }

Tensor Tensor::make_op(OpKind op, Shape shape, Buffer value, std::vector<Tensor> parents,
                       detail::BackwardRule backward) {
  auto node = std::make_shared<detail::Node>();
  node->op = op;
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->requires_grad =
      std::any_of(parents.begin(), parents.end(), [](const Tensor& p) { return p.requires_grad(); });
  // Constant subgraphs are folded: nothing downstream needs their history.
  if (node->requires_grad) {
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(std::move(p.node_));
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

void Tensor::backward() const {
  using detail::Node;
  if (size() != 1) {
    throw ShapeError(fmt::format("backward() needs a single-element loss, got shape {}", to_string(shape())));
  }
  if (!node_->requires_grad) return;

  // Post-order DFS over the grad-requiring subgraph gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited{node_.get()};
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  while (!stack.empty()) {
    Node* n = stack.back().first;
    const std::size_t next = stack.back().second;
    if (next < n->parents.size()) {
      ++stack.back().second;
      Node* p = n->parents[next].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  std::unordered_map<Node*, Buffer> adjoint;
  adjoint.emplace(node_.get(), Buffer::Ones(1));
  std::vector<Buffer*> slots;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    auto found = adjoint.find(n);
    if (found == adjoint.end()) continue;
    Buffer g = std::move(found->second);
    adjoint.erase(found);

    if (n->backward) {
      slots.clear();
      for (const auto& p : n->parents) {
        if (!p->requires_grad) {
          slots.push_back(nullptr);
          continue;
        }
        auto [slot, inserted] = adjoint.try_emplace(p.get());
        if (inserted) slot->second = Buffer::Zero(p->value.size());
        slots.push_back(&slot->second);
      }
      n->backward(g, slots);
    }
    if (n->grad) {
      *n->grad += g;
    } else {
      n->grad = std::move(g);
    }
  }
}

// ---------------------------------------------------------------------------
// Elementwise

namespace {

struct Broadcast {
  Shape shape;
  bool a_scalar = false;
  bool b_scalar = false;
};

Broadcast broadcast(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return {a.shape(), false, false};
  if (b.size() == 1) return {a.shape(), false, true};
  if (a.size() == 1) return {b.shape(), true, false};
  throw ShapeError(fmt::format("{}: shape mismatch {} vs {}", op, to_string(a.shape()), to_string(b.shape())));
}

Buffer expand(const Tensor& t, bool is_scalar, Index n) {
  return is_scalar ? Buffer::Constant(n, t.value()(0)) : t.value();
}

void accumulate(Buffer* acc, const Buffer& g, bool is_scalar) {
  if (acc == nullptr) return;
  if (is_scalar) {
    (*acc)(0) += g.sum();
  } else {
    *acc += g;
  }
}

Tensor constant(double v) { return Tensor::scalar(v); }

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  auto bc = broadcast("add", a, b);
  const Index n = numel(bc.shape);
  Buffer out = expand(a, bc.a_scalar, n) + expand(b, bc.b_scalar, n);
  return Tensor::make_op(OpKind::Add, bc.shape, std::move(out), {a, b},
                         [bc](const Buffer& g, std::span<Buffer* const> acc) {
                           accumulate(acc[0], g, bc.a_scalar);
                           accumulate(acc[1], g, bc.b_scalar);
                         });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  auto bc = broadcast("sub", a, b);
  const Index n = numel(bc.shape);
  Buffer out = expand(a, bc.a_scalar, n) - expand(b, bc.b_scalar, n);
  return Tensor::make_op(OpKind::Sub, bc.shape, std::move(out), {a, b},
                         [bc](const Buffer& g, std::span<Buffer* const> acc) {
                           accumulate(acc[0], g, bc.a_scalar);
                           accumulate(acc[1], -g, bc.b_scalar);
                         });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  auto bc = broadcast("mul", a, b);
  const Index n = numel(bc.shape);
  Buffer av = expand(a, bc.a_scalar, n);
  Buffer bv = expand(b, bc.b_scalar, n);
  Buffer out = av * bv;
  return Tensor::make_op(OpKind::Mul, bc.shape, std::move(out), {a, b},
                         [bc, av = std::move(av), bv = std::move(bv)](const Buffer& g, std::span<Buffer* const> acc) {
                           if (acc[0]) accumulate(acc[0], g * bv, bc.a_scalar);
                           if (acc[1]) accumulate(acc[1], g * av, bc.b_scalar);
                         });
}

Tensor div(const Tensor& a, const Tensor& b) {
  auto bc = broadcast("div", a, b);
  if ((b.value() == 0.0).any()) throw ValueError("division by zero");
  const Index n = numel(bc.shape);
  Buffer av = expand(a, bc.a_scalar, n);
  Buffer bv = expand(b, bc.b_scalar, n);
  Buffer out = av / bv;
  return Tensor::make_op(OpKind::Div, bc.shape, out, {a, b},
                         [bc, bv = std::move(bv), out](const Buffer& g, std::span<Buffer* const> acc) {
                           if (acc[0]) accumulate(acc[0], g / bv, bc.a_scalar);
                           if (acc[1]) accumulate(acc[1], -g * out / bv, bc.b_scalar);
                         });
}

Tensor pow(const Tensor& base, const Tensor& exponent) {
  auto bc = broadcast("pow", base, exponent);
  const Index n = numel(bc.shape);
  Buffer bv = expand(base, bc.a_scalar, n);
  Buffer ev = expand(exponent, bc.b_scalar, n);
  Buffer out = bv.pow(ev);
  return Tensor::make_op(
      OpKind::Pow, bc.shape, out, {base, exponent},
      [bc, bv = std::move(bv), ev = std::move(ev), out](const Buffer& g, std::span<Buffer* const> acc) {
        if (acc[0]) {
          // d/db b^e = e b^(e-1); at b == 0 with e < 1 the one-sided limit is
          // unbounded and we take 0 as the subgradient.
          Buffer d = (bv == 0.0 && ev < 1.0).select(Buffer::Zero(bv.size()), ev * bv.pow(ev - 1.0));
          accumulate(acc[0], g * d, bc.a_scalar);
        }
        if (acc[1]) {
          Buffer d = (bv > 0.0).select(out * bv.max(1e-300).log(), Buffer::Zero(bv.size()));
          accumulate(acc[1], g * d, bc.b_scalar);
        }
      });
}

Tensor pow(const Tensor& base, double exponent) { return pow(base, constant(exponent)); }

Tensor add(const Tensor& a, double b) { return add(a, constant(b)); }
Tensor sub(const Tensor& a, double b) { return sub(a, constant(b)); }
Tensor sub(double a, const Tensor& b) { return sub(constant(a), b); }
Tensor mul(const Tensor& a, double b) { return mul(a, constant(b)); }

Tensor div(const Tensor& a, double b) {
  if (b == 0.0) throw ValueError("division by zero");
  return div(a, constant(b));
}

Tensor abs(const Tensor& a) {
  Buffer sign = a.value().sign();
  return Tensor::make_op(OpKind::Abs, a.shape(), a.value().abs(), {a},
                         [sign = std::move(sign)](const Buffer& g, std::span<Buffer* const> acc) {
                           *acc[0] += g * sign;
                         });
}

Tensor sqrt(const Tensor& a) {
  if ((a.value() < 0.0).any()) throw ValueError("sqrt of negative value");
  Buffer out = a.value().sqrt();
  return Tensor::make_op(OpKind::Sqrt, a.shape(), out, {a}, [out](const Buffer& g, std::span<Buffer* const> acc) {
    // sqrt'(0) is unbounded; 0 is used as the subgradient there.
    *acc[0] += (out > 0.0).select(g * 0.5 / out.max(1e-300), 0.0);
  });
}

Tensor neg(const Tensor& a) {
  return Tensor::make_op(OpKind::Neg, a.shape(), -a.value(), {a},
                         [](const Buffer& g, std::span<Buffer* const> acc) { *acc[0] -= g; });
}

Tensor exp(const Tensor& a) {
  Buffer out = a.value().exp();
  return Tensor::make_op(OpKind::Exp, a.shape(), out, {a},
                         [out](const Buffer& g, std::span<Buffer* const> acc) { *acc[0] += g * out; });
}

Tensor log(const Tensor& a) {
  if ((a.value() <= 0.0).any()) throw ValueError("log of non-positive value");
  Buffer av = a.value();
  return Tensor::make_op(OpKind::Log, a.shape(), av.log(), {a},
                         [av](const Buffer& g, std::span<Buffer* const> acc) { *acc[0] += g / av; });
}

Tensor tanh(const Tensor& a) {
  Buffer out = a.value().tanh();
  return Tensor::make_op(OpKind::Tanh, a.shape(), out, {a}, [out](const Buffer& g, std::span<Buffer* const> acc) {
    *acc[0] += g * (1.0 - out.square());
  });
}

Tensor clamp_min(const Tensor& a, double floor) {
  Buffer pass = (a.value() > floor).cast<double>();
  return Tensor::make_op(OpKind::ClampMin, a.shape(), a.value().max(floor), {a},
                         [pass = std::move(pass)](const Buffer& g, std::span<Buffer* const> acc) {
                           *acc[0] += g * pass;
                         });
}

// ---------------------------------------------------------------------------
// Reductions

namespace {

void require_nonempty(const char* op, const Tensor& a) {
  if (a.size() == 0) throw ValueError(fmt::format("{}: empty tensor", op));
}

}  // namespace

Tensor sum(const Tensor& a) {
  require_nonempty("sum", a);
  return Tensor::make_op(OpKind::Sum, {}, Buffer::Constant(1, a.value().sum()), {a},
                         [](const Buffer& g, std::span<Buffer* const> acc) { *acc[0] += g(0); });
}

Tensor mean(const Tensor& a) {
  require_nonempty("mean", a);
  const auto n = static_cast<double>(a.size());
  return Tensor::make_op(OpKind::Mean, {}, Buffer::Constant(1, a.value().sum() / n), {a},
                         [n](const Buffer& g, std::span<Buffer* const> acc) { *acc[0] += g(0) / n; });
}

Tensor max(const Tensor& a) {
  require_nonempty("max", a);
  Index arg = 0;
  const double best = a.value().maxCoeff(&arg);
  return Tensor::make_op(OpKind::Max, {}, Buffer::Constant(1, best), {a},
                         [arg](const Buffer& g, std::span<Buffer* const> acc) { (*acc[0])(arg) += g(0); });
}

// ---------------------------------------------------------------------------
// Linear algebra and spatial ops

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError(fmt::format("matmul: incompatible shapes {} and {}", to_string(a.shape()), to_string(b.shape())));
  }
  const Index m = a.dim(0);
  const Index k = a.dim(1);
  const Index n = b.dim(1);
  Buffer out(m * n);
  Eigen::Map<RowMatrix<double>>(out.data(), m, n).noalias() = a.matrix() * b.matrix();
  return Tensor::make_op(OpKind::MatMul, {m, n}, std::move(out), {a, b},
                         [a = a.value(), b = b.value(), m, k, n](const Buffer& g, std::span<Buffer* const> acc) {
                           Eigen::Map<const RowMatrix<double>> G(g.data(), m, n);
                           Eigen::Map<const RowMatrix<double>> A(a.data(), m, k);
                           Eigen::Map<const RowMatrix<double>> B(b.data(), k, n);
                           if (acc[0]) Eigen::Map<RowMatrix<double>>(acc[0]->data(), m, k).noalias() += G * B.transpose();
                           if (acc[1]) Eigen::Map<RowMatrix<double>>(acc[1]->data(), k, n).noalias() += A.transpose() * G;
                         });
}

Tensor conv2d(const Tensor& x, const Tensor& kernel, Index stride) {
  if (stride < 1) throw ValueError(fmt::format("conv2d: stride must be >= 1, got {}", stride));
  const bool planar = x.rank() == 2 && kernel.rank() == 2;
  if (!planar && !(x.rank() == 3 && kernel.rank() == 3 && x.dim(0) == kernel.dim(0))) {
    throw ShapeError(fmt::format("conv2d: input {} incompatible with kernel {}", to_string(x.shape()),
                                 to_string(kernel.shape())));
  }
  const Index c = planar ? 1 : x.dim(0);
  const Index h = x.dim(x.rank() - 2);
  const Index w = x.dim(x.rank() - 1);
  const Index kh = kernel.dim(kernel.rank() - 2);
  const Index kw = kernel.dim(kernel.rank() - 1);
  if (kh > h || kw > w) {
    throw ShapeError(fmt::format("conv2d: kernel {} larger than input {}", to_string(kernel.shape()),
                                 to_string(x.shape())));
  }
  const Index oh = (h - kh) / stride + 1;
  const Index ow = (w - kw) / stride + 1;

  Buffer out = Buffer::Zero(oh * ow);
  const double* xv = x.value().data();
  const double* kv = kernel.value().data();
  for (Index ch = 0; ch < c; ++ch) {
    for (Index u = 0; u < kh; ++u) {
      for (Index v = 0; v < kw; ++v) {
        const double kval = kv[(ch * kh + u) * kw + v];
        for (Index i = 0; i < oh; ++i) {
          const double* row = xv + (ch * h + i * stride + u) * w + v;
          double* o = out.data() + i * ow;
          for (Index j = 0; j < ow; ++j) o[j] += kval * row[j * stride];
        }
      }
    }
  }

  Shape shape = planar ? Shape{oh, ow} : Shape{1, oh, ow};
  return Tensor::make_op(
      OpKind::Conv2d, std::move(shape), std::move(out), {x, kernel},
      [xval = x.value(), kval = kernel.value(), c, h, w, kh, kw, oh, ow, stride](const Buffer& g,
                                                                                 std::span<Buffer* const> acc) {
        for (Index ch = 0; ch < c; ++ch) {
          for (Index u = 0; u < kh; ++u) {
            for (Index v = 0; v < kw; ++v) {
              const Index kidx = (ch * kh + u) * kw + v;
              double kgrad = 0.0;
              for (Index i = 0; i < oh; ++i) {
                const Index base = (ch * h + i * stride + u) * w + v;
                const double* gi = g.data() + i * ow;
                if (acc[0]) {
                  double* xg = acc[0]->data() + base;
                  const double k = kval(kidx);
                  for (Index j = 0; j < ow; ++j) xg[j * stride] += k * gi[j];
                }
                if (acc[1]) {
                  const double* xr = xval.data() + base;
                  for (Index j = 0; j < ow; ++j) kgrad += gi[j] * xr[j * stride];
                }
              }
              if (acc[1]) (*acc[1])(kidx) += kgrad;
            }
          }
        }
      });
}

Tensor downsample2x(const Tensor& x) {
  if (x.rank() < 2) throw ShapeError(fmt::format("downsample2x: need at least 2 axes, got {}", to_string(x.shape())));
  const Index h = x.dim(x.rank() - 2);
  const Index w = x.dim(x.rank() - 1);
  if (h < 2 || w < 2) throw ShapeError(fmt::format("downsample2x: input {} smaller than 2x2", to_string(x.shape())));
  const Index planes = x.size() / (h * w);
  const Index oh = h / 2;
  const Index ow = w / 2;
  Buffer out(planes * oh * ow);
  const double* xv = x.value().data();
  for (Index p = 0; p < planes; ++p) {
    for (Index i = 0; i < oh; ++i) {
      for (Index j = 0; j < ow; ++j) {
        const double* r0 = xv + (p * h + 2 * i) * w + 2 * j;
        const double* r1 = r0 + w;
        out((p * oh + i) * ow + j) = 0.25 * (r0[0] + r0[1] + r1[0] + r1[1]);
      }
    }
  }
  Shape shape = x.shape();
  shape[shape.size() - 2] = oh;
  shape[shape.size() - 1] = ow;
  return Tensor::make_op(OpKind::Downsample2x, std::move(shape), std::move(out), {x},
                         [planes, h, w, oh, ow](const Buffer& g, std::span<Buffer* const> acc) {
                           double* xg = acc[0]->data();
                           for (Index p = 0; p < planes; ++p) {
                             for (Index i = 0; i < oh; ++i) {
                               for (Index j = 0; j < ow; ++j) {
                                 const double q = 0.25 * g((p * oh + i) * ow + j);
                                 double* r0 = xg + (p * h + 2 * i) * w + 2 * j;
                                 r0[0] += q;
                                 r0[1] += q;
                                 r0[w] += q;
                                 r0[w + 1] += q;
                               }
                             }
                           }
                         });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw ShapeError(fmt::format("reshape: {} to {} changes element count", to_string(a.shape()), to_string(shape)));
  }
  return Tensor::make_op(OpKind::Reshape, std::move(shape), a.value(), {a},
                         [](const Buffer& g, std::span<Buffer* const> acc) { *acc[0] += g; });
}

Tensor concat(std::span<const Tensor> parts) {
  if (parts.empty()) throw ValueError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (first.empty()) throw ShapeError("concat: inputs must have at least one axis");
  Index rows = 0;
  Index total = 0;
  for (const auto& p : parts) {
    if (p.rank() != first.size() || !std::equal(first.begin() + 1, first.end(), p.shape().begin() + 1)) {
      throw ShapeError(fmt::format("concat: shape {} incompatible with {}", to_string(p.shape()), to_string(first)));
    }
    rows += p.dim(0);
    total += p.size();
  }
  Buffer out(total);
  std::vector<Index> offsets;
  Index offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    out.segment(offset, p.size()) = p.value();
    offset += p.size();
  }
  Shape shape = first;
  shape[0] = rows;
  return Tensor::make_op(OpKind::Concat, std::move(shape), std::move(out), {parts.begin(), parts.end()},
                         [offsets](const Buffer& g, std::span<Buffer* const> acc) {
                           for (std::size_t i = 0; i < acc.size(); ++i) {
                             if (acc[i]) *acc[i] += g.segment(offsets[i], acc[i]->size());
                           }
                         });
}

Tensor select(const Tensor& a, Index i) {
  if (a.rank() == 0 || i < 0 || i >= a.dim(0)) {
    throw ShapeError(fmt::format("select: index {} out of range for shape {}", i, to_string(a.shape())));
  }
  Shape shape(a.shape().begin() + 1, a.shape().end());
  const Index inner = numel(shape);
  return Tensor::make_op(OpKind::Select, std::move(shape), a.value().segment(i * inner, inner), {a},
                         [i, inner](const Buffer& g, std::span<Buffer* const> acc) {
                           acc[0]->segment(i * inner, inner) += g;
                         });
}

// ---------------------------------------------------------------------------

double grad_check(const ScalarFunction& f, const Tensor& x, double eps) {
  if (!(eps > 0.0)) throw ValueError(fmt::format("grad_check: eps must be positive, got {}", eps));
  Tensor leaf = Tensor::from(x.shape(), x.value(), true);
  Tensor y = f(leaf);
  if (!std::isfinite(y.item())) throw NumericError("grad_check: f is not finite at x");
  y.backward();
  const Buffer analytic = leaf.has_grad() ? leaf.grad() : Buffer::Zero(x.size());

  Buffer probe = x.value();
  double worst = 0.0;
  for (Index i = 0; i < probe.size(); ++i) {
    const double x0 = probe(i);
    probe(i) = x0 + eps;
    const double fp = f(Tensor::from(x.shape(), probe)).item();
    probe(i) = x0 - eps;
    const double fm = f(Tensor::from(x.shape(), probe)).item();
    probe(i) = x0;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericError(fmt::format("grad_check: f is not finite near coordinate {}", i));
    }
    const double fd = (fp - fm) / (2.0 * eps);
    worst = std::max(worst, std::abs(analytic(i) - fd) / std::max(1.0, std::abs(fd)));
  }
  return worst;
}

}  // namespace morphbench
