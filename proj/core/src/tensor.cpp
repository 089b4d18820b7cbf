#include "cvq/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "cvq/error.hpp"
#include "cvq/parallel.hpp"

namespace cvq {

using detail::Node;

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

std::uint64_t next_seq() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

void check_shape(const Shape& shape) {
  for (std::size_t d : shape) {
    if (d == 0) fail(ErrorKind::Shape, "zero-sized dimension in shape " + shape_str(shape));
  }
}

void check_finite(const std::vector<double>& data, const char* op) {
  for (double v : data) {
    if (!std::isfinite(v)) fail(ErrorKind::Numeric, std::string("non-finite value produced by ") + op);
  }
}

std::shared_ptr<Node> new_node(Shape shape, std::vector<double> data) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->seq = next_seq();
  return node;
}

/// Builds an op result. The backward closure is kept only when some parent
/// participates in differentiation.
Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   std::vector<Tensor> parents, detail::BackwardFn fn) {
  check_finite(data, op);
  auto node = new_node(std::move(shape), std::move(data));
  const bool rg = std::any_of(parents.begin(), parents.end(),
                              [](const Tensor& p) { return p.requires_grad(); });
  if (rg) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node());
    node->backward = std::move(fn);
  }
  return Tensor(std::move(node));
}

bool wants_grad(const Node& self, std::size_t i) { return self.parents[i]->requires_grad; }

std::vector<double>& parent_grad(Node& self, std::size_t i) { return self.parents[i]->grad_buffer(); }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    fail(ErrorKind::Shape, std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                               shape_str(b.shape()));
  }
}

// C[m,n] += A[m,k] * B[k,n], row-major. Rows of C are independent.
void gemm_acc(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c) {
  parallel_for(m, 16, [=](std::size_t r0, std::size_t r1) {
    for (std::size_t i = r0; i < r1; ++i) {
      double* crow = c + i * n;
      const double* arow = a + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = arow[p];
        const double* brow = b + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  });
}

std::vector<double> transposed(const double* a, std::size_t rows, std::size_t cols) {
  std::vector<double> t(rows * cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) t[j * rows + i] = a[i * cols + j];
  return t;
}

struct AxisSplit {
  std::size_t outer, len, inner;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

template <class Fwd, class Deriv>
Tensor unary(const char* op, const Tensor& x, Fwd fwd, Deriv deriv) {
  std::vector<double> out(x.numel());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xd[i]);
  return make_result(op, x.shape(), std::move(out), {x}, [deriv](Node& self) {
    auto& g = parent_grad(self, 0);
    const auto& xin = self.parents[0]->data;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * deriv(xin[i], self.data[i]);
  });
}

}  // namespace

// ---------------------------------------------------------------- Tensor

Tensor::Tensor() : node_(new_node({}, {0.0})) {}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  check_shape(shape);
  if (shape_numel(shape) != data.size()) {
    fail(ErrorKind::Shape, "data length " + std::to_string(data.size()) + " does not match shape " + shape_str(shape));
  }
  check_finite(data, "Tensor construction");
  node_ = new_node(std::move(shape), std::move(data));
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({}, {value}, requires_grad); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    fail(ErrorKind::Shape, "axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank()));
  }
  return node_->shape[axis];
}

double Tensor::item() const {
  require(numel() == 1, ErrorKind::Shape, "item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
  require(!node_->backward, ErrorKind::State, "set_requires_grad on a non-leaf tensor");
  node_->requires_grad = on;
  return *this;
}

std::vector<double> Tensor::grad() const {
  if (node_->grad.empty()) return std::vector<double>(numel(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.clear(); }

void Tensor::backward() { GradTape(*this).backward(); }

Tensor Tensor::detach() const { return Tensor(shape(), node_->data, false); }

// ---------------------------------------------------------------- GradTape

GradTape::GradTape(const Tensor& root) : root_(root) {
  require(root.numel() == 1, ErrorKind::Shape, "backward requires a scalar, got " + shape_str(root.shape()));
  require(!root.node()->consumed, ErrorKind::State, "backward called twice on the same graph");
  if (!root.requires_grad()) return;
  std::unordered_set<const Node*> seen;
  std::vector<std::shared_ptr<Node>> stack{root.node()};
  while (!stack.empty()) {
    auto n = std::move(stack.back());
    stack.pop_back();
    if (!seen.insert(n.get()).second) continue;
    require(!n->consumed, ErrorKind::State, "graph contains nodes from a previous backward pass");
    for (auto& p : n->parents) {
      if (p->requires_grad) stack.push_back(p);
    }
    nodes_.push_back(std::move(n));
  }
  std::sort(nodes_.begin(), nodes_.end(), [](const auto& a, const auto& b) { return a->seq > b->seq; });
}

void GradTape::backward() {
  require(!ran_, ErrorKind::State, "backward called twice on the same tape");
  require(!root_.node()->consumed, ErrorKind::State, "backward called twice on the same graph");
  ran_ = true;
  if (nodes_.empty()) {
    root_.node()->consumed = true;
    return;
  }
  root_.node()->grad_buffer()[0] += 1.0;
  for (auto& n : nodes_) {
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
  for (auto& n : nodes_) {
    if (n->backward) {
      n->backward = nullptr;
      n->parents.clear();
      n->grad.clear();
      n->grad.shrink_to_fit();
      n->consumed = true;
    }
  }
  root_.node()->consumed = true;
}

// ---------------------------------------------------------------- elementwise

Tensor elementwise(ElementwiseKind kind, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "elementwise");
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<double> out(a.numel());
  switch (kind) {
    case ElementwiseKind::Add:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
      return make_result("add", a.shape(), std::move(out), {a, b}, [](Node& self) {
        for (std::size_t k = 0; k < 2; ++k) {
          if (!wants_grad(self, k)) continue;
          auto& g = parent_grad(self, k);
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
      });
    case ElementwiseKind::Sub:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] - bd[i];
      return make_result("sub", a.shape(), std::move(out), {a, b}, [](Node& self) {
        if (wants_grad(self, 0)) {
          auto& g = parent_grad(self, 0);
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (wants_grad(self, 1)) {
          auto& g = parent_grad(self, 1);
          for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
      });
    case ElementwiseKind::Mul:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
      return make_result("mul", a.shape(), std::move(out), {a, b}, [](Node& self) {
        const auto& av = self.parents[0]->data;
        const auto& bv = self.parents[1]->data;
        if (wants_grad(self, 0)) {
          auto& g = parent_grad(self, 0);
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
        }
        if (wants_grad(self, 1)) {
          auto& g = parent_grad(self, 1);
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
        }
      });
    case ElementwiseKind::Div:
      for (std::size_t i = 0; i < out.size(); ++i) {
        require(bd[i] != 0.0, ErrorKind::Value, "division by zero");
        out[i] = ad[i] / bd[i];
      }
      return make_result("div", a.shape(), std::move(out), {a, b}, [](Node& self) {
        const auto& bv = self.parents[1]->data;
        if (wants_grad(self, 0)) {
          auto& g = parent_grad(self, 0);
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / bv[i];
        }
        if (wants_grad(self, 1)) {
          auto& g = parent_grad(self, 1);
          for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i] * self.data[i] / bv[i];
        }
      });
    case ElementwiseKind::Pow:
      if (b.requires_grad()) {
        for (double v : ad) {
          require(v > 0.0, ErrorKind::Value, "pow with differentiable exponent needs a positive base");
        }
      }
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::pow(ad[i], bd[i]);
      return make_result("pow", a.shape(), std::move(out), {a, b}, [](Node& self) {
        const auto& av = self.parents[0]->data;
        const auto& bv = self.parents[1]->data;
        if (wants_grad(self, 0)) {
          auto& g = parent_grad(self, 0);
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i] * std::pow(av[i], bv[i] - 1.0);
        }
        if (wants_grad(self, 1)) {
          auto& g = parent_grad(self, 1);
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * self.data[i] * std::log(av[i]);
        }
      });
  }
  fail(ErrorKind::Value, "unknown elementwise kind");
}

Tensor elementwise(ElementwiseKind kind, const Tensor& a, double b) {
  const auto ad = a.data();
  std::vector<double> out(a.numel());
  switch (kind) {
    case ElementwiseKind::Add:
    case ElementwiseKind::Sub: {
      const double s = kind == ElementwiseKind::Add ? b : -b;
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + s;
      return make_result("add_scalar", a.shape(), std::move(out), {a}, [](Node& self) {
        auto& g = parent_grad(self, 0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      });
    }
    case ElementwiseKind::Mul:
    case ElementwiseKind::Div: {
      if (kind == ElementwiseKind::Div) require(b != 0.0, ErrorKind::Value, "division by zero");
      const double s = kind == ElementwiseKind::Mul ? b : 1.0 / b;
      for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = kind == ElementwiseKind::Mul ? ad[i] * b : ad[i] / b;
      }
      return make_result("mul_scalar", a.shape(), std::move(out), {a}, [s](Node& self) {
        auto& g = parent_grad(self, 0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
      });
    }
    case ElementwiseKind::Pow:
      return unary(
          "pow_scalar", a, [b](double x) { return std::pow(x, b); },
          [b](double x, double) { return b * std::pow(x, b - 1.0); });
  }
  fail(ErrorKind::Value, "unknown elementwise kind");
}

Tensor operator+(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseKind::Add, a, b); }
Tensor operator-(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseKind::Sub, a, b); }
Tensor operator*(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseKind::Mul, a, b); }
Tensor operator/(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseKind::Div, a, b); }
Tensor operator+(const Tensor& a, double b) { return elementwise(ElementwiseKind::Add, a, b); }
Tensor operator-(const Tensor& a, double b) { return elementwise(ElementwiseKind::Sub, a, b); }
Tensor operator*(const Tensor& a, double b) { return elementwise(ElementwiseKind::Mul, a, b); }
Tensor operator/(const Tensor& a, double b) { return elementwise(ElementwiseKind::Div, a, b); }
Tensor operator+(double a, const Tensor& b) { return elementwise(ElementwiseKind::Add, b, a); }
Tensor operator*(double a, const Tensor& b) { return elementwise(ElementwiseKind::Mul, b, a); }
Tensor operator-(const Tensor& a) { return elementwise(ElementwiseKind::Mul, a, -1.0); }
Tensor pow(const Tensor& a, double exponent) { return elementwise(ElementwiseKind::Pow, a, exponent); }
Tensor pow(const Tensor& a, const Tensor& exponent) { return elementwise(ElementwiseKind::Pow, a, exponent); }

// ---------------------------------------------------------------- activations

Tensor exp(const Tensor& x) {
  return unary("exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary("log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor tanh(const Tensor& x) {
  return unary("tanh", x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& x) {
  return unary("relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  constexpr double kS = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kC = 0.044715;
  return unary(
      "gelu", x,
      [](double v) { return 0.5 * v * (1.0 + std::tanh(kS * (v + kC * v * v * v))); },
      [](double v, double) {
        const double t = std::tanh(kS * (v + kC * v * v * v));
        return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kS * (1.0 + 3.0 * kC * v * v);
      });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      "sigmoid", x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor square(const Tensor& x) {
  return unary("square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

// ---------------------------------------------------------------- matmul

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2, ErrorKind::Shape, "matmul expects rank-2 operands");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  require(b.dim(0) == k, ErrorKind::Shape,
          "matmul inner dimension mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<double> out(m * n, 0.0);
  gemm_acc(m, k, n, a.data().data(), b.data().data(), out.data());
  return make_result("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    const auto& av = self.parents[0]->data;
    const auto& bv = self.parents[1]->data;
    if (wants_grad(self, 0)) {
      const auto bt = transposed(bv.data(), k, n);
      gemm_acc(m, n, k, self.grad.data(), bt.data(), parent_grad(self, 0).data());
    }
    if (wants_grad(self, 1)) {
      const auto at = transposed(av.data(), m, k);
      gemm_acc(k, m, n, at.data(), self.grad.data(), parent_grad(self, 1).data());
    }
  });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  require(a.rank() == 3 && b.rank() == 3, ErrorKind::Shape, "bmm expects rank-3 operands");
  const std::size_t B = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  require(b.dim(0) == B && b.dim(1) == k, ErrorKind::Shape,
          "bmm shape mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<double> out(B * m * n, 0.0);
  for (std::size_t s = 0; s < B; ++s) {
    gemm_acc(m, k, n, a.data().data() + s * m * k, b.data().data() + s * k * n, out.data() + s * m * n);
  }
  return make_result("bmm", {B, m, n}, std::move(out), {a, b}, [B, m, k, n](Node& self) {
    const auto& av = self.parents[0]->data;
    const auto& bv = self.parents[1]->data;
    const bool ga = wants_grad(self, 0), gb = wants_grad(self, 1);
    for (std::size_t s = 0; s < B; ++s) {
      const double* dc = self.grad.data() + s * m * n;
      if (ga) {
        const auto bt = transposed(bv.data() + s * k * n, k, n);
        gemm_acc(m, n, k, dc, bt.data(), parent_grad(self, 0).data() + s * m * k);
      }
      if (gb) {
        const auto at = transposed(av.data() + s * m * k, m, k);
        gemm_acc(k, m, n, at.data(), dc, parent_grad(self, 1).data() + s * k * n);
      }
    }
  });
}

// ---------------------------------------------------------------- reductions

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return make_result("sum", {}, {s}, {x}, [](Node& self) {
    auto& g = parent_grad(self, 0);
    const double up = self.grad[0];
    for (double& v : g) v += up;
  });
}

Tensor sum(const Tensor& x, std::size_t axis) {
  require(axis < x.rank(), ErrorKind::Shape, "sum axis out of range");
  const AxisSplit s = split_axis(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<double> out(s.outer * s.inner, 0.0);
  const auto xd = x.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t l = 0; l < s.len; ++l)
      for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += xd[(o * s.len + l) * s.inner + i];
  return make_result("sum_axis", std::move(out_shape), std::move(out), {x}, [s](Node& self) {
    auto& g = parent_grad(self, 0);
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t l = 0; l < s.len; ++l)
        for (std::size_t i = 0; i < s.inner; ++i) g[(o * s.len + l) * s.inner + i] += self.grad[o * s.inner + i];
  });
}

Tensor mean(const Tensor& x) { return sum(x) * (1.0 / static_cast<double>(x.numel())); }

Tensor mean(const Tensor& x, std::size_t axis) {
  require(axis < x.rank(), ErrorKind::Shape, "mean axis out of range");
  return sum(x, axis) * (1.0 / static_cast<double>(x.dim(axis)));
}

Tensor softmax(const Tensor& x) {
  require(x.rank() >= 1, ErrorKind::Shape, "softmax needs rank >= 1");
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  const auto xd = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xd.data() + r * n;
    double* y = out.data() + r * n;
    const double mx = *std::max_element(in, in + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (y[j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < n; ++j) y[j] /= z;
  }
  return make_result("softmax", x.shape(), std::move(out), {x}, [rows, n](Node& self) {
    auto& g = parent_grad(self, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.data.data() + r * n;
      const double* dy = self.grad.data() + r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += dy[j] * y[j];
      for (std::size_t j = 0; j < n; ++j) g[r * n + j] += y[j] * (dy[j] - dot);
    }
  });
}

Tensor log_softmax(const Tensor& x) {
  require(x.rank() >= 1, ErrorKind::Shape, "log_softmax needs rank >= 1");
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  const auto xd = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xd.data() + r * n;
    const double mx = *std::max_element(in, in + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(in[j] - mx);
    const double lz = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = in[j] - lz;
  }
  return make_result("log_softmax", x.shape(), std::move(out), {x}, [rows, n](Node& self) {
    auto& g = parent_grad(self, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* ly = self.data.data() + r * n;
      const double* dy = self.grad.data() + r * n;
      double total = 0.0;
      for (std::size_t j = 0; j < n; ++j) total += dy[j];
      for (std::size_t j = 0; j < n; ++j) g[r * n + j] += dy[j] - std::exp(ly[j]) * total;
    }
  });
}

Tensor causal_softmax(const Tensor& x) {
  require(x.rank() >= 2 && x.shape().back() == x.shape()[x.rank() - 2], ErrorKind::Shape,
          "causal_softmax expects [..., T, T], got " + shape_str(x.shape()));
  const std::size_t t = x.shape().back();
  const std::size_t mats = x.numel() / (t * t);
  const auto xd = x.data();
  std::vector<double> out(x.numel(), 0.0);
  for (std::size_t b = 0; b < mats; ++b) {
    for (std::size_t i = 0; i < t; ++i) {
      const double* in = xd.data() + (b * t + i) * t;
      double* y = out.data() + (b * t + i) * t;
      const double mx = *std::max_element(in, in + i + 1);
      double z = 0.0;
      for (std::size_t j = 0; j <= i; ++j) z += (y[j] = std::exp(in[j] - mx));
      for (std::size_t j = 0; j <= i; ++j) y[j] /= z;
    }
  }
  return make_result("causal_softmax", x.shape(), std::move(out), {x}, [mats, t](Node& self) {
    auto& g = parent_grad(self, 0);
    for (std::size_t b = 0; b < mats; ++b) {
      for (std::size_t i = 0; i < t; ++i) {
        const std::size_t off = (b * t + i) * t;
        const double* y = self.data.data() + off;
        const double* dy = self.grad.data() + off;
        double dot = 0.0;
        for (std::size_t j = 0; j <= i; ++j) dot += dy[j] * y[j];
        for (std::size_t j = 0; j <= i; ++j) g[off + j] += y[j] * (dy[j] - dot);
      }
    }
  });
}

Tensor layernorm(const Tensor& x, double eps) {
  require(x.rank() >= 1, ErrorKind::Shape, "layernorm needs rank >= 1");
  require(eps >= 0.0, ErrorKind::Value, "layernorm eps must be non-negative");
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  const auto xd = x.data();
  std::vector<double> out(x.numel());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xd.data() + r * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += in[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<double>(n);
    require(var + eps > 0.0, ErrorKind::Numeric, "layernorm of a constant row with eps = 0");
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = (in[j] - mu) * inv_std[r];
  }
  return make_result("layernorm", x.shape(), std::move(out), {x}, [rows, n, inv_std](Node& self) {
    auto& g = parent_grad(self, 0);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.data.data() + r * n;
      const double* dy = self.grad.data() + r * n;
      double mdy = 0.0, mdyy = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        mdy += dy[j];
        mdyy += dy[j] * y[j];
      }
      mdy *= inv_n;
      mdyy *= inv_n;
      for (std::size_t j = 0; j < n; ++j) g[r * n + j] += inv_std[r] * (dy[j] - mdy - y[j] * mdyy);
    }
  });
}

Tensor stop_gradient(const Tensor& x) { return x.detach(); }

// ---------------------------------------------------------------- views

Tensor reshape(const Tensor& x, Shape shape) {
  check_shape(shape);
  require(shape_numel(shape) == x.numel(), ErrorKind::Shape,
          "cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  return make_result("reshape", std::move(shape), x.to_vector(), {x}, [](Node& self) {
    auto& g = parent_grad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  const std::size_t r = x.rank();
  require(axes.size() == r, ErrorKind::Shape, "permute axis count mismatch");
  std::vector<bool> used(r, false);
  for (std::size_t a : axes) {
    require(a < r && !used[a], ErrorKind::Shape, "permute axes are not a permutation");
    used[a] = true;
  }
  const Shape& in_shape = x.shape();
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * in_shape[i];
  Shape out_shape(r);
  std::vector<std::size_t> src_strides(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = in_shape[axes[i]];
    src_strides[i] = in_strides[axes[i]];
  }
  // Source offset for every output position, walked as an odometer.
  std::vector<std::size_t> src(x.numel());
  std::vector<std::size_t> idx(r, 0);
  std::size_t off = 0;
  for (std::size_t flat = 0; flat < src.size(); ++flat) {
    src[flat] = off;
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      off += src_strides[d];
      if (idx[d] < out_shape[d]) break;
      off -= src_strides[d] * out_shape[d];
      idx[d] = 0;
    }
  }
  const auto xd = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[src[i]];
  return make_result("permute", std::move(out_shape), std::move(out), {x},
                     [src = std::move(src)](Node& self) {
                       auto& g = parent_grad(self, 0);
                       for (std::size_t i = 0; i < src.size(); ++i) g[src[i]] += self.grad[i];
                     });
}

Tensor transpose(const Tensor& x) {
  require(x.rank() >= 2, ErrorKind::Shape, "transpose needs rank >= 2");
  std::vector<std::size_t> axes(x.rank());
  std::iota(axes.begin(), axes.end(), 0);
  std::swap(axes[x.rank() - 1], axes[x.rank() - 2]);
  return permute(x, axes);
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  require(axis < x.rank(), ErrorKind::Shape, "slice axis out of range");
  require(length > 0 && start + length <= x.dim(axis), ErrorKind::Shape,
          "slice [" + std::to_string(start) + ", " + std::to_string(start + length) + ") out of range for " +
              shape_str(x.shape()));
  const AxisSplit s = split_axis(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  std::vector<double> out(s.outer * length * s.inner);
  const auto xd = x.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(xd.data() + (o * s.len + start) * s.inner, length * s.inner, out.data() + o * length * s.inner);
  }
  return make_result("slice", std::move(out_shape), std::move(out), {x}, [s, start, length](Node& self) {
    auto& g = parent_grad(self, 0);
    for (std::size_t o = 0; o < s.outer; ++o) {
      const double* src = self.grad.data() + o * length * s.inner;
      double* dst = g.data() + (o * s.len + start) * s.inner;
      for (std::size_t i = 0; i < length * s.inner; ++i) dst[i] += src[i];
    }
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  require(!parts.empty(), ErrorKind::Shape, "concat of zero tensors");
  const Shape& ref = parts[0].shape();
  require(axis < ref.size(), ErrorKind::Shape, "concat axis out of range");
  std::vector<std::size_t> lens;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require(p.rank() == ref.size(), ErrorKind::Shape, "concat rank mismatch");
    for (std::size_t d = 0; d < ref.size(); ++d) {
      require(d == axis || p.dim(d) == ref[d], ErrorKind::Shape, "concat shape mismatch");
    }
    lens.push_back(p.dim(axis));
    total += p.dim(axis);
  }
  Shape out_shape = ref;
  out_shape[axis] = total;
  const AxisSplit s = split_axis(out_shape, axis);
  std::vector<double> out(shape_numel(out_shape));
  std::size_t pos = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto pd = parts[k].data();
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(pd.data() + o * lens[k] * s.inner, lens[k] * s.inner, out.data() + (o * total + pos) * s.inner);
    }
    pos += lens[k];
  }
  return make_result("concat", std::move(out_shape), std::move(out), parts, [s, lens, total](Node& self) {
    std::size_t at = 0;
    for (std::size_t k = 0; k < lens.size(); ++k) {
      if (wants_grad(self, k)) {
        auto& g = parent_grad(self, k);
        for (std::size_t o = 0; o < s.outer; ++o) {
          const double* src = self.grad.data() + (o * total + at) * s.inner;
          double* dst = g.data() + o * lens[k] * s.inner;
          for (std::size_t i = 0; i < lens[k] * s.inner; ++i) dst[i] += src[i];
        }
      }
      at += lens[k];
    }
  });
}

Tensor expand(const Tensor& x, Shape shape) {
  check_shape(shape);
  require(shape.size() >= x.rank() && std::equal(x.shape().rbegin(), x.shape().rend(), shape.rbegin()),
          ErrorKind::Shape, "cannot expand " + shape_str(x.shape()) + " to " + shape_str(shape));
  const std::size_t n = x.numel();
  const std::size_t reps = shape_numel(shape) / n;
  std::vector<double> out(reps * n);
  const auto xd = x.data();
  for (std::size_t r = 0; r < reps; ++r) std::copy_n(xd.data(), n, out.data() + r * n);
  return make_result("expand", std::move(shape), std::move(out), {x}, [reps, n](Node& self) {
    auto& g = parent_grad(self, 0);
    for (std::size_t r = 0; r < reps; ++r)
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[r * n + i];
  });
}

Tensor index_rows(const Tensor& table, std::span<const std::size_t> indices) {
  require(table.rank() == 2, ErrorKind::Shape, "index_rows expects a [N, d] table");
  require(!indices.empty(), ErrorKind::Shape, "index_rows with no indices");
  const std::size_t rows = table.dim(0), d = table.dim(1);
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  std::vector<double> out(idx.size() * d);
  const auto td = table.data();
  for (std::size_t t = 0; t < idx.size(); ++t) {
    if (idx[t] >= rows) {
      fail(ErrorKind::Value, "index " + std::to_string(idx[t]) + " out of range for " + std::to_string(rows) + " rows");
    }
    std::copy_n(td.data() + idx[t] * d, d, out.data() + t * d);
  }
  const std::size_t count = idx.size();
  return make_result("index_rows", {count, d}, std::move(out), {table}, [idx = std::move(idx), d](Node& self) {
    auto& g = parent_grad(self, 0);
    for (std::size_t t = 0; t < idx.size(); ++t)
      for (std::size_t j = 0; j < d; ++j) g[idx[t] * d + j] += self.grad[t * d + j];
  });
}

Tensor gather_last(const Tensor& x, std::span<const std::size_t> indices) {
  require(x.rank() == 2, ErrorKind::Shape, "gather_last expects [T, N]");
  const std::size_t t = x.dim(0), n = x.dim(1);
  require(indices.size() == t, ErrorKind::Shape, "gather_last index count mismatch");
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  std::vector<double> out(t);
  for (std::size_t r = 0; r < t; ++r) {
    require(idx[r] < n, ErrorKind::Value, "gather_last index out of range");
    out[r] = x.data()[r * n + idx[r]];
  }
  return make_result("gather_last", {t}, std::move(out), {x}, [idx = std::move(idx), n](Node& self) {
    auto& g = parent_grad(self, 0);
    for (std::size_t r = 0; r < idx.size(); ++r) g[r * n + idx[r]] += self.grad[r];
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets) {
  return -mean(gather_last(log_softmax(logits), targets));
}

Tensor mse(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mse");
  return mean(square(a - b));
}

}  // namespace cvq
