#pragma once

// Dense float64 tensors with reverse-mode automatic differentiation.
//
// Layout is row-major everywhere. Shapes are lists of positive extents; a
// rank-0 tensor holds a single scalar. Broadcasting is limited to
// tensor-scalar arithmetic; use expand() for anything else.
//
// Every op checks that its output is finite and throws NumericError
// otherwise.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace cvq {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node;
using BackwardFn = std::function<void(Node&)>;

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool consumed = false;
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return node_->data.size(); }

  std::span<const double> data() const { return node_->data; }
  /// In-place access for initialisation and optimizer updates only.
  std::span<double> mutable_data() { return node_->data; }
  std::vector<double> to_vector() const { return node_->data; }

  double item() const;
  double operator[](std::size_t flat) const { return node_->data[flat]; }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on);

  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient buffer; zeros when nothing has been accumulated yet.
  std::vector<double> grad() const;
  void zero_grad();

  /// Runs reverse-mode differentiation from this scalar.
  void backward();

  /// A fresh leaf holding a copy of the data, detached from any graph.
  Tensor detach() const;

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Ordered record of the differentiable ops reachable from a scalar root.
/// Node sequence numbers are assigned at creation, so sorting by them gives a
/// topological order. A tape can be run once; running it again, or recording
/// a new tape from an already differentiated graph, throws StateError.
class GradTape {
 public:
  explicit GradTape(const Tensor& root);

  std::size_t size() const { return nodes_.size(); }
  void backward();

 private:
  Tensor root_;
  std::vector<std::shared_ptr<detail::Node>> nodes_;
  bool ran_ = false;
};

// Elementwise arithmetic. Tensor-tensor forms require identical shapes.
enum class ElementwiseKind { Add, Sub, Mul, Div, Pow };

Tensor elementwise(ElementwiseKind kind, const Tensor& a, const Tensor& b);
Tensor elementwise(ElementwiseKind kind, const Tensor& a, double b);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);
Tensor operator/(const Tensor& a, const Tensor& b);
Tensor operator+(const Tensor& a, double b);
Tensor operator-(const Tensor& a, double b);
Tensor operator*(const Tensor& a, double b);
Tensor operator/(const Tensor& a, double b);
Tensor operator+(double a, const Tensor& b);
Tensor operator*(double a, const Tensor& b);
Tensor operator-(const Tensor& a);
Tensor pow(const Tensor& a, double exponent);
Tensor pow(const Tensor& a, const Tensor& exponent);

Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor relu(const Tensor& x);
/// tanh approximation.
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor square(const Tensor& x);

Tensor matmul(const Tensor& a, const Tensor& b);
/// [B, m, k] x [B, k, n] -> [B, m, n]
Tensor bmm(const Tensor& a, const Tensor& b);

Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, std::size_t axis);
Tensor mean(const Tensor& x);
Tensor mean(const Tensor& x, std::size_t axis);

Tensor softmax(const Tensor& x);
Tensor log_softmax(const Tensor& x);
/// Softmax over the last axis of a [..., T, T] score tensor where entry
/// (i, j) with j > i is excluded and yields exactly zero.
Tensor causal_softmax(const Tensor& x);
/// Normalises each row over the last axis to zero mean, unit variance.
Tensor layernorm(const Tensor& x, double eps = 1e-5);

Tensor stop_gradient(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
/// 2-D transpose, or swap of the last two axes for higher ranks.
Tensor transpose(const Tensor& x);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
/// Repeats x along new leading axes; x.shape() must be a suffix of shape.
Tensor expand(const Tensor& x, Shape shape);

/// Rows of a [N, d] table selected by index -> [T, d].
Tensor index_rows(const Tensor& table, std::span<const std::size_t> indices);
/// Picks x[t, idx[t]] from a [T, N] tensor -> [T].
Tensor gather_last(const Tensor& x, std::span<const std::size_t> indices);

/// Mean over rows of the negative log-probability of each target.
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets);
Tensor mse(const Tensor& a, const Tensor& b);

}  // namespace cvq
