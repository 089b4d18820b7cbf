#include <doctest.h>

#include <cmath>

#include "cvq/error.hpp"
#include "cvq/parallel.hpp"
#include "cvq/tensor.hpp"
#include "op_table.hpp"
#include "oracles.hpp"

using namespace cvq;

namespace {

bool throws_kind(const std::function<void()>& f, ErrorKind kind) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind() == kind;
  }
  return false;
}

}  // namespace

TEST_CASE("every op gradient matches central differences") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    for (auto& op : oracle::op_cases(seed)) {
      CAPTURE(op.name);
      CHECK(oracle::gradcheck(op.fn, op.inputs, seed) < 1e-4);
    }
  }
}

TEST_CASE("matmul forward matches hand values") {
  const Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor b({3, 2}, {7, 8, 9, 10, 11, 12});
  CHECK(matmul(a, b).to_vector() == std::vector<double>{58, 64, 139, 154});
}

TEST_CASE("softmax rows sum to one and causal entries are exactly zero") {
  Rng rng(3);
  const Tensor s = causal_softmax(oracle::random_tensor({2, 5, 5}, rng, -3, 3));
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t i = 0; i < 5; ++i) {
      double total = 0.0;
      for (std::size_t j = 0; j < 5; ++j) {
        const double v = s[(b * 5 + i) * 5 + j];
        if (j > i) CHECK(v == 0.0);
        total += v;
      }
      CHECK(total == doctest::Approx(1.0).epsilon(1e-14));
    }
  }
}

TEST_CASE("layernorm rows have zero mean and unit variance without eps") {
  Rng rng(4);
  const Tensor y = layernorm(oracle::random_tensor({4, 7}, rng, -5, 5), 0.0);
  for (std::size_t r = 0; r < 4; ++r) {
    double m = 0.0, v = 0.0;
    for (std::size_t j = 0; j < 7; ++j) m += y[r * 7 + j];
    m /= 7;
    for (std::size_t j = 0; j < 7; ++j) v += (y[r * 7 + j] - m) * (y[r * 7 + j] - m);
    CHECK(std::abs(m) < 1e-12);
    CHECK(v / 7 == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("permute and transpose move elements as indexed") {
  std::vector<double> v(24);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
  const Tensor x({2, 3, 4}, v);
  const Tensor p = permute(x, {2, 0, 1});
  CHECK(p.shape() == Shape{4, 2, 3});
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < 4; ++k) CHECK(p[(k * 2 + i) * 3 + j] == x[(i * 3 + j) * 4 + k]);
  const Tensor t = transpose(x);
  CHECK(t.shape() == Shape{2, 4, 3});
  CHECK(t[(1 * 4 + 2) * 3 + 1] == x[(1 * 3 + 1) * 4 + 2]);
}

TEST_CASE("index_rows accumulates gradients of repeated rows") {
  Tensor table({3, 2}, {1, 2, 3, 4, 5, 6}, true);
  const std::vector<std::size_t> idx = {2, 0, 2};
  sum(index_rows(table, idx)).backward();
  CHECK(table.grad() == std::vector<double>{1, 1, 0, 0, 2, 2});
}

TEST_CASE("stop_gradient blocks the backward pass") {
  Tensor x({3}, {1, 2, 3}, true);
  sum(stop_gradient(x) * x).backward();
  CHECK(x.grad() == std::vector<double>{1, 2, 3});
}

TEST_CASE("errors carry their category") {
  const Tensor a({2, 2}, {1, 2, 3, 4});
  const Tensor b({3}, {1, 2, 3});
  CHECK(throws_kind([&] { (void)(a + Tensor({4}, {1, 2, 3, 4})); }, ErrorKind::Shape));
  CHECK(throws_kind([&] { (void)matmul(a, Tensor({3, 1}, {1, 2, 3})); }, ErrorKind::Shape));
  CHECK(throws_kind([&] { (void)(b / Tensor({3}, {1, 0, 1})); }, ErrorKind::Value));
  CHECK(throws_kind([&] { (void)(b / 0.0); }, ErrorKind::Value));
  CHECK(throws_kind([&] { (void)log(Tensor({1}, {-1.0})); }, ErrorKind::Numeric));
  CHECK(throws_kind([&] { (void)Tensor({2, 0}, {}); }, ErrorKind::Shape));
  CHECK(throws_kind([&] { (void)layernorm(Tensor({1, 3}, {2, 2, 2}), 0.0); }, ErrorKind::Numeric));
  CHECK(throws_kind([&] { (void)index_rows(a, std::vector<std::size_t>{5}); }, ErrorKind::Value));
}

TEST_CASE("a graph can be differentiated once") {
  Tensor x({2}, {1, 2}, true);
  Tensor loss = sum(x * x);
  loss.backward();
  CHECK(x.grad() == std::vector<double>{2, 4});
  CHECK(throws_kind([&] { loss.backward(); }, ErrorKind::State));
  Tensor y = x * 2.0;
  CHECK(throws_kind([&] { y.set_requires_grad(false); }, ErrorKind::State));
}

TEST_CASE("gradients accumulate over separate graphs until cleared") {
  Tensor x({1}, {3.0}, true);
  sum(x * x).backward();
  sum(x * x).backward();
  CHECK(x.grad()[0] == 12.0);
  x.zero_grad();
  CHECK(x.grad()[0] == 0.0);
}

TEST_CASE("tape orders nodes by creation") {
  Tensor x({2}, {1, 2}, true);
  Tensor y = exp(x);
  Tensor z = sum(y * x);
  GradTape tape(z);
  CHECK(tape.size() == 4);
  tape.backward();
  CHECK(throws_kind([&] { tape.backward(); }, ErrorKind::State));
  CHECK(x.grad()[0] == doctest::Approx(std::exp(1.0) * 2.0));
}

TEST_CASE("matmul is bitwise identical across thread counts") {
  Rng rng(9);
  const Tensor a = oracle::random_tensor({67, 33}, rng), b = oracle::random_tensor({33, 45}, rng);
  set_max_threads(1);
  const auto one = matmul(a, b).to_vector();
  set_max_threads(4);
  const auto four = matmul(a, b).to_vector();
  set_max_threads(1);
  CHECK(one == four);
}
