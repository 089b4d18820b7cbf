#pragma once

// Every differentiable tensor op with inputs drawn on a smooth part of its
// domain, for finite-difference checks.

#include <string>
#include <vector>

#include "cvq/quantizer.hpp"
#include "cvq/tensor.hpp"
#include "oracles.hpp"

namespace cvq::oracle {

struct OpCase {
  std::string name;
  TensorFn fn;
  std::vector<Tensor> inputs;
};

inline std::vector<OpCase> op_cases(std::uint64_t seed) {
  Rng rng(seed);
  auto r = [&rng](Shape s, double lo = -1.0, double hi = 1.0) { return random_tensor(std::move(s), rng, lo, hi); };
  // Keeps values away from the kink of relu.
  auto away = [&rng](Shape s) {
    std::vector<double> v(shape_numel(s));
    for (double& x : v) x = rng.uniform(0.1, 1.0) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
    return Tensor(std::move(s), std::move(v));
  };
  const std::vector<std::size_t> rows = {0, 2, 2, 1, 3};
  const std::vector<std::size_t> targets = {1, 0, 3};
  using V = const std::vector<Tensor>&;
  std::vector<OpCase> c;
  c.push_back({"add", [](V x) { return x[0] + x[1]; }, {r({3, 4}), r({3, 4})}});
  c.push_back({"sub", [](V x) { return x[0] - x[1]; }, {r({3, 4}), r({3, 4})}});
  c.push_back({"mul", [](V x) { return x[0] * x[1]; }, {r({3, 4}), r({3, 4})}});
  c.push_back({"div", [](V x) { return x[0] / x[1]; }, {r({3, 4}), r({3, 4}, 0.5, 2.0)}});
  c.push_back({"pow_scalar", [](V x) { return pow(x[0], 2.5); }, {r({2, 5}, 0.2, 2.0)}});
  c.push_back({"pow_tensor", [](V x) { return pow(x[0], x[1]); }, {r({2, 5}, 0.2, 2.0), r({2, 5})}});
  c.push_back({"scalar_ops", [](V x) { return ((2.0 * x[0] + 1.0) - 0.5) / 3.0 * 1.5; }, {r({4})}});
  c.push_back({"neg", [](V x) { return -x[0]; }, {r({4})}});
  c.push_back({"exp", [](V x) { return exp(x[0]); }, {r({3, 3})}});
  c.push_back({"log", [](V x) { return log(x[0]); }, {r({3, 3}, 0.2, 3.0)}});
  c.push_back({"tanh", [](V x) { return tanh(x[0]); }, {r({3, 3}, -2.0, 2.0)}});
  c.push_back({"relu", [](V x) { return relu(x[0]); }, {away({3, 3})}});
  c.push_back({"gelu", [](V x) { return gelu(x[0]); }, {r({3, 3}, -3.0, 3.0)}});
  c.push_back({"sigmoid", [](V x) { return sigmoid(x[0]); }, {r({3, 3}, -3.0, 3.0)}});
  c.push_back({"square", [](V x) { return square(x[0]); }, {r({3, 3})}});
  c.push_back({"matmul", [](V x) { return matmul(x[0], x[1]); }, {r({3, 4}), r({4, 5})}});
  c.push_back({"bmm", [](V x) { return bmm(x[0], x[1]); }, {r({2, 3, 4}), r({2, 4, 2})}});
  c.push_back({"sum", [](V x) { return sum(x[0]); }, {r({3, 4})}});
  c.push_back({"sum_axis", [](V x) { return sum(x[0], 1); }, {r({2, 3, 4})}});
  c.push_back({"mean", [](V x) { return mean(x[0]); }, {r({3, 4})}});
  c.push_back({"mean_axis", [](V x) { return mean(x[0], 0); }, {r({2, 3, 4})}});
  c.push_back({"softmax", [](V x) { return softmax(x[0]); }, {r({3, 5}, -2.0, 2.0)}});
  c.push_back({"log_softmax", [](V x) { return log_softmax(x[0]); }, {r({3, 5}, -2.0, 2.0)}});
  c.push_back({"causal_softmax", [](V x) { return causal_softmax(x[0]); }, {r({2, 4, 4}, -2.0, 2.0)}});
  c.push_back({"layernorm", [](V x) { return layernorm(x[0]); }, {r({3, 6})}});
  c.push_back({"reshape", [](V x) { return reshape(x[0], {4, 3}); }, {r({2, 6})}});
  c.push_back({"permute", [](V x) { return permute(x[0], {2, 0, 1}); }, {r({2, 3, 4})}});
  c.push_back({"transpose", [](V x) { return transpose(x[0]); }, {r({2, 3, 4})}});
  c.push_back({"slice", [](V x) { return slice(x[0], 1, 1, 2); }, {r({2, 4, 3})}});
  c.push_back({"concat", [](V x) { return concat({x[0], x[1]}, 1); }, {r({2, 2, 3}), r({2, 1, 3})}});
  c.push_back({"expand", [](V x) { return expand(x[0], {3, 2, 4}); }, {r({2, 4})}});
  c.push_back({"index_rows", [rows](V x) { return index_rows(x[0], rows); }, {r({4, 3})}});
  c.push_back({"gather_last", [targets](V x) { return gather_last(x[0], targets); }, {r({3, 4})}});
  c.push_back({"cross_entropy", [targets](V x) { return cross_entropy(x[0], targets); }, {r({3, 4}, -2.0, 2.0)}});
  c.push_back({"mse", [](V x) { return mse(x[0], x[1]); }, {r({3, 4}), r({3, 4})}});
  return c;
}

}  // namespace cvq::oracle
