#pragma once

// Independent reference computations used by the unit and acceptance tests.
// Nothing here calls into the code paths it is used to check.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "cvq/rng.hpp"
#include "cvq/tensor.hpp"

namespace cvq::oracle {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v));
}

/// Exhaustive argmin of squared distances; ties resolve to the smallest index
/// because the scan only replaces on strictly smaller values.
inline std::vector<std::size_t> brute_argmin(const std::vector<double>& vectors, std::size_t dim,
                                             const std::vector<double>& codebook) {
  const std::size_t T = vectors.size() / dim, N = codebook.size() / dim;
  std::vector<std::size_t> out(T);
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<double> d(N);
    for (std::size_t n = 0; n < N; ++n) {
      long double s = 0.0L;
      for (std::size_t j = 0; j < dim; ++j) {
        const long double diff = static_cast<long double>(vectors[t * dim + j]) - codebook[n * dim + j];
        s += diff * diff;
      }
      d[n] = static_cast<double>(s);
    }
    std::size_t best = 0;
    for (std::size_t n = 1; n < N; ++n) {
      if (d[n] < d[best]) best = n;
    }
    out[t] = best;
  }
  return out;
}

using TensorFn = std::function<Tensor(const std::vector<Tensor>&)>;

/// Reduces a tensor to a scalar with fixed pseudo-random weights, so every
/// output element contributes to the checked gradient.
inline Tensor weighted_scalar(const Tensor& out, std::uint64_t seed) {
  if (out.numel() == 1 && out.rank() == 0) return out;
  Rng rng(seed ^ 0xA5A5A5A5ULL);
  std::vector<double> w(out.numel());
  for (double& x : w) x = rng.uniform(0.5, 1.5) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
  return sum(out * Tensor(out.shape(), std::move(w)));
}

/// Largest relative error, over all inputs, between the reverse-mode gradient
/// and a central finite difference:  ||g_ad - g_fd|| / max(||g_ad||, ||g_fd||, floor).
inline double gradcheck(const TensorFn& f, const std::vector<Tensor>& inputs, std::uint64_t seed = 1,
                        double h = 1e-6, double floor = 1e-8) {
  std::vector<Tensor> leaves;
  for (const auto& t : inputs) leaves.emplace_back(t.shape(), t.to_vector(), true);
  Tensor loss = weighted_scalar(f(leaves), seed);
  loss.backward();
  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const std::vector<double> ad = leaves[i].grad();
    std::vector<double> fd(ad.size());
    for (std::size_t k = 0; k < ad.size(); ++k) {
      auto eval = [&](double delta) {
        std::vector<Tensor> probe;
        for (std::size_t j = 0; j < inputs.size(); ++j) {
          auto v = inputs[j].to_vector();
          if (j == i) v[k] += delta;
          probe.emplace_back(inputs[j].shape(), std::move(v));
        }
        return weighted_scalar(f(probe), seed).item();
      };
      fd[k] = (eval(h) - eval(-h)) / (2.0 * h);
    }
    double diff = 0.0, na = 0.0, nf = 0.0;
    for (std::size_t k = 0; k < ad.size(); ++k) {
      diff += (ad[k] - fd[k]) * (ad[k] - fd[k]);
      na += ad[k] * ad[k];
      nf += fd[k] * fd[k];
    }
    const double denom = std::max({std::sqrt(na), std::sqrt(nf), floor});
    worst = std::max(worst, std::sqrt(diff) / denom);
  }
  return worst;
}

/// Same relative error for model parameters: analytic gradients of `loss()`
/// against central differences taken by perturbing each parameter in place.
/// At most `max_per_param` entries of each parameter are probed (evenly
/// spaced), which keeps micro-model checks fast.
inline double param_gradcheck(const std::function<Tensor()>& loss, std::vector<Tensor> params, double h = 1e-6,
                              std::size_t max_per_param = 64, double floor = 1e-8) {
  for (auto& p : params) p.zero_grad();
  loss().backward();
  double worst = 0.0;
  for (auto& p : params) {
    const std::vector<double> ad = p.grad();
    const std::size_t n = ad.size();
    const std::size_t stride = std::max<std::size_t>(1, n / max_per_param);
    double diff = 0.0, na = 0.0, nf = 0.0;
    for (std::size_t k = 0; k < n; k += stride) {
      auto data = p.mutable_data();
      const double orig = data[k];
      data[k] = orig + h;
      const double up = loss().item();
      data[k] = orig - h;
      const double down = loss().item();
      data[k] = orig;
      const double fd = (up - down) / (2.0 * h);
      diff += (ad[k] - fd) * (ad[k] - fd);
      na += ad[k] * ad[k];
      nf += fd * fd;
    }
    worst = std::max(worst, std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nf), floor}));
    p.zero_grad();
  }
  return worst;
}

/// 10 log10(1 / mse) computed in long double, with the 99 dB cap.
inline double psnr_reference(const std::vector<double>& x, const std::vector<double>& y) {
  long double s = 0.0L;
  for (std::size_t i = 0; i < x.size(); ++i) s += (static_cast<long double>(x[i]) - y[i]) * (x[i] - y[i]);
  const long double mse = s / x.size();
  if (mse == 0.0L) return 99.0;
  return std::min(99.0, static_cast<double>(10.0L * std::log10(1.0L / mse)));
}

}  // namespace cvq::oracle
