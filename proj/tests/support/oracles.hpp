#pragma once

// Reference implementations used only by tests. They follow the textbook
// definitions directly and share no code with the library kernels.

#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <vector>

namespace oracle {

// a: m x k, b: k x n, row-major.
inline std::vector<double> matmul(const std::vector<double>& a, const std::vector<double>& b,
                                  std::size_t m, std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
  return c;
}

// Valid cross-correlation of one C_in x H x W image with C_out x C_in x K x K
// kernels by sliding the window.
inline std::vector<double> conv2d(const std::vector<double>& in, const std::vector<double>& ker,
                                  std::size_t cin, std::size_t h, std::size_t w, std::size_t cout,
                                  std::size_t k, std::size_t stride) {
  const std::size_t oh = (h - k) / stride + 1, ow = (w - k) / stride + 1;
  std::vector<double> out(cout * oh * ow, 0.0);
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        double s = 0.0;
        for (std::size_t c = 0; c < cin; ++c)
          for (std::size_t dy = 0; dy < k; ++dy)
            for (std::size_t dx = 0; dx < k; ++dx)
              s += in[(c * h + y * stride + dy) * w + x * stride + dx] *
                   ker[((o * cin + c) * k + dy) * k + dx];
        out[(o * oh + y) * ow + x] = s;
      }
  return out;
}

inline double normal_pdf(double x, double mu, double sigma) {
  const double z = (x - mu) / sigma;
  return std::exp(-0.5 * z * z) / (sigma * std::sqrt(2.0 * std::numbers::pi));
}

// Composite Simpson rule on [lo, hi] with n (even) intervals.
inline double simpson(const std::function<double(double)>& f, double lo, double hi,
                      std::size_t n) {
  const double h = (hi - lo) / static_cast<double>(n);
  double s = f(lo) + f(hi);
  for (std::size_t i = 1; i < n; ++i) s += f(lo + h * static_cast<double>(i)) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

// KL(N(mp, sp) || N(mq, sq)) for one dimension by integrating p log(p/q),
// with the log ratio expanded analytically to avoid underflow in the tails.
inline double kl_by_integration(double mp, double sp, double mq, double sq) {
  auto integrand = [&](double x) {
    const double zp = (x - mp) / sp, zq = (x - mq) / sq;
    const double log_ratio = std::log(sq / sp) - 0.5 * zp * zp + 0.5 * zq * zq;
    return normal_pdf(x, mp, sp) * log_ratio;
  };
  const double span = 16.0 * sp;
  return simpson(integrand, mp - span, mp + span, 200000);
}

inline double logsumexp(const std::vector<double>& x) {
  double m = x.front();
  for (double v : x) m = std::max(m, v);
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

// Mean over rows of (M_ii - logsumexp(row i)).
inline double info_nce(const std::vector<double>& scores, std::size_t b) {
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    std::vector<double> row(scores.begin() + static_cast<std::ptrdiff_t>(i * b),
                            scores.begin() + static_cast<std::ptrdiff_t>((i + 1) * b));
    total += row[i] - logsumexp(row);
  }
  return total / static_cast<double>(b);
}

}  // namespace oracle
