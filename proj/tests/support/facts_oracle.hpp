#pragma once

#include <cmath>
#include <complex>
#include <numbers>
#include <random>
#include <vector>

// Naive recomputations used to cross-check the stylised-fact metrics. Written for clarity,
// accumulate in long double and share no code with the library.
namespace testsupport::oracle {

inline long double avg(const std::vector<double>& x) {
  long double s = 0;
  for (double v : x) s += v;
  return s / static_cast<long double>(x.size());
}

inline double acf_at(const std::vector<double>& x, std::size_t k) {
  const long double m = avg(x);
  long double num = 0, den = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    den += (x[i] - m) * (x[i] - m);
    if (i >= k) num += (x[i] - m) * (x[i - k] - m);
  }
  return static_cast<double>(num / den);
}

inline std::pair<double, double> skew_kurt(const std::vector<double>& x) {
  const long double m = avg(x);
  long double v = 0;
  for (double a : x) v += (a - m) * (a - m);
  v /= x.size();
  const long double sd = std::sqrt(v);
  long double s3 = 0, s4 = 0;
  for (double a : x) {
    const long double z = (a - m) / sd;
    s3 += z * z * z;
    s4 += z * z * z * z;
  }
  return {static_cast<double>(s3 / x.size()), static_cast<double>(s4 / x.size() - 3)};
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const long double ma = avg(a), mb = avg(b);
  long double c = 0, va = 0, vb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    c += (a[i] - ma) * (b[i] - mb);
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
  }
  return static_cast<double>(c / std::sqrt(va * vb));
}

/// Method-of-moments Gamma shape mean^2 / population variance.
inline double gamma_shape(const std::vector<double>& x) {
  const long double m = avg(x);
  long double v = 0;
  for (double a : x) v += (a - m) * (a - m);
  v /= x.size();
  return static_cast<double>(m * m / v);
}

/// Exact fractional Gaussian noise of Hurst index h by circulant embedding (Davies-Harte),
/// with a direct O(m^2) DFT; n must be a power of two.
inline std::vector<double> fgn(std::size_t n, double h, std::mt19937_64& rng) {
  const std::size_t m = 2 * n;
  const auto gamma = [h](double k) {
    return 0.5 * (std::pow(std::abs(k + 1), 2 * h) - 2 * std::pow(std::abs(k), 2 * h) + std::pow(std::abs(k - 1), 2 * h));
  };
  std::vector<double> row(m);
  for (std::size_t k = 0; k <= n; ++k) row[k] = gamma(static_cast<double>(k));
  for (std::size_t k = n + 1; k < m; ++k) row[k] = row[m - k];
  const auto dft = [m](const std::vector<std::complex<double>>& in) {
    std::vector<std::complex<double>> out(m);
    for (std::size_t j = 0; j < m; ++j) {
      std::complex<double> s = 0;
      for (std::size_t k = 0; k < m; ++k) s += in[k] * std::polar(1.0, -2 * std::numbers::pi * double(j * k % m) / double(m));
      out[j] = s;
    }
    return out;
  };
  std::vector<std::complex<double>> r(row.begin(), row.end());
  const auto eig = dft(r);
  std::normal_distribution<double> nd;
  std::vector<std::complex<double>> w(m);
  for (std::size_t j = 0; j < m; ++j) {
    const double lam = std::max(0.0, eig[j].real());
    w[j] = std::sqrt(lam / double(m)) * std::complex<double>(nd(rng), nd(rng));
  }
  const auto z = dft(w);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = z[i].real();
  return out;
}

}  // namespace testsupport::oracle
