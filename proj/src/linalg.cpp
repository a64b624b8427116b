#include "motionseq/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "motionseq/error.hpp"

namespace motionseq {

std::vector<double> matmul_square(const std::vector<double>& a, const std::vector<double>& b,
                                  std::size_t n) {
  if (a.size() != n * n || b.size() != n * n)
    throw ValidationError("matmul_square: operands are not " + std::to_string(n) + "x" +
                          std::to_string(n));
  std::vector<double> out(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < n; ++k) {
      const double aik = a[i * n + k];
      if (aik == 0.0) continue;
      const double* brow = b.data() + k * n;
      double* orow = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aik * brow[j];
    }
  return out;
}

namespace {

double off_diagonal_norm(const std::vector<double>& a, std::size_t n) {
  double ss = 0.0;
  for (std::size_t p = 0; p + 1 < n; ++p)
    for (std::size_t q = p + 1; q < n; ++q) ss += a[p * n + q] * a[p * n + q];
  return std::sqrt(2.0 * ss);
}

}  // namespace

SymEig jacobi_eigh(std::vector<double> a, std::size_t n) {
  if (n == 0) throw ValidationError("jacobi_eigh: empty matrix");
  if (a.size() != n * n)
    throw ValidationError("jacobi_eigh: buffer does not match an " + std::to_string(n) + "x" +
                          std::to_string(n) + " matrix");
  for (double v : a)
    if (!std::isfinite(v)) throw ValidationError("jacobi_eigh: non-finite entry");

  for (std::size_t p = 0; p + 1 < n; ++p)
    for (std::size_t q = p + 1; q < n; ++q) {
      const double m = 0.5 * (a[p * n + q] + a[q * n + p]);
      a[p * n + q] = m;
      a[q * n + p] = m;
    }

  SymEig eig;
  eig.n = n;
  eig.vectors.assign(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) eig.vectors[i * n + i] = 1.0;

  double frob = 0.0;
  for (double v : a) frob += v * v;
  frob = std::sqrt(frob);
  const double stop = 1e-14 * (frob + 1e-300);

  constexpr std::size_t kMaxSweeps = 100;
  std::size_t sweep = 0;
  for (; sweep < kMaxSweeps; ++sweep) {
    if (off_diagonal_norm(a, n) <= stop) break;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (apq == 0.0) continue;
        const double app = a[p * n + p];
        const double aqq = a[q * n + q];
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        const double tau = s / (1.0 + c);

        a[p * n + p] = app - t * apq;
        a[q * n + q] = aqq + t * apq;
        a[p * n + q] = 0.0;
        a[q * n + p] = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
          if (r == p || r == q) continue;
          const double arp = a[r * n + p];
          const double arq = a[r * n + q];
          a[r * n + p] = arp - s * (arq + tau * arp);
          a[p * n + r] = a[r * n + p];
          a[r * n + q] = arq + s * (arp - tau * arq);
          a[q * n + r] = a[r * n + q];
        }
        for (std::size_t r = 0; r < n; ++r) {
          const double vrp = eig.vectors[r * n + p];
          const double vrq = eig.vectors[r * n + q];
          eig.vectors[r * n + p] = vrp - s * (vrq + tau * vrp);
          eig.vectors[r * n + q] = vrq + s * (vrp - tau * vrq);
        }
      }
    }
  }
  if (sweep == kMaxSweeps && off_diagonal_norm(a, n) > stop)
    throw NumericError("jacobi_eigh: no convergence after " + std::to_string(kMaxSweeps) +
                       " sweeps");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t i, std::size_t j) { return a[i * n + i] < a[j * n + j]; });

  eig.values.resize(n);
  std::vector<double> sorted(n * n);
  for (std::size_t c = 0; c < n; ++c) {
    eig.values[c] = a[order[c] * n + order[c]];
    for (std::size_t r = 0; r < n; ++r) sorted[r * n + c] = eig.vectors[r * n + order[c]];
  }
  eig.vectors = std::move(sorted);
  return eig;
}

}  // namespace motionseq
