#pragma once

#include <cstddef>
#include <vector>

namespace motionseq {

// Eigendecomposition of a symmetric matrix. Eigenvalues ascend; vectors are
// stored column-wise, so vectors[r * n + c] is component r of the unit
// eigenvector paired with values[c].
struct SymEig {
  std::size_t n = 0;
  std::vector<double> values;
  std::vector<double> vectors;
};

// Cyclic Jacobi rotations on a copy of `a` (n x n row-major). The input is
// symmetrized internally, so slight caller-side asymmetry is tolerated.
SymEig jacobi_eigh(std::vector<double> a, std::size_t n);

std::vector<double> matmul_square(const std::vector<double>& a, const std::vector<double>& b,
                                  std::size_t n);

}  // namespace motionseq
