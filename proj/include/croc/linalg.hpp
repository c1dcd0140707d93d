#pragma once

#include <cstddef>
#include <vector>

#include "croc/tensor.hpp"

namespace croc {

/// Singular values of a rank-2 tensor with rows >= cols, sorted descending.
/// Computed from the Gram matrix by cyclic Jacobi rotations; intended for
/// narrow matrices (cols <= 64).
std::vector<double> singular_values(const Tensor& a);

/// Same, on a raw row-major matrix.
std::vector<double> singular_values(const std::vector<double>& a, std::size_t rows,
                                    std::size_t cols);

/// Eigenvalues of a symmetric matrix (row-major, n x n), sorted descending.
/// Cyclic Jacobi, off-diagonal Frobenius norm driven to 1e-12 relative to the
/// input scale.
std::vector<double> symmetric_eigenvalues(std::vector<double> g, std::size_t n);

}  // namespace croc
