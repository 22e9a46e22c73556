#pragma once

#include <vector>

#include "bggan/tensor.hpp"

namespace bggan {

/// How a modality slice's edge weights are interpreted when building degrees.
/// Functional slices are correlation-valued and may be negative; they are
/// passed through abs() before degree computation. Structural slices must be
/// nonnegative as given.
enum class SliceKind { structural, functional };

/// Normalized Laplacian per slice: L = I - D^{-1/2} A D^{-1/2}. Every slice is
/// exactly symmetric and has eigenvalues in [0, 2].
struct LaplacianTensor {
    Tensor3 value;  // N x N x R, real
};

/// Spectral filtering basis. u and lambda live in the original (slice) domain;
/// u_hat/u_inv_hat are kept per frequency because filtering works there.
///
/// u_inv_hat holds slice-wise matrix inverses, not conjugate transposes: the
/// frequency slices of a real symmetric-slice tensor are complex symmetric
/// rather than Hermitian, so the eigenvector matrices are not unitary.
struct SpectralBasis {
    Tensor3 u;                       // N x N x R
    Tensor3 lambda;                  // N x 1 x R eigenvalue tubes
    std::vector<CMatrix> u_hat;      // dft3(u) per frequency (exact copy of what was inverted)
    std::vector<CMatrix> u_inv_hat;  // u_hat[k]^{-1}
};

/// Builds the Laplacian tensor from a real adjacency tensor. `kinds` gives the
/// per-slice interpretation; empty means all structural. Slice diagonals are
/// discarded (self-weights carry no graph structure here). Throws
/// ValidationError on asymmetric slices (tol 1e-9) or negative structural
/// entries. Degree-0 nodes use the pseudo-inverse convention, leaving L_ii = 1.
LaplacianTensor normalized_laplacian(const Tensor3& adj, const std::vector<SliceKind>& kinds = {});

/// Eigendecomposes each frequency slice of dft3(L) with a deterministic
/// ordering (eigenvalues by ascending real part, then ascending imaginary
/// part, then index of the eigenvector's largest-magnitude component) and a
/// deterministic phase (first component above 1e-12 rotated real-positive,
/// unit 2-norm). Conjugate-mirror frequencies are computed once and mirrored.
/// Throws NumericalError naming the frequency on eigensolver failure or a
/// singular eigenvector matrix.
SpectralBasis spectral_basis(const LaplacianTensor& lap);

}  // namespace bggan
