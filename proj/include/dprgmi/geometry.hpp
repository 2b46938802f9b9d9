#pragma once

#include <cstddef>
#include <span>

#include "dprgmi/matrix.hpp"

namespace dprgmi {

// Embeddings are plain N x d matrices of encoder outputs.
using EmbeddingMatrix = Matrix;

struct CovarianceSummary {
    double trace = 0.0;    // sum of eigenvalues of the covariance
    double frob_sq = 0.0;  // squared Frobenius norm of the covariance (= sum of eigenvalues^2)
    double d_eff = 0.0;    // trace^2 / frob_sq; NaN when trace == 0
};

// Mean squared row distance between paired embedding matrices.
double displacement(const EmbeddingMatrix& z_eps, const EmbeddingMatrix& z_ref);

// Same distance over a row multiset; both matrices indexed identically.
double displacement_indexed(const EmbeddingMatrix& z_eps, const EmbeddingMatrix& z_ref,
                            std::span<const std::size_t> indices);

// Mean-centered covariance with 1/N normalization, summarized through its
// trace and squared Frobenius norm. No eigensolve: trace(S^2) = |S|_F^2 for
// symmetric S, which is all the effective dimension needs.
CovarianceSummary covariance_summary(const EmbeddingMatrix& z);

// Same summary restricted to a row multiset; used by the paired bootstrap.
CovarianceSummary covariance_summary_indexed(const EmbeddingMatrix& z,
                                             std::span<const std::size_t> indices);

// Participation ratio of the covariance spectrum: trace^2 / frob_sq.
// Degenerate (zero-variance) embeddings raise NumericError.
double effective_dimension(const EmbeddingMatrix& z);
double effective_dimension_indexed(const EmbeddingMatrix& z,
                                   std::span<const std::size_t> indices);

}  // namespace dprgmi
