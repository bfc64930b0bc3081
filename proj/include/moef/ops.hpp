#pragma once

#include "moef/matrix.hpp"

namespace moef {

// Dense forward kernels. These are the single source of the math: the tape's
// differentiable ops call the same kernels in their forward paths.

// Shape-checked product a*b. Throws shape_error naming both shapes.
Matrix matmul(const Matrix& a, const Matrix& b);

// Row-wise softmax, stabilized by row-max subtraction.
Matrix softmax_rows(const Matrix& m);

// Elementwise logistic.
Matrix sigmoid(const Matrix& m);

// Elementwise Gaussian-error linear unit, exact erf form.
Matrix gelu(const Matrix& m);

// Row-wise log(sum(exp(.))), stabilized. Returns m.rows() x 1.
Matrix logsumexp_rows(const Matrix& m);

struct TopK {
    IndexMatrix indices;  // rows x k, per row sorted by (value desc, index asc)
    Matrix values;        // rows x k
};

// Per row, the k largest entries. Ties break toward the lowest column index;
// output is in rank order, so the result is a deterministic function of m.
TopK topk_rows(const Matrix& m, int k);

// out(i,j) = <a_i, b_j> / (|a_i| |b_j| + eps) over rows of a and b.
inline constexpr double kCosineEps = 1e-8;
Matrix cosine_sim(const Matrix& a, const Matrix& b);

// Non-overlapping block mean over columns; cols must be divisible by target.
Matrix block_mean_cols(const Matrix& m, Index target_cols);

// gate = sigmoid(slope * ((agg - x) - shift)); out = x + gate * (agg - x),
// pinned to the closed interval spanned elementwise by x and agg so that the
// blend stays convex under rounding and gate_blend(x, x) == x bitwise.
Matrix gate_blend(const Matrix& x, const Matrix& agg, double slope, double shift);

}  // namespace moef
