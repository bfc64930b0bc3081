#include "moef/ops.hpp"

#include "moef/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <vector>

namespace moef {

namespace {

std::string shape_str(const Matrix& m) {
    std::ostringstream os;
    os << m.rows() << "x" << m.cols();
    return os.str();
}

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw shape_error("matmul: inner dimensions differ, lhs " + shape_str(a) +
                          " vs rhs " + shape_str(b));
    }
    return a * b;
}

Matrix softmax_rows(const Matrix& m) {
    Matrix out(m.rows(), m.cols());
    for (Index i = 0; i < m.rows(); ++i) {
        const double row_max = m.row(i).maxCoeff();
        out.row(i) = (m.row(i).array() - row_max).exp();
        out.row(i) /= out.row(i).sum();
    }
    return out;
}

Matrix sigmoid(const Matrix& m) {
    return (1.0 / (1.0 + (-m.array()).exp())).matrix();
}

Matrix gelu(const Matrix& m) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    return m.unaryExpr([](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); });
}

Matrix logsumexp_rows(const Matrix& m) {
    Matrix out(m.rows(), 1);
    for (Index i = 0; i < m.rows(); ++i) {
        const double row_max = m.row(i).maxCoeff();
        out(i, 0) = row_max + std::log((m.row(i).array() - row_max).exp().sum());
    }
    return out;
}

TopK topk_rows(const Matrix& m, int k) {
    if (k < 1 || k > m.cols()) {
        throw config_error("topk_rows: k = " + std::to_string(k) +
                           " out of range [1, " + std::to_string(m.cols()) + "]");
    }
    TopK result;
    result.indices.resize(m.rows(), k);
    result.values.resize(m.rows(), k);
    std::vector<int> order(static_cast<size_t>(m.cols()));
    for (Index i = 0; i < m.rows(); ++i) {
        std::iota(order.begin(), order.end(), 0);
        std::partial_sort(order.begin(), order.begin() + k, order.end(),
                          [&](int a, int b) {
                              const double va = m(i, a);
                              const double vb = m(i, b);
                              if (va != vb) return va > vb;
                              return a < b;
                          });
        for (int j = 0; j < k; ++j) {
            result.indices(i, j) = order[static_cast<size_t>(j)];
            result.values(i, j) = m(i, order[static_cast<size_t>(j)]);
        }
    }
    return result;
}

Matrix cosine_sim(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) {
        throw shape_error("cosine_sim: channel dims differ, " + shape_str(a) +
                          " vs " + shape_str(b));
    }
    const Vector na = a.rowwise().norm();
    const Vector nb = b.rowwise().norm();
    Matrix out = a * b.transpose();
    for (Index i = 0; i < out.rows(); ++i)
        for (Index j = 0; j < out.cols(); ++j)
            out(i, j) /= na(i) * nb(j) + kCosineEps;
    return out;
}

Matrix gate_blend(const Matrix& x, const Matrix& agg, double slope, double shift) {
    if (x.rows() != agg.rows() || x.cols() != agg.cols()) {
        throw shape_error("gate_blend: shapes differ, " + shape_str(x) + " vs " +
                          shape_str(agg));
    }
    const Matrix diff = agg - x;
    const Matrix gate = sigmoid((slope * (diff.array() - shift)).matrix());
    Matrix out = x + gate.cwiseProduct(diff);
    return out.cwiseMax(x.cwiseMin(agg)).cwiseMin(x.cwiseMax(agg));
}

Matrix block_mean_cols(const Matrix& m, Index target_cols) {
    if (target_cols < 1 || m.cols() < target_cols || m.cols() % target_cols != 0) {
        throw config_error("block_mean_cols: cannot pool " + std::to_string(m.cols()) +
                           " channels to " + std::to_string(target_cols) +
                           " (target must divide the channel count)");
    }
    const Index r = m.cols() / target_cols;
    Matrix out(m.rows(), target_cols);
    for (Index j = 0; j < target_cols; ++j)
        out.col(j) = m.middleCols(j * r, r).rowwise().mean();
    return out;
}

}  // namespace moef
