#include "moef/tape.hpp"

#include "moef/errors.hpp"
#include "moef/ops.hpp"

#include <cmath>

namespace moef {

namespace {

void check_same_tape(Var a, Var b, const char* op) {
    if (a.tape == nullptr || b.tape == nullptr || a.tape != b.tape) {
        throw shape_error(std::string(op) + ": operands live on different tapes");
    }
}

void check_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw shape_error(std::string(op) + ": shapes differ, " + std::to_string(a.rows()) +
                          "x" + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                          "x" + std::to_string(b.cols()));
    }
}

}  // namespace

size_t Tape::check(Var v) const {
    if (v.tape != this || v.id < 0 || static_cast<size_t>(v.id) >= nodes_.size()) {
        throw shape_error("Tape: stale or foreign Var handle");
    }
    return static_cast<size_t>(v.id);
}

Var Tape::constant(Matrix value) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = false;
    Matrix snapshot = n.value;
    n.fwd = [snapshot](const Tape&) { return snapshot; };
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::param(const std::string& name, Matrix value) {
    for (const auto& [existing, id] : params_) {
        if (existing == name) {
            throw config_error("Tape::param: duplicate parameter name '" + name + "'");
        }
    }
    Node n;
    n.value = std::move(value);
    n.requires_grad = true;
    Matrix snapshot = n.value;
    n.fwd = [snapshot](const Tape&) { return snapshot; };
    nodes_.push_back(std::move(n));
    const int id = static_cast<int>(nodes_.size() - 1);
    params_.emplace_back(name, id);
    return Var{this, id};
}

Var Tape::make(std::vector<int> parents, Matrix value, ForwardFn fwd, BackwardFn bwd) {
    Node n;
    n.value = std::move(value);
    n.parents = std::move(parents);
    for (int p : n.parents) {
        if (nodes_[static_cast<size_t>(p)].requires_grad) {
            n.requires_grad = true;
            break;
        }
    }
    n.fwd = std::move(fwd);
    n.bwd = std::move(bwd);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size() - 1)};
}

void Tape::accumulate(int id, const Matrix& contribution) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.requires_grad) return;
    if (!n.grad_set) {
        n.grad = contribution;
        n.grad_set = true;
    } else {
        n.grad += contribution;
    }
}

const Matrix& Tape::grad_at(int id) const {
    return nodes_[static_cast<size_t>(id)].grad;
}

Matrix Tape::grad(Var v) const {
    const Node& n = nodes_[check(v)];
    if (n.grad_set) return n.grad;
    return Matrix::Zero(n.value.rows(), n.value.cols());
}

Matrix Tape::grad_of(const std::string& name) const {
    for (const auto& [pname, id] : params_) {
        if (pname == name) return grad(Var{const_cast<Tape*>(this), id});
    }
    throw config_error("Tape::grad_of: unknown parameter '" + name + "'");
}

void Tape::backward(Var loss) {
    const size_t loss_id = check(loss);
    const Node& l = nodes_[loss_id];
    if (l.value.rows() != 1 || l.value.cols() != 1) {
        throw shape_error("backward: loss must be a 1x1 scalar, got " +
                          std::to_string(l.value.rows()) + "x" + std::to_string(l.value.cols()));
    }
    for (Node& n : nodes_) {
        n.grad_set = false;
        n.grad.resize(0, 0);
    }
    nodes_[loss_id].grad = Matrix::Ones(1, 1);
    nodes_[loss_id].grad_set = true;
    for (int id = static_cast<int>(loss_id); id >= 0; --id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (!n.grad_set || !n.requires_grad || !n.bwd) continue;
        n.bwd(*this, id);
    }
}

void Tape::replay() {
    for (Node& n : nodes_) {
        n.value = n.fwd(*this);
    }
}

// ---- ops ----

Var matmul(Var a, Var b) {
    check_same_tape(a, b, "matmul");
    Tape& t = *a.tape;
    Matrix v = matmul(t.value(a), t.value(b));
    const int ai = a.id, bi = b.id;
    return t.make(
        {ai, bi}, std::move(v),
        [ai, bi](const Tape& tp) { return matmul(tp.value_at(ai), tp.value_at(bi)); },
        [ai, bi](Tape& tp, int self) {
            const Matrix& g = tp.grad_at(self);
            if (tp.needs_grad(ai)) tp.accumulate(ai, g * tp.value_at(bi).transpose());
            if (tp.needs_grad(bi)) tp.accumulate(bi, tp.value_at(ai).transpose() * g);
        });
}

Var operator+(Var a, Var b) {
    check_same_tape(a, b, "add");
    Tape& t = *a.tape;
    check_same_shape(t.value(a), t.value(b), "add");
    const int ai = a.id, bi = b.id;
    return t.make(
        {ai, bi}, t.value(a) + t.value(b),
        [ai, bi](const Tape& tp) -> Matrix { return tp.value_at(ai) + tp.value_at(bi); },
        [ai, bi](Tape& tp, int self) {
            tp.accumulate(ai, tp.grad_at(self));
            tp.accumulate(bi, tp.grad_at(self));
        });
}

Var operator-(Var a, Var b) {
    check_same_tape(a, b, "sub");
    Tape& t = *a.tape;
    check_same_shape(t.value(a), t.value(b), "sub");
    const int ai = a.id, bi = b.id;
    return t.make(
        {ai, bi}, t.value(a) - t.value(b),
        [ai, bi](const Tape& tp) -> Matrix { return tp.value_at(ai) - tp.value_at(bi); },
        [ai, bi](Tape& tp, int self) {
            tp.accumulate(ai, tp.grad_at(self));
            if (tp.needs_grad(bi)) tp.accumulate(bi, -tp.grad_at(self));
        });
}

Var cwise_mul(Var a, Var b) {
    check_same_tape(a, b, "cwise_mul");
    Tape& t = *a.tape;
    check_same_shape(t.value(a), t.value(b), "cwise_mul");
    const int ai = a.id, bi = b.id;
    return t.make(
        {ai, bi}, t.value(a).cwiseProduct(t.value(b)),
        [ai, bi](const Tape& tp) -> Matrix {
            return tp.value_at(ai).cwiseProduct(tp.value_at(bi));
        },
        [ai, bi](Tape& tp, int self) {
            const Matrix& g = tp.grad_at(self);
            if (tp.needs_grad(ai)) tp.accumulate(ai, g.cwiseProduct(tp.value_at(bi)));
            if (tp.needs_grad(bi)) tp.accumulate(bi, g.cwiseProduct(tp.value_at(ai)));
        });
}

Var affine(Var a, double s, double c) {
    Tape& t = *a.tape;
    const int ai = a.id;
    return t.make(
        {ai}, (s * t.value(a).array() + c).matrix(),
        [ai, s, c](const Tape& tp) -> Matrix {
            return (s * tp.value_at(ai).array() + c).matrix();
        },
        [ai, s](Tape& tp, int self) { tp.accumulate(ai, s * tp.grad_at(self)); });
}

Var cwise_mul_const(Var a, Matrix mask) {
    Tape& t = *a.tape;
    check_same_shape(t.value(a), mask, "cwise_mul_const");
    const int ai = a.id;
    return t.make(
        {ai}, t.value(a).cwiseProduct(mask),
        [ai, mask](const Tape& tp) -> Matrix { return tp.value_at(ai).cwiseProduct(mask); },
        [ai, mask](Tape& tp, int self) {
            tp.accumulate(ai, tp.grad_at(self).cwiseProduct(mask));
        });
}

Var add_row_vector(Var a, Var bias) {
    check_same_tape(a, bias, "add_row_vector");
    Tape& t = *a.tape;
    const Matrix& av = t.value(a);
    const Matrix& bv = t.value(bias);
    if (bv.rows() != 1 || bv.cols() != av.cols()) {
        throw shape_error("add_row_vector: bias must be 1x" + std::to_string(av.cols()) +
                          ", got " + std::to_string(bv.rows()) + "x" + std::to_string(bv.cols()));
    }
    const int ai = a.id, bi = bias.id;
    Matrix v = av.rowwise() + bv.row(0);
    return t.make(
        {ai, bi}, std::move(v),
        [ai, bi](const Tape& tp) -> Matrix {
            return tp.value_at(ai).rowwise() + tp.value_at(bi).row(0);
        },
        [ai, bi](Tape& tp, int self) {
            const Matrix& g = tp.grad_at(self);
            tp.accumulate(ai, g);
            if (tp.needs_grad(bi)) tp.accumulate(bi, g.colwise().sum());
        });
}

Var sigmoid(Var a) {
    Tape& t = *a.tape;
    const int ai = a.id;
    return t.make(
        {ai}, sigmoid(t.value(a)),
        [ai](const Tape& tp) { return sigmoid(tp.value_at(ai)); },
        [ai](Tape& tp, int self) {
            const Matrix& y = tp.value_at(self);
            const Matrix& g = tp.grad_at(self);
            tp.accumulate(ai, (g.array() * y.array() * (1.0 - y.array())).matrix());
        });
}

Var gelu(Var a) {
    Tape& t = *a.tape;
    const int ai = a.id;
    return t.make(
        {ai}, gelu(t.value(a)),
        [ai](const Tape& tp) { return gelu(tp.value_at(ai)); },
        [ai](Tape& tp, int self) {
            // d gelu / dx = Phi(x) + x * phi(x)
            const Matrix deriv = tp.value_at(ai).unaryExpr([](double x) {
                constexpr double inv_sqrt2 = 0.70710678118654752440;
                constexpr double inv_sqrt2pi = 0.39894228040143267794;
                const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
                const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
                return cdf + x * pdf;
            });
            tp.accumulate(ai, tp.grad_at(self).cwiseProduct(deriv));
        });
}

Var softmax_rows(Var a) {
    Tape& t = *a.tape;
    const int ai = a.id;
    return t.make(
        {ai}, softmax_rows(t.value(a)),
        [ai](const Tape& tp) { return softmax_rows(tp.value_at(ai)); },
        [ai](Tape& tp, int self) {
            const Matrix& y = tp.value_at(self);
            const Matrix& g = tp.grad_at(self);
            Matrix dx(y.rows(), y.cols());
            for (Index i = 0; i < y.rows(); ++i) {
                const double dot = g.row(i).dot(y.row(i));
                dx.row(i) = (y.row(i).array() * (g.row(i).array() - dot)).matrix();
            }
            tp.accumulate(ai, dx);
        });
}

Var logsumexp_rows(Var a) {
    Tape& t = *a.tape;
    const int ai = a.id;
    return t.make(
        {ai}, logsumexp_rows(t.value(a)),
        [ai](const Tape& tp) { return logsumexp_rows(tp.value_at(ai)); },
        [ai](Tape& tp, int self) {
            // d lse / d x = softmax(x) per row
            const Matrix sm = softmax_rows(tp.value_at(ai));
            const Matrix& g = tp.grad_at(self);
            Matrix dx(sm.rows(), sm.cols());
            for (Index i = 0; i < sm.rows(); ++i) dx.row(i) = g(i, 0) * sm.row(i);
            tp.accumulate(ai, dx);
        });
}

Var square(Var a) {
    Tape& t = *a.tape;
    const int ai = a.id;
    return t.make(
        {ai}, t.value(a).array().square().matrix(),
        [ai](const Tape& tp) -> Matrix { return tp.value_at(ai).array().square().matrix(); },
        [ai](Tape& tp, int self) {
            tp.accumulate(
                ai, (2.0 * tp.grad_at(self).array() * tp.value_at(ai).array()).matrix());
        });
}

Var sum(Var a) {
    Tape& t = *a.tape;
    const int ai = a.id;
    Matrix v(1, 1);
    v(0, 0) = t.value(a).sum();
    return t.make(
        {ai}, std::move(v),
        [ai](const Tape& tp) -> Matrix {
            Matrix out(1, 1);
            out(0, 0) = tp.value_at(ai).sum();
            return out;
        },
        [ai](Tape& tp, int self) {
            const Matrix& src = tp.value_at(ai);
            tp.accumulate(ai, Matrix::Constant(src.rows(), src.cols(), tp.grad_at(self)(0, 0)));
        });
}

Var col_mean(Var a) {
    Tape& t = *a.tape;
    const int ai = a.id;
    return t.make(
        {ai}, t.value(a).colwise().mean(),
        [ai](const Tape& tp) -> Matrix { return tp.value_at(ai).colwise().mean(); },
        [ai](Tape& tp, int self) {
            const Matrix& src = tp.value_at(ai);
            const Matrix& g = tp.grad_at(self);
            const double inv = 1.0 / static_cast<double>(src.rows());
            Matrix dx(src.rows(), src.cols());
            for (Index i = 0; i < src.rows(); ++i) dx.row(i) = inv * g.row(0);
            tp.accumulate(ai, dx);
        });
}

Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw shape_error("concat_rows: no inputs");
    Tape& t = *parts[0].tape;
    Index rows = 0;
    const Index cols = t.value(parts[0]).cols();
    std::vector<int> ids;
    ids.reserve(parts.size());
    for (Var p : parts) {
        check_same_tape(parts[0], p, "concat_rows");
        if (t.value(p).cols() != cols) {
            throw shape_error("concat_rows: channel dims differ, " + std::to_string(cols) +
                              " vs " + std::to_string(t.value(p).cols()));
        }
        rows += t.value(p).rows();
        ids.push_back(p.id);
    }
    Matrix v(rows, cols);
    Index at = 0;
    for (Var p : parts) {
        v.middleRows(at, t.value(p).rows()) = t.value(p);
        at += t.value(p).rows();
    }
    return t.make(
        ids, std::move(v),
        [ids](const Tape& tp) -> Matrix {
            Index r = 0;
            for (int id : ids) r += tp.value_at(id).rows();
            Matrix out(r, tp.value_at(ids[0]).cols());
            Index pos = 0;
            for (int id : ids) {
                out.middleRows(pos, tp.value_at(id).rows()) = tp.value_at(id);
                pos += tp.value_at(id).rows();
            }
            return out;
        },
        [ids](Tape& tp, int self) {
            const Matrix& g = tp.grad_at(self);
            Index pos = 0;
            for (int id : ids) {
                const Index r = tp.value_at(id).rows();
                if (tp.needs_grad(id)) tp.accumulate(id, g.middleRows(pos, r));
                pos += r;
            }
        });
}

Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw shape_error("concat_cols: no inputs");
    Tape& t = *parts[0].tape;
    Index cols = 0;
    const Index rows = t.value(parts[0]).rows();
    std::vector<int> ids;
    ids.reserve(parts.size());
    for (Var p : parts) {
        check_same_tape(parts[0], p, "concat_cols");
        if (t.value(p).rows() != rows) {
            throw shape_error("concat_cols: row counts differ, " + std::to_string(rows) +
                              " vs " + std::to_string(t.value(p).rows()));
        }
        cols += t.value(p).cols();
        ids.push_back(p.id);
    }
    auto forward = [ids](const Tape& tp) -> Matrix {
        Index c = 0;
        for (int id : ids) c += tp.value_at(id).cols();
        Matrix out(tp.value_at(ids[0]).rows(), c);
        Index pos = 0;
        for (int id : ids) {
            out.middleCols(pos, tp.value_at(id).cols()) = tp.value_at(id);
            pos += tp.value_at(id).cols();
        }
        return out;
    };
    Matrix v = forward(t);
    return t.make(
        ids, std::move(v), forward,
        [ids](Tape& tp, int self) {
            const Matrix& g = tp.grad_at(self);
            Index pos = 0;
            for (int id : ids) {
                const Index c = tp.value_at(id).cols();
                if (tp.needs_grad(id)) tp.accumulate(id, g.middleCols(pos, c));
                pos += c;
            }
        });
}

Var gather_rows(Var a, std::vector<int> rows) {
    Tape& t = *a.tape;
    const Matrix& av = t.value(a);
    Matrix v(static_cast<Index>(rows.size()), av.cols());
    for (size_t r = 0; r < rows.size(); ++r) v.row(static_cast<Index>(r)) = av.row(rows[r]);
    const int ai = a.id;
    return t.make(
        {ai}, std::move(v),
        [ai, rows](const Tape& tp) -> Matrix {
            const Matrix& src = tp.value_at(ai);
            Matrix out(static_cast<Index>(rows.size()), src.cols());
            for (size_t r = 0; r < rows.size(); ++r)
                out.row(static_cast<Index>(r)) = src.row(rows[r]);
            return out;
        },
        [ai, rows](Tape& tp, int self) {
            const Matrix& src = tp.value_at(ai);
            const Matrix& g = tp.grad_at(self);
            Matrix dx = Matrix::Zero(src.rows(), src.cols());
            for (size_t r = 0; r < rows.size(); ++r)
                dx.row(rows[r]) += g.row(static_cast<Index>(r));
            tp.accumulate(ai, dx);
        });
}

Var scatter_rows(Var a, std::vector<int> rows, Index total_rows) {
    Tape& t = *a.tape;
    const Matrix& av = t.value(a);
    if (av.rows() != static_cast<Index>(rows.size())) {
        throw shape_error("scatter_rows: row index count " + std::to_string(rows.size()) +
                          " does not match input rows " + std::to_string(av.rows()));
    }
    Matrix v = Matrix::Zero(total_rows, av.cols());
    for (size_t r = 0; r < rows.size(); ++r) v.row(rows[r]) += av.row(static_cast<Index>(r));
    const int ai = a.id;
    return t.make(
        {ai}, std::move(v),
        [ai, rows, total_rows](const Tape& tp) -> Matrix {
            const Matrix& src = tp.value_at(ai);
            Matrix out = Matrix::Zero(total_rows, src.cols());
            for (size_t r = 0; r < rows.size(); ++r)
                out.row(rows[r]) += src.row(static_cast<Index>(r));
            return out;
        },
        [ai, rows](Tape& tp, int self) {
            const Matrix& g = tp.grad_at(self);
            Matrix dx(static_cast<Index>(rows.size()), g.cols());
            for (size_t r = 0; r < rows.size(); ++r)
                dx.row(static_cast<Index>(r)) = g.row(rows[r]);
            tp.accumulate(ai, dx);
        });
}

Var gather_cells(Var a, std::vector<std::pair<int, int>> cells) {
    Tape& t = *a.tape;
    const Matrix& av = t.value(a);
    Matrix v(static_cast<Index>(cells.size()), 1);
    for (size_t k = 0; k < cells.size(); ++k)
        v(static_cast<Index>(k), 0) = av(cells[k].first, cells[k].second);
    const int ai = a.id;
    return t.make(
        {ai}, std::move(v),
        [ai, cells](const Tape& tp) -> Matrix {
            const Matrix& src = tp.value_at(ai);
            Matrix out(static_cast<Index>(cells.size()), 1);
            for (size_t k = 0; k < cells.size(); ++k)
                out(static_cast<Index>(k), 0) = src(cells[k].first, cells[k].second);
            return out;
        },
        [ai, cells](Tape& tp, int self) {
            const Matrix& src = tp.value_at(ai);
            const Matrix& g = tp.grad_at(self);
            Matrix dx = Matrix::Zero(src.rows(), src.cols());
            for (size_t k = 0; k < cells.size(); ++k)
                dx(cells[k].first, cells[k].second) += g(static_cast<Index>(k), 0);
            tp.accumulate(ai, dx);
        });
}

Var gather_entries(Var a, IndexMatrix idx) {
    Tape& t = *a.tape;
    const Matrix& av = t.value(a);
    if (idx.rows() != av.rows()) {
        throw shape_error("gather_entries: index rows " + std::to_string(idx.rows()) +
                          " do not match input rows " + std::to_string(av.rows()));
    }
    Matrix v(idx.rows(), idx.cols());
    for (Index i = 0; i < idx.rows(); ++i)
        for (Index j = 0; j < idx.cols(); ++j) v(i, j) = av(i, idx(i, j));
    const int ai = a.id;
    return t.make(
        {ai}, std::move(v),
        [ai, idx](const Tape& tp) -> Matrix {
            const Matrix& src = tp.value_at(ai);
            Matrix out(idx.rows(), idx.cols());
            for (Index i = 0; i < idx.rows(); ++i)
                for (Index j = 0; j < idx.cols(); ++j) out(i, j) = src(i, idx(i, j));
            return out;
        },
        [ai, idx](Tape& tp, int self) {
            const Matrix& src = tp.value_at(ai);
            const Matrix& g = tp.grad_at(self);
            Matrix dx = Matrix::Zero(src.rows(), src.cols());
            for (Index i = 0; i < idx.rows(); ++i)
                for (Index j = 0; j < idx.cols(); ++j) dx(i, idx(i, j)) += g(i, j);
            tp.accumulate(ai, dx);
        });
}

Var row_scale(Var a, Var w) {
    check_same_tape(a, w, "row_scale");
    Tape& t = *a.tape;
    const Matrix& av = t.value(a);
    const Matrix& wv = t.value(w);
    if (wv.cols() != 1 || wv.rows() != av.rows()) {
        throw shape_error("row_scale: weights must be " + std::to_string(av.rows()) +
                          "x1, got " + std::to_string(wv.rows()) + "x" + std::to_string(wv.cols()));
    }
    const int ai = a.id, wi = w.id;
    return t.make(
        {ai, wi}, (av.array().colwise() * wv.col(0).array()).matrix(),
        [ai, wi](const Tape& tp) -> Matrix {
            return (tp.value_at(ai).array().colwise() * tp.value_at(wi).col(0).array()).matrix();
        },
        [ai, wi](Tape& tp, int self) {
            const Matrix& g = tp.grad_at(self);
            const Matrix& av = tp.value_at(ai);
            const Matrix& wv = tp.value_at(wi);
            if (tp.needs_grad(ai))
                tp.accumulate(ai, (g.array().colwise() * wv.col(0).array()).matrix());
            if (tp.needs_grad(wi)) {
                Matrix dw(wv.rows(), 1);
                for (Index i = 0; i < wv.rows(); ++i) dw(i, 0) = g.row(i).dot(av.row(i));
                tp.accumulate(wi, dw);
            }
        });
}

Var row_normalize(Var a) {
    Tape& t = *a.tape;
    const int ai = a.id;
    auto forward = [ai](const Tape& tp) -> Matrix {
        const Matrix& src = tp.value_at(ai);
        Matrix out(src.rows(), src.cols());
        for (Index i = 0; i < src.rows(); ++i) out.row(i) = src.row(i) / src.row(i).sum();
        return out;
    };
    Matrix v = forward(t);
    return t.make(
        {ai}, std::move(v), forward,
        [ai](Tape& tp, int self) {
            const Matrix& src = tp.value_at(ai);
            const Matrix& y = tp.value_at(self);
            const Matrix& g = tp.grad_at(self);
            Matrix dx(src.rows(), src.cols());
            for (Index i = 0; i < src.rows(); ++i) {
                const double s = src.row(i).sum();
                const double gy = g.row(i).dot(y.row(i));
                dx.row(i) = (g.row(i).array() - gy) / s;
            }
            tp.accumulate(ai, dx);
        });
}

Var cosine_sim(Var a, Var b) {
    check_same_tape(a, b, "cosine_sim");
    Tape& t = *a.tape;
    const int ai = a.id, bi = b.id;
    Matrix v = cosine_sim(t.value(a), t.value(b));
    return t.make(
        {ai, bi}, std::move(v),
        [ai, bi](const Tape& tp) { return cosine_sim(tp.value_at(ai), tp.value_at(bi)); },
        [ai, bi](Tape& tp, int self) {
            const Matrix& av = tp.value_at(ai);
            const Matrix& bv = tp.value_at(bi);
            const Matrix& s = tp.value_at(self);
            const Matrix& g = tp.grad_at(self);
            const Vector na = av.rowwise().norm();
            const Vector nb = bv.rowwise().norm();
            Matrix dinv(s.rows(), s.cols());
            for (Index i = 0; i < s.rows(); ++i)
                for (Index j = 0; j < s.cols(); ++j)
                    dinv(i, j) = 1.0 / (na(i) * nb(j) + kCosineEps);
            const Matrix gd = g.cwiseProduct(dinv);
            if (tp.needs_grad(ai)) {
                Matrix da = gd * bv;
                const Matrix gsd = gd.cwiseProduct(s);
                for (Index i = 0; i < av.rows(); ++i) {
                    if (na(i) == 0.0) continue;  // zero row: norm direction undefined
                    double coeff = 0.0;
                    for (Index j = 0; j < s.cols(); ++j) coeff += gsd(i, j) * nb(j);
                    da.row(i) -= (coeff / na(i)) * av.row(i);
                }
                tp.accumulate(ai, da);
            }
            if (tp.needs_grad(bi)) {
                Matrix db = gd.transpose() * av;
                const Matrix gsd = gd.cwiseProduct(s);
                for (Index j = 0; j < bv.rows(); ++j) {
                    if (nb(j) == 0.0) continue;
                    double coeff = 0.0;
                    for (Index i = 0; i < s.rows(); ++i) coeff += gsd(i, j) * na(i);
                    db.row(j) -= (coeff / nb(j)) * bv.row(j);
                }
                tp.accumulate(bi, db);
            }
        });
}

Var weighted_row_gather_sum(Var w, Var src, IndexMatrix rows) {
    check_same_tape(w, src, "weighted_row_gather_sum");
    Tape& t = *w.tape;
    const Matrix& wv = t.value(w);
    if (wv.rows() != rows.rows() || wv.cols() != rows.cols()) {
        throw shape_error("weighted_row_gather_sum: weight and index shapes differ");
    }
    const int wi = w.id, si = src.id;
    auto forward = [wi, si, rows](const Tape& tp) -> Matrix {
        const Matrix& wv = tp.value_at(wi);
        const Matrix& sv = tp.value_at(si);
        Matrix out = Matrix::Zero(wv.rows(), sv.cols());
        for (Index r = 0; r < rows.rows(); ++r)
            for (Index j = 0; j < rows.cols(); ++j)
                out.row(r) += wv(r, j) * sv.row(rows(r, j));
        return out;
    };
    Matrix v = forward(t);
    return t.make(
        {wi, si}, std::move(v), forward,
        [wi, si, rows](Tape& tp, int self) {
            const Matrix& g = tp.grad_at(self);
            const Matrix& wv = tp.value_at(wi);
            const Matrix& sv = tp.value_at(si);
            if (tp.needs_grad(wi)) {
                Matrix dw(wv.rows(), wv.cols());
                for (Index r = 0; r < rows.rows(); ++r)
                    for (Index j = 0; j < rows.cols(); ++j)
                        dw(r, j) = g.row(r).dot(sv.row(rows(r, j)));
                tp.accumulate(wi, dw);
            }
            if (tp.needs_grad(si)) {
                Matrix ds = Matrix::Zero(sv.rows(), sv.cols());
                for (Index r = 0; r < rows.rows(); ++r)
                    for (Index j = 0; j < rows.cols(); ++j)
                        ds.row(rows(r, j)) += wv(r, j) * g.row(r);
                tp.accumulate(si, ds);
            }
        });
}

Var adaptive_gate_blend(Var x, Var agg, double slope, double shift) {
    check_same_tape(x, agg, "adaptive_gate_blend");
    Tape& t = *x.tape;
    check_same_shape(t.value(x), t.value(agg), "adaptive_gate_blend");
    const int xi = x.id, gi = agg.id;
    auto forward = [xi, gi, slope, shift](const Tape& tp) -> Matrix {
        return gate_blend(tp.value_at(xi), tp.value_at(gi), slope, shift);
    };
    Matrix v = forward(t);
    return t.make(
        {xi, gi}, std::move(v), forward,
        [xi, gi, slope, shift](Tape& tp, int self) {
            const Matrix& xv = tp.value_at(xi);
            const Matrix& av = tp.value_at(gi);
            const Matrix& g = tp.grad_at(self);
            const auto diff = (av - xv).array();
            const auto gate = 1.0 / (1.0 + (-slope * (diff - shift)).exp());
            // d out / d diff = gate + slope * gate * (1 - gate) * diff
            const auto ddiff = gate + slope * gate * (1.0 - gate) * diff;
            if (tp.needs_grad(gi)) tp.accumulate(gi, (g.array() * ddiff).matrix());
            if (tp.needs_grad(xi)) tp.accumulate(xi, (g.array() * (1.0 - ddiff)).matrix());
        });
}

}  // namespace moef
