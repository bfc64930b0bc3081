#pragma once

#include "moef/matrix.hpp"

#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace moef {

class Tape;

// Handle to a node on a tape. Cheap to copy; valid for the tape's lifetime.
struct Var {
    Tape* tape = nullptr;
    int id = -1;
};

// Record of primitive operations with reverse-mode differentiation.
//
// Nodes are appended in execution order, so parents always precede children
// and the reverse id order is a reverse topological order. Each node carries
// a forward closure (recompute value from parents; used by replay()) and a
// backward closure (scatter the node's gradient into its parents).
//
// A tape is exclusive to one logical execution stream. Independent tapes may
// be evaluated concurrently.
class Tape {
public:
    using ForwardFn = std::function<Matrix(const Tape&)>;
    using BackwardFn = std::function<void(Tape&, int self)>;

    Var constant(Matrix value);

    // Registers a named trainable leaf. Names must be unique per tape.
    Var param(const std::string& name, Matrix value);

    const Matrix& value(Var v) const { return nodes_[check(v)].value; }
    const Matrix& value_at(int id) const { return nodes_[static_cast<size_t>(id)].value; }

    // Gradient of the last backward() loss w.r.t. v; zero matrix if v was
    // not reached.
    Matrix grad(Var v) const;
    Matrix grad_of(const std::string& name) const;

    // Reverse-mode sweep from a scalar (1x1) loss. Throws shape_error
    // otherwise. Gradients from any previous sweep are discarded.
    void backward(Var loss);

    // Recomputes every node's forward value in order. Given identical leaf
    // values this reproduces the exact original values bitwise.
    void replay();

    size_t size() const { return nodes_.size(); }
    const std::vector<std::pair<std::string, int>>& params() const { return params_; }

    // Op builders use these; not intended for direct use elsewhere.
    Var make(std::vector<int> parents, Matrix value, ForwardFn fwd, BackwardFn bwd);
    bool needs_grad(int id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }
    void accumulate(int id, const Matrix& contribution);
    const Matrix& grad_at(int id) const;
    bool grad_reached(int id) const { return nodes_[static_cast<size_t>(id)].grad_set; }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool grad_set = false;
        bool requires_grad = false;
        std::vector<int> parents;
        ForwardFn fwd;
        BackwardFn bwd;
    };

    size_t check(Var v) const;

    std::vector<Node> nodes_;
    std::vector<std::pair<std::string, int>> params_;
};

// ---- differentiable op set ----
// Free functions building one tape node each. Forward math lives in the
// kernels of ops.hpp wherever one exists.

Var matmul(Var a, Var b);
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var cwise_mul(Var a, Var b);
// s * a + c, elementwise
Var affine(Var a, double s, double c);
inline Var scale(Var a, double s) { return affine(a, s, 0.0); }
Var cwise_mul_const(Var a, Matrix mask);
// a + ones * bias, bias is 1 x cols
Var add_row_vector(Var a, Var bias);
Var sigmoid(Var a);
Var gelu(Var a);
Var softmax_rows(Var a);
Var logsumexp_rows(Var a);
Var square(Var a);
Var sum(Var a);
Var col_mean(Var a);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
// out.row(r) = a.row(rows[r])
Var gather_rows(Var a, std::vector<int> rows);
// out has total_rows rows, out.row(rows[r]) += a.row(r)
Var scatter_rows(Var a, std::vector<int> rows, Index total_rows);
// out(k, 0) = a(cells[k].first, cells[k].second)
Var gather_cells(Var a, std::vector<std::pair<int, int>> cells);
// out(i, j) = a(i, idx(i, j))
Var gather_entries(Var a, IndexMatrix idx);
// out.row(i) = a.row(i) * w(i, 0)
Var row_scale(Var a, Var w);
// out.row(i) = a.row(i) / sum(a.row(i))
Var row_normalize(Var a);
Var cosine_sim(Var a, Var b);
// out.row(r) = sum_j w(r, j) * src.row(rows(r, j))
Var weighted_row_gather_sum(Var w, Var src, IndexMatrix rows);
// gate = sigmoid(slope * ((agg - x) - shift)); out = x + gate * (agg - x),
// clamped to the closed interval spanned by x and agg elementwise.
Var adaptive_gate_blend(Var x, Var agg, double slope, double shift);

}  // namespace moef
