#include "moef/errors.hpp"
#include "moef/gradcheck.hpp"
#include "moef/ops.hpp"
#include "moef/tape.hpp"

#include <doctest.h>

#include <cmath>
#include <cstring>

using namespace moef;

namespace {

// finite-difference check for a scalar-valued graph builder over one input;
// build must be deterministic (no fresh randomness inside)
double fd_check(const Matrix& input,
                const std::function<Var(Tape&, Var)>& build, double step = 1e-5) {
    Tape tape;
    Var x = tape.param("x", input);
    Var loss = build(tape, x);
    tape.backward(loss);
    const Matrix analytic = tape.grad(x);

    ParamSet params;
    params.add("x", input);
    const ParamSet numeric = finite_diff_grad(
        [&](const ParamSet& p) {
            Tape t;
            Var v = t.param("x", p.at("x"));
            return t.value(build(t, v))(0, 0);
        },
        params, step);
    return max_rel_error(analytic, numeric.at("x"));
}

}  // namespace

TEST_CASE("sum gradient is all ones") {
    Tape tape;
    Var m = tape.param("m", Matrix::Random(3, 4));
    Var loss = sum(m);
    tape.backward(loss);
    CHECK((tape.grad(m) - Matrix::Ones(3, 4)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("squared norm gradient is 2M") {
    Rng rng(1);
    const Matrix m = rng.normal_matrix(3, 3);
    Tape tape;
    Var v = tape.param("m", m);
    Var loss = sum(square(v));
    tape.backward(loss);
    CHECK((tape.grad(v) - 2.0 * m).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("backward rejects non-scalar loss") {
    Tape tape;
    Var m = tape.param("m", Matrix::Random(2, 2));
    CHECK_THROWS_AS(tape.backward(m), shape_error);
}

TEST_CASE("gradient of unreachable parameter is zero") {
    Tape tape;
    Var a = tape.param("a", Matrix::Random(2, 2));
    Var b = tape.param("b", Matrix::Random(2, 2));
    Var loss = sum(a);
    tape.backward(loss);
    CHECK(tape.grad(b).cwiseAbs().maxCoeff() == 0.0);
    CHECK(tape.grad_of("b").cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("replay reproduces forward values bitwise") {
    Rng rng(2);
    Tape tape;
    Var a = tape.param("a", rng.normal_matrix(4, 3));
    Var b = tape.param("b", rng.normal_matrix(3, 5));
    Var c = softmax_rows(matmul(a, b));
    Var loss = sum(cwise_mul(c, c));
    const Matrix lv = tape.value(loss);
    const Matrix cv = tape.value(c);
    tape.replay();
    CHECK(std::memcmp(tape.value(loss).data(), lv.data(), sizeof(double)) == 0);
    CHECK(std::memcmp(tape.value(c).data(), cv.data(), sizeof(double) * 20) == 0);
}

TEST_CASE("every primitive matches central finite differences") {
    Rng rng(7);
    const Matrix x34 = rng.normal_matrix(3, 4);
    const Matrix x33 = rng.normal_matrix(3, 3);

    SUBCASE("matmul both sides") {
        const Matrix b = rng.normal_matrix(4, 2);
        CHECK(fd_check(x34, [&](Tape& t, Var v) {
                  return sum(square(matmul(v, t.constant(b))));
              }) < 1e-6);
        CHECK(fd_check(b, [&](Tape& t, Var v) {
                  return sum(square(matmul(t.constant(x34), v)));
              }) < 1e-6);
    }
    SUBCASE("add sub cwise_mul") {
        const Matrix b = rng.normal_matrix(3, 4);
        CHECK(fd_check(x34, [&](Tape& t, Var v) {
                  Var w = t.constant(b);
                  return sum(square(cwise_mul(v + w, v - w)));
              }) < 5e-6);
        CHECK(fd_check(x34, [&](Tape& t, Var v) { return sum(cwise_mul(v, v)); }) < 1e-6);
    }
    SUBCASE("affine and cwise_mul_const") {
        Matrix mask = Matrix::Ones(3, 4);
        mask(1, 2) = 0.0;
        CHECK(fd_check(x34, [&](Tape& t, Var v) {
                  (void)t;
                  return sum(square(cwise_mul_const(affine(v, 2.5, -0.75), mask)));
              }) < 1e-6);
    }
    SUBCASE("add_row_vector both sides") {
        const Matrix bias = rng.normal_matrix(1, 4);
        CHECK(fd_check(x34, [&](Tape& t, Var v) {
                  return sum(square(add_row_vector(v, t.constant(bias))));
              }) < 1e-6);
        CHECK(fd_check(bias, [&](Tape& t, Var v) {
                  return sum(square(add_row_vector(t.constant(x34), v)));
              }) < 1e-6);
    }
    SUBCASE("sigmoid gelu softmax logsumexp") {
        CHECK(fd_check(x34, [](Tape&, Var v) { return sum(square(sigmoid(v))); }) < 1e-6);
        CHECK(fd_check(x34, [](Tape&, Var v) { return sum(square(gelu(v))); }) < 1e-6);
        CHECK(fd_check(x34, [](Tape&, Var v) { return sum(square(softmax_rows(v))); }) < 1e-5);
        CHECK(fd_check(x34, [](Tape&, Var v) { return sum(square(logsumexp_rows(v))); }) < 1e-6);
    }
    SUBCASE("col_mean and concat") {
        CHECK(fd_check(x34, [](Tape&, Var v) { return sum(square(col_mean(v))); }) < 1e-6);
        const Matrix c_rows = rng.normal_matrix(2, 4);
        CHECK(fd_check(x34, [&](Tape& t, Var v) {
                  return sum(square(concat_rows({v, t.constant(c_rows), v})));
              }) < 1e-6);
        const Matrix c_cols = rng.normal_matrix(3, 2);
        CHECK(fd_check(x34, [&](Tape& t, Var v) {
                  return sum(square(concat_cols({v, t.constant(c_cols)})));
              }) < 1e-6);
    }
    SUBCASE("gather and scatter") {
        CHECK(fd_check(x34, [](Tape&, Var v) {
                  return sum(square(gather_rows(v, {2, 0, 2})));
              }) < 1e-6);
        CHECK(fd_check(x34, [](Tape&, Var v) {
                  return sum(square(scatter_rows(v, {4, 1, 0}, 6)));
              }) < 1e-6);
        CHECK(fd_check(x34, [](Tape&, Var v) {
                  return sum(square(gather_cells(v, {{0, 1}, {2, 3}, {0, 1}})));
              }) < 1e-6);
        IndexMatrix idx(3, 2);
        idx << 1, 3, 0, 0, 2, 1;
        CHECK(fd_check(x34, [&](Tape&, Var v) {
                  return sum(square(gather_entries(v, idx)));
              }) < 1e-6);
    }
    SUBCASE("row_scale both sides") {
        const Matrix w = rng.normal_matrix(3, 1);
        CHECK(fd_check(x34, [&](Tape& t, Var v) {
                  return sum(square(row_scale(v, t.constant(w))));
              }) < 1e-6);
        CHECK(fd_check(w, [&](Tape& t, Var v) {
                  return sum(square(row_scale(t.constant(x34), v)));
              }) < 1e-6);
    }
    SUBCASE("row_normalize") {
        Matrix positive = x34.array().abs() + 0.5;
        CHECK(fd_check(positive, [](Tape&, Var v) {
                  return sum(square(row_normalize(v)));
              }) < 1e-6);
    }
    SUBCASE("cosine_sim both sides") {
        const Matrix b = rng.normal_matrix(5, 4);
        CHECK(fd_check(x34, [&](Tape& t, Var v) {
                  return sum(square(cosine_sim(v, t.constant(b))));
              }) < 1e-5);
        CHECK(fd_check(b, [&](Tape& t, Var v) {
                  return sum(square(cosine_sim(t.constant(x34), v)));
              }) < 1e-5);
        CHECK(fd_check(x33, [&](Tape&, Var v) {
                  return sum(square(cosine_sim(v, v)));
              }) < 1e-5);
    }
    SUBCASE("weighted_row_gather_sum both sides") {
        IndexMatrix rows(2, 3);
        rows << 0, 2, 1, 2, 2, 0;
        const Matrix w = rng.normal_matrix(2, 3);
        CHECK(fd_check(x34, [&](Tape& t, Var v) {
                  return sum(square(weighted_row_gather_sum(t.constant(w), v, rows)));
              }) < 1e-6);
        CHECK(fd_check(w, [&](Tape& t, Var v) {
                  return sum(square(weighted_row_gather_sum(v, t.constant(x34), rows)));
              }) < 1e-6);
    }
    SUBCASE("adaptive gate blend both sides") {
        const Matrix agg = rng.normal_matrix(3, 4);
        CHECK(fd_check(x34, [&](Tape& t, Var v) {
                  return sum(square(adaptive_gate_blend(v, t.constant(agg), 10.0, 0.2)));
              }) < 1e-5);
        CHECK(fd_check(agg, [&](Tape& t, Var v) {
                  return sum(square(adaptive_gate_blend(t.constant(x34), v, 10.0, 0.2)));
              }) < 1e-5);
    }
}

TEST_CASE("finite_diff_grad on known derivatives") {
    ParamSet p;
    p.add("x", Matrix::Constant(1, 1, 3.0));
    const ParamSet g = finite_diff_grad(
        [](const ParamSet& q) {
            const double x = q.at("x")(0, 0);
            return x * x;
        },
        p);
    CHECK(std::abs(g.at("x")(0, 0) - 6.0) < 1e-6);

    ParamSet p2;
    p2.add("x", Matrix::Zero(1, 1));
    const ParamSet g2 = finite_diff_grad(
        [](const ParamSet& q) { return sigmoid(q.at("x"))(0, 0); }, p2);
    CHECK(std::abs(g2.at("x")(0, 0) - 0.25) < 1e-6);
}

TEST_CASE("max_rel_error flags sign flips") {
    Matrix a = Matrix::Constant(1, 1, 0.5);
    Matrix b = Matrix::Constant(1, 1, -0.5);
    CHECK(max_rel_error(a, b) > 1.0);
    CHECK(max_rel_error(a, a) == 0.0);
}
