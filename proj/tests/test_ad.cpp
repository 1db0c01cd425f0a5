#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <functional>

#include "ebama/ad.hpp"
#include "ebama/common.hpp"

using namespace ebama;
using Eigen::MatrixXd;

namespace {

MatrixXd random_matrix(int r, int c, std::uint64_t seed) {
    GaussianStream g(seed);
    MatrixXd m(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) m(i, j) = g.next();
    return m;
}

// Central finite differences of a scalar-valued function of one matrix.
MatrixXd fd_grad(const std::function<double(const MatrixXd&)>& f, const MatrixXd& x,
                 double h = 1e-6) {
    MatrixXd g(x.rows(), x.cols());
    MatrixXd xp = x;
    for (int i = 0; i < x.rows(); ++i) {
        for (int j = 0; j < x.cols(); ++j) {
            const double orig = xp(i, j);
            xp(i, j) = orig + h;
            const double fp = f(xp);
            xp(i, j) = orig - h;
            const double fm = f(xp);
            xp(i, j) = orig;
            g(i, j) = (fp - fm) / (2 * h);
        }
    }
    return g;
}

void check_close(const MatrixXd& a, const MatrixXd& b, double tol) {
    REQUIRE(a.rows() == b.rows());
    REQUIRE(a.cols() == b.cols());
    const double denom = std::max(1.0, b.cwiseAbs().maxCoeff());
    CHECK((a - b).cwiseAbs().maxCoeff() / denom < tol);
}

// Runs both the tape and finite differences on the same scalar pipeline.
void grad_check(const std::function<ad::Var(ad::Tape&, ad::Var)>& build, const MatrixXd& x,
                double tol = 1e-6) {
    ad::Tape tape;
    ad::Var xin = tape.input(x);
    ad::Var out = build(tape, xin);
    tape.backward(out);
    MatrixXd analytic = tape.grad(xin);

    auto eval = [&](const MatrixXd& xv) {
        ad::Tape t2;
        ad::Var v = t2.input(xv);
        return build(t2, v).scalar();
    };
    check_close(analytic, fd_grad(eval, x), tol);
}

}  // namespace

TEST_CASE("values are computed eagerly") {
    ad::Tape tape;
    MatrixXd a = random_matrix(3, 2, 1);
    MatrixXd b = random_matrix(3, 2, 2);
    CHECK(ad::add(tape.input(a), tape.input(b)).val().isApprox(a + b));
    CHECK(ad::mul(tape.input(a), tape.input(b)).val().isApprox(a.cwiseProduct(b)));
    CHECK(ad::sum(tape.input(a)).scalar() == doctest::Approx(a.sum()));
}

TEST_CASE("gradients match finite differences") {
    MatrixXd x = random_matrix(4, 3, 7);

    SUBCASE("sum of elementwise chain") {
        grad_check(
            [](ad::Tape&, ad::Var v) {
                ad::Var w = ad::mul(v, ad::shift(v, 2.0));
                return ad::sum(ad::scale(w, 0.5));
            },
            x);
    }
    SUBCASE("matmul + transpose") {
        grad_check(
            [](ad::Tape&, ad::Var v) {
                ad::Var w = ad::matmul(v, ad::transpose(v));  // 4x4
                return ad::sum(w);
            },
            x);
    }
    SUBCASE("softmax") {
        grad_check(
            [](ad::Tape&, ad::Var v) {
                ad::Var p = ad::row_softmax(v);
                ad::Var q = ad::mul(p, p);
                return ad::sum(q);
            },
            x);
    }
    SUBCASE("log exp sqrt div") {
        MatrixXd pos = x.array().abs() + 0.5;
        grad_check(
            [](ad::Tape&, ad::Var v) {
                ad::Var a = ad::log(v);
                ad::Var b = ad::exp(ad::scale(v, -0.3));
                ad::Var c = ad::sqrt(v);
                return ad::sum(ad::div(ad::add(a, b), c));
            },
            pos);
    }
    SUBCASE("row and column extraction") {
        grad_check(
            [](ad::Tape&, ad::Var v) {
                ad::Var r = ad::row(v, 1);
                ad::Var c = ad::col_as_row(v, 2);
                return ad::add(ad::dot(r, r), ad::sum(c));
            },
            x);
    }
    SUBCASE("col_block and reshape") {
        grad_check(
            [](ad::Tape&, ad::Var v) {
                ad::Var blk = ad::col_block(v, 1, 2);            // 4x2
                ad::Var rs = ad::reshape_rowmajor(blk, 2, 4);    // row-major rearrange
                return ad::dot(rs, rs);
            },
            x);
    }
    SUBCASE("scalar broadcasting ops") {
        grad_check(
            [](ad::Tape&, ad::Var v) {
                ad::Var mn = ad::min_all(v);
                ad::Var sh = ad::sub_scalar(v, mn);
                ad::Var s = ad::sum(ad::exp(sh));
                ad::Var p = ad::div_scalar(ad::exp(sh), s);
                return ad::dot(p, p);
            },
            x);
    }
    SUBCASE("conv3x3 with replicate padding") {
        Eigen::Matrix3d k;
        k << 0.05, 0.1, 0.05, 0.1, 0.4, 0.1, 0.05, 0.1, 0.05;
        grad_check(
            [k](ad::Tape&, ad::Var v) {
                ad::Var c = ad::conv3x3_replicate(v, k);
                return ad::dot(c, c);
            },
            random_matrix(6, 5, 11));
    }
    SUBCASE("max through conv (subgradient away from ties)") {
        Eigen::Matrix3d k;
        k << 0.05, 0.1, 0.05, 0.1, 0.4, 0.1, 0.05, 0.1, 0.05;
        MatrixXd m = random_matrix(6, 6, 13);
        m(3, 3) += 10.0;  // clear interior max, no ties near the FD step
        grad_check(
            [k](ad::Tape&, ad::Var v) { return ad::max_all(ad::conv3x3_replicate(v, k)); },
            m, 1e-5);
    }
    SUBCASE("clamp_min passes gradient only above the floor") {
        MatrixXd m(1, 4);
        m << -1.0, 0.5, 2.0, -0.2;
        ad::Tape tape;
        ad::Var v = tape.input(m);
        ad::Var out = ad::sum(ad::clamp_min(v, 0.0));
        tape.backward(out);
        MatrixXd expect(1, 4);
        expect << 0, 1, 1, 0;
        CHECK(tape.grad(v) == expect);
    }
}

TEST_CASE("gradient accumulates across shared subexpressions") {
    MatrixXd x = random_matrix(2, 2, 21);
    grad_check(
        [](ad::Tape&, ad::Var v) {
            ad::Var s = ad::sum(v);
            return ad::add(ad::mul(s, s), ad::dot(v, v));
        },
        x);
}

TEST_CASE("mean of several vars") {
    ad::Tape tape;
    MatrixXd a = random_matrix(2, 3, 1), b = random_matrix(2, 3, 2), c = random_matrix(2, 3, 3);
    ad::Var va = tape.input(a), vb = tape.input(b), vc = tape.input(c);
    ad::Var m = ad::mean({va, vb, vc});
    CHECK(m.val().isApprox(((a + b + c) / 3.0)));
    tape.backward(ad::sum(m));
    CHECK(tape.grad(va).isApproxToConstant(1.0 / 3.0));
}

TEST_CASE("shape mismatches raise InputError") {
    ad::Tape tape;
    ad::Var a = tape.input(MatrixXd::Zero(2, 3));
    ad::Var b = tape.input(MatrixXd::Zero(3, 2));
    CHECK_THROWS_AS(ad::add(a, b), InputError);
    CHECK_THROWS_AS(ad::dot(a, b), InputError);
    CHECK_THROWS_AS(ad::row(a, 5), InputError);
    CHECK_THROWS_AS(tape.backward(a), InputError);
}
