#include "ebama/ad.hpp"

#include <cmath>

namespace ebama::ad {

namespace {

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.val().rows() != b.val().rows() || a.val().cols() != b.val().cols()) {
        throw InputError(std::string(op) + ": shape mismatch");
    }
}

void check_scalar(const Var& s, const char* op) {
    if (s.val().rows() != 1 || s.val().cols() != 1) {
        throw InputError(std::string(op) + ": expected 1x1 operand");
    }
}

}  // namespace

const Eigen::MatrixXd& Var::val() const {
    return OpBuilder::val_ref(*tape_, id_);
}

double Var::scalar() const {
    const auto& v = val();
    if (v.rows() != 1 || v.cols() != 1) throw InputError("Var::scalar: node is not 1x1");
    return v(0, 0);
}

Var OpBuilder::make(Tape& t, Eigen::MatrixXd value, std::function<void(Tape&)> bw) {
    Tape::Node n;
    n.value = std::move(value);
    n.backward = std::move(bw);
    t.nodes_.push_back(std::move(n));
    return Var(&t, static_cast<int>(t.nodes_.size()) - 1);
}

Var Tape::input(Eigen::MatrixXd value) {
    return OpBuilder::make(*this, std::move(value), nullptr);
}

Var Tape::constant(Eigen::MatrixXd value) {
    return OpBuilder::make(*this, std::move(value), nullptr);
}

void Tape::backward(const Var& out) {
    if (out.tape() != this) throw InputError("Tape::backward: var from another tape");
    if (out.val().rows() != 1 || out.val().cols() != 1) {
        throw InputError("Tape::backward: output must be 1x1");
    }
    for (auto& n : nodes_) n.grad = Eigen::MatrixXd::Zero(n.value.rows(), n.value.cols());
    node(out.id()).grad(0, 0) = 1.0;
    // Node ids are a topological order by construction.
    for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
        if (node(id).backward) node(id).backward(*this);
    }
}

const Eigen::MatrixXd& Tape::grad(const Var& v) const {
    if (v.tape() != this) throw InputError("Tape::grad: var from another tape");
    const auto& g = node(v.id()).grad;
    if (g.size() == 0) throw InputError("Tape::grad: backward() has not run");
    return g;
}

// --- ops ------------------------------------------------------------------

Var add(Var a, Var b) {
    check_same_shape(a, b, "add");
    Tape& t = *a.tape();
    int ia = a.id(), ib = b.id();
    Var out = OpBuilder::make(t, a.val() + b.val(), nullptr);
    int io = out.id();
    OpBuilder::set_backward(t, io, [ia, ib, io](Tape& tp) {
        const Eigen::MatrixXd& g = OpBuilder::grad_ref(tp, io);
        OpBuilder::grad_ref(tp, ia) += g;
        OpBuilder::grad_ref(tp, ib) += g;
    });
    return out;
}

Var sub(Var a, Var b) {
    check_same_shape(a, b, "sub");
    Tape& t = *a.tape();
    int ia = a.id(), ib = b.id();
    Var out = OpBuilder::make(t, a.val() - b.val(), nullptr);
    int io = out.id();
    OpBuilder::set_backward(t, io, [ia, ib, io](Tape& tp) {
        const Eigen::MatrixXd& g = OpBuilder::grad_ref(tp, io);
        OpBuilder::grad_ref(tp, ia) += g;
        OpBuilder::grad_ref(tp, ib) -= g;
    });
    return out;
}

Var mul(Var a, Var b) {
    check_same_shape(a, b, "mul");
    Tape& t = *a.tape();
    int ia = a.id(), ib = b.id();
    Var out = OpBuilder::make(t, a.val().cwiseProduct(b.val()), nullptr);
    int io = out.id();
    OpBuilder::set_backward(t, io, [ia, ib, io](Tape& tp) {
        const Eigen::MatrixXd& g = OpBuilder::grad_ref(tp, io);
        OpBuilder::grad_ref(tp, ia) += g.cwiseProduct(OpBuilder::val_ref(tp, ib));
        OpBuilder::grad_ref(tp, ib) += g.cwiseProduct(OpBuilder::val_ref(tp, ia));
    });
    return out;
}

Var div(Var a, Var b) {
    check_same_shape(a, b, "div");
    Tape& t = *a.tape();
    int ia = a.id(), ib = b.id();
    Var out = OpBuilder::make(t, a.val().cwiseQuotient(b.val()), nullptr);
    int io = out.id();
    OpBuilder::set_backward(t, io, [ia, ib, io](Tape& tp) {
        const Eigen::MatrixXd& g = OpBuilder::grad_ref(tp, io);
        const Eigen::MatrixXd& bv = OpBuilder::val_ref(tp, ib);
        const Eigen::MatrixXd& ov = OpBuilder::val_ref(tp, io);
        OpBuilder::grad_ref(tp, ia) += g.cwiseQuotient(bv);
        OpBuilder::grad_ref(tp, ib) -= g.cwiseProduct(ov).cwiseQuotient(bv);
    });
    return out;
}

Var scale(Var a, double c) {
    Tape& t = *a.tape();
    int ia = a.id();
    Var out = OpBuilder::make(t, (a.val().array() * c).matrix(), nullptr);
    int io = out.id();
    OpBuilder::set_backward(t, io, [ia, io, c](Tape& tp) {
        OpBuilder::grad_ref(tp, ia) += c * OpBuilder::grad_ref(tp, io);
    });
    return out;
}

Var shift(Var a, double c) {
    Tape& t = *a.tape();
    int ia = a.id();
    Var out = OpBuilder::make(t, (a.val().array() + c).matrix(), nullptr);
    int io = out.id();
    OpBuilder::set_backward(t, io, [ia, io](Tape& tp) {
        OpBuilder::grad_ref(tp, ia) += OpBuilder::grad_ref(tp, io);
    });
    return out;
}

Var neg(Var a) { return scale(a, -1.0); }

Var matmul(Var a, Var b) {
    if (a.val().cols() != b.val().rows()) throw InputError("matmul: inner dimension mismatch");
    Tape& t = *a.tape();
    int ia = a.id(), ib = b.id();
    Var out = OpBuilder::make(t, a.val() * b.val(), nullptr);
    int io = out.id();
    OpBuilder::set_backward(t, io, [ia, ib, io](Tape& tp) {
        const Eigen::MatrixXd& g = OpBuilder::grad_ref(tp, io);
        OpBuilder::grad_ref(tp, ia) += g * OpBuilder::val_ref(tp, ib).transpose();
        OpBuilder::grad_ref(tp, ib) += OpBuilder::val_ref(tp, ia).transpose() * g;
    });
    return out;
}

Var transpose(Var a) {
    Tape& t = *a.tape();
    int ia = a.id();
    Var out = OpBuilder::make(t, a.val().transpose(), nullptr);
    int io = out.id();
    OpBuilder::set_backward(t, io, [ia, io](Tape& tp) {
        OpBuilder::grad_ref(tp, ia) += OpBuilder::grad_ref(tp, io).transpose();
    });
    return out;
}

Var row(Var a, int i) {
    if (i < 0 || i >= a.val().rows()) throw InputError("row: index out of range");
    Tape& t = *a.tape();
    int ia = a.id();
    Var out = OpBuilder::make(t, a.val().row(i), nullptr);
    int io = out.id();
    OpBuilder::set_backward(t, io, [ia, io, i](Tape& tp) {
        OpBuilder::grad_ref(tp, ia).row(i) += OpBuilder::grad_ref(tp, io).row(0);
    });
    return out;
}

Var col_as_row(Var a, int j) {
    if (j < 0 || j >= a.val().cols()) throw InputError("col_as_row: index out of range");
    Tape& t = *a.tape();
    int ia = a.id();
    Var out = OpBuilder::make(t, a.val().col(j).transpose(), nullptr);
    int io = out.id();
    OpBuilder::set_backward(t, io, [ia, io, j](Tape& tp) {
        OpBuilder::grad_ref(tp, ia).col(j) += OpBuilder::grad_ref(tp, io).row(0).transpose();
    });
    return out;
}

Var col_block(Var a, int j0, int n) {
    if (j0 < 0 || n < 0 || j0 + n > a.val().cols()) throw InputError("col_block: range out of bounds");
    Tape& t = *a.tape();
    int ia = a.id();
    Var out = OpBuilder::make(t, a.val().middleCols(j0, n), nullptr);
    int io = out.id();
    OpBuilder::set_backward(t, io, [ia, io, j0, n](Tape& tp) {
        OpBuilder::grad_ref(tp, ia).middleCols(j0, n) += OpBuilder::grad_ref(tp, io);
    });
    return out;
}

Var reshape_rowmajor(Var a, int rows, int cols) {
    const auto& v = a.val();
    if (rows * cols != v.rows() * v.cols()) throw InputError("reshape: element count mismatch");
    Tape& t = *a.tape();
    int ia = a.id();
    const int in_cols = static_cast<int>(v.cols());
    Eigen::MatrixXd r(rows, cols);
    for (int k = 0; k < rows * cols; ++k) {
        r(k / cols, k % cols) = v(k / in_cols, k % in_cols);
    }
    Var out = OpBuilder::make(t, std::move(r), nullptr);
    int io = out.id();
    OpBuilder::set_backward(t, io, [ia, io, rows, cols, in_cols](Tape& tp) {
        const Eigen::MatrixXd& g = OpBuilder::grad_ref(tp, io);
        Eigen::MatrixXd& ga = OpBuilder::grad_ref(tp, ia);
        for (int k = 0; k < rows * cols; ++k) {
            ga(k / in_cols, k % in_cols) += g(k / cols, k % cols);
        }
    });
    return out;
}

Var sum(Var a) {
    Tape& t = *a.tape();
    int ia = a.id();
    Eigen::MatrixXd s(1, 1);
    s(0, 0) = a.val().sum();
    Var out = OpBuilder::make(t, std::move(s), nullptr);
    int io = out.id();
    OpBuilder::set_backward(t, io, [ia, io](Tape& tp) {
        OpBuilder::grad_ref(tp, ia).array() += OpBuilder::grad_ref(tp, io)(0, 0);
    });
    return out;
}

Var dot(Var a, Var b) {
    check_same_shape(a, b, "dot");
    Tape& t = *a.tape();
    int ia = a.id(), ib = b.id();
    Eigen::MatrixXd s(1, 1);
    s(0, 0) = a.val().cwiseProduct(b.val()).sum();
    Var out = OpBuilder::make(t, std::move(s), nullptr);
    int io = out.id();
    OpBuilder::set_backward(t, io, [ia, ib, io](Tape& tp) {
        const double g = OpBuilder::grad_ref(tp, io)(0, 0);
        OpBuilder::grad_ref(tp, ia) += g * OpBuilder::val_ref(tp, ib);
        OpBuilder::grad_ref(tp, ib) += g * OpBuilder::val_ref(tp, ia);
    });
    return out;
}

Var exp(Var a) {
    Tape& t = *a.tape();
    int ia = a.id();
    Var out = OpBuilder::make(t, a.val().array().exp().matrix(), nullptr);
    int io = out.id();
    OpBuilder::set_backward(t, io, [ia, io](Tape& tp) {
        OpBuilder::grad_ref(tp, ia) +=
            OpBuilder::grad_ref(tp, io).cwiseProduct(OpBuilder::val_ref(tp, io));
    });
    return out;
}

Var log(Var a) {
    Tape& t = *a.tape();
    int ia = a.id();
    Var out = OpBuilder::make(t, a.val().array().log().matrix(), nullptr);
    int io = out.id();
    OpBuilder::set_backward(t, io, [ia, io](Tape& tp) {
        OpBuilder::grad_ref(tp, ia) +=
            OpBuilder::grad_ref(tp, io).cwiseQuotient(OpBuilder::val_ref(tp, ia));
    });
    return out;
}

Var sqrt(Var a) {
    Tape& t = *a.tape();
    int ia = a.id();
    Var out = OpBuilder::make(t, a.val().array().sqrt().matrix(), nullptr);
    int io = out.id();
    OpBuilder::set_backward(t, io, [ia, io](Tape& tp) {
        OpBuilder::grad_ref(tp, ia) += (OpBuilder::grad_ref(tp, io).array() * 0.5 /
                                        OpBuilder::val_ref(tp, io).array())
                                           .matrix();
    });
    return out;
}

Var clamp_min(Var a, double lo) {
    Tape& t = *a.tape();
    int ia = a.id();
    Var out = OpBuilder::make(t, a.val().cwiseMax(lo), nullptr);
    int io = out.id();
    OpBuilder::set_backward(t, io, [ia, io, lo](Tape& tp) {
        const Eigen::MatrixXd& av = OpBuilder::val_ref(tp, ia);
        const Eigen::MatrixXd& g = OpBuilder::grad_ref(tp, io);
        Eigen::MatrixXd mask = (av.array() > lo).cast<double>().matrix();
        OpBuilder::grad_ref(tp, ia) += g.cwiseProduct(mask);
    });
    return out;
}

namespace {

// First extremum position in a row-major scan, so the subgradient choice
// is deterministic.
std::pair<int, int> argext_rowmajor(const Eigen::MatrixXd& m, bool max) {
    int bi = 0, bj = 0;
    double best = m(0, 0);
    for (int i = 0; i < m.rows(); ++i) {
        for (int j = 0; j < m.cols(); ++j) {
            const double v = m(i, j);
            if ((max && v > best) || (!max && v < best)) {
                best = v;
                bi = i;
                bj = j;
            }
        }
    }
    return {bi, bj};
}

Var extremum(Var a, bool is_max) {
    Tape& t = *a.tape();
    int ia = a.id();
    auto [bi, bj] = argext_rowmajor(a.val(), is_max);
    Eigen::MatrixXd s(1, 1);
    s(0, 0) = a.val()(bi, bj);
    Var out = OpBuilder::make(t, std::move(s), nullptr);
    int io = out.id();
    OpBuilder::set_backward(t, io, [ia, io, bi = bi, bj = bj](Tape& tp) {
        OpBuilder::grad_ref(tp, ia)(bi, bj) += OpBuilder::grad_ref(tp, io)(0, 0);
    });
    return out;
}

}  // namespace

Var min_all(Var a) { return extremum(a, false); }
Var max_all(Var a) { return extremum(a, true); }

Var sub_scalar(Var a, Var s) {
    check_scalar(s, "sub_scalar");
    Tape& t = *a.tape();
    int ia = a.id(), is = s.id();
    Var out = OpBuilder::make(t, (a.val().array() - s.val()(0, 0)).matrix(), nullptr);
    int io = out.id();
    OpBuilder::set_backward(t, io, [ia, is, io](Tape& tp) {
        const Eigen::MatrixXd& g = OpBuilder::grad_ref(tp, io);
        OpBuilder::grad_ref(tp, ia) += g;
        OpBuilder::grad_ref(tp, is)(0, 0) -= g.sum();
    });
    return out;
}

Var div_scalar(Var a, Var s) {
    check_scalar(s, "div_scalar");
    Tape& t = *a.tape();
    int ia = a.id(), is = s.id();
    const double sv = s.val()(0, 0);
    Var out = OpBuilder::make(t, (a.val().array() / sv).matrix(), nullptr);
    int io = out.id();
    OpBuilder::set_backward(t, io, [ia, is, io](Tape& tp) {
        const Eigen::MatrixXd& g = OpBuilder::grad_ref(tp, io);
        const double sval = OpBuilder::val_ref(tp, is)(0, 0);
        OpBuilder::grad_ref(tp, ia) += g / sval;
        OpBuilder::grad_ref(tp, is)(0, 0) -=
            g.cwiseProduct(OpBuilder::val_ref(tp, io)).sum() / sval;
    });
    return out;
}

Var row_softmax(Var a) {
    Tape& t = *a.tape();
    int ia = a.id();
    Eigen::MatrixXd p = a.val();
    for (int i = 0; i < p.rows(); ++i) {
        const double m = p.row(i).maxCoeff();
        p.row(i) = (p.row(i).array() - m).exp();
        p.row(i) /= p.row(i).sum();
    }
    Var out = OpBuilder::make(t, std::move(p), nullptr);
    int io = out.id();
    OpBuilder::set_backward(t, io, [ia, io](Tape& tp) {
        const Eigen::MatrixXd& g = OpBuilder::grad_ref(tp, io);
        const Eigen::MatrixXd& pv = OpBuilder::val_ref(tp, io);
        Eigen::MatrixXd& ga = OpBuilder::grad_ref(tp, ia);
        for (int i = 0; i < g.rows(); ++i) {
            const double gp = g.row(i).cwiseProduct(pv.row(i)).sum();
            ga.row(i) += pv.row(i).cwiseProduct((g.row(i).array() - gp).matrix());
        }
    });
    return out;
}

Var conv3x3_replicate(Var a, const Eigen::Matrix3d& kernel) {
    Tape& t = *a.tape();
    int ia = a.id();
    const auto& v = a.val();
    const int H = static_cast<int>(v.rows());
    const int W = static_cast<int>(v.cols());
    if (H < 1 || W < 1) throw InputError("conv3x3: empty input");
    auto clampi = [](int x, int hi) { return x < 0 ? 0 : (x > hi ? hi : x); };
    Eigen::MatrixXd r(H, W);
    for (int i = 0; i < H; ++i) {
        for (int j = 0; j < W; ++j) {
            double acc = 0.0;
            for (int u = -1; u <= 1; ++u) {
                for (int w = -1; w <= 1; ++w) {
                    acc += kernel(u + 1, w + 1) * v(clampi(i + u, H - 1), clampi(j + w, W - 1));
                }
            }
            r(i, j) = acc;
        }
    }
    Var out = OpBuilder::make(t, std::move(r), nullptr);
    int io = out.id();
    Eigen::Matrix3d k = kernel;
    OpBuilder::set_backward(t, io, [ia, io, k, H, W, clampi](Tape& tp) {
        const Eigen::MatrixXd& g = OpBuilder::grad_ref(tp, io);
        Eigen::MatrixXd& ga = OpBuilder::grad_ref(tp, ia);
        for (int i = 0; i < H; ++i) {
            for (int j = 0; j < W; ++j) {
                for (int u = -1; u <= 1; ++u) {
                    for (int w = -1; w <= 1; ++w) {
                        ga(clampi(i + u, H - 1), clampi(j + w, W - 1)) += k(u + 1, w + 1) * g(i, j);
                    }
                }
            }
        }
    });
    return out;
}

Var add_n(const std::vector<Var>& xs) {
    if (xs.empty()) throw InputError("add_n: empty operand list");
    Tape& t = *xs[0].tape();
    Eigen::MatrixXd acc = xs[0].val();
    std::vector<int> ids;
    ids.reserve(xs.size());
    ids.push_back(xs[0].id());
    for (std::size_t i = 1; i < xs.size(); ++i) {
        check_same_shape(xs[0], xs[i], "add_n");
        acc += xs[i].val();
        ids.push_back(xs[i].id());
    }
    Var out = OpBuilder::make(t, std::move(acc), nullptr);
    int io = out.id();
    OpBuilder::set_backward(t, io, [ids, io](Tape& tp) {
        const Eigen::MatrixXd& g = OpBuilder::grad_ref(tp, io);
        for (int id : ids) OpBuilder::grad_ref(tp, id) += g;
    });
    return out;
}

Var mean(const std::vector<Var>& xs) {
    return scale(add_n(xs), 1.0 / static_cast<double>(xs.size()));
}

}  // namespace ebama::ad
