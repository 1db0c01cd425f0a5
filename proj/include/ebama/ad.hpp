#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "ebama/common.hpp"

namespace ebama::ad {

class Tape;

// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
public:
    Var() = default;
    const Eigen::MatrixXd& val() const;
    double scalar() const;  // value of a 1x1 node
    int id() const { return id_; }
    Tape* tape() const { return tape_; }
    bool valid() const { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* tape, int id) : tape_(tape), id_(id) {}
    Tape* tape_ = nullptr;
    int id_ = -1;
};

// Reverse-mode tape over dense double matrices. Values are computed eagerly;
// backward(out) seeds d(out)=1 and sweeps the tape in reverse, accumulating
// gradients into every node. Single-threaded per tape instance.
class Tape {
public:
    Var input(Eigen::MatrixXd value);     // leaf whose gradient is wanted
    Var constant(Eigen::MatrixXd value);  // leaf treated as fixed

    void backward(const Var& scalar_out);
    const Eigen::MatrixXd& grad(const Var& v) const;

    std::size_t size() const { return nodes_.size(); }

private:
    friend class Var;
    friend struct OpBuilder;

    struct Node {
        Eigen::MatrixXd value;
        Eigen::MatrixXd grad;
        std::function<void(Tape&)> backward;  // pulls this node's grad to parents
    };

    Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
    const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }

    std::vector<Node> nodes_;
};

// Internal helper used by the op implementations.
struct OpBuilder {
    static Var make(Tape& t, Eigen::MatrixXd value, std::function<void(Tape&)> bw);
    static void set_backward(Tape& t, int id, std::function<void(Tape&)> bw) {
        t.node(id).backward = std::move(bw);
    }
    static Eigen::MatrixXd& grad_ref(Tape& t, int id) { return t.node(id).grad; }
    static const Eigen::MatrixXd& val_ref(const Tape& t, int id) { return t.node(id).value; }
};

// Elementwise / structural ops. Shape mismatches raise InputError.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var scale(Var a, double c);
Var shift(Var a, double c);
Var neg(Var a);
Var matmul(Var a, Var b);
Var transpose(Var a);
Var row(Var a, int i);                 // 1xC copy of row i
Var col_as_row(Var a, int j);          // column j transposed to 1xR
Var col_block(Var a, int j0, int n);   // columns [j0, j0+n)
Var reshape_rowmajor(Var a, int rows, int cols);
Var sum(Var a);                        // -> 1x1
Var dot(Var a, Var b);                 // sum(a .* b) -> 1x1
Var exp(Var a);
Var log(Var a);
Var sqrt(Var a);
Var clamp_min(Var a, double lo);       // subgradient 0 on the clamped side
Var min_all(Var a);                    // 1x1; subgradient at first minimum (row-major scan)
Var max_all(Var a);                    // 1x1; subgradient at first maximum (row-major scan)
Var sub_scalar(Var a, Var s);          // a - s with s 1x1
Var div_scalar(Var a, Var s);          // a / s with s 1x1
Var row_softmax(Var a);                // softmax along each row
Var conv3x3_replicate(Var a, const Eigen::Matrix3d& kernel);
Var add_n(const std::vector<Var>& xs);
Var mean(const std::vector<Var>& xs);

}  // namespace ebama::ad
