#pragma once

// Minimal reverse-mode differentiation over dense matrices.
//
// A Tape records every intermediate produced during one forward pass. Nodes
// refer to their inputs by Var handle, so closures stay valid while the tape
// grows. backward() walks the tape once in reverse and adds the gradients of
// parameter leaves into Parameter::grad.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "pathpt/tensor.hpp"

namespace pathpt::ag {

struct Var {
    std::uint32_t id = 0;
};

class Tape {
public:
    // Receives the gradient of the node being back-propagated.
    using BackwardFn = std::function<void(Tape&, const Matrix& grad)>;

    Var constant(Matrix value);
    Var param(Parameter& p);
    Var record(Matrix value, std::span<const Var> parents, BackwardFn fn);
    Var record(Matrix value, std::initializer_list<Var> parents, BackwardFn fn) {
        return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(fn));
    }

    const Matrix& value(Var v) const { return nodes_[v.id].value; }
    bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

    // Adds g into the gradient of v. No-op for nodes that need no gradient.
    void accumulate(Var v, const Matrix& g);
    // Zero-initialized gradient buffer of v for in-place accumulation.
    // Callers must check requires_grad(v) first.
    Matrix& grad_of(Var v);

    // Seeds d(root)/d(root) = 1; root must be 1 x 1.
    void backward(Var root);

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool requires_grad = false;
        BackwardFn backward;
        Parameter* param = nullptr;
    };
    std::vector<Node> nodes_;
};

// Linear algebra.
Var matmul(Tape& t, Var a, Var b);        // a * b
Var matmul_nt(Tape& t, Var a, Var b);     // a * b^T
Var transpose(Tape& t, Var a);

// Elementwise and broadcasting.
Var add(Tape& t, Var a, Var b);
Var add_row(Tape& t, Var a, Var bias);    // bias is 1 x cols, added to every row
Var mul(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double s);
Var tanh(Tape& t, Var a);
Var sigmoid(Tape& t, Var a);
Var relu(Tape& t, Var a);

// Scaled dot-product attention per head over column blocks of width d / heads:
// out_h = softmax(Q_h K_h^T / sqrt(d / heads)) V_h.
Var multi_head_attention(Tape& t, Var q, Var k, Var v, std::size_t heads);

// Row-wise reductions and normalizations.
Var softmax_rows(Tape& t, Var a);
Var layer_norm_rows(Tape& t, Var x, Var gamma, Var beta, double eps = 1e-5);
Var l2_normalize_rows(Tape& t, Var a);
Var mean_rows(Tape& t, Var a);            // m x n -> 1 x n

// Structural.
Var concat_rows(Tape& t, std::span<const Var> parts);
Var concat_cols(Tape& t, std::span<const Var> parts);
Var slice_cols(Tape& t, Var a, std::size_t start, std::size_t count);
// out.row(i) = a.row(index[i]); gradients scatter-add back.
Var gather_rows(Tape& t, Var a, std::span<const std::size_t> index);

}  // namespace pathpt::ag
