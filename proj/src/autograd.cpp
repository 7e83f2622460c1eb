#include "pathpt/autograd.hpp"

#include <algorithm>
#include <cmath>

#include "pathpt/error.hpp"
#include "pathpt/simd/kernels.hpp"

namespace pathpt::ag {

using simd::Trans;

Var Tape::constant(Matrix value) {
    nodes_.push_back(Node{std::move(value), {}, false, {}, nullptr});
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::param(Parameter& p) {
    nodes_.push_back(Node{p.value, {}, true, {}, &p});
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::record(Matrix value, std::span<const Var> parents, BackwardFn fn) {
    bool needs = false;
    for (Var p : parents) needs = needs || nodes_[p.id].requires_grad;
    nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(fn) : BackwardFn{}, nullptr});
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Matrix& Tape::grad_of(Var v) {
    Node& n = nodes_[v.id];
    if (n.grad.empty() && !n.value.empty()) n.grad.resize(n.value.rows(), n.value.cols());
    return n.grad;
}

void Tape::accumulate(Var v, const Matrix& g) {
    if (!nodes_[v.id].requires_grad) return;
    Matrix& dst = grad_of(v);
    simd::kernels().axpy(1.0, g.data(), dst.data(), g.size());
}

void Tape::backward(Var root) {
    if (value(root).rows() != 1 || value(root).cols() != 1)
        throw InvalidInput("backward: root must be a 1x1 scalar");
    if (!requires_grad(root)) return;
    grad_of(root)(0, 0) = 1.0;
    for (std::size_t i = root.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.requires_grad || n.grad.empty()) continue;
        if (n.param != nullptr) {
            Matrix& pg = n.param->grad;
            if (pg.empty()) pg.resize(n.value.rows(), n.value.cols());
            simd::kernels().axpy(1.0, n.grad.data(), pg.data(), n.grad.size());
        } else if (n.backward) {
            n.backward(*this, n.grad);
        }
    }
}

namespace {

void check_same(const Matrix& a, const Matrix& b, const char* op) {
    if (!a.same_shape(b)) throw InvalidInput(std::string(op) + ": shape mismatch");
}

}  // namespace

Var matmul(Tape& t, Var a, Var b) {
    const Matrix& A = t.value(a);
    const Matrix& B = t.value(b);
    if (A.cols() != B.rows()) throw InvalidInput("matmul: inner dimension mismatch");
    Matrix C(A.rows(), B.cols());
    simd::gemm(Trans::no, Trans::no, A.rows(), B.cols(), A.cols(), A.data(), A.cols(), B.data(), B.cols(),
               C.data(), C.cols());
    return t.record(std::move(C), {a, b}, [a, b](Tape& tp, const Matrix& g) {
        const Matrix& A = tp.value(a);
        const Matrix& B = tp.value(b);
        if (tp.requires_grad(a)) {
            Matrix& ga = tp.grad_of(a);
            simd::gemm(Trans::no, Trans::yes, A.rows(), A.cols(), B.cols(), g.data(), g.cols(), B.data(),
                       B.cols(), ga.data(), ga.cols());
        }
        if (tp.requires_grad(b)) {
            Matrix& gb = tp.grad_of(b);
            simd::gemm(Trans::yes, Trans::no, B.rows(), B.cols(), A.rows(), A.data(), A.cols(), g.data(),
                       g.cols(), gb.data(), gb.cols());
        }
    });
}

Var matmul_nt(Tape& t, Var a, Var b) {
    const Matrix& A = t.value(a);
    const Matrix& B = t.value(b);
    if (A.cols() != B.cols()) throw InvalidInput("matmul_nt: inner dimension mismatch");
    Matrix C(A.rows(), B.rows());
    simd::gemm(Trans::no, Trans::yes, A.rows(), B.rows(), A.cols(), A.data(), A.cols(), B.data(), B.cols(),
               C.data(), C.cols());
    return t.record(std::move(C), {a, b}, [a, b](Tape& tp, const Matrix& g) {
        const Matrix& A = tp.value(a);
        const Matrix& B = tp.value(b);
        // C = A B^T: dA = g B, dB = g^T A
        if (tp.requires_grad(a)) {
            Matrix& ga = tp.grad_of(a);
            simd::gemm(Trans::no, Trans::no, A.rows(), A.cols(), B.rows(), g.data(), g.cols(), B.data(),
                       B.cols(), ga.data(), ga.cols());
        }
        if (tp.requires_grad(b)) {
            Matrix& gb = tp.grad_of(b);
            simd::gemm(Trans::yes, Trans::no, B.rows(), B.cols(), A.rows(), g.data(), g.cols(), A.data(),
                       A.cols(), gb.data(), gb.cols());
        }
    });
}

Var transpose(Tape& t, Var a) {
    const Matrix& A = t.value(a);
    Matrix out(A.cols(), A.rows());
    for (std::size_t r = 0; r < A.rows(); ++r)
        for (std::size_t c = 0; c < A.cols(); ++c) out(c, r) = A(r, c);
    return t.record(std::move(out), {a}, [a](Tape& tp, const Matrix& g) {
        if (!tp.requires_grad(a)) return;
        Matrix& ga = tp.grad_of(a);
        for (std::size_t r = 0; r < ga.rows(); ++r)
            for (std::size_t c = 0; c < ga.cols(); ++c) ga(r, c) += g(c, r);
    });
}

Var add(Tape& t, Var a, Var b) {
    const Matrix& A = t.value(a);
    const Matrix& B = t.value(b);
    check_same(A, B, "add");
    Matrix out = A;
    simd::kernels().axpy(1.0, B.data(), out.data(), out.size());
    return t.record(std::move(out), {a, b}, [a, b](Tape& tp, const Matrix& g) {
        tp.accumulate(a, g);
        tp.accumulate(b, g);
    });
}

Var add_row(Tape& t, Var a, Var bias) {
    const Matrix& A = t.value(a);
    const Matrix& B = t.value(bias);
    if (B.rows() != 1 || B.cols() != A.cols()) throw InvalidInput("add_row: bias must be 1 x cols");
    Matrix out = A;
    for (std::size_t r = 0; r < out.rows(); ++r)
        for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += B(0, c);
    return t.record(std::move(out), {a, bias}, [a, bias](Tape& tp, const Matrix& g) {
        tp.accumulate(a, g);
        if (tp.requires_grad(bias)) {
            Matrix& gb = tp.grad_of(bias);
            for (std::size_t r = 0; r < g.rows(); ++r)
                for (std::size_t c = 0; c < g.cols(); ++c) gb(0, c) += g(r, c);
        }
    });
}

Var mul(Tape& t, Var a, Var b) {
    const Matrix& A = t.value(a);
    const Matrix& B = t.value(b);
    check_same(A, B, "mul");
    Matrix out(A.rows(), A.cols());
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = A.data()[i] * B.data()[i];
    return t.record(std::move(out), {a, b}, [a, b](Tape& tp, const Matrix& g) {
        const Matrix& A = tp.value(a);
        const Matrix& B = tp.value(b);
        if (tp.requires_grad(a)) {
            Matrix& ga = tp.grad_of(a);
            for (std::size_t i = 0; i < g.size(); ++i) ga.data()[i] += g.data()[i] * B.data()[i];
        }
        if (tp.requires_grad(b)) {
            Matrix& gb = tp.grad_of(b);
            for (std::size_t i = 0; i < g.size(); ++i) gb.data()[i] += g.data()[i] * A.data()[i];
        }
    });
}

Var scale(Tape& t, Var a, double s) {
    Matrix out = t.value(a);
    for (double& x : out.flat()) x *= s;
    return t.record(std::move(out), {a}, [a, s](Tape& tp, const Matrix& g) {
        if (!tp.requires_grad(a)) return;
        simd::kernels().axpy(s, g.data(), tp.grad_of(a).data(), g.size());
    });
}

namespace {

// Handle the next recorded node will receive; lets closures read their own output.
Var next_var(const Tape& t) { return Var{static_cast<std::uint32_t>(t.size())}; }

}  // namespace

Var tanh(Tape& t, Var a) {
    Matrix out = t.value(a);
    for (double& x : out.flat()) x = std::tanh(x);
    const Var self = next_var(t);
    return t.record(std::move(out), {a}, [a, self](Tape& tp, const Matrix& g) {
        if (!tp.requires_grad(a)) return;
        const Matrix& y = tp.value(self);
        Matrix& ga = tp.grad_of(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga.data()[i] += g.data()[i] * (1.0 - y.data()[i] * y.data()[i]);
    });
}

Var sigmoid(Tape& t, Var a) {
    Matrix out = t.value(a);
    for (double& x : out.flat()) x = 1.0 / (1.0 + std::exp(-x));
    const Var self = next_var(t);
    return t.record(std::move(out), {a}, [a, self](Tape& tp, const Matrix& g) {
        if (!tp.requires_grad(a)) return;
        const Matrix& y = tp.value(self);
        Matrix& ga = tp.grad_of(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga.data()[i] += g.data()[i] * y.data()[i] * (1.0 - y.data()[i]);
    });
}

Var relu(Tape& t, Var a) {
    Matrix out = t.value(a);
    for (double& x : out.flat()) x = x > 0.0 ? x : 0.0;
    return t.record(std::move(out), {a}, [a](Tape& tp, const Matrix& g) {
        if (!tp.requires_grad(a)) return;
        const Matrix& X = tp.value(a);
        Matrix& ga = tp.grad_of(a);
        for (std::size_t i = 0; i < g.size(); ++i)
            if (X.data()[i] > 0.0) ga.data()[i] += g.data()[i];
    });
}

Var softmax_rows(Tape& t, Var a) {
    Matrix out = t.value(a);
    for (std::size_t r = 0; r < out.rows(); ++r) {
        auto row = out.row(r);
        const double mx = *std::max_element(row.begin(), row.end());
        double sum = 0.0;
        for (double& x : row) {
            x = std::exp(x - mx);
            sum += x;
        }
        for (double& x : row) x /= sum;
    }
    const Var self = next_var(t);
    return t.record(std::move(out), {a}, [a, self](Tape& tp, const Matrix& g) {
        if (!tp.requires_grad(a)) return;
        const Matrix& y = tp.value(self);
        Matrix& ga = tp.grad_of(a);
        for (std::size_t r = 0; r < y.rows(); ++r) {
            const double inner = simd::dot(g.row(r), y.row(r));
            for (std::size_t c = 0; c < y.cols(); ++c) ga(r, c) += y(r, c) * (g(r, c) - inner);
        }
    });
}

Var layer_norm_rows(Tape& t, Var x, Var gamma, Var beta, double eps) {
    const Matrix& X = t.value(x);
    const Matrix& G = t.value(gamma);
    const Matrix& B = t.value(beta);
    const std::size_t n = X.cols();
    if (G.rows() != 1 || G.cols() != n || !G.same_shape(B)) throw InvalidInput("layer_norm: parameter shape");
    Matrix normed(X.rows(), n);
    std::vector<double> inv_std(X.rows());
    for (std::size_t r = 0; r < X.rows(); ++r) {
        double mean = 0.0;
        for (double v : X.row(r)) mean += v;
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (double v : X.row(r)) var += (v - mean) * (v - mean);
        var /= static_cast<double>(n);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t c = 0; c < n; ++c) normed(r, c) = (X(r, c) - mean) * inv_std[r];
    }
    Matrix out(X.rows(), n);
    for (std::size_t r = 0; r < X.rows(); ++r)
        for (std::size_t c = 0; c < n; ++c) out(r, c) = normed(r, c) * G(0, c) + B(0, c);
    const Var xhat = t.constant(std::move(normed));
    return t.record(std::move(out), {x, gamma, beta},
                    [x, gamma, beta, xhat, inv_std = std::move(inv_std)](Tape& tp, const Matrix& g) {
        const Matrix& Xh = tp.value(xhat);
        const Matrix& G = tp.value(gamma);
        const std::size_t n = Xh.cols();
        if (tp.requires_grad(gamma)) {
            Matrix& gg = tp.grad_of(gamma);
            for (std::size_t r = 0; r < g.rows(); ++r)
                for (std::size_t c = 0; c < n; ++c) gg(0, c) += g(r, c) * Xh(r, c);
        }
        if (tp.requires_grad(beta)) {
            Matrix& gb = tp.grad_of(beta);
            for (std::size_t r = 0; r < g.rows(); ++r)
                for (std::size_t c = 0; c < n; ++c) gb(0, c) += g(r, c);
        }
        if (tp.requires_grad(x)) {
            Matrix& gx = tp.grad_of(x);
            std::vector<double> dxh(n);
            for (std::size_t r = 0; r < g.rows(); ++r) {
                double mean_d = 0.0;
                double mean_dx = 0.0;
                for (std::size_t c = 0; c < n; ++c) {
                    dxh[c] = g(r, c) * G(0, c);
                    mean_d += dxh[c];
                    mean_dx += dxh[c] * Xh(r, c);
                }
                mean_d /= static_cast<double>(n);
                mean_dx /= static_cast<double>(n);
                for (std::size_t c = 0; c < n; ++c)
                    gx(r, c) += (dxh[c] - mean_d - Xh(r, c) * mean_dx) * inv_std[r];
            }
        }
    });
}

Var l2_normalize_rows(Tape& t, Var a) {
    const Matrix& A = t.value(a);
    Matrix out = A;
    std::vector<double> norms(A.rows());
    for (std::size_t r = 0; r < A.rows(); ++r) {
        norms[r] = std::sqrt(simd::dot(A.row(r), A.row(r)));
        if (!(norms[r] > 0.0) || !std::isfinite(norms[r]))
            throw InvalidInput("l2_normalize_rows: zero-norm or non-finite row " + std::to_string(r));
        for (double& v : out.row(r)) v /= norms[r];
    }
    const Var self = next_var(t);
    return t.record(std::move(out), {a}, [a, self, norms = std::move(norms)](Tape& tp, const Matrix& g) {
        if (!tp.requires_grad(a)) return;
        const Matrix& y = tp.value(self);
        Matrix& ga = tp.grad_of(a);
        for (std::size_t r = 0; r < y.rows(); ++r) {
            const double inner = simd::dot(g.row(r), y.row(r));
            for (std::size_t c = 0; c < y.cols(); ++c) ga(r, c) += (g(r, c) - y(r, c) * inner) / norms[r];
        }
    });
}

Var mean_rows(Tape& t, Var a) {
    const Matrix& A = t.value(a);
    if (A.rows() == 0) throw InvalidInput("mean_rows: empty input");
    Matrix out(1, A.cols());
    for (std::size_t r = 0; r < A.rows(); ++r)
        for (std::size_t c = 0; c < A.cols(); ++c) out(0, c) += A(r, c);
    const double inv = 1.0 / static_cast<double>(A.rows());
    for (double& v : out.flat()) v *= inv;
    return t.record(std::move(out), {a}, [a, inv](Tape& tp, const Matrix& g) {
        if (!tp.requires_grad(a)) return;
        Matrix& ga = tp.grad_of(a);
        for (std::size_t r = 0; r < ga.rows(); ++r)
            for (std::size_t c = 0; c < ga.cols(); ++c) ga(r, c) += g(0, c) * inv;
    });
}

Var concat_rows(Tape& t, std::span<const Var> parts) {
    if (parts.empty()) throw InvalidInput("concat_rows: no inputs");
    const std::size_t cols = t.value(parts[0]).cols();
    std::size_t rows = 0;
    for (Var p : parts) {
        if (t.value(p).cols() != cols) throw InvalidInput("concat_rows: column mismatch");
        rows += t.value(p).rows();
    }
    Matrix out(rows, cols);
    std::size_t offset = 0;
    for (Var p : parts) {
        const Matrix& P = t.value(p);
        std::copy(P.data(), P.data() + P.size(), out.data() + offset * cols);
        offset += P.rows();
    }
    std::vector<Var> owned(parts.begin(), parts.end());
    return t.record(std::move(out), parts, [owned](Tape& tp, const Matrix& g) {
        std::size_t offset = 0;
        for (Var p : owned) {
            const std::size_t n = tp.value(p).size();
            if (tp.requires_grad(p)) {
                Matrix& gp = tp.grad_of(p);
                simd::kernels().axpy(1.0, g.data() + offset, gp.data(), n);
            }
            offset += n;
        }
    });
}

Var concat_cols(Tape& t, std::span<const Var> parts) {
    if (parts.empty()) throw InvalidInput("concat_cols: no inputs");
    const std::size_t rows = t.value(parts[0]).rows();
    std::size_t cols = 0;
    for (Var p : parts) {
        if (t.value(p).rows() != rows) throw InvalidInput("concat_cols: row mismatch");
        cols += t.value(p).cols();
    }
    Matrix out(rows, cols);
    std::size_t offset = 0;
    for (Var p : parts) {
        const Matrix& P = t.value(p);
        for (std::size_t r = 0; r < rows; ++r)
            std::copy(P.row(r).begin(), P.row(r).end(), out.row(r).begin() + offset);
        offset += P.cols();
    }
    std::vector<Var> owned(parts.begin(), parts.end());
    return t.record(std::move(out), parts, [owned](Tape& tp, const Matrix& g) {
        std::size_t offset = 0;
        for (Var p : owned) {
            const std::size_t n = tp.value(p).cols();
            if (tp.requires_grad(p)) {
                Matrix& gp = tp.grad_of(p);
                for (std::size_t r = 0; r < g.rows(); ++r)
                    for (std::size_t c = 0; c < n; ++c) gp(r, c) += g(r, offset + c);
            }
            offset += n;
        }
    });
}

Var slice_cols(Tape& t, Var a, std::size_t start, std::size_t count) {
    const Matrix& A = t.value(a);
    if (start + count > A.cols()) throw InvalidInput("slice_cols: out of range");
    Matrix out(A.rows(), count);
    for (std::size_t r = 0; r < A.rows(); ++r)
        for (std::size_t c = 0; c < count; ++c) out(r, c) = A(r, start + c);
    return t.record(std::move(out), {a}, [a, start, count](Tape& tp, const Matrix& g) {
        if (!tp.requires_grad(a)) return;
        Matrix& ga = tp.grad_of(a);
        for (std::size_t r = 0; r < g.rows(); ++r)
            for (std::size_t c = 0; c < count; ++c) ga(r, start + c) += g(r, c);
    });
}

Var gather_rows(Tape& t, Var a, std::span<const std::size_t> index) {
    const Matrix& A = t.value(a);
    Matrix out(index.size(), A.cols());
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] >= A.rows()) throw InvalidInput("gather_rows: index out of range");
        std::copy(A.row(index[i]).begin(), A.row(index[i]).end(), out.row(i).begin());
    }
    std::vector<std::size_t> owned(index.begin(), index.end());
    return t.record(std::move(out), {a}, [a, owned = std::move(owned)](Tape& tp, const Matrix& g) {
        if (!tp.requires_grad(a)) return;
        Matrix& ga = tp.grad_of(a);
        for (std::size_t i = 0; i < owned.size(); ++i)
            simd::kernels().axpy(1.0, g.row(i).data(), ga.row(owned[i]).data(), g.cols());
    });
}

Var multi_head_attention(Tape& t, Var q, Var k, Var v, std::size_t heads) {
    const Matrix& Q = t.value(q);
    const Matrix& K = t.value(k);
    const Matrix& V = t.value(v);
    if (!Q.same_shape(K) || !Q.same_shape(V)) throw InvalidInput("multi_head_attention: shape mismatch");
    const std::size_t m = Q.rows();
    const std::size_t d = Q.cols();
    if (heads == 0 || d % heads != 0) throw InvalidInput("multi_head_attention: heads must divide the width");
    const std::size_t dh = d / heads;
    const double s = 1.0 / std::sqrt(static_cast<double>(dh));

    // probs holds the heads' m x m attention matrices side by side.
    Matrix probs(m, heads * m);
    Matrix out(m, d);
    Matrix scores(m, m);
    for (std::size_t h = 0; h < heads; ++h) {
        scores.fill(0.0);
        simd::gemm(Trans::no, Trans::yes, m, m, dh, Q.data() + h * dh, d, K.data() + h * dh, d, scores.data(), m);
        for (std::size_t r = 0; r < m; ++r) {
            auto row = scores.row(r);
            const double mx = *std::max_element(row.begin(), row.end());
            double sum = 0.0;
            double* p = probs.row(r).data() + h * m;
            for (std::size_t c = 0; c < m; ++c) {
                p[c] = std::exp((row[c] - mx) * s);
                sum += p[c];
            }
            for (std::size_t c = 0; c < m; ++c) p[c] /= sum;
        }
        simd::gemm(Trans::no, Trans::no, m, dh, m, probs.data() + h * m, heads * m, V.data() + h * dh, d,
                   out.data() + h * dh, d);
    }
    return t.record(std::move(out), {q, k, v}, [q, k, v, heads, dh, s, probs = std::move(probs)](Tape& tp,
                                                                                                const Matrix& g) {
        const Matrix& Q = tp.value(q);
        const Matrix& K = tp.value(k);
        const Matrix& V = tp.value(v);
        const std::size_t m = Q.rows();
        const std::size_t d = Q.cols();
        const std::size_t ldp = heads * m;
        Matrix dp(m, m);
        for (std::size_t h = 0; h < heads; ++h) {
            const double* p = probs.data() + h * m;
            if (tp.requires_grad(v))
                simd::gemm(Trans::yes, Trans::no, m, dh, m, p, ldp, g.data() + h * dh, d,
                           tp.grad_of(v).data() + h * dh, d);
            if (!tp.requires_grad(q) && !tp.requires_grad(k)) continue;
            // dS = P * (dP - rowsum(dP * P)), then scaled by s.
            dp.fill(0.0);
            simd::gemm(Trans::no, Trans::yes, m, m, dh, g.data() + h * dh, d, V.data() + h * dh, d, dp.data(), m);
            for (std::size_t r = 0; r < m; ++r) {
                const double* pr = p + r * ldp;
                double* dr = dp.row(r).data();
                const double inner = simd::kernels().dot(dr, pr, m);
                for (std::size_t c = 0; c < m; ++c) dr[c] = s * pr[c] * (dr[c] - inner);
            }
            if (tp.requires_grad(q))
                simd::gemm(Trans::no, Trans::no, m, dh, m, dp.data(), m, K.data() + h * dh, d,
                           tp.grad_of(q).data() + h * dh, d);
            if (tp.requires_grad(k))
                simd::gemm(Trans::yes, Trans::no, m, dh, m, dp.data(), m, Q.data() + h * dh, d,
                           tp.grad_of(k).data() + h * dh, d);
        }
    });
}

}  // namespace pathpt::ag
