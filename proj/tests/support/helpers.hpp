#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "pathpt/autograd.hpp"
#include "pathpt/corpus/slide.hpp"
#include "pathpt/random.hpp"
#include "pathpt/tensor.hpp"

namespace pathpt::testing {

inline Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
    Matrix m(rows, cols);
    for (double& v : m.flat()) v = scale * standard_normal(rng);
    return m;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a.flat()[i] - b.flat()[i]));
    return worst;
}

// <out, R> for a fixed random R, reduced to the 1 x 1 node backward() needs.
inline ag::Var project_to_scalar(ag::Tape& t, ag::Var out, const Matrix& r) {
    const Matrix& v = t.value(out);
    auto weighted = ag::mul(t, out, t.constant(r));
    auto col = ag::mean_rows(t, weighted);  // 1 x n
    auto ones = t.constant(Matrix(v.cols(), 1, static_cast<double>(v.rows())));
    return ag::matmul(t, col, ones);
}

struct GradCheck {
    double worst_rel = 0.0;
    std::string worst_where;
    std::size_t checked = 0;
};

// Central differences on every element of every parameter (or a strided
// subset when `max_per_param` is smaller than the tensor).
inline GradCheck check_gradients(const std::vector<Parameter*>& params,
                                 const std::function<ag::Var(ag::Tape&)>& loss, double h = 1e-5,
                                 std::size_t max_per_param = 1u << 30) {
    for (auto* p : params) p->zero_grad();
    {
        ag::Tape t;
        t.backward(loss(t));
    }
    auto eval = [&] {
        ag::Tape t;
        return t.value(loss(t))(0, 0);
    };
    GradCheck out;
    for (auto* p : params) {
        const std::size_t n = p->value.size();
        const std::size_t stride = std::max<std::size_t>(1, n / std::min(n, max_per_param));
        for (std::size_t i = 0; i < n; i += stride) {
            double& x = p->value.flat()[i];
            const double saved = x;
            x = saved + h;
            const double up = eval();
            x = saved - h;
            const double down = eval();
            x = saved;
            const double numeric = (up - down) / (2 * h);
            const double analytic = p->grad.flat()[i];
            const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
            ++out.checked;
            if (rel > out.worst_rel) {
                out.worst_rel = rel;
                out.worst_where = p->name + "[" + std::to_string(i) + "]";
            }
        }
    }
    return out;
}

// Slide on an h x w grid with every cell filled (unless `holes`), features
// N(0, 1), gt labels cycling 0 / slide_label.
inline corpus::SlideRecord random_slide(std::uint32_t h, std::uint32_t w, std::size_t d, Rng& rng,
                                        int slide_label = 1, bool holes = false) {
    corpus::SlideRecord s;
    s.slide_id = "s" + std::to_string(uniform_index(rng, 1000000));
    s.grid_h = h;
    s.grid_w = w;
    s.slide_label = slide_label;
    for (std::uint32_t r = 0; r < h; ++r)
        for (std::uint32_t c = 0; c < w; ++c) {
            if (holes && (r * 7 + c * 3) % 5 == 0) continue;
            corpus::Tile t;
            t.row = r;
            t.col = c;
            t.feature.resize(d);
            for (auto& f : t.feature) f = static_cast<float>(standard_normal(rng));
            t.gt_label = ((r + c) % 2 == 0) ? 0 : slide_label;
            s.tiles.push_back(std::move(t));
        }
    return s;
}

}  // namespace pathpt::testing
