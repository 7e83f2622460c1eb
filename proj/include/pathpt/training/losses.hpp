#pragma once

#include <span>

#include "pathpt/autograd.hpp"
#include "pathpt/tensor.hpp"

namespace pathpt::training {

struct LossValue {
    double value = 0.0;
    bool skipped = false;  // nothing to average over
};

// -sum_m w_{y_m} log p_m(y_m) / sum_m w_{y_m} with w_c = 1 / count(c) over
// labeled rows. Rows labeled negative (unlabeled) are ignored.
LossValue balanced_ce(const Matrix& probabilities, std::span<const int> labels);

// Mean over `rows` of -log(p(0) + p(slide_label)), the sum clamped at 1e-12.
LossValue candidate_loss(const Matrix& probabilities, int slide_label, std::span<const std::size_t> rows);

// Same quantities from logits (softmax applied internally) as 1 x 1 tape
// nodes with fused gradients. A skipped loss is a constant zero.
ag::Var balanced_ce_from_logits(ag::Tape& tape, ag::Var logits, std::span<const int> labels);
ag::Var candidate_loss_from_logits(ag::Tape& tape, ag::Var logits, int slide_label, std::span<const std::size_t> rows);

}  // namespace pathpt::training
