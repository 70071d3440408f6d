#pragma once

// Loss machinery: reconstruction loss, hard-mask conversion, IoU-cost
// Hungarian slot matching, and the attention distillation loss.
//
// The distillation objective is the per-patch cross-entropy of the
// student's soft assignment rows against the teacher's hard labels:
//   L_ATT = -(1/n) <A''_T, log A_S>_F
// (the negated Frobenius inner product; minimizing it pulls the student
// toward the teacher). Student masks are hardened only to build the IoU
// cost for matching; the loss itself uses the soft masks.

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "spot/hungarian.hpp"
#include "spot/tensor.hpp"

namespace spot {

struct MaskAssignment {
    std::vector<int> perm;  // perm[teacher_col] = student_col
    double total_iou = 0.0;
};

struct LossReport {
    double l_rec = 0.0;
    double l_att = 0.0;
    double lambda = 0.0;
    double total = 0.0;
};

/// (1 / (n * d_y)) * ||Y - Yhat||_2^2
template <typename T>
Var<T> reconstruction_loss(Var<T> y, Var<T> y_hat) {
    if (y.shape() != y_hat.shape())
        throw std::invalid_argument("reconstruction_loss: shape mismatch " + shape_str(y.shape()) +
                                    " vs " + shape_str(y_hat.shape()));
    return mse(y, y_hat);
}

/// Row-wise argmax then one-hot; ties resolve to the smallest column.
template <typename T>
std::vector<uint8_t> harden_masks(const T* a, int n, int k) {
    std::vector<uint8_t> hard(static_cast<size_t>(n) * k, 0);
    for (int i = 0; i < n; ++i) {
        int best = 0;
        for (int j = 1; j < k; ++j)
            if (a[static_cast<size_t>(i) * k + j] > a[static_cast<size_t>(i) * k + best]) best = j;
        hard[static_cast<size_t>(i) * k + best] = 1;
    }
    return hard;
}

template <typename T>
std::vector<uint8_t> harden_masks(const Var<T>& a) {
    return harden_masks(a.data(), a.rows(), a.cols());
}

/// IoU matrix between binary teacher masks and (hardened) student masks:
/// iou[t][s] = |T_t intersect S_s| / |T_t union S_s| over patch index sets.
template <typename T>
std::vector<double> iou_cost(const std::vector<uint8_t>& teacher_hard, const T* student_soft,
                             int n, int k) {
    const std::vector<uint8_t> student_hard = harden_masks(student_soft, n, k);
    std::vector<double> iou(static_cast<size_t>(k) * k, 0.0);
    for (int a = 0; a < k; ++a)
        for (int b = 0; b < k; ++b) {
            int inter = 0, uni = 0;
            for (int i = 0; i < n; ++i) {
                const bool ta = teacher_hard[static_cast<size_t>(i) * k + a] != 0;
                const bool sb = student_hard[static_cast<size_t>(i) * k + b] != 0;
                inter += ta && sb;
                uni += ta || sb;
            }
            iou[static_cast<size_t>(a) * k + b] = uni == 0 ? 0.0 : static_cast<double>(inter) / uni;
        }
    return iou;
}

/// Bijection maximizing total IoU; ties break to the lexicographically
/// smallest permutation.
inline MaskAssignment hungarian_match(const std::vector<double>& iou, int k) {
    if (static_cast<int>(iou.size()) != k * k)
        throw std::invalid_argument("hungarian_match: expected a " + std::to_string(k) + "x" +
                                    std::to_string(k) + " matrix, got " +
                                    std::to_string(iou.size()) + " entries");
    std::vector<double> cost(iou.size());
    for (size_t i = 0; i < iou.size(); ++i) cost[i] = 1.0 - iou[i];
    MaskAssignment m;
    m.perm = solve_assignment_lex(cost, k);
    for (int i = 0; i < k; ++i)
        m.total_iou += iou[static_cast<size_t>(i) * k + m.perm[static_cast<size_t>(i)]];
    return m;
}

/// Reorders teacher columns onto student columns: out[:, perm[c]] = in[:, c].
inline std::vector<uint8_t> apply_column_permutation(const std::vector<uint8_t>& masks, int n,
                                                     int k, const std::vector<int>& perm) {
    std::vector<uint8_t> out(masks.size(), 0);
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < k; ++c)
            out[static_cast<size_t>(i) * k + perm[static_cast<size_t>(c)]] =
                masks[static_cast<size_t>(i) * k + c];
    return out;
}

/// Distillation loss between matched hard teacher masks and soft student
/// masks. The teacher side must be one-hot rows.
template <typename T>
Var<T> attn_distill_loss(Tape<T>& tape, const std::vector<uint8_t>& teacher_matched,
                         Var<T> student_soft) {
    const int n = student_soft.rows(), k = student_soft.cols();
    if (static_cast<int>(teacher_matched.size()) != n * k)
        throw std::invalid_argument("attn_distill_loss: mask size mismatch");
    std::vector<T> target(teacher_matched.size());
    for (int i = 0; i < n; ++i) {
        int row_sum = 0;
        for (int j = 0; j < k; ++j) {
            const uint8_t v = teacher_matched[static_cast<size_t>(i) * k + j];
            if (v != 0 && v != 1)
                throw std::invalid_argument("attn_distill_loss: teacher masks must be binary");
            row_sum += v;
            target[static_cast<size_t>(i) * k + j] = static_cast<T>(v);
        }
        if (row_sum != 1)
            throw std::invalid_argument("attn_distill_loss: teacher rows must be one-hot");
    }
    return cross_entropy_rows(tape.constant({n, k}, std::move(target)), student_soft,
                              static_cast<T>(1e-9));
}

/// L = L_REC + lambda * L_ATT.
inline LossReport total_loss(double l_rec, double l_att, double lambda) {
    if (lambda < 0.0)
        throw std::invalid_argument("total_loss: lambda must be nonnegative, got " +
                                    std::to_string(lambda));
    LossReport r;
    r.l_rec = l_rec;
    r.l_att = l_att;
    r.lambda = lambda;
    r.total = l_rec + lambda * l_att;
    if (!std::isfinite(r.total)) throw std::runtime_error("total_loss: non-finite loss");
    return r;
}

}  // namespace spot
