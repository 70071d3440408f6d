#pragma once

// Unsupervised segmentation metrics: mean best overlap, Hungarian-matched
// mIoU, and foreground-adjusted Rand index, together with mask extraction
// from attention matrices and the trivial n-block baselines.
//
// Ground-truth maps use 0 for background; predictions label every pixel
// with 1..k. Background pixels participate in IoU denominators. A result
// of -1 from the per-sample metrics means "no foreground, skip sample".

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "spot/hungarian.hpp"

namespace spot {

struct LabelMap {
    int height = 0;
    int width = 0;
    std::vector<int> labels;

    int at(int y, int x) const { return labels[static_cast<size_t>(y) * width + x]; }
};

/// Per-patch argmax (ties to the smallest slot), then nearest-neighbor
/// upsampling to (out_h, out_w). Labels are 1..k.
template <typename T>
LabelMap masks_from_attention(const T* attn, int n, int k, int grid_h, int grid_w, int out_h,
                              int out_w) {
    if (grid_h * grid_w != n)
        throw std::invalid_argument("masks_from_attention: grid does not match n");
    if (out_h % grid_h != 0 || out_w % grid_w != 0)
        throw std::invalid_argument("masks_from_attention: output resolution " +
                                    std::to_string(out_h) + "x" + std::to_string(out_w) +
                                    " is not a multiple of the grid");
    const int fh = out_h / grid_h, fw = out_w / grid_w;
    LabelMap m;
    m.height = out_h;
    m.width = out_w;
    m.labels.assign(static_cast<size_t>(out_h) * out_w, 0);
    for (int p = 0; p < n; ++p) {
        int best = 0;
        for (int j = 1; j < k; ++j)
            if (attn[static_cast<size_t>(p) * k + j] > attn[static_cast<size_t>(p) * k + best])
                best = j;
        const int pr = p / grid_w, pc = p % grid_w;
        for (int dy = 0; dy < fh; ++dy)
            for (int dx = 0; dx < fw; ++dx)
                m.labels[static_cast<size_t>(pr * fh + dy) * out_w + pc * fw + dx] = best + 1;
    }
    return m;
}

namespace detail {

inline void check_same_size(const LabelMap& a, const LabelMap& b, const char* who) {
    if (a.height != b.height || a.width != b.width)
        throw std::invalid_argument(std::string(who) + ": resolution mismatch");
}

inline std::vector<int> unique_labels(const std::vector<int>& v, bool skip_zero) {
    std::vector<int> out(v);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    if (skip_zero && !out.empty() && out.front() == 0) out.erase(out.begin());
    return out;
}

/// IoU matrix between GT segments (rows) and predicted segments (cols).
inline std::vector<double> segment_iou_matrix(const LabelMap& pred, const LabelMap& gt,
                                              const std::vector<int>& gt_labels,
                                              const std::vector<int>& pred_labels) {
    const int r = static_cast<int>(gt_labels.size());
    const int c = static_cast<int>(pred_labels.size());
    std::vector<int> inter(static_cast<size_t>(r) * c, 0);
    std::vector<int> gt_count(static_cast<size_t>(r), 0), pred_count(static_cast<size_t>(c), 0);
    std::vector<int> gt_index(static_cast<size_t>(*std::max_element(gt_labels.begin(), gt_labels.end()) + 1), -1);
    std::vector<int> pred_index;
    int max_pred = 0;
    for (int v : pred_labels) max_pred = std::max(max_pred, v);
    pred_index.assign(static_cast<size_t>(max_pred) + 1, -1);
    for (int i = 0; i < r; ++i) gt_index[static_cast<size_t>(gt_labels[static_cast<size_t>(i)])] = i;
    for (int j = 0; j < c; ++j) pred_index[static_cast<size_t>(pred_labels[static_cast<size_t>(j)])] = j;
    for (size_t px = 0; px < gt.labels.size(); ++px) {
        const int gl = gt.labels[px];
        const int pl = pred.labels[px];
        const int gi = gl >= 0 && gl < static_cast<int>(gt_index.size()) ? gt_index[static_cast<size_t>(gl)] : -1;
        const int pj = pl >= 0 && pl < static_cast<int>(pred_index.size()) ? pred_index[static_cast<size_t>(pl)] : -1;
        if (gi >= 0) gt_count[static_cast<size_t>(gi)]++;
        if (pj >= 0) pred_count[static_cast<size_t>(pj)]++;
        if (gi >= 0 && pj >= 0) inter[static_cast<size_t>(gi) * c + pj]++;
    }
    std::vector<double> iou(static_cast<size_t>(r) * c, 0.0);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) {
            const int in = inter[static_cast<size_t>(i) * c + j];
            const int un = gt_count[static_cast<size_t>(i)] + pred_count[static_cast<size_t>(j)] - in;
            iou[static_cast<size_t>(i) * c + j] = un == 0 ? 0.0 : static_cast<double>(in) / un;
        }
    return iou;
}

}  // namespace detail

/// Mean best overlap: for every nonzero ground-truth segment take the best
/// IoU over all predicted segments, then average. The instance/class level
/// is chosen by which ground-truth map is passed. Returns -1 when the
/// ground truth has no foreground (caller skips and flags the sample).
inline double mbo(const LabelMap& pred, const LabelMap& gt) {
    detail::check_same_size(pred, gt, "mbo");
    const auto gt_labels = detail::unique_labels(gt.labels, /*skip_zero=*/true);
    if (gt_labels.empty()) return -1.0;
    const auto pred_labels = detail::unique_labels(pred.labels, /*skip_zero=*/false);
    const auto iou = detail::segment_iou_matrix(pred, gt, gt_labels, pred_labels);
    const int c = static_cast<int>(pred_labels.size());
    double acc = 0.0;
    for (size_t i = 0; i < gt_labels.size(); ++i) {
        double best = 0.0;
        for (int j = 0; j < c; ++j) best = std::max(best, iou[i * c + j]);
        acc += best;
    }
    return acc / static_cast<double>(gt_labels.size());
}

/// Hungarian-matched mIoU over ground-truth instance segments: optimal
/// one-to-one matching between GT and predicted segments (rectangular
/// matrices padded with zeros), averaged over the number of GT segments so
/// unmatched GT segments contribute 0. Returns -1 on empty foreground.
inline double miou_hungarian(const LabelMap& pred, const LabelMap& gt) {
    detail::check_same_size(pred, gt, "miou_hungarian");
    const auto gt_labels = detail::unique_labels(gt.labels, /*skip_zero=*/true);
    if (gt_labels.empty()) return -1.0;
    const auto pred_labels = detail::unique_labels(pred.labels, /*skip_zero=*/false);
    const int r = static_cast<int>(gt_labels.size());
    const int c = static_cast<int>(pred_labels.size());
    const auto iou = detail::segment_iou_matrix(pred, gt, gt_labels, pred_labels);
    const int s = std::max(r, c);
    std::vector<double> cost(static_cast<size_t>(s) * s, 1.0);  // zero-IoU padding
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
            cost[static_cast<size_t>(i) * s + j] = 1.0 - iou[static_cast<size_t>(i) * c + j];
    const auto assignment = solve_assignment_min_cost(cost, s);
    double total = 0.0;
    for (int i = 0; i < r; ++i) {
        const int j = assignment[static_cast<size_t>(i)];
        if (j < c) total += iou[static_cast<size_t>(i) * c + j];
    }
    return total / static_cast<double>(r);
}

/// Adjusted Rand Index restricted to ground-truth foreground pixels.
/// Degenerate cases (single cluster on both sides, or expected == max)
/// return 1. Returns -1 on empty foreground.
inline double fg_ari(const LabelMap& pred, const LabelMap& gt) {
    detail::check_same_size(pred, gt, "fg_ari");
    std::vector<int> g, p;
    for (size_t i = 0; i < gt.labels.size(); ++i)
        if (gt.labels[i] != 0) {
            g.push_back(gt.labels[i]);
            p.push_back(pred.labels[i]);
        }
    if (g.empty()) return -1.0;
    const auto glab = detail::unique_labels(g, false);
    const auto plab = detail::unique_labels(p, false);
    const int r = static_cast<int>(glab.size());
    const int c = static_cast<int>(plab.size());
    auto gidx = [&](int v) {
        return static_cast<int>(std::lower_bound(glab.begin(), glab.end(), v) - glab.begin());
    };
    auto pidx = [&](int v) {
        return static_cast<int>(std::lower_bound(plab.begin(), plab.end(), v) - plab.begin());
    };
    std::vector<long long> cont(static_cast<size_t>(r) * c, 0);
    std::vector<long long> a(static_cast<size_t>(r), 0), b(static_cast<size_t>(c), 0);
    for (size_t i = 0; i < g.size(); ++i) {
        const int gi = gidx(g[i]), pj = pidx(p[i]);
        cont[static_cast<size_t>(gi) * c + pj]++;
        a[static_cast<size_t>(gi)]++;
        b[static_cast<size_t>(pj)]++;
    }
    auto c2 = [](long long x) { return 0.5 * static_cast<double>(x) * static_cast<double>(x - 1); };
    double sum_ij = 0, sum_a = 0, sum_b = 0;
    for (long long v : cont) sum_ij += c2(v);
    for (long long v : a) sum_a += c2(v);
    for (long long v : b) sum_b += c2(v);
    const double n2 = c2(static_cast<long long>(g.size()));
    if (n2 == 0.0) return 1.0;
    const double expected = sum_a * sum_b / n2;
    const double maximum = 0.5 * (sum_a + sum_b);
    if (std::abs(maximum - expected) < 1e-12) return 1.0;
    return (sum_ij - expected) / (maximum - expected);
}

/// Trivial baseline: the image split into `columns` vertical bands, each
/// band subdivided vertically into blocks, k blocks total; earlier bands
/// take the extra block (and the extra pixel column) on remainders.
inline LabelMap nblock_baseline(int columns, int k, int h, int w) {
    if (columns < 1 || k < columns)
        throw std::invalid_argument("nblock_baseline: need k >= columns >= 1, got columns=" +
                                    std::to_string(columns) + " k=" + std::to_string(k));
    LabelMap m;
    m.height = h;
    m.width = w;
    m.labels.assign(static_cast<size_t>(h) * w, 0);
    const int base_w = w / columns, extra_w = w % columns;
    const int base_k = k / columns, extra_k = k % columns;
    int x0 = 0;
    int label = 1;
    for (int band = 0; band < columns; ++band) {
        const int bw = base_w + (band < extra_w ? 1 : 0);
        const int blocks = base_k + (band < extra_k ? 1 : 0);
        const int base_h = h / blocks, extra_h = h % blocks;
        int y0 = 0;
        for (int blk = 0; blk < blocks; ++blk) {
            const int bh = base_h + (blk < extra_h ? 1 : 0);
            for (int y = y0; y < y0 + bh; ++y)
                for (int x = x0; x < x0 + bw; ++x)
                    m.labels[static_cast<size_t>(y) * w + x] = label;
            y0 += bh;
            ++label;
        }
        x0 += bw;
    }
    return m;
}

}  // namespace spot
