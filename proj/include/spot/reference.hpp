#pragma once

// Independent reference implementations used to cross-check the fast
// paths: factorial brute force for assignments, direct set arithmetic for
// IoU, the contingency-table ARI formula, and definitional segment
// metrics. Deliberately written in the most literal way possible and kept
// separate from the implementations they verify.

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <vector>

namespace spot::refimpl {

/// Maximize total score over all k! bijections; among ties returns the
/// lexicographically smallest permutation. perm[row] = col.
struct BruteForceAssignment {
    std::vector<int> perm;
    double total = 0.0;
};

inline BruteForceAssignment brute_force_max_assignment(const std::vector<double>& score, int k) {
    std::vector<int> perm(static_cast<size_t>(k));
    for (int i = 0; i < k; ++i) perm[static_cast<size_t>(i)] = i;
    BruteForceAssignment best;
    best.total = -1e300;
    do {
        double total = 0.0;
        for (int i = 0; i < k; ++i) total += score[static_cast<size_t>(i) * k + perm[static_cast<size_t>(i)]];
        if (total > best.total + 1e-12) {
            best.total = total;
            best.perm = perm;
        }
        // std::next_permutation enumerates in lexicographic order, so the
        // first assignment reaching the max is the lexicographically smallest
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

/// IoU between two pixel label sets given as label maps.
inline double set_iou(const std::vector<int>& a, int label_a, const std::vector<int>& b,
                      int label_b) {
    int inter = 0, uni = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        const bool in_a = a[i] == label_a;
        const bool in_b = b[i] == label_b;
        inter += in_a && in_b;
        uni += in_a || in_b;
    }
    return uni == 0 ? 0.0 : static_cast<double>(inter) / uni;
}

inline std::vector<int> nonzero_labels(const std::vector<int>& m) {
    std::set<int> s;
    for (int v : m)
        if (v != 0) s.insert(v);
    return {s.begin(), s.end()};
}

inline std::vector<int> all_labels(const std::vector<int>& m) {
    std::set<int> s(m.begin(), m.end());
    return {s.begin(), s.end()};
}

/// Mean-best-overlap by direct definition: for each nonzero ground-truth
/// segment, the best IoU over all predicted segments, averaged.
inline double mbo_reference(const std::vector<int>& pred, const std::vector<int>& gt) {
    const auto gt_labels = nonzero_labels(gt);
    if (gt_labels.empty()) return -1.0;
    const auto pred_labels = all_labels(pred);
    double acc = 0.0;
    for (int g : gt_labels) {
        double best = 0.0;
        for (int p : pred_labels) best = std::max(best, set_iou(gt, g, pred, p));
        acc += best;
    }
    return acc / static_cast<double>(gt_labels.size());
}

/// Hungarian mIoU by brute force over assignments (small label counts).
inline double miou_reference(const std::vector<int>& pred, const std::vector<int>& gt) {
    const auto gt_labels = nonzero_labels(gt);
    if (gt_labels.empty()) return -1.0;
    const auto pred_labels = all_labels(pred);
    const int r = static_cast<int>(gt_labels.size());
    const int c = static_cast<int>(pred_labels.size());
    const int s = std::max(r, c);
    std::vector<double> score(static_cast<size_t>(s) * s, 0.0);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
            score[static_cast<size_t>(i) * s + j] =
                set_iou(gt, gt_labels[static_cast<size_t>(i)], pred, pred_labels[static_cast<size_t>(j)]);
    const auto best = brute_force_max_assignment(score, s);
    double total = 0.0;
    for (int i = 0; i < r; ++i) {
        const int j = best.perm[static_cast<size_t>(i)];
        if (j < c) total += score[static_cast<size_t>(i) * s + j];
    }
    return total / static_cast<double>(r);
}

/// Adjusted Rand Index on the ground-truth foreground, straight from the
/// contingency-table formula. Degenerate denominators give 1.
inline double fg_ari_reference(const std::vector<int>& pred, const std::vector<int>& gt) {
    std::vector<int> p, g;
    for (size_t i = 0; i < gt.size(); ++i)
        if (gt[i] != 0) {
            p.push_back(pred[i]);
            g.push_back(gt[i]);
        }
    if (p.empty()) return -1.0;
    std::map<std::pair<int, int>, long long> cont;
    std::map<int, long long> pa, gb;
    for (size_t i = 0; i < p.size(); ++i) {
        cont[{g[i], p[i]}]++;
        gb[g[i]]++;
        pa[p[i]]++;
    }
    auto c2 = [](long long x) { return 0.5 * static_cast<double>(x) * static_cast<double>(x - 1); };
    double sum_ij = 0, sum_a = 0, sum_b = 0;
    for (const auto& kv : cont) sum_ij += c2(kv.second);
    for (const auto& kv : pa) sum_a += c2(kv.second);
    for (const auto& kv : gb) sum_b += c2(kv.second);
    const double n2 = c2(static_cast<long long>(p.size()));
    const double expected = sum_a * sum_b / n2;
    const double maximum = 0.5 * (sum_a + sum_b);
    if (std::abs(maximum - expected) < 1e-12) return 1.0;
    return (sum_ij - expected) / (maximum - expected);
}

}  // namespace spot::refimpl
