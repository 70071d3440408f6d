#pragma once

// Exact linear assignment by shortest augmenting paths (Jonker-Volgenant
// style, O(n^3)). Solves min-cost; callers maximizing a score pass
// (max_value - score) as cost. A lexicographic refinement pass makes the
// returned assignment the lexicographically smallest among all optima,
// which pins tie-breaking for tests and reproducibility.

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace spot {

/// Minimum-total-cost assignment of n rows to n columns.
/// cost is row-major n x n. Returns assignment[row] = col.
inline std::vector<int> solve_assignment_min_cost(const std::vector<double>& cost, int n) {
    if (static_cast<int>(cost.size()) != n * n)
        throw std::invalid_argument("solve_assignment_min_cost: matrix is not n x n");
    const double kInf = std::numeric_limits<double>::infinity();
    // potentials and column matching, 1-indexed internally
    std::vector<double> u(static_cast<size_t>(n) + 1, 0.0), v(static_cast<size_t>(n) + 1, 0.0);
    std::vector<int> match(static_cast<size_t>(n) + 1, 0);  // match[col] = row
    std::vector<int> way(static_cast<size_t>(n) + 1, 0);
    for (int i = 1; i <= n; ++i) {
        match[0] = i;
        int j0 = 0;
        std::vector<double> minv(static_cast<size_t>(n) + 1, kInf);
        std::vector<char> used(static_cast<size_t>(n) + 1, 0);
        do {
            used[static_cast<size_t>(j0)] = 1;
            const int i0 = match[static_cast<size_t>(j0)];
            double delta = kInf;
            int j1 = 0;
            for (int j = 1; j <= n; ++j) {
                if (used[static_cast<size_t>(j)]) continue;
                const double cur = cost[static_cast<size_t>(i0 - 1) * n + (j - 1)] -
                                   u[static_cast<size_t>(i0)] - v[static_cast<size_t>(j)];
                if (cur < minv[static_cast<size_t>(j)]) {
                    minv[static_cast<size_t>(j)] = cur;
                    way[static_cast<size_t>(j)] = j0;
                }
                if (minv[static_cast<size_t>(j)] < delta) {
                    delta = minv[static_cast<size_t>(j)];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[static_cast<size_t>(j)]) {
                    u[static_cast<size_t>(match[static_cast<size_t>(j)])] += delta;
                    v[static_cast<size_t>(j)] -= delta;
                } else {
                    minv[static_cast<size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (match[static_cast<size_t>(j0)] != 0);
        do {
            const int j1 = way[static_cast<size_t>(j0)];
            match[static_cast<size_t>(j0)] = match[static_cast<size_t>(j1)];
            j0 = j1;
        } while (j0);
    }
    std::vector<int> assignment(static_cast<size_t>(n), -1);
    for (int j = 1; j <= n; ++j)
        if (match[static_cast<size_t>(j)] != 0)
            assignment[static_cast<size_t>(match[static_cast<size_t>(j)] - 1)] = j - 1;
    return assignment;
}

inline double assignment_cost(const std::vector<double>& cost, int n,
                              const std::vector<int>& assignment) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) total += cost[static_cast<size_t>(i) * n + assignment[static_cast<size_t>(i)]];
    return total;
}

/// Min-cost assignment; among all optimal assignments returns the
/// lexicographically smallest (row 0's column minimal, then row 1's, ...).
inline std::vector<int> solve_assignment_lex(const std::vector<double>& cost, int n,
                                             double tol = 1e-9) {
    std::vector<int> best = solve_assignment_min_cost(cost, n);
    const double optimum = assignment_cost(cost, n, best);
    // Fix rows one at a time to the smallest column that still allows an
    // optimal completion. kBig blocks a (row, col) pair without destroying
    // feasibility.
    const double kBig = 1e18;
    std::vector<double> work = cost;
    double fixed_cost = 0.0;
    std::vector<int> result(static_cast<size_t>(n), -1);
    std::vector<char> col_taken(static_cast<size_t>(n), 0);
    for (int row = 0; row < n; ++row) {
        int chosen = -1;
        for (int col = 0; col < n && chosen < 0; ++col) {
            if (col_taken[static_cast<size_t>(col)]) continue;
            // tentatively force row -> col by making every alternative huge
            std::vector<double> trial = work;
            for (int j = 0; j < n; ++j)
                if (j != col) trial[static_cast<size_t>(row) * n + j] = kBig;
            const auto a = solve_assignment_min_cost(trial, n);
            double total = fixed_cost;
            for (int i = row; i < n; ++i)
                total += work[static_cast<size_t>(i) * n + a[static_cast<size_t>(i)]];
            if (total <= optimum + tol) chosen = col;
        }
        if (chosen < 0) throw std::logic_error("solve_assignment_lex: no feasible column");
        result[static_cast<size_t>(row)] = chosen;
        col_taken[static_cast<size_t>(chosen)] = 1;
        fixed_cost += cost[static_cast<size_t>(row) * n + chosen];
        for (int i = 0; i < n; ++i)
            if (i != row) work[static_cast<size_t>(i) * n + chosen] = kBig;
        for (int j = 0; j < n; ++j)
            if (j != chosen) work[static_cast<size_t>(row) * n + j] = kBig;
    }
    return result;
}

}  // namespace spot
