#pragma once

// The nine decoding orders: eight raster variants (all combinations of
// starting corner and primary axis) plus a clockwise spiral from the
// center. Each permutation owns a dedicated BOS identity so the decoder
// can tell which order it is asked to follow.
//
// order[m] is the canonical (row-major) patch index decoded at sequence
// position m; inverse[p] is the sequence position of canonical patch p.

#include <stdexcept>
#include <string>
#include <vector>

namespace spot {

struct PermutationSpec {
    int id = 1;  // 1..9; id 1 is the default raster order
    std::string name;
    std::vector<int> order;
    std::vector<int> inverse;
    int bos_id = 0;  // selects the learnable BOS embedding (id - 1)
};

namespace detail {

inline std::vector<int> invert_permutation(const std::vector<int>& order) {
    std::vector<int> inv(order.size(), -1);
    for (size_t m = 0; m < order.size(); ++m) {
        const int p = order[m];
        if (p < 0 || p >= static_cast<int>(order.size()) || inv[static_cast<size_t>(p)] != -1)
            throw std::logic_error("permutation is not a bijection");
        inv[static_cast<size_t>(p)] = static_cast<int>(m);
    }
    return inv;
}

/// Clockwise spiral starting at (ceil(h/2)-1, ceil(w/2)-1), first step to
/// the right, run lengths 1,1,2,2,3,3,...; cells outside the grid are
/// skipped; stops after emitting all n cells.
inline std::vector<int> spiral_order(int h, int w) {
    std::vector<int> order;
    order.reserve(static_cast<size_t>(h) * w);
    int r = (h + 1) / 2 - 1;
    int c = (w + 1) / 2 - 1;
    auto emit = [&](int row, int col) {
        if (row >= 0 && row < h && col >= 0 && col < w) order.push_back(row * w + col);
    };
    emit(r, c);
    // direction cycle: right, down, left, up
    const int dr[4] = {0, 1, 0, -1};
    const int dc[4] = {1, 0, -1, 0};
    int dir = 0;
    int run = 1;
    int leg = 0;
    const int total = h * w;
    while (static_cast<int>(order.size()) < total) {
        for (int step = 0; step < run && static_cast<int>(order.size()) < total; ++step) {
            r += dr[dir];
            c += dc[dir];
            emit(r, c);
        }
        dir = (dir + 1) % 4;
        if (++leg % 2 == 0) ++run;
    }
    return order;
}

}  // namespace detail

/// Builds the nine decoding orders for a grid_h x grid_w patch grid.
inline std::vector<PermutationSpec> build_permutations(int grid_h, int grid_w) {
    const int n = grid_h * grid_w;
    if (n < 4)
        throw std::invalid_argument("build_permutations: need at least 4 patches, got " +
                                    std::to_string(n));
    std::vector<PermutationSpec> specs;
    auto push = [&](const std::string& name, std::vector<int> order) {
        PermutationSpec p;
        p.id = static_cast<int>(specs.size()) + 1;
        p.name = name;
        p.inverse = detail::invert_permutation(order);
        p.order = std::move(order);
        p.bos_id = p.id - 1;
        specs.push_back(std::move(p));
    };

    std::vector<int> o;
    o.reserve(static_cast<size_t>(n));

    // (a) rows left->right, top->bottom (default raster)
    o.clear();
    for (int r = 0; r < grid_h; ++r)
        for (int c = 0; c < grid_w; ++c) o.push_back(r * grid_w + c);
    push("left_to_right_top_to_bottom", o);

    // (b) columns top->bottom, left->right
    o.clear();
    for (int c = 0; c < grid_w; ++c)
        for (int r = 0; r < grid_h; ++r) o.push_back(r * grid_w + c);
    push("top_to_bottom_left_to_right", o);

    // (c) columns top->bottom, columns right->left
    o.clear();
    for (int c = grid_w - 1; c >= 0; --c)
        for (int r = 0; r < grid_h; ++r) o.push_back(r * grid_w + c);
    push("top_to_bottom_right_to_left", o);

    // (d) rows right->left, top->bottom
    o.clear();
    for (int r = 0; r < grid_h; ++r)
        for (int c = grid_w - 1; c >= 0; --c) o.push_back(r * grid_w + c);
    push("right_to_left_top_to_bottom", o);

    // (e) rows right->left, bottom->top (reverse raster from bottom-right)
    o.clear();
    for (int r = grid_h - 1; r >= 0; --r)
        for (int c = grid_w - 1; c >= 0; --c) o.push_back(r * grid_w + c);
    push("bottom_to_top_right_to_left", o);

    // (f) columns bottom->top, right->left
    o.clear();
    for (int c = grid_w - 1; c >= 0; --c)
        for (int r = grid_h - 1; r >= 0; --r) o.push_back(r * grid_w + c);
    push("right_to_left_bottom_to_top", o);

    // (g) columns bottom->top, left->right
    o.clear();
    for (int c = 0; c < grid_w; ++c)
        for (int r = grid_h - 1; r >= 0; --r) o.push_back(r * grid_w + c);
    push("bottom_to_top_left_to_right", o);

    // (h) rows left->right, bottom->top
    o.clear();
    for (int r = grid_h - 1; r >= 0; --r)
        for (int c = 0; c < grid_w; ++c) o.push_back(r * grid_w + c);
    push("left_to_right_bottom_to_top", o);

    // (i) center spiral
    push("spiral", detail::spiral_order(grid_h, grid_w));

    return specs;
}

}  // namespace spot
