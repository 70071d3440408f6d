#include <catch2/catch_amalgamated.hpp>

#include "spot/permutations.hpp"

using namespace spot;

TEST_CASE("2x2 grid known orders") {
    auto perms = build_permutations(2, 2);
    REQUIRE(perms.size() == 9);
    REQUIRE(perms[0].order == std::vector<int>{0, 1, 2, 3});   // (a) raster
    REQUIRE(perms[3].order == std::vector<int>{1, 0, 3, 2});   // (d) rows reversed
    REQUIRE(perms[0].id == 1);
    REQUIRE(perms[8].name == "spiral");
    // spiral from the center of a 2x2 starts at (0,0), goes right then down
    REQUIRE(perms[8].order == std::vector<int>{0, 1, 3, 2});
}

TEST_CASE("all nine permutations are bijections with correct inverses") {
    for (auto [h, w] : {std::pair{4, 4}, std::pair{7, 7}, std::pair{2, 2}, std::pair{3, 5}}) {
        auto perms = build_permutations(h, w);
        const int n = h * w;
        for (const auto& p : perms) {
            INFO("perm " << p.id << " (" << p.name << ") on " << h << "x" << w);
            REQUIRE(static_cast<int>(p.order.size()) == n);
            std::vector<bool> seen(static_cast<size_t>(n), false);
            for (int v : p.order) {
                REQUIRE(v >= 0);
                REQUIRE(v < n);
                REQUIRE_FALSE(seen[static_cast<size_t>(v)]);
                seen[static_cast<size_t>(v)] = true;
            }
            for (int m = 0; m < n; ++m) REQUIRE(p.inverse[static_cast<size_t>(p.order[m])] == m);
            for (int q = 0; q < n; ++q) REQUIRE(p.order[static_cast<size_t>(p.inverse[q])] == q);
        }
    }
}

TEST_CASE("raster variants start at the documented corners") {
    auto perms = build_permutations(4, 4);
    REQUIRE(perms[0].order.front() == 0);        // (a) top-left
    REQUIRE(perms[1].order.front() == 0);        // (b) top-left, column-major
    REQUIRE(perms[2].order.front() == 3);        // (c) top-right
    REQUIRE(perms[3].order.front() == 3);        // (d) top-right, row-major
    REQUIRE(perms[4].order.front() == 15);       // (e) bottom-right
    REQUIRE(perms[5].order.front() == 15);       // (f) bottom-right, column-major
    REQUIRE(perms[6].order.front() == 12);       // (g) bottom-left, column-major
    REQUIRE(perms[7].order.front() == 12);       // (h) bottom-left, row-major
    // spiral starts at (ceil(4/2)-1, ceil(4/2)-1) = (1,1) -> index 5
    REQUIRE(perms[8].order.front() == 5);
}

TEST_CASE("spiral visits neighbors first") {
    auto perms = build_permutations(4, 4);
    const auto& sp = perms[8].order;
    // clockwise from (1,1): right to (1,2), down to (2,2), left run to (2,1),(2,0)
    REQUIRE(sp[0] == 5);
    REQUIRE(sp[1] == 6);
    REQUIRE(sp[2] == 10);
    REQUIRE(sp[3] == 9);
    REQUIRE(sp[4] == 8);
}

TEST_CASE("tiny grids are rejected") {
    REQUIRE_THROWS_AS(build_permutations(1, 3), std::invalid_argument);
    REQUIRE_THROWS_AS(build_permutations(1, 1), std::invalid_argument);
}
