#include <doctest.h>

#include <map>
#include <random>
#include <set>

#include "mtsph/cell_tree.hpp"
#include "support/oracles.hpp"

using namespace mtsph;

namespace {

/// Collect every in-range (i<j, image) pair covered by the emitted
/// interaction list via sorted traversal, counting duplicates.
std::vector<oracle::PairKey> covered_pairs(CellTree& tree, const ParticleArray& parts,
                                           const StepActivity& act) {
    SortStore sorts;
    sorts.reset(tree.cells.size());
    for (const InteractionPair& p : act.pairs) {
        if (p.self()) continue;
        sorts.build(tree, parts, p.cell_a, p.axis_id);
        sorts.build(tree, parts, p.cell_b, p.axis_id);
    }

    std::vector<oracle::PairKey> keys;
    const Box& box = tree.box;
    auto image_of = [&](const Vec3& shift) {
        auto classify = [](double s, double L) { return s > 0.5 * L ? 1 : (s < -0.5 * L ? -1 : 0); };
        return std::array<int, 3>{classify(shift.x, box.dims.x), classify(shift.y, box.dims.y),
                                  classify(shift.z, box.dims.z)};
    };

    for (const InteractionPair& p : act.pairs) {
        double reach = 2.0 * std::max(tree.cells[p.cell_a].h_max, tree.cells[p.cell_b].h_max);
        auto img = image_of(p.shift);
        auto visit = [&](std::uint32_t i, std::uint32_t j, const Vec3& dx) {
            double r2 = dx.norm2();
            double cut = 2.0 * std::max(parts[i].h, parts[j].h);
            if (r2 < cut * cut)
                keys.push_back(oracle::make_key(i, j, img[0], img[1], img[2]));
        };
        pair_traverse_sorted(tree, parts, sorts, p, reach, visit);
    }
    std::sort(keys.begin(), keys.end());
    return keys;
}

}  // namespace

TEST_CASE("build: below threshold stays a single leaf") {
    Box box{{1.0, 1.0, 1.0}};
    std::mt19937_64 rng(7);
    auto parts = oracle::random_cloud(rng, box, 300, 0.05, 1.0, 1.0);
    CellTree tree(box, {1, 1, 1});
    tree.build(parts);
    CHECK(tree.cells.size() == 1);
    CHECK_FALSE(tree.cells[0].split);
    CHECK(tree.cells[0].count == 300);
}

TEST_CASE("build: 1000 uniform particles split exactly once into 8 children") {
    Box box{{1.0, 1.0, 1.0}};
    std::mt19937_64 rng(21);
    auto parts = oracle::random_cloud(rng, box, 1000, 0.05, 1.0, 1.0);
    CellTree tree(box, {1, 1, 1});
    tree.build(parts);
    REQUIRE(tree.cells.size() == 9);
    CHECK(tree.cells[0].split);
    std::uint32_t sum = 0;
    for (int ch : tree.cells[0].children) {
        const Cell& c = tree.cells[ch];
        CHECK_FALSE(c.split);
        CHECK(c.count < 400);
        sum += c.count;
        // children own their particles
        for (std::uint32_t i = c.first; i < c.end(); ++i) {
            CHECK(parts[i].pos.x >= c.bounds.lo.x);
            CHECK(parts[i].pos.x <= c.bounds.hi.x);
        }
    }
    CHECK(sum == 1000);
}

TEST_CASE("build: empty top cell is an empty leaf") {
    Box box{{2.0, 1.0, 1.0}};
    ParticleArray parts(10);
    for (int i = 0; i < 10; ++i) {
        parts[i].id = i;
        parts[i].pos = {0.1 + 0.05 * i, 0.5, 0.5};  // all in the first top cell
        parts[i].h = 0.1;
        parts[i].m = 1.0;
    }
    CellTree tree(box, {2, 1, 1});
    tree.build(parts);
    CHECK(tree.cells[1].empty());
    CHECK(tree.cells[1].h_max == 0.0);
    CHECK_FALSE(tree.cells[1].split);
}

TEST_CASE("build rejects particles outside the box") {
    Box box{{1.0, 1.0, 1.0}};
    ParticleArray parts(1);
    parts[0].pos = {1.5, 0.2, 0.2};
    CellTree tree(box, {1, 1, 1});
    CHECK_THROWS_AS(tree.build(parts), std::invalid_argument);
}

TEST_CASE("aggregates are monotone along every parent/child edge") {
    Box box{{1.0, 1.0, 1.0}};
    std::mt19937_64 rng(5);
    auto parts = oracle::random_cloud(rng, box, 3000, 0.03, 1.0, 1.0);
    std::uniform_real_distribution<double> uh(0.01, 0.12);
    for (auto& p : parts) p.h = uh(rng);
    for (auto& p : parts) p.bin = int(rng() % 7);
    CellTree tree(box, {2, 2, 2});
    tree.build(parts);
    for (const Cell& c : tree.cells) {
        if (!c.split) continue;
        for (int ch : c.children) {
            CHECK(c.h_max >= tree.cells[ch].h_max);
            CHECK(c.min_bin <= tree.cells[ch].min_bin);
        }
    }
}

TEST_CASE("interaction coverage equals the brute-force pair set") {
    std::mt19937_64 rng(42);
    struct Config {
        Box box;
        std::array<int, 3> dims;
        int n;
        double h;
    };
    // includes thin-axis boxes that require multiple periodic images
    std::vector<Config> configs = {
        {Box{{1.0, 1.0, 1.0}}, {4, 4, 4}, 2000, 0.05},
        {Box{{2.0, 1.0, 0.5}}, {6, 3, 2}, 1500, 0.06},
        {Box{{1.0, 0.25, 0.25}}, {4, 1, 1}, 600, 0.1},
        {Box{{1.0, 1.0, 1.0}}, {2, 2, 2}, 900, 0.2},
    };
    for (const auto& cfg : configs) {
        auto parts = oracle::random_cloud(rng, cfg.box, cfg.n, cfg.h, 1.0, 1.0);
        // mixed smoothing lengths, capped by the reachability ceiling
        CellTree tree(cfg.box, cfg.dims);
        double hcap = tree.h_ceiling();
        std::uniform_real_distribution<double> uh(0.5 * cfg.h, 1.5 * cfg.h);
        for (auto& p : parts) p.h = std::min(uh(rng), hcap);
        tree.build(parts);

        auto act = enumerate_interactions(tree, 0);  // all bins start at 0: all active
        auto covered = covered_pairs(tree, parts, act);
        auto expected = oracle::neighbour_pairs(parts, cfg.box);

        REQUIRE(covered.size() == expected.size());  // no duplicates, no misses
        CHECK(covered == expected);
    }
}

TEST_CASE("far-apart subcells of touching top cells are pruned") {
    // Two adjacent top cells; particles hug the *far* corners so the near-edge
    // subcells are empty and the occupied ones sit farther apart than 2 h_max.
    Box box{{2.0, 1.0, 1.0}};
    ParticleArray parts;
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u01(0.0, 0.15);
    for (int i = 0; i < 900; ++i) {
        Particle p;
        p.id = i;
        p.pos = {0.3 + u01(rng), u01(rng) + 0.3, u01(rng) + 0.3};
        p.h = 0.04;
        p.m = 1.0;
        parts.push_back(p);
    }
    for (int i = 0; i < 900; ++i) {
        Particle p;
        p.id = 900 + i;
        p.pos = {1.55 + u01(rng), u01(rng) + 0.3, u01(rng) + 0.3};
        p.h = 0.04;
        p.m = 1.0;
        parts.push_back(p);
    }
    CellTree tree(box, {2, 1, 1});
    tree.build(parts);
    auto act = enumerate_interactions(tree, 0);
    // no emitted pair may span the two top-level cells through the near faces
    for (const InteractionPair& p : act.pairs) {
        if (p.self()) continue;
        const Cell& a = tree.cells[p.cell_a];
        const Cell& b = tree.cells[p.cell_b];
        double reach = 2.0 * std::max(a.h_max, b.h_max);
        CHECK(a.bounds.dist2(b.bounds, p.shift) <= reach * reach);
        CHECK(a.top_index == b.top_index);  // the clusters cannot reach each other
    }
}

TEST_CASE("activity marking: everything, nothing, and a single corner cell") {
    Box box{{1.0, 1.0, 1.0}};
    std::mt19937_64 rng(11);
    auto parts = oracle::random_cloud(rng, box, 4000, 0.04, 1.0, 1.0);
    CellTree tree(box, {4, 4, 4});
    for (auto& p : parts) p.bin = 5;
    tree.build(parts);

    SUBCASE("m >= all bins: every nonempty cell drift-required") {
        auto act = enumerate_interactions(tree, 7);
        std::set<int> drift(act.drift_cells.begin(), act.drift_cells.end());
        for (int c = 0; c < int(tree.cells.size()); ++c) {
            if (!tree.cells[c].split && !tree.cells[c].empty()) {
                // its range must be covered by some drift-required cell
                bool covered = false;
                for (int d : drift)
                    if (tree.cells[d].contains_range(tree.cells[c])) covered = true;
                CHECK(covered);
            }
        }
    }
    SUBCASE("no active bins: empty sets") {
        auto act = enumerate_interactions(tree, 2);
        CHECK(act.pairs.empty());
        CHECK(act.active_cells.empty());
        CHECK(act.drift_cells.empty());
    }
    SUBCASE("single active corner leaf: drift set matches reachability oracle") {
        // activate exactly the particles of one corner leaf
        int leaf = tree.leaf_of(0);
        const Cell& lc = tree.cells[leaf];
        for (std::uint32_t i = lc.first; i < lc.end(); ++i) parts[i].bin = 0;
        tree.refresh_aggregates(parts);
        auto act = enumerate_interactions(tree, 0);

        // oracle: a particle is reach-covered iff within 2 max(h) of an
        // active particle (any image)
        std::set<std::uint32_t> active_idx;
        for (std::uint32_t i = lc.first; i < lc.end(); ++i) active_idx.insert(i);
        std::set<std::uint32_t> drifted;
        for (int d : act.drift_cells) {
            const Cell& c = tree.cells[d];
            for (std::uint32_t i = c.first; i < c.end(); ++i) drifted.insert(i);
        }
        auto all_pairs = oracle::neighbour_pairs(parts, box);
        for (const auto& k : all_pairs) {
            bool ia = active_idx.count(k.i), ja = active_idx.count(k.j);
            if (ia || ja) {
                CHECK(drifted.count(k.i));
                CHECK(drifted.count(k.j));
            }
        }
        // every drift-required cell is within cell-scale reach of an active cell
        for (int d : act.drift_cells) {
            const Cell& dc = tree.cells[d];
            bool near = false;
            for (int sx = -1; sx <= 1 && !near; ++sx)
                for (int sy = -1; sy <= 1 && !near; ++sy)
                    for (int sz = -1; sz <= 1 && !near; ++sz) {
                        Vec3 shift{sx * box.dims.x, sy * box.dims.y, sz * box.dims.z};
                        double reach = 2.0 * std::max(dc.h_max, lc.h_max);
                        if (dc.bounds.dist2(lc.bounds, shift) <= reach * reach) near = true;
                    }
            CHECK(near);
        }
    }
}

TEST_CASE("sorted traversal edge cases") {
    Box box{{4.0, 1.0, 1.0}};
    ParticleArray parts;
    for (int i = 0; i < 20; ++i) {
        Particle p;
        p.id = i;
        p.pos = {0.05 + 0.02 * i, 0.5, 0.5};
        p.h = 0.02;
        p.m = 1.0;
        parts.push_back(p);
    }
    for (int i = 0; i < 20; ++i) {
        Particle p;
        p.id = 20 + i;
        p.pos = {3.0 + 0.02 * i, 0.5, 0.5};  // far side of the adjacent top cell
        p.h = 0.02;
        p.m = 1.0;
        parts.push_back(p);
    }
    CellTree tree(box, {2, 1, 1}, 400, 0);  // no refinement: top cells only
    tree.build(parts);
    SortStore sorts;
    sorts.reset(tree.cells.size());

    InteractionPair pair{0, 1, Vec3{}, canonical_axis_id(Vec3{1, 0, 0})};
    sorts.build(tree, parts, 0, pair.axis_id);
    sorts.build(tree, parts, 1, pair.axis_id);

    SUBCASE("all particles beyond the window: zero visits") {
        double reach = 2.0 * 0.02;
        std::uint64_t count =
            pair_traverse_sorted(tree, parts, sorts, pair, reach,
                                 [](std::uint32_t, std::uint32_t, const Vec3&) {});
        CHECK(count == 0);
    }
    SUBCASE("visited set is a superset of true neighbours") {
        std::mt19937_64 rng(9);
        auto cloud = oracle::random_cloud(rng, box, 800, 0.08, 1.0, 1.0);
        CellTree t2(box, {2, 1, 1}, 400, 0);
        t2.build(cloud);
        SortStore s2;
        s2.reset(t2.cells.size());
        InteractionPair p2{0, 1, Vec3{}, canonical_axis_id(Vec3{1, 0, 0})};
        s2.build(t2, cloud, 0, p2.axis_id);
        s2.build(t2, cloud, 1, p2.axis_id);
        std::set<std::pair<std::uint32_t, std::uint32_t>> visited;
        double reach = 2.0 * std::max(t2.cells[0].h_max, t2.cells[1].h_max);
        pair_traverse_sorted(t2, cloud, s2, p2, reach,
                             [&](std::uint32_t i, std::uint32_t j, const Vec3&) {
                                 visited.insert({std::min(i, j), std::max(i, j)});
                             });
        // brute-force truth restricted to the two cells, no images
        const Cell& a = t2.cells[0];
        const Cell& b = t2.cells[1];
        std::uint64_t full_cross = std::uint64_t(a.count) * b.count;
        CHECK(visited.size() <= full_cross);
        for (std::uint32_t i = a.first; i < a.end(); ++i)
            for (std::uint32_t j = b.first; j < b.end(); ++j) {
                double cut = 2.0 * std::max(cloud[i].h, cloud[j].h);
                if ((cloud[i].pos - cloud[j].pos).norm2() < cut * cut)
                    CHECK(visited.count({std::min(i, j), std::max(i, j)}));
            }
    }
    SUBCASE("stale cache is a fatal logic error") {
        sorts.bump_drift(0);
        CHECK_THROWS_AS(pair_traverse_sorted(tree, parts, sorts, pair, 1.0,
                                             [](std::uint32_t, std::uint32_t, const Vec3&) {}),
                        std::logic_error);
    }
}

TEST_CASE("enumeration is deterministic for identical input") {
    Box box{{1.0, 1.0, 1.0}};
    std::mt19937_64 rng(31);
    auto parts = oracle::random_cloud(rng, box, 2500, 0.05, 1.0, 1.0);
    auto parts2 = parts;
    CellTree t1(box, {3, 3, 3}), t2(box, {3, 3, 3});
    t1.build(parts);
    t2.build(parts2);
    REQUIRE(t1.cells.size() == t2.cells.size());
    for (std::size_t i = 0; i < parts.size(); ++i) CHECK(parts[i].id == parts2[i].id);
    auto a1 = enumerate_interactions(t1, 0);
    auto a2 = enumerate_interactions(t2, 0);
    REQUIRE(a1.pairs.size() == a2.pairs.size());
    for (std::size_t i = 0; i < a1.pairs.size(); ++i) {
        CHECK(a1.pairs[i].cell_a == a2.pairs[i].cell_a);
        CHECK(a1.pairs[i].cell_b == a2.pairs[i].cell_b);
    }
}
