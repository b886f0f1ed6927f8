#pragma once

#include <array>
#include <climits>
#include <cstdint>
#include <span>
#include <vector>

#include "mtsph/geometry.hpp"
#include "mtsph/particle.hpp"
#include "mtsph/sph_ops.hpp"

namespace mtsph {

/// Node of the cell tree. Top-level cells form a fixed periodic grid and
/// are refined into octants while they hold split_threshold particles or
/// more. Each cell owns a contiguous range of the particle store.
struct Cell {
    Aabb bounds;
    int depth = 0;
    std::uint32_t first = 0;
    std::uint32_t count = 0;
    int parent = -1;
    int top_index = -1;
    std::array<int, 8> children{-1, -1, -1, -1, -1, -1, -1, -1};
    bool split = false;

    double h_max = 0.0;
    int min_bin = INT_MAX;
    bool active = false;
    bool drift_required = false;

    std::uint32_t end() const { return first + count; }
    bool empty() const { return count == 0; }
    bool contains_range(const Cell& o) const { return first <= o.first && o.end() <= end(); }
};

/// A cell pair (or self when cell_a == cell_b and shift == 0) due an
/// interaction sweep. `shift` is the periodic image offset added to
/// cell_b's contents; `axis_id` indexes the canonical sort axis.
struct InteractionPair {
    int cell_a = -1;
    int cell_b = -1;
    Vec3 shift;
    int axis_id = -1;

    bool self() const { return cell_a == cell_b && shift == Vec3{}; }
    /// Same-cell image pairs iterate ordered (i, j) pairs and must scatter
    /// one-sided; see pair_traverse_sorted.
    bool ordered() const { return cell_a == cell_b && !(shift == Vec3{}); }
};

/// The 13 canonical pair axes (sign vectors with positive leading
/// component, normalized).
const std::array<Vec3, 13>& canonical_axes();
int canonical_axis_id(const Vec3& delta);

class CellTree {
  public:
    Box box;
    std::array<int, 3> top_dims{1, 1, 1};
    int split_threshold = 400;
    int max_depth = 10;
    std::vector<Cell> cells;

    CellTree() = default;
    CellTree(const Box& b, std::array<int, 3> dims, int threshold = 400, int depth_cap = 10)
        : box(b), top_dims(dims), split_threshold(threshold), max_depth(depth_cap) {}

    int n_top() const { return top_dims[0] * top_dims[1] * top_dims[2]; }
    int top_index_of(int ix, int iy, int iz) const {
        return (ix * top_dims[1] + iy) * top_dims[2] + iz;
    }
    std::array<int, 3> top_coords(int index) const {
        int z = index % top_dims[2];
        int y = (index / top_dims[2]) % top_dims[1];
        int x = index / (top_dims[1] * top_dims[2]);
        return {x, y, z};
    }
    Vec3 top_edge() const {
        return {box.dims.x / top_dims[0], box.dims.y / top_dims[1], box.dims.z / top_dims[2]};
    }
    /// Largest smoothing length compatible with 26-neighbour reachability.
    double h_ceiling() const {
        Vec3 e = top_edge();
        return 0.5 * std::fmin(e.x, std::fmin(e.y, e.z));
    }

    /// Bucket and reorder `parts` so every cell owns a contiguous range,
    /// then refine and aggregate. Throws if a position is outside the box.
    void build(ParticleArray& parts);

    /// Recompute h_max and min_bin bottom-up from current particle state.
    void refresh_aggregates(const ParticleArray& parts);

    /// Leaf index containing particle slot `p_index`.
    int leaf_of(std::uint32_t p_index) const;
    int top_cell_of_position(const Vec3& pos) const;

    bool built() const { return !cells.empty(); }

  private:
    void split_cell(ParticleArray& parts, int index);
};

/// Per-step activity view: flags mirror Cell::active / drift_required and
/// `pairs` is the interaction list whose cells are exactly the
/// drift-required set.
struct StepActivity {
    int m = 0;
    std::vector<InteractionPair> pairs;
    std::vector<int> active_cells;
    std::vector<int> drift_cells;  // every cell appearing in `pairs`
};

/// Walk the tree and mark cells with active content (min_bin <= m) plus
/// everything within interaction reach, enumerating the pair/self list at
/// the largest common scale. Use m = grid.n_bin to treat all bins active.
StepActivity enumerate_interactions(CellTree& tree, int m);

/// Activity marking alone (flags + cell sets, discarding the pair list).
void mark_active_cells(CellTree& tree, int m, std::vector<int>& active_out,
                       std::vector<int>& drift_out);

/// Per-cell sorted-projection caches, one store per particle array (ranks
/// keep their own; caches index the shared tree geometry).
struct SortCache {
    std::vector<std::pair<double, std::uint32_t>> entries;  // (projection, particle index)
    std::uint64_t stamp = 0;                                // 0 = never built
};

class SortStore {
  public:
    void reset(std::size_t n_cells);
    /// Record that a cell's particles moved (invalidates its caches).
    void bump_drift(int cell);
    std::uint64_t drift_stamp(int cell) const { return runtime_[cell].drift_stamp; }
    /// Build the projection cache of `cell` along canonical axis `axis_id`.
    void build(const CellTree& tree, const ParticleArray& parts, int cell, int axis_id);
    bool valid(int cell, int axis_id) const;
    /// Fetch a cache; throws std::logic_error if stale (scheduling bug).
    const SortCache& get(int cell, int axis_id) const;

  private:
    struct CellRuntime {
        std::uint64_t drift_stamp = 1;
        std::array<SortCache, 13> axes;
    };
    std::vector<CellRuntime> runtime_;
};

/// Sweep a cell pair by ascending projection on the pair axis, visiting
/// candidates whose axis distance is at most d_range. The visitor gets
/// (i, j, dx) with dx = pos_i - pos_j - shift; it must apply the kernel
/// range cut itself. Self pairs visit unordered (i < j) slots; same-cell
/// image pairs visit ordered pairs. Returns the number of visits.
template <typename Visitor>
std::uint64_t pair_traverse_sorted(const CellTree& tree, const ParticleArray& parts,
                                   const SortStore& sorts, const InteractionPair& pair,
                                   double d_range, Visitor&& visit);

/// All particles within `radius` of `center`, gathered from the given
/// (cell, shift) sources; the target itself appears at r = 0 when its slot
/// lies in a source cell. Deterministic order: sources, then slot order.
void gather_neighbours(const CellTree& tree, const ParticleArray& parts,
                       std::span<const std::pair<int, Vec3>> sources, const Vec3& center,
                       double radius, std::vector<Neighbour>& out);

// --- implementation ---

template <typename Visitor>
std::uint64_t pair_traverse_sorted(const CellTree& tree, const ParticleArray& parts,
                                   const SortStore& sorts, const InteractionPair& pair,
                                   double d_range, Visitor&& visit) {
    std::uint64_t visits = 0;
    if (pair.self()) {
        const Cell& c = tree.cells[pair.cell_a];
        for (std::uint32_t i = c.first; i < c.end(); ++i) {
            for (std::uint32_t j = i + 1; j < c.end(); ++j) {
                ++visits;
                visit(i, j, parts[i].pos - parts[j].pos);
            }
        }
        return visits;
    }

    const SortCache& ca = sorts.get(pair.cell_a, pair.axis_id);
    const SortCache& cb = sorts.get(pair.cell_b, pair.axis_id);
    const Vec3 axis = canonical_axes()[pair.axis_id];
    const double shift_proj = pair.shift.dot(axis);
    const bool ordered = pair.ordered();

    std::size_t lo = 0;
    for (const auto& [proj_a, ia] : ca.entries) {
        const double lo_bound = proj_a - d_range;
        const double hi_bound = proj_a + d_range;
        while (lo < cb.entries.size() && cb.entries[lo].first + shift_proj < lo_bound) ++lo;
        for (std::size_t k = lo; k < cb.entries.size(); ++k) {
            const auto& [proj_b, jb] = cb.entries[k];
            if (proj_b + shift_proj > hi_bound) break;
            if (ordered && ia == jb) continue;  // particle vs its own image
            ++visits;
            visit(ia, jb, parts[ia].pos - parts[jb].pos - pair.shift);
        }
    }
    return visits;
}

}  // namespace mtsph
