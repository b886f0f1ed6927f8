#include "mtsph/cell_tree.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace mtsph {

const std::array<Vec3, 13>& canonical_axes() {
    static const std::array<Vec3, 13> axes = [] {
        std::array<Vec3, 13> out;
        int k = 0;
        for (int x = 1; x >= -1; --x)
            for (int y = 1; y >= -1; --y)
                for (int z = 1; z >= -1; --z) {
                    if (x == 0 && y == 0 && z == 0) continue;
                    // keep the half with positive leading component
                    if (x < 0) continue;
                    if (x == 0 && y < 0) continue;
                    if (x == 0 && y == 0 && z < 0) continue;
                    Vec3 v{double(x), double(y), double(z)};
                    out[k++] = (1.0 / v.norm()) * v;
                }
        return out;
    }();
    return axes;
}

namespace {

int sign_code(const Vec3& delta, double eps) {
    auto sgn = [eps](double d) { return d > eps ? 1 : (d < -eps ? -1 : 0); };
    int sx = sgn(delta.x), sy = sgn(delta.y), sz = sgn(delta.z);
    // canonicalize to positive leading component
    if (sx < 0 || (sx == 0 && (sy < 0 || (sy == 0 && sz < 0)))) {
        sx = -sx;
        sy = -sy;
        sz = -sz;
    }
    return (sx + 1) * 9 + (sy + 1) * 3 + (sz + 1);
}

const std::map<int, int>& axis_lookup() {
    static const std::map<int, int> table = [] {
        std::map<int, int> t;
        for (int i = 0; i < 13; ++i) {
            const Vec3& a = canonical_axes()[i];
            auto sgn = [](double d) { return d > 0.5e-9 ? 1 : (d < -0.5e-9 ? -1 : 0); };
            t[(sgn(a.x) + 1) * 9 + (sgn(a.y) + 1) * 3 + (sgn(a.z) + 1)] = i;
        }
        return t;
    }();
    return table;
}

}  // namespace

int canonical_axis_id(const Vec3& delta) {
    double scale = std::abs(delta.x) + std::abs(delta.y) + std::abs(delta.z);
    if (scale == 0.0) throw std::logic_error("canonical_axis_id: zero separation between cells");
    int code = sign_code(delta, 1e-9 * scale);
    auto it = axis_lookup().find(code);
    if (it == axis_lookup().end())
        throw std::logic_error("canonical_axis_id: degenerate axis");
    return it->second;
}

int CellTree::top_cell_of_position(const Vec3& pos) const {
    Vec3 edge = top_edge();
    int ix = std::min(int(pos.x / edge.x), top_dims[0] - 1);
    int iy = std::min(int(pos.y / edge.y), top_dims[1] - 1);
    int iz = std::min(int(pos.z / edge.z), top_dims[2] - 1);
    return top_index_of(ix, iy, iz);
}

void CellTree::build(ParticleArray& parts) {
    for (const Particle& p : parts) {
        if (!box.contains(p.pos))
            throw std::invalid_argument("CellTree::build: particle outside the periodic box");
    }

    cells.clear();
    const int ntop = n_top();
    cells.reserve(ntop + parts.size() / std::max(split_threshold / 4, 1));

    // Stable counting sort into top-level buckets.
    std::vector<std::uint32_t> bucket(parts.size());
    std::vector<std::uint32_t> counts(ntop, 0);
    for (std::size_t i = 0; i < parts.size(); ++i) {
        bucket[i] = top_cell_of_position(parts[i].pos);
        ++counts[bucket[i]];
    }
    std::vector<std::uint32_t> offsets(ntop + 1, 0);
    for (int c = 0; c < ntop; ++c) offsets[c + 1] = offsets[c] + counts[c];

    ParticleArray scratch(parts.size());
    {
        std::vector<std::uint32_t> cursor(offsets.begin(), offsets.end() - 1);
        for (std::size_t i = 0; i < parts.size(); ++i) scratch[cursor[bucket[i]]++] = parts[i];
    }
    parts.swap(scratch);

    Vec3 edge = top_edge();
    for (int c = 0; c < ntop; ++c) {
        auto [ix, iy, iz] = top_coords(c);
        Cell cell;
        cell.bounds.lo = {ix * edge.x, iy * edge.y, iz * edge.z};
        cell.bounds.hi = {(ix + 1) * edge.x, (iy + 1) * edge.y, (iz + 1) * edge.z};
        cell.depth = 0;
        cell.first = offsets[c];
        cell.count = counts[c];
        cell.top_index = c;
        cells.push_back(cell);
    }

    for (int c = 0; c < ntop; ++c) split_cell(parts, c);
    refresh_aggregates(parts);
}

void CellTree::split_cell(ParticleArray& parts, int index) {
    // note: `cells` may reallocate during recursion; re-index after pushes.
    if (cells[index].count < std::uint32_t(split_threshold) || cells[index].depth >= max_depth)
        return;

    const Vec3 center = cells[index].bounds.center();
    const std::uint32_t first = cells[index].first;
    const std::uint32_t count = cells[index].count;

    auto octant = [&](const Vec3& p) {
        return int(p.x >= center.x) | int(p.y >= center.y) << 1 | int(p.z >= center.z) << 2;
    };

    std::array<std::uint32_t, 8> bin_count{};
    std::vector<std::uint8_t> which(count);
    for (std::uint32_t k = 0; k < count; ++k) {
        which[k] = std::uint8_t(octant(parts[first + k].pos));
        ++bin_count[which[k]];
    }
    std::array<std::uint32_t, 9> start{};
    for (int o = 0; o < 8; ++o) start[o + 1] = start[o] + bin_count[o];

    {
        ParticleArray scratch(count);
        std::array<std::uint32_t, 8> cursor{};
        for (int o = 0; o < 8; ++o) cursor[o] = start[o];
        for (std::uint32_t k = 0; k < count; ++k) scratch[cursor[which[k]]++] = parts[first + k];
        std::copy(scratch.begin(), scratch.end(), parts.begin() + first);
    }

    cells[index].split = true;
    const Aabb bounds = cells[index].bounds;
    const int depth = cells[index].depth;
    const int top = cells[index].top_index;
    for (int o = 0; o < 8; ++o) {
        Cell child;
        child.bounds.lo = {o & 1 ? center.x : bounds.lo.x, o & 2 ? center.y : bounds.lo.y,
                           o & 4 ? center.z : bounds.lo.z};
        child.bounds.hi = {o & 1 ? bounds.hi.x : center.x, o & 2 ? bounds.hi.y : center.y,
                           o & 4 ? bounds.hi.z : center.z};
        child.depth = depth + 1;
        child.first = first + start[o];
        child.count = bin_count[o];
        child.parent = index;
        child.top_index = top;
        int child_index = int(cells.size());
        cells.push_back(child);
        cells[index].children[o] = child_index;
        split_cell(parts, child_index);
    }
}

void CellTree::refresh_aggregates(const ParticleArray& parts) {
    // Children are created after their parents, so a reverse sweep sees
    // every child before its parent.
    for (int c = int(cells.size()) - 1; c >= 0; --c) {
        Cell& cell = cells[c];
        cell.h_max = 0.0;
        cell.min_bin = INT_MAX;
        if (cell.split) {
            for (int ch : cell.children) {
                cell.h_max = std::max(cell.h_max, cells[ch].h_max);
                cell.min_bin = std::min(cell.min_bin, cells[ch].min_bin);
            }
        } else {
            for (std::uint32_t i = cell.first; i < cell.end(); ++i) {
                cell.h_max = std::max(cell.h_max, parts[i].h);
                cell.min_bin = std::min(cell.min_bin, parts[i].bin);
            }
        }
    }
}

int CellTree::leaf_of(std::uint32_t p_index) const {
    // top-level ranges are contiguous and ordered: binary search, then descend
    int lo = 0, hi = n_top() - 1, node = -1;
    while (lo <= hi) {
        int mid = (lo + hi) / 2;
        if (p_index < cells[mid].first) hi = mid - 1;
        else if (p_index >= cells[mid].end()) lo = mid + 1;
        else {
            node = mid;
            break;
        }
    }
    if (node < 0) throw std::out_of_range("leaf_of: index outside all top cells");
    while (cells[node].split) {
        for (int ch : cells[node].children) {
            if (cells[ch].first <= p_index && p_index < cells[ch].end()) {
                node = ch;
                break;
            }
        }
    }
    return node;
}

namespace {

struct Enumerator {
    CellTree& tree;
    int m;
    std::vector<InteractionPair>& out;

    bool has_active(const Cell& c) const { return c.min_bin <= m; }

    bool children_fit(const Cell& c) const {
        for (int ch : c.children) {
            const Cell& child = tree.cells[ch];
            if (child.empty()) continue;
            Vec3 e = child.bounds.extent();
            double edge = std::fmin(e.x, std::fmin(e.y, e.z));
            if (2.0 * child.h_max > edge) return false;
        }
        return true;
    }

    void process_self(int a) {
        const Cell& c = tree.cells[a];
        if (c.empty() || !has_active(c)) return;
        if (c.split && children_fit(c)) {
            for (int i = 0; i < 8; ++i) {
                process_self(c.children[i]);
                for (int j = i + 1; j < 8; ++j)
                    process_pair(c.children[i], c.children[j], Vec3{});
            }
            return;
        }
        out.push_back({a, a, Vec3{}, -1});
    }

    void process_pair(int a, int b, const Vec3& shift) {
        const Cell& ca = tree.cells[a];
        const Cell& cb = tree.cells[b];
        if (ca.empty() || cb.empty()) return;
        if (!has_active(ca) && !has_active(cb)) return;
        double reach = 2.0 * std::max(ca.h_max, cb.h_max);
        if (ca.bounds.dist2(cb.bounds, shift) > reach * reach) return;
        if (ca.split && cb.split && children_fit(ca) && children_fit(cb)) {
            for (int i = 0; i < 8; ++i)
                for (int j = 0; j < 8; ++j)
                    process_pair(ca.children[i], cb.children[j], shift);
            return;
        }
        Vec3 delta = cb.bounds.center() + shift - ca.bounds.center();
        out.push_back({a, b, shift, canonical_axis_id(delta)});
    }
};

}  // namespace

StepActivity enumerate_interactions(CellTree& tree, int m) {
    StepActivity act;
    act.m = m;

    for (Cell& c : tree.cells) {
        c.active = !c.empty() && c.min_bin <= m;
        c.drift_required = false;
    }

    Enumerator en{tree, m, act.pairs};

    const int ntop = tree.n_top();
    for (int a = 0; a < ntop; ++a) en.process_self(a);

    for (int a = 0; a < ntop; ++a) {
        auto [ax, ay, az] = tree.top_coords(a);
        for (int ox = -1; ox <= 1; ++ox)
            for (int oy = -1; oy <= 1; ++oy)
                for (int oz = -1; oz <= 1; ++oz) {
                    if (ox == 0 && oy == 0 && oz == 0) continue;
                    int bx = ax + ox, by = ay + oy, bz = az + oz;
                    int wx = (bx % tree.top_dims[0] + tree.top_dims[0]) % tree.top_dims[0];
                    int wy = (by % tree.top_dims[1] + tree.top_dims[1]) % tree.top_dims[1];
                    int wz = (bz % tree.top_dims[2] + tree.top_dims[2]) % tree.top_dims[2];
                    Vec3 shift{tree.box.dims.x * double((bx - wx) / tree.top_dims[0]),
                               tree.box.dims.y * double((by - wy) / tree.top_dims[1]),
                               tree.box.dims.z * double((bz - wz) / tree.top_dims[2])};
                    int b = tree.top_index_of(wx, wy, wz);
                    // canonical half: avoid emitting both (a,b,s) and (b,a,-s)
                    if (b < a) continue;
                    if (b == a) {
                        bool positive = shift.x > 0 || (shift.x == 0 && (shift.y > 0 ||
                                        (shift.y == 0 && shift.z > 0)));
                        if (!positive) continue;
                    }
                    en.process_pair(a, b, shift);
                }
    }

    for (const InteractionPair& p : act.pairs) {
        tree.cells[p.cell_a].drift_required = true;
        tree.cells[p.cell_b].drift_required = true;
    }
    for (int c = 0; c < int(tree.cells.size()); ++c) {
        if (tree.cells[c].active) act.active_cells.push_back(c);
        if (tree.cells[c].drift_required) act.drift_cells.push_back(c);
    }
    return act;
}

void mark_active_cells(CellTree& tree, int m, std::vector<int>& active_out,
                       std::vector<int>& drift_out) {
    StepActivity act = enumerate_interactions(tree, m);
    active_out = std::move(act.active_cells);
    drift_out = std::move(act.drift_cells);
}

void SortStore::reset(std::size_t n_cells) {
    runtime_.assign(n_cells, CellRuntime{});
}

void SortStore::bump_drift(int cell) { ++runtime_[cell].drift_stamp; }

void SortStore::build(const CellTree& tree, const ParticleArray& parts, int cell, int axis_id) {
    const Cell& c = tree.cells[cell];
    const Vec3 axis = canonical_axes()[axis_id];
    SortCache& cache = runtime_[cell].axes[axis_id];
    cache.entries.clear();
    cache.entries.reserve(c.count);
    for (std::uint32_t i = c.first; i < c.end(); ++i)
        cache.entries.emplace_back(parts[i].pos.dot(axis), i);
    std::sort(cache.entries.begin(), cache.entries.end());
    cache.stamp = runtime_[cell].drift_stamp;
}

bool SortStore::valid(int cell, int axis_id) const {
    const CellRuntime& rt = runtime_[cell];
    return rt.axes[axis_id].stamp == rt.drift_stamp;
}

const SortCache& SortStore::get(int cell, int axis_id) const {
    if (!valid(cell, axis_id))
        throw std::logic_error("SortStore: stale sort cache (scheduling bug)");
    return runtime_[cell].axes[axis_id];
}

void gather_neighbours(const CellTree& tree, const ParticleArray& parts,
                       std::span<const std::pair<int, Vec3>> sources, const Vec3& center,
                       double radius, std::vector<Neighbour>& out) {
    out.clear();
    const double r2max = radius * radius;
    for (const auto& [root, shift] : sources) {
        const Vec3 local_center = center - shift;
        // iterative DFS over the subtree
        int stack[128];
        int top = 0;
        stack[top++] = root;
        while (top > 0) {
            const Cell& c = tree.cells[stack[--top]];
            if (c.empty()) continue;
            if (c.bounds.dist2(local_center) > r2max) continue;
            if (c.split) {
                for (int ch : c.children) stack[top++] = ch;
                continue;
            }
            for (std::uint32_t i = c.first; i < c.end(); ++i) {
                Vec3 dx = center - (parts[i].pos + shift);
                double r2 = dx.norm2();
                if (r2 <= r2max) out.push_back({&parts[i], dx, std::sqrt(r2)});
            }
        }
    }
}

}  // namespace mtsph
