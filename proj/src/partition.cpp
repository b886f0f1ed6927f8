#include "mtsph/partition.hpp"

#include <algorithm>
#include <climits>
#include <cmath>
#include <deque>
#include <fstream>
#include <iostream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace mtsph {

PartitionQuality evaluate_partition(const CellGraph& g, const Partition& p) {
    PartitionQuality q;
    std::vector<double> rank_weight(p.n_ranks, 0.0);
    for (int v = 0; v < g.n; ++v) rank_weight[p.assignment[v]] += g.node_weight[v];
    q.max_rank_weight = *std::max_element(rank_weight.begin(), rank_weight.end());
    double ideal = g.total_node_weight() / p.n_ranks;
    q.imbalance = ideal > 0.0 ? q.max_rank_weight / ideal - 1.0 : 0.0;
    for (const auto& e : g.edges)
        if (p.assignment[e.a] != p.assignment[e.b]) q.edge_cut += e.w;
    return q;
}

Partition partition_grid(std::array<int, 3> top_dims, int R) {
    const int n = top_dims[0] * top_dims[1] * top_dims[2];
    if (R < 1 || R > n) throw std::invalid_argument("partition_grid: rank count exceeds cells");

    Partition p;
    p.n_ranks = R;
    p.assignment.assign(n, 0);
    if (R == 1) return p;

    int axis = 0;
    for (int k = 1; k < 3; ++k)
        if (top_dims[k] > top_dims[axis]) axis = k;
    const int layers = top_dims[axis];

    auto coord = [&](int index) {
        std::array<int, 3> c;
        c[2] = index % top_dims[2];
        c[1] = (index / top_dims[2]) % top_dims[1];
        c[0] = index / (top_dims[1] * top_dims[2]);
        return c;
    };

    if (R <= layers) {
        // contiguous layer slabs, uneven by at most one layer
        for (int i = 0; i < n; ++i) p.assignment[i] = coord(i)[axis] * R / layers;
    } else {
        // more ranks than layers: cut the layer-major index order evenly
        std::vector<int> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            return coord(a)[axis] < coord(b)[axis];
        });
        for (int pos = 0; pos < n; ++pos)
            p.assignment[order[pos]] = int(std::int64_t(pos) * R / n);
    }
    return p;
}

namespace {

struct LevelGraph {
    std::vector<double> node_weight;
    std::vector<std::vector<std::pair<int, double>>> adj;
    std::vector<int> fine_to_coarse;  // of the *finer* level below

    int n() const { return int(node_weight.size()); }
};

LevelGraph from_cell_graph(const CellGraph& g) {
    LevelGraph lg;
    lg.node_weight = g.node_weight;
    lg.adj = g.adjacency();
    return lg;
}

/// Heavy-edge matching; returns the coarse graph with fine_to_coarse set.
LevelGraph coarsen(const LevelGraph& fine) {
    const int n = fine.n();
    std::vector<int> match(n, -1);
    int n_coarse = 0;
    for (int v = 0; v < n; ++v) {
        if (match[v] >= 0) continue;
        int best = -1;
        double best_w = -1.0;
        for (const auto& [u, w] : fine.adj[v]) {
            if (match[u] >= 0 || u == v) continue;
            if (w > best_w || (w == best_w && (best < 0 || u < best))) {
                best = u;
                best_w = w;
            }
        }
        match[v] = n_coarse;
        if (best >= 0) match[best] = n_coarse;
        ++n_coarse;
    }

    LevelGraph coarse;
    coarse.node_weight.assign(n_coarse, 0.0);
    coarse.adj.assign(n_coarse, {});
    coarse.fine_to_coarse = match;
    for (int v = 0; v < n; ++v) coarse.node_weight[match[v]] += fine.node_weight[v];

    std::map<std::pair<int, int>, double> edges;
    for (int v = 0; v < n; ++v)
        for (const auto& [u, w] : fine.adj[v]) {
            int a = match[v], b = match[u];
            if (a == b || v > u) continue;  // skip internal edges, count each once
            edges[{std::min(a, b), std::max(a, b)}] += w;
        }
    for (const auto& [key, w] : edges) {
        coarse.adj[key.first].emplace_back(key.second, w);
        coarse.adj[key.second].emplace_back(key.first, w);
    }
    return coarse;
}

std::vector<int> spread_seeds(const LevelGraph& g, int R, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<int> seeds;
    seeds.push_back(int(rng() % std::uint64_t(g.n())));

    std::vector<int> dist(g.n(), INT_MAX);
    auto bfs_from = [&](int s) {
        std::deque<int> q{s};
        dist[s] = 0;
        while (!q.empty()) {
            int v = q.front();
            q.pop_front();
            for (const auto& [u, w] : g.adj[v]) {
                (void)w;
                if (dist[u] > dist[v] + 1) {
                    dist[u] = dist[v] + 1;
                    q.push_back(u);
                }
            }
        }
    };
    bfs_from(seeds[0]);
    while (int(seeds.size()) < R) {
        int far = -1;
        for (int v = 0; v < g.n(); ++v) {
            bool is_seed = std::find(seeds.begin(), seeds.end(), v) != seeds.end();
            if (is_seed) continue;
            if (far < 0 || dist[v] > dist[far]) far = v;
        }
        seeds.push_back(far);
        bfs_from(far);  // dist becomes min distance to any seed
    }
    return seeds;
}

std::vector<int> grow_regions(const LevelGraph& g, int R, const std::vector<int>& seeds) {
    std::vector<int> assign(g.n(), -1);
    std::vector<double> load(R, 0.0);
    int assigned = 0;
    for (int r = 0; r < R; ++r) {
        assign[seeds[r]] = r;
        load[r] += g.node_weight[seeds[r]];
        ++assigned;
    }
    while (assigned < g.n()) {
        // grow the lightest region by its best-connected boundary node
        int r_pick = 0;
        for (int r = 1; r < R; ++r)
            if (load[r] < load[r_pick]) r_pick = r;

        int best = -1;
        double best_conn = -1.0;
        for (int v = 0; v < g.n(); ++v) {
            if (assign[v] >= 0) continue;
            double conn = 0.0;
            bool touches = false;
            for (const auto& [u, w] : g.adj[v])
                if (assign[u] == r_pick) {
                    conn += w;
                    touches = true;
                }
            if (!touches) continue;
            if (conn > best_conn || (conn == best_conn && (best < 0 || v < best))) {
                best = v;
                best_conn = conn;
            }
        }
        if (best < 0) {
            // nothing adjacent (region saturated or graph disconnected):
            // take the lightest unassigned node
            for (int v = 0; v < g.n(); ++v)
                if (assign[v] < 0 &&
                    (best < 0 || g.node_weight[v] < g.node_weight[best]))
                    best = v;
        }
        assign[best] = r_pick;
        load[r_pick] += g.node_weight[best];
        ++assigned;
    }
    return assign;
}

/// Boundary Kernighan-Lin sweeps: only moves that do not increase the
/// edge-cut are accepted, and only while balance permits.
void refine(const LevelGraph& g, int R, double tol, int max_passes, std::vector<int>& assign) {
    if (R < 2) return;
    std::vector<double> load(R, 0.0);
    std::vector<int> count(R, 0);
    for (int v = 0; v < g.n(); ++v) {
        load[assign[v]] += g.node_weight[v];
        count[assign[v]] += 1;
    }
    const double total = std::accumulate(load.begin(), load.end(), 0.0);
    const double ideal = total / R;
    const double cap = (1.0 + tol) * ideal;

    for (int pass = 0; pass < max_passes; ++pass) {
        bool moved = false;
        for (int v = 0; v < g.n(); ++v) {
            const int a = assign[v];
            if (count[a] <= 1) continue;  // never empty a rank
            std::vector<double> conn(R, 0.0);
            for (const auto& [u, w] : g.adj[v]) conn[assign[u]] += w;

            int best_r = -1;
            double best_gain = 0.0;
            bool best_balance_gain = false;
            for (int r = 0; r < R; ++r) {
                if (r == a) continue;
                double gain = conn[r] - conn[a];
                if (gain < 0.0) continue;
                double wa = load[a] - g.node_weight[v];
                double wr = load[r] + g.node_weight[v];
                bool balance_ok = wr <= cap || wr < load[a];
                bool balance_gain = std::max(wa, wr) < std::max(load[a], load[r]);
                if (gain == 0.0 && !balance_gain) continue;
                if (!balance_ok) continue;
                if (gain > best_gain || (gain == best_gain && !best_balance_gain && balance_gain)) {
                    best_r = r;
                    best_gain = gain;
                    best_balance_gain = balance_gain;
                }
            }
            if (best_r >= 0 && (best_gain > 0.0 || best_balance_gain)) {
                load[a] -= g.node_weight[v];
                load[best_r] += g.node_weight[v];
                count[a] -= 1;
                count[best_r] += 1;
                assign[v] = best_r;
                moved = true;
            }
        }
        if (!moved) break;
    }
}

}  // namespace

Partition partition_graph(const CellGraph& g, int R, const GraphPartitionOptions& opts) {
    if (R < 1 || R > g.n)
        throw std::invalid_argument("partition_graph: rank count exceeds node count");

    Partition p;
    p.n_ranks = R;
    p.assignment.assign(g.n, 0);
    if (R == 1) return p;

    CellGraph work = g;
    if (work.total_node_weight() <= 0.0) {
        std::cerr << "partition_graph: zero total weight, substituting uniform weights\n";
        work.node_weight.assign(work.n, 1.0);
    }

    // coarsening ladder
    std::vector<LevelGraph> levels;
    levels.push_back(from_cell_graph(work));
    while (levels.back().n() > 8 * R) {
        LevelGraph coarse = coarsen(levels.back());
        if (coarse.n() >= levels.back().n()) break;  // no progress (no edges left)
        levels.push_back(std::move(coarse));
    }

    // initial partition on the coarsest level
    const LevelGraph& coarsest = levels.back();
    std::vector<int> assign = grow_regions(coarsest, R, spread_seeds(coarsest, R, opts.seed));
    refine(coarsest, R, opts.balance_tol, opts.kl_passes, assign);

    // uncoarsen with refinement at each level
    for (int level = int(levels.size()) - 1; level > 0; --level) {
        const std::vector<int>& map = levels[level].fine_to_coarse;
        std::vector<int> finer(levels[level - 1].n());
        for (int v = 0; v < int(finer.size()); ++v) finer[v] = assign[map[v]];
        assign = std::move(finer);
        refine(levels[level - 1], R, opts.balance_tol, opts.kl_passes, assign);
    }

    p.assignment = std::move(assign);
    return p;
}

void write_cell_graph(const CellGraph& g, std::ostream& os) {
    for (int v = 0; v < g.n; ++v) os << "node " << v << " " << g.node_weight[v] << "\n";
    for (const auto& e : g.edges) os << "edge " << e.a << " " << e.b << " " << e.w << "\n";
}

Partition read_assignment(std::istream& is, int n_cells, int n_ranks) {
    Partition p;
    p.n_ranks = n_ranks;
    p.assignment.assign(n_cells, -1);
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        int cell, rank;
        if (!(ss >> cell >> rank) || cell < 0 || cell >= n_cells || rank < 0 || rank >= n_ranks)
            throw std::runtime_error("read_assignment: malformed record at line " +
                                     std::to_string(line_no));
        p.assignment[cell] = rank;
    }
    for (int v = 0; v < n_cells; ++v)
        if (p.assignment[v] < 0)
            throw std::runtime_error("read_assignment: cell " + std::to_string(v) +
                                     " has no rank");
    return p;
}

Partition FileExchangePartitioner::partition(const CellGraph& g, int R) {
    {
        std::ofstream out(graph_path_);
        if (!out) throw std::runtime_error("FileExchangePartitioner: cannot write " + graph_path_);
        write_cell_graph(g, out);
    }
    std::ifstream in(assignment_path_);
    if (!in)
        throw std::runtime_error("FileExchangePartitioner: cannot read " + assignment_path_);
    return read_assignment(in, g.n, R);
}

}  // namespace mtsph
