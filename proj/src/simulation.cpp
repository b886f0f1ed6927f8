#include "mtsph/simulation.hpp"

#include <algorithm>
#include <atomic>
#include <cassert>
#include <chrono>
#include <cmath>
#include <iostream>
#include <map>
#include <numbers>
#include <numeric>
#include <ostream>
#include <set>
#include <span>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mtsph/eos.hpp"
#include "mtsph/sph_ops.hpp"

namespace mtsph {

Scheme parse_scheme(std::string_view name) {
    if (name == "global") return Scheme::global;
    if (name == "drift-all" || name == "drift_all") return Scheme::drift_all;
    if (name == "drift-active" || name == "drift_active") return Scheme::drift_active;
    throw std::invalid_argument("unknown scheme: " + std::string(name));
}

std::string_view scheme_name(Scheme s) {
    switch (s) {
        case Scheme::global: return "global";
        case Scheme::drift_all: return "drift-all";
        case Scheme::drift_active: return "drift-active";
    }
    return "?";
}

void write_metrics_jsonl(std::ostream& os, const StepMetrics& m) {
    nlohmann::json ranks = nlohmann::json::array();
    for (const RankMetrics& r : m.per_rank) {
        ranks.push_back({{"busy_ns", r.busy_ns},
                         {"idle_ns", r.idle_ns},
                         {"messages", r.messages},
                         {"bytes", r.bytes}});
    }
    nlohmann::json j{{"step", m.step_index},
                     {"tick", m.tick},
                     {"m", m.m},
                     {"n_active", m.n_active},
                     {"n_kicked", m.n_kicked},
                     {"n_drifted", m.n_drifted},
                     {"n_pair_interactions", m.n_pair_interactions},
                     {"wall_ns", m.wall_ns},
                     {"rebuild", m.rebuild},
                     {"h_capped", m.h_capped},
                     {"u_floored", m.u_floored},
                     {"zero_sep", m.zero_sep},
                     {"per_rank", ranks}};
    if (m.energy_valid) j["total_energy"] = m.total_energy;
    os << j.dump() << '\n';
}

namespace {

/// Reduce a cell set to its maximal members (ranges are nested or
/// disjoint, so sorting by start and sweeping suffices).
std::vector<int> maximal_cells(const CellTree& tree, std::vector<int> cells) {
    std::sort(cells.begin(), cells.end(), [&](int a, int b) {
        const Cell& ca = tree.cells[a];
        const Cell& cb = tree.cells[b];
        if (ca.first != cb.first) return ca.first < cb.first;
        return ca.count > cb.count;
    });
    std::vector<int> out;
    std::uint32_t covered_end = 0;
    bool any = false;
    for (int c : cells) {
        const Cell& cell = tree.cells[c];
        if (any && cell.first < covered_end) continue;  // nested in the previous keeper
        out.push_back(c);
        covered_end = cell.end();
        any = true;
    }
    return out;
}

/// All cells whose particle ranges intersect `cell`'s range: the subtree
/// plus the ancestor chain (for sort-cache invalidation).
std::vector<int> overlapping_cells(const CellTree& tree, int cell) {
    std::vector<int> out;
    std::vector<int> stack{cell};
    while (!stack.empty()) {
        int c = stack.back();
        stack.pop_back();
        out.push_back(c);
        if (tree.cells[c].split)
            for (int ch : tree.cells[c].children) stack.push_back(ch);
    }
    for (int p = tree.cells[cell].parent; p >= 0; p = tree.cells[p].parent) out.push_back(p);
    return out;
}

struct CoverMap {
    const CellTree* tree;
    std::vector<char> in_cover;
    std::vector<int> task_of;  // task (or message) index per cover cell

    void init(const CellTree& t) {
        tree = &t;
        in_cover.assign(t.cells.size(), 0);
        task_of.assign(t.cells.size(), -1);
    }
    void add(int cell, int task) {
        in_cover[cell] = 1;
        task_of[cell] = task;
    }
    /// Task covering `cell`, or -1 when no cover member contains it.
    int covering(int cell) const {
        for (int c = cell; c >= 0; c = tree->cells[c].parent)
            if (in_cover[c]) return task_of[c];
        return -1;
    }
};

constexpr double kEnergyNone = std::numeric_limits<double>::quiet_NaN();

}  // namespace

struct Simulation::StepAccum {
    std::atomic<std::uint64_t> kicked{0}, drifted{0}, pair_interactions{0};
    std::atomic<std::uint64_t> h_capped{0}, u_floored{0}, zero_sep{0};
    std::atomic<bool> leaf_escape{false};
    std::vector<double> energy_by_top;
    std::vector<int> natural_bin;
};

Simulation::Simulation(ParticleArray parts, Box box, SimOptions opts)
    : box_(box), opts_(opts), grid_(opts.t_begin, opts.t_end, opts.n_bin) {
    if (opts_.n_ranks < 1) throw std::invalid_argument("Simulation: n_ranks must be >= 1");
    if (opts_.n_workers < 1) throw std::invalid_argument("Simulation: n_workers must be >= 1");
    if (opts_.scheme == Scheme::global) opts_.force_single_bin = true;
    global_ = std::move(parts);
    for (Particle& p : global_) {
        p.pos = box_.wrap(p.pos);
        p.pos_at_kick = p.pos;
        p.bin = 0;
        p.tick_last_drift = 0;
        p.tick_last_kick = 0;
        if (!(p.m > 0.0) || !(p.h > 0.0) || p.u < 0.0)
            throw std::invalid_argument("Simulation: invalid particle state (m, h, u)");
    }
    tree_ = CellTree(box_, opts_.top_dims, opts_.split_threshold, opts_.max_tree_depth);
    opts_.sph.h_max = std::min(opts_.sph.h_max, tree_.h_ceiling());
}

int Simulation::min_occupied_bin() const {
    int mn = grid_.n_bin;
    for (const Particle& p : global_) mn = std::min(mn, p.bin);
    return mn;
}

double Simulation::total_energy() const {
    double e = 0.0;
    for (const Particle& p : global_) e += p.m * (p.u + 0.5 * p.vel.norm2());
    return e;
}

std::vector<std::uint64_t> Simulation::bin_histogram() const {
    std::vector<std::uint64_t> h(grid_.n_bin + 1, 0);
    for (const Particle& p : global_) ++h[p.bin];
    return h;
}

void Simulation::rebuild_tree(Tick now) {
    // drift everything to the current tick first so the spatial sort sees
    // current positions; these drifts are real work, counted by the caller
    for (Particle& p : global_) {
        if (p.tick_last_drift < now) {
            drift_particle(p, now, grid_, box_);
            ++rebuild_extra_drifts_;
        }
    }
    tree_.build(global_);
    tree_.refresh_aggregates(global_);
    slot_leaf_.assign(global_.size(), -1);
    for (int c = 0; c < int(tree_.cells.size()); ++c) {
        const Cell& cell = tree_.cells[c];
        if (cell.split) continue;
        for (std::uint32_t i = cell.first; i < cell.end(); ++i) slot_leaf_[i] = c;
    }
}

void Simulation::distribute_ranks(Tick now) {
    ranks_ = distribute(global_, tree_, partition_, now);
    std::uint64_t owned = 0;
    for (int t = 0; t < tree_.n_top(); ++t) owned += tree_.cells[t].count;
    if (owned != global_.size())
        throw std::logic_error("distribute_ranks: particle conservation violated");
}

void Simulation::sync_owned_to_global() {
    if (opts_.n_ranks == 1) {
        global_ = ranks_[0].parts;
        return;
    }
    for (int t = 0; t < tree_.n_top(); ++t) {
        const Cell& cell = tree_.cells[t];
        if (cell.empty()) continue;
        const ParticleArray& src = ranks_[partition_.assignment[t]].parts;
        std::copy(src.begin() + cell.first, src.begin() + cell.end(),
                  global_.begin() + cell.first);
    }
}

void Simulation::smooth_initial_h() {
    // top-level adjacency sources (cell, shift), valid while nothing is stale
    std::vector<std::vector<std::pair<int, Vec3>>> sources(tree_.n_top());
    for (int a = 0; a < tree_.n_top(); ++a) {
        sources[a].push_back({a, Vec3{}});
        auto [ax, ay, az] = tree_.top_coords(a);
        std::set<std::pair<int, std::array<double, 3>>> seen;
        for (int ox = -1; ox <= 1; ++ox)
            for (int oy = -1; oy <= 1; ++oy)
                for (int oz = -1; oz <= 1; ++oz) {
                    if (ox == 0 && oy == 0 && oz == 0) continue;
                    int bx = ax + ox, by = ay + oy, bz = az + oz;
                    int wx = (bx % tree_.top_dims[0] + tree_.top_dims[0]) % tree_.top_dims[0];
                    int wy = (by % tree_.top_dims[1] + tree_.top_dims[1]) % tree_.top_dims[1];
                    int wz = (bz % tree_.top_dims[2] + tree_.top_dims[2]) % tree_.top_dims[2];
                    Vec3 shift{box_.dims.x * double((bx - wx) / tree_.top_dims[0]),
                               box_.dims.y * double((by - wy) / tree_.top_dims[1]),
                               box_.dims.z * double((bz - wz) / tree_.top_dims[2])};
                    int b = tree_.top_index_of(wx, wy, wz);
                    if (tree_.cells[b].empty()) continue;
                    if (seen.insert({b, {shift.x, shift.y, shift.z}}).second)
                        sources[a].push_back({b, shift});
                }
    }

    std::vector<Neighbour> scratch;
    for (int iter = 0; iter < 5; ++iter) {
        tree_.refresh_aggregates(global_);
        std::size_t changed = 0;
        for (std::size_t i = 0; i < global_.size(); ++i) {
            Particle& p = global_[i];
            int top = tree_.cells[slot_leaf_[i]].top_index;
            gather_neighbours(tree_, global_, sources[top], p.pos, 2.0 * opts_.sph.h_max,
                              scratch);
            GhostResult res = ghost_update_h(p, scratch, opts_.sph, opts_.sph.h_max);
            if (std::abs(res.h - p.h) > 10.0 * opts_.sph.h_tolerance * res.h) ++changed;
            p.h = res.h;
            p.rho = res.rho;
            p.n_wt = res.n_wt;
            p.h_capped = res.status == GhostStatus::capped;
            p.c = sound_speed(p.u, opts_.sph.gamma_eos);
        }
        if (changed == 0) break;
    }
    tree_.refresh_aggregates(global_);
}

StepMetrics Simulation::initialize() {
    if (initialized_) throw std::logic_error("Simulation: already initialized");
    rebuild_tree(0);
    rebuild_extra_drifts_ = 0;
    smooth_initial_h();

    if (opts_.n_ranks > int(global_.size()))
        throw std::invalid_argument("Simulation: more ranks than particles");
    if (opts_.n_ranks > 1) {
        if (opts_.grid_decomp) {
            partition_ = partition_grid(tree_.top_dims, opts_.n_ranks);
        } else {
            CellGraphInputs in = cell_graph_inputs();
            CellGraph g = build_cell_graph(in, opts_.strategy);
            partition_ = partition_graph(
                g, opts_.n_ranks,
                {.balance_tol = opts_.balance_tol, .seed = opts_.partition_seed});
        }
    } else {
        partition_.n_ranks = 1;
        partition_.assignment.assign(tree_.n_top(), 0);
    }
    distribute_ranks(0);
    initialized_ = true;
    StepMetrics m = do_step(true);
    return m;
}

CellGraphInputs Simulation::cell_graph_inputs() {
    CellGraphInputs in;
    in.n_top = tree_.n_top();
    in.n_bin = grid_.n_bin;
    in.current_tick = clock_.tick;
    in.cell_cost.assign(in.n_top, 0.0);
    in.next_active_tick.assign(in.n_top, grid_.max_tick());

    tree_.refresh_aggregates(global_);
    StepActivity all = enumerate_interactions(tree_, grid_.n_bin);

    auto top_of = [&](int cell) { return tree_.cells[cell].top_index; };
    for (const InteractionPair& p : all.pairs) {
        const Cell& a = tree_.cells[p.cell_a];
        const Cell& b = tree_.cells[p.cell_b];
        if (p.self()) {
            double cost = cost_model_.estimate(TaskKind::density_self,
                                               CostModel::self_work(a.count)) +
                          cost_model_.estimate(TaskKind::force_self, CostModel::self_work(a.count));
            in.cell_cost[top_of(p.cell_a)] += cost;
            continue;
        }
        double cost =
            cost_model_.estimate(TaskKind::density_pair, CostModel::pair_work(a.count, b.count)) +
            cost_model_.estimate(TaskKind::force_pair, CostModel::pair_work(a.count, b.count));
        int ta = top_of(p.cell_a), tb = top_of(p.cell_b);
        if (ta == tb) {
            in.cell_cost[ta] += cost;
        } else {
            in.cell_cost[ta] += 0.5 * cost;
            in.cell_cost[tb] += 0.5 * cost;
            auto key = std::minmax(ta, tb);
            in.pair_cost[{key.first, key.second}] += cost;
        }
    }
    // unary task costs per top cell
    for (int t = 0; t < in.n_top; ++t) {
        std::uint64_t n = tree_.cells[t].count;
        if (n == 0) continue;
        in.cell_cost[t] += cost_model_.estimate(TaskKind::drift, CostModel::unary_work(n)) +
                           cost_model_.estimate(TaskKind::ghost, CostModel::unary_work(n)) +
                           cost_model_.estimate(TaskKind::kick, CostModel::unary_work(n)) +
                           cost_model_.estimate(TaskKind::sort, CostModel::unary_work(n));
    }
    // next activity per top cell from its occupied bins
    for (int t = 0; t < in.n_top; ++t) {
        const Cell& cell = tree_.cells[t];
        if (cell.empty() || cell.min_bin > grid_.n_bin) continue;
        Tick period = Tick{1} << std::min(cell.min_bin, grid_.n_bin);
        Tick next = ((clock_.tick / period) + 1) * period;
        in.next_active_tick[t] = std::min(next, grid_.max_tick());
    }
    return in;
}

void Simulation::synchronize_positions() {
    for (Particle& p : global_) drift_particle(p, clock_.tick, grid_, box_);
}

ParticleArray Simulation::particles_by_id() const {
    ParticleArray out = global_;
    std::sort(out.begin(), out.end(),
              [](const Particle& a, const Particle& b) { return a.id < b.id; });
    return out;
}

std::vector<StepMetrics> Simulation::run(std::uint64_t max_steps,
                                         const std::function<void(const StepMetrics&)>& on_step) {
    std::vector<StepMetrics> all;
    StepMetrics init = initialize();
    if (on_step) on_step(init);
    all.push_back(init);
    for (std::uint64_t s = 0; s < max_steps && !finished(); ++s) {
        StepMetrics m = step();
        if (on_step) on_step(m);
        all.push_back(std::move(m));
    }
    synchronize_positions();
    return all;
}

StepMetrics Simulation::step() {
    if (!initialized_) throw std::logic_error("Simulation: initialize() first");
    if (finished()) throw std::logic_error("Simulation: hierarchy period already complete");
    return do_step(false);
}

StepMetrics Simulation::do_step(bool init) {
    const auto wall_start = std::chrono::steady_clock::now();
    StepMetrics metrics;
    metrics.rebuild = init;

    rebuild_extra_drifts_ = 0;
    if (!init && rebuild_scheduled_) {
        rebuild_tree(clock_.tick);
        if (opts_.n_ranks > 1 && imbalance_strikes_ >= opts_.repartition_patience &&
            !opts_.grid_decomp) {
            CellGraphInputs in = cell_graph_inputs();
            CellGraph g = build_cell_graph(in, opts_.strategy);
            partition_ = partition_graph(
                g, opts_.n_ranks,
                {.balance_tol = opts_.balance_tol, .seed = opts_.partition_seed});
            imbalance_strikes_ = 0;
        }
        distribute_ranks(clock_.tick);
        rebuild_scheduled_ = false;
        steps_since_rebuild_ = 0;
        metrics.rebuild = true;
    }

    const int R = opts_.n_ranks;
    const Tick tick_next = init ? 0 : clock_.tick + (Tick{1} << min_occupied_bin());
    const int m = init ? grid_.n_bin : std::min(max_active_bin(tick_next), grid_.n_bin);
    metrics.step_index = init ? 0 : clock_.step_index + 1;
    metrics.tick = tick_next;
    metrics.m = m;

    tree_.refresh_aggregates(global_);
    StepActivity act = enumerate_interactions(tree_, m);

    for (const Particle& p : global_)
        if (p.bin <= m) ++metrics.n_active;

    auto is_active = [m](const Particle& p) { return p.bin <= m; };
    auto top_of = [&](int cell) { return tree_.cells[cell].top_index; };

    // ---- cover sets -------------------------------------------------
    std::vector<int> drift_cover;
    if (opts_.scheme == Scheme::drift_active) {
        drift_cover = maximal_cells(tree_, act.drift_cells);
    } else {
        for (int t = 0; t < tree_.n_top(); ++t)
            if (!tree_.cells[t].empty()) drift_cover.push_back(t);
    }

    // top cells holding active particles (ghost + kick hosts)
    std::vector<int> active_tops;
    for (int t = 0; t < tree_.n_top(); ++t) {
        const Cell& cell = tree_.cells[t];
        if (!cell.empty() && cell.min_bin <= m) active_tops.push_back(t);
    }

    // ghost gather sources per top cell, from the emitted interaction list
    std::vector<std::vector<std::pair<int, Vec3>>> ghost_sources(tree_.n_top());
    {
        std::vector<std::set<std::pair<int, std::array<double, 3>>>> seen(tree_.n_top());
        auto add = [&](int top, int cell, const Vec3& s) {
            if (seen[top].insert({cell, {s.x, s.y, s.z}}).second)
                ghost_sources[top].push_back({cell, s});
        };
        for (const InteractionPair& p : act.pairs) {
            int ta = top_of(p.cell_a), tb = top_of(p.cell_b);
            add(ta, p.cell_b, p.shift);
            add(tb, p.cell_a, -p.shift);
            if (p.self()) add(ta, p.cell_a, Vec3{});
        }
    }

    // ---- the task graph ---------------------------------------------
    TaskGraph graph;
    StepAccum acc;
    acc.energy_by_top.assign(tree_.n_top(), kEnergyNone);
    if (opts_.force_single_bin) acc.natural_bin.assign(global_.size(), grid_.n_bin);

    // hierarchical resources: one per (rank, cell), parents mirror the tree
    const int n_cells = int(tree_.cells.size());
    for (int r = 0; r < R; ++r)
        for (int c = 0; c < n_cells; ++c) {
            int parent = tree_.cells[c].parent;
            graph.add_resource(parent < 0 ? -1 : r * n_cells + parent);
        }
    auto res_of = [n_cells](int rank, int cell) { return rank * n_cells + cell; };

    const double d_range_margin = opts_.sph.h_growth_cap;
    const TimeGrid grid = grid_;
    const Box box = box_;

    // instrumented proxy-freshness checks: a physics task must never read
    // a mirrored cell before this step's refresh arrived
    auto proxy_fresh = [this](const std::vector<Tick>& stamps, int cell, Tick t) {
        for (int c = cell; c >= 0; c = tree_.cells[c].parent)
            if (stamps[c] >= t) return true;
        return false;
    };

    // drift tasks
    CoverMap drift_map;
    drift_map.init(tree_);
    for (int c : drift_cover) {
        const int r = owner_of_cell(c);
        std::vector<int> bump = overlapping_cells(tree_, c);
        RankState* rs = &ranks_[r];
        const Cell* cell = &tree_.cells[c];
        auto body = [this, rs, cell, bump = std::move(bump), tick_next, is_active, &acc, grid,
                     box] {
            std::uint64_t drifted = 0;
            for (std::uint32_t i = cell->first; i < cell->end(); ++i) {
                Particle& p = rs->parts[i];
                bool moves = p.tick_last_drift < tick_next;
                drift_particle(p, tick_next, grid, box);
                if (moves) {
                    ++drifted;
                    const Cell& leaf = tree_.cells[slot_leaf_[i]];
                    const Vec3& q = p.pos;
                    if (q.x < leaf.bounds.lo.x || q.x > leaf.bounds.hi.x ||
                        q.y < leaf.bounds.lo.y || q.y > leaf.bounds.hi.y ||
                        q.z < leaf.bounds.lo.z || q.z > leaf.bounds.hi.z)
                        acc.leaf_escape.store(true, std::memory_order_relaxed);
                }
                if (is_active(p)) {
                    p.rho = 0.0;
                    p.n_wt = 0.0;
                }
            }
            for (int b : bump) rs->sorts.bump_drift(b);
            acc.drifted.fetch_add(drifted, std::memory_order_relaxed);
        };
        int t = graph.add_task(TaskKind::drift, std::move(body), {res_of(r, c)}, 0.0, r, c);
        graph.task(t).work = CostModel::unary_work(cell->count);
        drift_map.add(c, t);
    }

    // ---- cross-rank messages ----------------------------------------
    struct MsgNeed {
        int cell;
        int src, dst;
        MsgKind kind;
        int send_task = -1, recv_task = -1;
    };
    std::vector<MsgNeed> msgs;
    if (R > 1) {
        std::set<std::tuple<int, int, int, int>> need;  // (cell, src, dst, kind)
        for (const InteractionPair& p : act.pairs) {
            if (p.self() || p.ordered()) continue;
            int ra = owner_of_cell(p.cell_a), rb = owner_of_cell(p.cell_b);
            if (ra == rb) continue;
            bool act_a = tree_.cells[p.cell_a].active;
            bool act_b = tree_.cells[p.cell_b].active;
            if (act_a) {
                need.insert({p.cell_b, rb, ra, int(MsgKind::particle_state)});
                if (act_b) need.insert({p.cell_b, rb, ra, int(MsgKind::density_result)});
            }
            if (act_b) {
                need.insert({p.cell_a, ra, rb, int(MsgKind::particle_state)});
                if (act_a) need.insert({p.cell_a, ra, rb, int(MsgKind::density_result)});
            }
        }
        // collapse nested cells per (src, dst, kind)
        std::map<std::tuple<int, int, int>, std::vector<int>> grouped;
        for (const auto& [cell, src, dst, kind] : need)
            grouped[{src, dst, kind}].push_back(cell);
        for (auto& [key, cells] : grouped) {
            auto [src, dst, kind] = key;
            for (int cell : maximal_cells(tree_, cells))
                msgs.push_back({cell, src, dst, MsgKind(kind)});
        }
    }

    // per-destination cover of incoming messages, for stamp checks and deps
    std::vector<CoverMap> pos_msg_map(R), dens_msg_map(R);
    for (int r = 0; r < R; ++r) {
        pos_msg_map[r].init(tree_);
        dens_msg_map[r].init(tree_);
    }

    if (R > 1) {
        channels_.clear();
        for (int i = 0; i < R * R; ++i) channels_.emplace_back(opts_.channel);

        for (MsgNeed& msg : msgs) {
            const Cell* cell = &tree_.cells[msg.cell];
            RankState* dst_state = &ranks_[msg.dst];
            const int cell_index = msg.cell;
            const MsgKind kind = msg.kind;

            std::vector<int> bump =
                kind == MsgKind::particle_state ? overlapping_cells(tree_, msg.cell)
                                                : std::vector<int>{};
            auto recv_body = [this, dst_state, cell, cell_index, kind, tick_next,
                              bump = std::move(bump)] {
                Message m = mailbox_.take(dst_state->rank, std::uint64_t(cell_index), kind);
                decode_message(m, std::span<Particle>(dst_state->parts.data() + cell->first,
                                                      cell->count));
                if (kind == MsgKind::particle_state) {
                    dst_state->proxy_pos_tick[cell_index] = tick_next;
                    for (int b : bump) dst_state->sorts.bump_drift(b);
                } else {
                    dst_state->proxy_dens_tick[cell_index] = tick_next;
                }
            };
            msg.recv_task = graph.add_task(TaskKind::recv, std::move(recv_body),
                                           {res_of(msg.dst, msg.cell)}, 0.0, msg.dst, msg.cell);
            graph.task(msg.recv_task).work = CostModel::unary_work(cell->count);

            RankState* src_state = &ranks_[msg.src];
            Channel* channel = &channels_[msg.src * R + msg.dst];
            const int recv_task = msg.recv_task;
            const int src = msg.src, dst = msg.dst;
            auto send_body = [this, src_state, channel, cell, cell_index, kind, recv_task, src,
                              dst, &graph] {
                Message m = encode_message(
                    src, dst, std::uint64_t(cell_index), kind,
                    std::span<const Particle>(src_state->parts.data() + cell->first,
                                              cell->count));
                m.send_ns = graph.now_ns();
                std::int64_t deliver = channel->deliver_time(m);
                src_state->messages_sent.fetch_add(1, std::memory_order_relaxed);
                src_state->bytes_sent.fetch_add(m.bytes.size(), std::memory_order_relaxed);
                graph.set_not_before(recv_task, deliver);
                mailbox_.post(std::move(m));
            };
            msg.send_task = graph.add_task(TaskKind::send, std::move(send_body), {}, 0.0,
                                           msg.src, msg.cell);
            graph.task(msg.send_task).work = CostModel::unary_work(cell->count);
            graph.add_dependency(msg.send_task, msg.recv_task);

            if (kind == MsgKind::particle_state) {
                pos_msg_map[msg.dst].add(msg.cell, msg.recv_task);
                int drift_task = drift_map.covering(msg.cell);
                if (drift_task >= 0) graph.add_dependency(drift_task, msg.send_task);
            } else {
                dens_msg_map[msg.dst].add(msg.cell, msg.recv_task);
            }
        }
    }

    // ---- sort tasks ---------------------------------------------------
    struct PairHost {
        int rank;
        bool scatter_a, scatter_b;
    };
    auto hosts_of = [&](const InteractionPair& p) {
        std::vector<PairHost> hosts;
        int ra = owner_of_cell(p.cell_a), rb = owner_of_cell(p.cell_b);
        bool act_a = tree_.cells[p.cell_a].active;
        bool act_b = tree_.cells[p.cell_b].active;
        if (p.self() || p.ordered()) {
            hosts.push_back({ra, true, !p.ordered()});
            return hosts;
        }
        if (ra == rb) {
            hosts.push_back({ra, true, true});
            return hosts;
        }
        if (act_a) hosts.push_back({ra, true, false});
        if (act_b) hosts.push_back({rb, false, true});
        return hosts;
    };

    std::map<std::tuple<int, int, int>, int> sort_tasks;  // (rank, cell, axis) -> task
    auto ensure_sort = [&](int rank, int cell, int axis) {
        auto key = std::tuple(rank, cell, axis);
        auto it = sort_tasks.find(key);
        if (it != sort_tasks.end()) return it->second;
        RankState* rs = &ranks_[rank];
        auto body = [this, rs, cell, axis] { rs->sorts.build(tree_, rs->parts, cell, axis); };
        int t = graph.add_task(TaskKind::sort, std::move(body), {res_of(rank, cell)}, 0.0, rank,
                               cell);
        graph.task(t).work = CostModel::unary_work(tree_.cells[cell].count);
        // upstream: whoever refreshes this range on this rank this step
        if (owner_of_cell(cell) == rank) {
            int d = drift_map.covering(cell);
            if (d >= 0) graph.add_dependency(d, t);
        } else {
            int rv = pos_msg_map[rank].covering(cell);
            if (rv >= 0) graph.add_dependency(rv, t);
        }
        sort_tasks[key] = t;
        return t;
    };

    // ---- density + force tasks ----------------------------------------
    std::vector<std::vector<int>> density_by_top(tree_.n_top());
    std::vector<std::vector<int>> force_feed_kick(tree_.n_top());  // per owner top
    std::vector<int> ghost_tasks(tree_.n_top(), -1);

    struct PairTaskRef {
        const InteractionPair* pair;
        PairHost host;
        int density_task = -1;
    };
    std::vector<PairTaskRef> pair_refs;

    for (const InteractionPair& p : act.pairs) {
        for (const PairHost& host : hosts_of(p)) {
            PairTaskRef ref{&p, host};
            const int r = host.rank;
            RankState* rs = &ranks_[r];
            const Cell* ca = &tree_.cells[p.cell_a];
            const Cell* cb = &tree_.cells[p.cell_b];
            const bool scatter_a = host.scatter_a, scatter_b = host.scatter_b;
            const double d_range =
                2.0 * std::max(ca->h_max, cb->h_max) * d_range_margin;
            const InteractionPair* pp = &p;

            std::function<void()> body;
            std::vector<int> locks;
            if (p.self()) {
                locks = {res_of(r, p.cell_a)};
                body = [rs, ca, is_active, &acc] {
                    ParticleArray& parts = rs->parts;
                    std::uint64_t count = 0;
                    for (std::uint32_t i = ca->first; i < ca->end(); ++i) {
                        Particle& pi = parts[i];
                        if (!is_active(pi)) continue;
                        double w0 = kernel_w(0.0, pi.h);
                        pi.rho += pi.m * w0;
                        pi.n_wt += w0;
                    }
                    for (std::uint32_t i = ca->first; i < ca->end(); ++i) {
                        for (std::uint32_t j = i + 1; j < ca->end(); ++j) {
                            Particle& pi = parts[i];
                            Particle& pj = parts[j];
                            Vec3 dx = pi.pos - pj.pos;
                            double r2 = dx.norm2();
                            double cut = 2.0 * std::max(pi.h, pj.h);
                            if (r2 >= cut * cut) continue;
                            ++count;
                            double rr = std::sqrt(r2);
                            if (is_active(pi) && rr < 2.0 * pi.h) {
                                double w = kernel_w(rr, pi.h);
                                pi.rho += pj.m * w;
                                pi.n_wt += w;
                            }
                            if (is_active(pj) && rr < 2.0 * pj.h) {
                                double w = kernel_w(rr, pj.h);
                                pj.rho += pi.m * w;
                                pj.n_wt += w;
                            }
                        }
                    }
                    acc.pair_interactions.fetch_add(count, std::memory_order_relaxed);
                };
            } else {
                locks = scatter_b && r == owner_of_cell(p.cell_b)
                            ? std::vector<int>{res_of(r, p.cell_a), res_of(r, p.cell_b)}
                            : std::vector<int>{res_of(r, scatter_a ? p.cell_a : p.cell_b)};
                const bool check_proxy_a = owner_of_cell(p.cell_a) != r;
                const bool check_proxy_b = owner_of_cell(p.cell_b) != r;
                body = [this, rs, pp, ca, cb, scatter_a, scatter_b, check_proxy_a, check_proxy_b,
                        d_range, is_active, tick_next, proxy_fresh, &acc] {
                    if (check_proxy_a && !proxy_fresh(rs->proxy_pos_tick, pp->cell_a, tick_next))
                        throw std::logic_error("density_pair: proxy positions not received");
                    if (check_proxy_b && !proxy_fresh(rs->proxy_pos_tick, pp->cell_b, tick_next))
                        throw std::logic_error("density_pair: proxy positions not received");
                    ParticleArray& parts = rs->parts;
                    std::uint64_t count = 0;
                    pair_traverse_sorted(
                        tree_, parts, rs->sorts, *pp, d_range,
                        [&](std::uint32_t i, std::uint32_t j, const Vec3& dx) {
                            Particle& pi = parts[i];
                            Particle& pj = parts[j];
                            double r2 = dx.norm2();
                            double cut = 2.0 * std::max(pi.h, pj.h);
                            if (r2 >= cut * cut) return;
                            ++count;
                            double rr = std::sqrt(r2);
                            if (scatter_a && is_active(pi) && rr < 2.0 * pi.h) {
                                double w = kernel_w(rr, pi.h);
                                pi.rho += pj.m * w;
                                pi.n_wt += w;
                            }
                            if (scatter_b && is_active(pj) && rr < 2.0 * pj.h) {
                                double w = kernel_w(rr, pj.h);
                                pj.rho += pi.m * w;
                                pj.n_wt += w;
                            }
                        });
                    acc.pair_interactions.fetch_add(count, std::memory_order_relaxed);
                };
            }

            int t = graph.add_task(TaskKind::density_pair, std::move(body), std::move(locks), 0.0,
                                   r, p.cell_a, p.cell_b);
            if (p.self()) {
                graph.task(t).kind = TaskKind::density_self;
                graph.task(t).work = CostModel::self_work(ca->count);
                int d = drift_map.covering(p.cell_a);
                if (d >= 0) graph.add_dependency(d, t);
            } else {
                graph.task(t).work = CostModel::pair_work(ca->count, cb->count);
                graph.add_dependency(ensure_sort(r, p.cell_a, p.axis_id), t);
                graph.add_dependency(ensure_sort(r, p.cell_b, p.axis_id), t);
            }
            if (scatter_a) density_by_top[top_of(p.cell_a)].push_back(t);
            if (scatter_b) density_by_top[top_of(p.cell_b)].push_back(t);
            ref.density_task = t;
            pair_refs.push_back(ref);
        }
    }

    // ---- ghost tasks ---------------------------------------------------
    for (int t_cell : active_tops) {
        const int r = owner_of_cell(t_cell);
        RankState* rs = &ranks_[r];
        const Cell* top = &tree_.cells[t_cell];
        const auto* sources = &ghost_sources[t_cell];
        auto body = [this, rs, top, sources, is_active, m, &acc, &sph = opts_.sph] {
            std::vector<Neighbour> scratch;
            std::uint64_t capped = 0;
            for (std::uint32_t i = top->first; i < top->end(); ++i) {
                Particle& p = rs->parts[i];
                if (!is_active(p)) continue;
                p.c = sound_speed(p.u, sph.gamma_eos);
                double count_now = (32.0 * std::numbers::pi / 3.0) * p.h * p.h * p.h * p.n_wt;
                if (std::abs(count_now - sph.n_ngb_target) >
                    3.0 * sph.n_ngb_target * sph.h_tolerance) {
                    double h_allowed = std::min(sph.h_max, sph.h_growth_cap * p.h);
                    gather_neighbours(tree_, rs->parts, *sources, p.pos, 2.0 * h_allowed,
                                      scratch);
                    GhostResult res = ghost_update_h(p, scratch, sph, h_allowed);
                    if (res.status == GhostStatus::iteration_limit)
                        std::cerr << "ghost: iteration limit at particle " << p.id
                                  << ", keeping best h\n";
                    p.h = res.h;
                    p.rho = res.rho;
                    p.n_wt = res.n_wt;
                    p.h_capped = res.status == GhostStatus::capped;
                    if (p.h_capped) ++capped;
                }
                p.accel = Vec3{};
                p.du_dt = 0.0;
                p.v_sig_max = 2.0 * p.c;
            }
            acc.h_capped.fetch_add(capped, std::memory_order_relaxed);
        };
        int t = graph.add_task(TaskKind::ghost, std::move(body), {res_of(r, t_cell)}, 0.0, r,
                               t_cell);
        graph.task(t).work = CostModel::unary_work(top->count);
        ghost_tasks[t_cell] = t;
        for (int dt : density_by_top[t_cell]) graph.add_dependency(dt, t);
        // gathers read raw neighbour positions
        for (const auto& [cell, shift] : *sources) {
            (void)shift;
            if (owner_of_cell(cell) == r) {
                int d = drift_map.covering(cell);
                if (d >= 0) graph.add_dependency(d, t);
            } else {
                int rv = pos_msg_map[r].covering(cell);
                if (rv >= 0) graph.add_dependency(rv, t);
            }
        }
    }

    // ---- density sends (after ghost) -----------------------------------
    for (const MsgNeed& msg : msgs) {
        if (msg.kind != MsgKind::density_result) continue;
        int g = ghost_tasks[top_of(msg.cell)];
        if (g >= 0) graph.add_dependency(g, msg.send_task);
        int d = drift_map.covering(msg.cell);
        if (d >= 0) graph.add_dependency(d, msg.send_task);
    }

    // ---- force tasks -----------------------------------------------------
    for (const PairTaskRef& ref : pair_refs) {
        const InteractionPair& p = *ref.pair;
        const PairHost& host = ref.host;
        const int r = host.rank;
        RankState* rs = &ranks_[r];
        const Cell* ca = &tree_.cells[p.cell_a];
        const Cell* cb = &tree_.cells[p.cell_b];
        const bool scatter_a = host.scatter_a, scatter_b = host.scatter_b;
        const double d_range = 2.0 * std::max(ca->h_max, cb->h_max) * d_range_margin;
        const InteractionPair* pp = &p;

        std::function<void()> body;
        std::vector<int> locks;
        if (p.self()) {
            locks = {res_of(r, p.cell_a)};
            body = [rs, ca, is_active, &acc, &sph = opts_.sph] {
                ParticleArray& parts = rs->parts;
                std::uint64_t count = 0, zero = 0;
                for (std::uint32_t i = ca->first; i < ca->end(); ++i) {
                    for (std::uint32_t j = i + 1; j < ca->end(); ++j) {
                        Particle& pi = parts[i];
                        Particle& pj = parts[j];
                        bool want_i = is_active(pi);
                        bool want_j = is_active(pj);
                        if (!want_i && !want_j) continue;
                        Vec3 dx = pi.pos - pj.pos;
                        double r2 = dx.norm2();
                        double cut = 2.0 * std::max(pi.h, pj.h);
                        if (r2 >= cut * cut) continue;
                        if (r2 == 0.0) {
                            ++zero;
                            continue;
                        }
                        ++count;
                        double rr = std::sqrt(r2);
                        PairTerms terms = pair_force_terms(pi, pj, dx, rr, sph);
                        double common =
                            (terms.pressure_i + terms.pressure_j + terms.visc) * terms.mean_grad;
                        if (want_i) {
                            pi.accel -= pj.m * common * dx;
                            pi.du_dt += pj.m * (terms.pressure_i + 0.5 * terms.visc) *
                                        terms.mean_grad * terms.v_dot_dx;
                            pi.v_sig_max = std::max(pi.v_sig_max, terms.v_sig);
                        }
                        if (want_j) {
                            pj.accel += pi.m * common * dx;
                            pj.du_dt += pi.m * (terms.pressure_j + 0.5 * terms.visc) *
                                        terms.mean_grad * terms.v_dot_dx;
                            pj.v_sig_max = std::max(pj.v_sig_max, terms.v_sig);
                        }
                    }
                }
                acc.pair_interactions.fetch_add(count, std::memory_order_relaxed);
                acc.zero_sep.fetch_add(zero, std::memory_order_relaxed);
            };
        } else {
            locks = scatter_b && r == owner_of_cell(p.cell_b)
                        ? std::vector<int>{res_of(r, p.cell_a), res_of(r, p.cell_b)}
                        : std::vector<int>{res_of(r, scatter_a ? p.cell_a : p.cell_b)};
            const bool check_dens_a =
                owner_of_cell(p.cell_a) != r && tree_.cells[p.cell_a].active;
            const bool check_dens_b =
                owner_of_cell(p.cell_b) != r && tree_.cells[p.cell_b].active;
            body = [rs, pp, ca, cb, scatter_a, scatter_b, d_range, is_active, &acc,
                    check_dens_a, check_dens_b, tick_next, proxy_fresh, &sph = opts_.sph,
                    this] {
                if (check_dens_a && !proxy_fresh(rs->proxy_dens_tick, pp->cell_a, tick_next))
                    throw std::logic_error("force_pair: proxy densities not received");
                if (check_dens_b && !proxy_fresh(rs->proxy_dens_tick, pp->cell_b, tick_next))
                    throw std::logic_error("force_pair: proxy densities not received");
                ParticleArray& parts = rs->parts;
                std::uint64_t count = 0, zero = 0;
                pair_traverse_sorted(
                    tree_, parts, rs->sorts, *pp, d_range,
                    [&](std::uint32_t i, std::uint32_t j, const Vec3& dx) {
                        Particle& pi = parts[i];
                        Particle& pj = parts[j];
                        bool want_i = scatter_a && is_active(pi);
                        bool want_j = scatter_b && is_active(pj);
                        if (!want_i && !want_j) return;
                        double r2 = dx.norm2();
                        double cut = 2.0 * std::max(pi.h, pj.h);
                        if (r2 >= cut * cut) return;
                        if (r2 == 0.0) {
                            ++zero;
                            return;
                        }
                        ++count;
                        double rr = std::sqrt(r2);
                        PairTerms terms = pair_force_terms(pi, pj, dx, rr, sph);
                        double common =
                            (terms.pressure_i + terms.pressure_j + terms.visc) * terms.mean_grad;
                        if (want_i) {
                            pi.accel -= pj.m * common * dx;
                            pi.du_dt += pj.m * (terms.pressure_i + 0.5 * terms.visc) *
                                        terms.mean_grad * terms.v_dot_dx;
                            pi.v_sig_max = std::max(pi.v_sig_max, terms.v_sig);
                        }
                        if (want_j) {
                            pj.accel += pi.m * common * dx;
                            pj.du_dt += pi.m * (terms.pressure_j + 0.5 * terms.visc) *
                                        terms.mean_grad * terms.v_dot_dx;
                            pj.v_sig_max = std::max(pj.v_sig_max, terms.v_sig);
                        }
                    });
                acc.pair_interactions.fetch_add(count, std::memory_order_relaxed);
                acc.zero_sep.fetch_add(zero, std::memory_order_relaxed);
            };
        }

        int t = graph.add_task(p.self() ? TaskKind::force_self : TaskKind::force_pair,
                               std::move(body), std::move(locks), 0.0, r, p.cell_a, p.cell_b);
        graph.task(t).work = p.self() ? CostModel::self_work(ca->count)
                                      : CostModel::pair_work(ca->count, cb->count);

        auto ghost_dep = [&](int cell, bool scatter) {
            int top = top_of(cell);
            if (owner_of_cell(cell) == r) {
                if (ghost_tasks[top] >= 0 && owner_of_cell(top) == r)
                    graph.add_dependency(ghost_tasks[top], t);
            } else if (tree_.cells[cell].active) {
                int rv = dens_msg_map[r].covering(cell);
                if (rv >= 0) graph.add_dependency(rv, t);
            }
            (void)scatter;
        };
        ghost_dep(p.cell_a, scatter_a);
        if (!p.self()) ghost_dep(p.cell_b, scatter_b);

        if (scatter_a) force_feed_kick[top_of(p.cell_a)].push_back(t);
        if (scatter_b) force_feed_kick[top_of(p.cell_b)].push_back(t);
    }

    // ---- kick tasks ------------------------------------------------------
    std::vector<int> kick_tasks;
    for (int t_cell : active_tops) {
        const int r = owner_of_cell(t_cell);
        RankState* rs = &ranks_[r];
        const Cell* top = &tree_.cells[t_cell];
        const bool single = opts_.force_single_bin;
        auto body = [this, rs, top, t_cell, is_active, init, single, tick_next, &acc,
                     grid = grid_] {
            std::uint64_t kicked = 0, floored = 0;
            double energy = 0.0;
            for (std::uint32_t i = top->first; i < top->end(); ++i) {
                Particle& p = rs->parts[i];
                if (!is_active(p)) continue;
                if (!init) floored += kick(p, 0.5 * grid.bin_dt(p.bin), tick_next);
                energy += p.m * (p.u + 0.5 * p.vel.norm2());
                double dt = cfl_timestep(p, p.v_sig_max, opts_.sph);
                int natural = assign_bin(dt, grid);
                if (single) {
                    acc.natural_bin[i] = natural;
                } else {
                    p.bin = align_bin(natural, tick_next, grid);
                    floored += kick(p, 0.5 * grid.bin_dt(p.bin), tick_next);
                }
                ++kicked;
            }
            acc.kicked.fetch_add(kicked, std::memory_order_relaxed);
            acc.u_floored.fetch_add(floored, std::memory_order_relaxed);
            acc.energy_by_top[t_cell] = energy;
        };
        int t = graph.add_task(TaskKind::kick, std::move(body), {res_of(r, t_cell)}, 0.0, r,
                               t_cell);
        graph.task(t).work = CostModel::unary_work(top->count);
        for (int ft : force_feed_kick[t_cell]) graph.add_dependency(ft, t);
        // sends read pre-kick state
        for (const MsgNeed& msg : msgs)
            if (msg.kind == MsgKind::particle_state && top_of(msg.cell) == t_cell)
                graph.add_dependency(msg.send_task, t);
        kick_tasks.push_back(t);
    }

    // deterministic priorities: static work-proportional estimates
    for (std::size_t i = 0; i < graph.size(); ++i) {
        Task& t = graph.task(int(i));
        t.cost_estimate = double(t.work);
    }

    for (RankState& rs : ranks_) rs.reset_counters();
    ExecutionReport report = run_graph(graph, opts_.n_workers);
    cost_model_.absorb(graph);

    // ---- controller post-pass ---------------------------------------------
    if (opts_.force_single_bin) {
        int bstar = grid_.n_bin;
        for (int t_cell : active_tops) {
            const Cell& top = tree_.cells[t_cell];
            ParticleArray& parts = ranks_[owner_of_cell(t_cell)].parts;
            for (std::uint32_t i = top.first; i < top.end(); ++i)
                if (is_active(parts[i])) bstar = std::min(bstar, acc.natural_bin[i]);
        }
        int nb = align_bin(bstar, tick_next, grid_);
        std::uint64_t floored = 0;
        for (int t_cell : active_tops) {
            const Cell& top = tree_.cells[t_cell];
            ParticleArray& parts = ranks_[owner_of_cell(t_cell)].parts;
            for (std::uint32_t i = top.first; i < top.end(); ++i) {
                Particle& p = parts[i];
                if (!is_active(p)) continue;
                p.bin = nb;
                floored += kick(p, 0.5 * grid_.bin_dt(nb), tick_next);
            }
        }
        acc.u_floored.fetch_add(floored, std::memory_order_relaxed);
    }

    sync_owned_to_global();

    metrics.n_kicked = acc.kicked.load();
    metrics.n_drifted = acc.drifted.load() + rebuild_extra_drifts_;
    metrics.n_pair_interactions = acc.pair_interactions.load();
    metrics.h_capped = acc.h_capped.load();
    metrics.u_floored = acc.u_floored.load();
    metrics.zero_sep = acc.zero_sep.load();
    if (metrics.n_kicked == global_.size()) {
        double e = 0.0;
        for (int t_cell : active_tops) e += acc.energy_by_top[t_cell];
        metrics.total_energy = e;
        metrics.energy_valid = true;
    }

    metrics.per_rank.assign(R, {});
    for (std::size_t i = 0; i < graph.size(); ++i) {
        const Task& t = graph.task(int(i));
        if (t.end_ns >= 0) metrics.per_rank[t.rank].busy_ns += t.cost_measured;
    }
    for (int r = 0; r < R; ++r) {
        metrics.per_rank[r].idle_ns =
            std::max<std::int64_t>(0, report.makespan_ns - metrics.per_rank[r].busy_ns);
        metrics.per_rank[r].messages = ranks_[r].messages_sent.load();
        metrics.per_rank[r].bytes = ranks_[r].bytes_sent.load();
    }

    if (!init) {
        clock_.tick = tick_next;
        clock_.step_index += 1;
        steps_since_rebuild_ += 1;
    }
    if (acc.leaf_escape.load() || steps_since_rebuild_ >= opts_.rebuild_interval)
        rebuild_scheduled_ = true;

    if (metrics.rebuild && R > 1) {
        std::int64_t max_busy = 0, sum_busy = 0;
        for (const RankMetrics& rm : metrics.per_rank) {
            max_busy = std::max(max_busy, rm.busy_ns);
            sum_busy += rm.busy_ns;
        }
        double mean = double(sum_busy) / R;
        if (mean > 0 && double(max_busy) / mean - 1.0 > opts_.repartition_threshold)
            ++imbalance_strikes_;
        else
            imbalance_strikes_ = 0;
    }

    metrics.wall_ns = std::chrono::duration_cast<std::chrono::nanoseconds>(
                          std::chrono::steady_clock::now() - wall_start)
                          .count();
    return metrics;
}

SchemeComparison compare_schemes(const ScenarioRealization& ics, SimOptions base,
                                 std::uint64_t n_steps) {
    SchemeComparison out;
    for (Scheme scheme : {Scheme::global, Scheme::drift_all, Scheme::drift_active}) {
        SimOptions opts = base;
        opts.scheme = scheme;
        opts.force_single_bin = scheme == Scheme::global;
        Simulation sim(ics.parts, ics.box, opts);
        SchemeComparison::Row row;
        row.scheme = scheme;
        auto t0 = std::chrono::steady_clock::now();
        auto metrics = sim.run(n_steps);
        row.wall_ns = std::chrono::duration_cast<std::chrono::nanoseconds>(
                          std::chrono::steady_clock::now() - t0)
                          .count();
        for (const StepMetrics& m : metrics) {
            row.kicks += m.n_kicked;
            row.drifts += m.n_drifted;
            row.interactions += m.n_pair_interactions;
        }
        row.steps = metrics.size();
        row.total_updates = row.kicks + row.drifts + row.interactions;
        out.rows.push_back(row);
    }
    return out;
}

}  // namespace mtsph
