#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string_view>

#include "mtsph/cell_graph.hpp"
#include "mtsph/cell_tree.hpp"
#include "mtsph/partition.hpp"
#include "mtsph/rank_sim.hpp"
#include "mtsph/scenario.hpp"
#include "mtsph/task_engine.hpp"
#include "mtsph/time_bins.hpp"

namespace mtsph {

/// Drift policy of the step loop. `global` forces every particle onto the
/// minimal occupied bin (and so kicks and drifts everything each step);
/// `drift_all` keeps individual bins but drifts every particle; and
/// `drift_active` drifts only cells within interaction reach of active
/// ones.
enum class Scheme { global, drift_all, drift_active };

Scheme parse_scheme(std::string_view name);
std::string_view scheme_name(Scheme s);

struct RankMetrics {
    std::int64_t busy_ns = 0;
    std::int64_t idle_ns = 0;
    std::uint64_t messages = 0;
    std::uint64_t bytes = 0;
};

struct StepMetrics {
    std::uint64_t step_index = 0;
    Tick tick = 0;
    int m = 0;
    std::uint64_t n_active = 0;
    std::uint64_t n_kicked = 0;
    std::uint64_t n_drifted = 0;
    std::uint64_t n_pair_interactions = 0;
    std::int64_t wall_ns = 0;
    bool rebuild = false;
    double total_energy = 0.0;
    bool energy_valid = false;  // set when every particle was kick-synchronized
    std::uint64_t h_capped = 0;
    std::uint64_t u_floored = 0;
    std::uint64_t zero_sep = 0;
    std::vector<RankMetrics> per_rank;
};

void write_metrics_jsonl(std::ostream& os, const StepMetrics& m);

struct SimOptions {
    SphConfig sph;
    double t_begin = 0.0;
    double t_end = 1.0;
    int n_bin = 32;

    Scheme scheme = Scheme::drift_active;
    bool force_single_bin = false;

    int n_workers = 1;
    int n_ranks = 1;
    bool grid_decomp = false;  // grid baseline instead of the graph partitioner
    DecompStrategy strategy = DecompStrategy::costs_time;
    double balance_tol = 0.05;
    std::uint64_t partition_seed = 12345;
    double repartition_threshold = 0.25;  // busy-time imbalance triggering repartition
    int repartition_patience = 3;         // consecutive rebuild steps over threshold

    std::array<int, 3> top_dims{4, 4, 4};
    int split_threshold = 400;
    int max_tree_depth = 10;
    int rebuild_interval = 64;

    ChannelModel channel;
};

/// Step-loop orchestrator: owns the authoritative particle store, the
/// shared tree geometry and the per-rank states, and drives one task
/// graph per step through the executor.
class Simulation {
  public:
    Simulation(ParticleArray parts, Box box, SimOptions opts);

    /// Tick-0 setup: tree build, smoothing-length convergence, initial
    /// partition and distribution, then the first force pass and the
    /// opening half-kicks. Returns the tick-0 metrics record.
    StepMetrics initialize();

    StepMetrics step();
    bool finished() const { return clock_.tick >= grid_.max_tick(); }

    /// initialize() + up to max_steps steps (or until the hierarchy
    /// period completes), then a final position synchronization.
    std::vector<StepMetrics> run(std::uint64_t max_steps,
                                 const std::function<void(const StepMetrics&)>& on_step = {});

    /// Drift every particle to the current tick (run end).
    void synchronize_positions();

    const ParticleArray& particles() const { return global_; }
    ParticleArray particles_by_id() const;
    const CellTree& tree() const { return tree_; }
    const TimeGrid& grid() const { return grid_; }
    const Partition& partition() const { return partition_; }
    Tick tick() const { return clock_.tick; }
    std::uint64_t step_count() const { return clock_.step_index; }
    int min_occupied_bin() const;
    double total_energy() const;  // instantaneous sum m (u + v^2/2) of the store

    /// Inputs for the decomposition graph at the current state, using the
    /// accumulated cost history (full-hierarchy activity).
    CellGraphInputs cell_graph_inputs();

    /// Occupied-bin histogram of the current store.
    std::vector<std::uint64_t> bin_histogram() const;

  private:
    struct StepAccum;

    StepMetrics do_step(bool init);
    void rebuild_tree(Tick now);
    void distribute_ranks(Tick now);
    void smooth_initial_h();
    void sync_owned_to_global();
    int owner_of_cell(int cell) const { return partition_.assignment[tree_.cells[cell].top_index]; }

    Box box_;
    SimOptions opts_;
    TimeGrid grid_;
    StepClock clock_;
    ParticleArray global_;
    CellTree tree_;
    std::vector<int> slot_leaf_;
    Partition partition_;
    std::vector<RankState> ranks_;
    Mailbox mailbox_;
    std::vector<Channel> channels_;  // [src * R + dst]
    CostModel cost_model_;
    bool rebuild_scheduled_ = false;
    int steps_since_rebuild_ = 0;
    int imbalance_strikes_ = 0;
    std::uint64_t rebuild_extra_drifts_ = 0;
    bool initialized_ = false;
};

struct SchemeComparison {
    struct Row {
        Scheme scheme;
        std::uint64_t kicks = 0;
        std::uint64_t drifts = 0;
        std::uint64_t interactions = 0;
        std::uint64_t total_updates = 0;
        std::int64_t wall_ns = 0;
        std::uint64_t steps = 0;
    };
    std::vector<Row> rows;
};

/// Run the three schemes on identical initial conditions and report
/// total particle-updates and wall time.
SchemeComparison compare_schemes(const ScenarioRealization& ics, SimOptions base,
                                 std::uint64_t n_steps);

}  // namespace mtsph
