#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string_view>
#include <vector>

namespace mtsph {

enum class TaskKind {
    sort,
    density_self,
    density_pair,
    ghost,
    force_self,
    force_pair,
    kick,
    drift,
    send,
    recv,
    generic,
};

std::string_view task_kind_name(TaskKind kind);

/// Schedulable unit. Dependencies order execution; locks only exclude
/// concurrent execution of tasks sharing a resource, in any order.
struct Task {
    TaskKind kind = TaskKind::generic;
    int rank = 0;
    int cell_a = -1;
    int cell_b = -1;
    std::function<void()> body;
    std::vector<int> locks;    // resource ids, kept sorted
    std::vector<int> unlocks;  // dependent task indices
    int wait_init = 0;
    double cost_estimate = 0.0;
    std::uint64_t work = 0;  // size measure for the cost model

    // filled in by the executor
    std::int64_t start_ns = -1;
    std::int64_t end_ns = -1;
    std::int64_t cost_measured = 0;
    int worker = -1;
    std::atomic<std::int64_t> not_before_ns{0};

    Task() = default;
    Task(Task&& o) noexcept
        : kind(o.kind), rank(o.rank), cell_a(o.cell_a), cell_b(o.cell_b),
          body(std::move(o.body)), locks(std::move(o.locks)), unlocks(std::move(o.unlocks)),
          wait_init(o.wait_init), cost_estimate(o.cost_estimate), work(o.work),
          start_ns(o.start_ns), end_ns(o.end_ns), cost_measured(o.cost_measured),
          worker(o.worker), not_before_ns(o.not_before_ns.load()) {}
};

/// Task graph plus its resource forest. Resources are hierarchical:
/// locking one excludes conflicting acquisition of its ancestors and
/// descendants (cell-granularity conflicts).
class TaskGraph {
  public:
    int add_resource(int parent = -1);
    int add_task(TaskKind kind, std::function<void()> body, std::vector<int> locks = {},
                 double cost_estimate = 0.0, int rank = 0, int cell_a = -1, int cell_b = -1);
    void add_dependency(int before, int after);

    std::size_t size() const { return tasks_.size(); }
    Task& task(int i) { return tasks_[i]; }
    const Task& task(int i) const { return tasks_[i]; }
    int resource_parent(int res) const { return resource_parent_[res]; }
    std::size_t n_resources() const { return resource_parent_.size(); }

    /// Engine clock, valid during run_graph (ns since run start).
    std::int64_t now_ns() const {
        return std::chrono::duration_cast<std::chrono::nanoseconds>(
                   std::chrono::steady_clock::now() - epoch_)
            .count();
    }
    void set_epoch() { epoch_ = std::chrono::steady_clock::now(); }

    /// Earliest engine time at which a task may start (modeled message
    /// delivery); safe to call from task bodies.
    void set_not_before(int task, std::int64_t ns) { tasks_[task].not_before_ns.store(ns); }

    /// Throws std::runtime_error naming an offending chain if cyclic.
    void check_acyclic() const;

  private:
    std::vector<Task> tasks_;
    std::vector<int> resource_parent_;
    std::chrono::steady_clock::time_point epoch_{};
};

struct WorkerStats {
    std::int64_t busy_ns = 0;
    std::uint64_t tasks_run = 0;
};

struct ExecutionReport {
    std::int64_t makespan_ns = 0;
    std::uint64_t completed = 0;
    std::vector<WorkerStats> workers;
};

/// Execute every task exactly once on n_workers threads. Tasks become
/// runnable when all dependencies finished; the highest cost estimate
/// among runnable tasks whose locks are acquirable runs first.
ExecutionReport run_graph(TaskGraph& graph, int n_workers);

/// One JSON object per executed task: kind, cells, rank, start/end, worker.
void dump_report_jsonl(const TaskGraph& graph, std::ostream& os);

/// Cost accounting: exponential moving average (decay 0.5) of measured
/// task cost per (kind, work-size bucket), with a static work-proportional
/// fallback before any history exists.
class CostModel {
  public:
    void record(TaskKind kind, std::uint64_t work, std::int64_t measured_ns);
    double estimate(TaskKind kind, std::uint64_t work) const;
    /// Feed every measured task of an executed graph into the model.
    void absorb(const TaskGraph& graph);

    static std::uint64_t pair_work(std::uint64_t n_a, std::uint64_t n_b) { return n_a * n_b; }
    static std::uint64_t self_work(std::uint64_t n) { return n * n; }
    static std::uint64_t unary_work(std::uint64_t n) { return n; }

  private:
    struct Slot {
        double ema = 0.0;
        bool seeded = false;
    };
    static constexpr int kKinds = 11;
    static constexpr int kBuckets = 64;
    Slot slots_[kKinds][kBuckets];
};

/// Refresh cost_estimate on every task of a (not yet run) graph.
void estimate_costs(TaskGraph& graph, const CostModel& model);

}  // namespace mtsph
