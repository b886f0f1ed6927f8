#include "mtsph/task_engine.hpp"

#include <algorithm>
#include <bit>
#include <condition_variable>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <nlohmann/json.hpp>

namespace mtsph {

std::string_view task_kind_name(TaskKind kind) {
    switch (kind) {
        case TaskKind::sort: return "sort";
        case TaskKind::density_self: return "density_self";
        case TaskKind::density_pair: return "density_pair";
        case TaskKind::ghost: return "ghost";
        case TaskKind::force_self: return "force_self";
        case TaskKind::force_pair: return "force_pair";
        case TaskKind::kick: return "kick";
        case TaskKind::drift: return "drift";
        case TaskKind::send: return "send";
        case TaskKind::recv: return "recv";
        case TaskKind::generic: return "generic";
    }
    return "?";
}

int TaskGraph::add_resource(int parent) {
    resource_parent_.push_back(parent);
    return int(resource_parent_.size()) - 1;
}

int TaskGraph::add_task(TaskKind kind, std::function<void()> body, std::vector<int> locks,
                        double cost_estimate, int rank, int cell_a, int cell_b) {
    Task t;
    t.kind = kind;
    t.body = std::move(body);
    std::sort(locks.begin(), locks.end());
    locks.erase(std::unique(locks.begin(), locks.end()), locks.end());
    t.locks = std::move(locks);
    t.cost_estimate = cost_estimate;
    t.rank = rank;
    t.cell_a = cell_a;
    t.cell_b = cell_b;
    tasks_.push_back(std::move(t));
    return int(tasks_.size()) - 1;
}

void TaskGraph::add_dependency(int before, int after) {
    tasks_[before].unlocks.push_back(after);
    tasks_[after].wait_init += 1;
}

void TaskGraph::check_acyclic() const {
    std::vector<int> wait(tasks_.size());
    std::vector<int> order;
    order.reserve(tasks_.size());
    for (std::size_t i = 0; i < tasks_.size(); ++i) {
        wait[i] = tasks_[i].wait_init;
        if (wait[i] == 0) order.push_back(int(i));
    }
    for (std::size_t head = 0; head < order.size(); ++head) {
        for (int next : tasks_[order[head]].unlocks) {
            if (--wait[next] == 0) order.push_back(next);
        }
    }
    if (order.size() == tasks_.size()) return;

    // Walk an unresolved task's dependencies until a repeat names the cycle.
    std::vector<int> dep_of(tasks_.size(), -1);
    for (std::size_t i = 0; i < tasks_.size(); ++i)
        for (int next : tasks_[i].unlocks)
            if (wait[next] > 0) dep_of[next] = int(i);
    int start = -1;
    for (std::size_t i = 0; i < tasks_.size(); ++i)
        if (wait[i] > 0) {
            start = int(i);
            break;
        }
    std::vector<char> seen(tasks_.size(), 0);
    std::vector<int> chain;
    int cur = start;
    while (cur >= 0 && !seen[cur]) {
        seen[cur] = 1;
        chain.push_back(cur);
        cur = dep_of[cur];
    }
    std::ostringstream msg;
    msg << "TaskGraph: dependency cycle detected:";
    for (int t : chain) msg << " #" << t << "(" << task_kind_name(tasks_[t].kind) << ")";
    throw std::runtime_error(msg.str());
}

namespace {

/// Hierarchical resource locks. One short critical section makes the
/// check-and-acquire of a whole lock set atomic; tasks either take every
/// lock they need or none, so no worker ever waits while holding one.
class LockManager {
  public:
    explicit LockManager(const TaskGraph& graph)
        : graph_(graph), locked_(graph.n_resources(), 0), hold_(graph.n_resources(), 0) {}

    bool try_acquire(const std::vector<int>& ids) {
        std::lock_guard<std::mutex> g(mu_);
        for (int id : ids) {
            if (locked_[id] || hold_[id] > 0) return false;
            for (int a = graph_.resource_parent(id); a >= 0; a = graph_.resource_parent(a))
                if (locked_[a]) return false;
        }
        for (int id : ids) {
            locked_[id] = 1;
            for (int a = graph_.resource_parent(id); a >= 0; a = graph_.resource_parent(a))
                ++hold_[a];
        }
        return true;
    }

    void release(const std::vector<int>& ids) {
        std::lock_guard<std::mutex> g(mu_);
        for (int id : ids) {
            locked_[id] = 0;
            for (int a = graph_.resource_parent(id); a >= 0; a = graph_.resource_parent(a))
                --hold_[a];
        }
    }

  private:
    const TaskGraph& graph_;
    std::mutex mu_;
    std::vector<int> locked_;
    std::vector<int> hold_;
};

struct ReadyOrder {
    const TaskGraph* graph;
    bool operator()(int a, int b) const {
        double ca = graph->task(a).cost_estimate;
        double cb = graph->task(b).cost_estimate;
        if (ca != cb) return ca > cb;  // longest processing time first
        return a < b;
    }
};

}  // namespace

ExecutionReport run_graph(TaskGraph& graph, int n_workers) {
    if (n_workers < 1) throw std::invalid_argument("run_graph: need at least one worker");
    graph.check_acyclic();
    graph.set_epoch();

    const std::size_t n = graph.size();
    ExecutionReport report;
    report.workers.resize(n_workers);
    if (n == 0) return report;

    LockManager lock_mgr(graph);
    std::mutex mu;
    std::condition_variable cv;
    std::set<int, ReadyOrder> ready(ReadyOrder{&graph});
    std::vector<int> wait(n);
    std::size_t completed = 0;
    int in_flight = 0;
    bool failed = false;
    std::string failure;

    for (std::size_t i = 0; i < n; ++i) {
        wait[i] = graph.task(int(i)).wait_init;
        if (wait[i] == 0) ready.insert(int(i));
    }

    auto worker_fn = [&](int wid) {
        std::unique_lock<std::mutex> lk(mu);
        while (true) {
            if (failed || completed == n) return;

            int claimed = -1;
            bool time_deferred = false;
            std::int64_t now = graph.now_ns();
            for (auto it = ready.begin(); it != ready.end(); ++it) {
                Task& t = graph.task(*it);
                if (t.not_before_ns.load(std::memory_order_relaxed) > now) {
                    time_deferred = true;
                    continue;
                }
                if (lock_mgr.try_acquire(t.locks)) {
                    claimed = *it;
                    ready.erase(it);
                    break;
                }
            }

            if (claimed < 0) {
                if (in_flight == 0 && !time_deferred && completed < n) {
                    std::ostringstream msg;
                    msg << "run_graph: deadlock watchdog: " << (n - completed)
                        << " tasks remaining, none runnable, none in flight; waiting tasks:";
                    int listed = 0;
                    for (std::size_t i = 0; i < n && listed < 8; ++i)
                        if (graph.task(int(i)).end_ns < 0 && wait[i] > 0) {
                            msg << " #" << i << "(" << task_kind_name(graph.task(int(i)).kind)
                                << " wait=" << wait[i] << ")";
                            ++listed;
                        }
                    failed = true;
                    failure = msg.str();
                    cv.notify_all();
                    return;
                }
                cv.wait_for(lk, std::chrono::microseconds(100));
                continue;
            }

            ++in_flight;
            Task& t = graph.task(claimed);
            lk.unlock();

            std::int64_t start = graph.now_ns();
            std::string body_error;
            if (t.body) {
                try {
                    t.body();
                } catch (const std::exception& e) {
                    body_error = e.what();
                } catch (...) {
                    body_error = "unknown exception";
                }
            }
            std::int64_t end = graph.now_ns();
            lock_mgr.release(t.locks);

            if (!body_error.empty()) {
                lk.lock();
                if (!failed) {
                    failed = true;
                    failure = "task #" + std::to_string(claimed) + " (" +
                              std::string(task_kind_name(t.kind)) + ") failed: " + body_error;
                }
                --in_flight;
                cv.notify_all();
                return;
            }

            lk.lock();
            t.start_ns = start;
            t.end_ns = end;
            t.cost_measured = end - start;
            t.worker = wid;
            report.workers[wid].busy_ns += end - start;
            report.workers[wid].tasks_run += 1;
            --in_flight;
            ++completed;
            for (int next : t.unlocks) {
                if (--wait[next] == 0) ready.insert(next);
            }
            // released locks may unblock tasks that were already ready
            cv.notify_all();
        }
    };

    if (n_workers == 1) {
        worker_fn(0);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(n_workers);
        for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker_fn, w);
        for (auto& th : pool) th.join();
    }

    if (failed) throw std::runtime_error(failure);

    report.completed = completed;
    std::int64_t last_end = 0;
    for (std::size_t i = 0; i < n; ++i) last_end = std::max(last_end, graph.task(int(i)).end_ns);
    report.makespan_ns = last_end;
    return report;
}

void dump_report_jsonl(const TaskGraph& graph, std::ostream& os) {
    for (std::size_t i = 0; i < graph.size(); ++i) {
        const Task& t = graph.task(int(i));
        nlohmann::json j{{"task", i},
                         {"kind", task_kind_name(t.kind)},
                         {"rank", t.rank},
                         {"cells", {t.cell_a, t.cell_b}},
                         {"start_ns", t.start_ns},
                         {"end_ns", t.end_ns},
                         {"worker", t.worker}};
        os << j.dump() << '\n';
    }
}

void CostModel::record(TaskKind kind, std::uint64_t work, std::int64_t measured_ns) {
    Slot& s = slots_[int(kind)][std::bit_width(work)];
    if (!s.seeded) {
        s.ema = double(measured_ns);
        s.seeded = true;
    } else {
        s.ema = 0.5 * double(measured_ns) + 0.5 * s.ema;
    }
}

double CostModel::estimate(TaskKind kind, std::uint64_t work) const {
    const Slot& s = slots_[int(kind)][std::bit_width(work)];
    if (s.seeded) return s.ema;
    return double(work);  // static fallback: cost proportional to the work measure
}

void CostModel::absorb(const TaskGraph& graph) {
    for (std::size_t i = 0; i < graph.size(); ++i) {
        const Task& t = graph.task(int(i));
        if (t.end_ns >= 0) record(t.kind, t.work, t.cost_measured);
    }
}

void estimate_costs(TaskGraph& graph, const CostModel& model) {
    for (std::size_t i = 0; i < graph.size(); ++i) {
        Task& t = graph.task(int(i));
        t.cost_estimate = model.estimate(t.kind, t.work);
    }
}

}  // namespace mtsph
