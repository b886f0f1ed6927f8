#include "mtsph/cell_graph.hpp"

#include <algorithm>
#include <cmath>

namespace mtsph {

DecompStrategy parse_strategy(std::string_view name) {
    if (name == "none_none" || name == "none/none") return DecompStrategy::none_none;
    if (name == "costs_costs" || name == "costs/costs") return DecompStrategy::costs_costs;
    if (name == "none_costs" || name == "none/costs") return DecompStrategy::none_costs;
    if (name == "costs_time" || name == "costs/time") return DecompStrategy::costs_time;
    throw std::invalid_argument("unknown decomposition strategy: " + std::string(name));
}

std::string_view strategy_name(DecompStrategy s) {
    switch (s) {
        case DecompStrategy::none_none: return "none_none";
        case DecompStrategy::costs_costs: return "costs_costs";
        case DecompStrategy::none_costs: return "none_costs";
        case DecompStrategy::costs_time: return "costs_time";
    }
    return "?";
}

std::vector<std::vector<std::pair<int, double>>> CellGraph::adjacency() const {
    std::vector<std::vector<std::pair<int, double>>> adj(n);
    for (const Edge& e : edges) {
        adj[e.a].emplace_back(e.b, e.w);
        adj[e.b].emplace_back(e.a, e.w);
    }
    return adj;
}

CellGraph build_cell_graph(const CellGraphInputs& in, DecompStrategy strategy) {
    CellGraph g;
    g.n = in.n_top;
    g.node_weight.assign(in.n_top, 1.0);

    const bool cost_nodes =
        strategy == DecompStrategy::costs_costs || strategy == DecompStrategy::costs_time;
    if (cost_nodes) g.node_weight = in.cell_cost;

    const Tick span = Tick{1} << in.n_bin;
    for (const auto& [key, cost] : in.pair_cost) {
        auto [a, b] = key;
        double w = 1.0;
        switch (strategy) {
            case DecompStrategy::none_none:
                w = 1.0;
                break;
            case DecompStrategy::costs_costs:
            case DecompStrategy::none_costs:
                w = cost;
                break;
            case DecompStrategy::costs_time: {
                Tick next = std::min(in.next_active_tick[a], in.next_active_tick[b]);
                Tick delta = next > in.current_tick ? next - in.current_tick : Tick{1};
                if (delta > span) delta = span;
                w = double(span) / double(delta);
                break;
            }
        }
        g.edges.push_back({a, b, w});
    }
    return g;
}

}  // namespace mtsph
