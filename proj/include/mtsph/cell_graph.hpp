#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "mtsph/particle.hpp"

namespace mtsph {

/// Cell/edge weighting schemes for the domain decomposition.
enum class DecompStrategy { none_none, costs_costs, none_costs, costs_time };

DecompStrategy parse_strategy(std::string_view name);
std::string_view strategy_name(DecompStrategy s);

/// Weighted graph over the top-level cells.
struct CellGraph {
    int n = 0;
    std::vector<double> node_weight;
    struct Edge {
        int a, b;  // a < b
        double w;
    };
    std::vector<Edge> edges;

    double total_node_weight() const {
        double t = 0;
        for (double w : node_weight) t += w;
        return t;
    }
    std::vector<std::vector<std::pair<int, double>>> adjacency() const;
};

/// Raw per-cell accounting the weighting schemes draw from; assembled by
/// the simulation layer from the task graph and cost model.
struct CellGraphInputs {
    int n_top = 0;
    std::vector<double> cell_cost;                    // summed task cost per top cell
    std::map<std::pair<int, int>, double> pair_cost;  // summed pair-task cost per top pair
    std::vector<Tick> next_active_tick;               // earliest next kick tick per top cell
    Tick current_tick = 0;
    int n_bin = 32;
};

/// Apply a weighting strategy. Edges exist for every top-cell pair that
/// carries interactions. Under costs_time an edge touching a soon-active
/// cell is expensive to cut: w = 2^n_bin / ticks-until-next-activity.
CellGraph build_cell_graph(const CellGraphInputs& in, DecompStrategy strategy);

}  // namespace mtsph
