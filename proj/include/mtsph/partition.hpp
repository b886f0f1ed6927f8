#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>

#include "mtsph/cell_graph.hpp"

namespace mtsph {

/// Assignment of top-level cells to ranks.
struct Partition {
    std::vector<int> assignment;
    int n_ranks = 1;
};

struct PartitionQuality {
    double imbalance = 0.0;  // max rank weight / ideal - 1
    double edge_cut = 0.0;
    double max_rank_weight = 0.0;
};

PartitionQuality evaluate_partition(const CellGraph& g, const Partition& p);

/// Index-order slab decomposition along the longest axis; slab sizes
/// differ by at most one layer (one cell when R exceeds the layer count).
Partition partition_grid(std::array<int, 3> top_dims, int R);

struct GraphPartitionOptions {
    double balance_tol = 0.05;
    std::uint64_t seed = 12345;
    int kl_passes = 20;  // 0 disables refinement (used by tests)
};

/// Multilevel partitioner: heavy-edge-matching coarsening to <= 8R nodes,
/// greedy region growth from R spread seeds, then boundary Kernighan-Lin
/// refinement that never increases the edge-cut and keeps balance within
/// tolerance where the move structure allows it.
Partition partition_graph(const CellGraph& g, int R, const GraphPartitionOptions& opts = {});

/// Pluggable partitioner interface, so an external tool can stand in for
/// the built-in multilevel scheme.
class Partitioner {
  public:
    virtual ~Partitioner() = default;
    virtual Partition partition(const CellGraph& g, int R) = 0;
};

class MultilevelPartitioner final : public Partitioner {
  public:
    explicit MultilevelPartitioner(GraphPartitionOptions opts = {}) : opts_(opts) {}
    Partition partition(const CellGraph& g, int R) override {
        return partition_graph(g, R, opts_);
    }

  private:
    GraphPartitionOptions opts_;
};

/// File-based exchange: writes the weighted graph as plain text (one node
/// or edge record per line), then reads an assignment produced out of band.
class FileExchangePartitioner final : public Partitioner {
  public:
    FileExchangePartitioner(std::string graph_path, std::string assignment_path)
        : graph_path_(std::move(graph_path)), assignment_path_(std::move(assignment_path)) {}
    Partition partition(const CellGraph& g, int R) override;

  private:
    std::string graph_path_;
    std::string assignment_path_;
};

/// "node <id> <weight>" and "edge <a> <b> <weight>" records, one per line.
void write_cell_graph(const CellGraph& g, std::ostream& os);
/// "<cell> <rank>" records, one per line.
Partition read_assignment(std::istream& is, int n_cells, int n_ranks);

}  // namespace mtsph
