#pragma once

#include "qaoa2/graph.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace qaoa2 {

/// Node-to-subgraph assignment with a hard per-subgraph capacity.
struct Partition {
  std::vector<int> assignment;
  int k = 0;
  int capacity = 0;

  int num_nodes() const { return static_cast<int>(assignment.size()); }
  /// Member lists per subgraph, each sorted by node id.
  std::vector<std::vector<int>> groups() const;
  std::vector<int> sizes() const;
};

/// Builds a partition from raw labels, dropping empty labels and renumbering
/// groups in order of their smallest member.
Partition make_partition(const std::vector<int>& labels, int capacity);

/// Same grouping, labels renumbered in order of each group's smallest member.
Partition canonicalize(const Partition& part);

struct PartitionCheck {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
};

PartitionCheck validate_partition(const Partition& part, const WeightedGraph& g);

int min_subgraph_count(int n, int capacity);

/// Signed-weight modularity Q with m = (1/2) sum_ij A_ij. Returns 0 when m <= 0.
double modularity(const WeightedGraph& g, const std::vector<int>& labels);

/// Nodes with at least one neighbor in another subgraph.
int boundary_count(const WeightedGraph& g, const std::vector<int>& labels);

/// Sum of (signed) weights over edges whose endpoints lie in different subgraphs.
double cross_weight(const WeightedGraph& g, const std::vector<int>& labels);

/// Side information a heuristic may report alongside its partition.
struct PartitionNotes {
  bool random_fallback = false;
};

Partition random_partition(const WeightedGraph& g, int capacity, std::uint64_t seed);

/// Greedy agglomerative (CNM) modularity with merge refusal above capacity.
/// `order_seed`, when set, permutes the node order used for tie-breaking.
Partition modularity_partition(const WeightedGraph& g, int capacity, PartitionNotes* notes = nullptr,
                               std::optional<std::uint64_t> order_seed = std::nullopt);

/// Modularity initialization followed by single-node moves that lower the
/// boundary count, at most N^2 moves.
Partition boundary_partition(const WeightedGraph& g, int capacity, std::uint64_t seed,
                             PartitionNotes* notes = nullptr);

/// Recursive balanced bisection with Kernighan-Lin refinement of each cut.
Partition kl_partition(const WeightedGraph& g, int capacity, std::uint64_t seed);

/// One Kernighan-Lin pass over a two-way split (labels 0/1 on `nodes`).
/// Applies the best positive-gain prefix of swaps and returns that gain.
double kl_pass(const WeightedGraph& g, const std::vector<int>& nodes, std::vector<int>& side);

enum class PartitionerKind { Random, Modularity, Boundary, KernighanLin, Gen };

PartitionerKind parse_partitioner(const std::string& name);
std::string partitioner_name(PartitionerKind kind);

/// Dispatches to one of the four heuristics (Gen is not a heuristic).
Partition run_heuristic(PartitionerKind kind, const WeightedGraph& g, int capacity, std::uint64_t seed,
                        PartitionNotes* notes = nullptr);

}  // namespace qaoa2
