#pragma once

#include "qaoa2/graph.hpp"
#include "qaoa2/partition.hpp"
#include "qaoa2/qaoa.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

namespace qaoa2 {

/// Simulation protocol shared by every subproblem solve.
struct SimConfig {
  int max_nodes = 10;
  int p = 1;
  int steps = 20;
  double lr = 0.01;
  int shots = 1000;
  NoiseSpec noise;
  int qubit_cap = kDefaultQubitCap;
  /// Brute force instead of QAOA for merge-level solves that fit the device.
  bool exact_merge = false;

  void validate() const;
};

struct SubSolution {
  std::vector<int> nodes;
  SpinVector spins;
  double cut = 0.0;
  /// Average cut over the measured samples (equals `cut` when short-circuited).
  double mean_sampled_cut = 0.0;
};

/// Induced subgraphs in partition order, nodes relabeled by ascending id.
std::vector<WeightedGraph> split_subgraphs(const WeightedGraph& g, const Partition& part);

/// Optimizes the angles on the max|w|-normalized subgraph, samples, and keeps
/// the best sampled cut (measured on the unnormalized subgraph).
SubSolution solve_subgraph(const WeightedGraph& sub, const QaoaAngles& init, const SimConfig& cfg,
                           std::uint64_t seed);

/// w'_ij = sum over edges (u in G_i, v in G_j) of w_uv z_u z_v.
WeightedGraph build_merge_graph(const WeightedGraph& g, const Partition& part,
                                const std::vector<SubSolution>& subs);

/// Node u in subgraph i receives s_i * z_u.
SpinVector propagate_polarities(int num_nodes, const std::vector<SubSolution>& subs, const SpinVector& s);

/// A partition plus one initial angle set per subgraph.
struct Proposal {
  Partition partition;
  std::vector<QaoaAngles> angles;
};

/// Supplies partitions and initial angles at every recursion level.
class PartitionPolicy {
 public:
  virtual ~PartitionPolicy() = default;
  virtual Proposal propose(const WeightedGraph& g, int level, std::uint64_t seed) = 0;
  /// Initial angles for a graph that is solved without partitioning.
  virtual QaoaAngles direct_angles(const WeightedGraph& g, int level, std::uint64_t seed) = 0;
  /// Set when a heuristic had to fall back to a random partition.
  bool random_fallback = false;
};

/// One of the baseline heuristics with U[0, 2pi) angles.
class HeuristicPolicy : public PartitionPolicy {
 public:
  HeuristicPolicy(PartitionerKind kind, int max_nodes, int p);
  Proposal propose(const WeightedGraph& g, int level, std::uint64_t seed) override;
  QaoaAngles direct_angles(const WeightedGraph& g, int level, std::uint64_t seed) override;

 private:
  PartitionerKind kind_;
  int max_nodes_;
  int p_;
};

struct LevelStats {
  int num_nodes = 0;
  int k = 0;
  int calls = 0;
};

struct SolveReport {
  SpinVector spins;
  double cut = 0.0;
  std::optional<double> rho;
  std::vector<LevelStats> levels;
  int total_calls = 0;
  double wall_seconds = 0.0;
  bool random_fallback = false;
};

SolveReport recursive_solve(const WeightedGraph& g, PartitionPolicy& policy, const SimConfig& cfg,
                            std::uint64_t seed, std::optional<double> opt = std::nullopt);

}  // namespace qaoa2
