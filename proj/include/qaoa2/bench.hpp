#pragma once

#include "qaoa2/gen.hpp"
#include "qaoa2/graph.hpp"
#include "qaoa2/solver.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace qaoa2::bench {

struct Instance {
  std::string name;
  WeightedGraph graph;
  std::optional<double> opt;
};

/// Loads every file in `paths` (directories are expanded, sorted by name) and
/// attaches OPT from the table when present.
std::vector<Instance> load_instances(const std::vector<std::filesystem::path>& paths, InstanceFormat format,
                                     const BestKnownTable* table = nullptr);

/// OPT from the instance, else brute force for small graphs; throws when neither applies.
double resolve_opt(const Instance& inst);

enum class SplitSide { Train, Test };

/// Names whose last character is 1 or 2 are test instances. Names that do not
/// end in a digit go to train with a warning.
SplitSide split_side(const std::string& name);

struct SuiteSplit {
  std::vector<Instance> train;
  std::vector<Instance> test;
};

SuiteSplit split_suite(const std::vector<Instance>& instances);

using PolicyFactory = std::function<std::unique_ptr<PartitionPolicy>()>;

struct Method {
  std::string name;
  PolicyFactory make;
};

Method heuristic_method(PartitionerKind kind, int max_nodes, int p);

/// Each policy owns copies of the networks, so instances can run concurrently.
Method gen_method(const gen::Generator& generator, const gen::Evaluator& evaluator, const gen::TtaConfig& tta,
                  std::string name = "gen");

struct RunConfig {
  int p = 1;
  int max_nodes = 10;
  int steps = 20;
  double lr = 0.01;
  int shots = 1000;
  int runs = 10;
  std::uint64_t seed = 42;
  NoiseSpec noise;
  int tta_steps = gen::kDefaultTtaSteps;
  bool exact_merge = false;
  int workers = 1;

  SimConfig sim() const;
  void validate() const;
};

/// seed xor hash(name, run), independent of method and scheduling.
std::uint64_t run_seed(const RunConfig& cfg, const std::string& instance, int run);

struct Cell {
  std::string instance;
  int num_nodes = 0;
  std::string method;
  std::vector<double> rho;
  std::vector<double> cut;
  double mean = 0.0;
  double std = 0.0;
  int rank = 0;
  bool win = false;
  double wall_seconds = 0.0;
  int total_calls = 0;
  int random_fallbacks = 0;
};

/// Instance-major grid of cells.
struct ResultTable {
  std::vector<std::string> methods;
  std::vector<Cell> cells;

  std::size_t num_instances() const { return methods.empty() ? 0 : cells.size() / methods.size(); }
  const Cell& at(std::size_t instance, std::size_t method) const { return cells[instance * methods.size() + method]; }
  Cell& at(std::size_t instance, std::size_t method) { return cells[instance * methods.size() + method]; }
};

/// Sample mean and standard deviation (n - 1 denominator, 0 for one value).
void fill_moments(Cell& cell);

/// Ranks by descending mean per instance; equal means share the smallest rank.
void assign_ranks(ResultTable& table);

using CellCallback = std::function<void(const Cell&)>;

ResultTable evaluate_suite(const std::vector<Instance>& instances, const std::vector<Method>& methods,
                           const RunConfig& cfg, const CellCallback& on_cell = {});

struct MethodSummary {
  std::string method;
  double mean_rho = 0.0;
  double mean_rank = 0.0;
  int wins = 0;
};

std::vector<MethodSummary> summarize(const ResultTable& table);

struct SizeAggregate {
  int num_nodes = 0;
  std::string method;
  double mean_rho = 0.0;
  int instances = 0;
};

std::vector<SizeAggregate> size_aggregates(const ResultTable& table);

struct TTestResult {
  double t = 0.0;
  int dof = 0;
  double p_value = 0.0;
  double mean_diff = 0.0;
};

/// One-sided paired t-test of H1: mean(a - b) > 0. All-zero differences give
/// t = 0 and p = 0.5.
TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b);

/// Per-instance means of one method, in table order.
std::vector<double> method_means(const ResultTable& table, const std::string& method);

std::string to_csv(const ResultTable& table);
std::string aggregates_csv(const std::vector<SizeAggregate>& rows);
nlohmann::json to_json(const ResultTable& table);
ResultTable table_from_json(const nlohmann::json& j);

/// Writes <prefix>.csv, <prefix>.json and <prefix>.sizes.csv.
void write_report(const ResultTable& table, const std::filesystem::path& prefix);

struct NoiseStudy {
  ResultTable clean;
  ResultTable noisy;
  /// Mean over instances of clean minus noisy mean ratio, per method.
  std::vector<double> degradation;
};

NoiseStudy noise_study(const std::vector<Instance>& instances, const std::vector<Method>& methods,
                       const RunConfig& cfg, double readout_p);

/// G(n, q) with independent +1/-1 weights.
WeightedGraph signed_erdos_renyi(int n, double edge_prob, std::uint64_t seed);

struct PlantedGraph {
  WeightedGraph graph;
  SpinVector spins;
  double opt = 0.0;
};

/// Positive weights only across a hidden bipartition and negative weights only
/// inside it, so the hidden cut attains the upper bound sum(w > 0).
PlantedGraph planted_signed_graph(int n, double edge_prob, std::uint64_t seed);

/// Brute force up to 24 nodes, otherwise the best of seeded annealing restarts
/// polished by single-flip descent.
double best_known_estimate(const WeightedGraph& g, int restarts, std::uint64_t seed);

struct SyntheticConfig {
  int count = 30;
  int min_nodes = 20;
  int max_nodes = 60;
  double edge_prob = 0.2;
  int estimate_restarts = 64;
  std::uint64_t seed = 42;
  std::string prefix = "er";
};

/// Signed ER instances named <prefix><N>_<i>.<d> with OPT from best_known_estimate.
std::vector<Instance> synthetic_suite(const SyntheticConfig& cfg);

}  // namespace qaoa2::bench
