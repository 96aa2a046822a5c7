#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace qaoa2 {

using SpinVector = Eigen::VectorXi;

struct Edge {
  int u = 0;
  int v = 0;
  double w = 0.0;
};

/// Signed, weighted, undirected simple graph with 0-based node ids.
///
/// Zero-weight edges are dropped on construction; self loops and repeated
/// unordered pairs are rejected.
class WeightedGraph {
 public:
  WeightedGraph() = default;
  WeightedGraph(int num_nodes, std::vector<Edge> edges);

  int num_nodes() const { return num_nodes_; }
  std::size_t num_edges() const { return edges_.size(); }
  const std::vector<Edge>& edges() const { return edges_; }

  /// (neighbor, weight) pairs of node `u`, sorted by neighbor id.
  const std::vector<std::pair<int, double>>& neighbors(int u) const { return adjacency_[u]; }

  Eigen::MatrixXd adjacency_matrix() const;

  double positive_weight() const;
  /// Sum of negative weights, Neg(G) <= 0.
  double negative_weight() const;
  double total_weight() const;
  double max_abs_weight() const;

 private:
  int num_nodes_ = 0;
  std::vector<Edge> edges_;
  std::vector<std::vector<std::pair<int, double>>> adjacency_;
};

/// f(x) = sum_ij Q_ij x_i x_j + sum_i c_i x_i over x in {0,1}^n. Q is kept
/// symmetric with a zero diagonal; diagonal entries are folded into c.
struct QuboInstance {
  int n = 0;
  Eigen::MatrixXd Q;
  Eigen::VectorXd c;

  double evaluate(const Eigen::VectorXi& x) const;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& path, int line, const std::string& what);
  int line() const { return line_; }

 private:
  int line_;
};

enum class InstanceFormat { EdgeList, Qubo };

InstanceFormat parse_format(const std::string& name);

std::variant<WeightedGraph, QuboInstance> parse_instance(const std::filesystem::path& path,
                                                         InstanceFormat format);
WeightedGraph parse_edge_list(std::istream& in, const std::string& source = "<stream>");
QuboInstance parse_qubo(std::istream& in, const std::string& source = "<stream>");

/// Loads either format and returns the MaxCut graph (QUBO files are reduced).
WeightedGraph load_maxcut_graph(const std::filesystem::path& path, InstanceFormat format);

void write_edge_list(std::ostream& out, const WeightedGraph& g);

struct MaxCutReduction {
  WeightedGraph graph;
  /// min_x f(x) = offset - maxcut(graph).
  double offset = 0.0;
};

/// Ising reduction through x_i = (1 - z_i)/2; node 0 is the auxiliary spin and
/// variable i maps to node i + 1.
MaxCutReduction qubo_to_maxcut(const QuboInstance& q);

/// Spins for `x` under the reduction above, with the auxiliary spin at +1.
SpinVector embed_qubo_assignment(const Eigen::VectorXi& x);

WeightedGraph normalize_edge_weights(const WeightedGraph& g);

/// Graph scaled by `factor` (edge structure unchanged).
WeightedGraph scale_edge_weights(const WeightedGraph& g, double factor);

template <typename Derived>
double cut_value(const WeightedGraph& g, const Eigen::MatrixBase<Derived>& z) {
  if (z.size() != g.num_nodes()) {
    throw std::invalid_argument("cut_value: spin vector has " + std::to_string(z.size()) +
                                " entries, graph has " + std::to_string(g.num_nodes()) + " nodes");
  }
  double cut = 0.0;
  for (const Edge& e : g.edges()) {
    if (z(e.u) != z(e.v)) cut += e.w;
  }
  return cut;
}

bool is_spin_vector(const SpinVector& z);

/// (cut - neg) / (opt - neg). Throws when opt - neg <= 0; warns when the cut
/// beats `opt`.
double performance_ratio(double cut, double opt, double neg);

struct BruteForceResult {
  double value = 0.0;
  SpinVector spins;
};

/// Exact MaxCut by Gray-code enumeration with node 0 pinned to +1.
BruteForceResult brute_force_maxcut(const WeightedGraph& g, int max_nodes = 24);

class BestKnownTable {
 public:
  static BestKnownTable load(const std::filesystem::path& path);
  static BestKnownTable parse(std::istream& in, const std::string& source = "<stream>");

  void set(const std::string& name, double value);
  bool contains(const std::string& name) const;
  double at(const std::string& name) const;
  std::size_t size() const { return values_.size(); }

 private:
  std::map<std::string, double> values_;
};

/// OPT(G): brute force for N <= 20, else the best-known table.
double optimum_value(const WeightedGraph& g, const std::string& name, const BestKnownTable* table);

/// File name without directory; alphabetic extensions are stripped so that
/// "g05_100.1" keeps its numeric suffix.
std::string instance_name(const std::filesystem::path& path);

/// FNV-1a over the canonical edge list text.
std::uint64_t graph_hash(const WeightedGraph& g);

}  // namespace qaoa2
