#include "qaoa2/solver.hpp"

#include "qaoa2/rng.hpp"

#include <chrono>
#include <limits>
#include <map>
#include <stdexcept>

namespace qaoa2 {

void SimConfig::validate() const {
  if (max_nodes < 2) throw std::invalid_argument("max_nodes must be at least 2");
  if (max_nodes > qubit_cap) throw std::invalid_argument("max_nodes exceeds the qubit cap");
  if (p < 1) throw std::invalid_argument("p must be at least 1");
  if (steps < 0) throw std::invalid_argument("steps must be non-negative");
  if (shots < 1) throw std::invalid_argument("shots must be positive");
  noise.validate();
}

std::vector<WeightedGraph> split_subgraphs(const WeightedGraph& g, const Partition& part) {
  const auto check = validate_partition(part, g);
  if (!check.ok()) throw std::invalid_argument("invalid partition: " + check.violations.front());
  const auto groups = part.groups();
  std::vector<int> local(static_cast<std::size_t>(g.num_nodes()));
  for (const auto& members : groups) {
    for (std::size_t i = 0; i < members.size(); ++i) local[members[i]] = static_cast<int>(i);
  }
  std::vector<std::vector<Edge>> edges(groups.size());
  for (const Edge& e : g.edges()) {
    const int a = part.assignment[e.u];
    if (a == part.assignment[e.v]) edges[a].push_back({local[e.u], local[e.v], e.w});
  }
  std::vector<WeightedGraph> out;
  out.reserve(groups.size());
  for (std::size_t j = 0; j < groups.size(); ++j) {
    out.emplace_back(static_cast<int>(groups[j].size()), std::move(edges[j]));
  }
  return out;
}

SubSolution solve_subgraph(const WeightedGraph& sub, const QaoaAngles& init, const SimConfig& cfg,
                           std::uint64_t seed) {
  check_qubits(sub.num_nodes(), cfg.qubit_cap);
  SubSolution sol;
  sol.nodes.resize(static_cast<std::size_t>(sub.num_nodes()));
  for (int i = 0; i < sub.num_nodes(); ++i) sol.nodes[i] = i;
  if (sub.num_edges() == 0) {
    sol.spins = SpinVector::Ones(sub.num_nodes());
    return sol;
  }

  const WeightedGraph scaled = normalize_edge_weights(sub);
  OptimizeOptions opts;
  opts.steps = cfg.steps;
  opts.lr = cfg.lr;
  opts.noise = cfg.noise;
  opts.seed = derive_seed({seed, 1});
  opts.cap = cfg.qubit_cap;
  const QaoaAngles angles = optimize_angles(scaled, init, opts);

  std::mt19937_64 rng(derive_seed({seed, 2}));
  const QaoaCircuit<double> circuit(scaled, cfg.qubit_cap);
  const auto samples = sample_basis_states(circuit.state(angles), cfg.shots, rng);
  double best = -std::numeric_limits<double>::infinity();
  double total = 0.0;
  std::uint64_t best_basis = 0;
  for (std::uint64_t b : samples) {
    b = apply_readout_flips(b, sub.num_nodes(), cfg.noise.readout_bitphase_p, rng);
    const double value = circuit.diagonal()(static_cast<Eigen::Index>(b));
    total += value;
    if (value > best) {
      best = value;
      best_basis = b;
    }
  }
  sol.spins = basis_to_spins(best_basis, sub.num_nodes());
  sol.cut = cut_value(sub, sol.spins);
  sol.mean_sampled_cut = total / static_cast<double>(samples.size()) * sub.max_abs_weight();
  return sol;
}

WeightedGraph build_merge_graph(const WeightedGraph& g, const Partition& part,
                                const std::vector<SubSolution>& subs) {
  if (static_cast<int>(subs.size()) != part.k) {
    throw std::invalid_argument("one sub-solution per subgraph required");
  }
  std::vector<int> spin(static_cast<std::size_t>(g.num_nodes()), 0);
  for (const auto& sub : subs) {
    for (std::size_t i = 0; i < sub.nodes.size(); ++i) spin[sub.nodes[i]] = sub.spins(static_cast<Eigen::Index>(i));
  }
  std::map<std::pair<int, int>, double> weights;
  for (const Edge& e : g.edges()) {
    int a = part.assignment[e.u];
    int b = part.assignment[e.v];
    if (a == b) continue;
    if (a > b) std::swap(a, b);
    weights[{a, b}] += e.w * spin[e.u] * spin[e.v];
  }
  std::vector<Edge> edges;
  edges.reserve(weights.size());
  for (auto [key, w] : weights) edges.push_back({key.first, key.second, w});
  return WeightedGraph(part.k, std::move(edges));
}

SpinVector propagate_polarities(int num_nodes, const std::vector<SubSolution>& subs, const SpinVector& s) {
  if (s.size() != static_cast<Eigen::Index>(subs.size())) {
    throw std::invalid_argument("polarity vector length must equal the subgraph count");
  }
  SpinVector z = SpinVector::Zero(num_nodes);
  for (std::size_t i = 0; i < subs.size(); ++i) {
    for (std::size_t j = 0; j < subs[i].nodes.size(); ++j) {
      z(subs[i].nodes[j]) = s(static_cast<Eigen::Index>(i)) * subs[i].spins(static_cast<Eigen::Index>(j));
    }
  }
  return z;
}

HeuristicPolicy::HeuristicPolicy(PartitionerKind kind, int max_nodes, int p)
    : kind_(kind), max_nodes_(max_nodes), p_(p) {
  if (kind == PartitionerKind::Gen) throw std::invalid_argument("gen requires a trained generator");
}

Proposal HeuristicPolicy::propose(const WeightedGraph& g, int level, std::uint64_t seed) {
  PartitionNotes notes;
  Proposal out;
  out.partition = run_heuristic(kind_, g, max_nodes_, derive_seed({seed, 11, static_cast<std::uint64_t>(level)}),
                                &notes);
  random_fallback = random_fallback || notes.random_fallback;
  std::mt19937_64 rng(derive_seed({seed, 12, static_cast<std::uint64_t>(level)}));
  for (int j = 0; j < out.partition.k; ++j) out.angles.push_back(QaoaAngles::uniform(p_, rng));
  return out;
}

QaoaAngles HeuristicPolicy::direct_angles(const WeightedGraph&, int level, std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed({seed, 13, static_cast<std::uint64_t>(level)}));
  return QaoaAngles::uniform(p_, rng);
}

namespace {

SpinVector solve_level(const WeightedGraph& g, PartitionPolicy& policy, const SimConfig& cfg, std::uint64_t seed,
                       int level, std::vector<LevelStats>& levels) {
  const std::uint64_t lvl = static_cast<std::uint64_t>(level);
  if (g.num_nodes() <= cfg.max_nodes) {
    levels.push_back({g.num_nodes(), 1, 1});
    if (cfg.exact_merge && level > 0) return brute_force_maxcut(g).spins;
    const QaoaAngles init = policy.direct_angles(g, level, seed);
    return solve_subgraph(g, init, cfg, derive_seed({seed, 21, lvl})).spins;
  }

  Proposal proposal = policy.propose(g, level, seed);
  const Partition& part = proposal.partition;
  if (part.capacity > cfg.max_nodes) throw std::invalid_argument("partition capacity exceeds max_nodes");
  if (part.k >= g.num_nodes()) throw std::runtime_error("partition does not reduce the problem size");
  if (static_cast<int>(proposal.angles.size()) != part.k) {
    throw std::invalid_argument("proposal must carry one angle set per subgraph");
  }
  const auto subgraphs = split_subgraphs(g, part);
  const auto groups = part.groups();
  levels.push_back({g.num_nodes(), part.k, part.k});

  std::vector<SubSolution> subs;
  subs.reserve(subgraphs.size());
  for (std::size_t j = 0; j < subgraphs.size(); ++j) {
    SubSolution sol = solve_subgraph(subgraphs[j], proposal.angles[j], cfg,
                                     derive_seed({seed, 22, lvl, static_cast<std::uint64_t>(j)}));
    sol.nodes = groups[j];
    subs.push_back(std::move(sol));
  }
  const WeightedGraph merged = build_merge_graph(g, part, subs);
  const SpinVector s = solve_level(merged, policy, cfg, seed, level + 1, levels);
  return propagate_polarities(g.num_nodes(), subs, s);
}

}  // namespace

SolveReport recursive_solve(const WeightedGraph& g, PartitionPolicy& policy, const SimConfig& cfg,
                            std::uint64_t seed, std::optional<double> opt) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  SolveReport report;
  if (g.num_nodes() == 0) throw std::invalid_argument("empty graph");
  report.spins = solve_level(g, policy, cfg, seed, 0, report.levels);
  report.cut = cut_value(g, report.spins);
  for (const auto& l : report.levels) report.total_calls += l.calls;
  if (opt) report.rho = performance_ratio(report.cut, *opt, g.negative_weight());
  report.random_fallback = policy.random_fallback;
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace qaoa2
