#include "qaoa2/partition.hpp"

#include "qaoa2/log.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <map>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

namespace qaoa2 {

std::vector<std::vector<int>> Partition::groups() const {
  std::vector<std::vector<int>> out(static_cast<std::size_t>(std::max(k, 0)));
  for (int u = 0; u < num_nodes(); ++u) {
    const int label = assignment[static_cast<std::size_t>(u)];
    if (label >= 0 && label < k) out[static_cast<std::size_t>(label)].push_back(u);
  }
  return out;
}

std::vector<int> Partition::sizes() const {
  std::vector<int> out(static_cast<std::size_t>(std::max(k, 0)), 0);
  for (int label : assignment) {
    if (label >= 0 && label < k) ++out[static_cast<std::size_t>(label)];
  }
  return out;
}

Partition make_partition(const std::vector<int>& labels, int capacity) {
  std::map<int, int> relabel;
  for (int label : labels) {
    if (label < 0) throw std::invalid_argument("negative subgraph label");
    relabel.try_emplace(label, -1);
  }
  // Labels are visited in node order, so first appearance = smallest member.
  Partition part;
  part.capacity = capacity;
  part.assignment.resize(labels.size());
  int next = 0;
  for (std::size_t u = 0; u < labels.size(); ++u) {
    int& mapped = relabel[labels[u]];
    if (mapped < 0) mapped = next++;
    part.assignment[u] = mapped;
  }
  part.k = next;
  return part;
}

Partition canonicalize(const Partition& part) { return make_partition(part.assignment, part.capacity); }

int min_subgraph_count(int n, int capacity) {
  if (capacity < 1) throw std::invalid_argument("capacity must be positive");
  return (n + capacity - 1) / capacity;
}

PartitionCheck validate_partition(const Partition& part, const WeightedGraph& g) {
  PartitionCheck check;
  auto& v = check.violations;
  if (part.capacity < 1) {
    v.push_back("capacity must be positive");
    return check;
  }
  if (part.num_nodes() != g.num_nodes()) {
    v.push_back("assignment covers " + std::to_string(part.num_nodes()) + " nodes, graph has " +
                std::to_string(g.num_nodes()));
  }
  for (int u = 0; u < part.num_nodes(); ++u) {
    const int label = part.assignment[static_cast<std::size_t>(u)];
    if (label < 0 || label >= part.k) v.push_back("node " + std::to_string(u) + " is unassigned");
  }
  const auto sizes = part.sizes();
  for (std::size_t j = 0; j < sizes.size(); ++j) {
    if (sizes[j] > part.capacity) {
      v.push_back("subgraph " + std::to_string(j) + " has " + std::to_string(sizes[j]) +
                  " nodes, capacity is " + std::to_string(part.capacity));
    }
  }
  if (part.k < min_subgraph_count(g.num_nodes(), part.capacity)) {
    v.push_back("k = " + std::to_string(part.k) + " is below ceil(N / capacity)");
  }
  return check;
}

double modularity(const WeightedGraph& g, const std::vector<int>& labels) {
  const double m = g.total_weight();
  if (m <= 0.0) return 0.0;
  std::map<int, double> internal;
  std::map<int, double> strength;
  for (const Edge& e : g.edges()) {
    strength[labels[e.u]] += e.w;
    strength[labels[e.v]] += e.w;
    if (labels[e.u] == labels[e.v]) internal[labels[e.u]] += e.w;
  }
  double q = 0.0;
  for (auto [c, d] : strength) q += internal[c] / m - (d / (2.0 * m)) * (d / (2.0 * m));
  return q;
}

namespace {

bool is_boundary(const WeightedGraph& g, const std::vector<int>& labels, int u) {
  for (auto [v, w] : g.neighbors(u)) {
    if (labels[v] != labels[u]) return true;
  }
  return false;
}

WeightedGraph permute_graph(const WeightedGraph& g, const std::vector<int>& new_id) {
  std::vector<Edge> edges;
  edges.reserve(g.edges().size());
  for (const Edge& e : g.edges()) edges.push_back({new_id[e.u], new_id[e.v], e.w});
  return WeightedGraph(g.num_nodes(), std::move(edges));
}

std::vector<int> cnm_labels(const WeightedGraph& g, int capacity) {
  const int n = g.num_nodes();
  const double m = g.total_weight();
  std::vector<std::map<int, double>> between(n);
  std::vector<double> strength(n, 0.0);
  std::vector<int> size(n, 1);
  std::vector<int> label(n);
  std::iota(label.begin(), label.end(), 0);
  for (const Edge& e : g.edges()) {
    between[e.u][e.v] += e.w;
    between[e.v][e.u] += e.w;
    strength[e.u] += e.w;
    strength[e.v] += e.w;
  }

  for (;;) {
    int best_a = -1, best_b = -1;
    double best_gain = 0.0;
    for (int a = 0; a < n; ++a) {
      for (auto it = between[a].upper_bound(a); it != between[a].end(); ++it) {
        const int b = it->first;
        if (size[a] + size[b] > capacity) continue;
        const double gain = it->second / m - strength[a] * strength[b] / (2.0 * m * m);
        if (gain > best_gain) {
          best_gain = gain;
          best_a = a;
          best_b = b;
        }
      }
    }
    if (best_a < 0) break;

    // Fold community b into a.
    for (auto [c, w] : between[best_b]) {
      if (c == best_a) continue;
      between[best_a][c] += w;
      between[c][best_a] += w;
      between[c].erase(best_b);
    }
    between[best_a].erase(best_b);
    between[best_b].clear();
    strength[best_a] += strength[best_b];
    size[best_a] += size[best_b];
    size[best_b] = 0;
    for (int& l : label) {
      if (l == best_b) l = best_a;
    }
  }
  return label;
}

}  // namespace

int boundary_count(const WeightedGraph& g, const std::vector<int>& labels) {
  int count = 0;
  for (int u = 0; u < g.num_nodes(); ++u) count += is_boundary(g, labels, u) ? 1 : 0;
  return count;
}

double cross_weight(const WeightedGraph& g, const std::vector<int>& labels) {
  double total = 0.0;
  for (const Edge& e : g.edges()) {
    if (labels[e.u] != labels[e.v]) total += e.w;
  }
  return total;
}

Partition random_partition(const WeightedGraph& g, int capacity, std::uint64_t seed) {
  const int n = g.num_nodes();
  min_subgraph_count(n, capacity);
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> labels(n);
  for (int i = 0; i < n; ++i) labels[order[i]] = i / capacity;
  Partition part;
  part.assignment = std::move(labels);
  part.k = min_subgraph_count(n, capacity);
  part.capacity = capacity;
  return part;
}

Partition modularity_partition(const WeightedGraph& g, int capacity, PartitionNotes* notes,
                               std::optional<std::uint64_t> order_seed) {
  const int n = g.num_nodes();
  min_subgraph_count(n, capacity);
  if (g.total_weight() <= 0.0) {
    warn("modularity undefined for non-positive total weight; using a random partition");
    if (notes) notes->random_fallback = true;
    return random_partition(g, capacity, order_seed.value_or(0));
  }

  std::vector<int> labels;
  if (order_seed) {
    std::vector<int> new_id(n);
    std::iota(new_id.begin(), new_id.end(), 0);
    std::mt19937_64 rng(*order_seed);
    std::shuffle(new_id.begin(), new_id.end(), rng);
    const auto permuted = cnm_labels(permute_graph(g, new_id), capacity);
    labels.resize(n);
    for (int u = 0; u < n; ++u) labels[u] = permuted[new_id[u]];
  } else {
    labels = cnm_labels(g, capacity);
  }

  Partition part = make_partition(labels, capacity);
  if (part.k == n && n > 1 && capacity > 1) {
    // Nothing merged; pack singletons so the merged problem is smaller.
    for (int u = 0; u < n; ++u) labels[u] = u / capacity;
    part = make_partition(labels, capacity);
  }
  return part;
}

Partition boundary_partition(const WeightedGraph& g, int capacity, std::uint64_t seed, PartitionNotes* notes) {
  const int n = g.num_nodes();
  Partition init = modularity_partition(g, capacity, notes);
  std::vector<int> labels = init.assignment;
  std::vector<int> size(static_cast<std::size_t>(n), 0);
  for (int l : labels) ++size[l];

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  auto local_boundary = [&](int v) {
    int count = is_boundary(g, labels, v) ? 1 : 0;
    for (auto [u, w] : g.neighbors(v)) count += is_boundary(g, labels, u) ? 1 : 0;
    return count;
  };

  const long long move_limit = static_cast<long long>(n) * n;
  long long moves = 0;
  bool improved = true;
  while (improved && moves < move_limit) {
    improved = false;
    for (int v : order) {
      const int home = labels[v];
      std::vector<int> targets;
      for (auto [u, w] : g.neighbors(v)) {
        if (labels[u] != home) targets.push_back(labels[u]);
      }
      std::sort(targets.begin(), targets.end());
      targets.erase(std::unique(targets.begin(), targets.end()), targets.end());
      if (targets.empty()) continue;

      const int before = local_boundary(v);
      int best_target = -1;
      int best_after = before;
      for (int t : targets) {
        if (size[t] >= capacity) continue;
        labels[v] = t;
        const int after = local_boundary(v);
        labels[v] = home;
        if (after < best_after) {
          best_after = after;
          best_target = t;
        }
      }
      if (best_target < 0) continue;
      labels[v] = best_target;
      --size[home];
      ++size[best_target];
      improved = true;
      if (++moves >= move_limit) break;
    }
  }
  return make_partition(labels, capacity);
}

double kl_pass(const WeightedGraph& g, const std::vector<int>& nodes, std::vector<int>& side) {
  const int n = static_cast<int>(nodes.size());
  std::vector<int> local(static_cast<std::size_t>(g.num_nodes()), -1);
  for (int i = 0; i < n; ++i) local[nodes[i]] = i;
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (auto [v, wt] : g.neighbors(nodes[i])) {
      if (local[v] >= 0) w(i, local[v]) = wt;
    }
  }

  // D_i = external - internal weight.
  Eigen::VectorXd d = Eigen::VectorXd::Zero(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) d(i) += side[i] != side[j] ? w(i, j) : -w(i, j);
  }

  std::vector<bool> locked(n, false);
  std::vector<std::pair<int, int>> swaps;
  std::vector<double> cumulative;
  double running = 0.0;
  for (;;) {
    int best_a = -1, best_b = -1;
    double best = -std::numeric_limits<double>::infinity();
    for (int a = 0; a < n; ++a) {
      if (locked[a] || side[a] != 0) continue;
      for (int b = 0; b < n; ++b) {
        if (locked[b] || side[b] != 1) continue;
        const double gain = d(a) + d(b) - 2.0 * w(a, b);
        if (gain > best) {
          best = gain;
          best_a = a;
          best_b = b;
        }
      }
    }
    if (best_a < 0) break;
    locked[best_a] = locked[best_b] = true;
    for (int x = 0; x < n; ++x) {
      if (locked[x]) continue;
      // a leaves side 0, b leaves side 1.
      if (side[x] == 0) {
        d(x) += 2.0 * w(x, best_a) - 2.0 * w(x, best_b);
      } else {
        d(x) += 2.0 * w(x, best_b) - 2.0 * w(x, best_a);
      }
    }
    running += best;
    swaps.emplace_back(best_a, best_b);
    cumulative.push_back(running);
  }

  int best_prefix = 0;
  double best_gain = 1e-12;
  for (std::size_t i = 0; i < cumulative.size(); ++i) {
    if (cumulative[i] > best_gain) {
      best_gain = cumulative[i];
      best_prefix = static_cast<int>(i) + 1;
    }
  }
  for (int i = 0; i < best_prefix; ++i) std::swap(side[swaps[i].first], side[swaps[i].second]);
  return best_prefix > 0 ? best_gain : 0.0;
}

Partition kl_partition(const WeightedGraph& g, int capacity, std::uint64_t seed) {
  const int n = g.num_nodes();
  min_subgraph_count(n, capacity);
  std::mt19937_64 rng(seed);
  std::vector<int> labels(static_cast<std::size_t>(n), -1);
  int next_label = 0;

  constexpr int kMaxPasses = 64;
  auto bisect = [&](auto&& self, std::vector<int> nodes) -> void {
    if (static_cast<int>(nodes.size()) <= capacity) {
      for (int u : nodes) labels[u] = next_label;
      ++next_label;
      return;
    }
    std::sort(nodes.begin(), nodes.end());
    std::vector<int> shuffled = nodes;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const std::size_t half = (nodes.size() + 1) / 2;
    std::vector<int> side_of(static_cast<std::size_t>(n), 0);
    for (std::size_t i = half; i < shuffled.size(); ++i) side_of[shuffled[i]] = 1;
    std::vector<int> side(nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) side[i] = side_of[nodes[i]];
    for (int pass = 0; pass < kMaxPasses; ++pass) {
      if (kl_pass(g, nodes, side) <= 0.0) break;
    }
    std::vector<int> left, right;
    for (std::size_t i = 0; i < nodes.size(); ++i) (side[i] == 0 ? left : right).push_back(nodes[i]);
    self(self, std::move(left));
    self(self, std::move(right));
  };
  std::vector<int> all(n);
  std::iota(all.begin(), all.end(), 0);
  bisect(bisect, std::move(all));
  return make_partition(labels, capacity);
}

PartitionerKind parse_partitioner(const std::string& name) {
  if (name == "random") return PartitionerKind::Random;
  if (name == "modularity") return PartitionerKind::Modularity;
  if (name == "boundary") return PartitionerKind::Boundary;
  if (name == "kl") return PartitionerKind::KernighanLin;
  if (name == "gen") return PartitionerKind::Gen;
  throw std::invalid_argument("unknown partitioner '" + name + "'");
}

std::string partitioner_name(PartitionerKind kind) {
  switch (kind) {
    case PartitionerKind::Random: return "random";
    case PartitionerKind::Modularity: return "modularity";
    case PartitionerKind::Boundary: return "boundary";
    case PartitionerKind::KernighanLin: return "kl";
    case PartitionerKind::Gen: return "gen";
  }
  return "unknown";
}

Partition run_heuristic(PartitionerKind kind, const WeightedGraph& g, int capacity, std::uint64_t seed,
                        PartitionNotes* notes) {
  switch (kind) {
    case PartitionerKind::Random: return random_partition(g, capacity, seed);
    case PartitionerKind::Modularity: return modularity_partition(g, capacity, notes);
    case PartitionerKind::Boundary: return boundary_partition(g, capacity, seed, notes);
    case PartitionerKind::KernighanLin: return kl_partition(g, capacity, seed);
    case PartitionerKind::Gen: break;
  }
  throw std::invalid_argument("gen is not a heuristic partitioner");
}

}  // namespace qaoa2
