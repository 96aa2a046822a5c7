#include "qaoa2/features.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <vector>

namespace qaoa2 {

Eigen::VectorXd node_degrees(const WeightedGraph& g) {
  Eigen::VectorXd d(g.num_nodes());
  for (int i = 0; i < g.num_nodes(); ++i) d(i) = static_cast<double>(g.neighbors(i).size());
  return d;
}

Eigen::VectorXd node_strengths(const WeightedGraph& g) {
  Eigen::VectorXd s = Eigen::VectorXd::Zero(g.num_nodes());
  for (int i = 0; i < g.num_nodes(); ++i) {
    for (auto [j, w] : g.neighbors(i)) s(i) += w;
  }
  return s;
}

Eigen::VectorXd clustering_coefficients(const WeightedGraph& g) {
  const int n = g.num_nodes();
  Eigen::VectorXd c = Eigen::VectorXd::Zero(n);
  const double max_w = g.max_abs_weight();
  if (max_w == 0.0) return c;

  // Dense row lookup of normalized |w| for the current node's neighborhood.
  std::vector<double> row(n, 0.0);
  for (int i = 0; i < n; ++i) {
    const auto& nbrs = g.neighbors(i);
    const double deg = static_cast<double>(nbrs.size());
    if (nbrs.size() < 2) continue;
    for (auto [j, w] : nbrs) row[j] = std::abs(w) / max_w;
    double sum = 0.0;
    for (auto [j, wij] : nbrs) {
      const double a_ij = std::abs(wij) / max_w;
      for (auto [k, wjk] : g.neighbors(j)) {
        if (k == i || row[k] == 0.0) continue;
        sum += std::cbrt(a_ij * (std::abs(wjk) / max_w) * row[k]);
      }
    }
    for (auto [j, w] : nbrs) row[j] = 0.0;
    c(i) = sum / (deg * (deg - 1.0));
  }
  return c;
}

Eigen::VectorXd pagerank(const WeightedGraph& g, const PageRankOptions& opts) {
  const int n = g.num_nodes();
  Eigen::VectorXd out_weight = Eigen::VectorXd::Zero(n);
  for (int j = 0; j < n; ++j) {
    for (auto [k, w] : g.neighbors(j)) out_weight(j) += std::abs(w);
  }
  Eigen::VectorXd pr = Eigen::VectorXd::Constant(n, 1.0 / n);
  Eigen::VectorXd next(n);
  for (int it = 0; it < opts.max_iterations; ++it) {
    double dangling = 0.0;
    for (int j = 0; j < n; ++j) {
      if (out_weight(j) == 0.0) dangling += pr(j);
    }
    next.setConstant((1.0 - opts.damping) / n + opts.damping * dangling / n);
    for (int j = 0; j < n; ++j) {
      if (out_weight(j) == 0.0) continue;
      const double share = opts.damping * pr(j) / out_weight(j);
      for (auto [i, w] : g.neighbors(j)) next(i) += share * std::abs(w);
    }
    const double change = (next - pr).lpNorm<1>();
    pr.swap(next);
    if (change < opts.tolerance) break;
  }
  return pr;
}

Eigen::VectorXd betweenness_centrality(const WeightedGraph& g) {
  const int n = g.num_nodes();
  Eigen::VectorXd bc = Eigen::VectorXd::Zero(n);
  constexpr double inf = std::numeric_limits<double>::infinity();

  std::vector<double> dist(n);
  std::vector<double> sigma(n);
  std::vector<double> delta(n);
  std::vector<std::vector<int>> preds(n);
  std::vector<int> order;
  order.reserve(n);

  using Item = std::pair<double, int>;
  for (int s = 0; s < n; ++s) {
    std::fill(dist.begin(), dist.end(), inf);
    std::fill(sigma.begin(), sigma.end(), 0.0);
    std::fill(delta.begin(), delta.end(), 0.0);
    for (auto& p : preds) p.clear();
    order.clear();

    std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
    dist[s] = 0.0;
    sigma[s] = 1.0;
    heap.push({0.0, s});
    std::vector<bool> done(n, false);
    while (!heap.empty()) {
      auto [d, v] = heap.top();
      heap.pop();
      if (done[v]) continue;
      done[v] = true;
      order.push_back(v);
      for (auto [w, weight] : g.neighbors(v)) {
        const double nd = d + std::abs(weight);
        const double tol = 1e-12 * std::max(1.0, nd);
        if (nd < dist[w] - tol) {
          dist[w] = nd;
          sigma[w] = sigma[v];
          preds[w].assign(1, v);
          heap.push({nd, w});
        } else if (std::abs(nd - dist[w]) <= tol && !done[w]) {
          sigma[w] += sigma[v];
          preds[w].push_back(v);
        }
      }
    }
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      const int w = *it;
      for (int v : preds[w]) delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
      if (w != s) bc(w) += delta[w];
    }
  }
  // Each unordered pair was visited from both endpoints.
  return bc * 0.5;
}

Eigen::MatrixXd standardize_columns(const Eigen::MatrixXd& x, double variance_floor) {
  Eigen::MatrixXd out(x.rows(), x.cols());
  const double n = static_cast<double>(x.rows());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    const double mean = x.col(c).mean();
    Eigen::VectorXd centered = x.col(c).array() - mean;
    const double var = centered.squaredNorm() / n;
    if (var < variance_floor) {
      out.col(c).setZero();
    } else {
      out.col(c) = centered / std::sqrt(var);
    }
  }
  return out;
}

Eigen::MatrixXd raw_node_features(const WeightedGraph& g) {
  Eigen::MatrixXd x(g.num_nodes(), kNumFeatures);
  x.col(kDegree) = node_degrees(g);
  x.col(kStrength) = node_strengths(g);
  x.col(kClustering) = clustering_coefficients(g);
  x.col(kPageRank) = pagerank(g);
  x.col(kBetweenness) = betweenness_centrality(g);
  return x;
}

Eigen::MatrixXd compute_node_features(const WeightedGraph& g) {
  return standardize_columns(raw_node_features(g));
}

}  // namespace qaoa2
