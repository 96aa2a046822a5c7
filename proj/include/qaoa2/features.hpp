#pragma once

#include "qaoa2/graph.hpp"

#include <Eigen/Dense>

namespace qaoa2 {

/// Column order of the structural node descriptors.
enum FeatureColumn : int { kDegree = 0, kStrength, kClustering, kPageRank, kBetweenness, kNumFeatures };

Eigen::VectorXd node_degrees(const WeightedGraph& g);
/// Signed weighted degree sum_j A_ij.
Eigen::VectorXd node_strengths(const WeightedGraph& g);
/// Weighted clustering (geometric mean of normalized |w| over triangles);
/// zero for nodes with fewer than two neighbors.
Eigen::VectorXd clustering_coefficients(const WeightedGraph& g);

struct PageRankOptions {
  double damping = 0.85;
  double tolerance = 1e-9;
  int max_iterations = 200;
};

/// Power-iteration PageRank over |A|. Dangling mass is redistributed uniformly.
Eigen::VectorXd pagerank(const WeightedGraph& g, const PageRankOptions& opts = {});

/// Brandes betweenness with |w| as the path cost, counted over unordered
/// (s, t) pairs and left unnormalized.
Eigen::VectorXd betweenness_centrality(const WeightedGraph& g);

/// Columns shifted to zero mean and scaled to unit (population) variance;
/// near-constant columns become zero.
Eigen::MatrixXd standardize_columns(const Eigen::MatrixXd& x, double variance_floor = 1e-12);

/// N x 5 raw descriptor matrix [degree, strength, clustering, pagerank, betweenness].
Eigen::MatrixXd raw_node_features(const WeightedGraph& g);

/// Standardized descriptors; the input layer of every graph encoder.
Eigen::MatrixXd compute_node_features(const WeightedGraph& g);

}  // namespace qaoa2
