#pragma once

#include "qaoa2/graph.hpp"
#include "qaoa2/nn.hpp"
#include "qaoa2/partition.hpp"
#include "qaoa2/solver.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace qaoa2::gen {

using ad::Tape;
using ad::Tensor;

/// Dense network inputs for one graph: max|w|-normalized adjacency and the
/// standardized node descriptors.
struct GraphInput {
  Eigen::MatrixXd adjacency;
  Eigen::MatrixXd features;

  static GraphInput from_graph(const WeightedGraph& g);
  int num_nodes() const { return static_cast<int>(adjacency.rows()); }
};

/// One-hot N x k matrix from labels in [0, k).
Eigen::MatrixXd one_hot(const std::vector<int>& labels, int k);

/// 2p x k angle matrix, gamma rows first.
Eigen::MatrixXd angles_to_matrix(const std::vector<QaoaAngles>& angles);
std::vector<QaoaAngles> matrix_to_angles(const Eigen::MatrixXd& p);

struct OchResult {
  Eigen::MatrixXd centers;  // k x h, orthonormal rows
  Eigen::VectorXd global;   // unit global context vector g
  bool fallback = false;    // g came from the jittered raw mean
};

/// Cluster centers orthonormal to each other and to g, from the reduced QR of
/// [g | first k pool anchors^T].
OchResult och_centers(const Eigen::MatrixXd& embeddings, int k, const Eigen::MatrixXd& pool);

/// Greedy capacity discretization: row-wise preference ranks, then rounds in
/// which every unassigned node applies to its next choice and each partition
/// admits its top-scoring applicants up to the remaining capacity.
/// Ties go to the lower partition index (ranks) and lower node index (admission).
std::vector<int> gcd_assign(const Eigen::MatrixXd& soft, int capacity);

struct EvaluatorConfig {
  int p = 1;
  int hidden = 64;
  int layers = 3;
  int head_hidden = 256;
  bool gnn_unweighted = false;
  std::uint64_t seed = 42;
};

/// Three-view surrogate: topology (GAT on A), partition (GCN on A_sub) and
/// parameters (GAT on [sin, cos](S P^T) over A_sub), pooled and scored.
class Evaluator {
 public:
  explicit Evaluator(const EvaluatorConfig& cfg = {});

  /// rho_hat = 0.5 (sigmoid(logit) + 1), a 1 x 1 tensor. `s` is N x k and `p` is 2p x k.
  Tensor forward(Tape& tape, const GraphInput& in, const Tensor& s, const Tensor& p);
  double predict(const GraphInput& in, const Eigen::MatrixXd& s, const Eigen::MatrixXd& p);

  std::vector<ad::Parameter*> parameters();
  void set_frozen(bool frozen);
  const EvaluatorConfig& config() const { return cfg_; }

  nlohmann::json to_json();
  static Evaluator from_json(const nlohmann::json& j);

 private:
  EvaluatorConfig cfg_;
  nn::GatEncoder topology_;
  nn::GcnEncoder partition_;
  nn::GatEncoder params_;
  nn::Linear head1_;
  nn::Linear head2_;
};

struct GeneratorConfig {
  int p = 1;
  int hidden = 128;
  int layers = 2;
  int k_max = 127;
  double tau = 0.05;
  int max_nodes = 10;
  bool gnn_unweighted = false;
  std::uint64_t seed = 42;
};

struct GeneratorForward {
  Tensor s;       // N x k, hard forward value with straight-through backward
  Tensor angles;  // 2p x k in [0, 2pi)
  Eigen::MatrixXd soft;
  std::vector<int> labels;
  bool och_fallback = false;
};

/// Topology GAT -> OCH soft partition -> GCD (+STE) -> partition GCN on
/// sg(A_sub) -> per-subgraph pooling -> (y, x) pairs -> atan2 angles.
class Generator {
 public:
  explicit Generator(const GeneratorConfig& cfg = {});

  GeneratorForward forward(Tape& tape, const GraphInput& in, int k);

  std::vector<ad::Parameter*> parameters();
  const GeneratorConfig& config() const { return cfg_; }
  const Eigen::MatrixXd& anchor_pool() const { return pool_; }

  /// ceil(N / max_nodes) capped at k_max.
  int default_k(int num_nodes) const;

  nlohmann::json to_json();
  static Generator from_json(const nlohmann::json& j);

 private:
  GeneratorConfig cfg_;
  nn::GatEncoder topology_;
  nn::GcnEncoder partition_;
  nn::Linear head1_;
  nn::Linear head2_;
  Eigen::MatrixXd pool_;
};

/// Drops empty columns and turns a generator output into a solver proposal.
Proposal to_proposal(const std::vector<int>& labels, const Eigen::MatrixXd& angles, int capacity);

// ---- offline dataset ----

struct OfflineSample {
  std::string graph;  // file reference or name
  std::uint64_t graph_hash = 0;
  std::string source;  // heuristic that produced the partition
  std::vector<int> assignment;
  Eigen::MatrixXd angles;  // 2p x k
  double rho = 0.0;
};

nlohmann::json sample_to_json(const OfflineSample& s);
OfflineSample sample_from_json(const nlohmann::json& j);
void write_dataset(const std::filesystem::path& path, const std::vector<OfflineSample>& samples);
std::vector<OfflineSample> read_dataset(const std::filesystem::path& path);

struct LabeledGraph {
  std::string name;
  WeightedGraph graph;
  double opt = 0.0;
};

struct DatasetConfig {
  int runs_per_heuristic = 70;
  SimConfig sim;
  std::uint64_t seed = 42;
};

/// Heuristic partitions with U[0, 2pi) angles, deduplicated per graph, each
/// labeled by a QAOA^2 run that uses the fixed (S, P) at the top level.
std::vector<OfflineSample> build_offline_dataset(const std::vector<LabeledGraph>& graphs, const DatasetConfig& cfg);

/// Top level fixed, deeper levels from the given heuristic with random angles.
class FixedTopPolicy : public PartitionPolicy {
 public:
  FixedTopPolicy(Proposal top, PartitionerKind deeper, int max_nodes, int p);
  Proposal propose(const WeightedGraph& g, int level, std::uint64_t seed) override;
  QaoaAngles direct_angles(const WeightedGraph& g, int level, std::uint64_t seed) override;

 private:
  Proposal top_;
  HeuristicPolicy deeper_;
};

// ---- training ----

struct EvaluatorTrainConfig {
  int batch = 32;
  double lr = 1e-3;
  double weight_decay = 5e-4;
  int epochs = 100;
  double factor = 0.5;
  int patience = 3;
  double min_lr = 0.0;
  double val_fraction = 0.1;
  std::uint64_t seed = 42;
};

struct EvaluatorTrainReport {
  std::vector<double> train_mse;
  std::vector<double> val_mse;
  int best_epoch = -1;
  double best_val_mse = 0.0;
};

using EpochCallback = std::function<void(int epoch, double train_metric, double val_metric, double lr)>;

/// Per-graph forward passes with gradients accumulated over each batch.
/// `inputs` is keyed by OfflineSample::graph. The evaluator ends holding the
/// parameters of the best validation epoch.
EvaluatorTrainReport train_evaluator(Evaluator& net, const std::vector<OfflineSample>& samples,
                                     const std::map<std::string, GraphInput>& inputs, const EvaluatorTrainConfig& cfg,
                                     const EpochCallback& on_epoch = {});

struct GeneratorTrainConfig {
  int batch = 16;
  double lr = 4e-3;
  double weight_decay = 5e-4;
  int epochs = 1500;
  double factor = 0.8;
  int patience = 100;
  double min_lr = 0.0;
  std::uint64_t seed = 42;
};

struct GeneratorTrainReport {
  std::vector<double> mean_rho_hat;
  int best_epoch = -1;
  double best_rho_hat = 0.0;
};

/// Ascent on the mean predicted ratio with the evaluator frozen. The generator
/// ends holding the parameters of the best epoch.
GeneratorTrainReport train_generator(Generator& gen, Evaluator& evaluator, const std::vector<GraphInput>& graphs,
                                     const GeneratorTrainConfig& cfg, const EpochCallback& on_epoch = {});

inline constexpr int kDefaultTtaSteps = 64;
inline constexpr int kMaxTtaSteps = 1000;

struct TtaConfig {
  int steps = kDefaultTtaSteps;
  double lr = 1e-3;
  double min_lr = 1e-4;
  double factor = 0.8;
  int patience = 100;
  double weight_decay = 5e-4;
  std::optional<int> k;
};

struct TtaResult {
  std::vector<int> labels;
  Eigen::MatrixXd angles;
  double rho_hat = 0.0;
  double initial_rho_hat = 0.0;
  /// Best-so-far predicted ratio after 0..steps updates.
  std::vector<double> best_trajectory;
  bool och_fallback = false;
};

/// Fine-tunes a copy of the generator on one graph and returns the
/// configuration with the highest predicted ratio seen.
TtaResult tta_adapt(const Generator& gen, Evaluator& evaluator, const GraphInput& in, const TtaConfig& cfg = {});

/// Generator-backed policy: TTA on the top-level graph, plain forward passes on
/// merge graphs. Top-level results are cached by graph hash, so repeated runs
/// on one instance adapt once.
class GenPolicy : public PartitionPolicy {
 public:
  GenPolicy(const Generator& gen, Evaluator& evaluator, TtaConfig tta);
  Proposal propose(const WeightedGraph& g, int level, std::uint64_t seed) override;
  QaoaAngles direct_angles(const WeightedGraph& g, int level, std::uint64_t seed) override;

  /// Predicted ratio of the most recent top-level proposal.
  double last_rho_hat() const { return last_rho_hat_; }
  const std::vector<double>& last_trajectory() const { return last_trajectory_; }

 private:
  const TtaResult& top_level(const WeightedGraph& g, bool direct);

  const Generator& gen_;
  Evaluator& evaluator_;
  TtaConfig tta_;
  std::map<std::pair<std::uint64_t, bool>, TtaResult> cache_;
  double last_rho_hat_ = 0.0;
  std::vector<double> last_trajectory_;
};

nlohmann::json checkpoint(const std::string& kind, const nlohmann::json& config, const nlohmann::json& params);

}  // namespace qaoa2::gen
