#include "qaoa2/gen.hpp"

#include "qaoa2/features.hpp"
#include "qaoa2/log.hpp"
#include "qaoa2/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

namespace qaoa2::gen {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;

GraphInput GraphInput::from_graph(const WeightedGraph& g) {
  GraphInput in;
  in.adjacency = g.max_abs_weight() > 0.0 ? normalize_edge_weights(g).adjacency_matrix()
                                           : MatrixXd::Zero(g.num_nodes(), g.num_nodes());
  in.features = compute_node_features(g);
  return in;
}

MatrixXd one_hot(const std::vector<int>& labels, int k) {
  MatrixXd s = MatrixXd::Zero(static_cast<Eigen::Index>(labels.size()), k);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= k) throw std::invalid_argument("label out of range");
    s(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  }
  return s;
}

MatrixXd angles_to_matrix(const std::vector<QaoaAngles>& angles) {
  if (angles.empty()) throw std::invalid_argument("no angle sets");
  const int p = angles.front().depth();
  MatrixXd m(2 * p, static_cast<Eigen::Index>(angles.size()));
  for (std::size_t j = 0; j < angles.size(); ++j) {
    if (angles[j].depth() != p) throw std::invalid_argument("angle sets differ in depth");
    m.col(static_cast<Eigen::Index>(j)) = angles[j].stacked();
  }
  return m;
}

std::vector<QaoaAngles> matrix_to_angles(const MatrixXd& p) {
  if (p.rows() < 2 || p.rows() % 2 != 0) throw std::invalid_argument("angle matrix needs 2p rows");
  std::vector<QaoaAngles> out;
  out.reserve(static_cast<std::size_t>(p.cols()));
  for (Eigen::Index j = 0; j < p.cols(); ++j) out.push_back(QaoaAngles::from_stacked(p.col(j)));
  return out;
}

OchResult och_centers(const MatrixXd& embeddings, int k, const MatrixXd& pool) {
  const Eigen::Index h = embeddings.cols();
  if (k < 1) throw std::invalid_argument("och: k must be positive");
  if (k + 1 > h) throw std::invalid_argument("och: k + 1 exceeds the embedding dimension");
  if (k > pool.rows() || pool.cols() != h) throw std::invalid_argument("och: anchor pool too small");
  if (embeddings.rows() == 0) throw std::invalid_argument("och: no embeddings");

  OchResult out;
  VectorXd mean = VectorXd::Zero(h);
  for (Eigen::Index i = 0; i < embeddings.rows(); ++i) {
    const double norm = embeddings.row(i).norm();
    if (norm > 0.0) mean += embeddings.row(i).transpose() / norm;
  }
  mean /= static_cast<double>(embeddings.rows());
  if (mean.norm() < 1e-12) {
    out.fallback = true;
    mean = embeddings.colwise().mean().transpose() + VectorXd::Constant(h, 1e-9 / std::sqrt(double(h)));
  }
  out.global = mean.normalized();

  MatrixXd m(h, k + 1);
  m.col(0) = out.global;
  m.rightCols(k) = pool.topRows(k).transpose();
  const Eigen::HouseholderQR<MatrixXd> qr(m);
  MatrixXd q = qr.householderQ() * MatrixXd::Identity(h, k + 1);
  // Gram-Schmidt orientation: positive diagonal of R, so q_0 = g.
  for (int c = 0; c <= k; ++c) {
    if (qr.matrixQR()(c, c) < 0.0) q.col(c) = -q.col(c);
  }
  out.centers = q.rightCols(k).transpose();
  return out;
}

std::vector<int> gcd_assign(const MatrixXd& soft, int capacity) {
  const auto n = static_cast<int>(soft.rows());
  const auto k = static_cast<int>(soft.cols());
  if (capacity < 1 || k < 1) throw std::invalid_argument("gcd: capacity and k must be positive");
  if (static_cast<long>(k) * capacity < n) throw std::invalid_argument("gcd: k * capacity is below the node count");
  if (!soft.allFinite()) throw std::invalid_argument("gcd: non-finite scores");

  std::vector<std::vector<int>> ranks(static_cast<std::size_t>(n), std::vector<int>(k));
  for (int i = 0; i < n; ++i) {
    auto& r = ranks[i];
    std::iota(r.begin(), r.end(), 0);
    std::stable_sort(r.begin(), r.end(), [&](int a, int b) { return soft(i, a) > soft(i, b); });
  }

  std::vector<int> labels(static_cast<std::size_t>(n), -1);
  std::vector<int> load(static_cast<std::size_t>(k), 0);
  std::vector<int> unassigned(static_cast<std::size_t>(n));
  std::iota(unassigned.begin(), unassigned.end(), 0);
  for (int l = 0; l < k && !unassigned.empty(); ++l) {
    std::vector<std::vector<int>> cand(static_cast<std::size_t>(k));
    for (int i : unassigned) cand[ranks[i][l]].push_back(i);
    for (int j = 0; j < k; ++j) {
      auto& u = cand[j];
      const int remain = capacity - load[j];
      if (static_cast<int>(u.size()) > remain) {
        std::stable_sort(u.begin(), u.end(), [&](int a, int b) { return soft(a, j) > soft(b, j); });
        u.resize(static_cast<std::size_t>(std::max(remain, 0)));
      }
      for (int i : u) labels[i] = j;
      load[j] += static_cast<int>(u.size());
    }
    std::erase_if(unassigned, [&](int i) { return labels[i] >= 0; });
  }
  if (!unassigned.empty()) throw std::logic_error("gcd: nodes left unassigned");
  return labels;
}

namespace {

void collect_all(std::vector<ad::Parameter*>& out, nn::GatEncoder& a, nn::GcnEncoder& b) {
  a.collect(out);
  b.collect(out);
}

std::vector<MatrixXd> snapshot(const std::vector<ad::Parameter*>& ps) {
  std::vector<MatrixXd> out;
  out.reserve(ps.size());
  for (const auto* p : ps) out.push_back(p->value);
  return out;
}

void restore(const std::vector<ad::Parameter*>& ps, const std::vector<MatrixXd>& values) {
  for (std::size_t i = 0; i < ps.size(); ++i) ps[i]->value = values[i];
}

json evaluator_config_json(const EvaluatorConfig& c) {
  return json{{"p", c.p},           {"hidden", c.hidden}, {"layers", c.layers}, {"head_hidden", c.head_hidden},
              {"gnn_unweighted", c.gnn_unweighted}, {"seed", c.seed}};
}

json generator_config_json(const GeneratorConfig& c) {
  return json{{"p", c.p},
              {"hidden", c.hidden},
              {"layers", c.layers},
              {"k_max", c.k_max},
              {"tau", c.tau},
              {"max_nodes", c.max_nodes},
              {"gnn_unweighted", c.gnn_unweighted},
              {"seed", c.seed}};
}

void require_kind(const json& j, const std::string& kind) {
  if (j.value("format", "") != "qaoa2-checkpoint") throw std::runtime_error("not a checkpoint file");
  if (j.value("version", 0) != nn::kCheckpointVersion) throw std::runtime_error("unsupported checkpoint version");
  if (j.value("kind", "") != kind) throw std::runtime_error("checkpoint holds a " + j.value("kind", "?") +
                                                            ", expected a " + kind);
}

}  // namespace

json checkpoint(const std::string& kind, const json& config, const json& params) {
  return json{{"format", "qaoa2-checkpoint"},
              {"version", nn::kCheckpointVersion},
              {"kind", kind},
              {"config", config},
              {"parameters", params}};
}

Evaluator::Evaluator(const EvaluatorConfig& cfg) : cfg_(cfg) {
  if (cfg.p < 1) throw std::invalid_argument("evaluator depth must be at least 1");
  std::mt19937_64 rng(derive_seed({cfg.seed, 101}));
  topology_ = nn::GatEncoder("topology", kNumFeatures, cfg.hidden, cfg.layers, rng);
  partition_ = nn::GcnEncoder("partition", kNumFeatures, cfg.hidden, cfg.layers, rng);
  params_ = nn::GatEncoder("parameters", 4 * cfg.p, cfg.hidden, cfg.layers, rng);
  head1_ = nn::Linear("head1", 3 * cfg.hidden, cfg.head_hidden, rng);
  head2_ = nn::Linear("head2", cfg.head_hidden, 1, rng);
  topology_.weighted = !cfg.gnn_unweighted;
  params_.weighted = !cfg.gnn_unweighted;
}

Tensor Evaluator::forward(Tape& tape, const GraphInput& in, const Tensor& s, const Tensor& p) {
  const Eigen::Index n = in.num_nodes();
  if (s.rows() != n) throw std::invalid_argument("evaluator: S must have one row per node");
  if (p.rows() != 2 * cfg_.p || p.cols() != s.cols()) throw std::invalid_argument("evaluator: P must be 2p x k");
  const Tensor x = tape.constant(in.features);
  const Tensor a = tape.constant(in.adjacency);

  const Tensor h_top = topology_.forward(tape, x, a);
  const Tensor a_sub = ad::hadamard(a, ad::matmul(s, ad::transpose(s)));
  const Tensor h_part = partition_.forward(tape, x, a_sub);
  const Tensor x_param = ad::matmul(s, ad::transpose(ad::wrap_angle(p)));
  const Tensor h_param = params_.forward(tape, ad::concat_cols({ad::sin(x_param), ad::cos(x_param)}), a_sub);

  const Tensor pooled = ad::concat_cols({ad::mean_rows(h_top), ad::mean_rows(h_part), ad::mean_rows(h_param)});
  const Tensor logit = head2_.forward(tape, ad::relu(head1_.forward(tape, pooled)));
  return ad::add_scalar(ad::scale(ad::sigmoid(logit), 0.5), 0.5);
}

double Evaluator::predict(const GraphInput& in, const MatrixXd& s, const MatrixXd& p) {
  Tape tape;
  return forward(tape, in, tape.constant(s), tape.constant(p)).value()(0, 0);
}

std::vector<ad::Parameter*> Evaluator::parameters() {
  std::vector<ad::Parameter*> out;
  collect_all(out, topology_, partition_);
  params_.collect(out);
  head1_.collect(out);
  head2_.collect(out);
  return out;
}

void Evaluator::set_frozen(bool frozen) {
  for (auto* p : parameters()) p->frozen = frozen;
}

json Evaluator::to_json() {
  return checkpoint("evaluator", evaluator_config_json(cfg_), nn::parameters_to_json(parameters()));
}

Evaluator Evaluator::from_json(const json& j) {
  require_kind(j, "evaluator");
  const json& c = j.at("config");
  EvaluatorConfig cfg;
  cfg.p = c.at("p").get<int>();
  cfg.hidden = c.at("hidden").get<int>();
  cfg.layers = c.at("layers").get<int>();
  cfg.head_hidden = c.at("head_hidden").get<int>();
  cfg.gnn_unweighted = c.at("gnn_unweighted").get<bool>();
  cfg.seed = c.at("seed").get<std::uint64_t>();
  Evaluator net(cfg);
  nn::parameters_from_json(j.at("parameters"), net.parameters());
  return net;
}

Generator::Generator(const GeneratorConfig& cfg) : cfg_(cfg) {
  if (cfg.p < 1) throw std::invalid_argument("generator depth must be at least 1");
  if (cfg.max_nodes < 1) throw std::invalid_argument("max_nodes must be positive");
  if (cfg.k_max + 1 > cfg.hidden) throw std::invalid_argument("k_max + 1 exceeds the hidden size");
  if (!(cfg.tau > 0.0)) throw std::invalid_argument("temperature must be positive");
  std::mt19937_64 rng(derive_seed({cfg.seed, 202}));
  topology_ = nn::GatEncoder("topology", kNumFeatures, cfg.hidden, cfg.layers, rng);
  partition_ = nn::GcnEncoder("partition", kNumFeatures, cfg.hidden, cfg.layers, rng);
  head1_ = nn::Linear("head1", cfg.hidden, cfg.hidden, rng);
  head2_ = nn::Linear("head2", cfg.hidden, 4 * cfg.p, rng);
  topology_.weighted = !cfg.gnn_unweighted;
  std::normal_distribution<double> normal(0.0, 1.0);
  pool_.resize(cfg.k_max, cfg.hidden);
  for (Eigen::Index i = 0; i < pool_.rows(); ++i) {
    for (Eigen::Index c = 0; c < pool_.cols(); ++c) pool_(i, c) = normal(rng);
  }
}

int Generator::default_k(int num_nodes) const {
  return std::min(min_subgraph_count(num_nodes, cfg_.max_nodes), cfg_.k_max);
}

GeneratorForward Generator::forward(Tape& tape, const GraphInput& in, int k) {
  const int n = in.num_nodes();
  if (n == 0) throw std::invalid_argument("generator: empty graph");
  if (k < 1 || k > cfg_.k_max) throw std::invalid_argument("generator: k outside [1, k_max]");
  if (static_cast<long>(k) * cfg_.max_nodes < n) throw std::invalid_argument("generator: k * max_nodes below N");
  GeneratorForward out;
  const Tensor x = tape.constant(in.features);
  const Tensor a = tape.constant(in.adjacency);

  const Tensor h = topology_.forward(tape, x, a);
  const OchResult och = och_centers(h.value(), k, pool_);
  out.och_fallback = och.fallback;
  const Tensor soft = ad::softmax_rows(ad::matmul(h, tape.constant(och.centers.transpose())), cfg_.tau);
  out.soft = soft.value();
  out.labels = gcd_assign(out.soft, cfg_.max_nodes);
  const MatrixXd hard = one_hot(out.labels, k);
  out.s = ad::straight_through(hard, soft);

  // Partition path sees sg(S) only.
  const MatrixXd a_sub = in.adjacency.cwiseProduct(hard * hard.transpose());
  const Tensor h_part = partition_.forward(tape, x, tape.constant(a_sub));
  MatrixXd pool = hard.transpose();
  for (Eigen::Index j = 0; j < pool.rows(); ++j) {
    const double count = pool.row(j).sum();
    if (count > 0.0) pool.row(j) /= count;
  }
  const Tensor h_sub = ad::matmul(tape.constant(pool), h_part);
  const Tensor coords = head2_.forward(tape, ad::relu(head1_.forward(tape, h_sub)));

  const int pairs = 2 * cfg_.p;
  MatrixXd pick_y = MatrixXd::Zero(2 * pairs, pairs);
  MatrixXd pick_x = MatrixXd::Zero(2 * pairs, pairs);
  for (int r = 0; r < pairs; ++r) {
    pick_y(2 * r, r) = 1.0;
    pick_x(2 * r + 1, r) = 1.0;
  }
  const Tensor y = ad::matmul(coords, tape.constant(pick_y));
  const Tensor xc = ad::matmul(coords, tape.constant(pick_x));
  out.angles = ad::transpose(ad::wrap_angle(ad::atan2(y, xc)));
  return out;
}

std::vector<ad::Parameter*> Generator::parameters() {
  std::vector<ad::Parameter*> out;
  collect_all(out, topology_, partition_);
  head1_.collect(out);
  head2_.collect(out);
  return out;
}

json Generator::to_json() {
  json j = checkpoint("generator", generator_config_json(cfg_), nn::parameters_to_json(parameters()));
  j["anchor_pool"] = nn::matrix_to_json(pool_);
  return j;
}

Generator Generator::from_json(const json& j) {
  require_kind(j, "generator");
  const json& c = j.at("config");
  GeneratorConfig cfg;
  cfg.p = c.at("p").get<int>();
  cfg.hidden = c.at("hidden").get<int>();
  cfg.layers = c.at("layers").get<int>();
  cfg.k_max = c.at("k_max").get<int>();
  cfg.tau = c.at("tau").get<double>();
  cfg.max_nodes = c.at("max_nodes").get<int>();
  cfg.gnn_unweighted = c.at("gnn_unweighted").get<bool>();
  cfg.seed = c.at("seed").get<std::uint64_t>();
  Generator gen(cfg);
  nn::parameters_from_json(j.at("parameters"), gen.parameters());
  MatrixXd pool = nn::matrix_from_json(j.at("anchor_pool"));
  if (pool.rows() != gen.pool_.rows() || pool.cols() != gen.pool_.cols()) {
    throw std::runtime_error("anchor pool shape mismatch");
  }
  gen.pool_ = std::move(pool);
  return gen;
}

Proposal to_proposal(const std::vector<int>& labels, const MatrixXd& angles, int capacity) {
  Proposal out;
  out.partition = make_partition(labels, capacity);
  // make_partition renumbers by smallest member; map each new group back to its column.
  std::vector<int> column(static_cast<std::size_t>(out.partition.k), -1);
  for (std::size_t i = 0; i < labels.size(); ++i) column[out.partition.assignment[i]] = labels[i];
  for (int c : column) {
    if (c < 0 || c >= angles.cols()) throw std::invalid_argument("angle matrix lacks a subgraph column");
    out.angles.push_back(QaoaAngles::from_stacked(angles.col(c)));
  }
  return out;
}

json sample_to_json(const OfflineSample& s) {
  std::vector<double> rows;
  rows.reserve(static_cast<std::size_t>(s.angles.size()));
  for (Eigen::Index r = 0; r < s.angles.rows(); ++r) {
    for (Eigen::Index c = 0; c < s.angles.cols(); ++c) rows.push_back(s.angles(r, c));
  }
  return json{{"graph", s.graph},
              {"graph_hash", s.graph_hash},
              {"source", s.source},
              {"assignment", s.assignment},
              {"p", s.angles.rows() / 2},
              {"k", s.angles.cols()},
              {"angles", rows},
              {"rho", s.rho}};
}

OfflineSample sample_from_json(const json& j) {
  OfflineSample s;
  s.graph = j.at("graph").get<std::string>();
  s.graph_hash = j.at("graph_hash").get<std::uint64_t>();
  s.source = j.value("source", "");
  s.assignment = j.at("assignment").get<std::vector<int>>();
  const auto p = j.at("p").get<Eigen::Index>();
  const auto k = j.at("k").get<Eigen::Index>();
  const auto data = j.at("angles").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != 2 * p * k) throw std::runtime_error("sample angle size mismatch");
  s.angles.resize(2 * p, k);
  for (Eigen::Index r = 0; r < 2 * p; ++r) {
    for (Eigen::Index c = 0; c < k; ++c) s.angles(r, c) = data[static_cast<std::size_t>(r * k + c)];
  }
  s.rho = j.at("rho").get<double>();
  for (int a : s.assignment) {
    if (a < 0 || a >= k) throw std::runtime_error("sample assignment outside [0, k)");
  }
  return s;
}

void write_dataset(const std::filesystem::path& path, const std::vector<OfflineSample>& samples) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& s : samples) out << sample_to_json(s).dump() << '\n';
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::vector<OfflineSample> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<OfflineSample> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(sample_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

FixedTopPolicy::FixedTopPolicy(Proposal top, PartitionerKind deeper, int max_nodes, int p)
    : top_(std::move(top)), deeper_(deeper, max_nodes, p) {}

Proposal FixedTopPolicy::propose(const WeightedGraph& g, int level, std::uint64_t seed) {
  if (level == 0) return top_;
  Proposal out = deeper_.propose(g, level, seed);
  random_fallback = random_fallback || deeper_.random_fallback;
  return out;
}

QaoaAngles FixedTopPolicy::direct_angles(const WeightedGraph& g, int level, std::uint64_t seed) {
  if (level == 0 && top_.angles.size() == 1) return top_.angles.front();
  return deeper_.direct_angles(g, level, seed);
}

std::vector<OfflineSample> build_offline_dataset(const std::vector<LabeledGraph>& graphs, const DatasetConfig& cfg) {
  cfg.sim.validate();
  if (cfg.runs_per_heuristic < 1) throw std::invalid_argument("runs per heuristic must be positive");
  const PartitionerKind kinds[] = {PartitionerKind::Random, PartitionerKind::Modularity, PartitionerKind::Boundary,
                                   PartitionerKind::KernighanLin};
  std::vector<OfflineSample> out;
  for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
    const LabeledGraph& lg = graphs[gi];
    const std::uint64_t hash = graph_hash(lg.graph);
    std::set<std::vector<int>> seen;
    for (std::size_t hi = 0; hi < std::size(kinds); ++hi) {
      const PartitionerKind kind = kinds[hi];
      for (int r = 0; r < cfg.runs_per_heuristic; ++r) {
        const std::uint64_t seed = derive_seed({cfg.seed, gi, hi, static_cast<std::uint64_t>(r)});
        PartitionNotes notes;
        Partition part = kind == PartitionerKind::Modularity
                             ? modularity_partition(lg.graph, cfg.sim.max_nodes, &notes, seed)
                             : run_heuristic(kind, lg.graph, cfg.sim.max_nodes, seed, &notes);
        part = canonicalize(part);
        if (!seen.insert(part.assignment).second) continue;

        std::mt19937_64 rng(derive_seed({seed, 31}));
        Proposal top;
        top.partition = part;
        for (int j = 0; j < part.k; ++j) top.angles.push_back(QaoaAngles::uniform(cfg.sim.p, rng));
        FixedTopPolicy policy(top, kind, cfg.sim.max_nodes, cfg.sim.p);
        const SolveReport report = recursive_solve(lg.graph, policy, cfg.sim, derive_seed({seed, 32}), lg.opt);

        OfflineSample s;
        s.graph = lg.name;
        s.graph_hash = hash;
        s.source = partitioner_name(kind);
        s.assignment = part.assignment;
        s.angles = angles_to_matrix(top.angles);
        s.rho = *report.rho;
        if (s.rho < 0.5 || s.rho > 1.0) {
          std::ostringstream msg;
          msg << lg.name << ": label rho " << s.rho << " outside [0.5, 1]";
          warn(msg.str());
        }
        out.push_back(std::move(s));
      }
    }
  }
  return out;
}

EvaluatorTrainReport train_evaluator(Evaluator& net, const std::vector<OfflineSample>& samples,
                                     const std::map<std::string, GraphInput>& inputs, const EvaluatorTrainConfig& cfg,
                                     const EpochCallback& on_epoch) {
  if (samples.empty()) throw std::invalid_argument("train_evaluator: empty dataset");
  if (cfg.batch < 1 || cfg.epochs < 0) throw std::invalid_argument("train_evaluator: bad batch or epoch count");
  std::vector<const GraphInput*> input_of(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto it = inputs.find(samples[i].graph);
    if (it == inputs.end()) throw std::invalid_argument("train_evaluator: no input for graph " + samples[i].graph);
    if (static_cast<int>(samples[i].assignment.size()) != it->second.num_nodes()) {
      throw std::invalid_argument("train_evaluator: assignment size differs from graph " + samples[i].graph);
    }
    input_of[i] = &it->second;
  }

  std::mt19937_64 rng(derive_seed({cfg.seed, 401}));
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  auto n_val = static_cast<std::size_t>(std::floor(cfg.val_fraction * static_cast<double>(samples.size())));
  if (n_val >= samples.size()) n_val = samples.size() - 1;
  std::vector<std::size_t> val(order.end() - static_cast<std::ptrdiff_t>(n_val), order.end());
  std::vector<std::size_t> train(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_val));

  const bool was_frozen = !net.parameters().empty() && net.parameters().front()->frozen;
  net.set_frozen(false);
  const auto params = net.parameters();
  nn::AdamW opt(params, {.lr = cfg.lr, .weight_decay = cfg.weight_decay});
  nn::PlateauSchedule sched(cfg.lr, cfg.factor, cfg.patience, cfg.min_lr);

  auto sample_loss = [&](std::size_t i, double weight, bool backward) {
    const OfflineSample& s = samples[i];
    Tape tape;
    const MatrixXd hard = one_hot(s.assignment, static_cast<int>(s.angles.cols()));
    const Tensor rho = net.forward(tape, *input_of[i], tape.constant(hard), tape.constant(s.angles));
    const Tensor loss = ad::mse(rho, MatrixXd::Constant(1, 1, s.rho));
    if (backward) tape.backward(ad::scale(loss, weight));
    return loss.value()(0, 0);
  };
  auto mean_loss = [&](const std::vector<std::size_t>& idx) {
    double total = 0.0;
    for (std::size_t i : idx) total += sample_loss(i, 0.0, false);
    return total / static_cast<double>(idx.size());
  };

  EvaluatorTrainReport report;
  std::vector<MatrixXd> best = snapshot(params);
  report.best_val_mse = std::numeric_limits<double>::infinity();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(train.begin(), train.end(), rng);
    double total = 0.0;
    for (std::size_t start = 0; start < train.size(); start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t stop = std::min(train.size(), start + static_cast<std::size_t>(cfg.batch));
      opt.zero_grad();
      const double weight = 1.0 / static_cast<double>(stop - start);
      for (std::size_t b = start; b < stop; ++b) total += sample_loss(train[b], weight, true);
      opt.step();
    }
    const double train_mse = total / static_cast<double>(train.size());
    const double val_mse = val.empty() ? mean_loss(train) : mean_loss(val);
    report.train_mse.push_back(train_mse);
    report.val_mse.push_back(val_mse);
    if (val_mse < report.best_val_mse) {
      report.best_val_mse = val_mse;
      report.best_epoch = epoch;
      best = snapshot(params);
    }
    opt.set_lr(sched.step(val_mse));
    if (on_epoch) on_epoch(epoch, train_mse, val_mse, opt.lr());
  }
  restore(params, best);
  net.set_frozen(was_frozen);
  return report;
}

GeneratorTrainReport train_generator(Generator& gen, Evaluator& evaluator, const std::vector<GraphInput>& graphs,
                                     const GeneratorTrainConfig& cfg, const EpochCallback& on_epoch) {
  if (graphs.empty()) throw std::invalid_argument("train_generator: no graphs");
  if (cfg.batch < 1 || cfg.epochs < 0) throw std::invalid_argument("train_generator: bad batch or epoch count");
  if (evaluator.config().p != gen.config().p) throw std::invalid_argument("generator and evaluator depth differ");
  evaluator.set_frozen(true);
  const auto params = gen.parameters();
  nn::AdamW opt(params, {.lr = cfg.lr, .weight_decay = cfg.weight_decay});
  nn::PlateauSchedule sched(cfg.lr, cfg.factor, cfg.patience, cfg.min_lr, nn::PlateauMode::Max);
  std::mt19937_64 rng(derive_seed({cfg.seed, 501}));
  std::vector<std::size_t> order(graphs.size());
  std::iota(order.begin(), order.end(), 0);

  GeneratorTrainReport report;
  std::vector<MatrixXd> best = snapshot(params);
  report.best_rho_hat = -std::numeric_limits<double>::infinity();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
      opt.zero_grad();
      const double weight = -1.0 / static_cast<double>(stop - start);
      for (std::size_t b = start; b < stop; ++b) {
        const GraphInput& in = graphs[order[b]];
        Tape tape;
        const GeneratorForward fwd = gen.forward(tape, in, gen.default_k(in.num_nodes()));
        const Tensor rho = evaluator.forward(tape, in, fwd.s, fwd.angles);
        total += rho.value()(0, 0);
        tape.backward(ad::scale(rho, weight));
      }
      opt.step();
    }
    // The epoch mean is measured before each batch update, like a training loss.
    const double mean_rho = total / static_cast<double>(graphs.size());
    report.mean_rho_hat.push_back(mean_rho);
    if (mean_rho > report.best_rho_hat) {
      report.best_rho_hat = mean_rho;
      report.best_epoch = epoch;
      best = snapshot(params);
    }
    opt.set_lr(sched.step(mean_rho));
    if (on_epoch) on_epoch(epoch, mean_rho, mean_rho, opt.lr());
  }
  restore(params, best);
  return report;
}

TtaResult tta_adapt(const Generator& gen, Evaluator& evaluator, const GraphInput& in, const TtaConfig& cfg) {
  if (cfg.steps < 0) throw std::invalid_argument("tta: steps must be non-negative");
  if (cfg.steps > kMaxTtaSteps) throw std::invalid_argument("tta: steps exceed the ceiling of 1000");
  Generator local = gen;
  const int k = cfg.k.value_or(local.default_k(in.num_nodes()));
  evaluator.set_frozen(true);
  const auto params = local.parameters();
  nn::AdamW opt(params, {.lr = cfg.lr, .weight_decay = cfg.weight_decay});
  nn::PlateauSchedule sched(cfg.lr, cfg.factor, cfg.patience, std::min(cfg.min_lr, cfg.lr), nn::PlateauMode::Max);

  TtaResult res;
  res.rho_hat = -std::numeric_limits<double>::infinity();
  for (int step = 0;; ++step) {
    opt.zero_grad();
    Tape tape;
    const GeneratorForward fwd = local.forward(tape, in, k);
    const Tensor rho = evaluator.forward(tape, in, fwd.s, fwd.angles);
    const double value = rho.value()(0, 0);
    if (step == 0) res.initial_rho_hat = value;
    if (value > res.rho_hat) {
      res.rho_hat = value;
      res.labels = fwd.labels;
      res.angles = fwd.angles.value();
      res.och_fallback = fwd.och_fallback;
    }
    res.best_trajectory.push_back(res.rho_hat);
    if (step == cfg.steps) break;
    tape.backward(ad::scale(rho, -1.0));
    opt.step();
    opt.set_lr(sched.step(value));
  }
  return res;
}

GenPolicy::GenPolicy(const Generator& gen, Evaluator& evaluator, TtaConfig tta)
    : gen_(gen), evaluator_(evaluator), tta_(std::move(tta)) {}

const TtaResult& GenPolicy::top_level(const WeightedGraph& g, bool direct) {
  const auto key = std::make_pair(graph_hash(g), direct);
  auto it = cache_.find(key);
  if (it == cache_.end()) {
    TtaConfig cfg = tta_;
    if (direct) cfg.k = 1;
    it = cache_.emplace(key, tta_adapt(gen_, evaluator_, GraphInput::from_graph(g), cfg)).first;
  }
  last_rho_hat_ = it->second.rho_hat;
  last_trajectory_ = it->second.best_trajectory;
  return it->second;
}

Proposal GenPolicy::propose(const WeightedGraph& g, int level, std::uint64_t) {
  if (level == 0) {
    const TtaResult& res = top_level(g, false);
    return to_proposal(res.labels, res.angles, gen_.config().max_nodes);
  }
  TtaConfig cfg = tta_;
  cfg.steps = 0;
  cfg.k.reset();
  const TtaResult res = tta_adapt(gen_, evaluator_, GraphInput::from_graph(g), cfg);
  return to_proposal(res.labels, res.angles, gen_.config().max_nodes);
}

QaoaAngles GenPolicy::direct_angles(const WeightedGraph& g, int level, std::uint64_t) {
  if (level == 0) return QaoaAngles::from_stacked(top_level(g, true).angles.col(0));
  TtaConfig cfg = tta_;
  cfg.steps = 0;
  cfg.k = 1;
  const TtaResult res = tta_adapt(gen_, evaluator_, GraphInput::from_graph(g), cfg);
  return QaoaAngles::from_stacked(res.angles.col(0));
}

}  // namespace qaoa2::gen
