#include "qaoa2/bench.hpp"

#include "qaoa2/log.hpp"
#include "qaoa2/rng.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace qaoa2::bench {

namespace fs = std::filesystem;

std::vector<Instance> load_instances(const std::vector<fs::path>& paths, InstanceFormat format,
                                     const BestKnownTable* table) {
  std::vector<fs::path> files;
  for (const auto& p : paths) {
    if (fs::is_directory(p)) {
      std::vector<fs::path> inner;
      for (const auto& entry : fs::directory_iterator(p)) {
        if (entry.is_regular_file()) inner.push_back(entry.path());
      }
      std::sort(inner.begin(), inner.end());
      files.insert(files.end(), inner.begin(), inner.end());
    } else {
      files.push_back(p);
    }
  }
  std::vector<Instance> out;
  for (const auto& f : files) {
    Instance inst;
    inst.name = instance_name(f);
    inst.graph = load_maxcut_graph(f, format);
    if (table != nullptr && table->contains(inst.name)) inst.opt = table->at(inst.name);
    out.push_back(std::move(inst));
  }
  return out;
}

double resolve_opt(const Instance& inst) {
  if (inst.opt) return *inst.opt;
  return optimum_value(inst.graph, inst.name, nullptr);
}

SplitSide split_side(const std::string& name) {
  if (name.empty() || !std::isdigit(static_cast<unsigned char>(name.back()))) {
    warn("instance name '" + name + "' has no numeric suffix; assigned to train");
    return SplitSide::Train;
  }
  return (name.back() == '1' || name.back() == '2') ? SplitSide::Test : SplitSide::Train;
}

SuiteSplit split_suite(const std::vector<Instance>& instances) {
  SuiteSplit out;
  for (const auto& inst : instances) {
    (split_side(inst.name) == SplitSide::Test ? out.test : out.train).push_back(inst);
  }
  return out;
}

Method heuristic_method(PartitionerKind kind, int max_nodes, int p) {
  if (kind == PartitionerKind::Gen) throw std::invalid_argument("heuristic_method: gen needs trained networks");
  return {partitioner_name(kind),
          [kind, max_nodes, p] { return std::make_unique<HeuristicPolicy>(kind, max_nodes, p); }};
}

namespace {

class OwningGenPolicy : public PartitionPolicy {
 public:
  OwningGenPolicy(gen::Generator generator, gen::Evaluator evaluator, const gen::TtaConfig& tta)
      : generator_(std::move(generator)), evaluator_(std::move(evaluator)), inner_(generator_, evaluator_, tta) {}

  Proposal propose(const WeightedGraph& g, int level, std::uint64_t seed) override {
    return inner_.propose(g, level, seed);
  }
  QaoaAngles direct_angles(const WeightedGraph& g, int level, std::uint64_t seed) override {
    return inner_.direct_angles(g, level, seed);
  }

 private:
  gen::Generator generator_;
  gen::Evaluator evaluator_;
  gen::GenPolicy inner_;
};

}  // namespace

Method gen_method(const gen::Generator& generator, const gen::Evaluator& evaluator, const gen::TtaConfig& tta,
                  std::string name) {
  return {std::move(name), [generator, evaluator, tta] {
            return std::make_unique<OwningGenPolicy>(generator, evaluator, tta);
          }};
}

SimConfig RunConfig::sim() const {
  SimConfig s;
  s.max_nodes = max_nodes;
  s.p = p;
  s.steps = steps;
  s.lr = lr;
  s.shots = shots;
  s.noise = noise;
  s.exact_merge = exact_merge;
  return s;
}

void RunConfig::validate() const {
  if (runs < 1) throw std::invalid_argument("runs must be at least 1");
  if (workers < 1) throw std::invalid_argument("workers must be at least 1");
  if (tta_steps < 0 || tta_steps > gen::kMaxTtaSteps) {
    throw std::invalid_argument("tta steps must lie in [0, " + std::to_string(gen::kMaxTtaSteps) + "]");
  }
  sim().validate();
}

std::uint64_t run_seed(const RunConfig& cfg, const std::string& instance, int run) {
  return cfg.seed ^ derive_seed({fnv1a(instance), static_cast<std::uint64_t>(run)});
}

void fill_moments(Cell& cell) {
  const auto n = static_cast<double>(cell.rho.size());
  if (cell.rho.empty()) throw std::invalid_argument("fill_moments: no runs");
  cell.mean = std::accumulate(cell.rho.begin(), cell.rho.end(), 0.0) / n;
  double ss = 0.0;
  for (double r : cell.rho) ss += (r - cell.mean) * (r - cell.mean);
  cell.std = cell.rho.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
}

void assign_ranks(ResultTable& table) {
  const std::size_t m = table.methods.size();
  for (std::size_t i = 0; i < table.num_instances(); ++i) {
    for (std::size_t a = 0; a < m; ++a) {
      int better = 0;
      for (std::size_t b = 0; b < m; ++b) {
        if (table.at(i, b).mean > table.at(i, a).mean) ++better;
      }
      table.at(i, a).rank = better + 1;
      table.at(i, a).win = better == 0;
    }
  }
}

ResultTable evaluate_suite(const std::vector<Instance>& instances, const std::vector<Method>& methods,
                           const RunConfig& cfg, const CellCallback& on_cell) {
  cfg.validate();
  if (methods.empty()) throw std::invalid_argument("evaluate_suite: no methods");
  ResultTable table;
  for (const auto& m : methods) table.methods.push_back(m.name);
  std::vector<double> opts;
  for (const auto& inst : instances) opts.push_back(resolve_opt(inst));
  table.cells.resize(instances.size() * methods.size());
  const SimConfig sim = cfg.sim();

  std::mutex callback_mutex;
  auto run_instance = [&](std::size_t i) {
    const Instance& inst = instances[i];
    for (std::size_t mi = 0; mi < methods.size(); ++mi) {
      Cell& cell = table.at(i, mi);
      cell.instance = inst.name;
      cell.num_nodes = inst.graph.num_nodes();
      cell.method = methods[mi].name;
      const auto policy = methods[mi].make();
      double seconds = 0.0;
      for (int r = 0; r < cfg.runs; ++r) {
        policy->random_fallback = false;
        const SolveReport rep = recursive_solve(inst.graph, *policy, sim, run_seed(cfg, inst.name, r), opts[i]);
        cell.rho.push_back(*rep.rho);
        cell.cut.push_back(rep.cut);
        seconds += rep.wall_seconds;
        cell.total_calls = rep.total_calls;
        if (rep.random_fallback) ++cell.random_fallbacks;
      }
      cell.wall_seconds = seconds / cfg.runs;
      fill_moments(cell);
      if (on_cell) {
        const std::lock_guard<std::mutex> lock(callback_mutex);
        on_cell(cell);
      }
    }
  };

  const auto workers = std::min<std::size_t>(static_cast<std::size_t>(cfg.workers), instances.size());
  if (workers <= 1) {
    for (std::size_t i = 0; i < instances.size(); ++i) run_instance(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < instances.size(); i = next++) {
          try {
            run_instance(i);
          } catch (...) {
            const std::lock_guard<std::mutex> lock(failure_mutex);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
  }
  assign_ranks(table);
  return table;
}

std::vector<MethodSummary> summarize(const ResultTable& table) {
  std::vector<MethodSummary> out;
  const std::size_t n = table.num_instances();
  for (std::size_t m = 0; m < table.methods.size(); ++m) {
    MethodSummary s;
    s.method = table.methods[m];
    for (std::size_t i = 0; i < n; ++i) {
      s.mean_rho += table.at(i, m).mean;
      s.mean_rank += table.at(i, m).rank;
      if (table.at(i, m).win) ++s.wins;
    }
    if (n > 0) {
      s.mean_rho /= static_cast<double>(n);
      s.mean_rank /= static_cast<double>(n);
    }
    out.push_back(s);
  }
  return out;
}

std::vector<SizeAggregate> size_aggregates(const ResultTable& table) {
  std::map<std::pair<int, std::size_t>, std::pair<double, int>> acc;
  for (std::size_t i = 0; i < table.num_instances(); ++i) {
    for (std::size_t m = 0; m < table.methods.size(); ++m) {
      auto& slot = acc[{table.at(i, m).num_nodes, m}];
      slot.first += table.at(i, m).mean;
      slot.second += 1;
    }
  }
  std::vector<SizeAggregate> out;
  for (const auto& [key, val] : acc) {
    out.push_back({key.first, table.methods[key.second], val.first / val.second, val.second});
  }
  return out;
}

TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("paired_t_test: lengths differ");
  if (a.size() < 2) throw std::invalid_argument("paired_t_test: need at least two pairs");
  const auto n = static_cast<double>(a.size());
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    d[i] = a[i] - b[i];
    if (!std::isfinite(d[i])) throw std::invalid_argument("paired_t_test: non-finite input");
  }
  TTestResult r;
  r.dof = static_cast<int>(a.size()) - 1;
  r.mean_diff = std::accumulate(d.begin(), d.end(), 0.0) / n;
  if (std::all_of(d.begin(), d.end(), [](double x) { return x == 0.0; })) {
    r.t = 0.0;
    r.p_value = 0.5;
    return r;
  }
  double ss = 0.0;
  for (double x : d) ss += (x - r.mean_diff) * (x - r.mean_diff);
  const double se = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
  if (se == 0.0) {
    r.t = r.mean_diff > 0.0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    r.p_value = r.mean_diff > 0.0 ? 0.0 : 1.0;
    return r;
  }
  r.t = r.mean_diff / se;
  const boost::math::students_t dist(static_cast<double>(r.dof));
  r.p_value = boost::math::cdf(boost::math::complement(dist, r.t));
  return r;
}

std::vector<double> method_means(const ResultTable& table, const std::string& method) {
  const auto it = std::find(table.methods.begin(), table.methods.end(), method);
  if (it == table.methods.end()) throw std::invalid_argument("unknown method '" + method + "'");
  const auto m = static_cast<std::size_t>(it - table.methods.begin());
  std::vector<double> out;
  for (std::size_t i = 0; i < table.num_instances(); ++i) out.push_back(table.at(i, m).mean);
  return out;
}

namespace {

std::string fixed(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10f", x);
  return buf;
}

}  // namespace

std::string to_csv(const ResultTable& table) {
  std::ostringstream out;
  out << "# ranks by descending mean rho; ties share the minimum rank\n";
  out << "instance,num_nodes,method,runs,mean_rho,std_rho,rank,win\n";
  for (const Cell& c : table.cells) {
    out << c.instance << ',' << c.num_nodes << ',' << c.method << ',' << c.rho.size() << ',' << fixed(c.mean) << ','
        << fixed(c.std) << ',' << c.rank << ',' << (c.win ? 1 : 0) << '\n';
  }
  return out.str();
}

std::string aggregates_csv(const std::vector<SizeAggregate>& rows) {
  std::ostringstream out;
  out << "num_nodes,method,mean_rho,instances\n";
  for (const auto& r : rows) out << r.num_nodes << ',' << r.method << ',' << fixed(r.mean_rho) << ',' << r.instances << '\n';
  return out.str();
}

nlohmann::json to_json(const ResultTable& table) {
  nlohmann::json cells = nlohmann::json::array();
  for (const Cell& c : table.cells) {
    cells.push_back({{"instance", c.instance},
                     {"num_nodes", c.num_nodes},
                     {"method", c.method},
                     {"rho", c.rho},
                     {"cut", c.cut},
                     {"mean", c.mean},
                     {"std", c.std},
                     {"rank", c.rank},
                     {"win", c.win},
                     {"wall_seconds", c.wall_seconds},
                     {"total_calls", c.total_calls},
                     {"random_fallbacks", c.random_fallbacks}});
  }
  nlohmann::json summary = nlohmann::json::array();
  for (const auto& s : summarize(table)) {
    summary.push_back({{"method", s.method}, {"mean_rho", s.mean_rho}, {"mean_rank", s.mean_rank}, {"wins", s.wins}});
  }
  return {{"format", "qaoa2-results"},
          {"version", 1},
          {"tie_rule", "shared minimum rank"},
          {"methods", table.methods},
          {"cells", cells},
          {"summary", summary}};
}

ResultTable table_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "qaoa2-results") throw std::invalid_argument("not a results file");
  ResultTable t;
  t.methods = j.at("methods").get<std::vector<std::string>>();
  for (const auto& c : j.at("cells")) {
    Cell cell;
    cell.instance = c.at("instance").get<std::string>();
    cell.num_nodes = c.at("num_nodes").get<int>();
    cell.method = c.at("method").get<std::string>();
    cell.rho = c.at("rho").get<std::vector<double>>();
    cell.cut = c.at("cut").get<std::vector<double>>();
    cell.mean = c.at("mean").get<double>();
    cell.std = c.at("std").get<double>();
    cell.rank = c.at("rank").get<int>();
    cell.win = c.at("win").get<bool>();
    cell.wall_seconds = c.at("wall_seconds").get<double>();
    cell.total_calls = c.at("total_calls").get<int>();
    cell.random_fallbacks = c.at("random_fallbacks").get<int>();
    t.cells.push_back(std::move(cell));
  }
  if (t.methods.empty() || t.cells.size() % t.methods.size() != 0) {
    throw std::invalid_argument("results file: cell count does not match the method list");
  }
  return t;
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace

void write_report(const ResultTable& table, const fs::path& prefix) {
  write_text(fs::path(prefix.string() + ".csv"), to_csv(table));
  write_text(fs::path(prefix.string() + ".json"), to_json(table).dump(2) + "\n");
  write_text(fs::path(prefix.string() + ".sizes.csv"), aggregates_csv(size_aggregates(table)));
}

NoiseStudy noise_study(const std::vector<Instance>& instances, const std::vector<Method>& methods,
                       const RunConfig& cfg, double readout_p) {
  NoiseStudy out;
  RunConfig clean = cfg;
  clean.noise = {};
  RunConfig noisy = cfg;
  noisy.noise.readout_bitphase_p = readout_p;
  out.clean = evaluate_suite(instances, methods, clean);
  out.noisy = evaluate_suite(instances, methods, noisy);
  for (const auto& m : out.clean.methods) {
    const auto a = method_means(out.clean, m);
    const auto b = method_means(out.noisy, m);
    double diff = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) diff += a[i] - b[i];
    out.degradation.push_back(a.empty() ? 0.0 : diff / static_cast<double>(a.size()));
  }
  return out;
}

WeightedGraph signed_erdos_renyi(int n, double edge_prob, std::uint64_t seed) {
  if (n < 1 || edge_prob < 0.0 || edge_prob > 1.0) throw std::invalid_argument("signed_erdos_renyi: bad arguments");
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution keep(edge_prob);
  std::bernoulli_distribution sign(0.5);
  std::vector<Edge> edges;
  for (int u = 0; u < n; ++u) {
    for (int v = u + 1; v < n; ++v) {
      if (keep(rng)) edges.push_back({u, v, sign(rng) ? 1.0 : -1.0});
    }
  }
  return WeightedGraph(n, std::move(edges));
}

PlantedGraph planted_signed_graph(int n, double edge_prob, std::uint64_t seed) {
  if (n < 2 || edge_prob < 0.0 || edge_prob > 1.0) throw std::invalid_argument("planted_signed_graph: bad arguments");
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution keep(edge_prob);
  std::bernoulli_distribution side(0.5);
  std::uniform_real_distribution<double> mag(0.1, 1.0);
  PlantedGraph out;
  out.spins = SpinVector(n);
  for (int i = 0; i < n; ++i) out.spins(i) = side(rng) ? 1 : -1;
  out.spins(0) = 1;
  std::vector<Edge> edges;
  for (int u = 0; u < n; ++u) {
    for (int v = u + 1; v < n; ++v) {
      if (!keep(rng)) continue;
      const double w = mag(rng);
      if (out.spins(u) != out.spins(v)) {
        edges.push_back({u, v, w});
        out.opt += w;
      } else {
        edges.push_back({u, v, -w});
      }
    }
  }
  out.graph = WeightedGraph(n, std::move(edges));
  return out;
}

namespace {

// Single-flip gain bookkeeping on a dense copy of the weights.
struct FlipState {
  Eigen::MatrixXd w;
  Eigen::VectorXd field;  // field_i = sum_j w_ij z_j
  Eigen::VectorXd z;

  // Cut change from flipping i: the cut counts w_ij (1 - z_i z_j) / 2.
  double gain(int i) const { return z(i) * field(i); }
  void flip(int i) {
    z(i) = -z(i);
    field += 2.0 * z(i) * w.col(i);
  }
};

}  // namespace

double best_known_estimate(const WeightedGraph& g, int restarts, std::uint64_t seed) {
  const int n = g.num_nodes();
  if (n <= 24) return brute_force_maxcut(g).value;
  if (restarts < 1) throw std::invalid_argument("best_known_estimate: restarts must be positive");
  const Eigen::MatrixXd w = g.adjacency_matrix();
  const double scale = std::max(g.max_abs_weight(), 1e-12);
  double best = -std::numeric_limits<double>::infinity();
  for (int r = 0; r < restarts; ++r) {
    std::mt19937_64 rng(derive_seed({seed, 71, static_cast<std::uint64_t>(r)}));
    std::uniform_int_distribution<int> pick(0, n - 1);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    FlipState st{w, Eigen::VectorXd(n), Eigen::VectorXd(n)};
    for (int i = 0; i < n; ++i) st.z(i) = unif(rng) < 0.5 ? 1.0 : -1.0;
    st.field = w * st.z;
    const int sweeps = 400;
    const double t_hi = 2.0 * scale;
    const double t_lo = 0.01 * scale;
    for (int s = 0; s < sweeps; ++s) {
      const double temp = t_hi * std::pow(t_lo / t_hi, static_cast<double>(s) / (sweeps - 1));
      for (int step = 0; step < n; ++step) {
        const int i = pick(rng);
        const double gain = st.gain(i);
        if (gain >= 0.0 || unif(rng) < std::exp(gain / temp)) st.flip(i);
      }
    }
    for (bool improved = true; improved;) {
      improved = false;
      for (int i = 0; i < n; ++i) {
        if (st.gain(i) > 1e-12) {
          st.flip(i);
          improved = true;
        }
      }
    }
    SpinVector z(n);
    for (int i = 0; i < n; ++i) z(i) = st.z(i) > 0.0 ? 1 : -1;
    best = std::max(best, cut_value(g, z));
  }
  return best;
}

std::vector<Instance> synthetic_suite(const SyntheticConfig& cfg) {
  if (cfg.count < 0 || cfg.min_nodes < 2 || cfg.max_nodes < cfg.min_nodes) {
    throw std::invalid_argument("synthetic_suite: bad size range");
  }
  std::mt19937_64 rng(derive_seed({cfg.seed, 81}));
  std::uniform_int_distribution<int> size(cfg.min_nodes, cfg.max_nodes);
  std::vector<Instance> out;
  for (int i = 0; i < cfg.count; ++i) {
    const int n = size(rng);
    Instance inst;
    inst.name = cfg.prefix + std::to_string(n) + "_" + std::to_string(i) + "." + std::to_string(i % 10);
    inst.graph = signed_erdos_renyi(n, cfg.edge_prob, derive_seed({cfg.seed, 82, static_cast<std::uint64_t>(i)}));
    inst.opt = best_known_estimate(inst.graph, cfg.estimate_restarts, derive_seed({cfg.seed, 83, static_cast<std::uint64_t>(i)}));
    out.push_back(std::move(inst));
  }
  return out;
}

}  // namespace qaoa2::bench
