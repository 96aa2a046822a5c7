#include "qaoa2/bench.hpp"
#include "qaoa2/gen.hpp"
#include "qaoa2/log.hpp"
#include "qaoa2/nn.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace qaoa2;
using nlohmann::json;

namespace {

fs::path data_dir() {
  const char* env = std::getenv("QAOA2_DATA_DIR");
  return (env != nullptr && *env != '\0') ? fs::path(env) : fs::path("data");
}

fs::path in_data(const std::string& name) { return data_dir() / name; }

// Simulation flags shared by every subcommand that runs QAOA^2.
struct SimFlags {
  int p = 1;
  int max_nodes = 10;
  int steps = 20;
  double lr = 0.01;
  int shots = 1000;
  std::optional<int> noise_shots;
  double readout_p = 0.0;
  bool exact_merge = false;
  std::uint64_t seed = 42;

  void add(CLI::App* app) {
    app->add_option("--p", p, "QAOA depth")->capture_default_str();
    app->add_option("--max-nodes", max_nodes, "Qubit budget per subgraph")->capture_default_str();
    app->add_option("--steps", steps, "Adam steps per subgraph")->capture_default_str();
    app->add_option("--lr", lr, "Adam learning rate for the angles")->capture_default_str();
    app->add_option("--shots", shots, "Final measurement shots")->capture_default_str();
    app->add_option("--noise-shots", noise_shots, "Shots per expectation for parameter-shift gradients");
    app->add_option("--readout-p", readout_p, "Readout bit-flip probability")->capture_default_str();
    app->add_flag("--exact-merge", exact_merge, "Brute-force merge graphs that fit the device");
    app->add_option("--seed", seed, "Master seed")->capture_default_str();
  }

  bench::RunConfig run_config() const {
    bench::RunConfig cfg;
    cfg.p = p;
    cfg.max_nodes = max_nodes;
    cfg.steps = steps;
    cfg.lr = lr;
    cfg.shots = shots;
    cfg.noise.shots = noise_shots;
    cfg.noise.readout_bitphase_p = readout_p;
    cfg.exact_merge = exact_merge;
    cfg.seed = seed;
    return cfg;
  }
};

// Instance selection flags.
struct SuiteFlags {
  std::vector<std::string> paths;
  std::string format = "edgelist";
  std::string best_known;
  std::string split = "all";

  void add(CLI::App* app, const std::string& default_split) {
    split = default_split;
    app->add_option("--instances", paths, "Instance files or directories (default: $QAOA2_DATA_DIR/instances)");
    app->add_option("--format", format, "Instance format: edgelist or qubo")->capture_default_str();
    app->add_option("--best-known", best_known, "CSV of name,value optima (default: $QAOA2_DATA_DIR/best_known.csv)");
    app->add_option("--split", split, "Which instances to use: all, train or test")
        ->check(CLI::IsMember({"all", "train", "test"}))
        ->capture_default_str();
  }

  std::vector<bench::Instance> load() const {
    std::vector<fs::path> roots;
    for (const auto& p : paths) roots.emplace_back(p);
    if (roots.empty()) roots.push_back(in_data("instances"));
    std::optional<BestKnownTable> table;
    const fs::path table_path = best_known.empty() ? in_data("best_known.csv") : fs::path(best_known);
    if (!best_known.empty() || fs::exists(table_path)) table = BestKnownTable::load(table_path);
    auto all = bench::load_instances(roots, parse_format(format), table ? &*table : nullptr);
    if (split == "all") return all;
    const auto s = bench::split_suite(all);
    return split == "train" ? s.train : s.test;
  }
};

// Network checkpoints and TTA budget for the gen method.
struct GenFlags {
  std::string generator;
  std::string evaluator;
  int tta_steps = gen::kDefaultTtaSteps;

  void add(CLI::App* app) {
    app->add_option("--generator", generator, "Generator checkpoint (default: $QAOA2_DATA_DIR/generator.json)");
    app->add_option("--evaluator", evaluator, "Evaluator checkpoint (default: $QAOA2_DATA_DIR/evaluator.json)");
    app->add_option("--tta-steps", tta_steps, "Test-time adaptation steps")
        ->check(CLI::Range(0, gen::kMaxTtaSteps))
        ->capture_default_str();
  }

  fs::path generator_path() const { return generator.empty() ? in_data("generator.json") : fs::path(generator); }
  fs::path evaluator_path() const { return evaluator.empty() ? in_data("evaluator.json") : fs::path(evaluator); }

  bench::Method method(int max_nodes) const {
    gen::Generator g = gen::Generator::from_json(nn::read_json_file(generator_path()));
    gen::Evaluator e = gen::Evaluator::from_json(nn::read_json_file(evaluator_path()));
    if (g.config().max_nodes != max_nodes) {
      throw std::invalid_argument("generator was trained for max_nodes " + std::to_string(g.config().max_nodes) +
                                  ", run uses " + std::to_string(max_nodes));
    }
    gen::TtaConfig tta;
    tta.steps = tta_steps;
    return bench::gen_method(g, e, tta);
  }
};

std::vector<bench::Method> make_methods(const std::vector<std::string>& names, const SimFlags& sim,
                                        const GenFlags& gflags) {
  std::vector<bench::Method> out;
  for (const auto& name : names) {
    const PartitionerKind kind = parse_partitioner(name);
    out.push_back(kind == PartitionerKind::Gen ? gflags.method(sim.max_nodes)
                                               : bench::heuristic_method(kind, sim.max_nodes, sim.p));
  }
  return out;
}

void print_summary(const bench::ResultTable& table) {
  std::printf("%-12s %10s %10s %6s\n", "method", "mean_rho", "mean_rank", "wins");
  for (const auto& s : bench::summarize(table)) {
    std::printf("%-12s %10.4f %10.3f %6d\n", s.method.c_str(), s.mean_rho, s.mean_rank, s.wins);
  }
}

std::map<std::string, gen::GraphInput> inputs_by_name(const std::vector<bench::Instance>& instances) {
  std::map<std::string, gen::GraphInput> out;
  for (const auto& inst : instances) out[inst.name] = gen::GraphInput::from_graph(inst.graph);
  return out;
}

void print_epoch(int epoch, double train, double val, double lr) {
  std::fprintf(stderr, "epoch %4d  train %.6f  val %.6f  lr %.3g\n", epoch, train, val, lr);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"QAOA-in-QAOA MaxCut solver with learned partitioning"};
  app.require_subcommand(1);
  app.footer("Data directory: $QAOA2_DATA_DIR (default ./data).");

  // solve
  auto* solve = app.add_subcommand("solve", "Solve one instance and print a JSON report");
  SimFlags solve_sim;
  GenFlags solve_gen;
  std::string solve_graph;
  std::string solve_format = "edgelist";
  std::string solve_method = "kl";
  std::string solve_best_known;
  solve->add_option("graph", solve_graph, "Instance file")->required()->check(CLI::ExistingFile);
  solve->add_option("--format", solve_format, "Instance format: edgelist or qubo")->capture_default_str();
  solve->add_option("--method", solve_method, "random, modularity, boundary, kl or gen")->capture_default_str();
  solve->add_option("--best-known", solve_best_known, "CSV of name,value optima");
  solve_sim.add(solve);
  solve_gen.add(solve);

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "Multi-run benchmark over a suite; writes CSV and JSON");
  SimFlags eval_sim;
  SuiteFlags eval_suite;
  GenFlags eval_gen;
  std::vector<std::string> eval_methods{"random", "modularity", "boundary", "kl"};
  int eval_runs = 10;
  int eval_workers = 1;
  std::string eval_out = "results";
  eval_suite.add(evaluate, "test");
  eval_sim.add(evaluate);
  eval_gen.add(evaluate);
  evaluate->add_option("--methods", eval_methods, "Methods to compare")->delimiter(',')->capture_default_str();
  evaluate->add_option("--runs", eval_runs, "Runs per instance and method")->capture_default_str();
  evaluate->add_option("--workers", eval_workers, "Parallel instance workers")->capture_default_str();
  evaluate->add_option("--out", eval_out, "Output prefix")->capture_default_str();

  // noise-eval
  auto* noise = app.add_subcommand("noise-eval", "Compare noiseless and readout-noise runs");
  SimFlags noise_sim;
  SuiteFlags noise_suite;
  GenFlags noise_gen;
  std::vector<std::string> noise_methods{"random", "modularity", "boundary", "kl"};
  int noise_runs = 10;
  double noise_p = 0.05;
  std::string noise_out = "noise";
  noise_suite.add(noise, "test");
  noise_sim.add(noise);
  noise_gen.add(noise);
  noise->add_option("--methods", noise_methods, "Methods to compare")->delimiter(',')->capture_default_str();
  noise->add_option("--runs", noise_runs, "Runs per instance and method")->capture_default_str();
  noise->add_option("--bitphase-p", noise_p, "Readout flip probability of the noisy arm")->capture_default_str();
  noise->add_option("--out", noise_out, "Output prefix")->capture_default_str();

  // gen-dataset
  auto* dataset = app.add_subcommand("gen-dataset", "Build the offline (S, P, rho) dataset");
  SimFlags data_sim;
  SuiteFlags data_suite;
  int data_runs = 70;
  std::string data_out;
  data_suite.add(dataset, "train");
  data_sim.add(dataset);
  dataset->add_option("--runs-per-heuristic", data_runs, "Runs of each heuristic per graph")->capture_default_str();
  dataset->add_option("--out", data_out, "JSONL output (default: $QAOA2_DATA_DIR/dataset.jsonl)");

  // train-evaluator
  auto* train_eval = app.add_subcommand("train-evaluator", "Fit the surrogate evaluator on the offline dataset");
  SuiteFlags te_suite;
  gen::EvaluatorConfig te_net;
  gen::EvaluatorTrainConfig te_cfg;
  std::string te_dataset;
  std::string te_out;
  te_suite.add(train_eval, "train");
  train_eval->add_option("--dataset", te_dataset, "JSONL dataset (default: $QAOA2_DATA_DIR/dataset.jsonl)");
  train_eval->add_option("--out", te_out, "Checkpoint (default: $QAOA2_DATA_DIR/evaluator.json)");
  train_eval->add_option("--p", te_net.p, "QAOA depth")->capture_default_str();
  train_eval->add_option("--hidden", te_net.hidden, "GNN width")->capture_default_str();
  train_eval->add_option("--layers", te_net.layers, "GNN layers per view")->capture_default_str();
  train_eval->add_flag("--gnn-unweighted", te_net.gnn_unweighted, "Ignore edge weights in GAT messages");
  train_eval->add_option("--batch", te_cfg.batch, "Batch size")->capture_default_str();
  train_eval->add_option("--lr", te_cfg.lr, "AdamW learning rate")->capture_default_str();
  train_eval->add_option("--weight-decay", te_cfg.weight_decay, "AdamW weight decay")->capture_default_str();
  train_eval->add_option("--epochs", te_cfg.epochs, "Epochs")->capture_default_str();
  train_eval->add_option("--factor", te_cfg.factor, "Plateau decay factor")->capture_default_str();
  train_eval->add_option("--patience", te_cfg.patience, "Plateau patience")->capture_default_str();
  train_eval->add_option("--val-fraction", te_cfg.val_fraction, "Held-out fraction")->capture_default_str();
  train_eval->add_option("--seed", te_cfg.seed, "Seed")->capture_default_str();

  // train-generator
  auto* train_gen = app.add_subcommand("train-generator", "Train the generator against the frozen evaluator");
  SuiteFlags tg_suite;
  gen::GeneratorConfig tg_net;
  gen::GeneratorTrainConfig tg_cfg;
  std::string tg_evaluator;
  std::string tg_out;
  tg_suite.add(train_gen, "train");
  train_gen->add_option("--evaluator", tg_evaluator, "Evaluator checkpoint (default: $QAOA2_DATA_DIR/evaluator.json)");
  train_gen->add_option("--out", tg_out, "Checkpoint (default: $QAOA2_DATA_DIR/generator.json)");
  train_gen->add_option("--hidden", tg_net.hidden, "GNN width")->capture_default_str();
  train_gen->add_option("--layers", tg_net.layers, "GNN layers per encoder")->capture_default_str();
  train_gen->add_option("--tau", tg_net.tau, "Soft assignment temperature")->capture_default_str();
  train_gen->add_option("--max-nodes", tg_net.max_nodes, "Qubit budget per subgraph")->capture_default_str();
  train_gen->add_option("--k-max", tg_net.k_max, "Anchor pool size")->capture_default_str();
  train_gen->add_flag("--gnn-unweighted", tg_net.gnn_unweighted, "Ignore edge weights in GAT messages");
  train_gen->add_option("--batch", tg_cfg.batch, "Batch size")->capture_default_str();
  train_gen->add_option("--lr", tg_cfg.lr, "AdamW learning rate")->capture_default_str();
  train_gen->add_option("--weight-decay", tg_cfg.weight_decay, "AdamW weight decay")->capture_default_str();
  train_gen->add_option("--epochs", tg_cfg.epochs, "Epochs")->capture_default_str();
  train_gen->add_option("--factor", tg_cfg.factor, "Plateau decay factor")->capture_default_str();
  train_gen->add_option("--patience", tg_cfg.patience, "Plateau patience")->capture_default_str();
  train_gen->add_option("--seed", tg_cfg.seed, "Seed")->capture_default_str();

  // adapt
  auto* adapt = app.add_subcommand("adapt", "Run test-time adaptation on one instance and print the result");
  GenFlags adapt_gen;
  std::string adapt_graph;
  std::string adapt_format = "edgelist";
  gen::TtaConfig adapt_cfg;
  adapt->add_option("graph", adapt_graph, "Instance file")->required()->check(CLI::ExistingFile);
  adapt->add_option("--format", adapt_format, "Instance format: edgelist or qubo")->capture_default_str();
  adapt_gen.add(adapt);
  adapt->add_option("--lr", adapt_cfg.lr, "AdamW learning rate")->capture_default_str();
  adapt->add_option("--min-lr", adapt_cfg.min_lr, "Plateau floor")->capture_default_str();
  adapt->add_option("--factor", adapt_cfg.factor, "Plateau decay factor")->capture_default_str();
  adapt->add_option("--patience", adapt_cfg.patience, "Plateau patience")->capture_default_str();
  adapt->add_option("--weight-decay", adapt_cfg.weight_decay, "AdamW weight decay")->capture_default_str();

  // report
  auto* report = app.add_subcommand("report", "Summarize a results JSON and test one method against another");
  std::string report_results;
  std::string report_method;
  std::string report_baseline;
  std::string report_sizes;
  report->add_option("results", report_results, "Results JSON from evaluate")->required()->check(CLI::ExistingFile);
  report->add_option("--method", report_method, "Method under test");
  report->add_option("--baseline", report_baseline, "Baseline for the one-sided paired t-test");
  report->add_option("--sizes", report_sizes, "Write per-size aggregates to this CSV");

  // synth
  auto* synth = app.add_subcommand("synth", "Write a seeded signed Erdos-Renyi suite with estimated optima");
  bench::SyntheticConfig synth_cfg;
  std::string synth_out;
  synth->add_option("--count", synth_cfg.count, "Number of graphs")->capture_default_str();
  synth->add_option("--min-nodes", synth_cfg.min_nodes, "Smallest graph")->capture_default_str();
  synth->add_option("--max-nodes", synth_cfg.max_nodes, "Largest graph")->capture_default_str();
  synth->add_option("--edge-prob", synth_cfg.edge_prob, "Edge probability")->capture_default_str();
  synth->add_option("--restarts", synth_cfg.estimate_restarts, "Annealing restarts for OPT")->capture_default_str();
  synth->add_option("--seed", synth_cfg.seed, "Seed")->capture_default_str();
  synth->add_option("--out", synth_out, "Output directory (default: $QAOA2_DATA_DIR)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*solve) {
      const bench::RunConfig cfg = solve_sim.run_config();
      cfg.validate();
      bench::Instance inst;
      inst.name = instance_name(solve_graph);
      inst.graph = load_maxcut_graph(solve_graph, parse_format(solve_format));
      if (!solve_best_known.empty()) {
        const auto table = BestKnownTable::load(solve_best_known);
        if (table.contains(inst.name)) inst.opt = table.at(inst.name);
      }
      std::optional<double> opt = inst.opt;
      if (!opt && inst.graph.num_nodes() <= 20) opt = bench::resolve_opt(inst);
      auto method = make_methods({solve_method}, solve_sim, solve_gen).front();
      const auto policy = method.make();
      const SolveReport rep = recursive_solve(inst.graph, *policy, cfg.sim(), cfg.seed, opt);
      json levels = json::array();
      for (const auto& l : rep.levels) levels.push_back({{"num_nodes", l.num_nodes}, {"k", l.k}, {"calls", l.calls}});
      std::vector<int> spins(rep.spins.data(), rep.spins.data() + rep.spins.size());
      json out{{"instance", inst.name},
               {"num_nodes", inst.graph.num_nodes()},
               {"method", method.name},
               {"cut", rep.cut},
               {"rho", rep.rho ? json(*rep.rho) : json(nullptr)},
               {"opt", opt ? json(*opt) : json(nullptr)},
               {"levels", levels},
               {"total_calls", rep.total_calls},
               {"wall_seconds", rep.wall_seconds},
               {"random_fallback", rep.random_fallback},
               {"spins", spins}};
      std::cout << out.dump(2) << '\n';
    } else if (*evaluate) {
      bench::RunConfig cfg = eval_sim.run_config();
      cfg.runs = eval_runs;
      cfg.workers = eval_workers;
      cfg.tta_steps = eval_gen.tta_steps;
      const auto instances = eval_suite.load();
      const auto methods = make_methods(eval_methods, eval_sim, eval_gen);
      const auto table = bench::evaluate_suite(instances, methods, cfg, [](const bench::Cell& c) {
        std::fprintf(stderr, "%-24s %-12s mean %.4f std %.4f\n", c.instance.c_str(), c.method.c_str(), c.mean, c.std);
      });
      bench::write_report(table, eval_out);
      print_summary(table);
    } else if (*noise) {
      bench::RunConfig cfg = noise_sim.run_config();
      cfg.runs = noise_runs;
      cfg.tta_steps = noise_gen.tta_steps;
      const auto study = bench::noise_study(noise_suite.load(), make_methods(noise_methods, noise_sim, noise_gen), cfg,
                                            noise_p);
      bench::write_report(study.clean, noise_out + ".clean");
      bench::write_report(study.noisy, noise_out + ".noisy");
      std::printf("%-12s %10s %10s %12s\n", "method", "clean", "noisy", "degradation");
      const auto clean = bench::summarize(study.clean);
      const auto noisy = bench::summarize(study.noisy);
      for (std::size_t m = 0; m < clean.size(); ++m) {
        std::printf("%-12s %10.4f %10.4f %12.4f\n", clean[m].method.c_str(), clean[m].mean_rho, noisy[m].mean_rho,
                    study.degradation[m]);
      }
    } else if (*dataset) {
      const bench::RunConfig run = data_sim.run_config();
      run.validate();
      std::vector<gen::LabeledGraph> graphs;
      for (const auto& inst : data_suite.load()) graphs.push_back({inst.name, inst.graph, bench::resolve_opt(inst)});
      gen::DatasetConfig cfg;
      cfg.runs_per_heuristic = data_runs;
      cfg.sim = run.sim();
      cfg.seed = run.seed;
      const auto samples = gen::build_offline_dataset(graphs, cfg);
      const fs::path out = data_out.empty() ? in_data("dataset.jsonl") : fs::path(data_out);
      gen::write_dataset(out, samples);
      std::printf("%zu samples from %zu graphs -> %s\n", samples.size(), graphs.size(), out.string().c_str());
    } else if (*train_eval) {
      const auto samples = gen::read_dataset(te_dataset.empty() ? in_data("dataset.jsonl") : fs::path(te_dataset));
      const auto inputs = inputs_by_name(te_suite.load());
      gen::Evaluator net(te_net);
      const auto rep = gen::train_evaluator(net, samples, inputs, te_cfg, print_epoch);
      const fs::path out = te_out.empty() ? in_data("evaluator.json") : fs::path(te_out);
      nn::write_json_file(out, net.to_json());
      std::printf("best epoch %d, validation MSE %.6g -> %s\n", rep.best_epoch, rep.best_val_mse, out.string().c_str());
    } else if (*train_gen) {
      gen::Evaluator net = gen::Evaluator::from_json(
          nn::read_json_file(tg_evaluator.empty() ? in_data("evaluator.json") : fs::path(tg_evaluator)));
      tg_net.p = net.config().p;
      std::vector<gen::GraphInput> graphs;
      for (const auto& inst : tg_suite.load()) graphs.push_back(gen::GraphInput::from_graph(inst.graph));
      gen::Generator g(tg_net);
      const auto rep = gen::train_generator(g, net, graphs, tg_cfg, print_epoch);
      const fs::path out = tg_out.empty() ? in_data("generator.json") : fs::path(tg_out);
      nn::write_json_file(out, g.to_json());
      std::printf("best epoch %d, mean predicted ratio %.6f -> %s\n", rep.best_epoch, rep.best_rho_hat,
                  out.string().c_str());
    } else if (*adapt) {
      const gen::Generator g = gen::Generator::from_json(nn::read_json_file(adapt_gen.generator_path()));
      gen::Evaluator e = gen::Evaluator::from_json(nn::read_json_file(adapt_gen.evaluator_path()));
      const WeightedGraph graph = load_maxcut_graph(adapt_graph, parse_format(adapt_format));
      adapt_cfg.steps = adapt_gen.tta_steps;
      const auto res = gen::tta_adapt(g, e, gen::GraphInput::from_graph(graph), adapt_cfg);
      json angles = json::array();
      for (Eigen::Index r = 0; r < res.angles.rows(); ++r) {
        std::vector<double> row(static_cast<std::size_t>(res.angles.cols()));
        for (Eigen::Index c = 0; c < res.angles.cols(); ++c) row[static_cast<std::size_t>(c)] = res.angles(r, c);
        angles.push_back(row);
      }
      json out{{"instance", instance_name(adapt_graph)},
               {"labels", res.labels},
               {"angles", angles},
               {"rho_hat", res.rho_hat},
               {"initial_rho_hat", res.initial_rho_hat},
               {"best_trajectory", res.best_trajectory},
               {"och_fallback", res.och_fallback}};
      std::cout << out.dump(2) << '\n';
    } else if (*report) {
      const auto table = bench::table_from_json(nn::read_json_file(report_results));
      print_summary(table);
      if (!report_sizes.empty()) {
        std::ofstream out(report_sizes, std::ios::binary);
        out << bench::aggregates_csv(bench::size_aggregates(table));
      }
      if (!report_method.empty() && !report_baseline.empty()) {
        const auto t = bench::paired_t_test(bench::method_means(table, report_method),
                                            bench::method_means(table, report_baseline));
        std::printf("%s > %s: mean diff %.5f, t = %.4f (dof %d), one-sided p = %.4g\n", report_method.c_str(),
                    report_baseline.c_str(), t.mean_diff, t.t, t.dof, t.p_value);
      }
    } else if (*synth) {
      const fs::path out = synth_out.empty() ? data_dir() : fs::path(synth_out);
      fs::create_directories(out / "instances");
      const auto suite = bench::synthetic_suite(synth_cfg);
      std::ofstream table(out / "best_known.csv", std::ios::binary);
      table << "name,value\n";
      for (const auto& inst : suite) {
        std::ofstream f(out / "instances" / (inst.name + ".txt"), std::ios::binary);
        write_edge_list(f, inst.graph);
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.17g", *inst.opt);
        table << inst.name << ',' << buf << '\n';
      }
      std::printf("%zu instances -> %s\n", suite.size(), out.string().c_str());
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
