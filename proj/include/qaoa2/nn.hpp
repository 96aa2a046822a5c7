#pragma once

#include "qaoa2/autodiff.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace qaoa2::nn {

using ad::Parameter;
using ad::Tape;
using ad::Tensor;

/// U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
Eigen::MatrixXd glorot_uniform(Eigen::Index fan_in, Eigen::Index fan_out, std::mt19937_64& rng);

/// Layers own their parameters; collect() appends stable pointers, so an owner
/// must not be moved after its parameters are handed to an optimizer.
struct Linear {
  Linear() = default;
  Linear(const std::string& name, int in, int out, std::mt19937_64& rng);

  Tensor forward(Tape& tape, const Tensor& x);
  void collect(std::vector<Parameter*>& out);

  Parameter weight;  // in x out
  Parameter bias;    // 1 x out
};

/// D^{-1/2}(A + I)D^{-1/2} X W + b, taking the normalized adjacency.
struct GcnLayer {
  GcnLayer() = default;
  GcnLayer(const std::string& name, int in, int out, std::mt19937_64& rng);

  Tensor forward(Tape& tape, const Tensor& x, const Tensor& norm_adjacency);
  void collect(std::vector<Parameter*>& out);

  Linear lin;
};

/// Single-head GATv2 with separate source/target projections and an output bias.
struct Gatv2Layer {
  Gatv2Layer() = default;
  Gatv2Layer(const std::string& name, int in, int out, std::mt19937_64& rng);

  Tensor forward(Tape& tape, const Tensor& x, const Tensor& adjacency, bool weighted = true);
  void collect(std::vector<Parameter*>& out);

  Linear src;
  Linear dst;
  Parameter attention;  // out x 1
  Parameter bias;       // 1 x out
};

/// Linear-ReLU-Linear-ReLU embedding followed by GATv2 layers, ReLU between
/// layers and none after the last.
struct GatEncoder {
  GatEncoder() = default;
  GatEncoder(const std::string& name, int in, int hidden, int layers, std::mt19937_64& rng);

  Tensor forward(Tape& tape, const Tensor& x, const Tensor& adjacency);
  void collect(std::vector<Parameter*>& out);

  Linear embed1;
  Linear embed2;
  std::vector<Gatv2Layer> layers;
  bool weighted = true;
};

/// Stacked GCN layers, ReLU between layers and none after the last.
struct GcnEncoder {
  GcnEncoder() = default;
  GcnEncoder(const std::string& name, int in, int hidden, int layers, std::mt19937_64& rng);

  Tensor forward(Tape& tape, const Tensor& x, const Tensor& adjacency);
  void collect(std::vector<Parameter*>& out);

  std::vector<GcnLayer> layers;
};

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// Adam with decoupled weight decay: w <- w - lr*lambda*w before the moment step.
class AdamW {
 public:
  AdamW(std::vector<Parameter*> params, AdamWConfig cfg = {});

  void step();
  void zero_grad();

  double lr() const { return cfg_.lr; }
  void set_lr(double lr) { cfg_.lr = lr; }
  long steps() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }

  nlohmann::json state() const;
  void load_state(const nlohmann::json& j);

 private:
  std::vector<Parameter*> params_;
  std::vector<Eigen::MatrixXd> m_;
  std::vector<Eigen::MatrixXd> v_;
  AdamWConfig cfg_;
  long t_ = 0;
};

enum class PlateauMode { Min, Max };

/// Multiplies lr by `factor` (floored at min_lr) once the metric has failed to
/// improve on its best for more than `patience` consecutive calls.
class PlateauSchedule {
 public:
  PlateauSchedule(double lr, double factor, int patience, double min_lr, PlateauMode mode = PlateauMode::Min);

  double step(double metric);
  double lr() const { return lr_; }
  int stale() const { return stale_; }
  double best() const { return best_; }

  nlohmann::json state() const;
  void load_state(const nlohmann::json& j);

 private:
  double lr_;
  double factor_;
  int patience_;
  double min_lr_;
  PlateauMode mode_;
  double best_;
  int stale_ = 0;
};

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m);
Eigen::MatrixXd matrix_from_json(const nlohmann::json& j);

/// Named parameter arrays keyed by Parameter::name.
nlohmann::json parameters_to_json(const std::vector<Parameter*>& params);
/// Loads values by name; throws on a missing name or shape mismatch.
void parameters_from_json(const nlohmann::json& j, const std::vector<Parameter*>& params);

inline constexpr int kCheckpointVersion = 1;

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json_file(const std::filesystem::path& path);

}  // namespace qaoa2::nn
