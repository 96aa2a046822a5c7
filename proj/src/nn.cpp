#include "qaoa2/nn.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace qaoa2::nn {

using Eigen::MatrixXd;
using nlohmann::json;

MatrixXd glorot_uniform(Eigen::Index fan_in, Eigen::Index fan_out, std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> unif(-a, a);
  MatrixXd m(fan_in, fan_out);
  for (Eigen::Index j = 0; j < fan_out; ++j) {
    for (Eigen::Index i = 0; i < fan_in; ++i) m(i, j) = unif(rng);
  }
  return m;
}

namespace {

Parameter make_param(const std::string& name, MatrixXd value) {
  Parameter p;
  p.name = name;
  p.value = std::move(value);
  p.zero_grad();
  return p;
}

}  // namespace

Linear::Linear(const std::string& name, int in, int out, std::mt19937_64& rng)
    : weight(make_param(name + ".weight", glorot_uniform(in, out, rng))),
      bias(make_param(name + ".bias", MatrixXd::Zero(1, out))) {}

Tensor Linear::forward(Tape& tape, const Tensor& x) {
  return ad::add_bias(ad::matmul(x, tape.param(weight)), tape.param(bias));
}

void Linear::collect(std::vector<Parameter*>& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

GcnLayer::GcnLayer(const std::string& name, int in, int out, std::mt19937_64& rng) : lin(name, in, out, rng) {}

Tensor GcnLayer::forward(Tape& tape, const Tensor& x, const Tensor& norm_adjacency) {
  const Tensor xw = ad::matmul(x, tape.param(lin.weight));
  return ad::add_bias(ad::matmul(norm_adjacency, xw), tape.param(lin.bias));
}

void GcnLayer::collect(std::vector<Parameter*>& out) { lin.collect(out); }

Gatv2Layer::Gatv2Layer(const std::string& name, int in, int out, std::mt19937_64& rng)
    : src(name + ".src", in, out, rng),
      dst(name + ".dst", in, out, rng),
      attention(make_param(name + ".attention", glorot_uniform(out, 1, rng))),
      bias(make_param(name + ".bias", MatrixXd::Zero(1, out))) {}

Tensor Gatv2Layer::forward(Tape& tape, const Tensor& x, const Tensor& adjacency, bool weighted) {
  const Tensor hs = src.forward(tape, x);
  const Tensor ht = dst.forward(tape, x);
  const Tensor agg = ad::gatv2_attention(hs, ht, tape.param(attention), adjacency, 0.2, weighted);
  return ad::add_bias(agg, tape.param(bias));
}

void Gatv2Layer::collect(std::vector<Parameter*>& out) {
  src.collect(out);
  dst.collect(out);
  out.push_back(&attention);
  out.push_back(&bias);
}

GatEncoder::GatEncoder(const std::string& name, int in, int hidden, int num_layers, std::mt19937_64& rng)
    : embed1(name + ".embed1", in, hidden, rng), embed2(name + ".embed2", hidden, hidden, rng) {
  if (num_layers < 1) throw std::invalid_argument("encoder needs at least one layer");
  for (int l = 0; l < num_layers; ++l) {
    layers.emplace_back(name + ".gat" + std::to_string(l), hidden, hidden, rng);
  }
}

Tensor GatEncoder::forward(Tape& tape, const Tensor& x, const Tensor& adjacency) {
  Tensor h = ad::relu(embed1.forward(tape, x));
  h = ad::relu(embed2.forward(tape, h));
  for (std::size_t l = 0; l < layers.size(); ++l) {
    h = layers[l].forward(tape, h, adjacency, weighted);
    if (l + 1 < layers.size()) h = ad::relu(h);
  }
  return h;
}

void GatEncoder::collect(std::vector<Parameter*>& out) {
  embed1.collect(out);
  embed2.collect(out);
  for (auto& l : layers) l.collect(out);
}

GcnEncoder::GcnEncoder(const std::string& name, int in, int hidden, int num_layers, std::mt19937_64& rng) {
  if (num_layers < 1) throw std::invalid_argument("encoder needs at least one layer");
  for (int l = 0; l < num_layers; ++l) {
    layers.emplace_back(name + ".gcn" + std::to_string(l), l == 0 ? in : hidden, hidden, rng);
  }
}

Tensor GcnEncoder::forward(Tape& tape, const Tensor& x, const Tensor& adjacency) {
  const Tensor norm = ad::gcn_normalize(adjacency);
  Tensor h = x;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    h = layers[l].forward(tape, h, norm);
    if (l + 1 < layers.size()) h = ad::relu(h);
  }
  return h;
}

void GcnEncoder::collect(std::vector<Parameter*>& out) {
  for (auto& l : layers) l.collect(out);
}

AdamW::AdamW(std::vector<Parameter*> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (Parameter* p : params_) {
    m_.push_back(MatrixXd::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(MatrixXd::Zero(p->value.rows(), p->value.cols()));
    if (p->grad.rows() != p->value.rows() || p->grad.cols() != p->value.cols()) p->zero_grad();
  }
}

void AdamW::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    const MatrixXd& g = p.grad;
    p.value *= 1.0 - cfg_.lr * cfg_.weight_decay;
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseAbs2();
    const auto m_hat = m_[i].array() / bc1;
    const auto v_hat = v_[i].array() / bc2;
    p.value.array() -= cfg_.lr * m_hat / (v_hat.sqrt() + cfg_.eps);
  }
}

void AdamW::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

json matrix_to_json(const MatrixXd& m) {
  std::vector<double> data(m.data(), m.data() + m.size());
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

MatrixXd matrix_from_json(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != rows * cols) throw std::runtime_error("matrix data size mismatch");
  return Eigen::Map<const MatrixXd>(data.data(), rows, cols);
}

json AdamW::state() const {
  json params = json::array();
  for (std::size_t i = 0; i < params_.size(); ++i) {
    params.push_back({{"name", params_[i]->name}, {"m", matrix_to_json(m_[i])}, {"v", matrix_to_json(v_[i])}});
  }
  return json{{"lr", cfg_.lr},
              {"beta1", cfg_.beta1},
              {"beta2", cfg_.beta2},
              {"eps", cfg_.eps},
              {"weight_decay", cfg_.weight_decay},
              {"step", t_},
              {"moments", params}};
}

void AdamW::load_state(const json& j) {
  cfg_.lr = j.at("lr").get<double>();
  cfg_.beta1 = j.at("beta1").get<double>();
  cfg_.beta2 = j.at("beta2").get<double>();
  cfg_.eps = j.at("eps").get<double>();
  cfg_.weight_decay = j.at("weight_decay").get<double>();
  t_ = j.at("step").get<long>();
  const json& moments = j.at("moments");
  if (moments.size() != params_.size()) throw std::runtime_error("optimizer state does not match parameters");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (moments[i].at("name").get<std::string>() != params_[i]->name) {
      throw std::runtime_error("optimizer state order mismatch at " + params_[i]->name);
    }
    m_[i] = matrix_from_json(moments[i].at("m"));
    v_[i] = matrix_from_json(moments[i].at("v"));
    if (m_[i].rows() != params_[i]->value.rows() || m_[i].cols() != params_[i]->value.cols() ||
        v_[i].rows() != m_[i].rows() || v_[i].cols() != m_[i].cols()) {
      throw std::runtime_error("optimizer moment shape mismatch at " + params_[i]->name);
    }
  }
}

PlateauSchedule::PlateauSchedule(double lr, double factor, int patience, double min_lr, PlateauMode mode)
    : lr_(lr),
      factor_(factor),
      patience_(patience),
      min_lr_(min_lr),
      mode_(mode),
      best_(mode == PlateauMode::Min ? std::numeric_limits<double>::infinity()
                                     : -std::numeric_limits<double>::infinity()) {
  if (!(factor > 0.0 && factor < 1.0)) throw std::invalid_argument("plateau factor must lie in (0, 1)");
  if (patience < 0) throw std::invalid_argument("plateau patience must be non-negative");
  if (min_lr < 0.0 || lr < min_lr) throw std::invalid_argument("plateau requires 0 <= min_lr <= lr");
}

double PlateauSchedule::step(double metric) {
  const bool improved = mode_ == PlateauMode::Min ? metric < best_ : metric > best_;
  if (improved) {
    best_ = metric;
    stale_ = 0;
    return lr_;
  }
  if (++stale_ > patience_) {
    lr_ = std::max(lr_ * factor_, min_lr_);
    stale_ = 0;
  }
  return lr_;
}

json PlateauSchedule::state() const {
  return json{{"lr", lr_},
              {"factor", factor_},
              {"patience", patience_},
              {"min_lr", min_lr_},
              {"mode", mode_ == PlateauMode::Min ? "min" : "max"},
              {"best", best_},
              {"stale", stale_}};
}

void PlateauSchedule::load_state(const json& j) {
  lr_ = j.at("lr").get<double>();
  factor_ = j.at("factor").get<double>();
  patience_ = j.at("patience").get<int>();
  min_lr_ = j.at("min_lr").get<double>();
  mode_ = j.at("mode").get<std::string>() == "min" ? PlateauMode::Min : PlateauMode::Max;
  // JSON has no infinity; a null best means nothing has been seen yet.
  if (j.at("best").is_null()) {
    best_ = mode_ == PlateauMode::Min ? std::numeric_limits<double>::infinity()
                                      : -std::numeric_limits<double>::infinity();
  } else {
    best_ = j.at("best").get<double>();
  }
  stale_ = j.at("stale").get<int>();
}

json parameters_to_json(const std::vector<Parameter*>& params) {
  json out = json::object();
  for (const Parameter* p : params) {
    if (out.contains(p->name)) throw std::invalid_argument("duplicate parameter name " + p->name);
    out[p->name] = matrix_to_json(p->value);
  }
  return out;
}

void parameters_from_json(const json& j, const std::vector<Parameter*>& params) {
  for (Parameter* p : params) {
    if (!j.contains(p->name)) throw std::runtime_error("checkpoint lacks parameter " + p->name);
    MatrixXd m = matrix_from_json(j.at(p->name));
    if (m.rows() != p->value.rows() || m.cols() != p->value.cols()) {
      throw std::runtime_error("checkpoint shape mismatch for " + p->name);
    }
    p->value = std::move(m);
    p->zero_grad();
  }
}

void write_json_file(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump() << '\n';
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

}  // namespace qaoa2::nn
