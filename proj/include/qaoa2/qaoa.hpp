#pragma once

#include "qaoa2/graph.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace qaoa2 {

inline constexpr int kDefaultQubitCap = 16;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Reduces an angle into [0, 2pi).
double wrap_angle(double theta);

template <typename Scalar>
using StateVector = Eigen::Matrix<std::complex<Scalar>, Eigen::Dynamic, 1>;

template <typename Scalar>
using RealVector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Depth-p variational angles, stored reduced into [0, 2pi).
class QaoaAngles {
 public:
  QaoaAngles() = default;
  QaoaAngles(Eigen::VectorXd gamma, Eigen::VectorXd beta);

  static QaoaAngles zeros(int p);
  static QaoaAngles uniform(int p, std::mt19937_64& rng);

  int depth() const { return static_cast<int>(gamma_.size()); }
  const Eigen::VectorXd& gamma() const { return gamma_; }
  const Eigen::VectorXd& beta() const { return beta_; }

  /// Stacked (gamma; beta) column of length 2p.
  Eigen::VectorXd stacked() const;
  static QaoaAngles from_stacked(const Eigen::VectorXd& column);

 private:
  Eigen::VectorXd gamma_;
  Eigen::VectorXd beta_;
};

/// Noise applied around a subproblem solve. Shot noise affects the gradient
/// estimates during optimization; readout flips affect the final samples.
struct NoiseSpec {
  std::optional<int> shots;
  double readout_bitphase_p = 0.0;

  void validate() const;
};

struct QaoaGradient {
  double value = 0.0;
  Eigen::VectorXd d_gamma;
  Eigen::VectorXd d_beta;
};

inline void check_qubits(int m, int cap) {
  if (m < 1) throw std::invalid_argument("qubit count must be positive");
  if (m > cap) {
    throw std::invalid_argument(std::to_string(m) + " qubits exceed the simulator cap of " +
                                std::to_string(cap));
  }
}

template <typename Scalar = double>
StateVector<Scalar> init_plus_state(int m, int cap = kDefaultQubitCap) {
  check_qubits(m, cap);
  const std::size_t dim = std::size_t{1} << m;
  const Scalar amp = std::pow(Scalar(2), Scalar(-0.5) * Scalar(m));
  return StateVector<Scalar>::Constant(static_cast<Eigen::Index>(dim), std::complex<Scalar>(amp, 0));
}

/// H_C(z) for every basis index; bit q set means z_q = -1.
template <typename Scalar = double>
RealVector<Scalar> cost_diagonal(const WeightedGraph& g, int cap = kDefaultQubitCap) {
  const int m = g.num_nodes();
  check_qubits(m, cap);
  const std::uint64_t dim = std::uint64_t{1} << m;
  RealVector<Scalar> diag = RealVector<Scalar>::Zero(static_cast<Eigen::Index>(dim));
  for (const Edge& e : g.edges()) {
    const std::uint64_t mask = (std::uint64_t{1} << e.u) | (std::uint64_t{1} << e.v);
    const Scalar w = static_cast<Scalar>(e.w);
    for (std::uint64_t i = 0; i < dim; ++i) {
      const std::uint64_t bits = i & mask;
      if (bits != 0 && bits != mask) diag(static_cast<Eigen::Index>(i)) += w;
    }
  }
  return diag;
}

template <typename Scalar>
void apply_cost_layer(StateVector<Scalar>& state, const RealVector<Scalar>& diag, Scalar gamma) {
  for (Eigen::Index i = 0; i < state.size(); ++i) {
    state(i) *= std::polar(Scalar(1), -gamma * diag(i));
  }
}

template <typename Scalar>
void apply_cost_layer(StateVector<Scalar>& state, const WeightedGraph& g, Scalar gamma) {
  if (state.size() != (Eigen::Index{1} << g.num_nodes())) {
    throw std::invalid_argument("state dimension does not match graph size");
  }
  apply_cost_layer(state, cost_diagonal<Scalar>(g, 63), gamma);
}

/// exp(-i beta X) on one qubit.
template <typename Scalar>
void apply_rx(StateVector<Scalar>& state, int qubit, Scalar beta) {
  const std::complex<Scalar> c(std::cos(beta), 0);
  const std::complex<Scalar> s(0, -std::sin(beta));
  const Eigen::Index stride = Eigen::Index{1} << qubit;
  for (Eigen::Index base = 0; base < state.size(); base += 2 * stride) {
    for (Eigen::Index i = base; i < base + stride; ++i) {
      const auto a0 = state(i);
      const auto a1 = state(i + stride);
      state(i) = c * a0 + s * a1;
      state(i + stride) = s * a0 + c * a1;
    }
  }
}

/// exp(-i beta sum_j X_j).
template <typename Scalar>
void apply_mixer_layer(StateVector<Scalar>& state, Scalar beta) {
  const int m = std::countr_zero(static_cast<std::uint64_t>(state.size()));
  for (int q = 0; q < m; ++q) apply_rx(state, q, beta);
}

/// (sum_j X_j) applied to `state`.
template <typename Scalar>
StateVector<Scalar> apply_x_sum(const StateVector<Scalar>& state) {
  const int m = std::countr_zero(static_cast<std::uint64_t>(state.size()));
  StateVector<Scalar> out = StateVector<Scalar>::Zero(state.size());
  for (int q = 0; q < m; ++q) {
    const Eigen::Index bit = Eigen::Index{1} << q;
    for (Eigen::Index i = 0; i < state.size(); ++i) out(i) += state(i ^ bit);
  }
  return out;
}

/// Depth-p QAOA circuit for a fixed cost Hamiltonian. The diagonal is built
/// once so repeated evaluations during optimization stay O(p m 2^m).
template <typename Scalar = double>
class QaoaCircuit {
 public:
  explicit QaoaCircuit(const WeightedGraph& g, int cap = kDefaultQubitCap)
      : num_qubits_(g.num_nodes()), diag_(cost_diagonal<Scalar>(g, cap)), cap_(cap) {}

  int num_qubits() const { return num_qubits_; }
  const RealVector<Scalar>& diagonal() const { return diag_; }

  StateVector<Scalar> state(const QaoaAngles& angles) const {
    StateVector<Scalar> psi = init_plus_state<Scalar>(num_qubits_, cap_);
    for (int l = 0; l < angles.depth(); ++l) {
      apply_cost_layer(psi, diag_, static_cast<Scalar>(angles.gamma()(l)));
      apply_mixer_layer(psi, static_cast<Scalar>(angles.beta()(l)));
    }
    return psi;
  }

  Scalar expectation(const StateVector<Scalar>& psi) const {
    return (psi.cwiseAbs2().array() * diag_.array()).sum();
  }

  Scalar expectation(const QaoaAngles& angles) const { return expectation(state(angles)); }

  /// Exact gradient by a reverse (adjoint) sweep: dE/dtheta = 2 Im <lambda|G|phi>
  /// for every layer generator G, walking phi and lambda = H phi backwards.
  QaoaGradient gradient(const QaoaAngles& angles) const {
    const int p = angles.depth();
    QaoaGradient out;
    out.d_gamma = Eigen::VectorXd::Zero(p);
    out.d_beta = Eigen::VectorXd::Zero(p);
    StateVector<Scalar> phi = state(angles);
    out.value = static_cast<double>(expectation(phi));
    StateVector<Scalar> lambda = diag_.template cast<std::complex<Scalar>>().cwiseProduct(phi);
    for (int l = p - 1; l >= 0; --l) {
      const Scalar beta = static_cast<Scalar>(angles.beta()(l));
      const Scalar gamma = static_cast<Scalar>(angles.gamma()(l));
      out.d_beta(l) = 2.0 * static_cast<double>(lambda.dot(apply_x_sum(phi)).imag());
      apply_mixer_layer(phi, -beta);
      apply_mixer_layer(lambda, -beta);
      out.d_gamma(l) = 2.0 * static_cast<double>(
          lambda.dot(diag_.template cast<std::complex<Scalar>>().cwiseProduct(phi)).imag());
      apply_cost_layer(phi, diag_, -gamma);
      apply_cost_layer(lambda, diag_, -gamma);
    }
    return out;
  }

 private:
  int num_qubits_;
  RealVector<Scalar> diag_;
  int cap_;
};

template <typename Scalar = double>
Scalar qaoa_expectation(const WeightedGraph& g, const QaoaAngles& angles, int cap = kDefaultQubitCap) {
  return QaoaCircuit<Scalar>(g, cap).expectation(angles);
}

inline QaoaGradient qaoa_gradient(const WeightedGraph& g, const QaoaAngles& angles,
                                  int cap = kDefaultQubitCap) {
  return QaoaCircuit<double>(g, cap).gradient(angles);
}

/// Draws basis indices from |psi|^2.
template <typename Scalar>
std::vector<std::uint64_t> sample_basis_states(const StateVector<Scalar>& psi, int shots,
                                               std::mt19937_64& rng) {
  std::vector<double> cdf(static_cast<std::size_t>(psi.size()));
  double acc = 0.0;
  for (Eigen::Index i = 0; i < psi.size(); ++i) {
    acc += static_cast<double>(std::norm(psi(i)));
    cdf[static_cast<std::size_t>(i)] = acc;
  }
  std::uniform_real_distribution<double> unif(0.0, acc);
  std::vector<std::uint64_t> out(static_cast<std::size_t>(shots));
  for (auto& s : out) {
    const double u = unif(rng);
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    if (it == cdf.end()) --it;
    s = static_cast<std::uint64_t>(it - cdf.begin());
  }
  return out;
}

/// Bit-phase flip (Pauli Y) readout error on each qubit with probability p.
/// Only the bit-flip part is visible to a computational-basis measurement.
std::uint64_t apply_readout_flips(std::uint64_t basis, int num_qubits, double p, std::mt19937_64& rng);

SpinVector basis_to_spins(std::uint64_t basis, int num_qubits);
std::uint64_t spins_to_basis(const SpinVector& z);

std::vector<SpinVector> sample_bitstrings(const WeightedGraph& g, const QaoaAngles& angles, int shots,
                                          double readout_p, std::uint64_t seed,
                                          int cap = kDefaultQubitCap);

/// Gradient estimated from finite-shot expectation values by parameter shift:
/// one shifted pair per qubit (mixer) and per edge (cost).
QaoaGradient shot_gradient(const WeightedGraph& g, const QaoaAngles& angles, int shots,
                           std::mt19937_64& rng, int cap = kDefaultQubitCap);

struct OptimizeOptions {
  int steps = 20;
  double lr = 0.01;
  NoiseSpec noise;
  std::uint64_t seed = 42;
  int cap = kDefaultQubitCap;
  /// Receives the expectation before each update (and after the last one).
  std::vector<double>* trajectory = nullptr;
};

/// Plain gradient ascent on <H_C>.
QaoaAngles optimize_angles(const WeightedGraph& g, const QaoaAngles& init, const OptimizeOptions& opts);

/// Linear-interpolation depth expansion p -> p + 1.
QaoaAngles interp_expand(const QaoaAngles& angles, int target_p);

/// Applies interp_expand repeatedly up to `target_p` (no-op when equal).
QaoaAngles expand_to_depth(const QaoaAngles& angles, int target_p);

}  // namespace qaoa2
