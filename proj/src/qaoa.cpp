#include "qaoa2/qaoa.hpp"

#include <numbers>

namespace qaoa2 {

double wrap_angle(double theta) {
  if (!std::isfinite(theta)) throw std::invalid_argument("non-finite angle");
  double r = std::fmod(theta, kTwoPi);
  if (r < 0.0) r += kTwoPi;
  // fmod of a tiny negative value can round up to exactly 2pi.
  if (r >= kTwoPi) r = 0.0;
  return r;
}

QaoaAngles::QaoaAngles(Eigen::VectorXd gamma, Eigen::VectorXd beta)
    : gamma_(std::move(gamma)), beta_(std::move(beta)) {
  if (gamma_.size() != beta_.size()) throw std::invalid_argument("gamma and beta lengths differ");
  if (gamma_.size() < 1) throw std::invalid_argument("QAOA depth must be at least 1");
  gamma_ = gamma_.unaryExpr([](double x) { return wrap_angle(x); });
  beta_ = beta_.unaryExpr([](double x) { return wrap_angle(x); });
}

QaoaAngles QaoaAngles::zeros(int p) {
  return QaoaAngles(Eigen::VectorXd::Zero(p), Eigen::VectorXd::Zero(p));
}

QaoaAngles QaoaAngles::uniform(int p, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(0.0, kTwoPi);
  Eigen::VectorXd g(p), b(p);
  for (int i = 0; i < p; ++i) g(i) = unif(rng);
  for (int i = 0; i < p; ++i) b(i) = unif(rng);
  return QaoaAngles(g, b);
}

Eigen::VectorXd QaoaAngles::stacked() const {
  Eigen::VectorXd out(2 * depth());
  out << gamma_, beta_;
  return out;
}

QaoaAngles QaoaAngles::from_stacked(const Eigen::VectorXd& column) {
  if (column.size() < 2 || column.size() % 2 != 0) {
    throw std::invalid_argument("stacked angle column must have even length >= 2");
  }
  const Eigen::Index p = column.size() / 2;
  return QaoaAngles(column.head(p), column.tail(p));
}

void NoiseSpec::validate() const {
  if (!(readout_bitphase_p >= 0.0 && readout_bitphase_p <= 1.0)) {
    throw std::invalid_argument("readout probability must lie in [0, 1]");
  }
  if (shots && *shots < 1) throw std::invalid_argument("shot count must be positive");
}

std::uint64_t apply_readout_flips(std::uint64_t basis, int num_qubits, double p, std::mt19937_64& rng) {
  if (p <= 0.0) return basis;
  if (p >= 1.0) return basis ^ ((std::uint64_t{1} << num_qubits) - 1);
  std::bernoulli_distribution flip(p);
  for (int q = 0; q < num_qubits; ++q) {
    if (flip(rng)) basis ^= std::uint64_t{1} << q;
  }
  return basis;
}

SpinVector basis_to_spins(std::uint64_t basis, int num_qubits) {
  SpinVector z(num_qubits);
  for (int q = 0; q < num_qubits; ++q) z(q) = ((basis >> q) & 1U) ? -1 : 1;
  return z;
}

std::uint64_t spins_to_basis(const SpinVector& z) {
  std::uint64_t b = 0;
  for (Eigen::Index q = 0; q < z.size(); ++q) {
    if (z(q) < 0) b |= std::uint64_t{1} << q;
  }
  return b;
}

std::vector<SpinVector> sample_bitstrings(const WeightedGraph& g, const QaoaAngles& angles, int shots,
                                          double readout_p, std::uint64_t seed, int cap) {
  if (shots < 1) throw std::invalid_argument("shot count must be positive");
  NoiseSpec{std::nullopt, readout_p}.validate();
  std::mt19937_64 rng(seed);
  const QaoaCircuit<double> circuit(g, cap);
  const auto basis = sample_basis_states(circuit.state(angles), shots, rng);
  std::vector<SpinVector> out;
  out.reserve(basis.size());
  for (std::uint64_t b : basis) {
    out.push_back(basis_to_spins(apply_readout_flips(b, g.num_nodes(), readout_p, rng), g.num_nodes()));
  }
  return out;
}

namespace {

double sampled_mean(const QaoaCircuit<double>& circuit, const StateVector<double>& psi, int shots,
                    std::mt19937_64& rng) {
  const auto& diag = circuit.diagonal();
  double sum = 0.0;
  for (std::uint64_t b : sample_basis_states(psi, shots, rng)) sum += diag(static_cast<Eigen::Index>(b));
  return sum / shots;
}

// Runs the circuit with layer `target` replaced by `layer`, which applies
// whatever (possibly shifted) cost and mixer unitaries the caller needs.
template <typename Layer>
StateVector<double> run_with_layer(const QaoaCircuit<double>& circuit, const QaoaAngles& angles, int target,
                                   int cap, Layer&& layer) {
  StateVector<double> psi = init_plus_state<double>(circuit.num_qubits(), cap);
  for (int l = 0; l < angles.depth(); ++l) {
    if (l == target) {
      layer(psi);
    } else {
      apply_cost_layer(psi, circuit.diagonal(), angles.gamma()(l));
      apply_mixer_layer(psi, angles.beta()(l));
    }
  }
  return psi;
}

}  // namespace

QaoaGradient shot_gradient(const WeightedGraph& g, const QaoaAngles& angles, int shots, std::mt19937_64& rng,
                           int cap) {
  const QaoaCircuit<double> circuit(g, cap);
  const int m = circuit.num_qubits();
  const int p = angles.depth();
  QaoaGradient out;
  out.d_gamma = Eigen::VectorXd::Zero(p);
  out.d_beta = Eigen::VectorXd::Zero(p);
  out.value = sampled_mean(circuit, circuit.state(angles), shots, rng);
  constexpr double quarter = std::numbers::pi / 4.0;

  for (int l = 0; l < p; ++l) {
    const double gamma = angles.gamma()(l);
    const double beta = angles.beta()(l);

    // exp(-i gamma w (1 - Z_u Z_v)/2) is exp(-i theta Z_u Z_v) up to phase with
    // theta = -gamma w / 2, so dE/dgamma = (w/2)[E(gamma + s) - E(gamma - s)], s = pi/(2w).
    for (const Edge& e : g.edges()) {
      const std::uint64_t mask = (std::uint64_t{1} << e.u) | (std::uint64_t{1} << e.v);
      double shifted[2];
      for (int sign = 0; sign < 2; ++sign) {
        const double delta = (sign == 0 ? 1.0 : -1.0) * std::numbers::pi / (2.0 * e.w);
        auto psi = run_with_layer(circuit, angles, l, cap, [&](StateVector<double>& s) {
          apply_cost_layer(s, circuit.diagonal(), gamma);
          for (Eigen::Index i = 0; i < s.size(); ++i) {
            const std::uint64_t bits = static_cast<std::uint64_t>(i) & mask;
            if (bits != 0 && bits != mask) s(i) *= std::polar(1.0, -delta * e.w);
          }
          apply_mixer_layer(s, beta);
        });
        shifted[sign] = sampled_mean(circuit, psi, shots, rng);
      }
      out.d_gamma(l) += 0.5 * e.w * (shifted[0] - shifted[1]);
    }

    for (int q = 0; q < m; ++q) {
      double shifted[2];
      for (int sign = 0; sign < 2; ++sign) {
        const double delta = sign == 0 ? quarter : -quarter;
        auto psi = run_with_layer(circuit, angles, l, cap, [&](StateVector<double>& s) {
          apply_cost_layer(s, circuit.diagonal(), gamma);
          for (int r = 0; r < m; ++r) apply_rx(s, r, r == q ? beta + delta : beta);
        });
        shifted[sign] = sampled_mean(circuit, psi, shots, rng);
      }
      out.d_beta(l) += shifted[0] - shifted[1];
    }
  }
  return out;
}

QaoaAngles optimize_angles(const WeightedGraph& g, const QaoaAngles& init, const OptimizeOptions& opts) {
  if (opts.steps < 0) throw std::invalid_argument("step count must be non-negative");
  opts.noise.validate();
  if (opts.steps == 0) return init;

  const QaoaCircuit<double> circuit(g, opts.cap);
  std::mt19937_64 rng(opts.seed);
  Eigen::VectorXd gamma = init.gamma();
  Eigen::VectorXd beta = init.beta();
  auto current = [&] { return QaoaAngles(gamma, beta); };

  for (int step = 0; step < opts.steps; ++step) {
    const QaoaAngles a = current();
    const QaoaGradient grad =
        opts.noise.shots ? shot_gradient(g, a, *opts.noise.shots, rng, opts.cap) : circuit.gradient(a);
    if (opts.trajectory) opts.trajectory->push_back(circuit.expectation(a));
    gamma += opts.lr * grad.d_gamma;
    beta += opts.lr * grad.d_beta;
  }
  const QaoaAngles result = current();
  if (opts.trajectory) opts.trajectory->push_back(circuit.expectation(result));
  return result;
}

QaoaAngles interp_expand(const QaoaAngles& angles, int target_p) {
  const int p = angles.depth();
  if (target_p != p + 1) {
    throw std::invalid_argument("interp_expand requires target_p = p + 1");
  }
  auto expand = [p](const Eigen::VectorXd& v) {
    Eigen::VectorXd out(p + 1);
    for (int i = 1; i <= p + 1; ++i) {
      const double prev = i - 2 >= 0 ? v(i - 2) : 0.0;
      const double cur = i - 1 < p ? v(i - 1) : 0.0;
      out(i - 1) = (static_cast<double>(i - 1) / p) * prev + (static_cast<double>(p - i + 1) / p) * cur;
    }
    return out;
  };
  return QaoaAngles(expand(angles.gamma()), expand(angles.beta()));
}

QaoaAngles expand_to_depth(const QaoaAngles& angles, int target_p) {
  if (target_p < angles.depth()) throw std::invalid_argument("target depth below current depth");
  QaoaAngles out = angles;
  while (out.depth() < target_p) out = interp_expand(out, out.depth() + 1);
  return out;
}

}  // namespace qaoa2
