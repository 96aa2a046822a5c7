#include <doctest.h>

#include "qaoa2/autodiff.hpp"

#include <cmath>
#include <functional>
#include <numbers>
#include <random>

using namespace qaoa2::ad;
using Eigen::MatrixXd;

namespace {

using Builder = std::function<Tensor(Tape&, std::vector<Tensor>&)>;

MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> unif(lo, hi);
  MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = unif(rng);
  return m;
}

// Entries with |x| in [0.2, 1] and random sign, away from kinks at zero.
MatrixXd signed_away_from_zero(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  MatrixXd m = random_matrix(r, c, rng, 0.2, 1.0);
  std::bernoulli_distribution flip(0.5);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    if (flip(rng)) m.data()[i] = -m.data()[i];
  }
  return m;
}

Parameter make(const std::string& name, MatrixXd value) {
  Parameter p;
  p.name = name;
  p.value = std::move(value);
  p.zero_grad();
  return p;
}

// Scalar probe L = sum(R .* f(params)) with a fixed random R.
double probe(std::vector<Parameter>& params, const Builder& f, const MatrixXd& r, bool backward) {
  Tape tape;
  std::vector<Tensor> ins;
  for (auto& p : params) ins.push_back(tape.param(p));
  const Tensor out = f(tape, ins);
  const Tensor loss = sum(hadamard(out, tape.constant(r)));
  if (backward) tape.backward(loss);
  return loss.value()(0, 0);
}

// Largest normwise relative error between the tape gradient and central
// differences with h = 1e-5.
double fd_error(std::vector<Parameter> params, const Builder& f, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  MatrixXd r;
  {
    Tape tape;
    std::vector<Tensor> ins;
    for (auto& p : params) ins.push_back(tape.param(p));
    const Tensor out = f(tape, ins);
    r = random_matrix(out.rows(), out.cols(), rng);
  }
  for (auto& p : params) p.zero_grad();
  probe(params, f, r, true);
  const double h = 1e-5;
  double worst = 0.0;
  for (auto& p : params) {
    MatrixXd numeric(p.value.rows(), p.value.cols());
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      const double keep = p.value.data()[i];
      p.value.data()[i] = keep + h;
      const double up = probe(params, f, r, false);
      p.value.data()[i] = keep - h;
      const double down = probe(params, f, r, false);
      p.value.data()[i] = keep;
      numeric.data()[i] = (up - down) / (2.0 * h);
    }
    const double scale = std::max(p.grad.norm() + numeric.norm(), 1e-12);
    worst = std::max(worst, (p.grad - numeric).norm() / scale);
  }
  return worst;
}

struct Shape {
  Eigen::Index r;
  Eigen::Index c;
};
const std::vector<Shape> kShapes = {{1, 1}, {3, 4}, {6, 2}};

void check_unary(const std::function<Tensor(const Tensor&)>& op, bool away_from_zero = false, double lo = -1.0,
                 double hi = 1.0) {
  std::mt19937_64 rng(17);
  for (const Shape s : kShapes) {
    std::vector<Parameter> ps{
        make("x", away_from_zero ? signed_away_from_zero(s.r, s.c, rng) : random_matrix(s.r, s.c, rng, lo, hi))};
    CHECK(fd_error(ps, [&](Tape&, std::vector<Tensor>& in) { return op(in[0]); }, 5) < 1e-4);
  }
}

void check_binary(const std::function<Tensor(const Tensor&, const Tensor&)>& op) {
  std::mt19937_64 rng(18);
  for (const Shape s : kShapes) {
    std::vector<Parameter> ps{make("a", random_matrix(s.r, s.c, rng)), make("b", random_matrix(s.r, s.c, rng))};
    CHECK(fd_error(ps, [&](Tape&, std::vector<Tensor>& in) { return op(in[0], in[1]); }, 6) < 1e-4);
  }
}

// Symmetric weighted adjacency with the given edge density; zero diagonal.
MatrixXd random_adjacency(int n, double density, std::mt19937_64& rng) {
  std::bernoulli_distribution keep(density);
  std::uniform_real_distribution<double> mag(0.2, 1.0);
  std::bernoulli_distribution neg(0.4);
  MatrixXd a = MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (keep(rng)) a(i, j) = a(j, i) = neg(rng) ? -mag(rng) : mag(rng);
    }
  }
  return a;
}

MatrixXd permutation_matrix(int n, std::mt19937_64& rng) {
  std::vector<int> perm(n);
  for (int i = 0; i < n; ++i) perm[i] = i;
  std::shuffle(perm.begin(), perm.end(), rng);
  MatrixXd p = MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) p(i, perm[i]) = 1.0;
  return p;
}

}  // namespace

TEST_SUITE("tape") {
  TEST_CASE("parameter gradients accumulate across backward calls") {
    Parameter w = make("w", MatrixXd::Constant(1, 1, 3.0));
    for (int k = 0; k < 2; ++k) {
      Tape tape;
      const Tensor x = tape.param(w);
      tape.backward(sum(hadamard(x, x)));
    }
    CHECK(w.grad(0, 0) == doctest::Approx(12.0));
  }

  TEST_CASE("frozen parameters and constants receive no gradient") {
    Parameter w = make("w", MatrixXd::Constant(2, 2, 1.0));
    w.frozen = true;
    Tape tape;
    const Tensor x = tape.param(w);
    CHECK_FALSE(x.requires_grad());
    const Tensor loss = sum(x);
    CHECK_FALSE(loss.requires_grad());
    tape.backward(loss);
    CHECK(w.grad.isZero());
  }

  TEST_CASE("non-finite values are rejected") {
    Tape tape;
    MatrixXd bad(1, 1);
    bad(0, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(tape.constant(bad), NonFiniteError);
    const Tensor big = tape.constant(MatrixXd::Constant(1, 1, 1e300));
    CHECK_THROWS_AS(hadamard(big, big), NonFiniteError);
  }

  TEST_CASE("shape mismatches throw") {
    Tape tape;
    const Tensor a = tape.constant(MatrixXd::Zero(2, 3));
    const Tensor b = tape.constant(MatrixXd::Zero(2, 2));
    CHECK_THROWS_AS(matmul(a, b), std::invalid_argument);
    CHECK_THROWS_AS(add(a, b), std::invalid_argument);
    CHECK_THROWS_AS(add_bias(a, b), std::invalid_argument);
    CHECK_THROWS_AS(gcn_normalize(a), std::invalid_argument);
    CHECK_THROWS(tape.backward(a));
  }

  TEST_CASE("replay is bit-identical") {
    std::mt19937_64 rng(3);
    const MatrixXd x = random_matrix(5, 4, rng);
    const MatrixXd adj = random_adjacency(5, 0.5, rng);
    const MatrixXd a = random_matrix(4, 1, rng);
    auto run = [&] {
      Tape tape;
      const Tensor h = tape.constant(x);
      const Tensor adj_t = tape.constant(adj);
      const Tensor g = gatv2_attention(h, h, tape.constant(a), adj_t);
      return matmul(gcn_normalize(adj_t), softmax_rows(g, 0.05)).value();
    };
    const MatrixXd first = run();
    const MatrixXd second = run();
    CHECK(first.cwiseEqual(second).all());
  }
}

TEST_SUITE("forward semantics") {
  TEST_CASE("softmax rows sum to one") {
    std::mt19937_64 rng(4);
    Tape tape;
    for (double tau : {0.05, 1.0, 10.0}) {
      const MatrixXd s = softmax_rows(tape.constant(random_matrix(6, 5, rng, -3.0, 3.0)), tau).value();
      for (Eigen::Index i = 0; i < s.rows(); ++i) CHECK(std::abs(s.row(i).sum() - 1.0) < 1e-9);
    }
  }

  TEST_CASE("relu(-x) * relu(x) vanishes") {
    std::mt19937_64 rng(5);
    Tape tape;
    const Tensor x = tape.constant(random_matrix(4, 4, rng));
    CHECK(hadamard(relu(scale(x, -1.0)), relu(x)).value().isZero(0.0));
  }

  TEST_CASE("wrap_angle lands in [0, 2pi)") {
    Tape tape;
    MatrixXd v(1, 4);
    v << -0.5, 7.0, 2.0 * std::numbers::pi, -4.0 * std::numbers::pi;
    const MatrixXd w = wrap_angle(tape.constant(v)).value();
    CHECK(w(0, 0) == doctest::Approx(2.0 * std::numbers::pi - 0.5));
    CHECK(w(0, 1) == doctest::Approx(7.0 - 2.0 * std::numbers::pi));
    CHECK(w(0, 2) == 0.0);
    CHECK(w(0, 3) == 0.0);
  }

  TEST_CASE("edgeless gcn reduces to the dense transform") {
    std::mt19937_64 rng(6);
    Tape tape;
    const MatrixXd norm = gcn_normalize(tape.constant(MatrixXd::Zero(5, 5))).value();
    CHECK(norm.isApprox(MatrixXd::Identity(5, 5)));
  }

  TEST_CASE("gcn normalization uses absolute degrees and signed numerators") {
    Tape tape;
    MatrixXd a(2, 2);
    a << 0.0, -2.0, -2.0, 0.0;
    const MatrixXd norm = gcn_normalize(tape.constant(a)).value();
    CHECK(norm(0, 0) == doctest::Approx(1.0 / 3.0));
    CHECK(norm(0, 1) == doctest::Approx(-2.0 / 3.0));
  }

  TEST_CASE("isolated node attends only to itself") {
    std::mt19937_64 rng(7);
    MatrixXd adj = random_adjacency(5, 0.9, rng);
    adj.row(2).setZero();
    adj.col(2).setZero();
    Tape tape;
    const MatrixXd hs = random_matrix(5, 3, rng);
    const MatrixXd ht = random_matrix(5, 3, rng);
    const Tensor out = gatv2_attention(tape.constant(hs), tape.constant(ht), tape.constant(random_matrix(3, 1, rng)),
                                       tape.constant(adj));
    CHECK(out.value().row(2).isApprox(ht.row(2)));
  }

  TEST_CASE("gatv2 matches a direct evaluation") {
    std::mt19937_64 rng(8);
    const int n = 6;
    const MatrixXd adj = random_adjacency(n, 0.5, rng);
    const MatrixXd hs = random_matrix(n, 4, rng);
    const MatrixXd ht = random_matrix(n, 4, rng);
    const MatrixXd a = random_matrix(4, 1, rng);
    for (bool weighted : {true, false}) {
      Tape tape;
      const MatrixXd out = gatv2_attention(tape.constant(hs), tape.constant(ht), tape.constant(a),
                                           tape.constant(adj), 0.2, weighted)
                               .value();
      for (int i = 0; i < n; ++i) {
        double denom = 0.0;
        Eigen::RowVectorXd num = Eigen::RowVectorXd::Zero(4);
        for (int j = 0; j < n; ++j) {
          if (j != i && adj(i, j) == 0.0) continue;
          const Eigen::RowVectorXd z = hs.row(i) + ht.row(j);
          const Eigen::RowVectorXd lz = z.unaryExpr([](double v) { return v > 0 ? v : 0.2 * v; });
          const double e = std::exp(lz.dot(a.col(0).transpose()));
          const double w = (j == i || !weighted) ? 1.0 : adj(i, j);
          denom += e;
          num += e * w * ht.row(j);
        }
        CHECK((out.row(i) - num / denom).norm() < 1e-12);
      }
    }
  }
}

TEST_SUITE("finite-difference oracle") {
  TEST_CASE("matmul") {
    std::mt19937_64 rng(20);
    for (const Shape s : kShapes) {
      std::vector<Parameter> ps{make("a", random_matrix(s.r, s.c, rng)), make("b", random_matrix(s.c, 3, rng))};
      CHECK(fd_error(ps, [](Tape&, std::vector<Tensor>& in) { return matmul(in[0], in[1]); }, 1) < 1e-4);
    }
  }

  TEST_CASE("elementwise binary ops") {
    check_binary([](const Tensor& a, const Tensor& b) { return add(a, b); });
    check_binary([](const Tensor& a, const Tensor& b) { return sub(a, b); });
    check_binary([](const Tensor& a, const Tensor& b) { return hadamard(a, b); });
    check_binary([](const Tensor& a, const Tensor& b) { return atan2(a, add_scalar(b, 1.5)); });
  }

  TEST_CASE("add_bias") {
    std::mt19937_64 rng(21);
    for (const Shape s : kShapes) {
      std::vector<Parameter> ps{make("x", random_matrix(s.r, s.c, rng)), make("b", random_matrix(1, s.c, rng))};
      CHECK(fd_error(ps, [](Tape&, std::vector<Tensor>& in) { return add_bias(in[0], in[1]); }, 2) < 1e-4);
    }
  }

  TEST_CASE("unary ops") {
    check_unary([](const Tensor& x) { return transpose(x); });
    check_unary([](const Tensor& x) { return scale(x, -2.5); });
    check_unary([](const Tensor& x) { return add_scalar(x, 0.7); });
    check_unary([](const Tensor& x) { return relu(x); }, true);
    check_unary([](const Tensor& x) { return leaky_relu(x, 0.2); }, true);
    check_unary([](const Tensor& x) { return sigmoid(x); });
    check_unary([](const Tensor& x) { return sin(x); });
    check_unary([](const Tensor& x) { return cos(x); });
    check_unary([](const Tensor& x) { return softmax_rows(x, 1.0); });
    check_unary([](const Tensor& x) { return softmax_rows(x, 0.3); });
    check_unary([](const Tensor& x) { return wrap_angle(x); }, false, 0.1, 6.0);
    check_unary([](const Tensor& x) { return mean_rows(x); });
    check_unary([](const Tensor& x) { return sum(x); });
    check_unary([](const Tensor& x) { return mean(x); });
    check_unary([](const Tensor& x) { return mse(x, MatrixXd::Constant(x.rows(), x.cols(), 0.3)); });
  }

  TEST_CASE("concat_cols") {
    std::mt19937_64 rng(22);
    for (const Shape s : kShapes) {
      std::vector<Parameter> ps{make("a", random_matrix(s.r, s.c, rng)), make("b", random_matrix(s.r, 2, rng)),
                                make("c", random_matrix(s.r, 1, rng))};
      CHECK(fd_error(ps, [](Tape&, std::vector<Tensor>& in) { return concat_cols(in); }, 3) < 1e-4);
    }
  }

  TEST_CASE("gcn_normalize in the adjacency") {
    std::mt19937_64 rng(23);
    for (int n : {2, 5, 8}) {
      const MatrixXd a = random_adjacency(n, 0.6, rng);
      const MatrixXd mask = a.unaryExpr([](double v) { return v != 0.0 ? 1.0 : 0.0; });
      std::vector<Parameter> ps{make("w", signed_away_from_zero(n, n, rng))};
      auto f = [&](Tape& t, std::vector<Tensor>& in) { return gcn_normalize(hadamard(t.constant(mask), in[0])); };
      CHECK(fd_error(ps, f, 4) < 1e-4);
    }
  }

  TEST_CASE("gatv2_attention in every input") {
    std::mt19937_64 rng(24);
    for (int n : {1, 4, 7}) {
      const MatrixXd a = random_adjacency(n, 0.6, rng);
      const MatrixXd mask = a.unaryExpr([](double v) { return v != 0.0 ? 1.0 : 0.0; });
      for (bool weighted : {true, false}) {
        std::vector<Parameter> ps{make("hs", random_matrix(n, 3, rng)), make("ht", random_matrix(n, 3, rng)),
                                  make("a", random_matrix(3, 1, rng, -2.0, 2.0)),
                                  make("w", signed_away_from_zero(n, n, rng))};
        auto f = [&](Tape& t, std::vector<Tensor>& in) {
          return gatv2_attention(in[0], in[1], in[2], hadamard(t.constant(mask), in[3]), 0.2, weighted);
        };
        CHECK(fd_error(ps, f, 5) < 1e-4);
      }
    }
  }

  TEST_CASE("composite: masked partition adjacency from soft assignments") {
    // A_sub = A .* S S^T feeding both aggregations.
    std::mt19937_64 rng(25);
    for (int n : {3, 6, 9}) {
      const MatrixXd a = random_adjacency(n, 0.7, rng);
      std::vector<Parameter> ps{make("s", random_matrix(n, 3, rng, 0.1, 1.0)), make("x", random_matrix(n, 2, rng))};
      auto f = [&](Tape& t, std::vector<Tensor>& in) {
        const Tensor s = softmax_rows(in[0], 0.5);
        const Tensor sub = hadamard(t.constant(a), matmul(s, transpose(s)));
        const Tensor g = matmul(gcn_normalize(sub), in[1]);
        return gatv2_attention(g, g, t.constant(MatrixXd::Constant(2, 1, 0.5)), sub);
      };
      CHECK(fd_error(ps, f, 6) < 1e-4);
    }
  }
}

TEST_SUITE("straight-through and stop-gradient") {
  TEST_CASE("straight_through forwards the hard value and routes the gradient to soft") {
    Parameter soft = make("soft", MatrixXd::Constant(2, 2, 0.3));
    MatrixXd hard(2, 2);
    hard << 1, 0, 0, 1;
    Tape tape;
    const Tensor st = straight_through(hard, tape.param(soft));
    CHECK(st.value() == hard);
    MatrixXd r(2, 2);
    r << 1, 2, 3, 4;
    tape.backward(sum(hadamard(st, tape.constant(r))));
    CHECK(soft.grad == r);
  }

  TEST_CASE("stop_gradient blocks the path") {
    Parameter x = make("x", MatrixXd::Constant(1, 1, 2.0));
    Tape tape;
    const Tensor t = tape.param(x);
    tape.backward(sum(hadamard(t, stop_gradient(t))));
    CHECK(x.grad(0, 0) == doctest::Approx(2.0));
  }
}

TEST_SUITE("equivariance") {
  TEST_CASE("gcn and gatv2 commute with node permutations") {
    std::mt19937_64 rng(30);
    for (int n : {5, 9}) {
      const MatrixXd adj = random_adjacency(n, 0.5, rng);
      const MatrixXd x = random_matrix(n, 3, rng);
      const MatrixXd w = random_matrix(3, 3, rng);
      const MatrixXd a = random_matrix(3, 1, rng);
      const MatrixXd p = permutation_matrix(n, rng);
      auto gcn = [&](const MatrixXd& xx, const MatrixXd& aa) {
        Tape t;
        return matmul(gcn_normalize(t.constant(aa)), t.constant(xx * w)).value();
      };
      auto gat = [&](const MatrixXd& xx, const MatrixXd& aa) {
        Tape t;
        const Tensor h = t.constant(xx * w);
        return gatv2_attention(h, h, t.constant(a), t.constant(aa)).value();
      };
      CHECK((p * gcn(x, adj) - gcn(p * x, p * adj * p.transpose())).cwiseAbs().maxCoeff() < 1e-8);
      CHECK((p * gat(x, adj) - gat(p * x, p * adj * p.transpose())).cwiseAbs().maxCoeff() < 1e-8);
    }
  }
}
