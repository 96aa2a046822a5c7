#include <doctest.h>

#include "qaoa2/nn.hpp"

#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>

using namespace qaoa2;
using namespace qaoa2::nn;
using Eigen::MatrixXd;

namespace {

MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = unif(rng);
  return m;
}

MatrixXd random_adjacency(int n, double density, std::mt19937_64& rng) {
  std::bernoulli_distribution keep(density);
  std::uniform_real_distribution<double> w(-1.0, 1.0);
  MatrixXd a = MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (keep(rng)) a(i, j) = a(j, i) = w(rng);
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

// Normwise relative error of module parameter gradients against central
// differences of L = sum(R .* f()).
double module_fd_error(const std::vector<Parameter*>& params, const std::function<Tensor(Tape&)>& f,
                       std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  MatrixXd r;
  {
    Tape t;
    const Tensor out = f(t);
    r = random_matrix(out.rows(), out.cols(), rng);
  }
  auto loss = [&](bool backward) {
    Tape t;
    const Tensor l = ad::sum(ad::hadamard(f(t), t.constant(r)));
    if (backward) t.backward(l);
    return l.value()(0, 0);
  };
  for (Parameter* p : params) p->zero_grad();
  loss(true);
  const double h = 1e-5;
  double worst = 0.0;
  for (Parameter* p : params) {
    MatrixXd numeric(p->value.rows(), p->value.cols());
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      const double keep = p->value.data()[i];
      p->value.data()[i] = keep + h;
      const double up = loss(false);
      p->value.data()[i] = keep - h;
      const double down = loss(false);
      p->value.data()[i] = keep;
      numeric.data()[i] = (up - down) / (2.0 * h);
    }
    const double scale = std::max(p->grad.norm() + numeric.norm(), 1e-12);
    worst = std::max(worst, (p->grad - numeric).norm() / scale);
  }
  return worst;
}

}  // namespace

TEST_SUITE("layers") {
  TEST_CASE("glorot bounds and seeding") {
    std::mt19937_64 a(1);
    std::mt19937_64 b(1);
    const MatrixXd w = glorot_uniform(10, 20, a);
    CHECK(w.cwiseAbs().maxCoeff() <= std::sqrt(6.0 / 30.0));
    CHECK(w == glorot_uniform(10, 20, b));
  }

  TEST_CASE("parameter names are unique and hierarchical") {
    std::mt19937_64 rng(2);
    GatEncoder enc("topology", 5, 8, 3, rng);
    std::vector<Parameter*> ps;
    enc.collect(ps);
    CHECK(ps.size() == 4 + 3 * 6);
    CHECK(ps.front()->name == "topology.embed1.weight");
    CHECK_NOTHROW(parameters_to_json(ps));
  }

  TEST_CASE("encoder gradients match finite differences") {
    std::mt19937_64 rng(3);
    for (int n : {3, 5, 8}) {
      const MatrixXd x = random_matrix(n, 4, rng);
      const MatrixXd adj = random_adjacency(n, 0.5, rng);
      GatEncoder gat("gat", 4, 5, 2, rng);
      GcnEncoder gcn("gcn", 4, 5, 2, rng);
      Linear head("head", 10, 1, rng);
      std::vector<Parameter*> ps;
      gat.collect(ps);
      gcn.collect(ps);
      head.collect(ps);
      auto f = [&](Tape& t) {
        const Tensor xt = t.constant(x);
        const Tensor at = t.constant(adj);
        const Tensor pooled =
            ad::concat_cols({ad::mean_rows(gat.forward(t, xt, at)), ad::mean_rows(gcn.forward(t, xt, at))});
        return ad::sigmoid(head.forward(t, pooled));
      };
      CHECK(module_fd_error(ps, f, 4) < 1e-4);
    }
  }

  TEST_CASE("pooled embeddings are permutation invariant") {
    std::mt19937_64 rng(5);
    const int n = 9;
    GatEncoder gat("gat", 3, 6, 3, rng);
    GcnEncoder gcn("gcn", 3, 6, 3, rng);
    const MatrixXd x = random_matrix(n, 3, rng);
    const MatrixXd adj = random_adjacency(n, 0.4, rng);
    const MatrixXd p = permutation_matrix(n, rng);
    auto embed = [&](const MatrixXd& xx, const MatrixXd& aa) {
      Tape t;
      const Tensor xt = t.constant(xx);
      const Tensor at = t.constant(aa);
      return ad::concat_cols({ad::mean_rows(gat.forward(t, xt, at)), ad::mean_rows(gcn.forward(t, xt, at))}).value();
    };
    CHECK((embed(x, adj) - embed(p * x, p * adj * p.transpose())).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_SUITE("adamw") {
  TEST_CASE("zero gradient and zero decay leave parameters unchanged") {
    Parameter w{"w", MatrixXd::Constant(2, 2, 0.5), MatrixXd::Zero(2, 2)};
    AdamW opt({&w}, {.lr = 0.1});
    for (int i = 0; i < 5; ++i) opt.step();
    CHECK(w.value == MatrixXd::Constant(2, 2, 0.5));
  }

  TEST_CASE("zero learning rate leaves parameters unchanged") {
    Parameter w{"w", MatrixXd::Constant(2, 2, 0.5), MatrixXd::Constant(2, 2, 3.0)};
    AdamW opt({&w}, {.lr = 0.0, .weight_decay = 0.1});
    opt.step();
    CHECK(w.value == MatrixXd::Constant(2, 2, 0.5));
  }

  TEST_CASE("first step matches the closed form") {
    // m_hat = g and v_hat = g^2 after one step, so the move is lr * g / (|g| + eps).
    Parameter w{"w", MatrixXd::Constant(1, 1, 2.0), MatrixXd::Constant(1, 1, -0.5)};
    AdamW opt({&w}, {.lr = 0.1, .weight_decay = 0.01});
    opt.step();
    const double expected = 2.0 * (1.0 - 0.1 * 0.01) + 0.1 * 0.5 / (0.5 + 1e-8);
    CHECK(w.value(0, 0) == doctest::Approx(expected).epsilon(1e-15));
  }

  TEST_CASE("w^2 decreases monotonically after warmup") {
    Parameter w{"w", MatrixXd::Constant(1, 1, 1.0), MatrixXd::Zero(1, 1)};
    AdamW opt({&w}, {.lr = 0.01});
    std::vector<double> f;
    for (int i = 0; i < 100; ++i) {
      opt.zero_grad();
      Tape t;
      const Tensor x = t.param(w);
      const Tensor loss = ad::sum(ad::hadamard(x, x));
      f.push_back(loss.value()(0, 0));
      t.backward(loss);
      opt.step();
    }
    for (std::size_t i = 10; i < f.size(); ++i) CHECK(f[i] < f[i - 1]);
    CHECK(f.back() < 0.1 * f.front());
  }
}

TEST_SUITE("plateau") {
  TEST_CASE("improving stream keeps lr") {
    PlateauSchedule s(1e-3, 0.5, 3, 1e-5);
    for (int i = 0; i < 20; ++i) CHECK(s.step(10.0 - i) == 1e-3);
  }

  TEST_CASE("patience 3 decays once on the fourth stale call") {
    PlateauSchedule s(1e-3, 0.5, 3, 1e-5);
    s.step(1.0);
    for (int i = 0; i < 3; ++i) CHECK(s.step(2.0) == 1e-3);
    CHECK(s.step(2.0) == 5e-4);
    CHECK(s.stale() == 0);
    for (int i = 0; i < 3; ++i) CHECK(s.step(2.0) == 5e-4);
  }

  TEST_CASE("lr never drops below min_lr") {
    PlateauSchedule s(1e-3, 0.1, 0, 2e-4);
    s.step(0.0);
    for (int i = 0; i < 10; ++i) CHECK(s.step(1.0) >= 2e-4);
    CHECK(s.lr() == 2e-4);
  }

  TEST_CASE("max mode tracks increases") {
    PlateauSchedule s(1.0, 0.5, 1, 0.0, PlateauMode::Max);
    s.step(0.5);
    s.step(0.6);
    s.step(0.6);
    CHECK(s.lr() == 1.0);
    s.step(0.4);
    CHECK(s.lr() == 0.5);
  }

  TEST_CASE("invalid settings throw") {
    CHECK_THROWS(PlateauSchedule(1e-3, 1.5, 3, 0.0));
    CHECK_THROWS(PlateauSchedule(1e-5, 0.5, 3, 1e-4));
  }
}

TEST_SUITE("checkpoint") {
  TEST_CASE("parameters and optimizer state round-trip bit-exactly") {
    std::mt19937_64 rng(9);
    GatEncoder enc("enc", 3, 4, 2, rng);
    std::vector<Parameter*> ps;
    enc.collect(ps);
    for (Parameter* p : ps) p->grad = random_matrix(p->value.rows(), p->value.cols(), rng);
    AdamW opt(ps, {.lr = 3e-3, .weight_decay = 5e-4});
    opt.step();
    PlateauSchedule sched(3e-3, 0.8, 100, 1e-4);
    sched.step(0.123456789);

    const nlohmann::json ckpt{{"version", kCheckpointVersion},
                              {"parameters", parameters_to_json(ps)},
                              {"optimizer", opt.state()},
                              {"schedule", sched.state()}};
    const auto path = std::filesystem::temp_directory_path() / "qaoa2_nn_ckpt_test.json";
    write_json_file(path, ckpt);
    const nlohmann::json back = read_json_file(path);
    std::filesystem::remove(path);

    std::mt19937_64 other(10);
    GatEncoder copy("enc", 3, 4, 2, other);
    std::vector<Parameter*> qs;
    copy.collect(qs);
    parameters_from_json(back.at("parameters"), qs);
    for (std::size_t i = 0; i < ps.size(); ++i) CHECK(qs[i]->value.cwiseEqual(ps[i]->value).all());

    AdamW opt2(qs);
    opt2.load_state(back.at("optimizer"));
    CHECK(opt2.state() == opt.state());
    PlateauSchedule sched2(1.0, 0.5, 1, 0.0);
    sched2.load_state(back.at("schedule"));
    CHECK(sched2.state() == sched.state());
  }

  TEST_CASE("fresh schedule state survives the missing infinity") {
    PlateauSchedule s(1e-3, 0.5, 3, 1e-5);
    const nlohmann::json j = nlohmann::json::parse(s.state().dump());
    PlateauSchedule t(1.0, 0.5, 1, 0.0);
    t.load_state(j);
    CHECK(t.best() == std::numeric_limits<double>::infinity());
  }

  TEST_CASE("mismatched names or shapes are rejected") {
    std::mt19937_64 rng(11);
    Linear a("a", 3, 2, rng);
    Linear b("b", 3, 2, rng);
    Linear wide("a", 4, 2, rng);
    std::vector<Parameter*> pa, pb, pw;
    a.collect(pa);
    b.collect(pb);
    wide.collect(pw);
    const nlohmann::json j = parameters_to_json(pa);
    CHECK_THROWS(parameters_from_json(j, pb));
    CHECK_THROWS(parameters_from_json(j, pw));
  }
}
