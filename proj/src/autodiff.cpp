#include "qaoa2/autodiff.hpp"

#include <cmath>
#include <numbers>

namespace qaoa2::ad {

using Eigen::MatrixXd;

const MatrixXd& Tensor::value() const {
  if (tape_ == nullptr) throw std::logic_error("empty tensor");
  return tape_->value(id_);
}

bool Tensor::requires_grad() const { return tape_ != nullptr && tape_->requires_grad(id_); }

Tensor Tape::constant(MatrixXd value) { return record(std::move(value), {}, nullptr, "constant"); }

Tensor Tape::param(Parameter& p) {
  if (p.frozen) return constant(p.value);
  Tensor t = record(p.value, {}, nullptr, "parameter");
  Node& node = nodes_[t.id_];
  node.requires_grad = true;
  node.param = &p;
  return t;
}

Tensor Tape::record(MatrixXd value, std::initializer_list<Tensor> inputs, Backward backward, const char* op) {
  return record(std::move(value), std::vector<Tensor>(inputs), std::move(backward), op);
}

Tensor Tape::record(MatrixXd value, const std::vector<Tensor>& inputs, Backward backward, const char* op) {
  if (!value.allFinite()) throw NonFiniteError(std::string("non-finite value produced by ") + op);
  bool needs = false;
  for (const Tensor& t : inputs) {
    if (t.tape_ != this) throw std::invalid_argument(std::string(op) + ": input belongs to another tape");
    needs = needs || nodes_[t.id_].requires_grad;
  }
  Node node;
  node.value = std::move(value);
  node.requires_grad = needs;
  if (needs) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Tensor(this, static_cast<int>(nodes_.size()) - 1);
}

MatrixXd& Tape::grad(int id) {
  Node& node = nodes_[id];
  if (node.grad.size() == 0) node.grad.setZero(node.value.rows(), node.value.cols());
  return node.grad;
}

void Tape::accumulate(const Tensor& t, const MatrixXd& g) {
  if (!requires_grad(t.id_)) return;
  grad(t.id_) += g;
}

MatrixXd Tape::gradient(const Tensor& t) const {
  const Node& node = nodes_[t.id_];
  if (node.grad.size() == 0) return MatrixXd::Zero(node.value.rows(), node.value.cols());
  return node.grad;
}

void Tape::backward(const Tensor& root) {
  if (root.tape_ != this) throw std::invalid_argument("backward: root belongs to another tape");
  if (root.rows() != 1 || root.cols() != 1) throw std::invalid_argument("backward: root must be a scalar");
  if (!requires_grad(root.id_)) return;
  grad(root.id_).array() += 1.0;
  for (int i = root.id_; i >= 0; --i) {
    Node& node = nodes_[i];
    if (node.grad.size() == 0) continue;
    if (!node.grad.allFinite()) throw NonFiniteError("non-finite gradient during backward");
    if (node.backward) node.backward(*this, i);
    if (node.param != nullptr) {
      Parameter& p = *node.param;
      if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols()) p.zero_grad();
      p.grad += node.grad;
    }
  }
}

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
  }
}

template <typename F, typename D>
Tensor unary(const Tensor& x, F f, D df, const char* op) {
  MatrixXd out = x.value().unaryExpr(f);
  return x.tape().record(std::move(out), {x},
                         [x, df](Tape& t, int self) {
                           const MatrixXd& g = t.grad(self);
                           t.accumulate(x, g.cwiseProduct(x.value().binaryExpr(t.value(self), df)));
                         },
                         op);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimensions differ");
  return a.tape().record(a.value() * b.value(), {a, b},
                         [a, b](Tape& t, int self) {
                           const MatrixXd& g = t.grad(self);
                           if (a.requires_grad()) t.grad(a.id()).noalias() += g * b.value().transpose();
                           if (b.requires_grad()) t.grad(b.id()).noalias() += a.value().transpose() * g;
                         },
                         "matmul");
}

Tensor transpose(const Tensor& a) {
  return a.tape().record(a.value().transpose(), {a},
                         [a](Tape& t, int self) { t.accumulate(a, t.grad(self).transpose()); }, "transpose");
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  return a.tape().record(a.value() + b.value(), {a, b},
                         [a, b](Tape& t, int self) {
                           t.accumulate(a, t.grad(self));
                           t.accumulate(b, t.grad(self));
                         },
                         "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  return a.tape().record(a.value() - b.value(), {a, b},
                         [a, b](Tape& t, int self) {
                           t.accumulate(a, t.grad(self));
                           t.accumulate(b, -t.grad(self));
                         },
                         "sub");
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (bias.rows() != 1 || bias.cols() != x.cols()) throw std::invalid_argument("add_bias: bias must be 1 x cols");
  MatrixXd out = x.value().rowwise() + bias.value().row(0);
  return x.tape().record(std::move(out), {x, bias},
                         [x, bias](Tape& t, int self) {
                           t.accumulate(x, t.grad(self));
                           t.accumulate(bias, t.grad(self).colwise().sum());
                         },
                         "add_bias");
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "hadamard");
  return a.tape().record(a.value().cwiseProduct(b.value()), {a, b},
                         [a, b](Tape& t, int self) {
                           const MatrixXd& g = t.grad(self);
                           t.accumulate(a, g.cwiseProduct(b.value()));
                           t.accumulate(b, g.cwiseProduct(a.value()));
                         },
                         "hadamard");
}

Tensor scale(const Tensor& a, double s) {
  return a.tape().record(a.value() * s, {a}, [a, s](Tape& t, int self) { t.accumulate(a, t.grad(self) * s); },
                         "scale");
}

Tensor add_scalar(const Tensor& a, double s) {
  MatrixXd out = a.value().array() + s;
  return a.tape().record(std::move(out), {a}, [a](Tape& t, int self) { t.accumulate(a, t.grad(self)); },
                         "add_scalar");
}

Tensor relu(const Tensor& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; }, "relu");
}

Tensor leaky_relu(const Tensor& x, double slope) {
  return unary(
      x, [slope](double v) { return v > 0.0 ? v : slope * v; },
      [slope](double v, double) { return v > 0.0 ? 1.0 : slope; }, "leaky_relu");
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); }, [](double, double y) { return y * (1.0 - y); },
      "sigmoid");
}

Tensor sin(const Tensor& x) {
  return unary(
      x, [](double v) { return std::sin(v); }, [](double v, double) { return std::cos(v); }, "sin");
}

Tensor cos(const Tensor& x) {
  return unary(
      x, [](double v) { return std::cos(v); }, [](double v, double) { return -std::sin(v); }, "cos");
}

Tensor softmax_rows(const Tensor& x, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("softmax_rows: temperature must be positive");
  MatrixXd z = x.value() / temperature;
  z = z.colwise() - z.rowwise().maxCoeff();
  z = z.array().exp().matrix();
  z = z.array().colwise() / z.rowwise().sum().array();
  return x.tape().record(std::move(z), {x},
                         [x, temperature](Tape& t, int self) {
                           const MatrixXd& y = t.value(self);
                           const MatrixXd& g = t.grad(self);
                           const Eigen::VectorXd dot = g.cwiseProduct(y).rowwise().sum();
                           MatrixXd dx = y.cwiseProduct(g.colwise() - dot) / temperature;
                           t.accumulate(x, dx);
                         },
                         "softmax_rows");
}

Tensor atan2(const Tensor& y, const Tensor& x) {
  require_same_shape(y, x, "atan2");
  MatrixXd out = y.value().binaryExpr(x.value(), [](double a, double b) { return std::atan2(a, b); });
  return y.tape().record(std::move(out), {y, x},
                         [y, x](Tape& t, int self) {
                           const MatrixXd& g = t.grad(self);
                           const MatrixXd r2 = (y.value().array().square() + x.value().array().square()).matrix();
                           if ((r2.array() == 0.0).any()) throw NonFiniteError("atan2: gradient undefined at origin");
                           t.accumulate(y, g.cwiseProduct(x.value()).cwiseQuotient(r2));
                           t.accumulate(x, -g.cwiseProduct(y.value()).cwiseQuotient(r2));
                         },
                         "atan2");
}

Tensor wrap_angle(const Tensor& x) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  MatrixXd out = x.value().unaryExpr([](double v) {
    double r = std::fmod(v, two_pi);
    if (r < 0.0) r += two_pi;
    return r >= two_pi ? 0.0 : r;
  });
  return x.tape().record(std::move(out), {x}, [x](Tape& t, int self) { t.accumulate(x, t.grad(self)); },
                         "wrap_angle");
}

Tensor straight_through(const MatrixXd& hard, const Tensor& soft) {
  if (hard.rows() != soft.rows() || hard.cols() != soft.cols()) {
    throw std::invalid_argument("straight_through: shape mismatch");
  }
  return soft.tape().record(hard, {soft}, [soft](Tape& t, int self) { t.accumulate(soft, t.grad(self)); },
                            "straight_through");
}

Tensor stop_gradient(const Tensor& x) { return x.tape().constant(x.value()); }

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const Tensor& p : parts) {
    if (p.rows() != rows) throw std::invalid_argument("concat_cols: row counts differ");
    cols += p.cols();
  }
  MatrixXd out(rows, cols);
  Eigen::Index at = 0;
  for (const Tensor& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return parts.front().tape().record(std::move(out), parts,
                                     [parts](Tape& t, int self) {
                                       const MatrixXd& g = t.grad(self);
                                       Eigen::Index offset = 0;
                                       for (const Tensor& p : parts) {
                                         t.accumulate(p, g.middleCols(offset, p.cols()));
                                         offset += p.cols();
                                       }
                                     },
                                     "concat_cols");
}

Tensor mean_rows(const Tensor& x) {
  if (x.rows() == 0) throw std::invalid_argument("mean_rows: no rows");
  const double n = static_cast<double>(x.rows());
  return x.tape().record(x.value().colwise().mean(), {x},
                         [x, n](Tape& t, int self) {
                           const MatrixXd g = t.grad(self).replicate(x.rows(), 1) / n;
                           t.accumulate(x, g);
                         },
                         "mean_rows");
}

Tensor sum(const Tensor& x) {
  MatrixXd out(1, 1);
  out(0, 0) = x.value().sum();
  return x.tape().record(std::move(out), {x},
                         [x](Tape& t, int self) {
                           t.accumulate(x, MatrixXd::Constant(x.rows(), x.cols(), t.grad(self)(0, 0)));
                         },
                         "sum");
}

Tensor mean(const Tensor& x) {
  if (x.value().size() == 0) throw std::invalid_argument("mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.rows() * x.cols()));
}

Tensor mse(const Tensor& pred, const MatrixXd& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
    throw std::invalid_argument("mse: shape mismatch");
  }
  const Tensor diff = sub(pred, pred.tape().constant(target));
  return mean(hadamard(diff, diff));
}

Tensor gcn_normalize(const Tensor& adjacency) {
  const MatrixXd& a = adjacency.value();
  if (a.rows() != a.cols()) throw std::invalid_argument("gcn_normalize: adjacency must be square");
  const Eigen::Index n = a.rows();
  const Eigen::VectorXd deg = (a.cwiseAbs().rowwise().sum().array() + 1.0).matrix();
  const Eigen::VectorXd r = deg.cwiseSqrt().cwiseInverse();
  MatrixXd out = r.asDiagonal() * (a + MatrixXd::Identity(n, n)) * r.asDiagonal();
  return adjacency.tape().record(
      std::move(out), {adjacency},
      [adjacency, r, deg](Tape& t, int self) {
        const MatrixXd& a = adjacency.value();
        const Eigen::Index n = a.rows();
        const MatrixXd& g = t.grad(self);
        MatrixXd da = r.asDiagonal() * g * r.asDiagonal();
        const MatrixXd a_hat = a + MatrixXd::Identity(n, n);
        // r_i scales row i and column i.
        const Eigen::VectorXd dr =
            (g.cwiseProduct(a_hat) * r) + (g.cwiseProduct(a_hat).transpose() * r);
        const Eigen::VectorXd dd = (dr.array() * -0.5 * deg.array().pow(-1.5)).matrix();
        const MatrixXd sign = a.unaryExpr([](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
        da += dd.asDiagonal() * sign;
        t.accumulate(adjacency, da);
      },
      "gcn_normalize");
}

Tensor gatv2_attention(const Tensor& src, const Tensor& dst, const Tensor& attention, const Tensor& adjacency,
                       double slope, bool weighted) {
  const MatrixXd& hs = src.value();
  const MatrixXd& ht = dst.value();
  const MatrixXd& av = attention.value();
  const MatrixXd& adj = adjacency.value();
  const Eigen::Index n = hs.rows();
  const Eigen::Index h = hs.cols();
  if (ht.rows() != n || ht.cols() != h) throw std::invalid_argument("gatv2_attention: src/dst shape mismatch");
  if (av.rows() != h || av.cols() != 1) throw std::invalid_argument("gatv2_attention: attention must be h x 1");
  if (adj.rows() != n || adj.cols() != n) throw std::invalid_argument("gatv2_attention: adjacency shape mismatch");

  // Neighbor lists with the self loop first.
  std::vector<std::vector<Eigen::Index>> nbrs(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    nbrs[i].push_back(i);
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j != i && adj(i, j) != 0.0) nbrs[i].push_back(j);
    }
  }
  auto weight = [&adj, weighted](Eigen::Index i, Eigen::Index j) {
    if (i == j || !weighted) return 1.0;
    return adj(i, j);
  };
  auto leaky = [slope](double v) { return v > 0.0 ? v : slope * v; };

  std::vector<Eigen::VectorXd> alpha(static_cast<std::size_t>(n));
  MatrixXd out = MatrixXd::Zero(n, h);
  const Eigen::VectorXd a = av.col(0);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& ni = nbrs[i];
    Eigen::VectorXd e(static_cast<Eigen::Index>(ni.size()));
    for (std::size_t k = 0; k < ni.size(); ++k) {
      e(static_cast<Eigen::Index>(k)) = a.dot((hs.row(i) + ht.row(ni[k])).transpose().unaryExpr(leaky));
    }
    e = (e.array() - e.maxCoeff()).exp().matrix();
    e /= e.sum();
    for (std::size_t k = 0; k < ni.size(); ++k) {
      out.row(i) += e(static_cast<Eigen::Index>(k)) * weight(i, ni[k]) * ht.row(ni[k]);
    }
    alpha[i] = std::move(e);
  }

  return src.tape().record(
      std::move(out), {src, dst, attention, adjacency},
      [src, dst, attention, adjacency, nbrs, alpha, slope, weighted](Tape& t, int self) {
        const MatrixXd& hs = src.value();
        const MatrixXd& ht = dst.value();
        const MatrixXd& adj = adjacency.value();
        const Eigen::VectorXd a = attention.value().col(0);
        const MatrixXd& g = t.grad(self);
        const Eigen::Index n = hs.rows();
        const Eigen::Index h = hs.cols();
        MatrixXd dhs = MatrixXd::Zero(n, h);
        MatrixXd dht = MatrixXd::Zero(n, h);
        Eigen::VectorXd da = Eigen::VectorXd::Zero(h);
        MatrixXd dadj = MatrixXd::Zero(n, n);
        for (Eigen::Index i = 0; i < n; ++i) {
          const auto& ni = nbrs[i];
          const Eigen::VectorXd& al = alpha[i];
          const auto m = static_cast<Eigen::Index>(ni.size());
          Eigen::VectorXd dalpha(m);
          for (Eigen::Index k = 0; k < m; ++k) {
            const Eigen::Index j = ni[k];
            const double w = (j == i || !weighted) ? 1.0 : adj(i, j);
            const double msg = g.row(i).dot(ht.row(j));
            dht.row(j) += al(k) * w * g.row(i);
            dalpha(k) = w * msg;
            if (j != i && weighted) dadj(i, j) += al(k) * msg;
          }
          const double centre = al.dot(dalpha);
          for (Eigen::Index k = 0; k < m; ++k) {
            const Eigen::Index j = ni[k];
            const double de = al(k) * (dalpha(k) - centre);
            if (de == 0.0) continue;
            const Eigen::VectorXd z = (hs.row(i) + ht.row(j)).transpose();
            da += de * z.unaryExpr([slope](double v) { return v > 0.0 ? v : slope * v; });
            const Eigen::VectorXd dz =
                de * a.cwiseProduct(z.unaryExpr([slope](double v) { return v > 0.0 ? 1.0 : slope; }));
            dhs.row(i) += dz.transpose();
            dht.row(j) += dz.transpose();
          }
        }
        t.accumulate(src, dhs);
        t.accumulate(dst, dht);
        t.accumulate(attention, da);
        t.accumulate(adjacency, dadj);
      },
      "gatv2_attention");
}

}  // namespace qaoa2::ad
