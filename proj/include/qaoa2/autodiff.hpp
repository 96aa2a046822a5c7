#pragma once

#include <Eigen/Dense>

#include <deque>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace qaoa2::ad {

/// Trainable matrix with an accumulated gradient. Frozen parameters enter a
/// tape as constants.
struct Parameter {
  std::string name;
  Eigen::MatrixXd value;
  Eigen::MatrixXd grad;
  bool frozen = false;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Tensor {
 public:
  Tensor() = default;

  const Eigen::MatrixXd& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool requires_grad() const;
  Tape& tape() const { return *tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tensor(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
  friend class Tape;
};

/// Reverse-mode tape. Nodes live in a deque so references stay stable while
/// new nodes are appended.
class Tape {
 public:
  using Backward = std::function<void(Tape&, int self)>;

  Tensor constant(Eigen::MatrixXd value);
  Tensor param(Parameter& p);

  /// Appends an op result. `inputs` decide whether the node needs a gradient;
  /// `backward` is dropped when none of them do.
  Tensor record(Eigen::MatrixXd value, std::initializer_list<Tensor> inputs, Backward backward, const char* op);
  Tensor record(Eigen::MatrixXd value, const std::vector<Tensor>& inputs, Backward backward, const char* op);

  /// Seeds d(root)/d(root) = 1 and runs every recorded backward in reverse.
  /// Parameter leaves add their gradient into Parameter::grad.
  void backward(const Tensor& root);

  const Eigen::MatrixXd& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  /// Gradient buffer of a node, allocated as zeros on first access.
  Eigen::MatrixXd& grad(int id);
  /// Adds `g` into the gradient of `t` when it needs one.
  void accumulate(const Tensor& t, const Eigen::MatrixXd& g);
  Eigen::MatrixXd gradient(const Tensor& t) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Eigen::MatrixXd value;
    Eigen::MatrixXd grad;
    bool requires_grad = false;
    Backward backward;
    Parameter* param = nullptr;
  };
  std::deque<Node> nodes_;
};

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
/// x (n x c) plus a 1 x c row broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);

Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope);
Tensor sigmoid(const Tensor& x);
Tensor sin(const Tensor& x);
Tensor cos(const Tensor& x);
/// Row-wise softmax of x / temperature.
Tensor softmax_rows(const Tensor& x, double temperature = 1.0);
/// Elementwise atan2(y, x).
Tensor atan2(const Tensor& y, const Tensor& x);
/// Reduces into [0, 2pi); gradient passes through unchanged.
Tensor wrap_angle(const Tensor& x);

/// Forward value `hard`, backward routed to `soft` as identity.
Tensor straight_through(const Eigen::MatrixXd& hard, const Tensor& soft);
/// Same value, cut from the graph.
Tensor stop_gradient(const Tensor& x);

Tensor concat_cols(const std::vector<Tensor>& parts);
/// 1 x c mean over rows.
Tensor mean_rows(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Mean squared error against a constant target of the same shape.
Tensor mse(const Tensor& pred, const Eigen::MatrixXd& target);

/// D^{-1/2} (A + I) D^{-1/2} with D = diag(1 + sum_j |A_ij|); differentiable in A.
Tensor gcn_normalize(const Tensor& adjacency);

/// Single-head GATv2 aggregation. For node i over j in N(i) plus i:
///   e_ij = a . leaky_relu(src_i + dst_j),  alpha_i = softmax_j(e_ij),
///   out_i = sum_j alpha_ij w_ij dst_j,
/// with w_ij = A_ij on edges (1 when `weighted` is false) and w_ii = 1.
/// Neighbors are the nonzero entries of A. `attention` is h x 1.
Tensor gatv2_attention(const Tensor& src, const Tensor& dst, const Tensor& attention, const Tensor& adjacency,
                       double slope = 0.2, bool weighted = true);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }

}  // namespace qaoa2::ad
