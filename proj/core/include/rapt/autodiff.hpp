#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "rapt/tensor.hpp"

namespace rapt {

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// One vertex of the define-by-run graph. Graphs are rebuilt per step;
/// parameters are long-lived leaves shared across graphs so their gradients
/// accumulate additively over a batch.
struct Node {
  Tensor value;
  Tensor grad;  // empty until backward touches this node
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backprop;  // pulls grad into parents
  const char* op = "leaf";
  bool requires_grad = false;

  Tensor& grad_buffer() {
    if (grad.empty() && !value.empty()) grad = Tensor::zeros(value.shape());
    return grad;
  }

  void zero_grad() {
    if (!grad.empty()) grad.fill(0.0);
  }
};

NodePtr make_leaf(Tensor value, bool requires_grad = true);
NodePtr make_constant(Tensor value);

// --- primitive ops (each defines its own backward) ---

/// matmul: [m x k] by [k x n] -> [m x n], or [m x k] by [k] -> [m].
NodePtr matmul(const NodePtr& a, const NodePtr& b);
NodePtr add(const NodePtr& a, const NodePtr& b);
NodePtr sub(const NodePtr& a, const NodePtr& b);
NodePtr mul(const NodePtr& a, const NodePtr& b);  // elementwise
NodePtr scale(const NodePtr& a, double s);
NodePtr neg(const NodePtr& a);
NodePtr relu(const NodePtr& a);
NodePtr sigmoid(const NodePtr& a);
NodePtr tanh_op(const NodePtr& a);
NodePtr exp_op(const NodePtr& a);
NodePtr clamp(const NodePtr& a, double lo, double hi);
NodePtr slice(const NodePtr& a, std::size_t begin, std::size_t len);  // 1-D
NodePtr concat1d(const NodePtr& a, const NodePtr& b);
NodePtr sum(const NodePtr& a);
NodePtr mean(const NodePtr& a);
NodePtr add_scalar(const NodePtr& a, double s);

/// (x - mean(x)) / sqrt(var(x) + eps) * gamma + beta over the feature axis;
/// population variance.
NodePtr layer_norm(const NodePtr& x, const NodePtr& gamma, const NodePtr& beta,
                   double eps = 1e-5);

/// Per-dimension Gaussian negative log-likelihood:
///   l_i = 0.5 * (ln 2*pi + logvar_i + (target_i - mu_i)^2 * exp(-logvar_i))
NodePtr gaussian_nll(const NodePtr& target, const NodePtr& mu, const NodePtr& logvar);

/// Reverse-mode sweep from a scalar loss. Visits reachable nodes in reverse
/// topological order exactly once; gradients accumulate additively.
void backward(const NodePtr& loss);

/// Named parameter collection; iteration order is sorted by name. Copies are
/// deep (fresh leaves) so two models never share parameter storage.
class ParamSet {
 public:
  ParamSet() = default;
  ParamSet(const ParamSet& other) { *this = other; }
  ParamSet& operator=(const ParamSet& other);
  ParamSet(ParamSet&&) = default;
  ParamSet& operator=(ParamSet&&) = default;

  NodePtr add(const std::string& name, Tensor init);
  const NodePtr& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  std::size_t size() const { return params_.size(); }
  std::size_t total_elements() const;

  void zero_grad();

  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }


 private:
  std::map<std::string, NodePtr> params_;
};

namespace gru {

/// Weight handles for one cell; all matrices are [d_model x d_model].
struct Weights {
  NodePtr w_z, u_z, b_z;
  NodePtr w_r, u_r, b_r;
  NodePtr w_n, u_n, b_in, b_hn;
};

struct Out {
  NodePtr g;  // output feature (equals new hidden state)
  NodePtr h;  // new hidden state
};

/// z = sig(Wz e + Uz h + bz); r = sig(Wr e + Ur h + br);
/// n = tanh(Wn e + b_in + r * (Un h + b_hn)); h' = (1-z)*n + z*h.
Out cell(const NodePtr& e, const NodePtr& h_prev, const Weights& w);

}  // namespace gru

}  // namespace rapt
