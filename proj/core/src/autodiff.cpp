#include "rapt/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace rapt {

namespace {

NodePtr make_node(Tensor value, std::vector<NodePtr> parents, const char* op,
                  std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  n->op = op;
  bool needs = false;
  for (const auto& p : n->parents) needs = needs || p->requires_grad;
  n->requires_grad = needs;
  if (needs) n->backprop = std::move(backprop);
  return n;
}

void accumulate(Node& dst, const Tensor& g) {
  if (!dst.requires_grad) return;
  dst.grad_buffer().add_(g);
}

}  // namespace

NodePtr make_leaf(Tensor value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return n;
}

NodePtr make_constant(Tensor value) { return make_leaf(std::move(value), false); }

NodePtr matmul(const NodePtr& a, const NodePtr& b) {
  const Tensor& A = a->value;
  const Tensor& B = b->value;
  if (A.rank() != 2 || (B.rank() != 2 && B.rank() != 1)) {
    throw std::invalid_argument("matmul: expects [m x k] by [k x n] or [k]");
  }
  const std::size_t m = A.dim(0), k = A.dim(1);
  const bool vec = B.rank() == 1;
  const std::size_t kb = B.dim(0);
  const std::size_t n = vec ? 1 : B.dim(1);
  if (k != kb) {
    throw std::invalid_argument("matmul: inner dimension mismatch " + A.shape_str() + " vs " +
                                B.shape_str());
  }
  Tensor C = vec ? Tensor::zeros({m}) : Tensor::zeros({m, n});
  const double* pa = A.data();
  const double* pb = B.data();
  double* pc = C.data();
  if (vec) {
    for (std::size_t i = 0; i < m; ++i) {
      const double* row = pa + i * k;
      double acc = 0.0;
      for (std::size_t j = 0; j < k; ++j) acc += row[j] * pb[j];
      pc[i] = acc;
    }
  } else {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        const double av = pa[i * k + j];
        const double* brow = pb + j * n;
        double* crow = pc + i * n;
        for (std::size_t c = 0; c < n; ++c) crow[c] += av * brow[c];
      }
    }
  }
  return make_node(std::move(C), {a, b}, "matmul", [m, k, n, vec](Node& self) {
    const Tensor& dC = self.grad;
    Node& na = *self.parents[0];
    Node& nb = *self.parents[1];
    const double* pa = na.value.data();
    const double* pb = nb.value.data();
    const double* pd = dC.data();
    if (na.requires_grad) {
      Tensor dA = Tensor::zeros(na.value.shape());
      double* p = dA.data();
      // dA = dC * B^T
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
          double acc = 0.0;
          for (std::size_t c = 0; c < n; ++c) acc += pd[i * n + c] * pb[j * n + c];
          p[i * k + j] = acc;
        }
      }
      accumulate(na, dA);
    }
    if (nb.requires_grad) {
      Tensor dB = Tensor::zeros(nb.value.shape());
      double* p = dB.data();
      // dB = A^T * dC
      for (std::size_t j = 0; j < k; ++j) {
        for (std::size_t i = 0; i < m; ++i) {
          const double av = pa[i * k + j];
          for (std::size_t c = 0; c < n; ++c) p[j * n + c] += av * pd[i * n + c];
        }
      }
      accumulate(nb, dB);
    }
    (void)vec;
  });
}

NodePtr add(const NodePtr& a, const NodePtr& b) {
  a->value.require_same_shape(b->value, "add");
  Tensor out = a->value;
  out.add_(b->value);
  return make_node(std::move(out), {a, b}, "add", [](Node& self) {
    accumulate(*self.parents[0], self.grad);
    accumulate(*self.parents[1], self.grad);
  });
}

NodePtr sub(const NodePtr& a, const NodePtr& b) {
  a->value.require_same_shape(b->value, "sub");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b->value[i];
  return make_node(std::move(out), {a, b}, "sub", [](Node& self) {
    accumulate(*self.parents[0], self.grad);
    if (self.parents[1]->requires_grad) {
      Tensor g = self.grad;
      g.scale_(-1.0);
      accumulate(*self.parents[1], g);
    }
  });
}

NodePtr mul(const NodePtr& a, const NodePtr& b) {
  a->value.require_same_shape(b->value, "mul");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b->value[i];
  return make_node(std::move(out), {a, b}, "mul", [](Node& self) {
    Node& na = *self.parents[0];
    Node& nb = *self.parents[1];
    if (na.requires_grad) {
      Tensor g = self.grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= nb.value[i];
      accumulate(na, g);
    }
    if (nb.requires_grad) {
      Tensor g = self.grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= na.value[i];
      accumulate(nb, g);
    }
  });
}

NodePtr scale(const NodePtr& a, double s) {
  Tensor out = a->value;
  out.scale_(s);
  return make_node(std::move(out), {a}, "scale", [s](Node& self) {
    Tensor g = self.grad;
    g.scale_(s);
    accumulate(*self.parents[0], g);
  });
}

NodePtr neg(const NodePtr& a) { return scale(a, -1.0); }

NodePtr add_scalar(const NodePtr& a, double s) {
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += s;
  return make_node(std::move(out), {a}, "add_scalar",
                   [](Node& self) { accumulate(*self.parents[0], self.grad); });
}

NodePtr relu(const NodePtr& a) {
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
  return make_node(std::move(out), {a}, "relu", [](Node& self) {
    Node& na = *self.parents[0];
    Tensor g = self.grad;
    for (std::size_t i = 0; i < g.size(); ++i)
      if (na.value[i] <= 0.0) g[i] = 0.0;
    accumulate(na, g);
  });
}

NodePtr sigmoid(const NodePtr& a) {
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
  Tensor saved = out;
  return make_node(std::move(out), {a}, "sigmoid", [saved](Node& self) {
    Tensor g = self.grad;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= saved[i] * (1.0 - saved[i]);
    accumulate(*self.parents[0], g);
  });
}

NodePtr tanh_op(const NodePtr& a) {
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
  Tensor saved = out;
  return make_node(std::move(out), {a}, "tanh", [saved](Node& self) {
    Tensor g = self.grad;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= 1.0 - saved[i] * saved[i];
    accumulate(*self.parents[0], g);
  });
}

NodePtr exp_op(const NodePtr& a) {
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(out[i]);
  Tensor saved = out;
  return make_node(std::move(out), {a}, "exp", [saved](Node& self) {
    Tensor g = self.grad;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= saved[i];
    accumulate(*self.parents[0], g);
  });
}

NodePtr clamp(const NodePtr& a, double lo, double hi) {
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(hi, std::max(lo, out[i]));
  return make_node(std::move(out), {a}, "clamp", [lo, hi](Node& self) {
    Node& na = *self.parents[0];
    Tensor g = self.grad;
    for (std::size_t i = 0; i < g.size(); ++i)
      if (na.value[i] < lo || na.value[i] > hi) g[i] = 0.0;
    accumulate(na, g);
  });
}

NodePtr slice(const NodePtr& a, std::size_t begin, std::size_t len) {
  if (a->value.rank() != 1 || begin + len > a->value.size()) {
    throw std::invalid_argument("slice: out of range on " + a->value.shape_str());
  }
  Tensor out = Tensor::zeros({len});
  for (std::size_t i = 0; i < len; ++i) out[i] = a->value[begin + i];
  return make_node(std::move(out), {a}, "slice", [begin, len](Node& self) {
    Node& na = *self.parents[0];
    if (!na.requires_grad) return;
    Tensor g = Tensor::zeros(na.value.shape());
    for (std::size_t i = 0; i < len; ++i) g[begin + i] = self.grad[i];
    accumulate(na, g);
  });
}

NodePtr concat1d(const NodePtr& a, const NodePtr& b) {
  if (a->value.rank() != 1 || b->value.rank() != 1) {
    throw std::invalid_argument("concat1d: expects 1-D inputs");
  }
  const std::size_t na = a->value.size(), nb = b->value.size();
  Tensor out = Tensor::zeros({na + nb});
  for (std::size_t i = 0; i < na; ++i) out[i] = a->value[i];
  for (std::size_t i = 0; i < nb; ++i) out[na + i] = b->value[i];
  return make_node(std::move(out), {a, b}, "concat1d", [na, nb](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      Tensor g = Tensor::zeros({na});
      for (std::size_t i = 0; i < na; ++i) g[i] = self.grad[i];
      accumulate(pa, g);
    }
    if (pb.requires_grad) {
      Tensor g = Tensor::zeros({nb});
      for (std::size_t i = 0; i < nb; ++i) g[i] = self.grad[na + i];
      accumulate(pb, g);
    }
  });
}

NodePtr sum(const NodePtr& a) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a->value.size(); ++i) acc += a->value[i];
  return make_node(Tensor::scalar(acc), {a}, "sum", [](Node& self) {
    Node& na = *self.parents[0];
    Tensor g = Tensor::full(na.value.shape(), self.grad.item());
    accumulate(na, g);
  });
}

NodePtr mean(const NodePtr& a) {
  const std::size_t n = a->value.size();
  if (n == 0) throw std::invalid_argument("mean: empty tensor");
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a->value[i];
  return make_node(Tensor::scalar(acc / static_cast<double>(n)), {a}, "mean", [n](Node& self) {
    Node& na = *self.parents[0];
    Tensor g = Tensor::full(na.value.shape(), self.grad.item() / static_cast<double>(n));
    accumulate(na, g);
  });
}

NodePtr layer_norm(const NodePtr& x, const NodePtr& gamma, const NodePtr& beta, double eps) {
  const Tensor& X = x->value;
  if (X.rank() != 1 || X.size() == 0) throw std::invalid_argument("layer_norm: expects 1-D input");
  X.require_same_shape(gamma->value, "layer_norm gamma");
  X.require_same_shape(beta->value, "layer_norm beta");
  const std::size_t d = X.size();
  double mu = 0.0;
  for (std::size_t i = 0; i < d; ++i) mu += X[i];
  mu /= static_cast<double>(d);
  double var = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double c = X[i] - mu;
    var += c * c;
  }
  var /= static_cast<double>(d);
  const double inv_std = 1.0 / std::sqrt(var + eps);
  Tensor xhat = Tensor::zeros({d});
  Tensor out = Tensor::zeros({d});
  for (std::size_t i = 0; i < d; ++i) {
    xhat[i] = (X[i] - mu) * inv_std;
    out[i] = xhat[i] * gamma->value[i] + beta->value[i];
  }
  return make_node(std::move(out), {x, gamma, beta}, "layer_norm",
                   [xhat, inv_std, d](Node& self) {
                     Node& nx = *self.parents[0];
                     Node& ng = *self.parents[1];
                     Node& nb = *self.parents[2];
                     const Tensor& dy = self.grad;
                     if (ng.requires_grad) {
                       Tensor g = Tensor::zeros({d});
                       for (std::size_t i = 0; i < d; ++i) g[i] = dy[i] * xhat[i];
                       accumulate(ng, g);
                     }
                     if (nb.requires_grad) accumulate(nb, dy);
                     if (nx.requires_grad) {
                       const double dn = static_cast<double>(d);
                       double mean_gdy = 0.0, mean_gdy_xhat = 0.0;
                       for (std::size_t i = 0; i < d; ++i) {
                         const double gd = ng.value[i] * dy[i];
                         mean_gdy += gd;
                         mean_gdy_xhat += gd * xhat[i];
                       }
                       mean_gdy /= dn;
                       mean_gdy_xhat /= dn;
                       Tensor g = Tensor::zeros({d});
                       for (std::size_t i = 0; i < d; ++i) {
                         g[i] = (ng.value[i] * dy[i] - mean_gdy - xhat[i] * mean_gdy_xhat) *
                                inv_std;
                       }
                       accumulate(nx, g);
                     }
                   });
}

NodePtr gaussian_nll(const NodePtr& target, const NodePtr& mu, const NodePtr& logvar) {
  target->value.require_same_shape(mu->value, "gaussian_nll mu");
  target->value.require_same_shape(logvar->value, "gaussian_nll logvar");
  // l = 0.5*(ln 2pi + logvar) + 0.5*(t-mu)^2 * exp(-logvar)
  NodePtr diff = sub(target, mu);
  NodePtr sq = mul(diff, diff);
  NodePtr inv_var = exp_op(neg(logvar));
  NodePtr quad = mul(sq, inv_var);
  NodePtr base = add(logvar, quad);
  return scale(add_scalar(base, std::log(2.0 * M_PI)), 0.5);
}

void backward(const NodePtr& loss) {
  if (!loss) throw std::invalid_argument("backward: null node");
  if (loss->value.size() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got " + loss->value.shape_str());
  }
  // Iterative post-order DFS; reversed gives a valid topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  struct Frame {
    Node* node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({loss.get(), 0});
  visited.insert(loss.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      Node* p = f.node->parents[f.next_parent++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }
  loss->grad_buffer();
  loss->grad.fill(1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && !n->grad.empty()) n->backprop(*n);
  }
}

NodePtr ParamSet::add(const std::string& name, Tensor init) {
  if (params_.count(name)) throw std::invalid_argument("ParamSet: duplicate name " + name);
  auto node = make_leaf(std::move(init), true);
  params_[name] = node;
  return node;
}

const NodePtr& ParamSet::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("ParamSet: no parameter " + name);
  return it->second;
}

std::size_t ParamSet::total_elements() const {
  std::size_t n = 0;
  for (const auto& [name, node] : params_) n += node->value.size();
  return n;
}

void ParamSet::zero_grad() {
  for (auto& [name, node] : params_) node->zero_grad();
}

ParamSet& ParamSet::operator=(const ParamSet& other) {
  if (this == &other) return *this;
  params_.clear();
  for (const auto& [name, node] : other.params_) add(name, node->value);
  return *this;
}


namespace gru {

Out cell(const NodePtr& e, const NodePtr& h_prev, const Weights& w) {
  NodePtr z = sigmoid(add(add(matmul(w.w_z, e), matmul(w.u_z, h_prev)), w.b_z));
  NodePtr r = sigmoid(add(add(matmul(w.w_r, e), matmul(w.u_r, h_prev)), w.b_r));
  NodePtr rec = mul(r, add(matmul(w.u_n, h_prev), w.b_hn));
  NodePtr n = tanh_op(add(add(matmul(w.w_n, e), w.b_in), rec));
  // h = (1 - z) * n + z * h_prev
  NodePtr h = add(sub(n, mul(z, n)), mul(z, h_prev));
  return {h, h};
}

}  // namespace gru

}  // namespace rapt
