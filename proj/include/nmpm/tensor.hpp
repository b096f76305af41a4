#pragma once

// Dense row-major tensors with reverse-mode autodiff on a define-by-run tape.
// The tape is rebuilt on every forward pass; backward() consumes it.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace nmpm {

class TensorError : public std::runtime_error {
 public:
  explicit TensorError(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {

inline std::size_t numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

template <typename T>
struct Node {
  std::vector<int> shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until touched by backward
  bool requires_grad = false;
  std::string name;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
  }
};

}  // namespace detail

template <typename T>
class Tensor {
 public:
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;
  explicit Tensor(NodePtr n) : n_(std::move(n)) {}

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
    auto n = std::make_shared<detail::Node<T>>();
    n->value.assign(detail::numel(shape), T(0));
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Tensor(n);
  }

  static Tensor full(std::vector<int> shape, T v, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.values().begin(), t.values().end(), v);
    return t;
  }

  static Tensor from(std::vector<T> data, std::vector<int> shape,
                     bool requires_grad = false) {
    if (data.size() != detail::numel(shape))
      throw TensorError("Tensor::from: data size " + std::to_string(data.size()) +
                        " does not match shape " + detail::shape_str(shape));
    auto n = std::make_shared<detail::Node<T>>();
    n->value = std::move(data);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Tensor(n);
  }

  static Tensor scalar(T v, bool requires_grad = false) {
    return from({v}, {1}, requires_grad);
  }

  bool defined() const { return n_ != nullptr; }
  const std::vector<int>& shape() const { return n_->shape; }
  int dim(int i) const { return n_->shape[static_cast<std::size_t>(i)]; }
  int rank() const { return static_cast<int>(n_->shape.size()); }
  std::size_t size() const { return n_->value.size(); }
  std::vector<T>& values() { return n_->value; }
  const std::vector<T>& values() const { return n_->value; }
  bool requires_grad() const { return n_->requires_grad; }
  void set_requires_grad(bool b) { n_->requires_grad = b; }
  const std::string& name() const { return n_->name; }
  void set_name(std::string s) { n_->name = std::move(s); }

  std::vector<T>& grad() {
    n_->ensure_grad();
    return n_->grad;
  }
  bool has_grad() const { return !n_->grad.empty(); }
  void zero_grad() {
    if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), T(0));
  }

  T item() const {
    if (size() != 1) throw TensorError("item(): tensor is not scalar");
    return n_->value[0];
  }

  NodePtr node() const { return n_; }

  // Reverse-mode sweep from a scalar. Consumes the tape: interior nodes drop
  // their parent links afterwards, gradients stay in place.
  void backward() const {
    if (size() != 1)
      throw TensorError("backward(): loss must be scalar, got shape " +
                        detail::shape_str(n_->shape));
    std::vector<detail::Node<T>*> order;
    topo_order(order);
    n_->ensure_grad();
    n_->grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      detail::Node<T>* nd = *it;
      if (nd->backward && !nd->grad.empty()) nd->backward(*nd);
    }
    for (detail::Node<T>* nd : order) {
      nd->parents.clear();
      nd->backward = nullptr;
    }
  }

 private:
  void topo_order(std::vector<detail::Node<T>*>& order) const {
    // iterative post-order DFS; recursion depth would blow up on long unrolls
    std::unordered_set<detail::Node<T>*> visited;
    struct Frame {
      detail::Node<T>* node;
      std::size_t next;
    };
    std::vector<Frame> stack;
    stack.push_back({n_.get(), 0});
    visited.insert(n_.get());
    while (!stack.empty()) {
      Frame& f = stack.back();
      if (f.next < f.node->parents.size()) {
        detail::Node<T>* p = f.node->parents[f.next++].get();
        if (visited.insert(p).second) stack.push_back({p, 0});
      } else {
        order.push_back(f.node);
        stack.pop_back();
      }
    }
  }

  NodePtr n_;
};

namespace detail {

template <typename T>
bool any_requires(std::initializer_list<Tensor<T>> ts) {
  for (const auto& t : ts)
    if (t.defined() && t.requires_grad()) return true;
  return false;
}

// Wires a new node into the tape. `backward` accumulates into parent grads.
template <typename T, typename F>
Tensor<T> make_op(std::vector<int> shape, std::vector<T> value,
                  std::initializer_list<Tensor<T>> parents, F&& backward) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  if (any_requires(parents)) {
    n->requires_grad = true;
    for (const auto& p : parents)
      if (p.defined()) n->parents.push_back(p.node());
    n->backward = std::forward<F>(backward);
  }
  return Tensor<T>(n);
}

template <typename T>
void accum(const std::shared_ptr<Node<T>>& p, std::size_t i, T v) {
  p->ensure_grad();
  p->grad[i] += v;
}

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw TensorError(std::string(op) + ": shape mismatch " +
                      shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace detail

// ---- elementwise ----

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "add");
  std::vector<T> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] + b.values()[i];
  auto an = a.node(), bn = b.node();
  return detail::make_op<T>(a.shape(), std::move(v), {a, b},
                            [an, bn](detail::Node<T>& out) {
                              if (an->requires_grad) {
                                an->ensure_grad();
                                for (std::size_t i = 0; i < out.grad.size(); ++i)
                                  an->grad[i] += out.grad[i];
                              }
                              if (bn->requires_grad) {
                                bn->ensure_grad();
                                for (std::size_t i = 0; i < out.grad.size(); ++i)
                                  bn->grad[i] += out.grad[i];
                              }
                            });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "sub");
  std::vector<T> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] - b.values()[i];
  auto an = a.node(), bn = b.node();
  return detail::make_op<T>(a.shape(), std::move(v), {a, b},
                            [an, bn](detail::Node<T>& out) {
                              if (an->requires_grad) {
                                an->ensure_grad();
                                for (std::size_t i = 0; i < out.grad.size(); ++i)
                                  an->grad[i] += out.grad[i];
                              }
                              if (bn->requires_grad) {
                                bn->ensure_grad();
                                for (std::size_t i = 0; i < out.grad.size(); ++i)
                                  bn->grad[i] -= out.grad[i];
                              }
                            });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "mul");
  std::vector<T> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] * b.values()[i];
  auto an = a.node(), bn = b.node();
  return detail::make_op<T>(a.shape(), std::move(v), {a, b},
                            [an, bn](detail::Node<T>& out) {
                              if (an->requires_grad) {
                                an->ensure_grad();
                                for (std::size_t i = 0; i < out.grad.size(); ++i)
                                  an->grad[i] += out.grad[i] * bn->value[i];
                              }
                              if (bn->requires_grad) {
                                bn->ensure_grad();
                                for (std::size_t i = 0; i < out.grad.size(); ++i)
                                  bn->grad[i] += out.grad[i] * an->value[i];
                              }
                            });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  std::vector<T> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] * s;
  auto an = a.node();
  return detail::make_op<T>(a.shape(), std::move(v), {a},
                            [an, s](detail::Node<T>& out) {
                              an->ensure_grad();
                              for (std::size_t i = 0; i < out.grad.size(); ++i)
                                an->grad[i] += out.grad[i] * s;
                            });
}

// a + alpha * b
template <typename T>
Tensor<T> add_scaled(const Tensor<T>& a, const Tensor<T>& b, T alpha) {
  detail::check_same_shape(a, b, "add_scaled");
  std::vector<T> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    v[i] = a.values()[i] + alpha * b.values()[i];
  auto an = a.node(), bn = b.node();
  return detail::make_op<T>(a.shape(), std::move(v), {a, b},
                            [an, bn, alpha](detail::Node<T>& out) {
                              if (an->requires_grad) {
                                an->ensure_grad();
                                for (std::size_t i = 0; i < out.grad.size(); ++i)
                                  an->grad[i] += out.grad[i];
                              }
                              if (bn->requires_grad) {
                                bn->ensure_grad();
                                for (std::size_t i = 0; i < out.grad.size(); ++i)
                                  bn->grad[i] += out.grad[i] * alpha;
                              }
                            });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  std::vector<T> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    v[i] = a.values()[i] > T(0) ? a.values()[i] : T(0);
  auto an = a.node();
  return detail::make_op<T>(a.shape(), std::move(v), {a},
                            [an](detail::Node<T>& out) {
                              an->ensure_grad();
                              for (std::size_t i = 0; i < out.grad.size(); ++i)
                                if (an->value[i] > T(0)) an->grad[i] += out.grad[i];
                            });
}

template <typename T>
Tensor<T> sin_op(const Tensor<T>& a) {
  std::vector<T> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::sin(a.values()[i]);
  auto an = a.node();
  return detail::make_op<T>(a.shape(), std::move(v), {a},
                            [an](detail::Node<T>& out) {
                              an->ensure_grad();
                              for (std::size_t i = 0; i < out.grad.size(); ++i)
                                an->grad[i] += out.grad[i] * std::cos(an->value[i]);
                            });
}

template <typename T>
Tensor<T> cos_op(const Tensor<T>& a) {
  std::vector<T> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::cos(a.values()[i]);
  auto an = a.node();
  return detail::make_op<T>(a.shape(), std::move(v), {a},
                            [an](detail::Node<T>& out) {
                              an->ensure_grad();
                              for (std::size_t i = 0; i < out.grad.size(); ++i)
                                an->grad[i] -= out.grad[i] * std::sin(an->value[i]);
                            });
}

// elementwise product with a broadcast scalar tensor; gradient to both sides
template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, const Tensor<T>& s) {
  if (s.size() != 1) throw TensorError("mul_scalar: second arg must be scalar");
  T sv = s.values()[0];
  std::vector<T> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] * sv;
  auto an = a.node(), sn = s.node();
  return detail::make_op<T>(a.shape(), std::move(v), {a, s},
                            [an, sn](detail::Node<T>& out) {
                              T sv2 = sn->value[0];
                              if (an->requires_grad) {
                                an->ensure_grad();
                                for (std::size_t i = 0; i < out.grad.size(); ++i)
                                  an->grad[i] += out.grad[i] * sv2;
                              }
                              if (sn->requires_grad) {
                                sn->ensure_grad();
                                T acc = T(0);
                                for (std::size_t i = 0; i < out.grad.size(); ++i)
                                  acc += out.grad[i] * an->value[i];
                                sn->grad[0] += acc;
                              }
                            });
}

// componentwise clamp of an N x D tensor into per-column [lo, hi];
// pass-through gradient strictly inside, zero at and beyond the bound
template <typename T>
Tensor<T> clamp_cols(const Tensor<T>& a, const std::vector<T>& lo,
                     const std::vector<T>& hi) {
  if (a.rank() != 2) throw TensorError("clamp_cols: expected rank-2 tensor");
  int d = a.dim(1);
  if (static_cast<int>(lo.size()) != d || static_cast<int>(hi.size()) != d)
    throw TensorError("clamp_cols: bound size mismatch");
  std::vector<T> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    int c = static_cast<int>(i % d);
    v[i] = std::min(hi[c], std::max(lo[c], a.values()[i]));
  }
  auto an = a.node();
  return detail::make_op<T>(a.shape(), std::move(v), {a},
                            [an, lo, hi, d](detail::Node<T>& out) {
                              an->ensure_grad();
                              for (std::size_t i = 0; i < out.grad.size(); ++i) {
                                int c = static_cast<int>(i % d);
                                if (an->value[i] > lo[c] && an->value[i] < hi[c])
                                  an->grad[i] += out.grad[i];
                              }
                            });
}

// ---- reductions ----

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc = T(0);
  for (T x : a.values()) acc += x;
  auto an = a.node();
  return detail::make_op<T>({1}, {acc}, {a}, [an](detail::Node<T>& out) {
    an->ensure_grad();
    for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += out.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  T acc = T(0);
  for (T x : a.values()) acc += x;
  T inv = T(1) / static_cast<T>(a.size());
  auto an = a.node();
  return detail::make_op<T>({1}, {acc * inv}, {a}, [an, inv](detail::Node<T>& out) {
    an->ensure_grad();
    for (std::size_t i = 0; i < an->grad.size(); ++i)
      an->grad[i] += out.grad[0] * inv;
  });
}

template <typename T>
Tensor<T> mse_loss(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "mse_loss");
  T acc = T(0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    T d = a.values()[i] - b.values()[i];
    acc += d * d;
  }
  T inv = T(1) / static_cast<T>(a.size());
  auto an = a.node(), bn = b.node();
  return detail::make_op<T>({1}, {acc * inv}, {a, b},
                            [an, bn, inv](detail::Node<T>& out) {
                              for (std::size_t i = 0; i < an->value.size(); ++i) {
                                T g = T(2) * inv * (an->value[i] - bn->value[i]) *
                                      out.grad[0];
                                if (an->requires_grad) detail::accum(an, i, g);
                                if (bn->requires_grad) detail::accum(bn, i, -g);
                              }
                            });
}

// mean Euclidean distance of N x 2 points to a fixed target
template <typename T>
Tensor<T> mean_distance_to(const Tensor<T>& pts, T tx, T ty) {
  if (pts.rank() != 2 || pts.dim(1) != 2)
    throw TensorError("mean_distance_to: expected N x 2 tensor");
  int n = pts.dim(0);
  T acc = T(0);
  for (int i = 0; i < n; ++i) {
    T dx = pts.values()[2 * i] - tx, dy = pts.values()[2 * i + 1] - ty;
    acc += std::sqrt(dx * dx + dy * dy);
  }
  T inv = T(1) / static_cast<T>(n);
  auto pn = pts.node();
  return detail::make_op<T>({1}, {acc * inv}, {pts},
                            [pn, tx, ty, inv, n](detail::Node<T>& out) {
                              pn->ensure_grad();
                              for (int i = 0; i < n; ++i) {
                                T dx = pn->value[2 * i] - tx;
                                T dy = pn->value[2 * i + 1] - ty;
                                T r = std::sqrt(dx * dx + dy * dy);
                                if (r < T(1e-12)) continue;
                                pn->grad[2 * i] += out.grad[0] * inv * dx / r;
                                pn->grad[2 * i + 1] += out.grad[0] * inv * dy / r;
                              }
                            });
}

// ---- structural ----

// stack rank-R tensors into rank-(R+1) along a new leading axis
template <typename T>
Tensor<T> stack0(const std::vector<Tensor<T>>& ts) {
  if (ts.empty()) throw TensorError("stack0: empty list");
  for (const auto& t : ts) detail::check_same_shape(ts[0], t, "stack0");
  std::size_t per = ts[0].size();
  std::vector<T> v(per * ts.size());
  for (std::size_t k = 0; k < ts.size(); ++k)
    std::copy(ts[k].values().begin(), ts[k].values().end(), v.begin() + k * per);
  std::vector<int> shape;
  shape.push_back(static_cast<int>(ts.size()));
  for (int d : ts[0].shape()) shape.push_back(d);

  bool req = false;
  for (const auto& t : ts) req = req || t.requires_grad();
  auto n = std::make_shared<detail::Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(v);
  if (req) {
    n->requires_grad = true;
    std::vector<typename Tensor<T>::NodePtr> parents;
    for (const auto& t : ts) {
      n->parents.push_back(t.node());
      parents.push_back(t.node());
    }
    n->backward = [parents, per](detail::Node<T>& out) {
      for (std::size_t k = 0; k < parents.size(); ++k) {
        if (!parents[k]->requires_grad) continue;
        parents[k]->ensure_grad();
        for (std::size_t i = 0; i < per; ++i)
          parents[k]->grad[i] += out.grad[k * per + i];
      }
    };
  }
  return Tensor<T>(n);
}

// select index i of the leading axis
template <typename T>
Tensor<T> select0(const Tensor<T>& a, int i) {
  if (a.rank() < 1 || i < 0 || i >= a.dim(0))
    throw TensorError("select0: index out of range");
  std::vector<int> shape(a.shape().begin() + 1, a.shape().end());
  std::size_t per = detail::numel(shape);
  std::vector<T> v(a.values().begin() + i * per, a.values().begin() + (i + 1) * per);
  auto an = a.node();
  return detail::make_op<T>(std::move(shape), std::move(v), {a},
                            [an, i, per](detail::Node<T>& out) {
                              an->ensure_grad();
                              for (std::size_t j = 0; j < per; ++j)
                                an->grad[i * per + j] += out.grad[j];
                            });
}

// channel slice [c0, c0+count) of a [C,H,W] or [B,C,H,W] tensor
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& a, int c0, int count) {
  if (a.rank() != 3 && a.rank() != 4)
    throw TensorError("slice_channels: expected rank 3 or 4");
  int caxis = a.rank() - 3;
  int C = a.dim(caxis);
  if (c0 < 0 || count < 1 || c0 + count > C)
    throw TensorError("slice_channels: range [" + std::to_string(c0) + "," +
                      std::to_string(c0 + count) + ") out of " + std::to_string(C));
  int B = a.rank() == 4 ? a.dim(0) : 1;
  std::size_t hw = static_cast<std::size_t>(a.dim(caxis + 1)) * a.dim(caxis + 2);
  std::vector<T> v(static_cast<std::size_t>(B) * count * hw);
  for (int b = 0; b < B; ++b)
    std::copy(a.values().begin() + (static_cast<std::size_t>(b) * C + c0) * hw,
              a.values().begin() + (static_cast<std::size_t>(b) * C + c0 + count) * hw,
              v.begin() + static_cast<std::size_t>(b) * count * hw);
  std::vector<int> shape = a.shape();
  shape[static_cast<std::size_t>(caxis)] = count;
  auto an = a.node();
  return detail::make_op<T>(std::move(shape), std::move(v), {a},
                            [an, c0, count, C, B, hw](detail::Node<T>& out) {
                              an->ensure_grad();
                              for (int b = 0; b < B; ++b) {
                                std::size_t src = static_cast<std::size_t>(b) * count * hw;
                                std::size_t dst = (static_cast<std::size_t>(b) * C + c0) * hw;
                                for (std::size_t i = 0; i < count * hw; ++i)
                                  an->grad[dst + i] += out.grad[src + i];
                              }
                            });
}

// concatenate along the channel axis of [C,H,W] / [B,C,H,W]
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != b.rank() || (a.rank() != 3 && a.rank() != 4))
    throw TensorError("concat_channels: expected matching rank 3 or 4");
  int caxis = a.rank() - 3;
  for (int i = 0; i < a.rank(); ++i)
    if (i != caxis && a.dim(i) != b.dim(i))
      throw TensorError("concat_channels: shape mismatch " +
                        detail::shape_str(a.shape()) + " vs " +
                        detail::shape_str(b.shape()));
  int B = a.rank() == 4 ? a.dim(0) : 1;
  int Ca = a.dim(caxis), Cb = b.dim(caxis);
  std::size_t hw = static_cast<std::size_t>(a.dim(caxis + 1)) * a.dim(caxis + 2);
  std::vector<T> v(static_cast<std::size_t>(B) * (Ca + Cb) * hw);
  for (int bi = 0; bi < B; ++bi) {
    std::copy(a.values().begin() + static_cast<std::size_t>(bi) * Ca * hw,
              a.values().begin() + static_cast<std::size_t>(bi + 1) * Ca * hw,
              v.begin() + static_cast<std::size_t>(bi) * (Ca + Cb) * hw);
    std::copy(b.values().begin() + static_cast<std::size_t>(bi) * Cb * hw,
              b.values().begin() + static_cast<std::size_t>(bi + 1) * Cb * hw,
              v.begin() + static_cast<std::size_t>(bi) * (Ca + Cb) * hw + Ca * hw);
  }
  std::vector<int> shape = a.shape();
  shape[static_cast<std::size_t>(caxis)] = Ca + Cb;
  auto an = a.node(), bn = b.node();
  return detail::make_op<T>(std::move(shape), std::move(v), {a, b},
                            [an, bn, B, Ca, Cb, hw](detail::Node<T>& out) {
                              for (int bi = 0; bi < B; ++bi) {
                                std::size_t base = static_cast<std::size_t>(bi) * (Ca + Cb) * hw;
                                if (an->requires_grad) {
                                  an->ensure_grad();
                                  for (std::size_t i = 0; i < Ca * hw; ++i)
                                    an->grad[static_cast<std::size_t>(bi) * Ca * hw + i] +=
                                        out.grad[base + i];
                                }
                                if (bn->requires_grad) {
                                  bn->ensure_grad();
                                  for (std::size_t i = 0; i < Cb * hw; ++i)
                                    bn->grad[static_cast<std::size_t>(bi) * Cb * hw + i] +=
                                        out.grad[base + Ca * hw + i];
                                }
                              }
                            });
}

// gather rows of an N x D tensor; backward scatters
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& a, const std::vector<int>& idx) {
  if (a.rank() != 2) throw TensorError("gather_rows: expected rank-2 tensor");
  int d = a.dim(1);
  std::vector<T> v(idx.size() * d);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] < 0 || idx[k] >= a.dim(0))
      throw TensorError("gather_rows: index out of range");
    std::copy(a.values().begin() + idx[k] * d, a.values().begin() + (idx[k] + 1) * d,
              v.begin() + k * d);
  }
  auto an = a.node();
  return detail::make_op<T>({static_cast<int>(idx.size()), d}, std::move(v), {a},
                            [an, idx, d](detail::Node<T>& out) {
                              an->ensure_grad();
                              for (std::size_t k = 0; k < idx.size(); ++k)
                                for (int j = 0; j < d; ++j)
                                  an->grad[idx[k] * d + j] += out.grad[k * d + j];
                            });
}

// stack two length-N vectors as columns of an N x 2 tensor
template <typename T>
Tensor<T> stack_cols2(const Tensor<T>& x, const Tensor<T>& y) {
  if (x.rank() != 1 || y.rank() != 1 || x.dim(0) != y.dim(0))
    throw TensorError("stack_cols2: expected two equal-length rank-1 tensors");
  int n = x.dim(0);
  std::vector<T> v(static_cast<std::size_t>(n) * 2);
  for (int i = 0; i < n; ++i) {
    v[2 * i] = x.values()[i];
    v[2 * i + 1] = y.values()[i];
  }
  auto xn = x.node(), yn = y.node();
  return detail::make_op<T>({n, 2}, std::move(v), {x, y},
                            [xn, yn, n](detail::Node<T>& out) {
                              if (xn->requires_grad) {
                                xn->ensure_grad();
                                for (int i = 0; i < n; ++i)
                                  xn->grad[i] += out.grad[2 * i];
                              }
                              if (yn->requires_grad) {
                                yn->ensure_grad();
                                for (int i = 0; i < n; ++i)
                                  yn->grad[i] += out.grad[2 * i + 1];
                              }
                            });
}

// row-concatenate two rank-2 tensors with matching column count
template <typename T>
Tensor<T> concat_rows(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
    throw TensorError("concat_rows: expected rank-2 tensors with equal columns");
  int d = a.dim(1);
  std::size_t na = a.size(), nb = b.size();
  std::vector<T> v(na + nb);
  std::copy(a.values().begin(), a.values().end(), v.begin());
  std::copy(b.values().begin(), b.values().end(), v.begin() + static_cast<std::ptrdiff_t>(na));
  auto an = a.node(), bn = b.node();
  return detail::make_op<T>({a.dim(0) + b.dim(0), d}, std::move(v), {a, b},
                            [an, bn, na, nb](detail::Node<T>& out) {
                              if (an->requires_grad) {
                                an->ensure_grad();
                                for (std::size_t i = 0; i < na; ++i)
                                  an->grad[i] += out.grad[i];
                              }
                              if (bn->requires_grad) {
                                bn->ensure_grad();
                                for (std::size_t i = 0; i < nb; ++i)
                                  bn->grad[i] += out.grad[na + i];
                              }
                            });
}

// per-channel affine y = x * scale[c] + shift[c] on [C,H,W] / [B,C,H,W];
// coefficients are constants (used for input normalization)
template <typename T>
Tensor<T> channel_affine(const Tensor<T>& a, const std::vector<T>& sc,
                         const std::vector<T>& sh) {
  if (a.rank() != 3 && a.rank() != 4)
    throw TensorError("channel_affine: expected rank 3 or 4");
  int caxis = a.rank() - 3;
  int C = a.dim(caxis);
  if (static_cast<int>(sc.size()) != C || static_cast<int>(sh.size()) != C)
    throw TensorError("channel_affine: coefficient count " +
                      std::to_string(sc.size()) + " != channels " + std::to_string(C));
  int B = a.rank() == 4 ? a.dim(0) : 1;
  std::size_t hw = static_cast<std::size_t>(a.dim(caxis + 1)) * a.dim(caxis + 2);
  std::vector<T> v(a.size());
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      std::size_t base = (static_cast<std::size_t>(b) * C + c) * hw;
      for (std::size_t i = 0; i < hw; ++i)
        v[base + i] = a.values()[base + i] * sc[c] + sh[c];
    }
  auto an = a.node();
  return detail::make_op<T>(a.shape(), std::move(v), {a},
                            [an, sc, B, C, hw](detail::Node<T>& out) {
                              an->ensure_grad();
                              for (int b = 0; b < B; ++b)
                                for (int c = 0; c < C; ++c) {
                                  std::size_t base = (static_cast<std::size_t>(b) * C + c) * hw;
                                  for (std::size_t i = 0; i < hw; ++i)
                                    an->grad[base + i] += out.grad[base + i] * sc[c];
                                }
                            });
}

// reverse the width (last) axis of [C,H,W] / [B,C,H,W] and multiply channel c
// by sign[c] (+-1 for x-mirror of a vector field). Involution; the backward
// pass is the same mirror applied to the gradient.
template <typename T>
Tensor<T> mirror_x(const Tensor<T>& a, const std::vector<T>& sign) {
  if (a.rank() != 3 && a.rank() != 4)
    throw TensorError("mirror_x: expected rank 3 or 4");
  int caxis = a.rank() - 3;
  int C = a.dim(caxis);
  if (static_cast<int>(sign.size()) != C)
    throw TensorError("mirror_x: sign count " + std::to_string(sign.size()) +
                      " != channels " + std::to_string(C));
  int B = a.rank() == 4 ? a.dim(0) : 1;
  int H = a.dim(caxis + 1), W = a.dim(caxis + 2);
  std::vector<T> v(a.size());
  auto apply = [B, C, H, W, sign](const std::vector<T>& src, std::vector<T>& dst,
                                  bool accumulate) {
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c)
        for (int h = 0; h < H; ++h) {
          std::size_t row = ((static_cast<std::size_t>(b) * C + c) * H + h) *
                            static_cast<std::size_t>(W);
          for (int w = 0; w < W; ++w) {
            T val = src[row + static_cast<std::size_t>(W - 1 - w)] * sign[static_cast<std::size_t>(c)];
            if (accumulate) dst[row + w] += val;
            else dst[row + w] = val;
          }
        }
  };
  apply(a.values(), v, false);
  auto an = a.node();
  return detail::make_op<T>(a.shape(), std::move(v), {a},
                            [an, apply](detail::Node<T>& out) {
                              an->ensure_grad();
                              apply(out.grad, an->grad, true);
                            });
}

}  // namespace nmpm
