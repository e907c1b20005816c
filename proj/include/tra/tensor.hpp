#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "tra/common.hpp"
#include "tra/rng.hpp"

namespace tra {

inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_enabled_flag()) { grad_enabled_flag() = false; }
  ~NoGradGuard() { grad_enabled_flag() = prev; }
};

template <class T>
struct TensorT;

// One tape entry: the producing op's parents plus a closure that routes the
// output gradient into them.
template <class T>
struct NodeT {
  const char* op = "";
  std::vector<TensorT<T>> parents;
  std::function<void(TensorT<T>&)> backward;
};

// Dense row-major array with an optional gradient buffer. Copies are shallow:
// they share storage, so parameters can sit both in a model's registry and in
// tape nodes.
template <class T>
struct TensorT {
  std::vector<int> shape;
  std::shared_ptr<std::vector<T>> data;
  std::shared_ptr<std::vector<T>> grad;
  bool requires_grad = false;
  std::shared_ptr<NodeT<T>> node;

  TensorT() = default;

  static TensorT zeros(std::vector<int> shape, bool requires_grad = false) {
    TensorT t;
    t.shape = std::move(shape);
    t.data = std::make_shared<std::vector<T>>(shape_numel(t.shape), T(0));
    if (requires_grad && grad_enabled_flag()) t.req_grad();
    return t;
  }

  static TensorT full(std::vector<int> shape, T value, bool requires_grad = false) {
    TensorT t = zeros(std::move(shape), requires_grad);
    std::fill(t.data->begin(), t.data->end(), value);
    return t;
  }

  static TensorT from(std::vector<int> shape, std::vector<T> values, bool requires_grad = false) {
    if (shape_numel(shape) != values.size())
      throw ConfigError("tensor init: shape " + shape_str(shape) + " does not match " +
                        std::to_string(values.size()) + " values");
    TensorT t;
    t.shape = std::move(shape);
    t.data = std::make_shared<std::vector<T>>(std::move(values));
    if (requires_grad && grad_enabled_flag()) t.req_grad();
    return t;
  }

  static TensorT randn(std::vector<int> shape, Rng& rng, T stddev, bool requires_grad = false) {
    TensorT t = zeros(std::move(shape), requires_grad);
    for (auto& v : *t.data) v = stddev * static_cast<T>(rng.next_normal());
    return t;
  }

  std::size_t numel() const { return data ? data->size() : 0; }
  bool defined() const { return static_cast<bool>(data); }
  int dim(int i) const { return shape[i < 0 ? shape.size() + i : i]; }

  T* ptr() { return data->data(); }
  const T* ptr() const { return data->data(); }

  void ensure_grad() {
    if (!grad) grad = std::make_shared<std::vector<T>>(numel(), T(0));
  }
  // Copies share storage, so the grad buffer must exist before a tensor is
  // copied into the registry or onto the tape; late allocation would leave
  // earlier copies pointing at nothing.
  TensorT& req_grad() {
    requires_grad = true;
    ensure_grad();
    return *this;
  }
  void zero_grad() {
    if (grad) std::fill(grad->begin(), grad->end(), T(0));
  }
  T* gptr() {
    ensure_grad();
    return grad->data();
  }

  T item() const {
    if (numel() != 1) throw ConfigError("item() on tensor of shape " + shape_str(shape));
    return (*data)[0];
  }

  // Reverse-mode sweep from a scalar. Topological order over the tape, then
  // each node scatters its output grad into its parents.
  void backward() {
    if (numel() != 1) throw ConfigError("backward() requires a scalar loss");
    if (!requires_grad) throw ConfigError("backward() on a tensor without requires_grad");
    ensure_grad();
    (*grad)[0] = T(1);

    std::vector<TensorT<T>> order;
    std::unordered_set<NodeT<T>*> seen;
    // Iterative DFS; emits children before parents so `order` ends up
    // topologically sorted from leaves to loss.
    std::vector<std::pair<TensorT<T>, std::size_t>> path;
    path.emplace_back(*this, 0);
    while (!path.empty()) {
      auto& [t, next] = path.back();
      if (!t.node || seen.count(t.node.get())) {
        path.pop_back();
        continue;
      }
      if (next < t.node->parents.size()) {
        auto& p = t.node->parents[next++];
        if (p.node && !seen.count(p.node.get())) path.emplace_back(p, 0);
      } else {
        seen.insert(t.node.get());
        order.push_back(t);
        path.pop_back();
      }
    }
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      if (it->node->backward) {
        it->ensure_grad();
        it->node->backward(*it);
      }
    }
  }
};

using Tensor = TensorT<float>;
using DTensor = TensorT<double>;

// Tape helper: wires up a node when gradients are live.
template <class T>
void attach_node(TensorT<T>& out, const char* op, std::vector<TensorT<T>> parents,
                 std::function<void(TensorT<T>&)> backward) {
  bool track = grad_enabled_flag() &&
               std::any_of(parents.begin(), parents.end(),
                           [](const TensorT<T>& p) { return p.requires_grad; });
  if (!track) return;
  out.req_grad();
  out.node = std::make_shared<NodeT<T>>();
  out.node->op = op;
  out.node->parents = std::move(parents);
  out.node->backward = std::move(backward);
}

}  // namespace tra
