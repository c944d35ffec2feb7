#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "dsts/tensor.hpp"

namespace dsts {

// Named model parameter. Non-trainable parameters (batch-norm running
// statistics) live in the same groups but receive no gradients.
struct Param {
  std::string name;
  Tensor value;
  bool trainable = true;
};

// Handle into one Graph. The graph id makes cross-graph use a hard error
// instead of silent garbage.
struct Var {
  int32_t idx = -1;
  uint32_t gid = 0;
  bool ok() const { return idx >= 0; }
};

// Reverse-mode tape. Operations append nodes in evaluation order; backward
// replays closures in reverse. One graph per training iteration, built
// fresh; a non-recording graph runs the same ops forward-only (eval mode)
// and stores no closures.
//
// Not thread-safe; a graph is confined to the thread that builds it.
class Graph {
 public:
  explicit Graph(bool record = true);
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return record_; }
  int nodes() const { return static_cast<int>(nodes_.size()); }

  Var leaf(Tensor value, bool requires_grad = false);
  // Binds a parameter; repeated binds of the same Param return the same Var,
  // so gradients from every use accumulate in one place.
  Var param(Param& p);

  const Tensor& value(Var v) const;
  // True when gradients flow to/through v (always false when not recording).
  bool needs_grad(Var v) const;
  // Accumulated gradient of a requires-grad leaf; throws if absent.
  const Tensor& grad(Var v) const;
  bool has_grad(Var v) const;
  void zero_grads();

  // Scratch buffers for one backward sweep, indexed like the tape.
  struct Sweep {
    explicit Sweep(Graph& graph) : g(graph) {}
    Graph& g;
    std::vector<Tensor> grads;
    // Zero-initialized on first touch.
    Tensor& accum(Var v);
    bool needs(Var v) const { return v.ok() && g.node(v).requires_grad; }
  };
  using BackFn = std::function<void(Sweep&, const Tensor& upstream)>;

  // Appends a node. `parents` are consulted only for requires-grad
  // propagation; closures capture the Vars they need themselves.
  Var emit(Tensor value, std::initializer_list<Var> parents);
  // Attaches the backward closure; no-op unless tracks(v).
  void set_back(Var v, BackFn fn);
  // True when a backward closure would run for v.
  bool tracks(Var v) const;

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape once, accumulating into
  // leaf gradients. `loss` must be scalar. Repeated calls keep accumulating.
  void backward(Var loss);

 private:
  struct Node {
    Tensor value;
    Tensor grad;  // leaves only, allocated on first accumulation
    BackFn back;
    bool requires_grad = false;
    bool is_leaf = false;
  };

  Node& node(Var v);
  const Node& node(Var v) const;
  void check(Var v) const;

  std::vector<Node> nodes_;
  std::unordered_map<const Param*, int32_t> param_vars_;
  uint32_t gid_;
  bool record_;
};

}  // namespace dsts
