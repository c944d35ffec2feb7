#include "dsts/graph.hpp"

#include <atomic>

#include "dsts/common.hpp"

namespace dsts {

namespace {
std::atomic<uint32_t> g_next_gid{1};
}

Graph::Graph(bool record) : gid_(g_next_gid.fetch_add(1)), record_(record) {}

void Graph::check(Var v) const {
  if (!v.ok() || v.gid != gid_ || v.idx >= static_cast<int32_t>(nodes_.size()))
    throw ConfigError("Var does not belong to this graph (detached or stale handle)");
}

Graph::Node& Graph::node(Var v) {
  check(v);
  return nodes_[static_cast<size_t>(v.idx)];
}

const Graph::Node& Graph::node(Var v) const {
  check(v);
  return nodes_[static_cast<size_t>(v.idx)];
}

Var Graph::leaf(Tensor value, bool requires_grad) {
  if (value.empty()) throw ConfigError("graph leaf from empty tensor");
  Node n;
  n.value = std::move(value);
  n.requires_grad = record_ && requires_grad;
  n.is_leaf = true;
  nodes_.push_back(std::move(n));
  return {static_cast<int32_t>(nodes_.size() - 1), gid_};
}

Var Graph::param(Param& p) {
  auto it = param_vars_.find(&p);
  if (it != param_vars_.end()) return {it->second, gid_};
  Var v = leaf(p.value, p.trainable);
  param_vars_.emplace(&p, v.idx);
  return v;
}

const Tensor& Graph::value(Var v) const { return node(v).value; }

bool Graph::needs_grad(Var v) const { return node(v).requires_grad; }

const Tensor& Graph::grad(Var v) const {
  const Node& n = node(v);
  if (n.grad.empty())
    throw ConfigError("no gradient on this Var (not a requires-grad leaf, or backward not run)");
  return n.grad;
}

bool Graph::has_grad(Var v) const { return !node(v).grad.empty(); }

void Graph::zero_grads() {
  for (auto& n : nodes_) n.grad = Tensor();
}

Tensor& Graph::Sweep::accum(Var v) {
  g.check(v);
  Tensor& t = grads[static_cast<size_t>(v.idx)];
  if (t.empty()) t = Tensor::zeros(g.value(v).shape());
  return t;
}

Var Graph::emit(Tensor value, std::initializer_list<Var> parents) {
  if (value.empty()) throw ConfigError("graph op produced empty tensor");
  Node n;
  n.value = std::move(value);
  if (record_)
    for (Var p : parents)
      if (node(p).requires_grad) {
        n.requires_grad = true;
        break;
      }
  nodes_.push_back(std::move(n));
  return {static_cast<int32_t>(nodes_.size() - 1), gid_};
}

bool Graph::tracks(Var v) const {
  const Node& n = node(v);
  return record_ && n.requires_grad && !n.is_leaf;
}

void Graph::set_back(Var v, BackFn fn) {
  if (!tracks(v)) return;
  node(v).back = std::move(fn);
}

void Graph::backward(Var loss) {
  if (!record_) throw ConfigError("backward on a non-recording graph");
  const Node& ln = node(loss);
  if (ln.value.numel() != 1)
    throw ConfigError("backward requires a scalar loss, got shape " + ln.value.shape_str());

  Sweep sweep(*this);
  sweep.grads.resize(nodes_.size());
  sweep.grads[static_cast<size_t>(loss.idx)] = Tensor::full({1}, 1.0f);

  for (int32_t i = loss.idx; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    Tensor& up = sweep.grads[static_cast<size_t>(i)];
    if (up.empty()) continue;  // not on a path to the loss
    if (n.back) n.back(sweep, up);
  }

  // Fold sweep results into persistent leaf gradients.
  for (size_t i = 0; i < nodes_.size(); ++i) {
    Node& n = nodes_[i];
    if (!n.is_leaf || !n.requires_grad) continue;
    Tensor& contribution = sweep.grads[i];
    if (contribution.empty()) continue;
    if (n.grad.empty()) {
      n.grad = std::move(contribution);
    } else {
      for (int64_t k = 0; k < n.grad.numel(); ++k) n.grad[k] += contribution[k];
    }
  }
}

}  // namespace dsts
