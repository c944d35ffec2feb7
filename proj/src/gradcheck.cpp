#include "dsts/gradcheck.hpp"

#include <cmath>
#include <cstdio>
#include <unordered_set>

#include "dsts/common.hpp"
#include "dsts/networks.hpp"
#include "dsts/ops.hpp"
#include "dsts/trainer.hpp"
#include "ref64.hpp"

namespace dsts {

GradCheckResult run_gradcheck(const GradCheck& check, Rng& rng) {
  if (!check.analytic || !check.forward) throw ConfigError("gradcheck: missing callbacks");
  if (check.inputs.empty()) throw ConfigError("gradcheck: no inputs");

  GradCheckResult res;
  res.name = check.name;
  res.pass = true;

  std::vector<Tensor> grads;
  check.analytic(check.inputs, grads);
  if (grads.size() != check.inputs.size())
    throw ConfigError("gradcheck " + check.name + ": analytic returned " +
                      std::to_string(grads.size()) + " gradients for " +
                      std::to_string(check.inputs.size()) + " inputs");

  std::vector<Tensor> work = check.inputs;
  for (size_t i = 0; i < work.size(); ++i) {
    int64_t n = work[i].numel();
    std::vector<int64_t> coords;
    if (n <= check.max_coords) {
      for (int64_t c = 0; c < n; ++c) coords.push_back(c);
    } else {
      std::unordered_set<int64_t> seen;
      while (static_cast<int>(coords.size()) < check.max_coords) {
        int64_t c = rng.uniform_int(0, n);
        if (seen.insert(c).second) coords.push_back(c);
      }
    }
    const Tensor& gi = grads[i];
    if (!gi.empty() && !gi.same_shape(work[i]))
      throw ConfigError("gradcheck " + check.name + ": gradient shape mismatch on input " +
                        std::to_string(i));

    float* d = work[i].data();
    for (int64_t c : coords) {
      float orig = d[c];
      float hi = orig + check.step, lo = orig - check.step;
      d[c] = hi;
      double fp = check.forward(work);
      d[c] = lo;
      double fm = check.forward(work);
      d[c] = orig;

      // Divide by the step that float storage actually realized; at small
      // steps the rounding of orig +/- step would otherwise skew the quotient.
      double numeric = (fp - fm) / (static_cast<double>(hi) - static_cast<double>(lo));
      double analytic = gi.empty() ? 0.0 : static_cast<double>(gi[c]);
      double abs_err = std::fabs(analytic - numeric);
      double mag = std::max(std::fabs(analytic), std::fabs(numeric));
      double rel_err = abs_err / std::max(mag, 1e-12);
      bool ok = abs_err <= check.abs_tol + check.rel_tol * mag;

      ++res.coords_checked;
      if (abs_err > res.worst_abs_err || (!ok && res.pass)) {
        res.worst_abs_err = static_cast<float>(abs_err);
        res.worst_rel_err = static_cast<float>(rel_err);
        char buf[160];
        std::snprintf(buf, sizeof(buf), "input %zu [%lld]: analytic %.6g numeric %.6g",
                      i, static_cast<long long>(c), analytic, numeric);
        res.detail = buf;
      }
      if (!ok) res.pass = false;
    }
  }
  return res;
}

namespace {

Tensor randu(Rng& rng, std::vector<int> shape, float lo, float hi) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = lo + (hi - lo) * rng.next_float();
  return t;
}

// Pushes every value at least `margin` away from `at` so a finite-difference
// probe cannot straddle the kink.
void nudge_away(Tensor& t, float at, float margin) {
  for (int64_t i = 0; i < t.numel(); ++i)
    if (std::fabs(t[i] - at) < margin) t[i] = at + (t[i] >= at ? margin : -margin);
}

using BuildFn = std::function<Var(Graph&, const std::vector<Var>&)>;

GradCheck op_check(std::string name, std::vector<Tensor> inputs, BuildFn build) {
  GradCheck c;
  c.name = std::move(name);
  c.inputs = std::move(inputs);
  c.analytic = [build](const std::vector<Tensor>& in, std::vector<Tensor>& grads) {
    Graph g(true);
    std::vector<Var> vars;
    vars.reserve(in.size());
    for (const Tensor& t : in) vars.push_back(g.leaf(t, true));
    Var loss = build(g, vars);
    float value = g.value(loss)[0];
    g.backward(loss);
    grads.clear();
    for (size_t i = 0; i < in.size(); ++i)
      grads.push_back(g.has_grad(vars[i]) ? g.grad(vars[i]) : Tensor::zeros(in[i].shape()));
    return value;
  };
  c.forward = [build](const std::vector<Tensor>& in) {
    Graph g(false);
    std::vector<Var> vars;
    vars.reserve(in.size());
    for (const Tensor& t : in) vars.push_back(g.leaf(t, true));
    return g.value(build(g, vars))[0];
  };
  return c;
}

// Scalar head: sum(out * R) with R a fixed random tensor, so every output
// coordinate influences the loss with a distinct weight.
Var head(Graph& g, Var out, const Tensor& r) {
  return sum_all(g, mul(g, out, g.leaf(r)));
}

GradCheck objective_check(uint64_t seed) {
  ArchDesc arch = ArchDesc::micro();
  ModelParams proto = init_model(arch, seed);
  Rng rng = Rng(seed).derive(42);

  int m = 2;
  Tensor x = randu(rng, {m, arch.in_channels, arch.patch, arch.patch}, -0.8f, 0.8f);
  Tensor y = randu(rng, {m, arch.in_channels, arch.patch, arch.patch}, -0.8f, 0.8f);
  Tensor eps_x({m, arch.latent_dim});
  Tensor eps_y({m, arch.latent_dim});
  rng.fill_normal(eps_x.data(), eps_x.numel());
  rng.fill_normal(eps_y.data(), eps_y.numel());
  LossWeights w;

  GradCheck c;
  c.name = "objective_micro";
  // The L1 terms put kinks all over this objective, so the probe step must be
  // far smaller than the typical distance to the nearest kink. Float forwards
  // are pure rounding noise at that scale; the numeric side therefore runs on
  // the double-precision reference and the step can drop to 1e-6.
  c.step = 1e-6f;
  c.abs_tol = 1e-4f;
  c.rel_tol = 1e-2f;
  c.max_coords = 6;
  for (ParamGroup* gp : proto.groups())
    for (Param& p : gp->params)
      if (p.trainable) c.inputs.push_back(p.value);

  auto load = [](ModelParams& mp, const std::vector<Tensor>& in) {
    size_t k = 0;
    for (ParamGroup* gp : mp.groups())
      for (Param& p : gp->params)
        if (p.trainable) p.value = in[k++];
  };
  c.analytic = [proto, x, y, eps_x, eps_y, w, load](const std::vector<Tensor>& in,
                                                    std::vector<Tensor>& grads) {
    ModelParams mp = proto;
    load(mp, in);
    Graph g(true);
    ObjectiveGraph og = build_objective(g, mp, x, y, eps_x, eps_y, w, GanForm::paper, true);
    float value = g.value(og.total)[0];
    // The numeric side runs on the independent double reference; a wiring
    // drift between the two would masquerade as phantom gradient errors, so
    // insist the forwards agree at the base point first.
    double ref = ref64_objective(mp, x, y, eps_x, eps_y, w, GanForm::paper);
    if (std::fabs(ref - static_cast<double>(value)) > 1e-3 * std::max(1.0, std::fabs(ref)))
      throw NumericError("gradcheck objective_micro: float forward " + std::to_string(value) +
                         " disagrees with the double reference " + std::to_string(ref));
    g.backward(og.total);
    grads.clear();
    for (ParamGroup* gp : mp.groups())
      for (Param& p : gp->params)
        if (p.trainable) {
          Var v = g.param(p);
          grads.push_back(g.has_grad(v) ? g.grad(v) : Tensor::zeros(p.value.shape()));
        }
    return value;
  };
  c.forward = [proto, x, y, eps_x, eps_y, w, load](const std::vector<Tensor>& in) {
    ModelParams mp = proto;
    load(mp, in);
    return ref64_objective(mp, x, y, eps_x, eps_y, w, GanForm::paper);
  };
  return c;
}

}  // namespace

std::vector<GradCheckResult> gradcheck_suite(uint64_t seed) {
  Rng root(seed);
  Rng in = root.derive(1);
  std::vector<GradCheck> checks;

  {
    Tensor a = randu(in, {2, 3, 4}, -1, 1), b = randu(in, {2, 3, 4}, -1, 1);
    Tensor r = randu(in, {2, 3, 4}, -1, 1);
    checks.push_back(op_check("add", {a, b}, [r](Graph& g, const std::vector<Var>& v) {
      return head(g, add(g, v[0], v[1]), r);
    }));
    checks.push_back(op_check("sub", {a, b}, [r](Graph& g, const std::vector<Var>& v) {
      return head(g, sub(g, v[0], v[1]), r);
    }));
    checks.push_back(op_check("mul", {a, b}, [r](Graph& g, const std::vector<Var>& v) {
      return head(g, mul(g, v[0], v[1]), r);
    }));
    checks.push_back(op_check("affine_consts", {a}, [r](Graph& g, const std::vector<Var>& v) {
      return head(g, rsub_const(g, 0.9f, add_const(g, scale(g, v[0], 1.7f), 0.3f)), r);
    }));
    checks.push_back(op_check("square", {a}, [r](Graph& g, const std::vector<Var>& v) {
      return head(g, square(g, v[0]), r);
    }));
    checks.push_back(op_check("exp", {a}, [r](Graph& g, const std::vector<Var>& v) {
      return head(g, exp(g, v[0]), r);
    }));
    checks.push_back(op_check("tanh", {a}, [r](Graph& g, const std::vector<Var>& v) {
      return head(g, tanh(g, v[0]), r);
    }));
    checks.push_back(op_check("sigmoid", {a}, [r](Graph& g, const std::vector<Var>& v) {
      return head(g, sigmoid(g, v[0]), r);
    }));
    checks.push_back(op_check("reductions", {a}, [](Graph& g, const std::vector<Var>& v) {
      return add(g, sum_all(g, square(g, v[0])), scale(g, mean_all(g, v[0]), 0.7f));
    }));
    checks.push_back(op_check("reshape", {a}, [r](Graph& g, const std::vector<Var>& v) {
      Tensor rr({4, 6}, std::vector<float>(r.data(), r.data() + r.numel()));
      return head(g, reshape(g, v[0], {4, 6}), rr);
    }));
  }
  {
    Tensor a = randu(in, {2, 3, 4}, -1, 1);
    nudge_away(a, 0.0f, 0.05f);
    Tensor r = randu(in, {2, 3, 4}, -1, 1);
    checks.push_back(op_check("leaky_relu", {a}, [r](Graph& g, const std::vector<Var>& v) {
      return head(g, leaky_relu(g, v[0], 0.2f), r);
    }));
    Tensor b = randu(in, {2, 3, 4}, -1, 1);
    nudge_away(b, -0.5f, 0.05f);
    nudge_away(b, 0.5f, 0.05f);
    checks.push_back(op_check("clamp", {b}, [r](Graph& g, const std::vector<Var>& v) {
      return head(g, clamp(g, v[0], -0.5f, 0.5f), r);
    }));
  }
  {
    Tensor a = randu(in, {2, 2, 3, 3}, -1, 1), b = randu(in, {2, 3, 3, 3}, -1, 1);
    Tensor r = randu(in, {2, 5, 3, 3}, -1, 1);
    checks.push_back(op_check("concat_channels", {a, b}, [r](Graph& g, const std::vector<Var>& v) {
      return head(g, concat_channels(g, v[0], v[1]), r);
    }));
  }
  {
    Tensor a = randu(in, {2, 4}, -1, 1);
    Tensor r = randu(in, {2, 4, 3, 3}, -1, 1);
    checks.push_back(op_check("tile_spatial", {a}, [r](Graph& g, const std::vector<Var>& v) {
      return head(g, tile_spatial(g, v[0], 3, 3), r);
    }));
  }
  {
    Tensor a = randu(in, {2, 3, 4, 4}, -1, 1);
    Tensor r = randu(in, {2, 3}, -1, 1);
    checks.push_back(op_check("spatial_mean", {a}, [r](Graph& g, const std::vector<Var>& v) {
      return head(g, spatial_mean(g, v[0]), r);
    }));
  }
  {
    Tensor x = randu(in, {3, 4}, -1, 1), w = randu(in, {4, 5}, -0.7f, 0.7f);
    Tensor b = randu(in, {5}, -0.3f, 0.3f);
    Tensor r = randu(in, {3, 5}, -1, 1);
    checks.push_back(op_check("fully_connected", {x, w, b}, [r](Graph& g, const std::vector<Var>& v) {
      return head(g, fully_connected(g, v[0], v[1], v[2]), r);
    }));
  }
  {
    Tensor x = randu(in, {2, 3, 5, 5}, -1, 1), w = randu(in, {4, 3, 3, 3}, -0.5f, 0.5f);
    Tensor b = randu(in, {4}, -0.3f, 0.3f);
    Tensor r = randu(in, {2, 4, 5, 5}, -1, 1);
    checks.push_back(op_check("conv2d_s1", {x, w, b}, [r](Graph& g, const std::vector<Var>& v) {
      return head(g, conv2d(g, v[0], v[1], v[2], 1, 1), r);
    }));
  }
  {
    Tensor x = randu(in, {2, 3, 8, 8}, -1, 1), w = randu(in, {4, 3, 4, 4}, -0.5f, 0.5f);
    Tensor b = randu(in, {4}, -0.3f, 0.3f);
    Tensor r = randu(in, {2, 4, 4, 4}, -1, 1);
    checks.push_back(op_check("conv2d_s2", {x, w, b}, [r](Graph& g, const std::vector<Var>& v) {
      return head(g, conv2d(g, v[0], v[1], v[2], 2, 1), r);
    }));
  }
  {
    Tensor x = randu(in, {2, 4, 3, 3}, -1, 1), w = randu(in, {4, 3, 4, 4}, -0.5f, 0.5f);
    Tensor b = randu(in, {3}, -0.3f, 0.3f);
    Tensor r = randu(in, {2, 3, 6, 6}, -1, 1);
    checks.push_back(op_check("conv_transpose2d", {x, w, b}, [r](Graph& g, const std::vector<Var>& v) {
      return head(g, conv_transpose2d(g, v[0], v[1], v[2], 2, 1), r);
    }));
  }
  {
    Tensor x = randu(in, {2, 3, 4, 4}, -1, 1);
    Tensor gam = randu(in, {3}, 0.5f, 1.5f), bet = randu(in, {3}, -0.5f, 0.5f);
    Tensor r = randu(in, {2, 3, 4, 4}, -1, 1);
    checks.push_back(op_check("batch_norm_train", {x, gam, bet},
                              [r](Graph& g, const std::vector<Var>& v) {
      Tensor rm = Tensor::zeros({3}), rv = Tensor::full({3}, 1.0f);
      return head(g, batch_norm(g, v[0], v[1], v[2], rm, rv, true), r);
    }));
    checks.push_back(op_check("batch_norm_eval", {x, gam, bet},
                              [r](Graph& g, const std::vector<Var>& v) {
      Tensor rm = Tensor::vec({0.1f, -0.2f, 0.3f});
      Tensor rv = Tensor::vec({1.5f, 0.7f, 1.0f});
      return head(g, batch_norm(g, v[0], v[1], v[2], rm, rv, false), r);
    }));
  }
  {
    Tensor a = randu(in, {2, 3, 4}, -1, 1), b = randu(in, {2, 3, 4}, -1, 1);
    // Keep |a - b| off zero, where the L1 derivative jumps.
    for (int64_t i = 0; i < a.numel(); ++i)
      if (std::fabs(a[i] - b[i]) < 0.05f) a[i] = b[i] + (a[i] >= b[i] ? 0.05f : -0.05f);
    checks.push_back(op_check("mean_abs_diff", {a, b}, [](Graph& g, const std::vector<Var>& v) {
      return mean_abs_diff(g, v[0], v[1]);
    }));
  }
  {
    Tensor mean = randu(in, {3, 6}, -1, 1), logvar = randu(in, {3, 6}, -1, 1);
    checks.push_back(op_check("kl_gaussian", {mean, logvar}, [](Graph& g, const std::vector<Var>& v) {
      return kl_gaussian(g, v[0], v[1]);
    }));
    Tensor eps({3, 6});
    in.fill_normal(eps.data(), eps.numel());
    Tensor r = randu(in, {3, 6}, -1, 1);
    checks.push_back(op_check("reparameterize", {mean, logvar},
                              [r, eps](Graph& g, const std::vector<Var>& v) {
      return head(g, reparameterize(g, v[0], v[1], eps), r);
    }));
  }
  {
    Tensor logits = randu(in, {4, 5}, -2, 2);
    std::vector<int> labels = {0, 3, 2, 4};
    checks.push_back(op_check("softmax_xent", {logits}, [labels](Graph& g, const std::vector<Var>& v) {
      return softmax_cross_entropy(g, v[0], labels);
    }));
  }
  checks.push_back(objective_check(seed));

  Rng probe = root.derive(2);
  std::vector<GradCheckResult> out;
  out.reserve(checks.size());
  for (const GradCheck& c : checks) out.push_back(run_gradcheck(c, probe));
  return out;
}

}  // namespace dsts
