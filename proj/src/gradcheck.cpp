#include "tabrec/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "tabrec/losses.hpp"

namespace tabrec {

GradCheckResult finite_diff_check(
    const std::function<double(const std::vector<double>&)>& f,
    const std::vector<double>& theta, const std::vector<double>& analytic,
    int max_coords, Rng& rng, const std::string& label, double h_scale) {
  GradCheckResult res;
  const int n = static_cast<int>(theta.size());
  std::vector<int> coords(n);
  for (int i = 0; i < n; ++i) coords[i] = i;
  if (max_coords > 0 && n > max_coords) {
    rng.shuffle(coords.begin(), coords.end());
    coords.resize(max_coords);
    std::sort(coords.begin(), coords.end());
  }
  // Coordinates whose gradient is orders of magnitude below the largest
  // gradient of the objective sit under the central-difference noise floor
  // (eps*|f|/h); judge them on an absolute scale tied to that largest
  // gradient instead of a raw ratio.
  double gmax = 1.0;
  for (double a : analytic) gmax = std::max(gmax, std::abs(a));
  const double floor = 1e-4 * gmax;
  std::vector<double> work = theta;
  for (int i : coords) {
    const double h = h_scale * std::max(1.0, std::abs(theta[i]));
    work[i] = theta[i] + h;
    const double fp = f(work);
    work[i] = theta[i] - h;
    const double fm = f(work);
    work[i] = theta[i];
    const double num = (fp - fm) / (2.0 * h);
    const double ana = analytic[i];
    const double denom = std::max({std::abs(num), std::abs(ana), floor});
    const double rel = std::abs(num - ana) / denom;
    if (rel > res.max_rel_err) {
      res.max_rel_err = rel;
      res.worst = label + "[" + std::to_string(i) + "] analytic=" +
                  std::to_string(ana) + " numeric=" + std::to_string(num);
    }
    ++res.checked;
  }
  return res;
}

GradCheckResult check_build(const BuildFn& build,
                            std::vector<Array<double>> inputs, int max_coords,
                            Rng& rng, const std::string& label,
                            double h_scale) {
  // Flatten all inputs into one theta vector.
  std::vector<double> theta;
  std::vector<size_t> offsets;
  for (const auto& a : inputs) {
    offsets.push_back(theta.size());
    theta.insert(theta.end(), a.v.begin(), a.v.end());
  }

  auto eval = [&](const std::vector<double>& th, Graph<double>* keep_graph,
                  std::vector<Tensor<double>>* keep_leaves) -> double {
    Graph<double> local;
    Graph<double>& g = keep_graph ? *keep_graph : local;
    g.recording = keep_graph != nullptr;
    std::vector<Tensor<double>> leaves;
    for (size_t k = 0; k < inputs.size(); ++k) {
      Array<double> a = inputs[k];
      std::copy(th.begin() + offsets[k],
                th.begin() + offsets[k] + a.v.size(), a.v.begin());
      leaves.push_back(leaf(g, std::move(a), true));
    }
    Tensor<double> loss = build(g, leaves);
    if (keep_leaves) *keep_leaves = leaves;
    if (keep_graph) backward(loss);
    return loss.item();
  };

  Graph<double> g0;
  std::vector<Tensor<double>> leaves0;
  eval(theta, &g0, &leaves0);
  std::vector<double> analytic;
  for (auto& lf : leaves0) {
    Array<double> gr = lf.grad();
    analytic.insert(analytic.end(), gr.v.begin(), gr.v.end());
  }

  auto f = [&](const std::vector<double>& th) {
    return eval(th, nullptr, nullptr);
  };
  return finite_diff_check(f, theta, analytic, max_coords, rng, label,
                           h_scale);
}

namespace {

Array<double> randn(Rng& rng, std::vector<int> shape, double scale = 1.0) {
  Array<double> a(std::move(shape));
  for (double& x : a.v) x = rng.normal() * scale;
  return a;
}

Array<double> rand_binary(Rng& rng, std::vector<int> shape, double p = 0.3) {
  Array<double> a(std::move(shape));
  for (double& x : a.v) x = rng.bernoulli(p) ? 1.0 : 0.0;
  return a;
}

// Random weighted sum turns any op output into a scalar objective that
// exercises every output element. The weights are derived from a fixed seed
// so repeated builds of the same objective agree.
Tensor<double> weigh(Tensor<double> y, uint64_t wseed) {
  Rng wr(wseed);
  Array<double> w(y.val().shape);
  for (double& x : w.v) x = wr.normal();
  return dot_const(y, std::move(w));
}

using OpCheckFn = std::function<GradCheckResult(Rng&)>;

std::map<std::string, OpCheckFn> make_registry() {
  std::map<std::string, OpCheckFn> reg;

  auto dims = [](Rng& rng) {
    return std::pair<int, int>{rng.uniform_int(1, 5), rng.uniform_int(1, 6)};
  };

  reg["matmul"] = [dims](Rng& rng) {
    auto [m, k] = dims(rng);
    int n = rng.uniform_int(1, 6);
    uint64_t ws = rng.next_u64();
    return check_build(
        [ws](Graph<double>&, const std::vector<Tensor<double>>& in) {
          return weigh(matmul(in[0], in[1]), ws);
        },
        {randn(rng, {m, k}), randn(rng, {k, n})}, 0, rng, "matmul");
  };
  reg["transpose"] = [dims](Rng& rng) {
    auto [m, n] = dims(rng);
    uint64_t ws = rng.next_u64();
    return check_build(
        [ws](Graph<double>&, const std::vector<Tensor<double>>& in) {
          return weigh(transpose(in[0]), ws);
        },
        {randn(rng, {m, n})}, 0, rng, "transpose");
  };
  reg["add"] = [dims](Rng& rng) {
    auto [m, n] = dims(rng);
    int kind = rng.uniform_int(0, 2);
    std::vector<int> bshape = kind == 0 ? std::vector<int>{m, n}
                              : kind == 1 ? std::vector<int>{n}
                                          : std::vector<int>{1};
    uint64_t ws = rng.next_u64();
    return check_build(
        [ws](Graph<double>&, const std::vector<Tensor<double>>& in) {
          return weigh(add(in[0], in[1]), ws);
        },
        {randn(rng, {m, n}), randn(rng, bshape)}, 0, rng, "add");
  };
  reg["mul"] = [dims](Rng& rng) {
    auto [m, n] = dims(rng);
    int kind = rng.uniform_int(0, 2);
    std::vector<int> bshape = kind == 0 ? std::vector<int>{m, n}
                              : kind == 1 ? std::vector<int>{n}
                                          : std::vector<int>{1};
    uint64_t ws = rng.next_u64();
    return check_build(
        [ws](Graph<double>&, const std::vector<Tensor<double>>& in) {
          return weigh(mul(in[0], in[1]), ws);
        },
        {randn(rng, {m, n}), randn(rng, bshape)}, 0, rng, "mul");
  };
  reg["scale"] = [dims](Rng& rng) {
    auto [m, n] = dims(rng);
    double c = rng.normal();
    uint64_t ws = rng.next_u64();
    return check_build(
        [ws, c](Graph<double>&, const std::vector<Tensor<double>>& in) {
          return weigh(scale(in[0], c), ws);
        },
        {randn(rng, {m, n})}, 0, rng, "scale");
  };
  reg["sigmoid"] = [dims](Rng& rng) {
    auto [m, n] = dims(rng);
    uint64_t ws = rng.next_u64();
    return check_build(
        [ws](Graph<double>&, const std::vector<Tensor<double>>& in) {
          return weigh(sigmoid(in[0]), ws);
        },
        {randn(rng, {m, n})}, 0, rng, "sigmoid");
  };
  reg["exp"] = [dims](Rng& rng) {
    auto [m, n] = dims(rng);
    uint64_t ws = rng.next_u64();
    return check_build(
        [ws](Graph<double>&, const std::vector<Tensor<double>>& in) {
          return weigh(exp_op(in[0]), ws);
        },
        {randn(rng, {m, n})}, 0, rng, "exp");
  };
  reg["log"] = [dims](Rng& rng) {
    auto [m, n] = dims(rng);
    Array<double> x = randn(rng, {m, n});
    for (double& v : x.v) v = std::abs(v) + 0.5;
    uint64_t ws = rng.next_u64();
    return check_build(
        [ws](Graph<double>&, const std::vector<Tensor<double>>& in) {
          return weigh(log_op(in[0]), ws);
        },
        {std::move(x)}, 0, rng, "log");
  };
  reg["softplus"] = [dims](Rng& rng) {
    auto [m, n] = dims(rng);
    uint64_t ws = rng.next_u64();
    return check_build(
        [ws](Graph<double>&, const std::vector<Tensor<double>>& in) {
          return weigh(softplus(in[0]), ws);
        },
        {randn(rng, {m, n}, 3.0)}, 0, rng, "softplus");
  };
  reg["gelu"] = [dims](Rng& rng) {
    auto [m, n] = dims(rng);
    uint64_t ws = rng.next_u64();
    return check_build(
        [ws](Graph<double>&, const std::vector<Tensor<double>>& in) {
          return weigh(gelu(in[0]), ws);
        },
        {randn(rng, {m, n})}, 0, rng, "gelu");
  };
  reg["softmax"] = [dims](Rng& rng) {
    auto [m, n] = dims(rng);
    uint64_t ws = rng.next_u64();
    return check_build(
        [ws](Graph<double>&, const std::vector<Tensor<double>>& in) {
          return weigh(softmax_rows(in[0]), ws);
        },
        {randn(rng, {m, n}, 2.0)}, 0, rng, "softmax");
  };
  reg["log_softmax"] = [dims](Rng& rng) {
    auto [m, n] = dims(rng);
    uint64_t ws = rng.next_u64();
    return check_build(
        [ws](Graph<double>&, const std::vector<Tensor<double>>& in) {
          return weigh(log_softmax_rows(in[0]), ws);
        },
        {randn(rng, {m, n}, 2.0)}, 0, rng, "log_softmax");
  };
  reg["layer_norm"] = [dims](Rng& rng) {
    auto [m, n] = dims(rng);
    n += 1;  // avoid width-1 rows where variance is identically zero
    uint64_t ws = rng.next_u64();
    return check_build(
        [ws](Graph<double>&, const std::vector<Tensor<double>>& in) {
          return weigh(layer_norm_rows(in[0], in[1], in[2]), ws);
        },
        {randn(rng, {m, n}), randn(rng, {n}), randn(rng, {n})}, 0, rng,
        "layer_norm");
  };
  reg["embed"] = [dims](Rng& rng) {
    auto [v, d] = dims(rng);
    v += 2;
    int t = rng.uniform_int(1, 6);
    std::vector<int> ids(t);
    for (int& i : ids) i = rng.uniform_int(0, v - 1);
    uint64_t ws = rng.next_u64();
    return check_build(
        [ws, ids](Graph<double>&, const std::vector<Tensor<double>>& in) {
          return weigh(embed(in[0], ids), ws);
        },
        {randn(rng, {v, d})}, 0, rng, "embed");
  };
  reg["slice_rows"] = [dims](Rng& rng) {
    auto [m, n] = dims(rng);
    m += 2;
    int r0 = rng.uniform_int(0, m - 2), r1 = rng.uniform_int(r0 + 1, m);
    uint64_t ws = rng.next_u64();
    return check_build(
        [ws, r0, r1](Graph<double>&,
                     const std::vector<Tensor<double>>& in) {
          return weigh(slice_rows(in[0], r0, r1), ws);
        },
        {randn(rng, {m, n})}, 0, rng, "slice_rows");
  };
  reg["slice_cols"] = [dims](Rng& rng) {
    auto [m, n] = dims(rng);
    n += 2;
    int c0 = rng.uniform_int(0, n - 2), c1 = rng.uniform_int(c0 + 1, n);
    uint64_t ws = rng.next_u64();
    return check_build(
        [ws, c0, c1](Graph<double>&,
                     const std::vector<Tensor<double>>& in) {
          return weigh(slice_cols(in[0], c0, c1), ws);
        },
        {randn(rng, {m, n})}, 0, rng, "slice_cols");
  };
  reg["concat_cols"] = [dims](Rng& rng) {
    auto [m, n1] = dims(rng);
    int n2 = rng.uniform_int(1, 4);
    uint64_t ws = rng.next_u64();
    return check_build(
        [ws](Graph<double>&, const std::vector<Tensor<double>>& in) {
          return weigh(concat_cols<double>({in[0], in[1]}), ws);
        },
        {randn(rng, {m, n1}), randn(rng, {m, n2})}, 0, rng, "concat_cols");
  };
  reg["concat_rows"] = [dims](Rng& rng) {
    auto [m1, n] = dims(rng);
    int m2 = rng.uniform_int(1, 4);
    uint64_t ws = rng.next_u64();
    return check_build(
        [ws](Graph<double>&, const std::vector<Tensor<double>>& in) {
          return weigh(concat_rows<double>({in[0], in[1]}), ws);
        },
        {randn(rng, {m1, n}), randn(rng, {m2, n})}, 0, rng, "concat_rows");
  };
  reg["sum"] = [dims](Rng& rng) {
    auto [m, n] = dims(rng);
    return check_build(
        [](Graph<double>&, const std::vector<Tensor<double>>& in) {
          return sum_all(in[0]);
        },
        {randn(rng, {m, n})}, 0, rng, "sum");
  };
  reg["mean"] = [dims](Rng& rng) {
    auto [m, n] = dims(rng);
    return check_build(
        [](Graph<double>&, const std::vector<Tensor<double>>& in) {
          return mean_all(in[0]);
        },
        {randn(rng, {m, n})}, 0, rng, "mean");
  };
  reg["mean_rows"] = [dims](Rng& rng) {
    auto [m, n] = dims(rng);
    uint64_t ws = rng.next_u64();
    return check_build(
        [ws](Graph<double>&, const std::vector<Tensor<double>>& in) {
          return weigh(mean_rows(in[0]), ws);
        },
        {randn(rng, {m, n})}, 0, rng, "mean_rows");
  };
  reg["select_per_row"] = [dims](Rng& rng) {
    auto [m, n] = dims(rng);
    std::vector<int> ids(m);
    for (int& i : ids) i = rng.uniform_int(0, n - 1);
    uint64_t ws = rng.next_u64();
    return check_build(
        [ws, ids](Graph<double>&, const std::vector<Tensor<double>>& in) {
          return weigh(select_per_row(in[0], ids), ws);
        },
        {randn(rng, {m, n})}, 0, rng, "select_per_row");
  };
  reg["sigmoid_focal"] = [dims](Rng& rng) {
    auto [m, n] = dims(rng);
    double gamma = static_cast<double>(rng.uniform_int(0, 2));
    Array<double> targets = rand_binary(rng, {m, n});
    uint64_t ws = rng.next_u64();
    return check_build(
        [ws, gamma, targets](Graph<double>&,
                             const std::vector<Tensor<double>>& in) {
          return weigh(sigmoid_focal(in[0], targets, gamma, 0.25), ws);
        },
        {randn(rng, {m, n}, 2.0)}, 0, rng, "sigmoid_focal");
  };
  // Softmax-expectation readout: weights scoring a query against a location
  // table, expectation over the index distribution.
  reg["expected_location_head"] = [](Rng& rng) {
    int d = rng.uniform_int(3, 8);
    int v = rng.uniform_int(6, 24);
    Array<double> idx({1, v});
    for (int i = 0; i < v; ++i) idx(0, i) = static_cast<double>(i);
    return check_build(
        [idx](Graph<double>& g, const std::vector<Tensor<double>>& in) {
          Tensor<double> scores = matmul(in[0], transpose(in[1]));
          Tensor<double> probs = softmax_rows(scores);
          return dot_const(probs, idx);
        },
        {randn(rng, {1, d}), randn(rng, {v, d})}, 0, rng,
        "expected_location_head");
  };
  return reg;
}

const std::map<std::string, OpCheckFn>& registry() {
  static const std::map<std::string, OpCheckFn> reg = make_registry();
  return reg;
}

}  // namespace

std::vector<std::string> gradcheck_op_names() {
  std::vector<std::string> names;
  for (const auto& [k, v] : registry()) names.push_back(k);
  return names;
}

GradCheckResult gradcheck_op(const std::string& name, uint64_t seed,
                             int n_shapes) {
  Rng rng(seed);
  const OpCheckFn& fn = registry().at(name);
  GradCheckResult worst;
  for (int s = 0; s < n_shapes; ++s) {
    GradCheckResult r = fn(rng);
    if (r.max_rel_err > worst.max_rel_err) {
      worst.max_rel_err = r.max_rel_err;
      worst.worst = r.worst;
    }
    worst.checked += r.checked;
  }
  return worst;
}

}  // namespace tabrec
