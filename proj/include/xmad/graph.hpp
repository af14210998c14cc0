#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "xmad/errors.hpp"
#include "xmad/tensor.hpp"

namespace xmad {

using NodeId = int;
using GradMap = std::map<std::string, Tensor>;

/// Reverse-mode tape over dense Tensors. Ops append nodes in topological
/// order; backward() walks the tape once from the loss node downwards.
/// Single-owner during forward/backward; node values are plain Tensors and
/// may be copied out freely.
class Graph {
 public:
  NodeId constant(Tensor t, const char* op = "constant") {
    return push(std::move(t), {}, nullptr, op);
  }

  /// Registers a trainable leaf. Names must be unique within one graph.
  NodeId param(const std::string& name, const Tensor& t) {
    if (params_.count(name)) throw ContractError("Graph::param: duplicate parameter " + name);
    NodeId id = push(t, {}, nullptr, "param");
    nodes_[id].param_name = name;
    params_[name] = id;
    return id;
  }

  const Tensor& value(NodeId id) const { return nodes_[id].value; }
  const Tensor& grad(NodeId id) const { return nodes_[id].grad; }
  std::size_t node_count() const { return nodes_.size(); }

  // ---- elementwise ----

  NodeId add(NodeId a, NodeId b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    require(ta.same_shape(tb), "add: shape mismatch");
    Tensor out = ta;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += tb[i];
    return push(std::move(out), {a, b},
                [a, b](Graph& g, NodeId self) {
                  const Tensor& go = g.nodes_[self].grad;
                  g.accumulate(a, go);
                  g.accumulate(b, go);
                },
                "add");
  }

  NodeId mul(NodeId a, NodeId b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    require(ta.same_shape(tb), "mul: shape mismatch");
    Tensor out = ta;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= tb[i];
    return push(std::move(out), {a, b},
                [a, b](Graph& g, NodeId self) {
                  const Tensor& go = g.nodes_[self].grad;
                  const Tensor& ta = g.nodes_[a].value;
                  const Tensor& tb = g.nodes_[b].value;
                  Tensor ga = go;
                  Tensor gb = go;
                  for (std::size_t i = 0; i < go.size(); ++i) {
                    ga[i] *= tb[i];
                    gb[i] *= ta[i];
                  }
                  g.accumulate(a, ga);
                  g.accumulate(b, gb);
                },
                "mul");
  }

  NodeId scale(NodeId a, double c) {
    Tensor out = val(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c;
    return push(std::move(out), {a},
                [a, c](Graph& g, NodeId self) {
                  Tensor ga = g.nodes_[self].grad;
                  for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= c;
                  g.accumulate(a, ga);
                },
                "scale");
  }

  NodeId relu(NodeId a) {
    Tensor out = val(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
    return push(std::move(out), {a},
                [a](Graph& g, NodeId self) {
                  const Tensor& go = g.nodes_[self].grad;
                  const Tensor& ta = g.nodes_[a].value;
                  Tensor ga = go;
                  for (std::size_t i = 0; i < ga.size(); ++i)
                    if (ta[i] <= 0.0) ga[i] = 0.0;
                  g.accumulate(a, ga);
                },
                "relu");
  }

  /// log(1 - x), with x clamped to at most 1 - 1e-7 so the value stays finite.
  NodeId log1m(NodeId a) {
    static constexpr double kCap = 1.0 - 1e-7;
    Tensor out = val(a);
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = std::log1p(-std::min(out[i], kCap));
    return push(std::move(out), {a},
                [a](Graph& g, NodeId self) {
                  const Tensor& go = g.nodes_[self].grad;
                  const Tensor& ta = g.nodes_[a].value;
                  Tensor ga = go;
                  for (std::size_t i = 0; i < ga.size(); ++i)
                    ga[i] = ta[i] > kCap ? 0.0 : -ga[i] / (1.0 - ta[i]);
                  g.accumulate(a, ga);
                },
                "log1m");
  }

  // ---- linear algebra ----

  NodeId matmul(NodeId a, NodeId b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    require(ta.shape().size() == 2 && tb.shape().size() == 2, "matmul: operands must be 2-D");
    require(ta.cols() == tb.rows(), "matmul: inner dimensions differ");
    Tensor out = mm(ta, tb);
    return push(std::move(out), {a, b},
                [a, b](Graph& g, NodeId self) {
                  const Tensor& go = g.nodes_[self].grad;
                  const Tensor& ta = g.nodes_[a].value;
                  const Tensor& tb = g.nodes_[b].value;
                  g.accumulate(a, mm_nt(go, tb));  // go . b^T
                  g.accumulate(b, mm_tn(ta, go));  // a^T . go
                },
                "matmul");
  }

  NodeId transpose(NodeId a) {
    const Tensor& ta = val(a);
    require(ta.shape().size() == 2, "transpose: operand must be 2-D");
    Tensor out({ta.cols(), ta.rows()});
    for (int r = 0; r < ta.rows(); ++r)
      for (int c = 0; c < ta.cols(); ++c) out.at(c, r) = ta.at(r, c);
    return push(std::move(out), {a},
                [a](Graph& g, NodeId self) {
                  const Tensor& go = g.nodes_[self].grad;
                  Tensor ga({go.cols(), go.rows()});
                  for (int r = 0; r < go.rows(); ++r)
                    for (int c = 0; c < go.cols(); ++c) ga.at(c, r) = go.at(r, c);
                  g.accumulate(a, ga);
                },
                "transpose");
  }

  /// (r,c) + (1,c), broadcast over rows.
  NodeId add_rowvec(NodeId m, NodeId v) {
    const Tensor& tm = val(m);
    const Tensor& tv = val(v);
    require(tv.rows() == 1 && tv.cols() == tm.cols(), "add_rowvec: bias shape mismatch");
    Tensor out = tm;
    for (int r = 0; r < tm.rows(); ++r)
      for (int c = 0; c < tm.cols(); ++c) out.at(r, c) += tv[c];
    return push(std::move(out), {m, v},
                [m, v](Graph& g, NodeId self) {
                  const Tensor& go = g.nodes_[self].grad;
                  g.accumulate(m, go);
                  Tensor gv({1, go.cols()});
                  for (int r = 0; r < go.rows(); ++r)
                    for (int c = 0; c < go.cols(); ++c) gv[c] += go.at(r, c);
                  g.accumulate(v, gv);
                },
                "add_rowvec");
  }

  // ---- reductions ----

  NodeId sum(NodeId a) {
    const Tensor& ta = val(a);
    double s = 0.0;
    for (std::size_t i = 0; i < ta.size(); ++i) s += ta[i];
    return push(Tensor::scalar(s), {a},
                [a](Graph& g, NodeId self) {
                  double go = g.nodes_[self].grad[0];
                  Tensor ga(g.nodes_[a].value.shape(), go);
                  g.accumulate(a, ga);
                },
                "sum");
  }

  NodeId masked_sum(NodeId a, std::vector<std::uint8_t> keep) {
    const Tensor& ta = val(a);
    require(keep.size() == ta.size(), "masked_sum: mask length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < ta.size(); ++i)
      if (keep[i]) s += ta[i];
    return push(Tensor::scalar(s), {a},
                [a, keep = std::move(keep)](Graph& g, NodeId self) {
                  double go = g.nodes_[self].grad[0];
                  Tensor ga(g.nodes_[a].value.shape(), 0.0);
                  for (std::size_t i = 0; i < ga.size(); ++i)
                    if (keep[i]) ga[i] = go;
                  g.accumulate(a, ga);
                },
                "masked_sum");
  }

  /// Mean over the kept rows of a (r,c) matrix; result is (1,c).
  NodeId mean_rows_masked(NodeId m, std::vector<std::uint8_t> keep) {
    const Tensor& tm = val(m);
    require(static_cast<int>(keep.size()) == tm.rows(), "mean_rows_masked: mask length mismatch");
    int n = 0;
    for (auto k : keep) n += k ? 1 : 0;
    if (n == 0) throw DomainError("mean_rows_masked: no rows kept");
    Tensor out({1, tm.cols()});
    for (int r = 0; r < tm.rows(); ++r)
      if (keep[r])
        for (int c = 0; c < tm.cols(); ++c) out[c] += tm.at(r, c);
    for (int c = 0; c < tm.cols(); ++c) out[c] /= n;
    return push(std::move(out), {m},
                [m, keep = std::move(keep), n](Graph& g, NodeId self) {
                  const Tensor& go = g.nodes_[self].grad;
                  const Tensor& tm = g.nodes_[m].value;
                  Tensor gm(tm.shape(), 0.0);
                  for (int r = 0; r < tm.rows(); ++r)
                    if (keep[r])
                      for (int c = 0; c < tm.cols(); ++c) gm.at(r, c) = go[c] / n;
                  g.accumulate(m, gm);
                },
                "mean_rows_masked");
  }

  /// Row sums of a (r,c) matrix; result is (r,1).
  NodeId row_sums(NodeId a) {
    const Tensor& ta = val(a);
    require(ta.shape().size() == 2, "row_sums: operand must be 2-D");
    Tensor out({ta.rows(), 1});
    for (int r = 0; r < ta.rows(); ++r)
      for (int c = 0; c < ta.cols(); ++c) out[r] += ta.at(r, c);
    return push(std::move(out), {a},
                [a](Graph& g, NodeId self) {
                  const Tensor& go = g.nodes_[self].grad;
                  const Tensor& ta = g.nodes_[a].value;
                  Tensor ga(ta.shape());
                  for (int r = 0; r < ta.rows(); ++r)
                    for (int c = 0; c < ta.cols(); ++c) ga.at(r, c) = go[r];
                  g.accumulate(a, ga);
                },
                "row_sums");
  }

  /// Mean of scalar nodes (used for batch losses).
  NodeId mean_scalars(std::vector<NodeId> xs) {
    require(!xs.empty(), "mean_scalars: empty input");
    double s = 0.0;
    for (NodeId x : xs) {
      require(val(x).is_scalar(), "mean_scalars: inputs must be scalar");
      s += val(x)[0];
    }
    double inv = 1.0 / static_cast<double>(xs.size());
    return push(Tensor::scalar(s * inv), std::vector<NodeId>(xs),
                [xs = std::move(xs), inv](Graph& g, NodeId self) {
                  double go = g.nodes_[self].grad[0] * inv;
                  for (NodeId x : xs) g.accumulate(x, Tensor::scalar(go));
                },
                "mean_scalars");
  }

  // ---- structured ops ----

  /// Softmax over the flattened tensor with temperature and validity mask.
  /// Masked cells are exactly 0 in the output and receive zero gradient.
  NodeId softmax(NodeId a, double temperature, std::vector<std::uint8_t> mask = {}) {
    const Tensor& ta = val(a);
    if (!mask.empty()) require(mask.size() == ta.size(), "softmax: mask length mismatch");
    std::vector<double> probs =
        masked_softmax(ta.data(), temperature, mask.empty() ? nullptr : &mask);
    Tensor out(ta.shape(), std::move(probs));
    return push(std::move(out), {a},
                [a, temperature, mask = std::move(mask)](Graph& g, NodeId self) {
                  const Tensor& go = g.nodes_[self].grad;
                  const Tensor& y = g.nodes_[self].value;
                  double dot = 0.0;
                  for (std::size_t i = 0; i < y.size(); ++i) dot += go[i] * y[i];
                  Tensor ga(y.shape(), 0.0);
                  for (std::size_t i = 0; i < y.size(); ++i) {
                    if (!mask.empty() && !mask[i]) continue;
                    ga[i] = y[i] * (go[i] - dot) / temperature;
                  }
                  g.accumulate(a, ga);
                },
                "softmax");
  }

  /// Gathers rows of a (V,c) table by index; result is (ids.size(), c).
  /// Backward scatter-adds, so repeated ids accumulate.
  NodeId gather_rows(NodeId table, std::vector<int> ids) {
    const Tensor& tt = val(table);
    require(tt.shape().size() == 2, "gather_rows: table must be 2-D");
    for (int id : ids)
      require(id >= 0 && id < tt.rows(), "gather_rows: row index out of range");
    Tensor out({static_cast<int>(ids.size()), tt.cols()});
    for (std::size_t r = 0; r < ids.size(); ++r)
      for (int c = 0; c < tt.cols(); ++c) out.at(static_cast<int>(r), c) = tt.at(ids[r], c);
    return push(std::move(out), {table},
                [table, ids = std::move(ids)](Graph& g, NodeId self) {
                  const Tensor& go = g.nodes_[self].grad;
                  const Tensor& tt = g.nodes_[table].value;
                  Tensor gt(tt.shape(), 0.0);
                  for (std::size_t r = 0; r < ids.size(); ++r)
                    for (int c = 0; c < tt.cols(); ++c)
                      gt.at(ids[r], c) += go.at(static_cast<int>(r), c);
                  g.accumulate(table, gt);
                },
                "gather_rows");
  }

  /// Concatenates (1,c_k) row vectors into one (1, sum c_k) row.
  NodeId concat_cols(std::vector<NodeId> parts) {
    require(!parts.empty(), "concat_cols: empty input");
    int total = 0;
    for (NodeId p : parts) {
      require(val(p).rows() == 1, "concat_cols: inputs must be row vectors");
      total += val(p).cols();
    }
    Tensor out({1, total});
    int off = 0;
    for (NodeId p : parts) {
      const Tensor& tp = val(p);
      for (int c = 0; c < tp.cols(); ++c) out[off + c] = tp[c];
      off += tp.cols();
    }
    return push(std::move(out), std::vector<NodeId>(parts),
                [parts = std::move(parts)](Graph& g, NodeId self) {
                  const Tensor& go = g.nodes_[self].grad;
                  int off = 0;
                  for (NodeId p : parts) {
                    const Tensor& tp = g.nodes_[p].value;
                    Tensor gp({1, tp.cols()});
                    for (int c = 0; c < tp.cols(); ++c) gp[c] = go[off + c];
                    off += tp.cols();
                    g.accumulate(p, gp);
                  }
                },
                "concat_cols");
  }

  /// Cross-entropy of softmax(logits) against a fixed target distribution:
  /// logsumexp(l) - sum_i t_i * l_i. Scalar output.
  NodeId cross_entropy(NodeId logits, std::vector<double> target) {
    const Tensor& tl = val(logits);
    require(target.size() == tl.size(), "cross_entropy: target length mismatch");
    double lse = logsumexp(tl.data());
    double dot = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) dot += target[i] * tl[i];
    return push(Tensor::scalar(lse - dot), {logits},
                [logits, target = std::move(target)](Graph& g, NodeId self) {
                  double go = g.nodes_[self].grad[0];
                  const Tensor& tl = g.nodes_[logits].value;
                  std::vector<double> p = masked_softmax(tl.data(), 1.0);
                  Tensor gl(tl.shape());
                  for (std::size_t i = 0; i < p.size(); ++i) gl[i] = go * (p[i] - target[i]);
                  g.accumulate(logits, gl);
                },
                "cross_entropy");
  }

  /// Population variance of the kept cells. Scalar output.
  NodeId masked_variance(NodeId a, std::vector<std::uint8_t> keep) {
    const Tensor& ta = val(a);
    require(keep.size() == ta.size(), "masked_variance: mask length mismatch");
    int n = 0;
    double mean = 0.0;
    for (std::size_t i = 0; i < ta.size(); ++i)
      if (keep[i]) {
        ++n;
        mean += ta[i];
      }
    if (n == 0) throw DomainError("masked_variance: no cells kept");
    mean /= n;
    double var = 0.0;
    for (std::size_t i = 0; i < ta.size(); ++i)
      if (keep[i]) var += (ta[i] - mean) * (ta[i] - mean);
    var /= n;
    return push(Tensor::scalar(var), {a},
                [a, keep = std::move(keep), n, mean](Graph& g, NodeId self) {
                  double go = g.nodes_[self].grad[0];
                  const Tensor& ta = g.nodes_[a].value;
                  Tensor ga(ta.shape(), 0.0);
                  for (std::size_t i = 0; i < ta.size(); ++i)
                    if (keep[i]) ga[i] = go * 2.0 * (ta[i] - mean) / n;
                  g.accumulate(a, ga);
                },
                "masked_variance");
  }

  // ---- backward ----

  /// Gradient of a scalar loss for every registered parameter. Parameters the
  /// loss does not reach get an all-zero gradient of matching shape.
  GradMap backward(NodeId loss) {
    if (!val(loss).is_scalar()) throw ContractError("backward: loss node must be scalar");
    for (auto& n : nodes_) n.grad = Tensor(n.value.shape(), 0.0);
    nodes_[loss].grad[0] = 1.0;
    for (NodeId id = loss; id >= 0; --id) {
      if (nodes_[id].backprop) nodes_[id].backprop(*this, id);
    }
    GradMap grads;
    for (const auto& [name, id] : params_) {
      if (!nodes_[id].grad.all_finite())
        throw NumericError("backward: non-finite gradient for parameter " + name);
      grads[name] = nodes_[id].grad;
    }
    return grads;
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<NodeId> inputs;
    std::function<void(Graph&, NodeId)> backprop;
    std::string param_name;
    const char* op = "";
  };

  const Tensor& val(NodeId id) const { return nodes_[id].value; }

  static void require(bool ok, const char* msg) {
    if (!ok) throw ContractError(msg);
  }

  NodeId push(Tensor value, std::vector<NodeId> inputs,
              std::function<void(Graph&, NodeId)> backprop, const char* op) {
    if (!value.all_finite()) throw NumericError(std::string("op produced non-finite value: ") + op);
    Node n;
    n.value = std::move(value);
    n.inputs = std::move(inputs);
    n.backprop = std::move(backprop);
    n.op = op;
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size()) - 1;
  }

  void accumulate(NodeId id, const Tensor& g) {
    Tensor& dst = nodes_[id].grad;
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
  }

  static Tensor mm(const Tensor& a, const Tensor& b) {
    Tensor out({a.rows(), b.cols()});
    for (int i = 0; i < a.rows(); ++i)
      for (int k = 0; k < a.cols(); ++k) {
        double aik = a.at(i, k);
        if (aik == 0.0) continue;
        for (int j = 0; j < b.cols(); ++j) out.at(i, j) += aik * b.at(k, j);
      }
    return out;
  }

  // a . b^T
  static Tensor mm_nt(const Tensor& a, const Tensor& b) {
    Tensor out({a.rows(), b.rows()});
    for (int i = 0; i < a.rows(); ++i)
      for (int j = 0; j < b.rows(); ++j) {
        double s = 0.0;
        for (int k = 0; k < a.cols(); ++k) s += a.at(i, k) * b.at(j, k);
        out.at(i, j) = s;
      }
    return out;
  }

  // a^T . b
  static Tensor mm_tn(const Tensor& a, const Tensor& b) {
    Tensor out({a.cols(), b.cols()});
    for (int k = 0; k < a.rows(); ++k)
      for (int i = 0; i < a.cols(); ++i) {
        double aki = a.at(k, i);
        if (aki == 0.0) continue;
        for (int j = 0; j < b.cols(); ++j) out.at(i, j) += aki * b.at(k, j);
      }
    return out;
  }

  std::vector<Node> nodes_;
  std::map<std::string, NodeId> params_;
};

}  // namespace xmad
