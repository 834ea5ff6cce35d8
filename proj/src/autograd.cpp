#include "tobac/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>

namespace tobac::ag {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

template <typename T>
Graph<T>& graph_of(Var<T> a, Var<T> b) {
  if (a.graph == nullptr || a.graph != b.graph) throw StructuralError("vars from different graphs");
  return *a.graph;
}

template <typename T>
void add_into(TensorT<T>& dst, const TensorT<T>& src) {
  T* d = dst.data();
  const T* s = src.data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

}  // namespace

// --- Graph ---------------------------------------------------------------

template <typename T>
Var<T> Graph<T>::constant(TensorT<T> value) {
  require_finite(value, "constant");
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Var<T> Graph<T>::parameter(const TensorT<T>& value, TensorT<T>& grad_sink) {
  if (!value.same_shape(grad_sink)) throw StructuralError("parameter/grad shape mismatch");
  Node n;
  n.op = "parameter";
  n.value = value;
  n.requires_grad = true;
  n.grad_sink = &grad_sink;
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Var<T> Graph<T>::record(std::string op, TensorT<T> value, std::vector<int> inputs,
                        BackwardFn backward) {
  require_finite(value, op.c_str());
  Node n;
  n.op = std::move(op);
  n.value = std::move(value);
  for (int in : inputs) {
    if (in < 0 || static_cast<std::size_t>(in) >= nodes_.size()) {
      throw StructuralError("op input refers to an unknown node");
    }
    n.requires_grad = n.requires_grad || nodes_[static_cast<std::size_t>(in)].requires_grad;
  }
  n.inputs = std::move(inputs);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
TensorT<T>& Graph<T>::grad(int id) {
  Node& n = node(id);
  if (n.grad.size() != n.value.size()) n.grad = TensorT<T>::zeros(n.value.shape());
  return n.grad;
}

template <typename T>
void Graph<T>::backward(Var<T> loss) {
  if (loss.graph != this) throw StructuralError("loss belongs to another graph");
  if (node(loss.id).value.size() != 1) throw StructuralError("backward: loss must be a scalar");

  // Iterative DFS post-order; state 1 = on stack, 2 = finished.
  std::vector<std::uint8_t> state(nodes_.size(), 0);
  std::vector<int> order;
  std::vector<std::pair<int, std::size_t>> stack{{loss.id, 0}};
  state[static_cast<std::size_t>(loss.id)] = 1;
  while (!stack.empty()) {
    auto& [id, next] = stack.back();
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (next < n.inputs.size()) {
      const int child = n.inputs[next++];
      if (child < 0 || static_cast<std::size_t>(child) >= nodes_.size()) {
        throw StructuralError("backward: dangling input edge");
      }
      auto& st = state[static_cast<std::size_t>(child)];
      if (st == 1) throw StructuralError("backward: cycle detected at node '" + n.op + "'");
      if (st == 0 && nodes_[static_cast<std::size_t>(child)].requires_grad) {
        st = 1;
        stack.emplace_back(child, 0);
      }
    } else {
      state[static_cast<std::size_t>(id)] = 2;
      order.push_back(id);
      stack.pop_back();
    }
  }

  for (Node& n : nodes_) n.grad = TensorT<T>();
  grad(loss.id)[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node& n = node(*it);
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.grad_sink != nullptr) {
      add_into(*n.grad_sink, n.grad);
    } else if (n.backward) {
      n.backward(*this, *it);
    }
  }
}

// --- Elementwise -----------------------------------------------------------

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  Graph<T>& g = graph_of(a, b);
  if (!a.value().same_shape(b.value())) throw StructuralError("add: shape mismatch");
  TensorT<T> out = a.value();
  add_into(out, b.value());
  const int ia = a.id, ib = b.id;
  return g.record("add", std::move(out), {ia, ib}, [ia, ib](Graph<T>& gr, int self) {
    const TensorT<T>& go = gr.node(self).grad;
    if (gr.node(ia).requires_grad) add_into(gr.grad(ia), go);
    if (gr.node(ib).requires_grad) add_into(gr.grad(ib), go);
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  Graph<T>& g = graph_of(a, b);
  if (!a.value().same_shape(b.value())) throw StructuralError("mul: shape mismatch");
  TensorT<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  const int ia = a.id, ib = b.id;
  return g.record("mul", std::move(out), {ia, ib}, [ia, ib](Graph<T>& gr, int self) {
    const TensorT<T>& go = gr.node(self).grad;
    if (gr.node(ia).requires_grad) {
      TensorT<T>& ga = gr.grad(ia);
      const TensorT<T>& vb = gr.node(ib).value;
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * vb[i];
    }
    if (gr.node(ib).requires_grad) {
      TensorT<T>& gb = gr.grad(ib);
      const TensorT<T>& va = gr.node(ia).value;
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += go[i] * va[i];
    }
  });
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
  TensorT<T> out = a.value();
  for (auto& x : out.storage()) x *= s;
  const int ia = a.id;
  return a.graph->record("scale", std::move(out), {ia}, [ia, s](Graph<T>& gr, int self) {
    const TensorT<T>& go = gr.node(self).grad;
    TensorT<T>& ga = gr.grad(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s * go[i];
  });
}

template <typename T>
Var<T> sum(Var<T> a) {
  T total = 0;
  for (const T& x : a.value().storage()) total += x;
  const int ia = a.id;
  return a.graph->record("sum", TensorT<T>({1}, {total}), {ia}, [ia](Graph<T>& gr, int self) {
    const T go = gr.node(self).grad[0];
    for (auto& x : gr.grad(ia).storage()) x += go;
  });
}

template <typename T>
Var<T> add_row(Var<T> a, Var<T> b) {
  Graph<T>& g = graph_of(a, b);
  const int n = a.value().rows();
  const int d = a.value().cols();
  if (static_cast<int>(b.value().size()) != d) throw StructuralError("add_row: width mismatch");
  TensorT<T> out = a.value();
  for (int r = 0; r < n; ++r) {
    T* o = out.row(r);
    for (int c = 0; c < d; ++c) o[c] += b.value()[static_cast<std::size_t>(c)];
  }
  const int ia = a.id, ib = b.id;
  return g.record("add_row", std::move(out), {ia, ib}, [ia, ib, n, d](Graph<T>& gr, int self) {
    const TensorT<T>& go = gr.node(self).grad;
    if (gr.node(ia).requires_grad) add_into(gr.grad(ia), go);
    if (gr.node(ib).requires_grad) {
      TensorT<T>& gb = gr.grad(ib);
      for (int r = 0; r < n; ++r) {
        const T* g_row = go.row(r);
        for (int c = 0; c < d; ++c) gb[static_cast<std::size_t>(c)] += g_row[c];
      }
    }
  });
}

// --- Matrix products --------------------------------------------------------

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Graph<T>& g = graph_of(a, b);
  TensorT<T> out({a.value().rows(), b.value().cols()});
  gemm(a.value(), false, b.value(), false, out, false);
  const int ia = a.id, ib = b.id;
  return g.record("matmul", std::move(out), {ia, ib}, [ia, ib](Graph<T>& gr, int self) {
    const TensorT<T>& go = gr.node(self).grad;
    // dA = dC * B^T, dB = A^T * dC
    if (gr.node(ia).requires_grad) gemm(go, false, gr.node(ib).value, true, gr.grad(ia), true);
    if (gr.node(ib).requires_grad) gemm(gr.node(ia).value, true, go, false, gr.grad(ib), true);
  });
}

template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  Graph<T>& g = graph_of(a, b);
  TensorT<T> out({a.value().rows(), b.value().rows()});
  gemm(a.value(), false, b.value(), true, out, false);
  const int ia = a.id, ib = b.id;
  return g.record("matmul_nt", std::move(out), {ia, ib}, [ia, ib](Graph<T>& gr, int self) {
    const TensorT<T>& go = gr.node(self).grad;
    // C = A B^T: dA = dC * B, dB = dC^T * A
    if (gr.node(ia).requires_grad) gemm(go, false, gr.node(ib).value, false, gr.grad(ia), true);
    if (gr.node(ib).requires_grad) gemm(go, true, gr.node(ia).value, false, gr.grad(ib), true);
  });
}

template <typename T>
Var<T> gather_rows(Var<T> table, std::vector<int> ids) {
  const TensorT<T>& tv = table.value();
  const int d = tv.cols();
  const int n_rows = tv.rows();
  TensorT<T> out({static_cast<int>(ids.size()), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= n_rows) throw StructuralError("gather_rows: index out of range");
    std::copy_n(tv.row(ids[i]), d, out.row(static_cast<int>(i)));
  }
  const int it = table.id;
  return table.graph->record(
      "gather_rows", std::move(out), {it}, [it, d, ids = std::move(ids)](Graph<T>& gr, int self) {
        const TensorT<T>& go = gr.node(self).grad;
        TensorT<T>& gt = gr.grad(it);
        for (std::size_t i = 0; i < ids.size(); ++i) {
          const T* src = go.row(static_cast<int>(i));
          T* dst = gt.row(ids[i]);
          for (int c = 0; c < d; ++c) dst[c] += src[c];
        }
      });
}

// --- Normalization and activations ----------------------------------------

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps) {
  Graph<T>& g = graph_of(x, gain);
  graph_of(x, bias);
  const TensorT<T>& xv = x.value();
  const int n = xv.rows();
  const int d = xv.cols();
  if (static_cast<int>(gain.value().size()) != d || static_cast<int>(bias.value().size()) != d) {
    throw StructuralError("layer_norm: parameter width mismatch");
  }
  TensorT<T> out({n, d});
  auto xhat = std::make_shared<TensorT<T>>(std::vector<int>{n, d});
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n));
  const T* gv = gain.value().data();
  const T* bv = bias.value().data();
  for (int r = 0; r < n; ++r) {
    const T* xr = xv.row(r);
    T mean = 0;
    for (int c = 0; c < d; ++c) mean += xr[c];
    mean /= static_cast<T>(d);
    T var = 0;
    for (int c = 0; c < d; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= static_cast<T>(d);
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_std)[static_cast<std::size_t>(r)] = is;
    T* hr = xhat->row(r);
    T* o = out.row(r);
    for (int c = 0; c < d; ++c) {
      hr[c] = (xr[c] - mean) * is;
      o[c] = hr[c] * gv[c] + bv[c];
    }
  }
  const int ix = x.id, ig = gain.id, ib = bias.id;
  return g.record("layer_norm", std::move(out), {ix, ig, ib},
                  [ix, ig, ib, n, d, xhat, inv_std](Graph<T>& gr, int self) {
                    const TensorT<T>& go = gr.node(self).grad;
                    const T* gv = gr.node(ig).value.data();
                    if (gr.node(ig).requires_grad || gr.node(ib).requires_grad) {
                      TensorT<T>& gg = gr.grad(ig);
                      TensorT<T>& gb = gr.grad(ib);
                      for (int r = 0; r < n; ++r) {
                        const T* gr_row = go.row(r);
                        const T* hr = xhat->row(r);
                        for (int c = 0; c < d; ++c) {
                          gg[static_cast<std::size_t>(c)] += gr_row[c] * hr[c];
                          gb[static_cast<std::size_t>(c)] += gr_row[c];
                        }
                      }
                    }
                    if (!gr.node(ix).requires_grad) return;
                    TensorT<T>& gx = gr.grad(ix);
                    std::vector<T> dh(static_cast<std::size_t>(d));
                    for (int r = 0; r < n; ++r) {
                      const T* gr_row = go.row(r);
                      const T* hr = xhat->row(r);
                      T mean_dh = 0, mean_dh_h = 0;
                      for (int c = 0; c < d; ++c) {
                        dh[static_cast<std::size_t>(c)] = gr_row[c] * gv[c];
                        mean_dh += dh[static_cast<std::size_t>(c)];
                        mean_dh_h += dh[static_cast<std::size_t>(c)] * hr[c];
                      }
                      mean_dh /= static_cast<T>(d);
                      mean_dh_h /= static_cast<T>(d);
                      const T is = (*inv_std)[static_cast<std::size_t>(r)];
                      T* gx_row = gx.row(r);
                      for (int c = 0; c < d; ++c) {
                        gx_row[c] += is * (dh[static_cast<std::size_t>(c)] - mean_dh - hr[c] * mean_dh_h);
                      }
                    }
                  });
}

template <typename T>
Var<T> gelu(Var<T> x) {
  using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
  using Map = Eigen::Map<Arr>;
  using CMap = Eigen::Map<const Arr>;
  constexpr T kC = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T kA = T(0.044715);
  const TensorT<T>& xv = x.value();
  const auto n = static_cast<Eigen::Index>(xv.size());
  CMap u(xv.data(), n);
  auto th = std::make_shared<Arr>((kC * (u + kA * u.cube())).tanh());
  TensorT<T> out(xv.shape());
  Map(out.data(), n) = T(0.5) * u * (T(1) + *th);
  const int ix = x.id;
  return x.graph->record("gelu", std::move(out), {ix}, [ix, th, n](Graph<T>& gr, int self) {
    CMap go(gr.node(self).grad.data(), n);
    CMap u(gr.node(ix).value.data(), n);
    Map gx(gr.grad(ix).data(), n);
    const Arr dth = (T(1) - th->square()) * T(0.7978845608028654) * (T(1) + T(0.134145) * u.square());
    gx += go * (T(0.5) * (T(1) + *th) + T(0.5) * u * dth);
  });
}

template <typename T>
Var<T> softmax_rows(Var<T> x) {
  TensorT<T> out = softmax(x.value());
  const int ix = x.id;
  return x.graph->record("softmax", std::move(out), {ix}, [ix](Graph<T>& gr, int self) {
    const TensorT<T>& go = gr.node(self).grad;
    const TensorT<T>& p = gr.node(self).value;
    TensorT<T>& gx = gr.grad(ix);
    const int v = p.cols();
    for (int r = 0; r < p.rows(); ++r) {
      const T* pr = p.row(r);
      const T* gr_row = go.row(r);
      T dot = 0;
      for (int c = 0; c < v; ++c) dot += pr[c] * gr_row[c];
      T* gx_row = gx.row(r);
      for (int c = 0; c < v; ++c) gx_row[c] += pr[c] * (gr_row[c] - dot);
    }
  });
}

// --- Attention --------------------------------------------------------------

template <typename T>
Var<T> causal_attention(Var<T> q, Var<T> k, Var<T> v, std::vector<Segment> segments, int n_heads) {
  Graph<T>& g = graph_of(q, k);
  graph_of(q, v);
  const TensorT<T>& qv = q.value();
  const int n = qv.rows();
  const int d = qv.cols();
  if (!qv.same_shape(k.value()) || !qv.same_shape(v.value())) {
    throw StructuralError("causal_attention: q/k/v shapes differ");
  }
  if (n_heads <= 0 || d % n_heads != 0) throw StructuralError("causal_attention: bad head count");
  const int dh = d / n_heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));

  // probs[s * n_heads + h] is the L x L attention matrix of one segment/head.
  auto probs = std::make_shared<std::vector<RowMat<T>>>();
  probs->reserve(segments.size() * static_cast<std::size_t>(n_heads));
  TensorT<T> out({n, d});
  for (const Segment& seg : segments) {
    if (seg.start < 0 || seg.length <= 0 || seg.start + seg.length > n) {
      throw StructuralError("causal_attention: segment out of range");
    }
    const int len = seg.length;
    for (int h = 0; h < n_heads; ++h) {
      const std::size_t off = static_cast<std::size_t>(seg.start) * d + static_cast<std::size_t>(h) * dh;
      ConstStridedMap<T> qh(qv.data() + off, len, dh, Eigen::OuterStride<>(d));
      ConstStridedMap<T> kh(k.value().data() + off, len, dh, Eigen::OuterStride<>(d));
      ConstStridedMap<T> vh(v.value().data() + off, len, dh, Eigen::OuterStride<>(d));
      RowMat<T> p = (qh * kh.transpose()) * scale;
      for (int i = 0; i < len; ++i) {
        T mx = p(i, 0);
        for (int j = 1; j <= i; ++j) mx = std::max(mx, p(i, j));
        T s = 0;
        for (int j = 0; j <= i; ++j) {
          p(i, j) = std::exp(p(i, j) - mx);
          s += p(i, j);
        }
        const T inv = T(1) / s;
        for (int j = 0; j <= i; ++j) p(i, j) *= inv;
        for (int j = i + 1; j < len; ++j) p(i, j) = 0;
      }
      StridedMap<T> oh(out.data() + off, len, dh, Eigen::OuterStride<>(d));
      oh.noalias() = p * vh;
      probs->push_back(std::move(p));
    }
  }
  const int iq = q.id, ik = k.id, iv = v.id;
  return g.record(
      "causal_attention", std::move(out), {iq, ik, iv},
      [iq, ik, iv, d, dh, n_heads, scale, probs, segments = std::move(segments)](Graph<T>& gr,
                                                                                 int self) {
        const TensorT<T>& go = gr.node(self).grad;
        const TensorT<T>& qv = gr.node(iq).value;
        const TensorT<T>& kv = gr.node(ik).value;
        const TensorT<T>& vv = gr.node(iv).value;
        TensorT<T>& gq = gr.grad(iq);
        TensorT<T>& gk = gr.grad(ik);
        TensorT<T>& gv = gr.grad(iv);
        std::size_t idx = 0;
        for (const Segment& seg : segments) {
          const int len = seg.length;
          for (int h = 0; h < n_heads; ++h, ++idx) {
            const RowMat<T>& p = (*probs)[idx];
            const std::size_t off =
                static_cast<std::size_t>(seg.start) * d + static_cast<std::size_t>(h) * dh;
            const Eigen::OuterStride<> st(d);
            ConstStridedMap<T> qh(qv.data() + off, len, dh, st);
            ConstStridedMap<T> kh(kv.data() + off, len, dh, st);
            ConstStridedMap<T> vh(vv.data() + off, len, dh, st);
            ConstStridedMap<T> doh(go.data() + off, len, dh, st);
            StridedMap<T> dqh(gq.data() + off, len, dh, st);
            StridedMap<T> dkh(gk.data() + off, len, dh, st);
            StridedMap<T> dvh(gv.data() + off, len, dh, st);
            dvh.noalias() += p.transpose() * doh;
            RowMat<T> dp = doh * vh.transpose();
            for (int i = 0; i < len; ++i) {
              T dot = 0;
              for (int j = 0; j <= i; ++j) dot += dp(i, j) * p(i, j);
              for (int j = 0; j <= i; ++j) dp(i, j) = p(i, j) * (dp(i, j) - dot) * scale;
              for (int j = i + 1; j < len; ++j) dp(i, j) = 0;
            }
            dqh.noalias() += dp * kh;
            dkh.noalias() += dp.transpose() * qh;
          }
        }
      });
}

// --- Losses -----------------------------------------------------------------

template <typename T>
Var<T> weighted_cross_entropy(Var<T> logits, std::vector<int> targets, std::vector<T> weights) {
  const TensorT<T>& lv = logits.value();
  const int rows = lv.rows();
  const int v = lv.cols();
  if (targets.size() != static_cast<std::size_t>(rows) || weights.size() != targets.size()) {
    throw StructuralError("weighted_cross_entropy: targets/weights must match logit rows");
  }
  auto probs = std::make_shared<TensorT<T>>(std::vector<int>{rows, v});
  double total = 0.0;
  for (int r = 0; r < rows; ++r) {
    const T w = weights[static_cast<std::size_t>(r)];
    if (w == T(0)) continue;
    const int t = targets[static_cast<std::size_t>(r)];
    if (t < 0 || t >= v) throw StructuralError("weighted_cross_entropy: target out of range");
    const T* in = lv.row(r);
    T mx = in[0];
    for (int c = 1; c < v; ++c) mx = std::max(mx, in[c]);
    double s = 0.0;
    for (int c = 0; c < v; ++c) s += std::exp(static_cast<double>(in[c] - mx));
    const double lse = static_cast<double>(mx) + std::log(s);
    T* pr = probs->row(r);
    for (int c = 0; c < v; ++c) pr[c] = static_cast<T>(std::exp(static_cast<double>(in[c]) - lse));
    total += static_cast<double>(w) * (lse - static_cast<double>(in[t]));
  }
  const int il = logits.id;
  return logits.graph->record(
      "cross_entropy", TensorT<T>({1}, {static_cast<T>(total)}), {il},
      [il, v, probs, targets = std::move(targets), weights = std::move(weights)](Graph<T>& gr,
                                                                                int self) {
        const T go = gr.node(self).grad[0];
        TensorT<T>& gl = gr.grad(il);
        for (int r = 0; r < gl.rows(); ++r) {
          const T w = weights[static_cast<std::size_t>(r)];
          if (w == T(0)) continue;
          const T* pr = probs->row(r);
          T* gr_row = gl.row(r);
          const T f = go * w;
          for (int c = 0; c < v; ++c) gr_row[c] += f * pr[c];
          gr_row[targets[static_cast<std::size_t>(r)]] -= f;
        }
      });
}

template <typename T>
Var<T> weighted_kl(Var<T> student_logits, const TensorT<T>& teacher_logits, std::vector<int> rows,
                   std::vector<T> weights) {
  const TensorT<T>& sv = student_logits.value();
  const int v = sv.cols();
  const int k = static_cast<int>(rows.size());
  if (teacher_logits.rows() != k || teacher_logits.cols() != v || weights.size() != rows.size()) {
    throw StructuralError("weighted_kl: teacher rows/vocabulary do not match the student");
  }
  require_finite(teacher_logits, "weighted_kl teacher");
  auto p = std::make_shared<TensorT<T>>(softmax(teacher_logits));
  auto q = std::make_shared<TensorT<T>>(std::vector<int>{k, v});
  double total = 0.0;
  for (int i = 0; i < k; ++i) {
    const int r = rows[static_cast<std::size_t>(i)];
    if (r < 0 || r >= sv.rows()) throw StructuralError("weighted_kl: row out of range");
    const T* s = sv.row(r);
    const T* t = teacher_logits.row(i);
    double ms = s[0], mt = t[0];
    for (int c = 1; c < v; ++c) {
      ms = std::max(ms, static_cast<double>(s[c]));
      mt = std::max(mt, static_cast<double>(t[c]));
    }
    double ss = 0.0, st = 0.0;
    for (int c = 0; c < v; ++c) {
      ss += std::exp(static_cast<double>(s[c]) - ms);
      st += std::exp(static_cast<double>(t[c]) - mt);
    }
    const double lse_s = ms + std::log(ss);
    const double lse_t = mt + std::log(st);
    double kl = 0.0;
    T* qr = q->row(i);
    for (int c = 0; c < v; ++c) {
      const double lp = static_cast<double>(t[c]) - lse_t;
      const double lq = static_cast<double>(s[c]) - lse_s;
      qr[c] = static_cast<T>(std::exp(lq));
      kl += std::exp(lp) * (lp - lq);
    }
    total += static_cast<double>(weights[static_cast<std::size_t>(i)]) * std::max(kl, 0.0);
  }
  const int is = student_logits.id;
  return student_logits.graph->record(
      "kl_divergence", TensorT<T>({1}, {static_cast<T>(total)}), {is},
      [is, v, p, q, rows = std::move(rows), weights = std::move(weights)](Graph<T>& gr, int self) {
        const T go = gr.node(self).grad[0];
        TensorT<T>& gs = gr.grad(is);
        for (std::size_t i = 0; i < rows.size(); ++i) {
          const T f = go * weights[i];
          const T* pr = p->row(static_cast<int>(i));
          const T* qr = q->row(static_cast<int>(i));
          T* g_row = gs.row(rows[i]);
          for (int c = 0; c < v; ++c) g_row[c] += f * (qr[c] - pr[c]);
        }
      });
}

#define TOBAC_AG_INSTANTIATE(T)                                                               \
  template class Graph<T>;                                                                    \
  template struct Var<T>;                                                                     \
  template Var<T> add<T>(Var<T>, Var<T>);                                                     \
  template Var<T> mul<T>(Var<T>, Var<T>);                                                     \
  template Var<T> scale<T>(Var<T>, T);                                                        \
  template Var<T> sum<T>(Var<T>);                                                             \
  template Var<T> add_row<T>(Var<T>, Var<T>);                                                 \
  template Var<T> matmul<T>(Var<T>, Var<T>);                                                  \
  template Var<T> matmul_nt<T>(Var<T>, Var<T>);                                               \
  template Var<T> gather_rows<T>(Var<T>, std::vector<int>);                                   \
  template Var<T> layer_norm<T>(Var<T>, Var<T>, Var<T>, T);                                   \
  template Var<T> gelu<T>(Var<T>);                                                            \
  template Var<T> softmax_rows<T>(Var<T>);                                                    \
  template Var<T> causal_attention<T>(Var<T>, Var<T>, Var<T>, std::vector<Segment>, int);     \
  template Var<T> weighted_cross_entropy<T>(Var<T>, std::vector<int>, std::vector<T>);        \
  template Var<T> weighted_kl<T>(Var<T>, const TensorT<T>&, std::vector<int>, std::vector<T>);

TOBAC_AG_INSTANTIATE(float)
TOBAC_AG_INSTANTIATE(double)

#undef TOBAC_AG_INSTANTIATE

}  // namespace tobac::ag
