#include "sdlab/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace sdlab {

void Parameter::zero_grad() {
  if (!grad.same_shape(value) || grad.shape != value.shape) {
    grad = Tensor(value.shape, std::vector<double>(value.size(), 0.0));
  } else {
    std::fill(grad.data.begin(), grad.data.end(), 0.0);
  }
}

Parameter& ParamStore::add(std::string name, Tensor value, bool trainable) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter: " + name);
  auto p = std::make_unique<Parameter>();
  p->name = std::move(name);
  p->value = std::move(value);
  p->trainable = trainable;
  p->zero_grad();
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter& ParamStore::get(std::string_view name) {
  for (auto& p : params_) {
    if (p->name == name) return *p;
  }
  throw std::out_of_range("unknown parameter: " + std::string(name));
}

const Parameter& ParamStore::get(std::string_view name) const {
  for (const auto& p : params_) {
    if (p->name == name) return *p;
  }
  throw std::out_of_range("unknown parameter: " + std::string(name));
}

bool ParamStore::contains(std::string_view name) const {
  return std::any_of(params_.begin(), params_.end(),
                     [&](const auto& p) { return p->name == name; });
}

std::vector<Parameter*> ParamStore::trainable() {
  std::vector<Parameter*> out;
  for (auto& p : params_) {
    if (p->trainable) out.push_back(p.get());
  }
  return out;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

AttentionMask AttentionMask::causal(std::size_t queries, std::size_t past) {
  AttentionMask m(queries, past + queries);
  for (std::size_t i = 0; i < queries; ++i) {
    for (std::size_t j = 0; j <= past + i; ++j) m.set(i, j);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Graph

Value Graph::constant(Tensor t) {
  t.check_finite("constant");
  Node n;
  n.owned = std::move(t);
  nodes_.push_back(std::move(n));
  return Value{static_cast<int>(nodes_.size() - 1)};
}

Value Graph::constant_ref(const Tensor& t) {
  Node n;
  n.borrowed = &t;
  nodes_.push_back(std::move(n));
  return Value{static_cast<int>(nodes_.size() - 1)};
}

Value Graph::param(Parameter& p) {
  Node n;
  n.borrowed = &p.value;
  n.param = &p;
  n.needs_grad = grad_enabled_ && p.trainable;
  nodes_.push_back(std::move(n));
  return Value{static_cast<int>(nodes_.size() - 1)};
}

const Graph::Node& Graph::node(Value v) const {
  if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw std::out_of_range("graph: invalid value handle");
  }
  return nodes_[v.id];
}

const Tensor& Graph::value(Value v) const { return node(v).value(); }

Tensor Graph::grad(Value v) const {
  const Node& n = node(v);
  if (n.grad.size() == n.value().size()) return n.grad;
  return Tensor(n.value().shape, std::vector<double>(n.value().size(), 0.0));
}

Value Graph::push(Tensor value, std::vector<Value> inputs, BackwardFn fn, const char* op) {
  value.check_finite(op);
  Node n;
  n.owned = std::move(value);
  if (grad_enabled_) {
    for (Value in : inputs) {
      if (nodes_[in.id].needs_grad) n.needs_grad = true;
    }
  }
  if (n.needs_grad) {
    n.inputs = std::move(inputs);
    n.backward = std::move(fn);
  }
  nodes_.push_back(std::move(n));
  return Value{static_cast<int>(nodes_.size() - 1)};
}

Tensor& Graph::grad_ref(Value v) {
  Node& n = nodes_[v.id];
  if (n.grad.size() != n.value().size()) {
    n.grad = Tensor(n.value().shape, std::vector<double>(n.value().size(), 0.0));
  }
  return n.grad;
}

void Graph::backward(Value loss) {
  const Tensor& lv = value(loss);
  if (lv.size() != 1) throw std::invalid_argument("backward: loss must be a scalar");
  if (!nodes_[loss.id].needs_grad) return;
  grad_ref(loss).data[0] = 1.0;
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    if (n.backward) n.backward(*this, id);
  }
  for (Node& n : nodes_) {
    if (n.param && n.needs_grad && n.grad.size() == n.value().size()) {
      Parameter& p = *n.param;
      if (p.grad.size() != p.value.size()) p.zero_grad();
      for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad.data[i] += n.grad.data[i];
    }
  }
}

// ---------------------------------------------------------------------------
// Kernels

namespace kernels {

void gemm(const double* a, const double* b, double* c, std::size_t n, std::size_t m,
          std::size_t p) {
  for (std::size_t i = 0; i < n; ++i) {
    double* crow = c + i * p;
    std::fill(crow, crow + p, 0.0);
    const double* arow = a + i * m;
    for (std::size_t k = 0; k < m; ++k) {
      const double av = arow[k];
      const double* brow = b + k * p;
      for (std::size_t j = 0; j < p; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace kernels

namespace {

void transpose(const Tensor& t, std::vector<double>& out) {
  const std::size_t r = t.rows(), c = t.cols();
  out.resize(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = t.data[i * c + j];
  }
}

void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace

namespace ad {

Value matmul(Graph& g, Value a, Value b) {
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  require(av.cols() == bv.rows(), "matmul: inner dimension mismatch");
  const std::size_t n = av.rows(), m = av.cols(), p = bv.cols();
  Tensor out(n, p);
  kernels::gemm(av.data.data(), bv.data.data(), out.data.data(), n, m, p);
  return g.push(std::move(out), {a, b}, [](Graph& g, int self) {
    const Value a = g.input(self, 0), b = g.input(self, 1);
    const Tensor& dy = g.grad_of(self);
    const Tensor& av = g.value(a);
    const Tensor& bv = g.value(b);
    const std::size_t n = av.rows(), m = av.cols(), p = bv.cols();
    if (g.needs_grad(a)) {
      std::vector<double> bt;
      transpose(bv, bt);  // p x m
      Tensor& da = g.grad_ref(a);
      for (std::size_t i = 0; i < n; ++i) {
        double* darow = da.data.data() + i * m;
        const double* dyrow = dy.data.data() + i * p;
        for (std::size_t j = 0; j < p; ++j) {
          const double d = dyrow[j];
          const double* btrow = bt.data() + j * m;
          for (std::size_t k = 0; k < m; ++k) darow[k] += d * btrow[k];
        }
      }
    }
    if (g.needs_grad(b)) {
      Tensor& db = g.grad_ref(b);
      for (std::size_t i = 0; i < n; ++i) {
        const double* arow = av.data.data() + i * m;
        const double* dyrow = dy.data.data() + i * p;
        for (std::size_t k = 0; k < m; ++k) {
          const double x = arow[k];
          double* dbrow = db.data.data() + k * p;
          for (std::size_t j = 0; j < p; ++j) dbrow[j] += x * dyrow[j];
        }
      }
    }
  }, "matmul");
}

Value add(Graph& g, Value a, Value b) {
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  require(av.same_shape(bv), "add: shape mismatch");
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += bv.data[i];
  return g.push(std::move(out), {a, b}, [](Graph& g, int self) {
    const Tensor& dy = g.grad_of(self);
    for (std::size_t s = 0; s < 2; ++s) {
      const Value in = g.input(self, s);
      if (!g.needs_grad(in)) continue;
      Tensor& d = g.grad_ref(in);
      for (std::size_t i = 0; i < d.size(); ++i) d.data[i] += dy.data[i];
    }
  }, "add");
}

Value add_bias(Graph& g, Value a, Value bias) {
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(bias);
  require(bv.size() == av.cols(), "add_bias: width mismatch");
  Tensor out = av;
  const std::size_t c = av.cols();
  for (std::size_t i = 0; i < av.rows(); ++i) {
    for (std::size_t j = 0; j < c; ++j) out.data[i * c + j] += bv.data[j];
  }
  return g.push(std::move(out), {a, bias}, [](Graph& g, int self) {
    const Tensor& dy = g.grad_of(self);
    const Value a = g.input(self, 0), b = g.input(self, 1);
    if (g.needs_grad(a)) {
      Tensor& d = g.grad_ref(a);
      for (std::size_t i = 0; i < d.size(); ++i) d.data[i] += dy.data[i];
    }
    if (g.needs_grad(b)) {
      Tensor& d = g.grad_ref(b);
      const std::size_t c = d.size();
      for (std::size_t i = 0; i < dy.rows(); ++i) {
        for (std::size_t j = 0; j < c; ++j) d.data[j] += dy.data[i * c + j];
      }
    }
  }, "add_bias");
}

Value scale(Graph& g, Value a, double s) {
  Tensor out = g.value(a);
  for (double& v : out.data) v *= s;
  return g.push(std::move(out), {a}, [s](Graph& g, int self) {
    const Tensor& dy = g.grad_of(self);
    Tensor& d = g.grad_ref(g.input(self, 0));
    for (std::size_t i = 0; i < d.size(); ++i) d.data[i] += s * dy.data[i];
  }, "scale");
}

Value rms_norm(Graph& g, Value x, Value weight, double eps) {
  const Tensor& xv = g.value(x);
  const Tensor& wv = g.value(weight);
  const std::size_t n = xv.rows(), d = xv.cols();
  require(wv.size() == d, "rms_norm: weight width mismatch");
  Tensor out(n, d);
  std::vector<double> inv(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* xr = xv.data.data() + i * d;
    double ms = 0.0;
    for (std::size_t j = 0; j < d; ++j) ms += xr[j] * xr[j];
    ms /= static_cast<double>(d);
    inv[i] = 1.0 / std::sqrt(ms + eps);
    for (std::size_t j = 0; j < d; ++j) out.data[i * d + j] = xr[j] * inv[i] * wv.data[j];
  }
  return g.push(std::move(out), {x, weight}, [inv = std::move(inv)](Graph& g, int self) {
    const Value x = g.input(self, 0), w = g.input(self, 1);
    const Tensor& dy = g.grad_of(self);
    const Tensor& xv = g.value(x);
    const Tensor& wv = g.value(w);
    const std::size_t n = xv.rows(), d = xv.cols();
    const bool gx = g.needs_grad(x), gw = g.needs_grad(w);
    for (std::size_t i = 0; i < n; ++i) {
      const double* xr = xv.data.data() + i * d;
      const double* dyr = dy.data.data() + i * d;
      const double r = inv[i];
      if (gw) {
        Tensor& dw = g.grad_ref(w);
        for (std::size_t j = 0; j < d; ++j) dw.data[j] += xr[j] * r * dyr[j];
      }
      if (gx) {
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) dot += xr[j] * wv.data[j] * dyr[j];
        const double coef = r * r * r * dot / static_cast<double>(d);
        Tensor& dx = g.grad_ref(x);
        double* dxr = dx.data.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) dxr[j] += r * wv.data[j] * dyr[j] - coef * xr[j];
      }
    }
  }, "rms_norm");
}

Value silu(Graph& g, Value x) {
  Tensor out = g.value(x);
  for (double& v : out.data) v = v / (1.0 + std::exp(-v));
  return g.push(std::move(out), {x}, [](Graph& g, int self) {
    const Value x = g.input(self, 0);
    const Tensor& xv = g.value(x);
    const Tensor& dy = g.grad_of(self);
    Tensor& dx = g.grad_ref(x);
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const double s = 1.0 / (1.0 + std::exp(-xv.data[i]));
      dx.data[i] += dy.data[i] * (s + xv.data[i] * s * (1.0 - s));
    }
  }, "silu");
}

Value gather_rows(Graph& g, Value table, std::span<const std::size_t> rows) {
  const Tensor& tv = g.value(table);
  const std::size_t c = tv.cols();
  require(!rows.empty(), "gather_rows: no rows");
  Tensor out(rows.size(), c);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= tv.rows()) throw std::out_of_range("gather_rows: row index out of range");
    std::copy_n(tv.data.data() + rows[i] * c, c, out.data.data() + i * c);
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return g.push(std::move(out), {table}, [idx = std::move(idx)](Graph& g, int self) {
    const Tensor& dy = g.grad_of(self);
    Tensor& dt = g.grad_ref(g.input(self, 0));
    const std::size_t c = dt.cols();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      for (std::size_t j = 0; j < c; ++j) dt.data[idx[i] * c + j] += dy.data[i * c + j];
    }
  }, "gather_rows");
}

Value concat_cols(Graph& g, std::span<const Value> parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const std::size_t n = g.value(parts[0]).rows();
  std::size_t total = 0;
  for (Value p : parts) {
    require(g.value(p).rows() == n, "concat_cols: row count mismatch");
    total += g.value(p).cols();
  }
  Tensor out(n, total);
  std::size_t off = 0;
  for (Value p : parts) {
    const Tensor& pv = g.value(p);
    const std::size_t c = pv.cols();
    for (std::size_t i = 0; i < n; ++i) {
      std::copy_n(pv.data.data() + i * c, c, out.data.data() + i * total + off);
    }
    off += c;
  }
  std::vector<Value> inputs(parts.begin(), parts.end());
  return g.push(std::move(out), inputs, [](Graph& g, int self) {
    const Tensor& dy = g.grad_of(self);
    const std::size_t total = dy.cols(), n = dy.rows();
    std::size_t off = 0;
    for (std::size_t s = 0; off < total; ++s) {
      const Value in = g.input(self, s);
      const std::size_t c = g.value(in).cols();
      if (g.needs_grad(in)) {
        Tensor& d = g.grad_ref(in);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < c; ++j) d.data[i * c + j] += dy.data[i * total + off + j];
        }
      }
      off += c;
    }
  }, "concat_cols");
}

Value concat_rows(Graph& g, std::span<const Value> parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  const std::size_t c = g.value(parts[0]).cols();
  std::size_t total = 0;
  for (Value p : parts) {
    require(g.value(p).cols() == c, "concat_rows: column count mismatch");
    total += g.value(p).rows();
  }
  Tensor out(total, c);
  std::size_t off = 0;
  for (Value p : parts) {
    const Tensor& pv = g.value(p);
    std::copy(pv.data.begin(), pv.data.end(), out.data.begin() + off * c);
    off += pv.rows();
  }
  std::vector<Value> inputs(parts.begin(), parts.end());
  return g.push(std::move(out), inputs, [](Graph& g, int self) {
    const Tensor& dy = g.grad_of(self);
    const std::size_t total = dy.rows();
    std::size_t off = 0;
    for (std::size_t s = 0; off < total; ++s) {
      const Value in = g.input(self, s);
      const Tensor& iv = g.value(in);
      if (g.needs_grad(in)) {
        Tensor& d = g.grad_ref(in);
        for (std::size_t i = 0; i < d.size(); ++i) d.data[i] += dy.data[off * dy.cols() + i];
      }
      off += iv.rows();
    }
  }, "concat_rows");
}

Value slice_rows(Graph& g, Value x, std::size_t begin, std::size_t count) {
  const Tensor& xv = g.value(x);
  require(count > 0 && begin + count <= xv.rows(), "slice_rows: range out of bounds");
  const std::size_t c = xv.cols();
  Tensor out(count, c);
  std::copy_n(xv.data.data() + begin * c, count * c, out.data.data());
  return g.push(std::move(out), {x}, [begin](Graph& g, int self) {
    const Tensor& dy = g.grad_of(self);
    Tensor& d = g.grad_ref(g.input(self, 0));
    for (std::size_t i = 0; i < dy.size(); ++i) d.data[begin * dy.cols() + i] += dy.data[i];
  }, "slice_rows");
}

Value attention(Graph& g, Value q, Value k, Value v, const AttentionMask& mask, int heads) {
  const Tensor& qv = g.value(q);
  const Tensor& kv = g.value(k);
  const Tensor& vv = g.value(v);
  const std::size_t n = qv.rows(), m = kv.rows(), d = qv.cols();
  require(kv.cols() == d && vv.cols() == d && vv.rows() == m, "attention: shape mismatch");
  require(heads > 0 && d % static_cast<std::size_t>(heads) == 0, "attention: bad head count");
  if (mask.queries != n || mask.keys != m) {
    throw std::invalid_argument("attention: mask shape mismatch");
  }
  const std::size_t h_count = static_cast<std::size_t>(heads);
  const std::size_t dh = d / h_count;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));

  // Allowed key lists in index order; weights laid out [query][head][allowed].
  std::vector<std::vector<std::size_t>> keys(n);
  std::vector<std::size_t> offset(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      if (mask.allowed(i, j)) keys[i].push_back(j);
    }
    if (keys[i].empty()) throw std::invalid_argument("attention: query row attends to nothing");
    offset[i + 1] = offset[i] + keys[i].size() * h_count;
  }
  std::vector<double> weights(offset[n]);
  Tensor out(n, d);
  std::vector<double> scores;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& ks = keys[i];
    scores.resize(ks.size());
    for (std::size_t h = 0; h < h_count; ++h) {
      const double* qi = qv.data.data() + i * d + h * dh;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t a = 0; a < ks.size(); ++a) {
        const double* kj = kv.data.data() + ks[a] * d + h * dh;
        double s = 0.0;
        for (std::size_t t = 0; t < dh; ++t) s += qi[t] * kj[t];
        scores[a] = s * sc;
        mx = std::max(mx, scores[a]);
      }
      double sum = 0.0;
      for (double& s : scores) {
        s = std::exp(s - mx);
        sum += s;
      }
      double* w = weights.data() + offset[i] + h * ks.size();
      double* oi = out.data.data() + i * d + h * dh;
      for (std::size_t a = 0; a < ks.size(); ++a) {
        w[a] = scores[a] / sum;
        const double* vj = vv.data.data() + ks[a] * d + h * dh;
        for (std::size_t t = 0; t < dh; ++t) oi[t] += w[a] * vj[t];
      }
    }
  }
  if (AttentionProbe* probe = g.probe()) {
    AttentionProbe::Record rec;
    rec.heads = heads;
    rec.queries = n;
    rec.keys = m;
    rec.weights.assign(h_count * n * m, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t h = 0; h < h_count; ++h) {
        const double* w = weights.data() + offset[i] + h * keys[i].size();
        for (std::size_t a = 0; a < keys[i].size(); ++a) {
          rec.weights[(h * n + i) * m + keys[i][a]] = w[a];
        }
      }
    }
    probe->records.push_back(std::move(rec));
  }
  auto bw = [keys = std::move(keys), offset = std::move(offset), weights = std::move(weights),
             h_count, dh, sc](Graph& g, int self) {
    const Value q = g.input(self, 0), k = g.input(self, 1), v = g.input(self, 2);
    const Tensor& dy = g.grad_of(self);
    const Tensor& qv = g.value(q);
    const Tensor& kv = g.value(k);
    const Tensor& vv = g.value(v);
    const std::size_t n = qv.rows(), d = qv.cols();
    const bool gq = g.needs_grad(q), gk = g.needs_grad(k), gv = g.needs_grad(v);
    Tensor* dq = gq ? &g.grad_ref(q) : nullptr;
    Tensor* dk = gk ? &g.grad_ref(k) : nullptr;
    Tensor* dv = gv ? &g.grad_ref(v) : nullptr;
    std::vector<double> dw;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& ks = keys[i];
      dw.resize(ks.size());
      for (std::size_t h = 0; h < h_count; ++h) {
        const double* w = weights.data() + offset[i] + h * ks.size();
        const double* doi = dy.data.data() + i * d + h * dh;
        double wdot = 0.0;
        for (std::size_t a = 0; a < ks.size(); ++a) {
          const double* vj = vv.data.data() + ks[a] * d + h * dh;
          double s = 0.0;
          for (std::size_t t = 0; t < dh; ++t) s += doi[t] * vj[t];
          dw[a] = s;
          wdot += w[a] * s;
          if (dv) {
            double* dvj = dv->data.data() + ks[a] * d + h * dh;
            for (std::size_t t = 0; t < dh; ++t) dvj[t] += w[a] * doi[t];
          }
        }
        const double* qi = qv.data.data() + i * d + h * dh;
        for (std::size_t a = 0; a < ks.size(); ++a) {
          const double ds = w[a] * (dw[a] - wdot) * sc;
          if (dq) {
            double* dqi = dq->data.data() + i * d + h * dh;
            const double* kj = kv.data.data() + ks[a] * d + h * dh;
            for (std::size_t t = 0; t < dh; ++t) dqi[t] += ds * kj[t];
          }
          if (dk) {
            double* dkj = dk->data.data() + ks[a] * d + h * dh;
            for (std::size_t t = 0; t < dh; ++t) dkj[t] += ds * qi[t];
          }
        }
      }
    }
  };
  return g.push(std::move(out), {q, k, v}, std::move(bw), "attention");
}

Value softmax_rows(Graph& g, Value x, double temperature) {
  const Tensor& xv = g.value(x);
  Tensor out(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < xv.rows(); ++i) {
    const auto p = softmax(xv.row_span(i), temperature);
    std::copy(p.begin(), p.end(), out.row_span(i).begin());
  }
  return g.push(std::move(out), {x}, [temperature](Graph& g, int self) {
    const Value x = g.input(self, 0);
    const Tensor& y = g.value(Value{self});
    const Tensor& dy = g.grad_of(self);
    Tensor& dx = g.grad_ref(x);
    const std::size_t c = y.cols();
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += y.at(i, j) * dy.at(i, j);
      for (std::size_t j = 0; j < c; ++j) {
        dx.at(i, j) += y.at(i, j) * (dy.at(i, j) - dot) / temperature;
      }
    }
  }, "softmax_rows");
}

Value cross_entropy(Graph& g, Value logits, const Tensor& target) {
  const Tensor& lv = g.value(logits);
  require(lv.same_shape(target), "cross_entropy: dimension mismatch");
  const std::size_t n = lv.rows(), c = lv.cols();
  Tensor probs(n, c);
  std::vector<double> mass(n, 0.0);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto lp = log_softmax(lv.row_span(i));
    for (std::size_t j = 0; j < c; ++j) {
      const double t = target.at(i, j);
      if (t != 0.0) loss -= t * lp[j];
      mass[i] += t;
      probs.at(i, j) = std::exp(lp[j]);
    }
    if (std::abs(mass[i] - 1.0) > 1e-9) {
      throw std::invalid_argument("cross_entropy: target row does not sum to 1");
    }
  }
  loss /= static_cast<double>(n);
  Tensor tgt = target;
  return g.push(Tensor::row({loss}), {logits},
                [probs = std::move(probs), tgt = std::move(tgt), mass = std::move(mass)](
                    Graph& g, int self) {
                  const double dl = g.grad_of(self).data[0];
                  Tensor& d = g.grad_ref(g.input(self, 0));
                  const std::size_t n = probs.rows(), c = probs.cols();
                  const double inv_n = 1.0 / static_cast<double>(n);
                  for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t j = 0; j < c; ++j) {
                      d.at(i, j) += dl * inv_n * (mass[i] * probs.at(i, j) - tgt.at(i, j));
                    }
                  }
                },
                "cross_entropy");
}

Value smooth_l1(Graph& g, Value pred, const Tensor& target, double beta) {
  const Tensor& pv = g.value(pred);
  require(pv.same_shape(target), "smooth_l1: shape mismatch");
  require(beta > 0.0, "smooth_l1: beta must be > 0");
  double loss = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double e = pv.data[i] - target.data[i];
    const double a = std::abs(e);
    loss += a < beta ? 0.5 * e * e / beta : a - 0.5 * beta;
  }
  const double inv = 1.0 / static_cast<double>(pv.size());
  Tensor tgt = target;
  return g.push(Tensor::row({loss * inv}), {pred},
                [tgt = std::move(tgt), beta, inv](Graph& g, int self) {
                  const Value p = g.input(self, 0);
                  const Tensor& pv = g.value(p);
                  const double dl = g.grad_of(self).data[0];
                  Tensor& d = g.grad_ref(p);
                  for (std::size_t i = 0; i < pv.size(); ++i) {
                    const double e = pv.data[i] - tgt.data[i];
                    const double de = std::abs(e) < beta ? e / beta : (e > 0 ? 1.0 : -1.0);
                    d.data[i] += dl * inv * de;
                  }
                },
                "smooth_l1");
}

}  // namespace ad

}  // namespace sdlab
