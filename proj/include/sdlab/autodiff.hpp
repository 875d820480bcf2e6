#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sdlab/tensor.hpp"

namespace sdlab {

// A named trainable tensor. `grad` is accumulated by Graph::backward.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  void zero_grad();
};

// Ordered, address-stable collection of parameters.
class ParamStore {
 public:
  Parameter& add(std::string name, Tensor value, bool trainable = true);
  Parameter& get(std::string_view name);
  const Parameter& get(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::vector<Parameter*> trainable();
  void zero_grad();

  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

// Boolean query x key attendance matrix.
struct AttentionMask {
  std::size_t queries = 0;
  std::size_t keys = 0;
  std::vector<std::uint8_t> allow;

  AttentionMask() = default;
  AttentionMask(std::size_t q, std::size_t k) : queries(q), keys(k), allow(q * k, 0) {}

  // Query i sees every one of `past` cached keys plus new keys 0..i.
  static AttentionMask causal(std::size_t queries, std::size_t past = 0);

  bool allowed(std::size_t q, std::size_t k) const { return allow[q * keys + k] != 0; }
  void set(std::size_t q, std::size_t k, bool v = true) { allow[q * keys + k] = v ? 1 : 0; }
};

// Records dense attention weights (queries x keys, per head) of every
// attention primitive evaluated while attached to a graph.
struct AttentionProbe {
  struct Record {
    int heads = 0;
    std::size_t queries = 0;
    std::size_t keys = 0;
    std::vector<double> weights;  // [head][query][key]
  };
  std::vector<Record> records;
};

struct Value {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Tape of primitive applications in creation (topological) order.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, int)>;

  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Value constant(Tensor t);
  // Borrows `t`; it must outlive the graph. Never receives gradients.
  Value constant_ref(const Tensor& t);
  // Leaf bound to `p`; backward accumulates into p.grad.
  Value param(Parameter& p);

  const Tensor& value(Value v) const;
  // Zero tensor of the right shape if no gradient reached `v`.
  Tensor grad(Value v) const;
  bool needs_grad(Value v) const { return node(v).needs_grad; }

  // `loss` must be a 1x1 node.
  void backward(Value loss);

  std::size_t size() const { return nodes_.size(); }

  void set_probe(AttentionProbe* probe) { probe_ = probe; }
  AttentionProbe* probe() const { return probe_; }

  // Op plumbing.
  Value push(Tensor value, std::vector<Value> inputs, BackwardFn fn, const char* op);
  Tensor& grad_ref(Value v);  // allocates zeros on first use
  const Tensor& grad_of(int id) const { return nodes_[id].grad; }
  Value input(int id, std::size_t i) const { return nodes_[id].inputs[i]; }

 private:
  struct Node {
    Tensor owned;
    const Tensor* borrowed = nullptr;
    Tensor grad;
    std::vector<Value> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool needs_grad = false;
    const Tensor& value() const { return borrowed ? *borrowed : owned; }
  };
  const Node& node(Value v) const;

  bool grad_enabled_;
  AttentionProbe* probe_ = nullptr;
  std::vector<Node> nodes_;
};

namespace ad {

Value matmul(Graph& g, Value a, Value b);
Value add(Graph& g, Value a, Value b);
Value add_bias(Graph& g, Value a, Value bias);
Value scale(Graph& g, Value a, double s);
Value rms_norm(Graph& g, Value x, Value weight, double eps = 1e-6);
Value silu(Graph& g, Value x);
Value gather_rows(Graph& g, Value table, std::span<const std::size_t> rows);
Value concat_cols(Graph& g, std::span<const Value> parts);
Value concat_rows(Graph& g, std::span<const Value> parts);
Value slice_rows(Graph& g, Value x, std::size_t begin, std::size_t count);
// Multi-head scaled dot-product attention; masked keys get exactly zero
// weight and are skipped entirely.
Value attention(Graph& g, Value q, Value k, Value v, const AttentionMask& mask, int heads);
Value softmax_rows(Graph& g, Value x, double temperature = 1.0);
// Mean over rows of -sum target * log softmax(logits).
Value cross_entropy(Graph& g, Value logits, const Tensor& target);
// Mean over elements, transition point `beta`.
Value smooth_l1(Graph& g, Value pred, const Tensor& target, double beta = 1.0);

}  // namespace ad

namespace kernels {

// c = a * b, row-major; accumulation runs over the inner index in order,
// so each output row depends only on the matching input row.
void gemm(const double* a, const double* b, double* c, std::size_t n, std::size_t m,
          std::size_t p);

}  // namespace kernels

}  // namespace sdlab
