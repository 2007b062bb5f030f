#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "qdt/rng.hpp"
#include "qdt/tensor.hpp"

namespace qdt::nn {

using NodeId = std::uint32_t;

// A named trainable tensor with a gradient accumulator. Owned by a
// ParameterStore; Graph leaves bind to it by reference.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool decay = false;  // opted into weight decay (matrix weights only)
};

class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;
  ParameterStore(ParameterStore&&) = default;
  ParameterStore& operator=(ParameterStore&&) = default;

  Parameter& add(const std::string& name, Tensor init);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool has(const std::string& name) const;
  void zero_grad();
  std::size_t n_scalars() const;
  std::size_t size() const { return params_.size(); }

  // Insertion order, which fixes optimizer iteration order.
  Parameter& at(std::size_t i) { return *params_[i]; }
  const Parameter& at(std::size_t i) const { return *params_[i]; }

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Reverse-mode tape over Tensor-valued ops. Nodes are created in forward
// order; backward() walks them in reverse, which is a valid topological
// order because every op is created after its inputs.
//
// Shape conventions: sequences/batches are [rows x feature], biases are
// [1 x feature], scalar losses are [1 x 1].
class Graph {
 public:
  // Leaf holding a constant (no gradient is reported for it, but one is
  // still computed so finite-difference checks can read it).
  NodeId input(Tensor value);

  // Leaf bound to a parameter. One node per parameter per graph; repeated
  // calls return the cached node so gradients from all uses accumulate.
  NodeId param(Parameter& p);

  NodeId matmul(NodeId a, NodeId b);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);  // elementwise
  NodeId scale(NodeId x, double c);
  NodeId add_bias(NodeId x, NodeId bias);  // bias [1 x C] broadcast over rows
  NodeId relu(NodeId x);
  NodeId gelu(NodeId x);
  NodeId layer_norm(NodeId x, NodeId gain, NodeId bias);  // per row, eps 1e-5

  // out[i, :] = src[rows[i], :]  (embedding lookup and window slicing)
  NodeId gather_rows(NodeId src, std::vector<int> rows);

  // out is [n_dst_rows x C] zeros with out[dst[i], :] += src[i, :]
  NodeId scatter_rows(NodeId src, std::vector<int> dst, std::size_t n_dst_rows);

  // Inverted dropout. Identity when train is false or p == 0.
  NodeId dropout(NodeId x, double p, bool train, Rng& rng);

  // Multi-head causal self-attention over n_seq packed windows of length
  // seq_len (rows grouped per window). qkv is [n_seq*seq_len x 3*D] with
  // column blocks Q|K|V. Position j is visible to query i within a window
  // iff j <= i and (j >= first_valid[window] or j == i); rows before
  // first_valid are padding and attend only to themselves.
  NodeId causal_self_attention(NodeId qkv, std::size_t n_seq,
                               std::size_t seq_len, std::size_t n_heads,
                               std::vector<int> first_valid);

  // Weighted mean of per-row cross-entropy between softmax(logits) and
  // target class ids. Rows with weight 0 are ignored (target may be -1).
  // Empty weights means weight 1 for every row.
  NodeId softmax_cross_entropy(NodeId logits, std::vector<int> targets,
                               std::vector<double> weights = {});

  NodeId logsumexp_rows(NodeId x);                       // [N x C] -> [N x 1]
  NodeId select_per_row(NodeId x, std::vector<int> cols);  // -> [N x 1]
  NodeId sum(NodeId x);   // -> [1 x 1]
  NodeId mean(NodeId x);  // -> [1 x 1]

  const Tensor& value(NodeId id) const { return nodes_[id].value; }
  const Tensor& grad(NodeId id) const { return nodes_[id].grad; }

  // Seeds d(loss)/d(loss) = 1, sweeps the tape in reverse, then adds each
  // parameter leaf's gradient into Parameter::grad.
  void backward(NodeId loss);

  // Drops all nodes (keeps vector capacity) for the next step.
  void clear();

  std::size_t size() const { return nodes_.size(); }

  struct NonFinite {
    std::string op;
    NodeId node;
  };
  // First node (creation order) whose value holds a NaN/Inf, if any.
  std::optional<NonFinite> find_non_finite() const;

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    const char* op;
    Parameter* bound = nullptr;
    std::function<void(Graph&, const Node&)> backward;
  };

  NodeId emplace(const char* op, Tensor value,
                 std::function<void(Graph&, const Node&)> backward,
                 Parameter* bound = nullptr);
  Tensor& grad_ref(NodeId id) { return nodes_[id].grad; }
  const Tensor& val(NodeId id) const { return nodes_[id].value; }
  void require_same_shape(const char* op, NodeId a, NodeId b) const;

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, NodeId> param_nodes_;
};

}  // namespace qdt::nn
