#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "haht/params.hpp"
#include "haht/rng.hpp"
#include "haht/tensor.hpp"

namespace haht {

// Reverse-mode autodiff over Tensor values. Forward values are computed
// eagerly as nodes are recorded; backward() replays the tape in reverse.
// Nodes are addressed by index so the tape can grow without invalidating
// handles. One tape per forward pass.
class Tape {
public:
    using NodeId = int;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Leaves.
    NodeId input(Tensor v);
    // Parameter leaf; repeated requests for the same name return the same
    // node so gradients from every use accumulate in one place.
    NodeId param(const std::string& name, const ParameterStore& store);

    // Elementwise / shape ops.
    NodeId add(NodeId a, NodeId b);
    NodeId scale(NodeId a, double s);
    NodeId add_rowvec(NodeId m, NodeId v);  // v is 1 x cols, added to each row
    NodeId tanh_op(NodeId a);
    NodeId gelu(NodeId a);
    NodeId log_op(NodeId a);
    NodeId transpose(NodeId a);
    NodeId matmul(NodeId a, NodeId b);
    NodeId layer_norm(NodeId x, NodeId gain, NodeId bias, double eps = 1e-5);

    // Softmax over each row; masked variant zeroes masked positions exactly.
    // `mask` is row-major rows x cols, nonzero = keep. Throws if any row is
    // fully masked.
    NodeId softmax_rows(NodeId x);
    NodeId softmax_rows_masked(NodeId x, std::vector<std::uint8_t> mask);

    // Row-wise structure.
    NodeId concat_rows(const std::vector<NodeId>& parts);
    NodeId slice_rows(NodeId x, std::size_t r0, std::size_t r1);
    NodeId concat_cols(const std::vector<NodeId>& parts);
    NodeId slice_cols(NodeId x, std::size_t c0, std::size_t c1);
    NodeId tile_rows(NodeId v, std::size_t n);  // v is 1 x c -> n x c

    // Elementwise max over unmasked rows -> 1 x c. Ties route the gradient to
    // the lowest row index.
    NodeId max_pool_rows(NodeId x, std::vector<std::uint8_t> row_mask);

    // Embedding gather: rows of `table` selected by ids -> n x d.
    NodeId embedding_rows(NodeId table, std::vector<int> ids);

    // Inverted dropout; identity when rate <= 0.
    NodeId dropout(NodeId x, double rate, Rng& rng);

    // P[t][v] = alphas[t][0] * pvg[t][v] + alphas[t][1] * pvh[0][v].
    NodeId mixture(NodeId pvg, NodeId alphas, NodeId pvh);

    // out[0][t] = p[t][ids[t]].
    NodeId pick_per_row(NodeId p, std::vector<int> ids);

    NodeId sum_all(NodeId a);  // -> 1 x 1

    const Tensor& val(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].val; }
    Tensor& grad(NodeId id) { return nodes_[static_cast<std::size_t>(id)].grad; }

    // Backpropagates from a scalar (1x1 or single-element) node.
    void backward(NodeId root);

    // Adds scale * (parameter leaf gradients) into store.grads.
    void accumulate_param_grads(ParameterStore& store, double scale = 1.0) const;

    // Same, into an external name-keyed accumulator holding matching tensors.
    void accumulate_param_grads_into(std::map<std::string, Tensor>& acc, double scale = 1.0) const;

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor val;
        Tensor grad;
        std::function<void()> back;  // empty for leaves
        std::string param_name;
    };

    NodeId push(Tensor val, std::function<void()> back = {}, std::string param_name = {});
    Tensor& val_mut(NodeId id) { return nodes_[static_cast<std::size_t>(id)].val; }

    std::vector<Node> nodes_;
    std::unordered_map<std::string, NodeId> param_nodes_;
    bool backward_done_ = false;
};

using NodeId = Tape::NodeId;

}  // namespace haht
