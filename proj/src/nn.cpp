#include "haht/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace haht {

std::vector<std::uint8_t> make_attention_mask(std::size_t n_q, std::size_t n_k,
                                              const std::vector<std::uint8_t>& key_mask,
                                              bool causal) {
    if (!key_mask.empty() && key_mask.size() != n_k)
        throw std::invalid_argument("make_attention_mask: key mask length mismatch");
    std::vector<std::uint8_t> mask(n_q * n_k, 1);
    for (std::size_t i = 0; i < n_q; ++i)
        for (std::size_t j = 0; j < n_k; ++j) {
            bool keep = key_mask.empty() || key_mask[j];
            if (causal && j > i) keep = false;
            mask[i * n_k + j] = keep ? 1 : 0;
        }
    return mask;
}

NodeId attention_nodes(Tape& t, ParameterStore const& store, const std::string& prefix,
                       NodeId queries, NodeId keys_values,
                       const std::vector<std::uint8_t>& mask, int n_heads) {
    const std::size_t n_q = t.val(queries).rows();
    const std::size_t n_k = t.val(keys_values).rows();
    const std::size_t d = t.val(queries).cols();
    if (n_heads <= 0 || d % static_cast<std::size_t>(n_heads) != 0)
        throw std::invalid_argument("attention: d must be divisible by n_heads");
    if (mask.size() != n_q * n_k) throw std::invalid_argument("attention: mask size mismatch");
    for (std::size_t i = 0; i < n_q; ++i) {
        bool any = false;
        for (std::size_t j = 0; j < n_k; ++j) any = any || mask[i * n_k + j];
        if (!any) throw std::invalid_argument("attention: query row with every key masked");
    }
    const std::size_t dh = d / static_cast<std::size_t>(n_heads);

    NodeId q = t.add_rowvec(t.matmul(queries, t.param(prefix + ".wq", store)),
                            t.param(prefix + ".bq", store));
    // No key bias: a per-key constant shift cancels inside the row softmax.
    NodeId k = t.matmul(keys_values, t.param(prefix + ".wk", store));
    NodeId v = t.add_rowvec(t.matmul(keys_values, t.param(prefix + ".wv", store)),
                            t.param(prefix + ".bv", store));

    std::vector<NodeId> heads;
    for (int h = 0; h < n_heads; ++h) {
        const std::size_t c0 = static_cast<std::size_t>(h) * dh;
        NodeId qh = t.slice_cols(q, c0, c0 + dh);
        NodeId kh = t.slice_cols(k, c0, c0 + dh);
        NodeId vh = t.slice_cols(v, c0, c0 + dh);
        NodeId scores = t.scale(t.matmul(qh, t.transpose(kh)), 1.0 / std::sqrt(double(dh)));
        NodeId weights = t.softmax_rows_masked(scores, mask);
        heads.push_back(t.matmul(weights, vh));
    }
    NodeId merged = n_heads == 1 ? heads[0] : t.concat_cols(heads);
    return t.add_rowvec(t.matmul(merged, t.param(prefix + ".wo", store)),
                        t.param(prefix + ".bo", store));
}

namespace {

NodeId ffn_nodes(Tape& t, ParameterStore const& store, const std::string& prefix, NodeId x) {
    NodeId h = t.gelu(t.add_rowvec(t.matmul(x, t.param(prefix + ".w1", store)),
                                   t.param(prefix + ".b1", store)));
    return t.add_rowvec(t.matmul(h, t.param(prefix + ".w2", store)),
                        t.param(prefix + ".b2", store));
}

NodeId ln_nodes(Tape& t, ParameterStore const& store, const std::string& prefix, NodeId x) {
    return t.layer_norm(x, t.param(prefix + ".g", store), t.param(prefix + ".b", store));
}

NodeId maybe_dropout(Tape& t, NodeId x, const DropoutCtx& drop) {
    if (drop.rng == nullptr || drop.rate <= 0.0) return x;
    return t.dropout(x, drop.rate, *drop.rng);
}

}  // namespace

NodeId encoder_stack_nodes(Tape& t, ParameterStore const& store, const std::string& stack,
                           NodeId x, const std::vector<std::uint8_t>& pos_mask, int n_layers,
                           int n_heads, const DropoutCtx& drop) {
    const std::size_t n = t.val(x).rows();
    if (n == 0) throw std::invalid_argument("encoder_stack: empty input");
    bool any = pos_mask.empty();
    for (std::uint8_t m : pos_mask) any = any || m;
    if (!any) throw std::invalid_argument("encoder_stack: all positions masked");
    auto mask = make_attention_mask(n, n, pos_mask, /*causal=*/false);
    NodeId h = x;
    for (int l = 0; l < n_layers; ++l) {
        const std::string p = stack + std::to_string(l);
        NodeId normed = ln_nodes(t, store, p + ".ln1", h);
        NodeId att = attention_nodes(t, store, p + ".attn", normed, normed, mask, n_heads);
        h = t.add(h, maybe_dropout(t, att, drop));
        NodeId ff = ffn_nodes(t, store, p + ".ffn", ln_nodes(t, store, p + ".ln2", h));
        h = t.add(h, maybe_dropout(t, ff, drop));
    }
    return h;
}

NodeId decoder_stack_nodes(Tape& t, ParameterStore const& store, const std::string& stack,
                           NodeId targets, NodeId memory,
                           const std::vector<std::uint8_t>& memory_mask, int n_layers,
                           int n_heads, const DropoutCtx& drop) {
    const std::size_t n_t = t.val(targets).rows();
    if (n_t == 0) throw std::invalid_argument("decoder_stack: empty target");
    const std::size_t n_m = t.val(memory).rows();
    auto self_mask = make_attention_mask(n_t, n_t, {}, /*causal=*/true);
    std::vector<std::uint8_t> cross_mask;
    if (n_m > 0) cross_mask = make_attention_mask(n_t, n_m, memory_mask, /*causal=*/false);
    NodeId h = targets;
    for (int l = 0; l < n_layers; ++l) {
        const std::string p = stack + std::to_string(l);
        NodeId normed = ln_nodes(t, store, p + ".ln1", h);
        NodeId att = attention_nodes(t, store, p + ".self", normed, normed, self_mask, n_heads);
        h = t.add(h, maybe_dropout(t, att, drop));
        if (n_m > 0) {
            NodeId q = ln_nodes(t, store, p + ".ln2", h);
            NodeId cross = attention_nodes(t, store, p + ".cross", q, memory, cross_mask, n_heads);
            h = t.add(h, maybe_dropout(t, cross, drop));
        }
        NodeId ff = ffn_nodes(t, store, p + ".ffn", ln_nodes(t, store, p + ".ln3", h));
        h = t.add(h, maybe_dropout(t, ff, drop));
    }
    return h;
}

Tensor xavier_uniform(std::size_t rows, std::size_t cols, Rng& rng) {
    Tensor t(rows, cols);
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    for (std::size_t i = 0; i < t.numel(); ++i) t(i) = rng.uniform(-limit, limit);
    return t;
}

void add_attention_params(ParameterStore& store, const std::string& prefix, int d, Rng& rng) {
    const auto ud = static_cast<std::size_t>(d);
    for (const char* w : {".wq", ".wk", ".wv", ".wo"})
        store.add(prefix + w, xavier_uniform(ud, ud, rng));
    for (const char* b : {".bq", ".bv", ".bo"})
        store.add(prefix + b, Tensor(1, ud));
}

namespace {

void add_ln_params(ParameterStore& store, const std::string& prefix, int d) {
    Tensor gain(1, static_cast<std::size_t>(d));
    gain.fill(1.0);
    store.add(prefix + ".g", gain);
    store.add(prefix + ".b", Tensor(1, static_cast<std::size_t>(d)));
}

void add_ffn_params(ParameterStore& store, const std::string& prefix, int d, int d_ff, Rng& rng) {
    const auto ud = static_cast<std::size_t>(d), uf = static_cast<std::size_t>(d_ff);
    store.add(prefix + ".w1", xavier_uniform(ud, uf, rng));
    store.add(prefix + ".b1", Tensor(1, uf));
    store.add(prefix + ".w2", xavier_uniform(uf, ud, rng));
    store.add(prefix + ".b2", Tensor(1, ud));
}

}  // namespace

void add_encoder_stack_params(ParameterStore& store, const std::string& stack, int d, int d_ff,
                              int n_layers, Rng& rng) {
    for (int l = 0; l < n_layers; ++l) {
        const std::string p = stack + std::to_string(l);
        add_attention_params(store, p + ".attn", d, rng);
        add_ln_params(store, p + ".ln1", d);
        add_ffn_params(store, p + ".ffn", d, d_ff, rng);
        add_ln_params(store, p + ".ln2", d);
    }
}

void add_decoder_stack_params(ParameterStore& store, const std::string& stack, int d, int d_ff,
                              int n_layers, Rng& rng) {
    for (int l = 0; l < n_layers; ++l) {
        const std::string p = stack + std::to_string(l);
        add_attention_params(store, p + ".self", d, rng);
        add_ln_params(store, p + ".ln1", d);
        add_attention_params(store, p + ".cross", d, rng);
        add_ln_params(store, p + ".ln2", d);
        add_ffn_params(store, p + ".ffn", d, d_ff, rng);
        add_ln_params(store, p + ".ln3", d);
    }
}

Tensor sinusoidal_encoding(std::size_t n_positions, std::size_t d) {
    Tensor pe(n_positions, d);
    for (std::size_t pos = 0; pos < n_positions; ++pos) {
        for (std::size_t i = 0; i < d; i += 2) {
            const double angle =
                static_cast<double>(pos) /
                std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
            pe(pos, i) = std::sin(angle);
            if (i + 1 < d) pe(pos, i + 1) = std::cos(angle);
        }
    }
    return pe;
}

Tensor masked_softmax(const Tensor& logits, const std::vector<std::uint8_t>& mask) {
    if (logits.rank() != 1) throw std::invalid_argument("masked_softmax: expected a vector");
    if (mask.size() != logits.numel())
        throw std::invalid_argument("masked_softmax: mask length mismatch");
    Tape t;
    NodeId x = t.input(Tensor::row_matrix(logits.data()));
    NodeId y = t.softmax_rows_masked(x, mask);
    return Tensor::from_vector(t.val(y).data());
}

Tensor multi_head_attention(const Tensor& queries, const Tensor& keys_values,
                            const std::vector<std::uint8_t>& key_mask, bool causal,
                            ParameterStore const& store, const std::string& prefix, int n_heads) {
    Tape t;
    NodeId q = t.input(queries);
    NodeId kv = t.input(keys_values);
    auto mask = make_attention_mask(queries.rows(), keys_values.rows(), key_mask, causal);
    return t.val(attention_nodes(t, store, prefix, q, kv, mask, n_heads));
}

Tensor encoder_stack(const Tensor& inputs, const std::vector<std::uint8_t>& pad_mask,
                     int n_layers, int n_heads, ParameterStore const& store,
                     const std::string& stack) {
    Tape t;
    NodeId x = t.input(inputs);
    return t.val(encoder_stack_nodes(t, store, stack, x, pad_mask, n_layers, n_heads));
}

Tensor decoder_stack(const Tensor& targets, const Tensor& memory,
                     const std::vector<std::uint8_t>& memory_mask, int n_layers, int n_heads,
                     ParameterStore const& store, const std::string& stack) {
    Tape t;
    NodeId x = t.input(targets);
    NodeId m = t.input(memory);
    return t.val(decoder_stack_nodes(t, store, stack, x, m, memory_mask, n_layers, n_heads));
}

Tensor max_pool_masked(const Tensor& rows, const std::vector<std::uint8_t>& mask) {
    Tape t;
    NodeId x = t.input(rows);
    NodeId y = t.max_pool_rows(x, mask);
    return Tensor::from_vector(t.val(y).data());
}

}  // namespace haht
