#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "haht/params.hpp"
#include "haht/rng.hpp"
#include "haht/tape.hpp"
#include "haht/tensor.hpp"

namespace haht {

// ---------------------------------------------------------------------------
// Node-level building blocks (shared by the public wrappers and the model).
// Parameter naming convention:
//   attention prefix P:    P.wq P.wk P.wv P.wo P.bq P.bk P.bv P.bo  (d x d / d)
//   encoder layer i of S:  S<i>.attn.* S<i>.ln1.{g,b} S<i>.ffn.{w1,b1,w2,b2} S<i>.ln2.{g,b}
//   decoder layer i of S:  S<i>.self.* S<i>.ln1.* S<i>.cross.* S<i>.ln2.* S<i>.ffn.* S<i>.ln3.*
// ---------------------------------------------------------------------------

struct DropoutCtx {
    double rate = 0.0;
    Rng* rng = nullptr;  // null disables dropout regardless of rate
};

// Boolean attention mask, rows = queries, cols = keys. Nonzero = attend.
std::vector<std::uint8_t> make_attention_mask(std::size_t n_q, std::size_t n_k,
                                              const std::vector<std::uint8_t>& key_mask,
                                              bool causal);

// Scaled dot-product multi-head attention. `mask` is n_q x n_k row-major.
NodeId attention_nodes(Tape& t, ParameterStore const& store, const std::string& prefix,
                       NodeId queries, NodeId keys_values,
                       const std::vector<std::uint8_t>& mask, int n_heads);

// Pre-norm encoder layer stack. `pos_mask[i]` nonzero = position i is real.
NodeId encoder_stack_nodes(Tape& t, ParameterStore const& store, const std::string& stack,
                           NodeId x, const std::vector<std::uint8_t>& pos_mask, int n_layers,
                           int n_heads, const DropoutCtx& drop = {});

// Pre-norm decoder layer stack: causal self-attention, cross-attention over
// `memory` (skipped when memory has zero rows), feed-forward.
NodeId decoder_stack_nodes(Tape& t, ParameterStore const& store, const std::string& stack,
                           NodeId targets, NodeId memory,
                           const std::vector<std::uint8_t>& memory_mask, int n_layers,
                           int n_heads, const DropoutCtx& drop = {});

// Registers the parameters for one attention block / encoder stack / decoder
// stack, initialized deterministically from `rng`.
void add_attention_params(ParameterStore& store, const std::string& prefix, int d, Rng& rng);
void add_encoder_stack_params(ParameterStore& store, const std::string& stack, int d, int d_ff,
                              int n_layers, Rng& rng);
void add_decoder_stack_params(ParameterStore& store, const std::string& stack, int d, int d_ff,
                              int n_layers, Rng& rng);

Tensor xavier_uniform(std::size_t rows, std::size_t cols, Rng& rng);

// Fixed sinusoidal positional encodings, one row per position.
Tensor sinusoidal_encoding(std::size_t n_positions, std::size_t d);

// ---------------------------------------------------------------------------
// Tensor-level operations.
// ---------------------------------------------------------------------------

// Exp-normalizes the unmasked entries of `logits`; masked entries are exactly
// zero. Throws if every mask entry is false.
Tensor masked_softmax(const Tensor& logits, const std::vector<std::uint8_t>& mask);

// One attention pass with explicit weights taken from `store` under `prefix`.
Tensor multi_head_attention(const Tensor& queries, const Tensor& keys_values,
                            const std::vector<std::uint8_t>& key_mask, bool causal,
                            ParameterStore const& store, const std::string& prefix, int n_heads);

Tensor encoder_stack(const Tensor& inputs, const std::vector<std::uint8_t>& pad_mask,
                     int n_layers, int n_heads, ParameterStore const& store,
                     const std::string& stack);

Tensor decoder_stack(const Tensor& targets, const Tensor& memory,
                     const std::vector<std::uint8_t>& memory_mask, int n_layers, int n_heads,
                     ParameterStore const& store, const std::string& stack);

// Elementwise maximum over unmasked rows.
Tensor max_pool_masked(const Tensor& rows, const std::vector<std::uint8_t>& mask);

}  // namespace haht
