#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "haht/data.hpp"
#include "haht/nn.hpp"
#include "haht/params.hpp"
#include "haht/tape.hpp"
#include "haht/tensor.hpp"

namespace haht {

struct ModelConfig {
    int d = 64;
    int d_ff = 128;
    int n_heads = 2;
    int n_enc = 2;
    int n_dec = 2;
    int l_utter = 32;
    int l_ctx = 256;
    int d_a = 64;
    int vocab_size = 0;
    int max_history_sessions = 4;
    double dropout = 0.1;
    std::uint64_t seed = 1;
    bool share_utterance_encoder = true;   // context encoder layers reused for utterances
    bool session_pos_embedding = false;    // learned per-session index embedding on memory rows

    void validate() const;
};

enum class Variant { Full, NoHier, NoHist, NoSw };

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);

// Role-prepended context token ids, left-truncated to the most recent l_ctx.
struct ContextTokens {
    std::vector<int> ids;
    std::vector<std::size_t> utterance_starts;  // diagnostic, post-truncation
};

ContextTokens prepare_context_tokens(const Session& context, const Vocabulary& vocab, int l_ctx);

// Example converted to id space, ready for the tape.
struct TokenizedExample {
    std::vector<std::vector<std::vector<int>>> history_ids;  // session -> utterance -> l_utter ids
    std::vector<int> context_ids;
    std::vector<int> flat_ids;          // history + context flattened (no hierarchy)
    HistoryVocabMask history_mask;
    std::vector<int> target_in;         // BOS y_1 .. y_n
    std::vector<int> target_out;        // y_1 .. y_n EOS
    std::size_t session_count = 0;
};

// History memory C plus the per-session attention weights (diagnostic).
struct HistoryMemory {
    Tensor c;                           // M x d
    std::vector<Tensor> alphas;         // one probability vector per session
};

struct ContextEncoding {
    Tensor c_s;  // M x d (0 x d when no memory)
    Tensor s_c;  // n_x x d
};

struct StepDiagnostics {
    bool switch_active = false;
    double alpha_vg = 1.0;
    double alpha_vh = 0.0;
    Tensor p_vg;
    Tensor p_vh;
};

struct GenerationOutput {
    std::vector<int> ids;               // emitted tokens, EOS excluded
    std::vector<double> alpha_vg;       // per step, empty when the switch is bypassed
    std::vector<double> alpha_vh;
    std::vector<bool> copied;           // history share exceeded generic share
    bool ended_with_eos = false;
    bool switch_active = false;
};

// Mixture of the two distributions; exposed separately so degenerate switch
// weights can be exercised directly.
Tensor mix_distributions(const Tensor& p_vg, const Tensor& p_vh, double alpha_vg, double alpha_vh);

// Greedy argmax loop over an arbitrary per-step distribution source.
// PAD/BOS/role ids never win; exact ties go to the lower id.
GenerationOutput greedy_decode_with(
    const std::function<Tensor(const std::vector<int>& prefix, StepDiagnostics*)>& step,
    int max_len);

class HahtModel {
public:
    HahtModel(ModelConfig cfg, Variant variant);

    // Fresh model with deterministically initialized parameters.
    static HahtModel init(const ModelConfig& cfg, Variant variant);

    const ModelConfig& config() const { return cfg_; }
    Variant variant() const { return variant_; }
    ParameterStore& params() { return params_; }
    const ParameterStore& params() const { return params_; }

    TokenizedExample preprocess(const MscExample& example, const Vocabulary& vocab) const;

    // --- history encoder ---
    Tensor encode_utterance(const std::vector<int>& utterance_ids) const;
    std::pair<Tensor, Tensor> aggregate_session(const Tensor& session_matrix) const;  // (c, alpha)
    HistoryMemory encode_history(const std::vector<Session>& history, const Vocabulary& vocab) const;

    // --- context encoder ---
    ContextEncoding encode_context(const Tensor& history_memory,
                                   const std::vector<int>& context_ids) const;

    // Variant-aware encoding of a preprocessed example (inference path).
    ContextEncoding encode_example(const TokenizedExample& ex) const;

    // --- generator ---
    Tensor decoder_hidden(const ContextEncoding& enc, const std::vector<int>& prefix) const;
    Tensor generic_distribution(const Tensor& o_t) const;
    Tensor history_distribution(const Tensor& c_s, const HistoryVocabMask& mask) const;
    std::pair<double, double> switch_probabilities(const Tensor& o_t, const Tensor& c_s) const;
    Tensor next_token_distribution(const ContextEncoding& enc, const std::vector<int>& prefix,
                                   const HistoryVocabMask& mask,
                                   StepDiagnostics* diag = nullptr) const;

    double sequence_nll(const TokenizedExample& ex) const;
    double sequence_nll(const MscExample& example, const Vocabulary& vocab) const;

    // Teacher-forced loss; scaled gradients are added into `grad_acc`, which
    // must hold zero-initialized tensors keyed like params(). Thread-safe
    // across distinct accumulators.
    double loss_and_grad_into(const TokenizedExample& ex, std::map<std::string, Tensor>& grad_acc,
                              double grad_scale, Rng* dropout_rng, double dropout_rate) const;

    // Convenience: accumulates into the store's own gradients.
    double loss_and_grad(const TokenizedExample& ex, double grad_scale, Rng* dropout_rng);

    // (correct, total) over teacher-forced argmax predictions.
    std::pair<std::size_t, std::size_t> token_accuracy(const TokenizedExample& ex) const;

    GenerationOutput greedy_decode(const ContextEncoding& enc, const HistoryVocabMask& mask,
                                   int max_len) const;
    GenerationOutput decode_example(const TokenizedExample& ex, int max_len) const;

    bool switch_enabled(const TokenizedExample& ex) const;

private:
    struct EncodeNodes {
        NodeId memory = -1;           // decoder cross-attention input
        std::vector<std::uint8_t> memory_mask;
        std::size_t m_rows = 0;
        NodeId pooled_cs = -1;        // 1 x d, only when the switch is active
        bool switch_active = false;
        HistoryVocabMask vocab_mask;  // V_h membership, only when the switch is active
    };

    std::string utterance_stack() const { return cfg_.share_utterance_encoder ? "enc" : "uenc"; }

    NodeId encode_utterance_nodes(Tape& t, const std::vector<int>& ids,
                                  const DropoutCtx& drop) const;
    std::pair<NodeId, NodeId> aggregate_session_nodes(Tape& t, NodeId session_matrix) const;
    NodeId context_embedding_nodes(Tape& t, const std::vector<int>& ids,
                                   const DropoutCtx& drop) const;
    EncodeNodes encode_nodes(Tape& t, const TokenizedExample& ex, const DropoutCtx& drop) const;
    NodeId decode_probs_nodes(Tape& t, const EncodeNodes& enc, const std::vector<int>& dec_in,
                              const DropoutCtx& drop) const;
    NodeId loss_node(Tape& t, const TokenizedExample& ex, const DropoutCtx& drop) const;

    ModelConfig cfg_;
    Variant variant_;
    ParameterStore params_;
    Tensor positional_;  // precomputed sinusoidal table
};

}  // namespace haht
