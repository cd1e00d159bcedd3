#include "haht/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace haht {

void ModelConfig::validate() const {
    if (d <= 0 || n_heads <= 0 || d % n_heads != 0)
        throw std::invalid_argument("ModelConfig: d must be a positive multiple of n_heads");
    if (d_ff <= 0 || d_a <= 0) throw std::invalid_argument("ModelConfig: widths must be positive");
    if (n_enc < 0 || n_dec < 0) throw std::invalid_argument("ModelConfig: layer counts must be >= 0");
    if (l_utter < 2) throw std::invalid_argument("ModelConfig: l_utter must be >= 2");
    if (l_ctx < 1) throw std::invalid_argument("ModelConfig: l_ctx must be >= 1");
    if (vocab_size < Vocabulary::kReservedCount)
        throw std::invalid_argument("ModelConfig: vocab_size below reserved count");
    if (dropout < 0.0 || dropout >= 1.0)
        throw std::invalid_argument("ModelConfig: dropout must be in [0, 1)");
    if (max_history_sessions < 0)
        throw std::invalid_argument("ModelConfig: max_history_sessions must be >= 0");
}

std::string variant_name(Variant v) {
    switch (v) {
        case Variant::Full: return "full";
        case Variant::NoHier: return "no-hier";
        case Variant::NoHist: return "no-hist";
        case Variant::NoSw: return "no-sw";
    }
    throw std::logic_error("variant_name: bad variant");
}

Variant variant_from_name(const std::string& name) {
    if (name == "full") return Variant::Full;
    if (name == "no-hier") return Variant::NoHier;
    if (name == "no-hist") return Variant::NoHist;
    if (name == "no-sw") return Variant::NoSw;
    throw std::invalid_argument("unknown variant: " + name);
}

ContextTokens prepare_context_tokens(const Session& context, const Vocabulary& vocab, int l_ctx) {
    if (context.empty()) throw std::invalid_argument("prepare_context_tokens: empty context");
    ContextTokens out;
    for (const auto& u : context.utterances) {
        out.utterance_starts.push_back(out.ids.size());
        out.ids.push_back(Vocabulary::role_id(u.role));
        for (const auto& tok : u.tokens) out.ids.push_back(vocab.lookup(tok));
    }
    const std::size_t limit = static_cast<std::size_t>(l_ctx);
    if (out.ids.size() > limit) {
        const std::size_t drop = out.ids.size() - limit;
        out.ids.erase(out.ids.begin(), out.ids.begin() + static_cast<std::ptrdiff_t>(drop));
        std::vector<std::size_t> starts;
        for (std::size_t s : out.utterance_starts)
            if (s >= drop) starts.push_back(s - drop);
        out.utterance_starts = std::move(starts);
    }
    return out;
}

Tensor mix_distributions(const Tensor& p_vg, const Tensor& p_vh, double alpha_vg,
                         double alpha_vh) {
    if (p_vg.numel() != p_vh.numel())
        throw std::invalid_argument("mix_distributions: size mismatch");
    Tensor out = p_vg;
    for (std::size_t i = 0; i < out.numel(); ++i)
        out(i) = alpha_vg * p_vg(i) + alpha_vh * p_vh(i);
    return out;
}

GenerationOutput greedy_decode_with(
    const std::function<Tensor(const std::vector<int>& prefix, StepDiagnostics*)>& step,
    int max_len) {
    if (max_len < 1) throw std::invalid_argument("greedy_decode: max_len must be >= 1");
    GenerationOutput out;
    std::vector<int> prefix = {Vocabulary::kBos};
    for (int s = 0; s < max_len; ++s) {
        StepDiagnostics diag;
        Tensor p = step(prefix, &diag);
        if (s == 0) out.switch_active = diag.switch_active;
        int best = -1;
        double best_p = -1.0;
        for (std::size_t v = 0; v < p.numel(); ++v) {
            const int id = static_cast<int>(v);
            if (id == Vocabulary::kPad || id == Vocabulary::kBos || id == Vocabulary::kRoleUser ||
                id == Vocabulary::kRoleAssistant)
                continue;
            if (p(v) > best_p) {  // strict: ties keep the lower id
                best_p = p(v);
                best = id;
            }
        }
        if (best == Vocabulary::kEos) {
            out.ended_with_eos = true;
            break;
        }
        out.ids.push_back(best);
        prefix.push_back(best);
        if (diag.switch_active) {
            out.alpha_vg.push_back(diag.alpha_vg);
            out.alpha_vh.push_back(diag.alpha_vh);
            const auto uv = static_cast<std::size_t>(best);
            out.copied.push_back(diag.alpha_vh * diag.p_vh(uv) > diag.alpha_vg * diag.p_vg(uv));
        } else {
            out.copied.push_back(false);
        }
    }
    return out;
}

HahtModel::HahtModel(ModelConfig cfg, Variant variant) : cfg_(cfg), variant_(variant) {
    cfg_.validate();
    const std::size_t pe_rows =
        static_cast<std::size_t>(std::max({cfg_.l_ctx, cfg_.l_utter, 512}));
    positional_ = sinusoidal_encoding(pe_rows, static_cast<std::size_t>(cfg_.d));
}

HahtModel HahtModel::init(const ModelConfig& cfg, Variant variant) {
    HahtModel model(cfg, variant);
    Rng rng(cfg.seed);
    ParameterStore& p = model.params_;
    const auto v = static_cast<std::size_t>(cfg.vocab_size);
    const auto d = static_cast<std::size_t>(cfg.d);

    Tensor embed(v, d);
    for (std::size_t i = 0; i < embed.numel(); ++i) embed(i) = 0.1 * rng.normal();
    p.add("embed", std::move(embed));

    add_encoder_stack_params(p, "enc", cfg.d, cfg.d_ff, cfg.n_enc, rng);
    const bool hierarchical = variant == Variant::Full || variant == Variant::NoSw;
    if (hierarchical && !cfg.share_utterance_encoder)
        add_encoder_stack_params(p, "uenc", cfg.d, cfg.d_ff, cfg.n_enc, rng);
    if (hierarchical) {
        p.add("agg.wq", xavier_uniform(static_cast<std::size_t>(cfg.d_a), d, rng));
        p.add("agg.wk", xavier_uniform(1, static_cast<std::size_t>(cfg.d_a), rng));
        if (cfg.session_pos_embedding) {
            Tensor se(static_cast<std::size_t>(std::max(cfg.max_history_sessions, 1)), d);
            for (std::size_t i = 0; i < se.numel(); ++i) se(i) = 0.1 * rng.normal();
            p.add("sess_embed", std::move(se));
        }
    }
    add_decoder_stack_params(p, "dec", cfg.d, cfg.d_ff, cfg.n_dec, rng);
    p.add("fc1.w", xavier_uniform(d, v, rng));
    p.add("fc1.b", Tensor(1, v));
    if (variant == Variant::Full) {
        p.add("fc2.w", xavier_uniform(d, v, rng));
        p.add("fc2.b", Tensor(1, v));
        p.add("fc3.w", xavier_uniform(2 * d, 2, rng));
        p.add("fc3.b", Tensor(1, 2));
    }
    return model;
}

TokenizedExample HahtModel::preprocess(const MscExample& example, const Vocabulary& vocab) const {
    TokenizedExample te;
    te.session_count = example.history.size();
    for (const auto& session : example.history) {
        std::vector<std::vector<int>> rows;
        for (const auto& u : session.utterances)
            rows.push_back(prepend_role_and_pad(u, vocab, cfg_.l_utter));
        te.history_ids.push_back(std::move(rows));
    }
    te.context_ids = prepare_context_tokens(example.context, vocab, cfg_.l_ctx).ids;

    for (const auto& session : example.history)
        for (const auto& u : session.utterances) {
            te.flat_ids.push_back(Vocabulary::role_id(u.role));
            for (const auto& tok : u.tokens) te.flat_ids.push_back(vocab.lookup(tok));
        }
    for (const auto& u : example.context.utterances) {
        te.flat_ids.push_back(Vocabulary::role_id(u.role));
        for (const auto& tok : u.tokens) te.flat_ids.push_back(vocab.lookup(tok));
    }
    const std::size_t limit = static_cast<std::size_t>(cfg_.l_ctx);
    if (te.flat_ids.size() > limit)
        te.flat_ids.erase(te.flat_ids.begin(),
                          te.flat_ids.begin() +
                              static_cast<std::ptrdiff_t>(te.flat_ids.size() - limit));

    te.history_mask = build_history_vocab(example, vocab);

    for (const auto& tok : example.response.tokens)
        te.target_out.push_back(vocab.lookup(tok));
    te.target_out.push_back(Vocabulary::kEos);
    te.target_in.push_back(Vocabulary::kBos);
    for (std::size_t i = 0; i + 1 < te.target_out.size(); ++i)
        te.target_in.push_back(te.target_out[i]);
    return te;
}

NodeId HahtModel::encode_utterance_nodes(Tape& t, const std::vector<int>& ids,
                                         const DropoutCtx& drop) const {
    // Trailing PAD rows can never influence the pooled vector, so they are
    // dropped before the encoder; interior PADs stay masked.
    std::size_t n = ids.size();
    while (n > 0 && ids[n - 1] == Vocabulary::kPad) --n;
    if (n == 0) throw std::invalid_argument("encode_utterance: all-PAD input");
    std::vector<int> kept(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n));
    std::vector<std::uint8_t> mask(n);
    for (std::size_t i = 0; i < n; ++i) mask[i] = kept[i] != Vocabulary::kPad;
    NodeId x = t.embedding_rows(t.param("embed", params_), kept);
    if (drop.rng && drop.rate > 0.0) x = t.dropout(x, drop.rate, *drop.rng);
    NodeId h = encoder_stack_nodes(t, params_, utterance_stack(), x, mask, cfg_.n_enc,
                                   cfg_.n_heads, drop);
    return t.max_pool_rows(h, mask);
}

std::pair<NodeId, NodeId> HahtModel::aggregate_session_nodes(Tape& t, NodeId session_matrix) const {
    // alpha = softmax(W_k tanh(W_q U^T)); c = alpha U.
    NodeId scores = t.matmul(t.param("agg.wk", params_),
                             t.tanh_op(t.matmul(t.param("agg.wq", params_),
                                                t.transpose(session_matrix))));
    NodeId alpha = t.softmax_rows(scores);
    NodeId c = t.matmul(alpha, session_matrix);
    return {c, alpha};
}

NodeId HahtModel::context_embedding_nodes(Tape& t, const std::vector<int>& ids,
                                          const DropoutCtx& drop) const {
    if (ids.size() > positional_.rows())
        throw std::invalid_argument("context longer than positional table");
    NodeId x = t.embedding_rows(t.param("embed", params_), ids);
    Tensor pe(ids.size(), static_cast<std::size_t>(cfg_.d));
    for (std::size_t i = 0; i < ids.size(); ++i)
        for (std::size_t j = 0; j < pe.cols(); ++j) pe(i, j) = positional_(i, j);
    x = t.add(x, t.input(std::move(pe)));
    if (drop.rng && drop.rate > 0.0) x = t.dropout(x, drop.rate, *drop.rng);
    return x;
}

HahtModel::EncodeNodes HahtModel::encode_nodes(Tape& t, const TokenizedExample& ex,
                                               const DropoutCtx& drop) const {
    EncodeNodes out;
    if (variant_ == Variant::NoHier || variant_ == Variant::NoHist) {
        const auto& ids = variant_ == Variant::NoHier ? ex.flat_ids : ex.context_ids;
        std::vector<std::uint8_t> mask(ids.size());
        for (std::size_t i = 0; i < ids.size(); ++i) mask[i] = ids[i] != Vocabulary::kPad;
        NodeId x = context_embedding_nodes(t, ids, drop);
        out.memory = encoder_stack_nodes(t, params_, "enc", x, mask, cfg_.n_enc, cfg_.n_heads, drop);
        out.memory_mask = std::move(mask);
        return out;
    }

    const std::size_t m = ex.history_ids.size();
    NodeId z0 = -1;
    std::vector<std::uint8_t> pos_mask;
    NodeId ctx = context_embedding_nodes(t, ex.context_ids, drop);
    if (m > 0) {
        std::vector<NodeId> c_rows;
        for (const auto& session : ex.history_ids) {
            std::vector<NodeId> u_rows;
            for (const auto& ids : session) u_rows.push_back(encode_utterance_nodes(t, ids, drop));
            NodeId u = u_rows.size() == 1 ? u_rows[0] : t.concat_rows(u_rows);
            c_rows.push_back(aggregate_session_nodes(t, u).first);
        }
        NodeId c = c_rows.size() == 1 ? c_rows[0] : t.concat_rows(c_rows);
        if (cfg_.session_pos_embedding) {
            std::vector<int> sess_ids(m);
            for (std::size_t i = 0; i < m; ++i)
                sess_ids[i] = static_cast<int>(
                    std::min<std::size_t>(i, static_cast<std::size_t>(
                                                 std::max(cfg_.max_history_sessions, 1) - 1)));
            c = t.add(c, t.embedding_rows(t.param("sess_embed", params_), sess_ids));
        }
        z0 = t.concat_rows({c, ctx});
        pos_mask.assign(m, 1);
    } else {
        z0 = ctx;
    }
    for (int id : ex.context_ids) pos_mask.push_back(id != Vocabulary::kPad ? 1 : 0);

    NodeId z = encoder_stack_nodes(t, params_, "enc", z0, pos_mask, cfg_.n_enc, cfg_.n_heads, drop);
    out.memory = z;
    out.memory_mask = std::move(pos_mask);
    out.m_rows = m;
    out.switch_active = variant_ == Variant::Full && m > 0 && any_true(ex.history_mask);
    if (out.switch_active) {
        NodeId c_s = t.slice_rows(z, 0, m);
        out.pooled_cs = t.max_pool_rows(c_s, std::vector<std::uint8_t>(m, 1));
        out.vocab_mask = ex.history_mask;
    }
    return out;
}

NodeId HahtModel::decode_probs_nodes(Tape& t, const EncodeNodes& enc,
                                     const std::vector<int>& dec_in,
                                     const DropoutCtx& drop) const {
    if (dec_in.empty() || dec_in.front() != Vocabulary::kBos)
        throw std::invalid_argument("decoder input must begin with BOS");
    NodeId din = context_embedding_nodes(t, dec_in, drop);
    NodeId o = decoder_stack_nodes(t, params_, "dec", din, enc.memory, enc.memory_mask,
                                   cfg_.n_dec, cfg_.n_heads, drop);
    NodeId logits = t.add_rowvec(t.matmul(o, t.param("fc1.w", params_)),
                                 t.param("fc1.b", params_));
    NodeId p_vg = t.softmax_rows(logits);
    if (!enc.switch_active) return p_vg;

    NodeId h_logits = t.add_rowvec(t.matmul(enc.pooled_cs, t.param("fc2.w", params_)),
                                   t.param("fc2.b", params_));
    NodeId p_vh = t.softmax_rows_masked(
        h_logits, std::vector<std::uint8_t>(enc.vocab_mask.begin(), enc.vocab_mask.end()));

    NodeId fc3_in = t.concat_cols({o, t.tile_rows(enc.pooled_cs, t.val(o).rows())});
    NodeId alphas = t.softmax_rows(t.add_rowvec(t.matmul(fc3_in, t.param("fc3.w", params_)),
                                                t.param("fc3.b", params_)));
    return t.mixture(p_vg, alphas, p_vh);
}

NodeId HahtModel::loss_node(Tape& t, const TokenizedExample& ex, const DropoutCtx& drop) const {
    bool any_content = false;
    for (int id : ex.target_out) any_content = any_content || !Vocabulary::is_reserved(id);
    if (!any_content)
        throw std::invalid_argument("sequence_nll: target contains only reserved tokens");
    EncodeNodes enc = encode_nodes(t, ex, drop);
    NodeId p = decode_probs_nodes(t, enc, ex.target_in, drop);
    NodeId picked = t.pick_per_row(p, ex.target_out);
    return t.scale(t.sum_all(t.log_op(picked)), -1.0);
}

Tensor HahtModel::encode_utterance(const std::vector<int>& utterance_ids) const {
    Tape t;
    NodeId u = encode_utterance_nodes(t, utterance_ids, {});
    return Tensor::from_vector(t.val(u).data());
}

std::pair<Tensor, Tensor> HahtModel::aggregate_session(const Tensor& session_matrix) const {
    if (session_matrix.rows() < 1)
        throw std::invalid_argument("aggregate_session: need at least one utterance row");
    Tape t;
    auto [c, alpha] = aggregate_session_nodes(t, t.input(session_matrix));
    return {Tensor::from_vector(t.val(c).data()), Tensor::from_vector(t.val(alpha).data())};
}

HistoryMemory HahtModel::encode_history(const std::vector<Session>& history,
                                        const Vocabulary& vocab) const {
    HistoryMemory mem;
    mem.c = Tensor(history.size(), static_cast<std::size_t>(cfg_.d));
    for (std::size_t s = 0; s < history.size(); ++s) {
        if (history[s].empty()) throw std::invalid_argument("encode_history: empty session");
        Tape t;
        std::vector<NodeId> rows;
        for (const auto& u : history[s].utterances)
            rows.push_back(encode_utterance_nodes(t, prepend_role_and_pad(u, vocab, cfg_.l_utter), {}));
        NodeId u_mat = rows.size() == 1 ? rows[0] : t.concat_rows(rows);
        auto [c, alpha] = aggregate_session_nodes(t, u_mat);
        for (std::size_t j = 0; j < mem.c.cols(); ++j) mem.c(s, j) = t.val(c)(0, j);
        mem.alphas.push_back(Tensor::from_vector(t.val(alpha).data()));
    }
    return mem;
}

ContextEncoding HahtModel::encode_context(const Tensor& history_memory,
                                          const std::vector<int>& context_ids) const {
    if (context_ids.empty()) throw std::invalid_argument("encode_context: empty context");
    Tape t;
    const std::size_t m = history_memory.rows();
    std::vector<std::uint8_t> pos_mask(m, 1);
    for (int id : context_ids) pos_mask.push_back(id != Vocabulary::kPad ? 1 : 0);
    NodeId ctx = context_embedding_nodes(t, context_ids, {});
    NodeId z0 = m > 0 ? t.concat_rows({t.input(history_memory), ctx}) : ctx;
    NodeId z = encoder_stack_nodes(t, params_, "enc", z0, pos_mask, cfg_.n_enc, cfg_.n_heads, {});
    const Tensor& zv = t.val(z);
    ContextEncoding out;
    out.c_s = Tensor(m, zv.cols());
    out.s_c = Tensor(zv.rows() - m, zv.cols());
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < zv.cols(); ++j) out.c_s(i, j) = zv(i, j);
    for (std::size_t i = m; i < zv.rows(); ++i)
        for (std::size_t j = 0; j < zv.cols(); ++j) out.s_c(i - m, j) = zv(i, j);
    return out;
}

ContextEncoding HahtModel::encode_example(const TokenizedExample& ex) const {
    Tape t;
    EncodeNodes enc = encode_nodes(t, ex, {});
    const Tensor& mem = t.val(enc.memory);
    ContextEncoding out;
    out.c_s = Tensor(enc.m_rows, mem.cols());
    out.s_c = Tensor(mem.rows() - enc.m_rows, mem.cols());
    for (std::size_t i = 0; i < enc.m_rows; ++i)
        for (std::size_t j = 0; j < mem.cols(); ++j) out.c_s(i, j) = mem(i, j);
    for (std::size_t i = enc.m_rows; i < mem.rows(); ++i)
        for (std::size_t j = 0; j < mem.cols(); ++j) out.s_c(i - enc.m_rows, j) = mem(i, j);
    return out;
}

namespace {

Tensor row_of(const Tensor& m, std::size_t r) {
    Tensor out = Tensor::vector(m.cols());
    for (std::size_t j = 0; j < m.cols(); ++j) out(j) = m(r, j);
    return out;
}

Tensor vstack(const Tensor& a, const Tensor& b) {
    Tensor out(a.rows() + b.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out(i, j) = a(i, j);
    for (std::size_t i = 0; i < b.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) out(a.rows() + i, j) = b(i, j);
    return out;
}

}  // namespace

Tensor HahtModel::decoder_hidden(const ContextEncoding& enc, const std::vector<int>& prefix) const {
    if (prefix.empty() || prefix.front() != Vocabulary::kBos)
        throw std::invalid_argument("decoder_hidden: prefix must begin with BOS");
    Tape t;
    NodeId din = context_embedding_nodes(t, prefix, {});
    NodeId memory = t.input(vstack(enc.c_s, enc.s_c));
    std::vector<std::uint8_t> mem_mask(t.val(memory).rows(), 1);
    NodeId o = decoder_stack_nodes(t, params_, "dec", din, memory, mem_mask, cfg_.n_dec,
                                   cfg_.n_heads, {});
    return t.val(o);
}

Tensor HahtModel::generic_distribution(const Tensor& o_t) const {
    Tape t;
    NodeId o = t.input(Tensor::row_matrix(o_t.data()));
    NodeId p = t.softmax_rows(t.add_rowvec(t.matmul(o, t.param("fc1.w", params_)),
                                           t.param("fc1.b", params_)));
    return Tensor::from_vector(t.val(p).data());
}

Tensor HahtModel::history_distribution(const Tensor& c_s, const HistoryVocabMask& mask) const {
    if (c_s.rows() == 0)
        throw std::invalid_argument("history_distribution: no history memory rows");
    if (!any_true(mask))
        throw std::invalid_argument("history_distribution: empty history vocabulary");
    if (!params_.has("fc2.w"))
        throw std::logic_error("history_distribution: switch absent in this variant");
    Tape t;
    NodeId pooled = t.max_pool_rows(t.input(c_s), std::vector<std::uint8_t>(c_s.rows(), 1));
    NodeId logits = t.add_rowvec(t.matmul(pooled, t.param("fc2.w", params_)),
                                 t.param("fc2.b", params_));
    std::vector<std::uint8_t> vocab_mask(mask.begin(), mask.end());
    NodeId p = t.softmax_rows_masked(logits, vocab_mask);
    return Tensor::from_vector(t.val(p).data());
}

std::pair<double, double> HahtModel::switch_probabilities(const Tensor& o_t,
                                                          const Tensor& c_s) const {
    if (c_s.rows() == 0)
        throw std::invalid_argument("switch_probabilities: no history memory rows");
    Tape t;
    NodeId pooled = t.max_pool_rows(t.input(c_s), std::vector<std::uint8_t>(c_s.rows(), 1));
    NodeId o = t.input(Tensor::row_matrix(o_t.data()));
    NodeId z = t.add_rowvec(t.matmul(t.concat_cols({o, pooled}), t.param("fc3.w", params_)),
                            t.param("fc3.b", params_));
    NodeId a = t.softmax_rows(z);
    return {t.val(a)(0, 0), t.val(a)(0, 1)};
}

Tensor HahtModel::next_token_distribution(const ContextEncoding& enc,
                                          const std::vector<int>& prefix,
                                          const HistoryVocabMask& mask,
                                          StepDiagnostics* diag) const {
    Tensor o_all = decoder_hidden(enc, prefix);
    Tensor o_t = row_of(o_all, o_all.rows() - 1);
    Tensor p_vg = generic_distribution(o_t);
    const bool active = variant_ == Variant::Full && enc.c_s.rows() > 0 && any_true(mask);
    if (diag) {
        diag->switch_active = active;
        diag->p_vg = p_vg;
    }
    if (!active) return p_vg;
    Tensor p_vh = history_distribution(enc.c_s, mask);
    auto [a_vg, a_vh] = switch_probabilities(o_t, enc.c_s);
    if (diag) {
        diag->alpha_vg = a_vg;
        diag->alpha_vh = a_vh;
        diag->p_vh = p_vh;
    }
    return mix_distributions(p_vg, p_vh, a_vg, a_vh);
}

double HahtModel::sequence_nll(const TokenizedExample& ex) const {
    Tape t;
    return t.val(loss_node(t, ex, {}))(0, 0);
}

double HahtModel::sequence_nll(const MscExample& example, const Vocabulary& vocab) const {
    return sequence_nll(preprocess(example, vocab));
}

double HahtModel::loss_and_grad_into(const TokenizedExample& ex,
                                     std::map<std::string, Tensor>& grad_acc, double grad_scale,
                                     Rng* dropout_rng, double dropout_rate) const {
    Tape t;
    DropoutCtx drop;
    drop.rate = dropout_rate;
    drop.rng = dropout_rng;
    NodeId loss = loss_node(t, ex, drop);
    t.backward(loss);
    t.accumulate_param_grads_into(grad_acc, grad_scale);
    return t.val(loss)(0, 0);
}

double HahtModel::loss_and_grad(const TokenizedExample& ex, double grad_scale, Rng* dropout_rng) {
    return loss_and_grad_into(ex, params_.mutable_grads(), grad_scale, dropout_rng, cfg_.dropout);
}

std::pair<std::size_t, std::size_t> HahtModel::token_accuracy(const TokenizedExample& ex) const {
    Tape t;
    EncodeNodes enc = encode_nodes(t, ex, {});
    NodeId p = decode_probs_nodes(t, enc, ex.target_in, {});
    const Tensor& probs = t.val(p);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < ex.target_out.size(); ++i) {
        std::size_t best = 0;
        for (std::size_t vv = 1; vv < probs.cols(); ++vv)
            if (probs(i, vv) > probs(i, best)) best = vv;
        if (static_cast<int>(best) == ex.target_out[i]) ++correct;
    }
    return {correct, ex.target_out.size()};
}

GenerationOutput HahtModel::greedy_decode(const ContextEncoding& enc, const HistoryVocabMask& mask,
                                          int max_len) const {
    return greedy_decode_with(
        [&](const std::vector<int>& prefix, StepDiagnostics* diag) {
            return next_token_distribution(enc, prefix, mask, diag);
        },
        max_len);
}

GenerationOutput HahtModel::decode_example(const TokenizedExample& ex, int max_len) const {
    ContextEncoding enc = encode_example(ex);
    return greedy_decode(enc, ex.history_mask, max_len);
}

bool HahtModel::switch_enabled(const TokenizedExample& ex) const {
    return variant_ == Variant::Full && ex.session_count > 0 && any_true(ex.history_mask);
}

}  // namespace haht
