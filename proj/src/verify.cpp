#include "haht/verify.hpp"

#include <string>
#include <vector>

#include "haht/rng.hpp"

namespace haht {

Vocabulary tiny_vocabulary() {
    return Vocabulary::from_tokens(
        {"and", "bird", "blue", "cat",  "do",  "dog",  "fish", "i",
         "is",  "jam",  "kite", "like", "moon", "nice", "rain", "see",
         "sun", "tea",  "the",  "tree", "what", "wind", "yarn", "you"},
        1);
}

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.d = 8;
    cfg.d_ff = 16;
    cfg.n_heads = 2;
    cfg.n_enc = 1;
    cfg.n_dec = 1;
    cfg.l_utter = 8;
    cfg.l_ctx = 64;
    cfg.d_a = 8;
    cfg.vocab_size = tiny_vocabulary().size();
    cfg.dropout = 0.0;
    return cfg;
}

MscExample tiny_example(std::uint64_t seed, int sessions) {
    const Vocabulary vocab = tiny_vocabulary();
    Rng rng(Rng::mix(seed, 0x71A1ULL));
    auto random_sentence = [&](std::size_t min_len, std::size_t max_len) {
        const std::size_t n = min_len + rng.below(max_len - min_len + 1);
        std::string text;
        for (std::size_t i = 0; i < n; ++i) {
            if (i) text.push_back(' ');
            text += vocab.token(Vocabulary::kReservedCount +
                                static_cast<int>(rng.below(static_cast<std::size_t>(
                                    vocab.size() - Vocabulary::kReservedCount))));
        }
        return text;
    };
    MscExample ex;
    for (int s = 0; s < sessions; ++s) {
        Session session;
        session.utterances.push_back(Utterance::make(Role::User, random_sentence(3, 6)));
        session.utterances.push_back(Utterance::make(Role::Assistant, random_sentence(3, 6)));
        ex.history.push_back(std::move(session));
    }
    ex.context.utterances.push_back(Utterance::make(Role::User, random_sentence(3, 6)));
    ex.response = Utterance::make(Role::Assistant, random_sentence(3, 5));
    return ex;
}

GradCheckReport run_model_gradcheck(std::uint64_t seed, double h, double tolerance,
                                    Variant variant) {
    ModelConfig cfg = tiny_config();
    cfg.seed = seed;
    const Vocabulary vocab = tiny_vocabulary();
    HahtModel model = HahtModel::init(cfg, variant);
    const TokenizedExample ex = model.preprocess(tiny_example(seed, 2), vocab);

    model.params().zero_grads();
    model.loss_and_grad(ex, 1.0, nullptr);
    // The checker perturbs the model's own store in place; the evaluator just
    // reruns the loss on the current values.
    auto loss_fn = [&model, &ex](const ParameterStore&) { return model.sequence_nll(ex); };
    GradCheckReport report = finite_diff_gradcheck(loss_fn, model.params(), h, tolerance);
    model.params().zero_grads();
    return report;
}

}  // namespace haht
