#include <doctest.h>

#include <cmath>

#include "haht/model.hpp"
#include "haht/verify.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace haht;
using namespace haht_test;

namespace {

HahtModel tiny_model(std::uint64_t seed, Variant variant = Variant::Full) {
    ModelConfig cfg = tiny_config();
    cfg.seed = seed;
    return HahtModel::init(cfg, variant);
}

}  // namespace

TEST_CASE("decoder_hidden shape, causality, and oracle") {
    HahtModel model = tiny_model(2);
    const Vocabulary vocab = tiny_vocabulary();
    TokenizedExample ex = model.preprocess(tiny_example(5, 2), vocab);
    ContextEncoding enc = model.encode_example(ex);

    std::vector<int> prefix = {Vocabulary::kBos, vocab.lookup("you"), vocab.lookup("like"),
                               vocab.lookup("tea")};
    Tensor o = model.decoder_hidden(enc, prefix);
    CHECK(o.rows() == prefix.size());
    CHECK(o.cols() == 8);

    SUBCASE("future positions cannot affect earlier outputs") {
        std::vector<int> changed = prefix;
        changed[3] = vocab.lookup("moon");
        Tensor o2 = model.decoder_hidden(enc, changed);
        for (std::size_t t = 0; t < 3; ++t)
            for (std::size_t j = 0; j < 8; ++j) CHECK(o(t, j) == o2(t, j));
    }
    SUBCASE("prefix must start with BOS") {
        CHECK_THROWS(model.decoder_hidden(enc, {vocab.lookup("tea")}));
        CHECK_THROWS(model.decoder_hidden(enc, {}));
    }
    SUBCASE("matches an independent recomputation") {
        const Tensor& embed = model.params().value("embed");
        Tensor pe = sinusoidal_encoding(prefix.size(), 8);
        Mat din(prefix.size(), std::vector<double>(8));
        for (std::size_t i = 0; i < prefix.size(); ++i)
            for (std::size_t j = 0; j < 8; ++j)
                din[i][j] = embed(static_cast<std::size_t>(prefix[i]), j) + pe(i, j);
        Mat memory(enc.c_s.rows() + enc.s_c.rows(), std::vector<double>(8));
        for (std::size_t i = 0; i < enc.c_s.rows(); ++i)
            for (std::size_t j = 0; j < 8; ++j) memory[i][j] = enc.c_s(i, j);
        for (std::size_t i = 0; i < enc.s_c.rows(); ++i)
            for (std::size_t j = 0; j < 8; ++j) memory[enc.c_s.rows() + i][j] = enc.s_c(i, j);
        Mat expect = oracle_decoder_stack(din, memory, model.params(), "dec", 1,
                                          model.config().n_heads);
        CHECK(approx_tensor(o, to_tensor(expect), 1e-10));
    }
}

TEST_CASE("generic_distribution") {
    HahtModel model = tiny_model(3);
    Rng rng(40);

    SUBCASE("sums to one for random hidden states") {
        for (int trial = 0; trial < 50; ++trial) {
            Tensor o = Tensor::vector(8);
            for (std::size_t i = 0; i < 8; ++i) o(i) = rng.uniform(-4.0, 4.0);
            Tensor p = model.generic_distribution(o);
            CHECK(p.numel() == static_cast<std::size_t>(model.config().vocab_size));
            double sum = 0.0;
            for (std::size_t i = 0; i < p.numel(); ++i) {
                CHECK(p(i) > 0.0);  // full support over the vocabulary
                sum += p(i);
            }
            CHECK(std::abs(sum - 1.0) < 1e-12);
        }
    }
    SUBCASE("zero weights give the uniform distribution") {
        model.params().value("fc1.w").fill(0.0);
        model.params().value("fc1.b").fill(0.0);
        Tensor p = model.generic_distribution(Tensor::from_vector({1, 2, 3, 4, 5, 6, 7, 8}));
        for (std::size_t i = 0; i < p.numel(); ++i)
            CHECK(p(i) == doctest::Approx(1.0 / 30.0).epsilon(1e-12));
    }
    SUBCASE("matches direct evaluation of the logits") {
        // Rig the bias so three entries carry logits 0, ln 2, ln 3 and the
        // rest are negligible.
        model.params().value("fc1.w").fill(0.0);
        Tensor& b = model.params().value("fc1.b");
        b.fill(-200.0);
        b(0, 6) = 0.0;
        b(0, 7) = std::log(2.0);
        b(0, 8) = std::log(3.0);
        Tensor p = model.generic_distribution(Tensor::vector(8));
        CHECK(p(6) == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
        CHECK(p(7) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
        CHECK(p(8) == doctest::Approx(1.0 / 2.0).epsilon(1e-12));
    }
}

TEST_CASE("history_distribution") {
    HahtModel model = tiny_model(4);
    const int v_size = model.config().vocab_size;
    Rng rng(41);
    Tensor c_s(2, 8);
    for (std::size_t i = 0; i < c_s.numel(); ++i) c_s(i) = rng.uniform(-1.0, 1.0);

    SUBCASE("single-member history vocabulary is a point mass") {
        HistoryVocabMask mask(static_cast<std::size_t>(v_size), 0);
        mask[9] = 1;
        Tensor p = model.history_distribution(c_s, mask);
        CHECK(p(9) == 1.0);
        for (std::size_t i = 0; i < p.numel(); ++i)
            if (i != 9) CHECK(p(i) == 0.0);
    }
    SUBCASE("zero weights spread uniformly over the mask") {
        model.params().value("fc2.w").fill(0.0);
        model.params().value("fc2.b").fill(0.0);
        HistoryVocabMask mask(static_cast<std::size_t>(v_size), 0);
        mask[6] = mask[10] = mask[20] = 1;
        Tensor p = model.history_distribution(c_s, mask);
        for (std::size_t i : {std::size_t{6}, std::size_t{10}, std::size_t{20}})
            CHECK(p(i) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    }
    SUBCASE("matches direct evaluation of a masked softmax") {
        model.params().value("fc2.w").fill(0.0);
        Tensor& b = model.params().value("fc2.b");
        b.fill(0.0);
        b(0, 6) = 1.0;
        b(0, 7) = 2.0;
        b(0, 8) = 3.0;
        HistoryVocabMask mask(static_cast<std::size_t>(v_size), 0);
        mask[6] = mask[8] = 1;  // logits 1 and 3, middle masked
        Tensor p = model.history_distribution(c_s, mask);
        const double e2 = std::exp(2.0);
        CHECK(p(6) == doctest::Approx(1.0 / (1.0 + e2)).epsilon(1e-12));
        CHECK(p(7) == 0.0);
        CHECK(p(8) == doctest::Approx(e2 / (1.0 + e2)).epsilon(1e-12));
    }
    SUBCASE("errors on missing history or empty mask") {
        HistoryVocabMask mask(static_cast<std::size_t>(v_size), 0);
        mask[6] = 1;
        CHECK_THROWS(model.history_distribution(Tensor(0, 8), mask));
        HistoryVocabMask empty(static_cast<std::size_t>(v_size), 0);
        CHECK_THROWS(model.history_distribution(c_s, empty));
    }
}

TEST_CASE("switch_probabilities") {
    HahtModel model = tiny_model(5);
    Rng rng(42);
    Tensor c_s(2, 8);
    for (std::size_t i = 0; i < c_s.numel(); ++i) c_s(i) = rng.uniform(-1.0, 1.0);

    SUBCASE("always a two-way probability") {
        for (int trial = 0; trial < 50; ++trial) {
            Tensor o = Tensor::vector(8);
            for (std::size_t i = 0; i < 8; ++i) o(i) = rng.uniform(-4.0, 4.0);
            auto [a_vg, a_vh] = model.switch_probabilities(o, c_s);
            CHECK(a_vg >= 0.0);
            CHECK(a_vh >= 0.0);
            CHECK(std::abs(a_vg + a_vh - 1.0) < 1e-12);
        }
    }
    SUBCASE("zero weights split evenly") {
        model.params().value("fc3.w").fill(0.0);
        model.params().value("fc3.b").fill(0.0);
        auto [a_vg, a_vh] = model.switch_probabilities(Tensor::vector(8), c_s);
        CHECK(a_vg == doctest::Approx(0.5).epsilon(1e-12));
        CHECK(a_vh == doctest::Approx(0.5).epsilon(1e-12));
    }
    SUBCASE("logits ln 3 and ln 1 give (0.75, 0.25)") {
        model.params().value("fc3.w").fill(0.0);
        Tensor& b = model.params().value("fc3.b");
        b(0, 0) = std::log(3.0);
        b(0, 1) = 0.0;
        auto [a_vg, a_vh] = model.switch_probabilities(Tensor::vector(8), c_s);
        CHECK(a_vg == doctest::Approx(0.75).epsilon(1e-12));
        CHECK(a_vh == doctest::Approx(0.25).epsilon(1e-12));
    }
    SUBCASE("requires history rows") {
        CHECK_THROWS(model.switch_probabilities(Tensor::vector(8), Tensor(0, 8)));
    }
}

TEST_CASE("mix_distributions arithmetic") {
    Tensor p_vg = Tensor::from_vector({0.8, 0.2, 0.0});
    Tensor p_vh = Tensor::from_vector({0.0, 0.0, 1.0});

    SUBCASE("degenerate switch returns the generic distribution bitwise") {
        Tensor p = mix_distributions(p_vg, p_vh, 1.0, 0.0);
        CHECK(bitwise_equal(p, p_vg));
    }
    SUBCASE("even mixture") {
        Tensor p = mix_distributions(p_vg, p_vh, 0.5, 0.5);
        CHECK(p(0) == doctest::Approx(0.4).epsilon(1e-15));
        CHECK(p(1) == doctest::Approx(0.1).epsilon(1e-15));
        CHECK(p(2) == doctest::Approx(0.5).epsilon(1e-15));
    }
    SUBCASE("probability-one steps make the loss exactly zero") {
        // alpha = (0, 1) with a one-hot history distribution: P(y) = 1.
        Tensor onehot_a = Tensor::from_vector({0.0, 1.0, 0.0});
        Tensor onehot_b = Tensor::from_vector({0.0, 0.0, 1.0});
        double nll = 0.0;
        nll -= std::log(mix_distributions(p_vg, onehot_a, 0.0, 1.0)(1));
        nll -= std::log(mix_distributions(p_vg, onehot_b, 0.0, 1.0)(2));
        CHECK(nll == 0.0);
    }
    SUBCASE("two-step loss with probabilities 0.5 and 0.25") {
        Tensor step1 = Tensor::from_vector({0.5, 0.5, 0.0});
        Tensor step2 = Tensor::from_vector({0.25, 0.5, 0.25});
        double nll = -std::log(mix_distributions(step1, p_vh, 1.0, 0.0)(0)) -
                     std::log(mix_distributions(step2, p_vh, 1.0, 0.0)(0));
        CHECK(nll == doctest::Approx(std::log(2.0) + std::log(4.0)).epsilon(1e-12));
        CHECK(nll == doctest::Approx(2.0794).epsilon(1e-4));
    }
}

TEST_CASE("next_token_distribution properties") {
    const Vocabulary vocab = tiny_vocabulary();
    Rng rng(50);
    for (int trial = 0; trial < 40; ++trial) {
        HahtModel model = tiny_model(rng.next_u64());
        const int sessions = static_cast<int>(rng.below(3));
        TokenizedExample ex = model.preprocess(tiny_example(rng.next_u64(), sessions), vocab);
        ContextEncoding enc = model.encode_example(ex);
        std::vector<int> prefix = {Vocabulary::kBos};
        for (std::size_t i = 0, n = rng.below(3); i < n; ++i)
            prefix.push_back(Vocabulary::kReservedCount +
                             static_cast<int>(rng.below(static_cast<std::size_t>(
                                 model.config().vocab_size - Vocabulary::kReservedCount))));

        StepDiagnostics diag;
        Tensor p = model.next_token_distribution(enc, prefix, ex.history_mask, &diag);
        double sum = 0.0;
        for (std::size_t i = 0; i < p.numel(); ++i) {
            CHECK(p(i) >= 0.0);
            sum += p(i);
        }
        CHECK(std::abs(sum - 1.0) < 1e-8);

        if (diag.switch_active) {
            // zero leakage outside V_h, and the mixture lower bound
            for (std::size_t i = 0; i < p.numel(); ++i) {
                if (!ex.history_mask[i]) {
                    CHECK(diag.p_vh(i) == 0.0);
                    CHECK(p(i) == diag.alpha_vg * diag.p_vg(i));
                } else {
                    CHECK(p(i) > diag.alpha_vg * diag.p_vg(i));
                }
            }
            CHECK(std::abs(diag.alpha_vg + diag.alpha_vh - 1.0) < 1e-12);
        } else {
            CHECK(bitwise_equal(p, diag.p_vg));
        }
    }
}

TEST_CASE("switch bypass on history-free examples is bitwise") {
    const Vocabulary vocab = tiny_vocabulary();
    HahtModel full = tiny_model(64, Variant::Full);
    HahtModel no_sw = tiny_model(64, Variant::NoSw);
    // Align the shared parameters; the ablation lacks fc2/fc3 entirely.
    for (const auto& name : no_sw.params().names())
        no_sw.params().value(name) = full.params().value(name);

    MscExample raw = tiny_example(77, 0);
    TokenizedExample ex_full = full.preprocess(raw, vocab);
    TokenizedExample ex_nosw = no_sw.preprocess(raw, vocab);

    CHECK(full.sequence_nll(ex_full) == no_sw.sequence_nll(ex_nosw));

    ContextEncoding enc_full = full.encode_example(ex_full);
    ContextEncoding enc_nosw = no_sw.encode_example(ex_nosw);
    CHECK(bitwise_equal(enc_full.s_c, enc_nosw.s_c));

    GenerationOutput a = full.decode_example(ex_full, 12);
    GenerationOutput b = no_sw.decode_example(ex_nosw, 12);
    CHECK(a.ids == b.ids);
    CHECK_FALSE(a.switch_active);
}

TEST_CASE("sequence_nll agrees with per-step distributions and handles edges") {
    const Vocabulary vocab = tiny_vocabulary();
    HahtModel model = tiny_model(9);
    MscExample raw = tiny_example(21, 2);
    TokenizedExample ex = model.preprocess(raw, vocab);

    SUBCASE("teacher-forced loss is the sum of per-step negative logs") {
        ContextEncoding enc = model.encode_example(ex);
        double expect = 0.0;
        std::vector<int> prefix = {Vocabulary::kBos};
        for (std::size_t t = 0; t < ex.target_out.size(); ++t) {
            Tensor p = model.next_token_distribution(enc, prefix, ex.history_mask, nullptr);
            expect -= std::log(p(static_cast<std::size_t>(ex.target_out[t])));
            prefix.push_back(ex.target_out[t]);
        }
        CHECK(model.sequence_nll(ex) == doctest::Approx(expect).epsilon(1e-10));
    }
    SUBCASE("uniform generic distribution on a history-free example") {
        HahtModel uniform = tiny_model(9);
        uniform.params().value("fc1.w").fill(0.0);
        uniform.params().value("fc1.b").fill(0.0);
        TokenizedExample m0 = uniform.preprocess(tiny_example(30, 0), vocab);
        const double expect =
            static_cast<double>(m0.target_out.size()) * std::log(30.0);
        CHECK(uniform.sequence_nll(m0) == doctest::Approx(expect).epsilon(1e-9));
    }
    SUBCASE("loss is nonnegative over random models") {
        Rng rng(61);
        for (int trial = 0; trial < 20; ++trial) {
            HahtModel m = tiny_model(rng.next_u64());
            TokenizedExample e = m.preprocess(tiny_example(rng.next_u64(), 1), vocab);
            CHECK(m.sequence_nll(e) >= 0.0);
        }
    }
    SUBCASE("target with only reserved tokens throws") {
        MscExample empty = raw;
        empty.response = Utterance::make(Role::Assistant, "");
        CHECK_THROWS(model.sequence_nll(model.preprocess(empty, vocab)));
    }
}

TEST_CASE("greedy_decode_with rigged distributions") {
    const int v = 12;
    auto point_mass = [&](int id) {
        Tensor p = Tensor::vector(static_cast<std::size_t>(v));
        p(static_cast<std::size_t>(id)) = 1.0;
        return p;
    };

    SUBCASE("immediate EOS yields an empty response") {
        GenerationOutput out = greedy_decode_with(
            [&](const std::vector<int>&, StepDiagnostics*) { return point_mass(Vocabulary::kEos); },
            8);
        CHECK(out.ids.empty());
        CHECK(out.ended_with_eos);
    }
    SUBCASE("scripted tokens come out in order") {
        GenerationOutput out = greedy_decode_with(
            [&](const std::vector<int>& prefix, StepDiagnostics*) {
                switch (prefix.size()) {
                    case 1: return point_mass(7);
                    case 2: return point_mass(9);
                    default: return point_mass(Vocabulary::kEos);
                }
            },
            8);
        CHECK(out.ids == std::vector<int>{7, 9});
        CHECK(out.ended_with_eos);
    }
    SUBCASE("exact ties resolve to the lower id") {
        GenerationOutput out = greedy_decode_with(
            [&](const std::vector<int>& prefix, StepDiagnostics*) {
                Tensor p = Tensor::vector(static_cast<std::size_t>(v));
                if (prefix.size() == 1) {
                    p(8) = 0.5;
                    p(10) = 0.5;
                } else {
                    p(Vocabulary::kEos) = 1.0;
                }
                return p;
            },
            8);
        CHECK(out.ids == std::vector<int>{8});
    }
    SUBCASE("reserved control tokens never win the argmax") {
        GenerationOutput out = greedy_decode_with(
            [&](const std::vector<int>& prefix, StepDiagnostics*) {
                Tensor p = Tensor::vector(static_cast<std::size_t>(v));
                if (prefix.size() == 1) {
                    p(Vocabulary::kPad) = 0.4;
                    p(Vocabulary::kBos) = 0.3;
                    p(Vocabulary::kRoleUser) = 0.2;
                    p(7) = 0.1;
                } else {
                    p(Vocabulary::kEos) = 1.0;
                }
                return p;
            },
            8);
        CHECK(out.ids == std::vector<int>{7});
    }
    SUBCASE("max length caps the response") {
        GenerationOutput out = greedy_decode_with(
            [&](const std::vector<int>&, StepDiagnostics*) { return point_mass(6); }, 5);
        CHECK(out.ids == std::vector<int>(5, 6));
        CHECK_FALSE(out.ended_with_eos);
    }
}

TEST_CASE("decode_example reports switch diagnostics") {
    const Vocabulary vocab = tiny_vocabulary();
    HahtModel model = tiny_model(70);
    TokenizedExample with_history = model.preprocess(tiny_example(71, 2), vocab);
    GenerationOutput gen = model.decode_example(with_history, 6);
    CHECK(gen.switch_active);
    CHECK(gen.alpha_vg.size() == gen.ids.size());
    CHECK(gen.alpha_vh.size() == gen.ids.size());
    CHECK(gen.copied.size() == gen.ids.size());
    for (std::size_t i = 0; i < gen.alpha_vg.size(); ++i)
        CHECK(std::abs(gen.alpha_vg[i] + gen.alpha_vh[i] - 1.0) < 1e-12);

    TokenizedExample no_history = model.preprocess(tiny_example(72, 0), vocab);
    GenerationOutput gen0 = model.decode_example(no_history, 6);
    CHECK_FALSE(gen0.switch_active);
    CHECK(gen0.alpha_vh.empty());
}

TEST_CASE("gradients flow through the switch path") {
    // Covers FC2/FC3 and the masked softmax inside the mixture.
    GradCheckReport r = run_model_gradcheck(16, 1e-4, 1e-4);
    CHECK(r.passed);
    bool saw_fc2 = false, saw_fc3 = false;
    for (const auto& e : r.entries) {
        if (e.param == "fc2.w") saw_fc2 = true;
        if (e.param == "fc3.w") saw_fc3 = true;
    }
    CHECK(saw_fc2);
    CHECK(saw_fc3);
}
