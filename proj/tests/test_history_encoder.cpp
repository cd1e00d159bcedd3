#include <doctest.h>

#include <cmath>

#include "haht/model.hpp"
#include "haht/tape.hpp"
#include "haht/verify.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace haht;
using namespace haht_test;

namespace {

HahtModel tiny_model(std::uint64_t seed) {
    ModelConfig cfg = tiny_config();
    cfg.seed = seed;
    return HahtModel::init(cfg, Variant::Full);
}

}  // namespace

TEST_CASE("encode_utterance shape and PAD-tail invariance") {
    HahtModel model = tiny_model(6);
    const Vocabulary vocab = tiny_vocabulary();
    Utterance u = Utterance::make(Role::User, "i like tea");

    Tensor a = model.encode_utterance(prepend_role_and_pad(u, vocab, 6));
    CHECK(a.numel() == static_cast<std::size_t>(model.config().d));
    CHECK(a.all_finite());

    // Same tokens, longer PAD tail: identical representation.
    Tensor b = model.encode_utterance(prepend_role_and_pad(u, vocab, 8));
    CHECK(bitwise_equal(a, b));

    CHECK_THROWS(model.encode_utterance(std::vector<int>(4, Vocabulary::kPad)));
}

TEST_CASE("encode_utterance matches an independent recomputation") {
    HahtModel model = tiny_model(12);
    const Vocabulary vocab = tiny_vocabulary();
    const auto ids = prepend_role_and_pad(Utterance::make(Role::Assistant, "the moon is nice"),
                                          vocab, 8);

    // By hand: embed, encoder stack, max-pool over non-PAD rows.
    std::size_t n = ids.size();
    while (n > 0 && ids[n - 1] == Vocabulary::kPad) --n;
    const Tensor& embed = model.params().value("embed");
    Mat x(n, std::vector<double>(static_cast<std::size_t>(model.config().d)));
    std::vector<int> mask(n, 1);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < x[i].size(); ++j)
            x[i][j] = embed(static_cast<std::size_t>(ids[i]), j);
    Mat h = oracle_encoder_stack(x, mask, model.params(), "enc", model.config().n_enc,
                                 model.config().n_heads);
    std::vector<double> pooled(x[0].size(), -1e300);
    for (std::size_t i = 0; i < h.size(); ++i)
        for (std::size_t j = 0; j < h[i].size(); ++j) pooled[j] = std::max(pooled[j], h[i][j]);

    Tensor got = model.encode_utterance(ids);
    for (std::size_t j = 0; j < pooled.size(); ++j)
        CHECK(got(j) == doctest::Approx(pooled[j]).epsilon(1e-10));
}

TEST_CASE("aggregate_session degenerate cases") {
    HahtModel model = tiny_model(3);

    SUBCASE("single row passes through with alpha = [1]") {
        Tensor u = Tensor::matrix({{0.5, -1.0, 2.0, 0.1, 0.0, 0.3, -0.4, 1.1}});
        auto [c, alpha] = model.aggregate_session(u);
        CHECK(alpha.numel() == 1);
        CHECK(alpha(0) == 1.0);
        for (std::size_t j = 0; j < c.numel(); ++j)
            CHECK(c(j) == doctest::Approx(u(0, j)).epsilon(1e-12));
    }
    SUBCASE("identical rows yield that row") {
        Tensor u(3, 8);
        for (std::size_t i = 0; i < u.rows(); ++i)
            for (std::size_t j = 0; j < u.cols(); ++j) u(i, j) = 0.2 * double(j) - 0.5;
        auto [c, alpha] = model.aggregate_session(u);
        double sum = 0.0;
        for (std::size_t i = 0; i < alpha.numel(); ++i) sum += alpha(i);
        CHECK(std::abs(sum - 1.0) < 1e-12);
        for (std::size_t j = 0; j < c.numel(); ++j)
            CHECK(c(j) == doctest::Approx(u(0, j)).epsilon(1e-12));
    }
    SUBCASE("empty session throws") { CHECK_THROWS(model.aggregate_session(Tensor(0, 8))); }
}

TEST_CASE("aggregate_session reproduces the hand-computed tanh example") {
    // d = d_a = 1, W_q = [1], W_k = [1], U = [[0], [10]]:
    // alpha = softmax([tanh 0, tanh 10]) ~= [0.2689, 0.7311], c ~= [7.3106]
    ModelConfig cfg = tiny_config();
    cfg.d = 1;
    cfg.d_a = 1;
    cfg.n_heads = 1;
    HahtModel model = HahtModel::init(cfg, Variant::Full);
    model.params().value("agg.wq")(0, 0) = 1.0;
    model.params().value("agg.wk")(0, 0) = 1.0;

    auto [c, alpha] = model.aggregate_session(Tensor::matrix({{0.0}, {10.0}}));

    const double t10 = std::tanh(10.0);
    const double denom = 1.0 + std::exp(t10);
    CHECK(std::abs(alpha(0) - 1.0 / denom) < 1e-12);
    CHECK(std::abs(alpha(1) - std::exp(t10) / denom) < 1e-12);
    CHECK(alpha(0) == doctest::Approx(0.2689).epsilon(2e-4));
    CHECK(alpha(1) == doctest::Approx(0.7311).epsilon(2e-4));
    CHECK(c(0) == doctest::Approx(7.3106).epsilon(2e-4));
}

TEST_CASE("aggregate_session probability and convex-hull properties") {
    HahtModel model = tiny_model(44);
    Rng rng(123);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 1 + rng.below(6);
        Tensor u(n, 8);
        for (std::size_t i = 0; i < u.numel(); ++i) u(i) = rng.uniform(-3.0, 3.0);
        auto [c, alpha] = model.aggregate_session(u);

        double sum = 0.0;
        for (std::size_t i = 0; i < alpha.numel(); ++i) {
            CHECK(alpha(i) >= 0.0);
            sum += alpha(i);
        }
        CHECK(std::abs(sum - 1.0) < 1e-9);

        for (std::size_t j = 0; j < u.cols(); ++j) {
            double lo = u(0, j), hi = u(0, j);
            for (std::size_t i = 1; i < n; ++i) {
                lo = std::min(lo, u(i, j));
                hi = std::max(hi, u(i, j));
            }
            CHECK(c(j) >= lo - 1e-9);
            CHECK(c(j) <= hi + 1e-9);
        }
    }
}

TEST_CASE("aggregation is permutation-equivariant") {
    HahtModel model = tiny_model(7);
    Rng rng(9);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 2 + rng.below(4);
        Tensor u(n, 8);
        for (std::size_t i = 0; i < u.numel(); ++i) u(i) = rng.uniform(-2.0, 2.0);
        std::vector<std::size_t> perm(n);
        for (std::size_t i = 0; i < n; ++i) perm[i] = i;
        rng.shuffle(perm);

        Tensor pu(n, 8);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < 8; ++j) pu(i, j) = u(perm[i], j);

        auto [c, alpha] = model.aggregate_session(u);
        auto [pc, palpha] = model.aggregate_session(pu);
        for (std::size_t i = 0; i < n; ++i)
            CHECK(palpha(i) == doctest::Approx(alpha(perm[i])).epsilon(1e-12));
        CHECK(approx_tensor(c, pc, 1e-9));
    }
}

TEST_CASE("encode_history stacks per-session aggregates") {
    HahtModel model = tiny_model(5);
    const Vocabulary vocab = tiny_vocabulary();

    SUBCASE("no history yields a 0 x d matrix") {
        HistoryMemory mem = model.encode_history({}, vocab);
        CHECK(mem.c.rows() == 0);
        CHECK(mem.c.cols() == static_cast<std::size_t>(model.config().d));
        CHECK(mem.alphas.empty());
    }
    SUBCASE("two sessions yield two rows, equal to separate computation") {
        MscExample ex = tiny_example(10, 2);
        HistoryMemory mem = model.encode_history(ex.history, vocab);
        REQUIRE(mem.c.rows() == 2);
        CHECK(mem.alphas.size() == 2);
        for (const Tensor& alpha : mem.alphas) {
            double sum = 0.0;
            for (std::size_t i = 0; i < alpha.numel(); ++i) sum += alpha(i);
            CHECK(std::abs(sum - 1.0) < 1e-9);
        }

        for (std::size_t s = 0; s < 2; ++s) {
            Tensor u(ex.history[s].size(), static_cast<std::size_t>(model.config().d));
            for (std::size_t i = 0; i < ex.history[s].size(); ++i) {
                Tensor row = model.encode_utterance(prepend_role_and_pad(
                    ex.history[s].utterances[i], vocab, model.config().l_utter));
                for (std::size_t j = 0; j < u.cols(); ++j) u(i, j) = row(j);
            }
            auto [c, alpha] = model.aggregate_session(u);
            for (std::size_t j = 0; j < u.cols(); ++j)
                CHECK(mem.c(s, j) == doctest::Approx(c(j)).epsilon(1e-12));
        }
    }
    SUBCASE("synthetic corpora encode to finite memories") {
        GeneratorConfig gcfg;
        gcfg.n_examples = 12;
        Corpus corpus = generate_synthetic_corpus(gcfg, 2);
        Vocabulary gv = Vocabulary::build(corpus, 1);
        ModelConfig cfg = tiny_config();
        cfg.vocab_size = gv.size();
        HahtModel gmodel = HahtModel::init(cfg, Variant::Full);
        for (const auto& e : corpus.examples) {
            HistoryMemory mem = gmodel.encode_history(e.history, gv);
            CHECK(mem.c.all_finite());
            CHECK(mem.c.rows() == e.session_count());
        }
    }
}

TEST_CASE("aggregator gradients pass finite differences") {
    // Scalar readout of c against W_q, W_k and the input rows U.
    HahtModel model = tiny_model(88);
    Rng rng(31);
    Tensor u_val(3, 8);
    for (std::size_t i = 0; i < u_val.numel(); ++i) u_val(i) = rng.uniform(-1.0, 1.0);
    std::vector<double> readout(8);
    for (double& r : readout) r = rng.uniform(-1.0, 1.0);

    auto scalar_of = [&](const Tensor& u_in) {
        auto [c, alpha] = model.aggregate_session(u_in);
        double s = 0.0;
        for (std::size_t j = 0; j < c.numel(); ++j) s += readout[j] * c(j);
        return s;
    };

    // Analytic gradients via a tape over the same computation.
    Tape t;
    NodeId u_node = t.input(u_val);
    NodeId scores = t.matmul(t.param("agg.wk", model.params()),
                             t.tanh_op(t.matmul(t.param("agg.wq", model.params()),
                                                t.transpose(u_node))));
    NodeId c_node = t.matmul(t.softmax_rows(scores), u_node);
    NodeId loss = t.sum_all(t.matmul(c_node, t.input(Tensor::matrix(
                                                 {{readout[0]}, {readout[1]}, {readout[2]},
                                                  {readout[3]}, {readout[4]}, {readout[5]},
                                                  {readout[6]}, {readout[7]}}))));
    t.backward(loss);

    const double h = 1e-4;
    // U gradient.
    for (std::size_t i = 0; i < u_val.numel(); ++i) {
        Tensor up = u_val, dn = u_val;
        up(i) += h;
        dn(i) -= h;
        const double numeric = (scalar_of(up) - scalar_of(dn)) / (2 * h);
        const double analytic = t.grad(u_node)(i);
        CHECK(std::abs(analytic - numeric) /
                  std::max({std::abs(analytic), std::abs(numeric), 1e-8}) <
              1e-4);
    }
    // Parameter gradients.
    for (const std::string name : {"agg.wq", "agg.wk"}) {
        Tensor& theta = model.params().value(name);
        Tape t2;
        NodeId u2 = t2.input(u_val);
        NodeId s2 = t2.matmul(t2.param("agg.wk", model.params()),
                              t2.tanh_op(t2.matmul(t2.param("agg.wq", model.params()),
                                                   t2.transpose(u2))));
        NodeId c2 = t2.matmul(t2.softmax_rows(s2), u2);
        Tensor w(8, 1);
        for (std::size_t j = 0; j < 8; ++j) w(j, 0) = readout[j];
        t2.backward(t2.sum_all(t2.matmul(c2, t2.input(w))));
        std::map<std::string, Tensor> grads;
        t2.accumulate_param_grads_into(grads);

        for (std::size_t i = 0; i < theta.numel(); ++i) {
            const double orig = theta(i);
            theta(i) = orig + h;
            const double fp = scalar_of(u_val);
            theta(i) = orig - h;
            const double fm = scalar_of(u_val);
            theta(i) = orig;
            const double numeric = (fp - fm) / (2 * h);
            const double analytic = grads.at(name)(i);
            CHECK(std::abs(analytic - numeric) /
                      std::max({std::abs(analytic), std::abs(numeric), 1e-8}) <
                  1e-4);
        }
    }
}
