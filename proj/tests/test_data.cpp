#include <doctest.h>

#include <cctype>
#include <fstream>
#include <set>

#include "haht/data.hpp"
#include "test_util.hpp"

using namespace haht;
using namespace haht_test;

TEST_CASE("tokenize lowercases and splits punctuation") {
    CHECK(tokenize("Hello, world!") == std::vector<std::string>{"hello", ",", "world", "!"});
    CHECK(tokenize("").empty());
    CHECK(tokenize("A  b") == std::vector<std::string>{"a", "b"});
    CHECK(tokenize("don't") == std::vector<std::string>{"don", "'", "t"});
}

TEST_CASE("tokenize is idempotent under lowercasing") {
    Rng rng(99);
    const std::string alphabet = "abcDEF ,.!?  xyZ'0";
    for (int trial = 0; trial < 200; ++trial) {
        std::string text;
        const std::size_t len = rng.below(30);
        for (std::size_t i = 0; i < len; ++i) text.push_back(alphabet[rng.below(alphabet.size())]);
        std::string lowered = text;
        for (char& c : lowered) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        CHECK(tokenize(text) == tokenize(lowered));
    }
}

namespace {

Corpus corpus_of_texts(const std::vector<std::string>& responses) {
    Corpus c;
    for (const auto& text : responses) {
        MscExample ex;
        ex.context.utterances.push_back(Utterance::make(Role::User, "q"));
        ex.response = Utterance::make(Role::Assistant, text);
        c.examples.push_back(std::move(ex));
    }
    return c;
}

}  // namespace

TEST_CASE("build_vocabulary assigns ids by frequency with reserved prefix") {
    Corpus c = corpus_of_texts({"hi hi hi"});
    Vocabulary v = Vocabulary::build(c, 1);
    // reserved 0..5 plus "hi" and the context token "q"
    CHECK(v.lookup("hi") == 6);
    CHECK(v.size() == 8);

    Corpus rare = corpus_of_texts({"common common rare"});
    Vocabulary v2 = Vocabulary::build(rare, 2);
    CHECK(v2.lookup("rare") == Vocabulary::kUnk);
    CHECK(v2.lookup("common") == 6);

    Corpus tie = corpus_of_texts({"zebra apple"});
    Vocabulary v3 = Vocabulary::build(tie, 1);
    CHECK(v3.lookup("apple") < v3.lookup("zebra"));

    CHECK_THROWS(Vocabulary::build(Corpus{}, 1));
}

TEST_CASE("vocabulary json round trip") {
    Corpus c = corpus_of_texts({"alpha beta beta"});
    Vocabulary v = Vocabulary::build(c, 1);
    Vocabulary back = Vocabulary::from_json_string(v.to_json_string());
    CHECK(back.size() == v.size());
    CHECK(back.lookup("beta") == v.lookup("beta"));
    CHECK(back.min_count() == v.min_count());
}

TEST_CASE("prepend_role_and_pad") {
    Corpus c = corpus_of_texts({"hi"});
    Vocabulary v = Vocabulary::build(c, 1);

    Utterance user_hi = Utterance::make(Role::User, "hi");
    CHECK(prepend_role_and_pad(user_hi, v, 4) ==
          std::vector<int>{Vocabulary::kRoleUser, v.lookup("hi"), 0, 0});

    Utterance long_a = Utterance::make(Role::Assistant, "hi hi hi hi hi hi hi hi hi hi");
    auto ids = prepend_role_and_pad(long_a, v, 4);
    CHECK(ids == std::vector<int>{Vocabulary::kRoleAssistant, v.lookup("hi"), v.lookup("hi"),
                                  v.lookup("hi")});

    Utterance exact = Utterance::make(Role::User, "hi hi hi");
    CHECK(prepend_role_and_pad(exact, v, 4).size() == 4);

    // length contract over random inputs
    Rng rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        std::string text;
        for (std::size_t i = 0, n = rng.below(12); i < n; ++i) text += "hi ";
        const int l = 2 + static_cast<int>(rng.below(10));
        CHECK(prepend_role_and_pad(Utterance::make(Role::User, text), v, l).size() ==
              static_cast<std::size_t>(l));
    }
}

TEST_CASE("load_corpus parses sessions and reports line errors") {
    const std::string path = temp_path("corpus.jsonl");
    {
        std::ofstream out(path);
        out << R"({"history":[],"context":[{"role":"user","text":"hi"}],"response":{"role":"assistant","text":"ok"}})"
            << "\n";
        out << R"({"history":[[{"role":"user","text":"a"}],[{"role":"assistant","text":"b"}],[{"role":"user","text":"c"}],[{"role":"user","text":"d"}]],"context":[{"role":"user","text":"hi"}],"response":{"role":"assistant","text":"ok"}})"
            << "\n";
    }
    Corpus c = load_corpus(path);
    REQUIRE(c.examples.size() == 2);
    CHECK(c.examples[0].session_count() == 0);
    CHECK(c.examples[1].session_count() == 4);
    CHECK(c.examples[1].session_number() == 5);

    SUBCASE("missing field names the line") {
        std::ofstream out(path);
        for (int i = 0; i < 6; ++i)
            out << R"({"history":[],"context":[{"role":"user","text":"hi"}],"response":{"role":"assistant","text":"ok"}})"
                << "\n";
        out << R"({"history":[],"context":[{"role":"user","text":"hi"}]})" << "\n";
        out.close();
        CHECK_THROWS_WITH_AS(load_corpus(path), "line 7: missing field response",
                             std::runtime_error);
    }
    SUBCASE("unknown role") {
        std::ofstream out(path);
        out << R"({"history":[],"context":[{"role":"robot","text":"hi"}],"response":{"role":"assistant","text":"ok"}})"
            << "\n";
        out.close();
        CHECK_THROWS_WITH_AS(load_corpus(path), "line 1: unknown role robot", std::runtime_error);
    }
    SUBCASE("empty context") {
        std::ofstream out(path);
        out << R"({"history":[],"context":[],"response":{"role":"assistant","text":"ok"}})" << "\n";
        out.close();
        CHECK_THROWS_AS(load_corpus(path), std::runtime_error);
    }
    SUBCASE("malformed json") {
        std::ofstream out(path);
        out << "{not json\n";
        out.close();
        CHECK_THROWS_WITH_AS(load_corpus(path), "line 1: malformed JSON", std::runtime_error);
    }
}

TEST_CASE("synthetic corpus is deterministic and honors copy fraction") {
    GeneratorConfig cfg;
    cfg.n_examples = 40;

    const std::string p1 = temp_path("gen1.jsonl"), p2 = temp_path("gen2.jsonl");
    save_corpus(generate_synthetic_corpus(cfg, 7), p1);
    save_corpus(generate_synthetic_corpus(cfg, 7), p2);
    CHECK(slurp(p1) == slurp(p2));
    CHECK(slurp(p1) != "");

    auto history_exclusive_target = [](const MscExample& ex) {
        std::set<std::string> hist, ctx;
        for (const auto& s : ex.history)
            for (const auto& u : s.utterances) hist.insert(u.tokens.begin(), u.tokens.end());
        for (const auto& u : ex.context.utterances) ctx.insert(u.tokens.begin(), u.tokens.end());
        for (const auto& tok : ex.response.tokens)
            if (hist.count(tok) && !ctx.count(tok)) return true;
        return false;
    };

    cfg.copy_fraction = 1.0;
    Corpus all_copy = generate_synthetic_corpus(cfg, 3);
    for (const auto& ex : all_copy.examples)
        if (ex.session_count() >= 1) CHECK(history_exclusive_target(ex));

    cfg.copy_fraction = 0.0;
    Corpus no_copy = generate_synthetic_corpus(cfg, 3);
    for (const auto& ex : no_copy.examples) CHECK_FALSE(history_exclusive_target(ex));

    GeneratorConfig bad;
    bad.pool_size = 2;
    bad.facts_per_persona = 3;
    CHECK_THROWS(generate_synthetic_corpus(bad, 1));
}

TEST_CASE("corpus jsonl round trip") {
    GeneratorConfig cfg;
    cfg.n_examples = 25;
    for (std::uint64_t seed : {std::uint64_t{1}, std::uint64_t{9}, std::uint64_t{42}}) {
        Corpus c = generate_synthetic_corpus(cfg, seed);
        const std::string path = temp_path("roundtrip.jsonl");
        save_corpus(c, path);
        Corpus back = load_corpus(path);
        CHECK(same_corpus(c, back));
    }
}

TEST_CASE("build_history_vocab marks exactly the in-vocabulary history words") {
    Corpus c = corpus_of_texts({"tea is hot"});
    Vocabulary v = Vocabulary::build(c, 1);

    MscExample no_history;
    no_history.context.utterances.push_back(Utterance::make(Role::User, "q"));
    no_history.response = Utterance::make(Role::Assistant, "ok");
    CHECK_FALSE(any_true(build_history_vocab(no_history, v)));

    MscExample with_tea = no_history;
    Session s;
    s.utterances.push_back(Utterance::make(Role::User, "tea"));
    with_tea.history.push_back(s);
    HistoryVocabMask mask = build_history_vocab(with_tea, v);
    std::size_t trues = 0;
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) {
            ++trues;
            CHECK(static_cast<int>(i) == v.lookup("tea"));
        }
    CHECK(trues == 1);

    MscExample oov_only = no_history;
    Session s2;
    s2.utterances.push_back(Utterance::make(Role::User, "zzzunknown"));
    oov_only.history.push_back(s2);
    CHECK_FALSE(any_true(build_history_vocab(oov_only, v)));

    // true positions never include reserved ids
    GeneratorConfig cfg;
    cfg.n_examples = 30;
    Corpus gen = generate_synthetic_corpus(cfg, 5);
    Vocabulary gv = Vocabulary::build(gen, 1);
    for (const auto& ex : gen.examples) {
        HistoryVocabMask m = build_history_vocab(ex, gv);
        for (int r = 0; r < Vocabulary::kReservedCount; ++r)
            CHECK_FALSE(m[static_cast<std::size_t>(r)]);
    }
}

TEST_CASE("filter_session_openings keeps single-turn contexts with history") {
    auto make = [](std::size_t n_ctx, std::size_t m) {
        MscExample ex;
        for (std::size_t s = 0; s < m; ++s) {
            Session sess;
            sess.utterances.push_back(Utterance::make(Role::User, "x"));
            ex.history.push_back(sess);
        }
        for (std::size_t i = 0; i < n_ctx; ++i)
            ex.context.utterances.push_back(Utterance::make(Role::User, "y"));
        ex.response = Utterance::make(Role::Assistant, "z");
        return ex;
    };
    Corpus c;
    c.examples = {make(1, 2), make(5, 2), make(1, 0)};
    Corpus kept = filter_session_openings(c);
    REQUIRE(kept.examples.size() == 1);
    CHECK(kept.examples[0].session_count() == 2);

    Corpus twice = filter_session_openings(kept);
    CHECK(same_corpus(twice, kept));
}
