#include "haht/data.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace haht {

using nlohmann::json;

Utterance Utterance::make(Role role, std::string text) {
    Utterance u;
    u.role = role;
    u.tokens = tokenize(text);
    u.text = std::move(text);
    return u;
}

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    };
    for (unsigned char ch : text) {
        if (ch < 128 && std::isspace(ch)) {
            flush();
        } else if (ch < 128 && std::ispunct(ch)) {
            flush();
            out.emplace_back(1, static_cast<char>(ch));
        } else {
            cur.push_back(ch < 128 ? static_cast<char>(std::tolower(ch))
                                   : static_cast<char>(ch));
        }
    }
    flush();
    return out;
}

namespace {

const char* kReservedTokens[Vocabulary::kReservedCount] = {"<pad>", "<unk>", "<bos>",
                                                           "<eos>", "User:", "Assistant:"};

}  // namespace

Vocabulary Vocabulary::build(const Corpus& corpus, int min_count) {
    if (corpus.examples.empty()) throw std::invalid_argument("Vocabulary::build: empty corpus");
    std::map<std::string, std::size_t> counts;
    auto count_utterance = [&](const Utterance& u) {
        for (const auto& tok : u.tokens) counts[tok] += 1;
    };
    for (const auto& ex : corpus.examples) {
        for (const auto& session : ex.history)
            for (const auto& u : session.utterances) count_utterance(u);
        for (const auto& u : ex.context.utterances) count_utterance(u);
        count_utterance(ex.response);
    }
    // Descending frequency, lexicographic tie-break.
    std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    std::vector<std::string> tokens;
    for (const auto& [tok, n] : ranked)
        if (n >= static_cast<std::size_t>(min_count)) tokens.push_back(tok);
    return from_tokens(std::move(tokens), min_count);
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens, int min_count) {
    Vocabulary v;
    v.min_count_ = min_count;
    v.tokens_.reserve(tokens.size() + kReservedCount);
    for (int i = 0; i < kReservedCount; ++i) v.tokens_.emplace_back(kReservedTokens[i]);
    for (auto& tok : tokens) v.tokens_.push_back(std::move(tok));
    for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
        if (!v.ids_.emplace(v.tokens_[i], static_cast<int>(i)).second)
            throw std::invalid_argument("Vocabulary: duplicate token " + v.tokens_[i]);
    }
    return v;
}

int Vocabulary::lookup(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
    if (id < 0 || id >= size()) throw std::out_of_range("Vocabulary::token: bad id");
    return tokens_[static_cast<std::size_t>(id)];
}

std::string Vocabulary::to_json_string() const {
    json j;
    j["tokens"] = tokens_;
    j["min_count"] = min_count_;
    return j.dump();
}

Vocabulary Vocabulary::from_json_string(const std::string& text) {
    json j = json::parse(text);
    std::vector<std::string> all = j.at("tokens").get<std::vector<std::string>>();
    if (all.size() < kReservedCount)
        throw std::runtime_error("Vocabulary: token list missing reserved entries");
    for (int i = 0; i < kReservedCount; ++i)
        if (all[static_cast<std::size_t>(i)] != kReservedTokens[i])
            throw std::runtime_error("Vocabulary: reserved token mismatch at id " +
                                     std::to_string(i));
    std::vector<std::string> rest(all.begin() + kReservedCount, all.end());
    return from_tokens(std::move(rest), j.at("min_count").get<int>());
}

void Vocabulary::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("Vocabulary::save: cannot open " + path);
    out << to_json_string() << "\n";
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("Vocabulary::load: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json_string(ss.str());
}

HistoryVocabMask build_history_vocab(const MscExample& example, const Vocabulary& vocab) {
    HistoryVocabMask mask(static_cast<std::size_t>(vocab.size()), 0);
    for (const auto& session : example.history)
        for (const auto& u : session.utterances)
            for (const auto& tok : u.tokens) {
                int id = vocab.lookup(tok);
                if (!Vocabulary::is_reserved(id)) mask[static_cast<std::size_t>(id)] = 1;
            }
    return mask;
}

bool any_true(const HistoryVocabMask& mask) {
    for (std::uint8_t m : mask)
        if (m) return true;
    return false;
}

std::vector<int> prepend_role_and_pad(const Utterance& u, const Vocabulary& vocab, int l_utter) {
    if (l_utter < 2) throw std::invalid_argument("prepend_role_and_pad: l_utter must be >= 2");
    std::vector<int> ids;
    ids.reserve(static_cast<std::size_t>(l_utter));
    ids.push_back(Vocabulary::role_id(u.role));
    for (const auto& tok : u.tokens) {
        if (ids.size() >= static_cast<std::size_t>(l_utter)) break;
        ids.push_back(vocab.lookup(tok));
    }
    ids.resize(static_cast<std::size_t>(l_utter), Vocabulary::kPad);
    return ids;
}

namespace {

Role parse_role(const json& j, std::size_t line_no) {
    const std::string role = j.get<std::string>();
    if (role == "user") return Role::User;
    if (role == "assistant") return Role::Assistant;
    throw std::runtime_error("line " + std::to_string(line_no) + ": unknown role " + role);
}

Utterance parse_utterance(const json& j, std::size_t line_no) {
    if (!j.is_object())
        throw std::runtime_error("line " + std::to_string(line_no) + ": utterance is not an object");
    for (const char* field : {"role", "text"})
        if (!j.contains(field))
            throw std::runtime_error("line " + std::to_string(line_no) + ": missing field " + field);
    return Utterance::make(parse_role(j.at("role"), line_no), j.at("text").get<std::string>());
}

json utterance_to_json(const Utterance& u) {
    return json{{"role", u.role == Role::User ? "user" : "assistant"}, {"text", u.text}};
}

}  // namespace

Corpus load_corpus(const std::string& path, Split split) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_corpus: cannot open " + path);
    Corpus corpus;
    corpus.split = split;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error&) {
            throw std::runtime_error("line " + std::to_string(line_no) + ": malformed JSON");
        }
        for (const char* field : {"history", "context", "response"})
            if (!j.contains(field))
                throw std::runtime_error("line " + std::to_string(line_no) + ": missing field " +
                                         field);
        MscExample ex;
        for (const auto& session_json : j.at("history")) {
            Session s;
            for (const auto& u : session_json) s.utterances.push_back(parse_utterance(u, line_no));
            if (s.empty())
                throw std::runtime_error("line " + std::to_string(line_no) +
                                         ": empty history session");
            ex.history.push_back(std::move(s));
        }
        for (const auto& u : j.at("context")) ex.context.utterances.push_back(parse_utterance(u, line_no));
        if (ex.context.empty())
            throw std::runtime_error("line " + std::to_string(line_no) + ": empty context");
        ex.response = parse_utterance(j.at("response"), line_no);
        if (ex.response.role != Role::Assistant)
            throw std::runtime_error("line " + std::to_string(line_no) +
                                     ": response role must be assistant");
        corpus.examples.push_back(std::move(ex));
    }
    if (corpus.examples.empty()) throw std::runtime_error("load_corpus: no examples in " + path);
    return corpus;
}

void save_corpus(const Corpus& corpus, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_corpus: cannot open " + path);
    for (const auto& ex : corpus.examples) {
        json j;
        j["history"] = json::array();
        for (const auto& session : ex.history) {
            json s = json::array();
            for (const auto& u : session.utterances) s.push_back(utterance_to_json(u));
            j["history"].push_back(std::move(s));
        }
        j["context"] = json::array();
        for (const auto& u : ex.context.utterances) j["context"].push_back(utterance_to_json(u));
        j["response"] = utterance_to_json(ex.response);
        out << j.dump() << "\n";
    }
}

Corpus filter_session_openings(const Corpus& corpus) {
    Corpus out;
    out.split = corpus.split;
    for (const auto& ex : corpus.examples)
        if (ex.context.size() <= 1 && ex.session_count() >= 1) out.examples.push_back(ex);
    return out;
}

std::vector<std::string> synthetic_value_pool(int pool_size) {
    static const char* consonants = "bdfgklmnprstvz";
    static const char* vowels = "aeiou";
    std::vector<std::string> syllables;
    for (int c = 0; c < 14; ++c)
        for (int v = 0; v < 5; ++v)
            syllables.push_back(std::string(1, consonants[c]) + vowels[v]);
    std::vector<std::string> pool;
    pool.reserve(static_cast<std::size_t>(pool_size));
    for (int i = 0; i < pool_size; ++i) {
        const int a = i % 70, b = (i / 70) % 70, c = (i / 4900) % 70;
        pool.push_back(syllables[a] + syllables[b] + syllables[c]);
    }
    return pool;
}

namespace {

const std::vector<std::string>& persona_attributes() {
    static const std::vector<std::string> attrs = {"color", "animal", "food",  "drink",
                                                   "season", "sport", "music", "flower"};
    return attrs;
}

std::size_t weighted_draw(const std::vector<double>& weights, Rng& rng) {
    double total = 0.0;
    for (double w : weights) total += w;
    if (total <= 0.0) throw std::invalid_argument("weighted_draw: weights sum to zero");
    double x = rng.uniform() * total;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        x -= weights[i];
        if (x < 0.0) return i;
    }
    return weights.size() - 1;
}

}  // namespace

Corpus generate_synthetic_corpus(const GeneratorConfig& cfg, std::uint64_t seed) {
    if (cfg.pool_size < cfg.facts_per_persona)
        throw std::invalid_argument("generate_synthetic_corpus: fact pool smaller than persona");
    if (cfg.facts_per_persona < 1 ||
        cfg.facts_per_persona > static_cast<int>(persona_attributes().size()))
        throw std::invalid_argument("generate_synthetic_corpus: bad facts_per_persona");
    const auto pool = synthetic_value_pool(cfg.pool_size);
    const auto& attrs = persona_attributes();
    Rng rng(seed);
    Corpus corpus;
    corpus.split = Split::Train;

    for (int e = 0; e < cfg.n_examples; ++e) {
        // Persona: distinct attributes, each with a pooled rare value.
        std::vector<std::size_t> attr_idx(attrs.size());
        for (std::size_t i = 0; i < attr_idx.size(); ++i) attr_idx[i] = i;
        rng.shuffle(attr_idx);
        attr_idx.resize(static_cast<std::size_t>(cfg.facts_per_persona));
        std::vector<std::pair<std::string, std::string>> facts;
        for (std::size_t a : attr_idx)
            facts.emplace_back(attrs[a], pool[rng.below(pool.size())]);

        MscExample ex;
        const std::size_t m = weighted_draw(cfg.session_count_weights, rng);
        std::set<std::size_t> stated;
        for (std::size_t s = 0; s < m; ++s) {
            std::vector<std::size_t> order(facts.size());
            for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
            rng.shuffle(order);
            const std::size_t k =
                1 + rng.below(std::min<std::size_t>(static_cast<std::size_t>(cfg.max_facts_per_session),
                                                    facts.size()));
            Session session;
            for (std::size_t i = 0; i < k; ++i) {
                const auto& [attr, value] = facts[order[i]];
                stated.insert(order[i]);
                session.utterances.push_back(
                    Utterance::make(Role::User, "my favorite " + attr + " is " + value));
                session.utterances.push_back(
                    Utterance::make(Role::Assistant, "that is a great choice"));
            }
            ex.history.push_back(std::move(session));
        }

        // A copy example asks about a stated fact and answers with its value;
        // otherwise the question names an attribute the history never stated
        // and the answer is a fixed shrug. The branch is thus always
        // inferable from the input, never a hidden coin.
        const bool copy = m >= 1 && rng.uniform() < cfg.copy_fraction;
        std::string asked_attr, asked_value;
        if (copy) {
            std::vector<std::size_t> stated_vec(stated.begin(), stated.end());
            const std::size_t asked = stated_vec[rng.below(stated_vec.size())];
            asked_attr = facts[asked].first;
            asked_value = facts[asked].second;
        } else {
            std::vector<std::string> unstated;
            for (const auto& attr : attrs) {
                bool was_stated = false;
                for (std::size_t f : stated) was_stated = was_stated || facts[f].first == attr;
                if (!was_stated) unstated.push_back(attr);
            }
            asked_attr = unstated[rng.below(unstated.size())];
        }

        if (rng.uniform() < cfg.greeting_probability) {
            ex.context.utterances.push_back(Utterance::make(Role::User, "hello there"));
            ex.context.utterances.push_back(Utterance::make(Role::Assistant, "hi how are you"));
        }
        ex.context.utterances.push_back(
            Utterance::make(Role::User, "what is my favorite " + asked_attr));

        ex.response = copy ? Utterance::make(Role::Assistant, "your favorite " + asked_attr +
                                                                  " is " + asked_value)
                           : Utterance::make(Role::Assistant, "i do not remember");
        corpus.examples.push_back(std::move(ex));
    }
    return corpus;
}

}  // namespace haht
