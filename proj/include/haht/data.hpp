#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "haht/rng.hpp"

namespace haht {

enum class Role { User, Assistant };

struct Utterance {
    Role role = Role::User;
    std::string text;
    std::vector<std::string> tokens;  // filled by tokenization

    static Utterance make(Role role, std::string text);
};

struct Session {
    std::vector<Utterance> utterances;

    std::size_t size() const { return utterances.size(); }
    bool empty() const { return utterances.empty(); }
};

// One training / evaluation unit: history sessions, current context, target.
struct MscExample {
    std::vector<Session> history;
    Session context;
    Utterance response;

    std::size_t session_count() const { return history.size(); }   // M
    std::size_t session_number() const { return history.size() + 1; }
};

enum class Split { Train, Valid, Test };

struct Corpus {
    std::vector<MscExample> examples;
    Split split = Split::Train;
};

// Lowercases, splits punctuation into single-character tokens, collapses
// whitespace. Total over valid UTF-8 (multi-byte sequences stay inside words).
std::vector<std::string> tokenize(const std::string& text);

// Closed vocabulary over the training split. Ids 0-5 are reserved.
class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kBos = 2;
    static constexpr int kEos = 3;
    static constexpr int kRoleUser = 4;
    static constexpr int kRoleAssistant = 5;
    static constexpr int kReservedCount = 6;

    // Tokens with corpus frequency >= min_count get ids, assigned by
    // descending frequency with lexicographic tie-break. Throws on an empty
    // corpus.
    static Vocabulary build(const Corpus& corpus, int min_count);

    static Vocabulary from_tokens(std::vector<std::string> tokens, int min_count);

    int lookup(const std::string& token) const;  // kUnk when absent
    const std::string& token(int id) const;
    int size() const { return static_cast<int>(tokens_.size()); }
    int min_count() const { return min_count_; }
    static bool is_reserved(int id) { return id >= 0 && id < kReservedCount; }
    static int role_id(Role role) { return role == Role::User ? kRoleUser : kRoleAssistant; }

    std::string to_json_string() const;
    static Vocabulary from_json_string(const std::string& text);
    void save(const std::string& path) const;
    static Vocabulary load(const std::string& path);

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> ids_;
    int min_count_ = 1;
};

// Boolean vector over V_g marking tokens that appear in the example's
// history. Reserved ids and out-of-vocabulary history tokens are never set.
using HistoryVocabMask = std::vector<std::uint8_t>;

HistoryVocabMask build_history_vocab(const MscExample& example, const Vocabulary& vocab);
bool any_true(const HistoryVocabMask& mask);

// Role token followed by the utterance's token ids, right-truncated and
// PAD-filled to exactly l_utter.
std::vector<int> prepend_role_and_pad(const Utterance& u, const Vocabulary& vocab, int l_utter);

// JSON Lines corpus IO. Errors carry 1-based line numbers.
Corpus load_corpus(const std::string& path, Split split = Split::Train);
void save_corpus(const Corpus& corpus, const std::string& path);

// Keeps examples that open a new session: context of at most one utterance
// and at least one history session.
Corpus filter_session_openings(const Corpus& corpus);

struct GeneratorConfig {
    int n_examples = 64;
    int pool_size = 48;              // distinct rare value tokens
    int facts_per_persona = 3;
    int max_facts_per_session = 3;
    std::vector<double> session_count_weights = {1, 1, 1, 1, 1};  // M = 0..4
    double copy_fraction = 0.5;
    double greeting_probability = 0.5;
};

// Deterministic synthetic multi-session corpus: personas of (attribute,
// value) facts, history sessions stating them, a context question, and a
// target that copies the value from history with probability copy_fraction.
Corpus generate_synthetic_corpus(const GeneratorConfig& cfg, std::uint64_t seed);

// The fixed rare-token pool the generator draws values from.
std::vector<std::string> synthetic_value_pool(int pool_size);

}  // namespace haht
