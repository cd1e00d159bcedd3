#pragma once

#include <map>
#include <string>
#include <vector>

#include "haht/data.hpp"
#include "haht/model.hpp"

namespace haht {

using TokenSeq = std::vector<std::string>;

// Corpus-level BLEU-n: clipped modified k-gram precisions pooled over the
// corpus, geometric mean over k = 1..n, brevity penalty min(1, exp(1 - r/c)).
// Any zero precision yields 0 (no smoothing).
double bleu_n(const std::vector<TokenSeq>& candidates, const std::vector<TokenSeq>& references,
              int n);

// ROUGE-L F1 from the longest common subsequence; 0 when either side is
// empty or nothing matches.
double rouge_l(const TokenSeq& candidate, const TokenSeq& reference);

struct BucketScores {
    double bleu2 = 0.0;
    double bleu3 = 0.0;
    double rouge_l = 0.0;       // mean over examples
    std::size_t count = 0;
    std::size_t copy_hits = 0;  // history-exclusive reference tokens recovered
    std::size_t copy_total = 0;

    double copy_recall() const {
        return copy_total == 0 ? 0.0 : static_cast<double>(copy_hits) / static_cast<double>(copy_total);
    }
};

struct MetricsReport {
    bool opening_only = false;
    std::map<std::string, BucketScores> buckets;  // "1".."5" plus "all"

    std::string to_json_string() const;
    void save(const std::string& path) const;
};

// Decoded candidate tokens for an example (reserved tokens already stripped).
using DecodeFn = std::function<TokenSeq(const MscExample&)>;

// Greedy-decodes every example, groups by session number (M + 1), scores each
// bucket and the pooled "all" bucket. opening_only applies the session-opening
// filter first.
MetricsReport evaluate_corpus(const HahtModel& model, const Vocabulary& vocab,
                              const Corpus& corpus, bool opening_only, int max_len);

// Same bookkeeping with an arbitrary decoder; the model path wraps this.
MetricsReport evaluate_with(const DecodeFn& decode, const Corpus& corpus, bool opening_only);

// Reference-side token sequence used for scoring.
TokenSeq reference_tokens(const MscExample& example);

// Tokens present in history but absent from the context (scored for recall).
std::vector<std::string> history_exclusive_tokens(const MscExample& example);

}  // namespace haht
