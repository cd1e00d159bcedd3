#include "haht/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>
#include <unordered_map>

#include <json.hpp>

#include "haht/threads.hpp"

namespace haht {

using nlohmann::json;

namespace {

// k-gram key: tokens joined with an unlikely separator.
std::string gram_key(const TokenSeq& seq, std::size_t start, int k) {
    std::string key;
    for (int i = 0; i < k; ++i) {
        if (i) key.push_back('\x1f');
        key += seq[start + static_cast<std::size_t>(i)];
    }
    return key;
}

std::unordered_map<std::string, std::size_t> gram_counts(const TokenSeq& seq, int k) {
    std::unordered_map<std::string, std::size_t> counts;
    if (seq.size() < static_cast<std::size_t>(k)) return counts;
    for (std::size_t i = 0; i + static_cast<std::size_t>(k) <= seq.size(); ++i)
        counts[gram_key(seq, i, k)] += 1;
    return counts;
}

}  // namespace

double bleu_n(const std::vector<TokenSeq>& candidates, const std::vector<TokenSeq>& references,
              int n) {
    if (candidates.empty()) throw std::invalid_argument("bleu_n: empty candidate list");
    if (candidates.size() != references.size())
        throw std::invalid_argument("bleu_n: candidate/reference count mismatch");
    if (n < 1 || n > 4) throw std::invalid_argument("bleu_n: n must be in 1..4");

    std::size_t cand_len = 0, ref_len = 0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        cand_len += candidates[i].size();
        ref_len += references[i].size();
    }
    if (cand_len == 0) return 0.0;

    double log_sum = 0.0;
    for (int k = 1; k <= n; ++k) {
        std::size_t matched = 0, total = 0;
        for (std::size_t i = 0; i < candidates.size(); ++i) {
            const auto cand = gram_counts(candidates[i], k);
            const auto ref = gram_counts(references[i], k);
            for (const auto& [gram, count] : cand) {
                auto it = ref.find(gram);
                matched += std::min(count, it == ref.end() ? std::size_t{0} : it->second);
            }
            if (candidates[i].size() >= static_cast<std::size_t>(k))
                total += candidates[i].size() - static_cast<std::size_t>(k) + 1;
        }
        if (matched == 0 || total == 0) return 0.0;
        log_sum += std::log(static_cast<double>(matched) / static_cast<double>(total));
    }
    const double bp =
        std::min(1.0, std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(cand_len)));
    return bp * std::exp(log_sum / static_cast<double>(n));
}

double rouge_l(const TokenSeq& candidate, const TokenSeq& reference) {
    if (candidate.empty() || reference.empty()) return 0.0;
    const std::size_t a = candidate.size(), b = reference.size();
    std::vector<std::size_t> prev(b + 1, 0), cur(b + 1, 0);
    for (std::size_t i = 1; i <= a; ++i) {
        for (std::size_t j = 1; j <= b; ++j) {
            if (candidate[i - 1] == reference[j - 1])
                cur[j] = prev[j - 1] + 1;
            else
                cur[j] = std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    const double lcs = static_cast<double>(prev[b]);
    if (lcs == 0.0) return 0.0;
    const double p = lcs / static_cast<double>(a);
    const double r = lcs / static_cast<double>(b);
    return 2.0 * p * r / (p + r);
}

TokenSeq reference_tokens(const MscExample& example) { return example.response.tokens; }

std::vector<std::string> history_exclusive_tokens(const MscExample& example) {
    std::set<std::string> history;
    for (const auto& session : example.history)
        for (const auto& u : session.utterances) history.insert(u.tokens.begin(), u.tokens.end());
    std::set<std::string> context;
    for (const auto& u : example.context.utterances)
        context.insert(u.tokens.begin(), u.tokens.end());
    std::vector<std::string> out;
    for (const auto& tok : history)
        if (!context.count(tok)) out.push_back(tok);
    return out;
}

std::string MetricsReport::to_json_string() const {
    json j;
    j["opening_only"] = opening_only;
    json b = json::object();
    for (const auto& [name, scores] : buckets) {
        b[name] = json{{"bleu2", scores.bleu2},
                       {"bleu3", scores.bleu3},
                       {"rougeL", scores.rouge_l},
                       {"count", scores.count},
                       {"copy_hits", scores.copy_hits},
                       {"copy_total", scores.copy_total},
                       {"copy_recall", scores.copy_recall()}};
    }
    j["buckets"] = std::move(b);
    return j.dump(2);
}

void MetricsReport::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("MetricsReport::save: cannot open " + path);
    out << to_json_string() << "\n";
}

MetricsReport evaluate_with(const DecodeFn& decode, const Corpus& corpus, bool opening_only) {
    const Corpus scored = opening_only ? filter_session_openings(corpus) : corpus;
    MetricsReport report;
    report.opening_only = opening_only;
    if (scored.examples.empty()) return report;

    std::vector<TokenSeq> candidates(scored.examples.size());
    parallel_for(scored.examples.size(),
                 [&](std::size_t i) { candidates[i] = decode(scored.examples[i]); });

    // Group per session number; "all" pools every example.
    std::map<std::string, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < scored.examples.size(); ++i) {
        groups[std::to_string(scored.examples[i].session_number())].push_back(i);
        groups["all"].push_back(i);
    }
    for (const auto& [name, idx] : groups) {
        BucketScores scores;
        std::vector<TokenSeq> cand, ref;
        double rouge_sum = 0.0;
        for (std::size_t i : idx) {
            cand.push_back(candidates[i]);
            ref.push_back(reference_tokens(scored.examples[i]));
            rouge_sum += rouge_l(cand.back(), ref.back());

            std::set<std::string> cand_set(cand.back().begin(), cand.back().end());
            std::set<std::string> ref_set(ref.back().begin(), ref.back().end());
            for (const auto& tok : history_exclusive_tokens(scored.examples[i])) {
                if (!ref_set.count(tok)) continue;
                scores.copy_total += 1;
                if (cand_set.count(tok)) scores.copy_hits += 1;
            }
        }
        scores.count = idx.size();
        scores.bleu2 = bleu_n(cand, ref, 2);
        scores.bleu3 = bleu_n(cand, ref, 3);
        scores.rouge_l = rouge_sum / static_cast<double>(idx.size());
        report.buckets.emplace(name, scores);
    }
    return report;
}

MetricsReport evaluate_corpus(const HahtModel& model, const Vocabulary& vocab,
                              const Corpus& corpus, bool opening_only, int max_len) {
    return evaluate_with(
        [&](const MscExample& example) {
            TokenizedExample ex = model.preprocess(example, vocab);
            GenerationOutput gen = model.decode_example(ex, max_len);
            TokenSeq tokens;
            for (int id : gen.ids)
                if (!Vocabulary::is_reserved(id)) tokens.push_back(vocab.token(id));
            return tokens;
        },
        corpus, opening_only);
}

}  // namespace haht
