#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "haht/data.hpp"
#include "haht/metrics.hpp"
#include "haht/model.hpp"

namespace haht {

struct TrainConfig {
    double lr = 1e-3;
    int batch_size = 16;
    int max_epochs = 50;
    int patience = 10;
    std::uint64_t seed = 1;
    double dropout = 0.1;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double max_grad_norm = 0.0;  // 0 disables clipping

    // Optional per-epoch hook (after validation); returning true stops
    // training with stop_reason "callback".
    std::function<bool(int epoch, const HahtModel& model)> epoch_callback;

    void validate() const;
};

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    double valid_loss = 0.0;
    double seconds = 0.0;
};

struct TrainLog {
    std::vector<EpochLog> epochs;
    std::string stop_reason;  // early_stop | max_epochs | callback
    int best_epoch = 0;
    double best_valid_loss = 0.0;

    void save_jsonl(const std::string& path) const;
    // Wall time excluded; losses compared exactly.
    bool same_trajectory(const TrainLog& other) const;
};

// Tracks the best validation loss; stop() fires after `patience` consecutive
// non-improving epochs.
class EarlyStopper {
public:
    explicit EarlyStopper(int patience);
    // Returns true when training should stop after this observation.
    bool observe(double valid_loss);
    bool improved_last() const { return improved_last_; }
    int best_epoch() const { return best_epoch_; }
    double best_loss() const { return best_loss_; }

private:
    int patience_;
    int seen_ = 0;
    int best_epoch_ = 0;
    int bad_streak_ = 0;
    double best_loss_ = 0.0;
    bool improved_last_ = false;
};

// Teacher-forced training with Adamax and early stopping on mean validation
// loss. The model ends up holding the best-validation weights. Deterministic
// for a fixed seed; HAHT_THREADS > 1 fans the batch out across workers with
// fixed-order gradient reduction.
TrainLog train(HahtModel& model, const Vocabulary& vocab, const Corpus& train_corpus,
               const Corpus& valid_corpus, const TrainConfig& cfg);

// The ablation wiring of a variant over shared dimensions.
HahtModel build_ablation_variant(Variant variant, const ModelConfig& cfg);

double mean_validation_loss(const HahtModel& model, const std::vector<TokenizedExample>& examples);

// Teacher-forced next-token accuracy over a corpus.
double corpus_token_accuracy(const HahtModel& model, const std::vector<TokenizedExample>& examples);

struct AblationRun {
    std::uint64_t seed = 0;
    MetricsReport report;
};

struct AblationReport {
    std::vector<std::uint64_t> seeds;
    // variant name -> runs (one per seed)
    std::map<std::string, std::vector<AblationRun>> runs;

    double mean_metric(const std::string& variant, const std::string& bucket,
                       const std::string& metric) const;
    std::string to_json_string() const;
    void save(const std::string& path) const;
};

// Trains every variant for every seed and evaluates on the test corpus.
AblationReport run_ablation(const Corpus& train_corpus, const Corpus& valid_corpus,
                            const Corpus& test_corpus, const ModelConfig& base_cfg,
                            const TrainConfig& train_cfg, const std::vector<std::uint64_t>& seeds,
                            int max_len, int min_count);

}  // namespace haht
