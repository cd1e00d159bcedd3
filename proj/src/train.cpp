#include "haht/train.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "haht/threads.hpp"

namespace haht {

using nlohmann::json;

void TrainConfig::validate() const {
    if (lr <= 0.0) throw std::invalid_argument("TrainConfig: learning rate must be > 0");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch size must be >= 1");
    if (patience < 1) throw std::invalid_argument("TrainConfig: patience must be >= 1");
    if (max_epochs < 1) throw std::invalid_argument("TrainConfig: max_epochs must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0)
        throw std::invalid_argument("TrainConfig: dropout must be in [0, 1)");
}

EarlyStopper::EarlyStopper(int patience) : patience_(patience) {
    if (patience < 1) throw std::invalid_argument("EarlyStopper: patience must be >= 1");
}

bool EarlyStopper::observe(double valid_loss) {
    ++seen_;
    if (seen_ == 1 || valid_loss < best_loss_) {
        best_loss_ = valid_loss;
        best_epoch_ = seen_;
        bad_streak_ = 0;
        improved_last_ = true;
        return false;
    }
    improved_last_ = false;
    ++bad_streak_;
    return bad_streak_ >= patience_;
}

void TrainLog::save_jsonl(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("TrainLog::save_jsonl: cannot open " + path);
    for (const auto& e : epochs) {
        json j{{"epoch", e.epoch},
               {"train_loss", e.train_loss},
               {"valid_loss", e.valid_loss},
               {"seconds", e.seconds}};
        out << j.dump() << "\n";
    }
    json tail{{"stop_reason", stop_reason},
              {"best_epoch", best_epoch},
              {"best_valid_loss", best_valid_loss}};
    out << tail.dump() << "\n";
}

bool TrainLog::same_trajectory(const TrainLog& other) const {
    if (epochs.size() != other.epochs.size() || stop_reason != other.stop_reason ||
        best_epoch != other.best_epoch || best_valid_loss != other.best_valid_loss)
        return false;
    for (std::size_t i = 0; i < epochs.size(); ++i) {
        if (epochs[i].epoch != other.epochs[i].epoch ||
            epochs[i].train_loss != other.epochs[i].train_loss ||
            epochs[i].valid_loss != other.epochs[i].valid_loss)
            return false;
    }
    return true;
}

double mean_validation_loss(const HahtModel& model, const std::vector<TokenizedExample>& examples) {
    if (examples.empty()) throw std::invalid_argument("mean_validation_loss: no examples");
    std::vector<double> losses(examples.size());
    parallel_for(examples.size(),
                 [&](std::size_t i) { losses[i] = model.sequence_nll(examples[i]); });
    double sum = 0.0;
    for (double l : losses) sum += l;
    return sum / static_cast<double>(examples.size());
}

double corpus_token_accuracy(const HahtModel& model,
                             const std::vector<TokenizedExample>& examples) {
    std::vector<std::pair<std::size_t, std::size_t>> counts(examples.size());
    parallel_for(examples.size(),
                 [&](std::size_t i) { counts[i] = model.token_accuracy(examples[i]); });
    std::size_t correct = 0, total = 0;
    for (const auto& [c, t] : counts) {
        correct += c;
        total += t;
    }
    return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

namespace {

void clip_gradients(ParameterStore& store, double max_norm) {
    if (max_norm <= 0.0) return;
    double sq = 0.0;
    for (const auto& name : store.names()) {
        const Tensor& g = store.grad(name);
        for (std::size_t i = 0; i < g.numel(); ++i) sq += g(i) * g(i);
    }
    const double norm = std::sqrt(sq);
    if (norm <= max_norm) return;
    const double s = max_norm / norm;
    for (const auto& name : store.names()) {
        Tensor& g = store.grad(name);
        for (std::size_t i = 0; i < g.numel(); ++i) g(i) *= s;
    }
}

}  // namespace

TrainLog train(HahtModel& model, const Vocabulary& vocab, const Corpus& train_corpus,
               const Corpus& valid_corpus, const TrainConfig& cfg) {
    cfg.validate();
    if (train_corpus.examples.empty()) throw std::invalid_argument("train: empty training corpus");
    if (valid_corpus.examples.empty()) throw std::invalid_argument("train: empty validation corpus");

    std::vector<TokenizedExample> train_ex, valid_ex;
    train_ex.reserve(train_corpus.examples.size());
    for (const auto& e : train_corpus.examples) train_ex.push_back(model.preprocess(e, vocab));
    valid_ex.reserve(valid_corpus.examples.size());
    for (const auto& e : valid_corpus.examples) valid_ex.push_back(model.preprocess(e, vocab));

    OptimizerState opt =
        OptimizerState::init(model.params(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
    EarlyStopper stopper(cfg.patience);
    Rng shuffle_rng(Rng::mix(cfg.seed, 0x5AFF1EULL));
    TrainLog log;
    std::map<std::string, Tensor> best_params = model.params().values();

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::vector<std::size_t> order(train_ex.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        shuffle_rng.shuffle(order);

        double epoch_loss = 0.0;
        const std::size_t n_batches =
            (order.size() + static_cast<std::size_t>(cfg.batch_size) - 1) /
            static_cast<std::size_t>(cfg.batch_size);
        for (std::size_t b = 0; b < n_batches; ++b) {
            const std::size_t lo = b * static_cast<std::size_t>(cfg.batch_size);
            const std::size_t hi = std::min(order.size(), lo + static_cast<std::size_t>(cfg.batch_size));
            const std::size_t batch_n = hi - lo;
            const int workers = worker_count();
            double batch_loss = 0.0;

            if (workers <= 1) {
                for (std::size_t k = lo; k < hi; ++k) {
                    const std::size_t idx = order[k];
                    Rng drop_rng(Rng::mix(cfg.seed, Rng::mix(static_cast<std::uint64_t>(epoch), idx)));
                    batch_loss += model.loss_and_grad_into(train_ex[idx],
                                                           model.params().mutable_grads(), 1.0,
                                                           &drop_rng, cfg.dropout);
                }
            } else {
                std::vector<std::map<std::string, Tensor>> acc(static_cast<std::size_t>(workers));
                std::vector<double> losses(static_cast<std::size_t>(workers), 0.0);
                std::vector<std::thread> pool;
                for (int w = 0; w < workers; ++w) {
                    const std::size_t wlo = lo + chunk_begin(batch_n, workers, w);
                    const std::size_t whi = lo + chunk_end(batch_n, workers, w);
                    if (wlo >= whi) continue;
                    pool.emplace_back([&, w, wlo, whi] {
                        for (std::size_t k = wlo; k < whi; ++k) {
                            const std::size_t idx = order[k];
                            Rng drop_rng(Rng::mix(cfg.seed,
                                                  Rng::mix(static_cast<std::uint64_t>(epoch), idx)));
                            losses[static_cast<std::size_t>(w)] += model.loss_and_grad_into(
                                train_ex[idx], acc[static_cast<std::size_t>(w)], 1.0, &drop_rng,
                                cfg.dropout);
                        }
                    });
                }
                for (auto& th : pool) th.join();
                // Reduce in worker order, then name order within each worker.
                for (int w = 0; w < workers; ++w) {
                    batch_loss += losses[static_cast<std::size_t>(w)];
                    for (auto& [name, g] : acc[static_cast<std::size_t>(w)]) {
                        Tensor& dst = model.params().grad(name);
                        for (std::size_t i = 0; i < g.numel(); ++i) dst(i) += g(i);
                    }
                }
            }

            if (!std::isfinite(batch_loss))
                throw std::runtime_error("train: non-finite loss at epoch " +
                                         std::to_string(epoch) + " batch " + std::to_string(b));
            // Mean over the batch.
            for (const auto& name : model.params().names()) {
                Tensor& g = model.params().grad(name);
                for (std::size_t i = 0; i < g.numel(); ++i) g(i) /= static_cast<double>(batch_n);
            }
            clip_gradients(model.params(), cfg.max_grad_norm);
            adamax_step(model.params(), opt);
            epoch_loss += batch_loss;
        }

        EpochLog e;
        e.epoch = epoch;
        e.train_loss = epoch_loss / static_cast<double>(train_ex.size());
        e.valid_loss = mean_validation_loss(model, valid_ex);
        e.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        log.epochs.push_back(e);

        const bool stop = stopper.observe(e.valid_loss);
        if (stopper.improved_last()) best_params = model.params().values();
        if (cfg.epoch_callback && cfg.epoch_callback(epoch, model)) {
            log.stop_reason = "callback";
            break;
        }
        if (stop) {
            log.stop_reason = "early_stop";
            break;
        }
    }
    if (log.stop_reason.empty()) log.stop_reason = "max_epochs";
    log.best_epoch = stopper.best_epoch();
    log.best_valid_loss = stopper.best_loss();
    if (log.stop_reason != "callback") model.params().mutable_values() = best_params;
    return log;
}

HahtModel build_ablation_variant(Variant variant, const ModelConfig& cfg) {
    return HahtModel::init(cfg, variant);
}

double AblationReport::mean_metric(const std::string& variant, const std::string& bucket,
                                   const std::string& metric) const {
    auto it = runs.find(variant);
    if (it == runs.end() || it->second.empty())
        throw std::out_of_range("AblationReport: no runs for variant " + variant);
    double sum = 0.0;
    for (const auto& run : it->second) {
        const BucketScores& s = run.report.buckets.at(bucket);
        if (metric == "bleu2")
            sum += s.bleu2;
        else if (metric == "bleu3")
            sum += s.bleu3;
        else if (metric == "rougeL")
            sum += s.rouge_l;
        else if (metric == "copy_recall")
            sum += s.copy_recall();
        else
            throw std::invalid_argument("AblationReport: unknown metric " + metric);
    }
    return sum / static_cast<double>(it->second.size());
}

std::string AblationReport::to_json_string() const {
    json j;
    j["seeds"] = seeds;
    json variants = json::object();
    for (const auto& [name, variant_runs] : runs) {
        json runs_json = json::array();
        std::set<std::string> bucket_names;
        for (const auto& run : variant_runs) {
            runs_json.push_back(
                json{{"seed", run.seed}, {"report", json::parse(run.report.to_json_string())}});
            for (const auto& [b, s] : run.report.buckets) bucket_names.insert(b);
        }
        json mean = json::object();
        for (const auto& b : bucket_names) {
            mean[b] = json{{"bleu2", mean_metric(name, b, "bleu2")},
                           {"bleu3", mean_metric(name, b, "bleu3")},
                           {"rougeL", mean_metric(name, b, "rougeL")},
                           {"copy_recall", mean_metric(name, b, "copy_recall")}};
        }
        variants[name] = json{{"runs", std::move(runs_json)}, {"mean", std::move(mean)}};
    }
    j["variants"] = std::move(variants);
    return j.dump(2);
}

void AblationReport::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("AblationReport::save: cannot open " + path);
    out << to_json_string() << "\n";
}

AblationReport run_ablation(const Corpus& train_corpus, const Corpus& valid_corpus,
                            const Corpus& test_corpus, const ModelConfig& base_cfg,
                            const TrainConfig& train_cfg, const std::vector<std::uint64_t>& seeds,
                            int max_len, int min_count) {
    AblationReport report;
    report.seeds = seeds;
    Vocabulary vocab = Vocabulary::build(train_corpus, min_count);
    for (Variant variant : {Variant::Full, Variant::NoHier, Variant::NoHist, Variant::NoSw}) {
        for (std::uint64_t seed : seeds) {
            ModelConfig cfg = base_cfg;
            cfg.vocab_size = vocab.size();
            cfg.seed = seed;
            TrainConfig tcfg = train_cfg;
            tcfg.seed = seed;
            HahtModel model = build_ablation_variant(variant, cfg);
            train(model, vocab, train_corpus, valid_corpus, tcfg);
            AblationRun run;
            run.seed = seed;
            run.report = evaluate_corpus(model, vocab, test_corpus, false, max_len);
            report.runs[variant_name(variant)].push_back(std::move(run));
        }
    }
    return report;
}

}  // namespace haht
