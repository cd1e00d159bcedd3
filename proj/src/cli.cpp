#include "haht/cli.hpp"

#include <iomanip>
#include <iostream>

#include <CLI11.hpp>

#include "haht/chat.hpp"
#include "haht/checkpoint.hpp"
#include "haht/data.hpp"
#include "haht/metrics.hpp"
#include "haht/model.hpp"
#include "haht/train.hpp"
#include "haht/verify.hpp"

namespace haht {

namespace {

struct TrainOptions {
    std::string train_path, valid_path, out_path, log_path, vocab_out;
    std::string variant = "full";
    std::string preset = "toy";
    std::uint64_t seed = 1;
    int epochs = -1;
    int batch = -1;
    int patience = -1;
    double lr = -1.0;
    double dropout = -1.0;
    int min_count = 1;
    double max_grad_norm = 0.0;
};

void apply_preset(const std::string& preset, ModelConfig& mcfg, TrainConfig& tcfg) {
    if (preset == "toy") {
        mcfg.d = 64;
        mcfg.d_ff = 128;
        mcfg.n_heads = 2;
        mcfg.n_enc = 2;
        mcfg.n_dec = 2;
        mcfg.l_utter = 32;
        mcfg.l_ctx = 256;
        mcfg.d_a = 64;
        mcfg.dropout = 0.1;
        tcfg.lr = 1e-3;
        tcfg.batch_size = 16;
        tcfg.patience = 10;
        tcfg.max_epochs = 50;
        tcfg.dropout = 0.1;
    } else if (preset == "paper") {
        // Published fine-tuning regimen: 12+12 layers, Adamax at 1e-6,
        // batch 16, dropout 0.1, patience 10, 256-token truncation.
        mcfg.d = 64;
        mcfg.d_ff = 128;
        mcfg.n_heads = 2;
        mcfg.n_enc = 12;
        mcfg.n_dec = 12;
        mcfg.l_utter = 32;
        mcfg.l_ctx = 256;
        mcfg.d_a = 64;
        mcfg.dropout = 0.1;
        tcfg.lr = 1e-6;
        tcfg.batch_size = 16;
        tcfg.patience = 10;
        tcfg.max_epochs = 50;
        tcfg.dropout = 0.1;
    } else {
        throw CLI::ValidationError("--preset", "unknown preset " + preset);
    }
}

int cmd_train(const TrainOptions& opt) {
    Corpus train_corpus = load_corpus(opt.train_path, Split::Train);
    Corpus valid_corpus = load_corpus(opt.valid_path, Split::Valid);
    Vocabulary vocab = Vocabulary::build(train_corpus, opt.min_count);

    ModelConfig mcfg;
    TrainConfig tcfg;
    apply_preset(opt.preset, mcfg, tcfg);
    mcfg.vocab_size = vocab.size();
    mcfg.seed = opt.seed;
    tcfg.seed = opt.seed;
    if (opt.epochs > 0) tcfg.max_epochs = opt.epochs;
    if (opt.batch > 0) tcfg.batch_size = opt.batch;
    if (opt.patience > 0) tcfg.patience = opt.patience;
    if (opt.lr > 0) tcfg.lr = opt.lr;
    if (opt.dropout >= 0) {
        tcfg.dropout = opt.dropout;
        mcfg.dropout = opt.dropout;
    }
    tcfg.max_grad_norm = opt.max_grad_norm;

    HahtModel model = HahtModel::init(mcfg, variant_from_name(opt.variant));
    TrainLog log = train(model, vocab, train_corpus, valid_corpus, tcfg);
    save_checkpoint(opt.out_path, model, vocab);
    if (!opt.log_path.empty()) log.save_jsonl(opt.log_path);
    if (!opt.vocab_out.empty()) vocab.save(opt.vocab_out);
    std::cout << "trained " << variant_name(model.variant()) << " for " << log.epochs.size()
              << " epochs (" << log.stop_reason << "), best epoch " << log.best_epoch
              << ", valid loss " << log.best_valid_loss << "\n";
    std::cout << "checkpoint written to " << opt.out_path << "\n";
    return 0;
}

}  // namespace

int dispatch(const std::vector<std::string>& args) {
    CLI::App app{"history-aware hierarchical transformer for multi-session conversation"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic multi-session corpus");
    std::string gen_out;
    std::uint64_t gen_seed = 1;
    GeneratorConfig gen_cfg;
    int gen_max_sessions = 4;
    gen->add_option("--out", gen_out, "output corpus (JSON lines)")->required();
    gen->add_option("--seed", gen_seed, "generator seed")->required();
    gen->add_option("--n", gen_cfg.n_examples, "example count")->required();
    gen->add_option("--copy-fraction", gen_cfg.copy_fraction,
                    "probability that a target copies a history value");
    gen->add_option("--max-sessions", gen_max_sessions, "history sessions drawn uniformly from 0..max");
    gen->add_option("--pool-size", gen_cfg.pool_size, "rare value pool size");
    gen->add_option("--facts", gen_cfg.facts_per_persona, "facts per persona");

    // train
    auto* tr = app.add_subcommand("train", "train a model on a corpus pair");
    TrainOptions topt;
    tr->add_option("--train", topt.train_path, "training corpus")->required();
    tr->add_option("--valid", topt.valid_path, "validation corpus")->required();
    tr->add_option("--out", topt.out_path, "checkpoint output path")->required();
    tr->add_option("--variant", topt.variant, "full | no-hier | no-hist | no-sw");
    tr->add_option("--preset", topt.preset, "toy | paper");
    tr->add_option("--seed", topt.seed, "init/shuffle/dropout seed");
    tr->add_option("--epochs", topt.epochs, "max epochs");
    tr->add_option("--batch", topt.batch, "batch size");
    tr->add_option("--patience", topt.patience, "early stopping patience");
    tr->add_option("--lr", topt.lr, "learning rate");
    tr->add_option("--dropout", topt.dropout, "dropout rate");
    tr->add_option("--min-count", topt.min_count, "vocabulary frequency threshold");
    tr->add_option("--max-grad-norm", topt.max_grad_norm, "gradient clipping norm (0 = off)");
    tr->add_option("--log", topt.log_path, "write the epoch log as JSON lines");
    tr->add_option("--vocab-out", topt.vocab_out, "also write the vocabulary as JSON");

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a test corpus");
    std::string ev_ckpt, ev_test, ev_report;
    bool ev_opening = false;
    int ev_max_len = 32;
    ev->add_option("--checkpoint", ev_ckpt, "checkpoint path")->required();
    ev->add_option("--test", ev_test, "test corpus")->required();
    ev->add_option("--report", ev_report, "metrics report output (JSON)")->required();
    ev->add_flag("--opening-only", ev_opening, "restrict to session openings");
    ev->add_option("--max-len", ev_max_len, "decode length cap");

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "finite-difference check on a tiny model");
    double gc_tol = 1e-4;
    std::uint64_t gc_seed = 1;
    gc->add_option("--tolerance", gc_tol, "max relative error allowed");
    gc->add_option("--seed", gc_seed, "init seed");

    // ablate
    auto* ab = app.add_subcommand("ablate", "train and evaluate all four variants");
    std::string ab_train, ab_valid, ab_test, ab_report;
    int ab_seeds = 3;
    std::uint64_t ab_seed_base = 1;
    int ab_epochs = 30;
    int ab_batch = 16;
    int ab_patience = 5;
    double ab_lr = 2e-3;
    double ab_dropout = 0.0;
    int ab_max_len = 32;
    int ab_min_count = 1;
    ab->add_option("--train", ab_train, "training corpus")->required();
    ab->add_option("--valid", ab_valid, "validation corpus")->required();
    ab->add_option("--test", ab_test, "test corpus")->required();
    ab->add_option("--report", ab_report, "ablation report output (JSON)")->required();
    ab->add_option("--seeds", ab_seeds, "number of seeds per variant");
    ab->add_option("--seed-base", ab_seed_base, "first seed");
    ab->add_option("--epochs", ab_epochs, "max epochs per run");
    ab->add_option("--batch", ab_batch, "batch size");
    ab->add_option("--patience", ab_patience, "early stopping patience");
    ab->add_option("--lr", ab_lr, "learning rate");
    ab->add_option("--dropout", ab_dropout, "dropout rate");
    ab->add_option("--max-len", ab_max_len, "decode length cap");
    ab->add_option("--min-count", ab_min_count, "vocabulary frequency threshold");

    // chat
    auto* ch = app.add_subcommand("chat", "interactive multi-session REPL");
    std::string ch_ckpt, ch_log;
    bool ch_verbose = false;
    int ch_max_len = 32;
    ch->add_option("--checkpoint", ch_ckpt, "checkpoint path")->required();
    ch->add_flag("--verbose", ch_verbose, "print switch diagnostics per turn");
    ch->add_option("--max-len", ch_max_len, "decode length cap");
    ch->add_option("--log", ch_log, "append turns as JSON lines");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n" << app.help();
        return 1;
    }

    try {
        if (gen->parsed()) {
            gen_cfg.session_count_weights.assign(static_cast<std::size_t>(gen_max_sessions) + 1, 1.0);
            Corpus corpus = generate_synthetic_corpus(gen_cfg, gen_seed);
            save_corpus(corpus, gen_out);
            std::cout << "wrote " << corpus.examples.size() << " examples to " << gen_out << "\n";
            return 0;
        }
        if (tr->parsed()) return cmd_train(topt);
        if (ev->parsed()) {
            Checkpoint ckpt = load_checkpoint(ev_ckpt);
            HahtModel model = ckpt.to_model();
            Corpus test = load_corpus(ev_test, Split::Test);
            MetricsReport report = evaluate_corpus(model, ckpt.vocab, test, ev_opening, ev_max_len);
            report.save(ev_report);
            std::cout << "evaluated " << report.buckets.count("all")
                      << " bucket groups; report written to " << ev_report << "\n";
            for (const auto& [name, s] : report.buckets)
                std::cout << "  bucket " << name << ": bleu2 " << std::setprecision(4) << s.bleu2
                          << " bleu3 " << s.bleu3 << " rougeL " << s.rouge_l << " (n=" << s.count
                          << ")\n";
            return 0;
        }
        if (gc->parsed()) {
            GradCheckReport report = run_model_gradcheck(gc_seed, 1e-4, gc_tol);
            for (const auto& e : report.entries)
                std::cout << std::setw(16) << std::left << e.param << " max rel err "
                          << std::scientific << std::setprecision(3) << e.max_rel_error << " ("
                          << e.coords_checked << " coords)\n";
            std::cout << (report.passed ? "PASS" : "FAIL") << " max rel err " << std::scientific
                      << report.max_rel_error << " tolerance " << report.tolerance << "\n";
            if (!report.passed) throw std::runtime_error("gradient check failed");
            return 0;
        }
        if (ab->parsed()) {
            Corpus train_c = load_corpus(ab_train, Split::Train);
            Corpus valid_c = load_corpus(ab_valid, Split::Valid);
            Corpus test_c = load_corpus(ab_test, Split::Test);
            ModelConfig mcfg;
            TrainConfig tcfg;
            apply_preset("toy", mcfg, tcfg);
            tcfg.max_epochs = ab_epochs;
            tcfg.batch_size = ab_batch;
            tcfg.patience = ab_patience;
            tcfg.lr = ab_lr;
            tcfg.dropout = ab_dropout;
            mcfg.dropout = ab_dropout;
            std::vector<std::uint64_t> seeds;
            for (int s = 0; s < ab_seeds; ++s) seeds.push_back(ab_seed_base + static_cast<std::uint64_t>(s));
            AblationReport report =
                run_ablation(train_c, valid_c, test_c, mcfg, tcfg, seeds, ab_max_len, ab_min_count);
            report.save(ab_report);
            for (const auto& [variant, runs] : report.runs)
                std::cout << variant << ": bleu2 " << std::setprecision(4)
                          << report.mean_metric(variant, "all", "bleu2") << " copy recall "
                          << report.mean_metric(variant, "all", "copy_recall") << "\n";
            std::cout << "report written to " << ab_report << "\n";
            return 0;
        }
        if (ch->parsed()) {
            Checkpoint ckpt = load_checkpoint(ch_ckpt);
            ChatState state(ckpt.to_model(), ckpt.vocab, ch_max_len);
            run_chat(state, std::cin, std::cout, ch_verbose, ch_log);
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    std::cerr << app.help();
    return 1;
}

}  // namespace haht
