#include "haht/chat.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

#include <json.hpp>

namespace haht {

using nlohmann::json;

ChatState::ChatState(HahtModel model, Vocabulary vocab, int max_len)
    : model_(std::move(model)), vocab_(std::move(vocab)), max_len_(max_len),
      memory_(0, static_cast<std::size_t>(model_.config().d)) {
    if (max_len_ < 1) throw std::invalid_argument("ChatState: max_len must be >= 1");
}

ChatTurn ChatState::chat_step(const std::string& user_text) {
    current_.utterances.push_back(Utterance::make(Role::User, user_text));

    GenerationOutput gen;
    if (hierarchical()) {
        ContextTokens ctx = prepare_context_tokens(current_, vocab_, model_.config().l_ctx);
        ContextEncoding enc = model_.encode_context(memory_, ctx.ids);
        MscExample probe;
        probe.history = history_;
        HistoryVocabMask mask = build_history_vocab(probe, vocab_);
        gen = model_.greedy_decode(enc, mask, max_len_);
    } else {
        MscExample probe;
        probe.history = history_;
        probe.context = current_;
        probe.response = Utterance::make(Role::Assistant, "");
        gen = model_.decode_example(model_.preprocess(probe, vocab_), max_len_);
    }

    std::string text;
    for (int id : gen.ids) {
        if (Vocabulary::is_reserved(id)) continue;
        if (!text.empty()) text.push_back(' ');
        text += vocab_.token(id);
    }
    current_.utterances.push_back(Utterance::make(Role::Assistant, text));

    ChatTurn turn;
    turn.assistant_text = text;
    turn.diagnostics.switch_active = gen.switch_active;
    turn.diagnostics.alpha_vh = gen.alpha_vh;
    turn.diagnostics.copied = gen.copied;
    return turn;
}

void ChatState::finalize_session() {
    if (current_.empty())
        throw std::logic_error("finalize_session: current session is empty");
    if (hierarchical()) {
        HistoryMemory mem = model_.encode_history({current_}, vocab_);
        Tensor extended(memory_.rows() + 1, memory_.cols());
        for (std::size_t i = 0; i < memory_.rows(); ++i)
            for (std::size_t j = 0; j < memory_.cols(); ++j) extended(i, j) = memory_(i, j);
        for (std::size_t j = 0; j < memory_.cols(); ++j)
            extended(memory_.rows(), j) = mem.c(0, j);
        memory_ = std::move(extended);
    }
    history_.push_back(std::move(current_));
    current_ = Session{};
}

void ChatState::reset() {
    history_.clear();
    current_ = Session{};
    memory_ = Tensor(0, static_cast<std::size_t>(model_.config().d));
}

namespace {

void print_history(const ChatState& state, std::ostream& out) {
    const auto dump_session = [&](const Session& s, const std::string& label) {
        out << label << "\n";
        for (const auto& u : s.utterances)
            out << "  " << (u.role == Role::User ? "User: " : "Assistant: ") << u.text << "\n";
    };
    for (std::size_t i = 0; i < state.history().size(); ++i)
        dump_session(state.history()[i], "[session " + std::to_string(i + 1) + "]");
    if (!state.current_session().empty()) dump_session(state.current_session(), "[current]");
    if (state.history().empty() && state.current_session().empty()) out << "(no turns yet)\n";
}

}  // namespace

void run_chat(ChatState& state, std::istream& in, std::ostream& out, bool verbose,
              const std::string& log_path) {
    std::ofstream log;
    if (!log_path.empty()) {
        log.open(log_path, std::ios::binary);
        if (!log) throw std::runtime_error("run_chat: cannot open log " + log_path);
    }
    out << "multi-session chat. /end closes the session, /reset starts over, "
           "/history prints the transcript, /quit exits.\n";
    std::string line;
    while (out << "> " << std::flush, std::getline(in, line)) {
        if (line == "/quit") break;
        if (line.empty()) continue;
        if (line == "/end") {
            try {
                state.finalize_session();
                out << "(session closed; history now has " << state.completed_sessions()
                    << " sessions)\n";
            } catch (const std::exception& e) {
                out << "error: " << e.what() << "\n";
            }
            continue;
        }
        if (line == "/reset") {
            state.reset();
            out << "(reset; history cleared)\n";
            continue;
        }
        if (line == "/history") {
            print_history(state, out);
            continue;
        }
        ChatTurn turn = state.chat_step(line);
        out << turn.assistant_text << "\n";
        if (verbose) {
            if (!turn.diagnostics.switch_active) {
                out << "  [switch bypassed]\n";
            } else {
                out << "  [alpha_vh:";
                for (double a : turn.diagnostics.alpha_vh) out << " " << a;
                out << "] [copied:";
                for (bool c : turn.diagnostics.copied) out << " " << (c ? "1" : "0");
                out << "]\n";
            }
        }
        if (log.is_open()) {
            json j{{"user", line},
                   {"assistant", turn.assistant_text},
                   {"switch_active", turn.diagnostics.switch_active},
                   {"alpha_vh", turn.diagnostics.alpha_vh},
                   {"sessions", state.completed_sessions()}};
            log << j.dump() << "\n";
        }
    }
}

}  // namespace haht
