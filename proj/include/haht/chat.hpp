#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "haht/data.hpp"
#include "haht/model.hpp"

namespace haht {

struct ChatDiagnostics {
    bool switch_active = false;
    std::vector<double> alpha_vh;  // per emitted token, empty when bypassed
    std::vector<bool> copied;
};

struct ChatTurn {
    std::string assistant_text;
    ChatDiagnostics diagnostics;
};

// Interactive multi-session conversation over a frozen model. Completed
// sessions feed the history memory; the current session grows turn by turn
// and becomes history on finalize_session().
class ChatState {
public:
    ChatState(HahtModel model, Vocabulary vocab, int max_len = 32);

    // Appends the user utterance, decodes a response, appends it too.
    ChatTurn chat_step(const std::string& user_text);

    // Moves the current session into history and extends the memory cache by
    // one row. Throws if the current session is empty.
    void finalize_session();

    void reset();

    const std::vector<Session>& history() const { return history_; }
    const Session& current_session() const { return current_; }
    std::size_t completed_sessions() const { return history_.size(); }
    const Tensor& memory() const { return memory_; }
    const HahtModel& model() const { return model_; }
    const Vocabulary& vocab() const { return vocab_; }

private:
    bool hierarchical() const {
        return model_.variant() == Variant::Full || model_.variant() == Variant::NoSw;
    }

    HahtModel model_;
    Vocabulary vocab_;
    int max_len_;
    std::vector<Session> history_;
    Session current_;
    Tensor memory_;  // M x d cache, hierarchical variants only
};

// Line-oriented REPL: /end, /reset, /history, /quit. Returns when the input
// ends. When `log_path` is nonempty every turn is appended there as JSONL.
void run_chat(ChatState& state, std::istream& in, std::ostream& out, bool verbose,
              const std::string& log_path = "");

}  // namespace haht
