#include "ctxnav/style.hpp"

#include <array>

namespace ctxnav {

namespace {

struct Frame {
    QuestionForm form;
    std::string_view prefix;
    std::string_view suffix;
};

constexpr std::array<Frame, 3> frames{{
    {QuestionForm::interrogative, "What is ", "?"},
    {QuestionForm::imperative, "Determine ", "."},
    {QuestionForm::narrative, "This image concerns ", "."},
}};

const Frame* match(std::string_view q) {
    for (const auto& f : frames) {
        if (q.size() > f.prefix.size() + f.suffix.size() && q.starts_with(f.prefix) &&
            q.ends_with(f.suffix))
            return &f;
    }
    return nullptr;
}

}  // namespace

std::string_view to_string(QuestionForm form) {
    switch (form) {
        case QuestionForm::interrogative: return "interrogative";
        case QuestionForm::imperative: return "imperative";
        case QuestionForm::narrative: return "narrative";
    }
    return "narrative";
}

std::optional<QuestionForm> question_form_from_string(std::string_view s) {
    for (const auto& f : frames)
        if (to_string(f.form) == s) return f.form;
    return std::nullopt;
}

std::optional<QuestionForm> classify_form(std::string_view question) {
    if (const Frame* f = match(question)) return f->form;
    return std::nullopt;
}

std::optional<std::string> extract_core(std::string_view question) {
    const Frame* f = match(question);
    if (!f) return std::nullopt;
    question.remove_prefix(f->prefix.size());
    question.remove_suffix(f->suffix.size());
    return std::string(question);
}

std::string render_form(std::string_view core, QuestionForm form) {
    for (const auto& f : frames) {
        if (f.form == form) {
            std::string out(f.prefix);
            out += core;
            out += f.suffix;
            return out;
        }
    }
    return std::string(core);
}

}  // namespace ctxnav
