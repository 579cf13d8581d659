#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace ctxnav {

// Surface form of a question. Structural noise is a mismatch between the
// form of a candidate and the form of the query.
enum class QuestionForm { interrogative, imperative, narrative };

std::string_view to_string(QuestionForm form);
std::optional<QuestionForm> question_form_from_string(std::string_view s);

// Recognizes the three canonical frames:
//   interrogative  "What is <core>?"
//   imperative     "Determine <core>."
//   narrative      "This image concerns <core>."
// Anything else yields nullopt.
std::optional<QuestionForm> classify_form(std::string_view question);

// The <core> of a framed question, or nullopt if no frame matches.
std::optional<std::string> extract_core(std::string_view question);

std::string render_form(std::string_view core, QuestionForm form);

}  // namespace ctxnav
