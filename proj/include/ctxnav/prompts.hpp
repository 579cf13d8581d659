#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace ctxnav {

using SlotValues = std::map<std::string, std::string, std::less<>>;

// Substitutes `{slot}` placeholders (identifier characters only). A slot with
// no value, or a value nobody asked for, is a FormatError: templates and
// callers must agree exactly.
std::string render_template(std::string_view tmpl, const SlotValues& values);

// Names of the slots referenced by a template, in first-appearance order.
std::vector<std::string> template_slots(std::string_view tmpl);

// Prompt texts for every model role. Defaults are compiled in; any field can
// be overridden from a JSON object keyed by field name.
struct PromptTemplates {
    std::string orchestration;
    std::string system_constraints;
    std::string criteria;
    std::string chain_of_thought;
    std::string coherence;
    std::string structural;
    std::string embedding_spec;
    std::string icl_intro;
    std::string icl_reference;
    std::string icl_final;
    std::string feedback_request;

    static const PromptTemplates& defaults();
    static PromptTemplates load(const std::filesystem::path& json_path);
};

}  // namespace ctxnav
