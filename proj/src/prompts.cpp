#include "ctxnav/prompts.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ctxnav/errors.hpp"

namespace ctxnav {

namespace {

bool is_slot_char(char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_';
}

// Calls on_text / on_slot for each piece of the template.
template <typename OnText, typename OnSlot>
void scan(std::string_view tmpl, OnText on_text, OnSlot on_slot) {
    std::size_t i = 0;
    while (i < tmpl.size()) {
        auto open = tmpl.find('{', i);
        if (open == std::string_view::npos) {
            on_text(tmpl.substr(i));
            return;
        }
        auto close = open + 1;
        while (close < tmpl.size() && is_slot_char(tmpl[close])) ++close;
        if (close < tmpl.size() && tmpl[close] == '}' && close > open + 1) {
            on_text(tmpl.substr(i, open - i));
            on_slot(tmpl.substr(open + 1, close - open - 1));
            i = close + 1;
        } else {
            on_text(tmpl.substr(i, open + 1 - i));
            i = open + 1;
        }
    }
}

constexpr std::string_view orchestration_default =
    "You are an agent responsible for retrieving information relevant to the user's query "
    "and integrating it into contextual knowledge to assist a multimodal large language model "
    "with in-context learning.\n\n"
    "Your available tools are defined as functions with the following descriptions: "
    "{tool_library}. From the tool graph {textualized_tool_graph}, you must select one "
    "appropriate toolchain to automate the in-context learning process.\n\n"
    "The following are the toolchain(s) you selected in previous steps together with the "
    "feedback received for your provided contextual knowledge: {memory}.\n\n"
    "{system_constraints}.\n\n"
    "Based on your reasoning, decide on the most appropriate toolchain at this step. You must "
    "first present your reasoning process, and then output your final decision strictly in the "
    "format: 'Toolchain: tool A -> tool B -> ... -> tool N.', where the period \".\" marks the "
    "end of the output and must not be omitted.";

constexpr std::string_view system_constraints_default =
    "There are some criteria you must follow: {criteria}.\n\n"
    "Please reason these questions and tell me your reasoning results: {chain_of_thought}";

constexpr std::string_view criteria_default =
    "1. If you are explicitly instructed that this is your first step, you must select a "
    "toolchain that contains the tools {first_step_tools}. However, you cannot stop at these "
    "tools; the complete toolchain must be specified.\n"
    "2. If you are not explicitly told that this is your first step, or if you know it is not "
    "your first step (e.g., you already selected a toolchain in the previous step), you may "
    "select other toolchains at this step.\n"
    "3. You must avoid re-selecting any toolchains that have already been chosen in previous "
    "steps.\n"
    "4. If all toolchains have already been selected in previous steps, then you must disregard "
    "the above criteria and instead select a toolchain that includes at least the tools "
    "{exhaustion_tools}.\n"
    "{step_notice}";

constexpr std::string_view chain_of_thought_default =
    "1. Is the current step your first step?\n"
    "2. If it is not your first step, list the toolchains you have already used in the "
    "previous steps.\n"
    "3. Reflect on the feedback you received regarding the retrieved context information. Do "
    "you think the issues described in the feedback are related to the toolchains you selected "
    "in earlier steps?";

constexpr std::string_view coherence_default =
    "The two images above, together with the following questions, form two image-question "
    "pairs.\n\n"
    "Question 1: {query_question}\n\n"
    "Question 2: {ref_question}\n\n"
    "You don't need to answer the questions. Just decide whether the two pairs share any "
    "similarity, either in the images (content) or in the question types (e.g., both ask for "
    "counting, scene understanding, etc.).\n\n"
    "- If there is any similarity, reply: 'Judgement-YES'.\n\n"
    "- If there is no similarity, reply: 'Judgement-NO' and briefly explain why.\n\n"
    "(Optional: The similarity criterion does not need to be strict, any reasonable overlap "
    "counts as similarity.)";

constexpr std::string_view structural_default =
    "Rewrite the following question in the style of {query_question}.\n\n"
    "Only output the rewritten question, without any explanations or extra text.\n\n"
    "Question to rewrite: {ref_question}.";

constexpr std::string_view embedding_spec_default =
    "From the following options:\n\n"
    "- Text models: {text_emb_model_zoo_prompt}\n\n"
    "- Visual models: {vis_emb_model_zoo_prompt}\n\n"
    "Select one text model and one visual model based on the hardware status "
    "{hardware_status}, considering disk and GPU memory usage base on "
    "{resource_usage_preference}.\n\n"
    "Output format:\n"
    "Text Embedding: text_model_id; Image Embedding: visual_model_id\n\n"
    "Restriction: Do not generate any additional symbols (e.g., **). If a vector database "
    "already exists, it is essential to ensure that the chosen embedding model is compatible "
    "with it.{existing_database}";

constexpr std::string_view icl_intro_default =
    "I will provide a series of reference images, each paired with a corresponding question "
    "and answer.\n"
    "Your task is to reflect on these references and summarize the useful information they "
    "convey.\n"
    "After all references have been presented, I will then provide one final image with its "
    "question.\n"
    "Based on your prior reflections, you should give an answer to this final query.\n";

constexpr std::string_view icl_reference_default =
    "\nImage {index}: {image_marker}\n"
    "Question: {ref_question}\n"
    "Answer: {ref_answer}\n";

constexpr std::string_view icl_final_default =
    "\nFinally, the last query is:\n"
    "Final Image: {image_marker}\n"
    "Final Question: {query_question}\n\n"
    "Please use your summarized reflections from the reference samples to answer the final "
    "question.\n\n"
    "{feedback_request}";

constexpr std::string_view feedback_request_default =
    "Please evaluate whether the reference samples you received were helpful and sufficiently "
    "rich (with the number of shots approximately matching the preset value {k}) in solving "
    "your final problem. If they were, additionally output \"Judgement-Yes\"; if not, "
    "additionally output \"Judgement-No\" and, starting with \"Feedback:\", explain whether the "
    "mismatch arose from the text or the image of the reference samples.";

}  // namespace

std::string render_template(std::string_view tmpl, const SlotValues& values) {
    std::string out;
    std::set<std::string, std::less<>> used;
    scan(
        tmpl, [&](std::string_view text) { out += text; },
        [&](std::string_view slot) {
            auto it = values.find(slot);
            if (it == values.end())
                throw FormatError("template slot '{" + std::string(slot) + "}' has no value");
            out += it->second;
            used.insert(std::string(slot));
        });
    for (const auto& [name, _] : values)
        if (!used.contains(name))
            throw FormatError("value supplied for absent template slot '" + name + "'");
    return out;
}

std::vector<std::string> template_slots(std::string_view tmpl) {
    std::vector<std::string> out;
    scan(
        tmpl, [](std::string_view) {},
        [&](std::string_view slot) {
            for (const auto& s : out)
                if (s == slot) return;
            out.emplace_back(slot);
        });
    return out;
}

const PromptTemplates& PromptTemplates::defaults() {
    static const PromptTemplates t{
        std::string(orchestration_default),
        std::string(system_constraints_default),
        std::string(criteria_default),
        std::string(chain_of_thought_default),
        std::string(coherence_default),
        std::string(structural_default),
        std::string(embedding_spec_default),
        std::string(icl_intro_default),
        std::string(icl_reference_default),
        std::string(icl_final_default),
        std::string(feedback_request_default),
    };
    return t;
}

PromptTemplates PromptTemplates::load(const std::filesystem::path& json_path) {
    std::ifstream in(json_path);
    if (!in) throw IoError(json_path.string(), "cannot open prompt templates");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(json_path.string() + ": " + e.what());
    }
    if (!j.is_object()) throw FormatError(json_path.string() + ": expected a JSON object");
    PromptTemplates t = defaults();
    const std::pair<const char*, std::string PromptTemplates::*> fields[] = {
        {"orchestration", &PromptTemplates::orchestration},
        {"system_constraints", &PromptTemplates::system_constraints},
        {"criteria", &PromptTemplates::criteria},
        {"chain_of_thought", &PromptTemplates::chain_of_thought},
        {"coherence", &PromptTemplates::coherence},
        {"structural", &PromptTemplates::structural},
        {"embedding_spec", &PromptTemplates::embedding_spec},
        {"icl_intro", &PromptTemplates::icl_intro},
        {"icl_reference", &PromptTemplates::icl_reference},
        {"icl_final", &PromptTemplates::icl_final},
        {"feedback_request", &PromptTemplates::feedback_request},
    };
    for (const auto& [key, value] : j.items()) {
        auto it = std::find_if(std::begin(fields), std::end(fields),
                               [&](const auto& f) { return key == f.first; });
        if (it == std::end(fields)) throw FormatError(json_path.string() + ": unknown template '" + key + "'");
        if (!value.is_string()) throw FormatError(json_path.string() + ": template '" + key + "' must be a string");
        std::string text = value.get<std::string>();
        auto want = template_slots(defaults().*(it->second));
        auto got = template_slots(text);
        std::sort(want.begin(), want.end());
        std::sort(got.begin(), got.end());
        if (want != got)
            throw FormatError(json_path.string() + ": template '" + key + "' must use the same slots as the default");
        t.*(it->second) = std::move(text);
    }
    return t;
}

}  // namespace ctxnav
