#include "ctxnav/planner.hpp"

#include <algorithm>
#include <cctype>

#include "ctxnav/errors.hpp"

namespace ctxnav {

namespace {

constexpr std::string_view yes_token = "Judgement-Yes";
constexpr std::string_view no_token = "Judgement-No";
constexpr std::string_view feedback_marker = "Feedback:";

std::string_view trim(std::string_view s) {
    auto is_space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
    while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
    return s;
}

std::string lowercase(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

// Position of `word` as a whole word in `text`, or npos.
std::size_t find_word(std::string_view text, std::string_view word) {
    auto is_word = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_'; };
    for (auto pos = text.find(word); pos != std::string_view::npos; pos = text.find(word, pos + 1)) {
        bool left = pos == 0 || !is_word(text[pos - 1]);
        auto after = pos + word.size();
        bool right = after == text.size() || !is_word(text[after]);
        if (left && right) return pos;
    }
    return std::string_view::npos;
}

const char* describe_tool(OperationId op) {
    switch (op) {
        case OperationId::start: return "marks the beginning of a toolchain";
        case OperationId::get_query: return "reads the text and image of the user query";
        case OperationId::get_hardware_status: return "reports free GPU memory and disk space";
        case OperationId::check_updating:
            return "finds corpus samples that are new or changed since the last embedding pass";
        case OperationId::matching_embedding_models:
            return "picks text and image embedding models that fit the hardware";
        case OperationId::multimodal_embedding: return "embeds samples into text and image vectors";
        case OperationId::load_vector_database:
            return "opens the vector database, adding any fresh embeddings";
        case OperationId::textual_similarity_retrieval:
            return "retrieves candidates whose question text is close to the query text";
        case OperationId::visual_similarity_retrieval:
            return "retrieves candidates whose image is close to the query image";
        case OperationId::agentic_retrieval:
            return "asks the policy to drop candidates unrelated to the query";
        case OperationId::structural_alignment:
            return "rewrites candidate questions into the form of the query";
        case OperationId::end: return "hands the context to the downstream model";
    }
    return "";
}

std::string tool_library() {
    std::string out;
    for (auto op : all_operations()) {
        if (op == OperationId::start || op == OperationId::end) continue;
        out += "\n- ";
        out += to_string(op);
        out += ": ";
        out += describe_tool(op);
    }
    return out;
}

std::string join_ops(const OperationSet& set) {
    std::vector<std::string_view> names;
    for (auto op : all_operations())
        if (set.test(index_of(op))) names.push_back(to_string(op));
    std::string out;
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (i > 0) out += i + 1 == names.size() ? " and " : ", ";
        out += names[i];
    }
    return out;
}

std::string one_line(std::string_view s) {
    std::string out(s);
    std::replace(out.begin(), out.end(), '\n', ' ');
    std::replace(out.begin(), out.end(), '\r', ' ');
    return out;
}

std::string render_memory(const Memory& memory) {
    if (memory.empty()) return "none (no toolchain has been selected yet)";
    std::string out;
    for (std::size_t i = 0; i < memory.size(); ++i) {
        const auto& e = memory.entries()[i];
        out += "\n- Step " + std::to_string(i) + ": ";
        out += e.feedback.judgement == Judgement::yes ? yes_token : no_token;
        if (!e.feedback.text.empty()) out += "; Feedback: " + one_line(e.feedback.text);
        out += ". " + render_toolchain(e.chain) + "\n";
    }
    return out;
}

OperationSequence rule_pick(const std::vector<OperationSequence>& chains, const Memory& memory) {
    const OperationSequence* best = nullptr;
    int best_score = 0;
    for (const auto& c : chains) {
        int s = score_chain(c, memory);
        if (!best || s > best_score) {
            best = &c;
            best_score = s;
        }
    }
    return *best;
}

}  // namespace

std::string_view to_string(MismatchHint hint) {
    switch (hint) {
        case MismatchHint::none: return "none";
        case MismatchHint::text: return "text";
        case MismatchHint::image: return "image";
        case MismatchHint::insufficient_shots: return "insufficient_shots";
    }
    return "none";
}

std::optional<MismatchHint> mismatch_hint_from_string(std::string_view s) {
    for (auto h : {MismatchHint::none, MismatchHint::text, MismatchHint::image,
                   MismatchHint::insufficient_shots})
        if (to_string(h) == s) return h;
    return std::nullopt;
}

std::string_view to_string(Judgement j) { return j == Judgement::yes ? "yes" : "no"; }

MismatchHint classify_feedback(std::string_view explanation) {
    std::string lower = lowercase(explanation);
    for (std::string_view phrase : {"insufficient", "too few", "not enough", "fewer than"})
        if (lower.find(phrase) != std::string::npos) return MismatchHint::insufficient_shots;
    auto t = find_word(lower, "text");
    auto i = find_word(lower, "image");
    if (t == std::string::npos && i == std::string::npos) return MismatchHint::none;
    return t < i ? MismatchHint::text : MismatchHint::image;
}

FeedbackRecord parse_feedback(std::string_view text) {
    auto y = text.find(yes_token);
    auto n = text.find(no_token);
    if (y == std::string_view::npos && n == std::string_view::npos)
        throw FormatError("reply carries neither Judgement-Yes nor Judgement-No");
    FeedbackRecord r;
    if (y < n) {
        r.judgement = Judgement::yes;
        return r;
    }
    r.judgement = Judgement::no;
    auto f = text.find(feedback_marker, n);
    if (f != std::string_view::npos) {
        r.text = std::string(trim(text.substr(f + feedback_marker.size())));
        r.hint = classify_feedback(r.text);
    }
    return r;
}

std::string render_feedback(const FeedbackRecord& record) {
    if (record.judgement == Judgement::yes) return std::string(yes_token);
    std::string out(no_token);
    if (!record.text.empty()) out += "\nFeedback: " + record.text;
    return out;
}

nlohmann::json to_json(const FeedbackRecord& record) {
    return {{"judgement", to_string(record.judgement)},
            {"text", record.text},
            {"hint", to_string(record.hint)}};
}

FeedbackRecord feedback_from_json(const nlohmann::json& j) {
    FeedbackRecord r;
    const auto judgement = j.at("judgement").get<std::string>();
    if (judgement != "yes" && judgement != "no") throw SchemaError("unknown judgement '" + judgement + "'");
    r.judgement = judgement == "yes" ? Judgement::yes : Judgement::no;
    r.text = j.value("text", std::string{});
    auto hint = mismatch_hint_from_string(j.value("hint", std::string("none")));
    if (!hint) throw SchemaError("unknown mismatch hint in feedback record");
    r.hint = *hint;
    return r;
}

// --- memory ------------------------------------------------------------------

bool Memory::used(const OperationSequence& chain) const {
    return std::any_of(entries_.begin(), entries_.end(),
                       [&](const MemoryEntry& e) { return e.chain == chain; });
}

const FeedbackRecord* Memory::last_feedback() const {
    return entries_.empty() ? nullptr : &entries_.back().feedback;
}

void Memory::append(OperationSequence chain, FeedbackRecord feedback) {
    entries_.push_back({std::move(chain), std::move(feedback)});
}

Memory update_memory(Memory memory, OperationSequence chain, FeedbackRecord feedback) {
    memory.append(std::move(chain), std::move(feedback));
    return memory;
}

// --- planning ------------------------------------------------------------------

std::string_view to_string(PlanMode mode) { return mode == PlanMode::rule ? "rule" : "model"; }

std::optional<PlanMode> plan_mode_from_string(std::string_view s) {
    if (s == "rule") return PlanMode::rule;
    if (s == "model") return PlanMode::model;
    return std::nullopt;
}

int score_chain(const OperationSequence& chain, const Memory& memory) {
    const FeedbackRecord* last = memory.last_feedback();
    if (!last)
        return static_cast<int>(contains(chain, OperationId::agentic_retrieval)) +
               static_cast<int>(contains(chain, OperationId::structural_alignment));
    switch (last->hint) {
        case MismatchHint::text:
            return contains(chain, OperationId::structural_alignment) ? 2 : 0;
        case MismatchHint::image: {
            auto v = std::find(chain.begin(), chain.end(), OperationId::visual_similarity_retrieval);
            auto t = std::find(chain.begin(), chain.end(), OperationId::textual_similarity_retrieval);
            return v != chain.end() && t != chain.end() && v < t ? 2 : 0;
        }
        case MismatchHint::insufficient_shots:
            return contains(chain, OperationId::agentic_retrieval) ? 0 : 2;
        case MismatchHint::none: return 0;
    }
    return 0;
}

std::vector<OperationSequence> admissible_chains(const GrammarGraph& graph, const Memory& memory,
                                                 const PlanConstraints& constraints,
                                                 Timestep timestep) {
    std::vector<OperationSequence> all;
    for (auto& c : enumerate_toolchains(graph)) {
        bool banned = false;
        for (auto op : c) banned = banned || constraints.forbidden.test(index_of(op));
        if (!banned) all.push_back(std::move(c));
    }
    if (all.empty()) throw PlanningImpossible("the tool graph has no permitted start -> end path");

    auto filter = [](const std::vector<OperationSequence>& from, auto pred) {
        std::vector<OperationSequence> out;
        for (const auto& c : from)
            if (pred(c)) out.push_back(c);
        return out;
    };
    auto unused = [&](const OperationSequence& c) { return !memory.used(c); };

    std::vector<OperationSequence> pool = all;
    if (timestep.value == 0) {
        OperationSet need = constraints.first_step_required & ~constraints.forbidden;
        auto first = filter(all, [&](const auto& c) { return contains_all(c, need); });
        if (!first.empty()) pool = std::move(first);
    }
    if (!constraints.forbid_repeats) return pool;

    if (auto fresh = filter(pool, unused); !fresh.empty()) return fresh;
    if (auto fresh = filter(all, unused); !fresh.empty()) return fresh;

    OperationSet need = constraints.exhaustion_required & ~constraints.forbidden;
    auto exhausted = filter(all, [&](const auto& c) { return contains_all(c, need); });
    return exhausted.empty() ? all : exhausted;
}

std::string check_constraints(const GrammarGraph& graph, const OperationSequence& chain,
                              const Memory& memory, const PlanConstraints& constraints,
                              Timestep timestep) {
    auto v = validate_sequence(graph, chain);
    if (!v)
        return "the toolchain breaks the tool graph at transition " +
               std::to_string(v.first_invalid_transition);
    auto allowed = admissible_chains(graph, memory, constraints, timestep);
    if (std::find(allowed.begin(), allowed.end(), chain) != allowed.end()) return {};
    for (auto op : chain)
        if (constraints.forbidden.test(index_of(op)))
            return "the toolchain uses the disabled tool " + std::string(to_string(op));
    if (constraints.forbid_repeats && memory.used(chain))
        return "the toolchain was already selected in a previous step";
    if (timestep.value == 0) return "the first toolchain must contain " + join_ops(constraints.first_step_required);
    return "every toolchain has been used, so the toolchain must contain " +
           join_ops(constraints.exhaustion_required & ~constraints.forbidden);
}

std::string render_orchestration_prompt(const GrammarGraph& graph, const Memory& memory,
                                        const PlanConstraints& constraints, Timestep timestep,
                                        const PromptTemplates& templates) {
    std::string notice = timestep.value == 0
                             ? "This is your first step"
                             : "This is not your first step; it is step " +
                                   std::to_string(timestep.value + 1);
    if (constraints.forbidden.any())
        notice += ". Never select a toolchain containing " + join_ops(constraints.forbidden);
    std::string criteria = render_template(
        templates.criteria, {{"first_step_tools", join_ops(constraints.first_step_required)},
                             {"exhaustion_tools", join_ops(constraints.exhaustion_required &
                                                           ~constraints.forbidden)},
                             {"step_notice", notice}});
    std::string system = render_template(
        templates.system_constraints,
        {{"criteria", criteria}, {"chain_of_thought", templates.chain_of_thought}});
    return render_template(templates.orchestration,
                           {{"tool_library", tool_library()},
                            {"textualized_tool_graph", "\n" + graph.textualize()},
                            {"memory", render_memory(memory)},
                            {"system_constraints", system}});
}

PlanResult plan_toolchain(const GrammarGraph& graph, const Memory& memory,
                          const PlanConstraints& constraints, Timestep timestep, PlanMode mode,
                          const ModelPolicy* policy, const PromptTemplates& templates) {
    PlanResult result;
    if (mode == PlanMode::rule) {
        result.chain = rule_pick(admissible_chains(graph, memory, constraints, timestep), memory);
        return result;
    }
    if (!policy) throw ConfigError("model-mode planning needs a policy");

    const std::string base = render_orchestration_prompt(graph, memory, constraints, timestep, templates);
    std::string prompt = base;
    for (int attempt = 0; attempt <= max_plan_reprompts; ++attempt) {
        PlanAttempt a;
        a.reply = policy->complete(ChatRequest::user({ContentPart::make_text(prompt)})).text;
        OperationSequence chain;
        try {
            chain = parse_toolchain_text(a.reply);
            a.rejection = check_constraints(graph, chain, memory, constraints, timestep);
        } catch (const FormatError& e) {
            a.rejection = e.what();
        }
        a.valid = a.rejection.empty();
        result.attempts.push_back(a);
        if (a.valid) {
            result.chain = std::move(chain);
            return result;
        }
        prompt = base + "\n\nYour previous reply was rejected (attempt " + std::to_string(attempt + 1) +
                 "): " + one_line(a.rejection) +
                 ". Answer again and end with a line of the form 'Toolchain: tool A -> tool B -> ... -> tool N.'";
    }
    result.chain = rule_pick(admissible_chains(graph, memory, constraints, timestep), memory);
    result.fell_back = true;
    return result;
}

}  // namespace ctxnav
