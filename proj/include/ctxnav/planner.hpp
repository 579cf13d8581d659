#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctxnav/candidates.hpp"
#include "ctxnav/core.hpp"
#include "ctxnav/ogg.hpp"
#include "ctxnav/policy.hpp"
#include "ctxnav/prompts.hpp"

namespace ctxnav {

enum class MismatchHint { none, text, image, insufficient_shots };

std::string_view to_string(MismatchHint hint);
std::optional<MismatchHint> mismatch_hint_from_string(std::string_view s);
std::string_view to_string(Judgement j);

struct FeedbackRecord {
    Judgement judgement = Judgement::no;
    // Explanation following "Feedback:", trimmed. Empty on Yes.
    std::string text;
    MismatchHint hint = MismatchHint::none;

    bool operator==(const FeedbackRecord&) const = default;
};

// Finds the first "Judgement-Yes" or "Judgement-No" (case-sensitive). On No,
// the text after "Feedback:" sets the hint: shot-count complaints first,
// otherwise whichever of the words "text" / "image" appears first.
// Throws FormatError when neither token is present.
FeedbackRecord parse_feedback(std::string_view text);

// Canonical text form; parse_feedback(render_feedback(r)) == r for records
// whose hint agrees with their text.
std::string render_feedback(const FeedbackRecord& record);

// Hint implied by a feedback explanation.
MismatchHint classify_feedback(std::string_view explanation);

nlohmann::json to_json(const FeedbackRecord& record);
FeedbackRecord feedback_from_json(const nlohmann::json& j);

struct MemoryEntry {
    OperationSequence chain;
    FeedbackRecord feedback;
};

// Episodic record of executed toolchains and the feedback each earned.
class Memory {
public:
    const std::vector<MemoryEntry>& entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }
    bool used(const OperationSequence& chain) const;
    const FeedbackRecord* last_feedback() const;

    void append(OperationSequence chain, FeedbackRecord feedback);

private:
    std::vector<MemoryEntry> entries_;
};

Memory update_memory(Memory memory, OperationSequence chain, FeedbackRecord feedback);

struct PlanConstraints {
    OperationSet first_step_required = make_set(
        {OperationId::textual_similarity_retrieval, OperationId::visual_similarity_retrieval});
    OperationSet exhaustion_required =
        make_set({OperationId::textual_similarity_retrieval,
                  OperationId::visual_similarity_retrieval, OperationId::agentic_retrieval});
    bool forbid_repeats = true;
    // Operations no planned chain may contain (benchmark ablations).
    OperationSet forbidden;
};

enum class PlanMode { rule, model };

std::string_view to_string(PlanMode mode);
std::optional<PlanMode> plan_mode_from_string(std::string_view s);

struct PlanAttempt {
    std::string reply;
    bool valid = false;
    std::string rejection;   // why an invalid reply was rejected
};

struct PlanResult {
    OperationSequence chain;
    // Model mode only: every policy reply, in order.
    std::vector<PlanAttempt> attempts;
    // Model mode gave up and the rule engine chose the chain.
    bool fell_back = false;
};

inline constexpr int max_plan_reprompts = 3;

int score_chain(const OperationSequence& chain, const Memory& memory);

// Chains the constraints currently permit, in canonical order.
std::vector<OperationSequence> admissible_chains(const GrammarGraph& graph, const Memory& memory,
                                                 const PlanConstraints& constraints,
                                                 Timestep timestep);

// Empty string when `chain` satisfies every constraint, else the reason.
std::string check_constraints(const GrammarGraph& graph, const OperationSequence& chain,
                              const Memory& memory, const PlanConstraints& constraints,
                              Timestep timestep);

std::string render_orchestration_prompt(const GrammarGraph& graph, const Memory& memory,
                                        const PlanConstraints& constraints, Timestep timestep,
                                        const PromptTemplates& templates = PromptTemplates::defaults());

PlanResult plan_toolchain(const GrammarGraph& graph, const Memory& memory,
                          const PlanConstraints& constraints, Timestep timestep, PlanMode mode,
                          const ModelPolicy* policy = nullptr,
                          const PromptTemplates& templates = PromptTemplates::defaults());

}  // namespace ctxnav
