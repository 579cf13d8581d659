#pragma once

#include <cstddef>
#include <optional>
#include <string_view>

#include "ctxnav/candidates.hpp"
#include "ctxnav/core.hpp"
#include "ctxnav/policy.hpp"
#include "ctxnav/prompts.hpp"

namespace ctxnav {

struct ContextualizeOptions {
    int max_concurrency = 4;
    // Attach the query and candidate images to coherence prompts.
    bool attach_images = true;
};

// "Judgement-YES" / "Judgement-NO", whichever comes first. Throws FormatError
// when neither appears.
Judgement parse_coherence(std::string_view reply);

std::string render_coherence_prompt(std::string_view query_question, std::string_view ref_question,
                                    const PromptTemplates& templates = PromptTemplates::defaults());
std::string render_structural_prompt(std::string_view query_question, std::string_view ref_question,
                                     const PromptTemplates& templates = PromptTemplates::defaults());

// Keeps the candidates the policy judges coherent with the query, in their
// original order. A reply that stays unparseable after one retry keeps the
// candidate and flags it.
CandidateSet agentic_filter(const Query& query, const CandidateSet& candidates,
                            const ModelPolicy& policy,
                            const PromptTemplates& templates = PromptTemplates::defaults(),
                            const ContextualizeOptions& options = {});

// Rewrites each candidate question in the form of the query. Answers are
// untouched; an empty rewrite keeps the original question and flags it.
CandidateSet structural_align(std::string_view query_text, const CandidateSet& candidates,
                              const ModelPolicy& policy,
                              const PromptTemplates& templates = PromptTemplates::defaults(),
                              const ContextualizeOptions& options = {});

struct NoiseReport {
    double semantic_noise = 0.0;
    double structural_noise = 0.0;
    // Filtered / initial, when semantic filtering has run.
    std::optional<double> effective_rate;
};

// Needs ground-truth tags on the query and every candidate; throws
// ReportUnavailable otherwise. Structural noise reads the effective
// (rewritten if present) question form, so it reflects alignment.
NoiseReport noise_report(const CandidateSet& candidates, const Query& query);

struct NoiseCounts {
    std::size_t total = 0;
    std::size_t off_task = 0;
    std::size_t off_style = 0;
};

NoiseCounts count_noise(const CandidateSet& candidates, const Query& query);

}  // namespace ctxnav
