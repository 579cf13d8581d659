#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "ctxnav/candidates.hpp"
#include "ctxnav/core.hpp"
#include "ctxnav/planner.hpp"
#include "ctxnav/policy.hpp"
#include "ctxnav/prompts.hpp"

namespace ctxnav {

inline constexpr std::size_t default_shots = 8;

// Where reference images go: all before the text, or each next to its block.
enum class ImagePlacement { upfront, interleaved };

std::string_view to_string(ImagePlacement p);
std::optional<ImagePlacement> image_placement_from_string(std::string_view s);

inline constexpr std::string_view image_marker = "<image>";

struct RenderedPrompt {
    ChatRequest request;
    // Prompt text with an image marker where each attachment belongs.
    std::string text;
    std::size_t shots = 0;
    std::size_t k = 0;
};

// Uses at most k candidates, rewritten questions where present. With k = 0
// or no candidates the prompt holds only the final query and the feedback
// request.
RenderedPrompt assemble_icl_prompt(const CandidateSet& context, const Query& query, std::size_t k,
                                   ImagePlacement placement,
                                   const PromptTemplates& templates = PromptTemplates::defaults(),
                                   bool attach_images = true);

struct IclOutcome {
    std::string answer;
    FeedbackRecord feedback;
    std::string raw;
    std::uint64_t token_count = 0;
    double latency_ms = 0.0;
    // No judgement token even after one retry.
    bool flagged = false;
};

// Splits a downstream reply at the first judgement token. Without a token
// the whole reply is the answer and parse_feedback's FormatError escapes.
std::pair<std::string, FeedbackRecord> split_icl_reply(std::string_view raw);

// Transport failures become IclError.
IclOutcome run_icl(const ModelPolicy& model, const RenderedPrompt& prompt);

}  // namespace ctxnav
