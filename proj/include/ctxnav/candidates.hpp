#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ctxnav/core.hpp"

namespace ctxnav {

enum class CandidateStage { initial, semantic_filtered, aligned };

std::string_view to_string(CandidateStage stage);

enum class Judgement { yes, no };

struct Candidate {
    Sample sample;
    double score = 0.0;
    std::optional<std::string> rewritten_question;
    std::optional<Judgement> judgement;
    // Set when a policy reply could not be used and a fallback applied.
    bool flagged = false;

    const std::string& effective_question() const {
        return rewritten_question ? *rewritten_question : sample.question;
    }
};

struct CandidateSet {
    CandidateStage stage = CandidateStage::initial;
    std::vector<Candidate> items;
    // Size of the similarity-retrieved pool this set descends from.
    std::size_t initial_count = 0;
    // Survivors of semantic filtering, once it has run.
    std::optional<std::size_t> filtered_count;

    std::size_t size() const noexcept { return items.size(); }
    bool empty() const noexcept { return items.empty(); }
};

}  // namespace ctxnav
