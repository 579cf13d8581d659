#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctxnav/candidates.hpp"
#include "ctxnav/contextualize.hpp"
#include "ctxnav/core.hpp"
#include "ctxnav/embed.hpp"
#include "ctxnav/icl.hpp"
#include "ctxnav/ogg.hpp"
#include "ctxnav/planner.hpp"
#include "ctxnav/policy.hpp"
#include "ctxnav/prompts.hpp"
#include "ctxnav/vecdb.hpp"

namespace ctxnav {

struct PipelineConfig {
    std::size_t k = default_shots;
    // First-stage pool of cascaded retrieval, as a multiple of the pool size.
    int cascade_overfetch = 4;
    // Pool size multiplier when the chain filters candidates afterwards.
    double agentic_overfetch = 1.5;
    ImagePlacement placement = ImagePlacement::interleaved;
    PlanMode plan_mode = PlanMode::rule;
    int max_steps = 5;
    PlanConstraints constraints;
    ResourcePreference preference;
    EmbedOptions embed;
    ContextualizeOptions contextualize;
    bool attach_images = true;
};

// Everything an episode calls out to. Pointers are non-owning and must
// outlive the episode.
struct Services {
    const GrammarGraph* graph = &default_graph();
    const EmbeddingBackend* embedder = nullptr;
    const ModelPolicy* policy = nullptr;       // planner, filter, aligner, model matching
    const ModelPolicy* downstream = nullptr;   // answers the query
    const PromptTemplates* templates = &PromptTemplates::defaults();
    const ModelZoo* zoo = &ModelZoo::stock();
    // Free GPU memory and disk; no portable GPU probe exists, so callers
    // supply one.
    std::function<HardwareStatus()> probe_hardware;
    // Ask the policy to pick embedding models (rule check still applies).
    bool model_matching = false;
};

struct EpisodeState {
    Query query;
    bool query_loaded = false;
    const Corpus* corpus = nullptr;
    // Empty: the database lives in memory only.
    std::filesystem::path db_dir;
    std::shared_ptr<const VectorDatabase> db;
    std::optional<HardwareStatus> hardware;
    std::optional<Backbones> backbones;
    std::optional<std::vector<Sample>> delta;
    std::optional<EmbeddingSet> fresh;
    std::optional<QueryVectors> query_vectors;
    // Similarity-retrieved pool of the current timestep, before denoising.
    CandidateSet retrieved_pool;
    CandidateSet candidates;
    bool retrieved = false;
    Memory memory;
    Timestep timestep;
    // Implicit steps the engine inserted, such as a cold-start build.
    std::vector<std::string> deviations;
};

// Runs each operation of a validated chain against the state. Throws
// SchemaError before touching anything if the chain is invalid.
void execute_chain(const OperationSequence& chain, EpisodeState& state, const Services& services,
                   const PipelineConfig& config);

struct StageCounts {
    NoiseCounts initial;
    std::optional<NoiseCounts> final_context;
    std::optional<std::size_t> filtered;   // survivors of agentic_retrieval
};

struct TimestepRecord {
    std::uint32_t timestep = 0;
    OperationSequence chain;
    std::vector<PlanAttempt> plan_attempts;
    bool plan_fell_back = false;
    bool chain_valid = false;
    std::size_t initial_count = 0;
    std::size_t context_count = 0;
    std::optional<StageCounts> noise;   // bench corpora only
    std::string answer;
    FeedbackRecord feedback;
    bool icl_flagged = false;
    std::optional<std::string> error;
    std::vector<std::string> deviations;
    std::uint64_t tokens = 0;
    double latency_ms = 0.0;
};

struct EpisodeReport {
    Query query;
    std::string final_answer;
    std::vector<TimestepRecord> steps;
    bool converged = false;
    Memory memory;

    nlohmann::json to_json() const;
    static EpisodeReport from_json(const nlohmann::json& j);
};

// plan -> execute -> ICL -> feedback -> memory, until Judgement-Yes or
// max_steps. `state` supplies the corpus, database and (optionally) prior
// memory; its candidate pool is rebuilt every timestep.
EpisodeReport run_episode(const Query& query, EpisodeState state, const Services& services,
                          const PipelineConfig& config);

// Builds a database from scratch for a whole corpus.
std::shared_ptr<VectorDatabase> build_database(const Corpus& corpus, const EmbeddingBackend& backend,
                                               const Backbones& backbones,
                                               const EmbedOptions& options = {});

nlohmann::json to_json(const NoiseCounts& n);
NoiseCounts noise_counts_from_json(const nlohmann::json& j);

}  // namespace ctxnav
