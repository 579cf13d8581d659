#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctxnav/core.hpp"
#include "ctxnav/embed.hpp"
#include "ctxnav/orchestrator.hpp"
#include "ctxnav/policy.hpp"

namespace ctxnav {

struct SyntheticSpec {
    int task_count = 8;
    int samples_per_task = 60;
    // Question forms in use, 1 to 3. The query form is always interrogative.
    int style_count = 3;
    // Share of each task's neighbourhood planted with off-task samples.
    double semantic_noise_rate = 0.3;
    // Share of samples phrased in a form other than the query's.
    double structural_mix = 0.5;
    int vector_dim = 64;
    std::uint64_t seed = 7;
    int query_count = 200;
    // Queries answerable without any context; the rest need 1..max_difficulty
    // on-task shots.
    double easy_fraction = 0.3;
    int max_difficulty = 6;

    void validate() const;
    nlohmann::json to_json() const;
    static SyntheticSpec from_json(const nlohmann::json& j);
    static SyntheticSpec load(const std::filesystem::path& path);
};

struct SyntheticBench {
    Corpus corpus;
    std::vector<Query> queries;
    GroundTruth truth;
    MockEmbeddingConfig embedding;
};

// Anchor token naming a task's region of embedding space.
std::string task_anchor(int task);

SyntheticBench generate_corpus(const SyntheticSpec& spec);

struct BenchConfig {
    PipelineConfig pipeline;
    // Operations every planned chain must omit.
    OperationSet ablate;
    int workers = 4;
    OracleConfig oracle;
};

struct QueryTrial {
    Query query;
    std::string gold;
    std::string baseline_answer;
    EpisodeReport episode;
};

struct TrialLog {
    SyntheticSpec spec;
    std::size_t k = 0;
    std::string ablate;   // comma-separated operation names
    std::vector<QueryTrial> trials;

    nlohmann::json to_json() const;
    static TrialLog from_json(const nlohmann::json& j);
};

struct TrialMetrics {
    std::size_t queries = 0;
    double baseline_accuracy = 0.0;
    double icl_accuracy = 0.0;
    double icl_gain_percent = 0.0;
    // Noise is measured at each episode's first timestep: in the retrieved
    // pool (pre) and in the context handed to the model (post).
    double semantic_noise_pre = 0.0;
    double semantic_noise_post = 0.0;
    double structural_noise_pre = 0.0;
    double structural_noise_post = 0.0;
    std::optional<double> effective_rate;
    double tsr_at_1 = 0.0;
    double tsr_at_5 = 0.0;
    double mean_timesteps = 0.0;

    nlohmann::json to_json() const;
};

// Pure function of the log; `report` recomputes it from a saved trace.
TrialMetrics compute_metrics(const TrialLog& log);

// Fraction of episodes whose first-timestep planning produced a valid
// toolchain within `x` policy replies. Rule-mode plans count as valid.
double toolchain_success_rate(const TrialLog& log, std::size_t x);

struct BenchRun {
    TrialLog log;
    TrialMetrics metrics;
};

// Zero-shot baseline and full closed loop for every query, all with oracle
// policies and mock embeddings.
BenchRun run_benchmark(const SyntheticSpec& spec, const BenchConfig& config);

struct ShotPoint {
    std::size_t shots = 0;
    TrialMetrics metrics;
};

std::vector<ShotPoint> shot_sweep(const SyntheticSpec& spec, const BenchConfig& config,
                                  const std::vector<std::size_t>& shots);
std::string shot_sweep_csv(const std::vector<ShotPoint>& points);

struct SimilarityPair {
    std::string query_id;
    std::string candidate_id;
    double original = 0.0;
    double aligned = 0.0;
};

struct AlignmentAnalysis {
    std::vector<SimilarityPair> pairs;
    double fraction_above_diagonal = 0.0;
    // Sorted gains (aligned - original) with their empirical CDF values.
    std::vector<std::pair<double, double>> gain_cdf;
};

// Cosine of each query text against its candidates' original and rewritten
// questions, under the given text model.
AlignmentAnalysis alignment_similarity_analysis(const std::vector<Query>& queries,
                                                const std::vector<CandidateSet>& aligned,
                                                const EmbeddingBackend& backend,
                                                const ModelSpec& text_model);

// Takes the `candidates` nearest textual neighbours phrased in a form other
// than the query's, for each of the first `query_count` queries, aligns them
// with the oracle and analyses the similarity shift.
AlignmentAnalysis run_alignment_analysis(const SyntheticSpec& spec, const BenchConfig& config,
                                         std::size_t query_count = 50, std::size_t candidates = 8);

std::string alignment_csv(const AlignmentAnalysis& analysis);
std::string gain_cdf_csv(const AlignmentAnalysis& analysis);

// Backbones and hardware the benchmark pretends to run on.
Backbones bench_backbones();
HardwareStatus bench_hardware();

}  // namespace ctxnav
