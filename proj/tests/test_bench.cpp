#include <gtest/gtest.h>

#include <map>

#include "ctxnav/bench.hpp"
#include "ctxnav/errors.hpp"
#include "ctxnav/style.hpp"
#include "support.hpp"

using namespace ctxnav;

namespace {

SyntheticSpec small_spec() {
    SyntheticSpec s;
    s.task_count = 4;
    s.samples_per_task = 20;
    s.query_count = 12;
    s.vector_dim = 32;
    s.seed = 11;
    return s;
}

QueryTrial trial(std::string gold, std::string baseline, std::string final_answer, std::vector<TimestepRecord> steps) {
    QueryTrial t;
    t.gold = std::move(gold);
    t.baseline_answer = std::move(baseline);
    t.episode.final_answer = std::move(final_answer);
    t.episode.steps = std::move(steps);
    return t;
}

TimestepRecord step(std::optional<StageCounts> noise, std::vector<PlanAttempt> attempts = {}, bool valid = true) {
    TimestepRecord r;
    r.noise = noise;
    r.plan_attempts = std::move(attempts);
    r.chain_valid = valid;
    return r;
}

// Wall-clock latency is the only nondeterministic field of a trace.
nlohmann::json without_latency(nlohmann::json log) {
    for (auto& t : log["trials"])
        for (auto& s : t["episode"]["steps"]) s.erase("latency_ms");
    return log;
}

}  // namespace

TEST(Generator, DeterministicForSeed) {
    auto a = generate_corpus(small_spec());
    auto b = generate_corpus(small_spec());
    EXPECT_EQ(a.corpus.samples(), b.corpus.samples());
    EXPECT_EQ(a.queries, b.queries);
    EXPECT_EQ(a.truth.to_json(), b.truth.to_json());
    auto other = small_spec();
    other.seed = 12;
    EXPECT_NE(generate_corpus(other).corpus.samples(), a.corpus.samples());
}

TEST(Generator, PlantedRatesAreExact) {
    for (double noise : {0.0, 0.25, 0.5}) {
        auto spec = small_spec();
        spec.semantic_noise_rate = noise;
        spec.structural_mix = 0.35;
        auto bench = generate_corpus(spec);
        ASSERT_EQ(bench.corpus.size(), 80u);
        std::map<std::string, int> off_task, off_style;
        for (const auto& s : bench.corpus.samples()) {
            auto home = s.question.substr(s.question.find("topic"), 6);
            std::string home_task = "task" + home.substr(5);
            off_task[home_task] += *s.task_tag != home_task;
            off_style[home_task] += *s.style_tag != "interrogative";
            EXPECT_EQ(to_string(*classify_form(s.question)), *s.style_tag);
        }
        for (const auto& [task, n] : off_task) EXPECT_EQ(n, static_cast<int>(std::lround(noise * 20))) << task;
        for (const auto& [task, n] : off_style) EXPECT_EQ(n, 7) << task;
    }
}

TEST(Generator, QueriesCycleTasksAndCarryFacts) {
    auto bench = generate_corpus(small_spec());
    ASSERT_EQ(bench.queries.size(), 12u);
    int easy = 0;
    for (std::size_t i = 0; i < bench.queries.size(); ++i) {
        const auto& q = bench.queries[i];
        EXPECT_EQ(*q.task_tag, "task" + std::to_string(i % 4));
        EXPECT_EQ(classify_form(q.text), QuestionForm::interrogative);
        const auto* f = bench.truth.by_question(q.text);
        ASSERT_NE(f, nullptr);
        EXPECT_GE(f->difficulty, 0);
        EXPECT_LE(f->difficulty, 6);
        easy += f->difficulty == 0;
    }
    EXPECT_LT(easy, 12);
    EXPECT_EQ(bench.embedding.anchors.size(), 4u);
}

TEST(Spec, JsonRoundTripAndValidation) {
    auto s = small_spec();
    auto back = SyntheticSpec::from_json(s.to_json());
    EXPECT_EQ(back.to_json(), s.to_json());
    EXPECT_THROW(SyntheticSpec::from_json({{"task_count", 3}}), ConfigError);
    EXPECT_THROW(SyntheticSpec::from_json({{"seed", 1}, {"style_count", 4}}), ConfigError);
    EXPECT_THROW(SyntheticSpec::from_json({{"seed", 1}, {"semantic_noise_rate", 1.5}}), ConfigError);
    EXPECT_THROW(SyntheticSpec::from_json({{"seed", 1}, {"task_count", "many"}}), ConfigError);
    test::TempDir dir;
    test::write_file(dir / "spec.json", "{not json");
    EXPECT_THROW(SyntheticSpec::load(dir / "spec.json"), ConfigError);
    EXPECT_THROW(SyntheticSpec::load(dir / "missing.json"), IoError);
}

TEST(Metrics, HandComputedLog) {
    TrialLog log;
    StageCounts a{{8, 4, 2}, NoiseCounts{4, 0, 1}, 4};
    StageCounts b{{8, 2, 6}, NoiseCounts{8, 2, 0}, std::nullopt};
    log.trials.push_back(trial("g1", "g1", "g1", {step(a), step(b)}));
    log.trials.push_back(trial("g2", "x", "g2", {step(b)}));
    log.trials.push_back(trial("g3", "x", "y", {step(std::nullopt, {{"bad", false, "r"}, {"ok", true, ""}})}));
    log.trials.push_back(trial("g4", "g4", "y", {step(std::nullopt, {{"bad", false, "r"}, {"bad", false, "r"}}, true)}));
    auto m = compute_metrics(log);
    EXPECT_EQ(m.queries, 4u);
    EXPECT_DOUBLE_EQ(m.baseline_accuracy, 0.5);
    EXPECT_DOUBLE_EQ(m.icl_accuracy, 0.5);
    EXPECT_DOUBLE_EQ(m.icl_gain_percent, 0.0);
    // First timesteps only: a and b.
    EXPECT_DOUBLE_EQ(m.semantic_noise_pre, 6.0 / 16.0);
    EXPECT_DOUBLE_EQ(m.structural_noise_pre, 8.0 / 16.0);
    EXPECT_DOUBLE_EQ(m.semantic_noise_post, 2.0 / 12.0);
    EXPECT_DOUBLE_EQ(m.structural_noise_post, 1.0 / 12.0);
    EXPECT_DOUBLE_EQ(*m.effective_rate, 0.5);
    EXPECT_DOUBLE_EQ(m.tsr_at_1, 0.5);
    EXPECT_DOUBLE_EQ(m.tsr_at_5, 0.75);
    EXPECT_DOUBLE_EQ(m.mean_timesteps, 5.0 / 4.0);
    EXPECT_EQ(compute_metrics(TrialLog{}).queries, 0u);
}

TEST(Metrics, GainRelativeToBaseline) {
    TrialLog log;
    log.trials.push_back(trial("g", "g", "g", {step(std::nullopt)}));
    log.trials.push_back(trial("h", "x", "h", {step(std::nullopt)}));
    EXPECT_DOUBLE_EQ(compute_metrics(log).icl_gain_percent, 100.0);
    EXPECT_FALSE(compute_metrics(log).effective_rate);
}

TEST(Benchmark, DeterministicAcrossWorkerCounts) {
    BenchConfig one;
    one.workers = 1;
    BenchConfig four;
    four.workers = 4;
    auto a = run_benchmark(small_spec(), one);
    auto b = run_benchmark(small_spec(), four);
    EXPECT_EQ(without_latency(a.log.to_json()), without_latency(b.log.to_json()));
    EXPECT_EQ(a.metrics.to_json(), b.metrics.to_json());
    EXPECT_EQ(a.log.trials.size(), 12u);
    EXPECT_DOUBLE_EQ(a.metrics.tsr_at_1, 1.0);
    EXPECT_GE(a.metrics.icl_accuracy, a.metrics.baseline_accuracy);
}

TEST(Benchmark, TraceRoundTripsAndReproducesMetrics) {
    auto run = run_benchmark(small_spec(), BenchConfig{});
    auto log = TrialLog::from_json(nlohmann::json::parse(run.log.to_json().dump()));
    EXPECT_EQ(log.to_json(), run.log.to_json());
    EXPECT_EQ(compute_metrics(log).to_json(), run.metrics.to_json());
    EXPECT_THROW(TrialLog::from_json({{"spec", 1}}), SchemaError);
}

TEST(Benchmark, AblationRecordedAndHonoured) {
    BenchConfig c;
    c.ablate = make_set({OperationId::agentic_retrieval, OperationId::structural_alignment});
    auto run = run_benchmark(small_spec(), c);
    EXPECT_EQ(run.log.ablate, "agentic_retrieval,structural_alignment");
    for (const auto& t : run.log.trials)
        for (const auto& s : t.episode.steps) {
            EXPECT_FALSE(contains(s.chain, OperationId::agentic_retrieval));
            EXPECT_FALSE(contains(s.chain, OperationId::structural_alignment));
        }
    EXPECT_FALSE(run.metrics.effective_rate);
}

TEST(Csv, ShotSweepAndAlignment) {
    std::vector<ShotPoint> points{{1, TrialMetrics{}}, {4, TrialMetrics{}}};
    points[1].metrics.icl_accuracy = 0.5;
    EXPECT_EQ(shot_sweep_csv(points),
              "shots,baseline_accuracy,icl_accuracy,icl_gain_percent\n1,0,0,0\n4,0,0.5,0\n");
    AlignmentAnalysis a;
    a.pairs.push_back({"q00000", "s00001", 0.25, 0.75});
    a.gain_cdf.emplace_back(0.5, 1.0);
    EXPECT_EQ(alignment_csv(a), "query,candidate,original_similarity,aligned_similarity\nq00000,s00001,0.25,0.75\n");
    EXPECT_EQ(gain_cdf_csv(a), "gain,cdf\n0.5,1\n");
}

TEST(Alignment, FractionAndCdfFromPairs) {
    MockEmbeddingBackend b(MockEmbeddingConfig{32, 2, {}, 0.45});
    ModelSpec m{"t", ModelKind::text, 1, 1, {}};
    Query q;
    q.text = "What is the size of the red cube?";
    CandidateSet set;
    set.items.push_back(Candidate{test::make_sample("a", "Determine the size of the red cube.", "x", "data:,1"), 0,
                                  std::string("What is the size of the red cube?"), {}, false});
    set.items.push_back(Candidate{test::make_sample("b", "What is the size of the red cube?", "x", "data:,2"), 0,
                                  std::string("What is the size of the red cube?"), {}, false});
    auto a = alignment_similarity_analysis({q}, {set}, b, m);
    ASSERT_EQ(a.pairs.size(), 2u);
    EXPECT_NEAR(a.pairs[0].aligned, 1.0, 1e-6);
    EXPECT_LT(a.pairs[0].original, a.pairs[0].aligned);
    EXPECT_DOUBLE_EQ(a.fraction_above_diagonal, 0.5);
    ASSERT_EQ(a.gain_cdf.size(), 2u);
    EXPECT_LE(a.gain_cdf[0].first, a.gain_cdf[1].first);
    EXPECT_DOUBLE_EQ(a.gain_cdf[1].second, 1.0);
    EXPECT_THROW(alignment_similarity_analysis({q}, {}, b, m), SchemaError);
}
