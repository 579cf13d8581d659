#include <gtest/gtest.h>

#include "ctxnav/errors.hpp"
#include "ctxnav/orchestrator.hpp"
#include "support.hpp"

using namespace ctxnav;
using O = OperationId;

namespace {

constexpr int tasks = 4;
constexpr int per_task = 30;

std::string anchor(int t) { return "topic" + std::to_string(t); }

// Every sample's question names the next task's anchor while its image names
// its own, so text similarity lands off task and image similarity on task.
struct Fixture {
    Corpus corpus;
    std::shared_ptr<GroundTruth> truth = std::make_shared<GroundTruth>();
    MockEmbeddingBackend backend{MockEmbeddingConfig{32, 5, {anchor(0), anchor(1), anchor(2), anchor(3)}, 0.45}};
    Query query;

    Fixture() {
        for (int t = 0; t < tasks; ++t)
            for (int i = 0; i < per_task; ++i) {
                std::string scene = std::to_string(t * per_task + i);
                auto s = test::make_sample("s" + scene, "What is the color of the " + anchor((t + 1) % tasks) +
                                                            " object in scene " + scene + "?",
                                           "answer " + scene, "data:,picture of a " + anchor(t) + " in scene " + scene);
                s.task_tag = "task" + std::to_string(t);
                s.style_tag = "interrogative";
                truth->add_sample(s);
                corpus.add(std::move(s));
            }
        query.text = "What is the color of the " + anchor(0) + " object in scene 999?";
        query.image.uri = "data:,picture of a " + anchor(0) + " in scene 999";
        query.task_tag = "task0";
        query.style_tag = "interrogative";
        truth->add_query(query.text, OracleFacts{"task0", "interrogative", "gold", 1});
    }
};

struct Harness {
    explicit Harness(const Fixture& f)
        : policy(std::make_shared<OracleTransport>(f.truth)), downstream(std::make_shared<OracleTransport>(f.truth)) {
        services.embedder = &f.backend;
        services.policy = &policy;
        services.downstream = &downstream;
        services.probe_hardware = [] { return HardwareStatus{32.0, 200.0}; };
        config.k = 4;
        config.embed.backoff_base_ms = 0;
    }
    ModelPolicy policy;
    ModelPolicy downstream;
    Services services;
    PipelineConfig config;
};

}  // namespace

TEST(Episode, RecoversFromMisleadingTextWithinTwoRetries) {
    Fixture f;
    Harness h(f);
    EpisodeState state;
    state.corpus = &f.corpus;
    auto report = run_episode(f.query, state, h.services, h.config);
    ASSERT_TRUE(report.converged) << report.to_json().dump(2);
    EXPECT_LE(report.steps.back().timestep, 2u);
    EXPECT_EQ(report.final_answer, "gold");
    EXPECT_EQ(report.memory.size(), report.steps.size());
    ASSERT_EQ(report.steps.size(), 3u);
    EXPECT_EQ(report.steps[0].feedback.hint, MismatchHint::insufficient_shots);
    EXPECT_EQ(report.steps[1].feedback.hint, MismatchHint::image);
    const auto& chain = report.steps[2].chain;
    EXPECT_LT(std::find(chain.begin(), chain.end(), O::visual_similarity_retrieval),
              std::find(chain.begin(), chain.end(), O::textual_similarity_retrieval));
    for (const auto& s : report.steps) {
        EXPECT_TRUE(s.chain_valid);
        EXPECT_FALSE(s.error) << *s.error;
        EXPECT_TRUE(s.noise);
    }
    const auto& last = report.steps.back();
    EXPECT_EQ(last.noise->final_context->off_task, 0u);
    EXPECT_EQ(last.feedback.judgement, Judgement::yes);
    for (std::size_t i = 0; i + 1 < report.steps.size(); ++i)
        EXPECT_EQ(report.steps[i].feedback.judgement, Judgement::no);
}

TEST(Episode, SingleStepBudgetStopsEarly) {
    Fixture f;
    Harness h(f);
    h.config.max_steps = 1;
    EpisodeState state;
    state.corpus = &f.corpus;
    auto report = run_episode(f.query, state, h.services, h.config);
    EXPECT_EQ(report.steps.size(), 1u);
    EXPECT_FALSE(report.converged);
    EXPECT_EQ(report.final_answer, report.steps.front().answer);
}

TEST(Episode, ReportJsonRoundTrips) {
    Fixture f;
    Harness h(f);
    EpisodeState state;
    state.corpus = &f.corpus;
    auto report = run_episode(f.query, state, h.services, h.config);
    auto back = EpisodeReport::from_json(report.to_json());
    EXPECT_EQ(back.to_json(), report.to_json());
    EXPECT_EQ(back.memory.size(), report.memory.size());
    EXPECT_THROW(EpisodeReport::from_json(nlohmann::json{{"query", 1}}), SchemaError);
}

TEST(Episode, PersistsColdStartDatabase) {
    Fixture f;
    Harness h(f);
    test::TempDir dir;
    EpisodeState state;
    state.corpus = &f.corpus;
    state.db_dir = dir / "db";
    run_episode(f.query, state, h.services, h.config);
    ASSERT_TRUE(VectorDatabase::exists(dir / "db"));
    auto db = VectorDatabase::load(dir / "db");
    EXPECT_EQ(db.size(), f.corpus.size());

    state.db_dir = dir / "db";
    auto again = run_episode(f.query, state, h.services, h.config);
    for (const auto& s : again.steps) EXPECT_TRUE(s.deviations.empty());
}

TEST(Episode, MissingDownstreamIsConfigError) {
    Fixture f;
    Harness h(f);
    h.services.downstream = nullptr;
    EpisodeState state;
    state.corpus = &f.corpus;
    EXPECT_THROW(run_episode(f.query, state, h.services, h.config), ConfigError);
}

TEST(ExecuteChain, InvalidChainTouchesNothing) {
    Fixture f;
    Harness h(f);
    EpisodeState state;
    state.corpus = &f.corpus;
    state.query = f.query;
    OperationSequence bad{O::start, O::get_query, O::agentic_retrieval, O::end};
    EXPECT_THROW(execute_chain(bad, state, h.services, h.config), SchemaError);
    EXPECT_FALSE(state.query_loaded);
    EXPECT_FALSE(state.db);
    EXPECT_EQ(h.policy.calls(), 0u);
}

TEST(ExecuteChain, ExplicitBuildChainRetrievesVisually) {
    Fixture f;
    Harness h(f);
    EpisodeState state;
    state.corpus = &f.corpus;
    state.query = f.query;
    auto chain = parse_chain("start -> get_query -> check_updating -> multimodal_embedding -> "
                             "load_vector_database -> visual_similarity_retrieval -> end");
    ASSERT_TRUE(validate_sequence(default_graph(), chain));
    execute_chain(chain, state, h.services, h.config);
    EXPECT_TRUE(state.deviations.empty());
    ASSERT_TRUE(state.db);
    EXPECT_EQ(state.db->size(), f.corpus.size());
    ASSERT_FALSE(state.candidates.empty());
    for (const auto& c : state.candidates.items) EXPECT_EQ(*c.sample.task_tag, "task0");
}

TEST(BuildDatabase, EmptyCorpusRejected) {
    MockEmbeddingBackend b;
    EXPECT_THROW(build_database(Corpus{}, b, Backbones{ModelSpec{"t", ModelKind::text, 1, 1, {}}, ModelSpec{"v", ModelKind::vision, 1, 1, {}}}), SchemaError);
}

TEST(ExecuteChain, RetrievalWithoutDatabaseInsertsColdStart) {
    Fixture f;
    Harness h(f);
    EpisodeState state;
    state.corpus = &f.corpus;
    state.query = f.query;
    execute_chain(parse_chain("start -> get_query -> load_vector_database -> textual_similarity_retrieval -> end"),
                  state, h.services, h.config);
    ASSERT_EQ(state.deviations.size(), 1u);
    EXPECT_NE(state.deviations[0].find("cold-start"), std::string::npos);
    EXPECT_EQ(state.candidates.size(), h.config.k);
}
