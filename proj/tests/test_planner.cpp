#include <gtest/gtest.h>

#include <set>

#include "ctxnav/errors.hpp"
#include "ctxnav/planner.hpp"
#include "support.hpp"

using namespace ctxnav;
using O = OperationId;

namespace {

const FeedbackRecord always_no{Judgement::no, "", MismatchHint::none};

OperationSequence full_chain() {
    return {O::start, O::get_query, O::check_updating, O::get_hardware_status, O::matching_embedding_models,
            O::multimodal_embedding, O::load_vector_database, O::textual_similarity_retrieval,
            O::visual_similarity_retrieval, O::agentic_retrieval, O::structural_alignment, O::end};
}

std::vector<OperationSequence> run_rule_planner(int steps, const PlanConstraints& c = {}) {
    Memory memory;
    std::vector<OperationSequence> out;
    for (int t = 0; t < steps; ++t) {
        auto plan = plan_toolchain(default_graph(), memory, c, Timestep{static_cast<std::uint32_t>(t)},
                                   PlanMode::rule);
        out.push_back(plan.chain);
        memory.append(plan.chain, always_no);
    }
    return out;
}

}  // namespace

// --- feedback ------------------------------------------------------------------

TEST(Feedback, ParsesJudgementAndHint) {
    auto r = parse_feedback("The answer is 4.\nJudgement-No\nFeedback: the image of the references differs.");
    EXPECT_EQ(r.judgement, Judgement::no);
    EXPECT_EQ(r.text, "the image of the references differs.");
    EXPECT_EQ(r.hint, MismatchHint::image);

    r = parse_feedback("4. Judgement-Yes");
    EXPECT_EQ(r.judgement, Judgement::yes);
    EXPECT_TRUE(r.text.empty());

    EXPECT_EQ(parse_feedback("Judgement-No").hint, MismatchHint::none);
    EXPECT_THROW(parse_feedback("judgement-yes"), FormatError);
    EXPECT_THROW(parse_feedback(""), FormatError);
}

TEST(Feedback, FirstTokenWins) {
    EXPECT_EQ(parse_feedback("Judgement-Yes ... later Judgement-No").judgement, Judgement::yes);
    EXPECT_EQ(parse_feedback("Judgement-No ... later Judgement-Yes").judgement, Judgement::no);
}

TEST(Feedback, ClassificationPrecedence) {
    EXPECT_EQ(classify_feedback("The text was fine but too few shots"), MismatchHint::insufficient_shots);
    EXPECT_EQ(classify_feedback("Not enough examples"), MismatchHint::insufficient_shots);
    EXPECT_EQ(classify_feedback("TEXT mismatch, and the image too"), MismatchHint::text);
    EXPECT_EQ(classify_feedback("image first, then text"), MismatchHint::image);
    EXPECT_EQ(classify_feedback("the textual framing"), MismatchHint::none);
    EXPECT_EQ(classify_feedback("images differ"), MismatchHint::none);
    EXPECT_EQ(classify_feedback(""), MismatchHint::none);
}

TEST(Feedback, FuzzedRecordsRoundTripByteExactly) {
    test::Rng rng(5);
    const std::vector<std::string> vocab{"the", "text", "image", "shots", "too", "few", "were", "off",
                                         "Image", "TEXT", "insufficient", "style", "topic", "a:b", "x.y"};
    for (int i = 0; i < 1000; ++i) {
        FeedbackRecord r;
        r.judgement = rng.below(4) == 0 ? Judgement::yes : Judgement::no;
        if (r.judgement == Judgement::no) {
            const auto words = rng.below(8);
            for (std::size_t w = 0; w < words; ++w) {
                if (w) r.text += rng.below(10) == 0 ? "\n" : " ";
                r.text += rng.below(3) == 0 ? rng.word(1 + rng.below(6)) : vocab[rng.below(vocab.size())];
            }
            r.hint = classify_feedback(r.text);
        }
        const auto text = render_feedback(r);
        ASSERT_EQ(parse_feedback(text), r) << text;
        ASSERT_EQ(render_feedback(parse_feedback(text)), text);
        ASSERT_EQ(feedback_from_json(to_json(r)), r);
    }
}

TEST(Feedback, JsonRejectsUnknownValues) {
    EXPECT_THROW(feedback_from_json({{"judgement", "maybe"}}), SchemaError);
    EXPECT_THROW(feedback_from_json({{"judgement", "no"}, {"hint", "smell"}}), SchemaError);
}

// --- memory --------------------------------------------------------------------

TEST(Memory, AppendAndQuery) {
    Memory m;
    EXPECT_EQ(m.last_feedback(), nullptr);
    auto m2 = update_memory(m, full_chain(), {Judgement::no, "text", MismatchHint::text});
    EXPECT_TRUE(m.empty());
    EXPECT_EQ(m2.size(), 1u);
    EXPECT_TRUE(m2.used(full_chain()));
    EXPECT_EQ(m2.last_feedback()->hint, MismatchHint::text);
}

// --- rule planning -----------------------------------------------------------------

TEST(RulePlanner, FirstStepContainsBothRetrievals) {
    auto chains = run_rule_planner(1);
    EXPECT_TRUE(contains(chains[0], O::textual_similarity_retrieval));
    EXPECT_TRUE(contains(chains[0], O::visual_similarity_retrieval));
    EXPECT_TRUE(contains(chains[0], O::agentic_retrieval));
    EXPECT_TRUE(contains(chains[0], O::structural_alignment));
}

TEST(RulePlanner, ExhaustsEnumerationThenRestricts) {
    auto chains = run_rule_planner(120);
    std::set<OperationSequence> first80(chains.begin(), chains.begin() + 80);
    EXPECT_EQ(first80.size(), 80u);
    auto all = enumerate_toolchains(default_graph());
    EXPECT_EQ(first80, std::set<OperationSequence>(all.begin(), all.end()));
    for (std::size_t i = 80; i < chains.size(); ++i) {
        EXPECT_TRUE(contains(chains[i], O::textual_similarity_retrieval));
        EXPECT_TRUE(contains(chains[i], O::visual_similarity_retrieval));
        EXPECT_TRUE(contains(chains[i], O::agentic_retrieval));
    }
    for (const auto& c : chains) EXPECT_TRUE(validate_sequence(default_graph(), c));
    EXPECT_EQ(run_rule_planner(120), chains);
}

TEST(RulePlanner, HintsSteerTheChoice) {
    Memory m;
    m.append(full_chain(), {Judgement::no, "image", MismatchHint::image});
    auto plan = plan_toolchain(default_graph(), m, {}, Timestep{1}, PlanMode::rule);
    auto v = std::find(plan.chain.begin(), plan.chain.end(), O::visual_similarity_retrieval);
    auto t = std::find(plan.chain.begin(), plan.chain.end(), O::textual_similarity_retrieval);
    ASSERT_NE(v, plan.chain.end());
    ASSERT_NE(t, plan.chain.end());
    EXPECT_LT(v, t);

    Memory m2;
    m2.append(full_chain(), {Judgement::no, "text", MismatchHint::text});
    EXPECT_TRUE(contains(plan_toolchain(default_graph(), m2, {}, Timestep{1}, PlanMode::rule).chain,
                         O::structural_alignment));

    Memory m3;
    m3.append(full_chain(), {Judgement::no, "too few", MismatchHint::insufficient_shots});
    EXPECT_FALSE(contains(plan_toolchain(default_graph(), m3, {}, Timestep{1}, PlanMode::rule).chain,
                          O::agentic_retrieval));
}

TEST(RulePlanner, ScoreChain) {
    Memory empty;
    EXPECT_EQ(score_chain(full_chain(), empty), 2);
    Memory m;
    m.append(full_chain(), always_no);
    EXPECT_EQ(score_chain(full_chain(), m), 0);
}

TEST(RulePlanner, ForbiddenOpsAreNeverPlanned) {
    PlanConstraints c;
    c.forbidden = make_set({O::agentic_retrieval, O::structural_alignment});
    for (const auto& chain : run_rule_planner(60, c)) {
        EXPECT_FALSE(contains(chain, O::agentic_retrieval));
        EXPECT_FALSE(contains(chain, O::structural_alignment));
    }
    c.forbidden = make_set({O::textual_similarity_retrieval, O::visual_similarity_retrieval});
    EXPECT_THROW(plan_toolchain(default_graph(), Memory{}, c, Timestep{0}, PlanMode::rule), PlanningImpossible);
}

TEST(RulePlanner, RepeatsAllowedWhenNotForbidden) {
    PlanConstraints c;
    c.forbid_repeats = false;
    auto chains = run_rule_planner(3, c);
    EXPECT_EQ(chains[1], chains[2]);
}

TEST(Constraints, ExplainRejections) {
    Memory m;
    EXPECT_EQ(check_constraints(default_graph(), full_chain(), m, {}, Timestep{0}), "");
    EXPECT_NE(check_constraints(default_graph(), {O::start, O::end}, m, {}, Timestep{0}), "");
    OperationSequence textual_only{O::start, O::get_query, O::load_vector_database,
                                   O::textual_similarity_retrieval, O::end};
    EXPECT_NE(check_constraints(default_graph(), textual_only, m, {}, Timestep{0}).find("first toolchain"),
              std::string::npos);
    m.append(full_chain(), always_no);
    EXPECT_NE(check_constraints(default_graph(), full_chain(), m, {}, Timestep{1}).find("already"),
              std::string::npos);
    EXPECT_EQ(check_constraints(default_graph(), textual_only, m, {}, Timestep{1}), "");
}

// --- prompt ----------------------------------------------------------------------

TEST(OrchestrationPrompt, CarriesGraphMemoryAndStepNotice) {
    Memory m;
    auto p0 = render_orchestration_prompt(default_graph(), m, {}, Timestep{0});
    EXPECT_NE(p0.find("start -> get_query"), std::string::npos);
    EXPECT_NE(p0.find("This is your first step."), std::string::npos);
    EXPECT_NE(p0.find("none (no toolchain has been selected yet)"), std::string::npos);
    EXPECT_NE(p0.find("Toolchain:"), std::string::npos);

    m.append(full_chain(), {Judgement::no, "the image\nwas off", MismatchHint::image});
    PlanConstraints c;
    c.forbidden = make_set({O::agentic_retrieval});
    auto p1 = render_orchestration_prompt(default_graph(), m, c, Timestep{1});
    EXPECT_NE(p1.find("it is step 2."), std::string::npos);
    EXPECT_NE(p1.find("- Step 0: Judgement-No; Feedback: the image was off. Toolchain: start ->"),
              std::string::npos);
    EXPECT_NE(p1.find("Never select a toolchain containing agentic_retrieval"), std::string::npos);
}

// --- model planning ---------------------------------------------------------------

TEST(ModelPlanner, AcceptsFirstValidReply) {
    auto policy = test::scripted_policy([](const ChatRequest&) {
        return "I reason.\n" + render_toolchain(full_chain());
    });
    auto r = plan_toolchain(default_graph(), Memory{}, {}, Timestep{0}, PlanMode::model, policy.get());
    EXPECT_EQ(r.chain, full_chain());
    ASSERT_EQ(r.attempts.size(), 1u);
    EXPECT_TRUE(r.attempts[0].valid);
    EXPECT_FALSE(r.fell_back);
}

TEST(ModelPlanner, RepromptsWithRejectionReason) {
    std::vector<std::string> prompts;
    std::mutex mu;
    auto policy = test::scripted_policy([&](const ChatRequest& req) {
        std::lock_guard lock(mu);
        prompts.push_back(req.joined_text());
        return prompts.size() == 1 ? std::string("Toolchain: start -> teleport -> end.")
                                   : render_toolchain(full_chain());
    });
    auto r = plan_toolchain(default_graph(), Memory{}, {}, Timestep{0}, PlanMode::model, policy.get());
    ASSERT_EQ(r.attempts.size(), 2u);
    EXPECT_FALSE(r.attempts[0].valid);
    EXPECT_NE(r.attempts[0].rejection.find("teleport"), std::string::npos);
    EXPECT_NE(prompts[1].find("rejected (attempt 1)"), std::string::npos);
    EXPECT_EQ(r.chain, full_chain());
}

TEST(ModelPlanner, FallsBackToRulesAfterBoundedRetries) {
    auto policy = test::scripted_policy([](const ChatRequest&) { return std::string("no idea"); });
    auto r = plan_toolchain(default_graph(), Memory{}, {}, Timestep{0}, PlanMode::model, policy.get());
    EXPECT_EQ(r.attempts.size(), static_cast<std::size_t>(1 + max_plan_reprompts));
    EXPECT_TRUE(r.fell_back);
    EXPECT_EQ(r.chain, plan_toolchain(default_graph(), Memory{}, {}, Timestep{0}, PlanMode::rule).chain);
    EXPECT_THROW(plan_toolchain(default_graph(), Memory{}, {}, Timestep{0}, PlanMode::model), ConfigError);
}

TEST(ModelPlanner, RejectsConstraintViolations) {
    OperationSequence textual_only{O::start, O::get_query, O::load_vector_database,
                                   O::textual_similarity_retrieval, O::end};
    auto policy = test::scripted_policy([&](const ChatRequest&) { return render_toolchain(textual_only); });
    auto r = plan_toolchain(default_graph(), Memory{}, {}, Timestep{0}, PlanMode::model, policy.get());
    EXPECT_TRUE(r.fell_back);
    for (const auto& a : r.attempts) EXPECT_FALSE(a.rejection.empty());
}

TEST(PlanMode, Names) {
    EXPECT_EQ(plan_mode_from_string("rule"), PlanMode::rule);
    EXPECT_EQ(plan_mode_from_string(to_string(PlanMode::model)), PlanMode::model);
    EXPECT_FALSE(plan_mode_from_string("magic"));
    for (auto h : {MismatchHint::none, MismatchHint::text, MismatchHint::image, MismatchHint::insufficient_shots})
        EXPECT_EQ(mismatch_hint_from_string(to_string(h)), h);
}
