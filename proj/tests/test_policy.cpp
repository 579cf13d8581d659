#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <gtest/gtest.h>

#include <thread>

#include "ctxnav/contextualize.hpp"
#include "ctxnav/embed.hpp"
#include "ctxnav/errors.hpp"
#include "ctxnav/icl.hpp"
#include "ctxnav/planner.hpp"
#include "ctxnav/policy.hpp"
#include "support.hpp"

using namespace ctxnav;

namespace {

// Loopback chat server; `handler` decides each response.
class LoopbackServer {
public:
    using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;
    explicit LoopbackServer(Handler handler) {
        server_.Post(R"(/v1/.*)", [this, handler](const httplib::Request& req, httplib::Response& res) {
            ++hits;
            handler(req, res);
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~LoopbackServer() {
        server_.stop();
        thread_.join();
    }
    std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }
    std::atomic<int> hits{0};

private:
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
};

std::string chat_body(const std::string& text, int tokens = 7) {
    return nlohmann::json{{"choices", {{{"message", {{"role", "assistant"}, {"content", text}}}}}},
                          {"usage", {{"total_tokens", tokens}}}}
        .dump();
}

EndpointConfig endpoint(const LoopbackServer& s, int retries) {
    EndpointConfig c;
    c.base_url = s.base_url();
    c.model_name = "test-model";
    c.max_retries = retries;
    c.backoff_base_ms = 1;
    c.timeout_ms = 5000;
    return c;
}

std::shared_ptr<const GroundTruth> small_truth() {
    auto g = std::make_shared<GroundTruth>();
    auto add = [&](std::string q, std::string a, std::string task) {
        auto s = test::make_sample("x", std::move(q), std::move(a), "data:,x");
        s.task_tag = std::move(task);
        s.style_tag = "interrogative";
        g->add_sample(s);
    };
    add("What is the color of the cube?", "red", "color");
    add("What is the color of the ball?", "blue", "color");
    add("Determine the count of the apples.", "3", "count");
    g->add_query("What is the color of the cone?", OracleFacts{"color", "interrogative", "green", 1});
    return g;
}

class SlowTransport final : public Transport {
public:
    ChatResponse complete(const ChatRequest&) override {
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
        return {"ok", 1};
    }
};

}  // namespace

TEST(Wire, RequestShape) {
    auto req = ChatRequest::user({ContentPart::make_text("hello"), ContentPart::make_image(MediaRef{"data:,abc"})});
    auto j = to_wire(req, "m1");
    EXPECT_EQ(j["model"], "m1");
    ASSERT_EQ(j["messages"].size(), 1u);
    EXPECT_EQ(j["messages"][0]["role"], "user");
    EXPECT_EQ(j["messages"][0]["content"][0], (nlohmann::json{{"type", "text"}, {"text", "hello"}}));
    EXPECT_EQ(j["messages"][0]["content"][1], (nlohmann::json{{"type", "image_b64"}, {"data", "YWJj"}}));
    auto paths = to_wire(req, "m1", true);
    EXPECT_EQ(paths["messages"][0]["content"][1], (nlohmann::json{{"type", "image_path"}, {"path", "data:,abc"}}));
    EXPECT_EQ(req.joined_text(), "hello");
}

TEST(Wire, ResponseShape) {
    auto r = response_from_wire(nlohmann::json::parse(chat_body("hi", 12)));
    EXPECT_EQ(r.text, "hi");
    EXPECT_EQ(r.total_tokens, 12u);
    EXPECT_EQ(response_from_wire(nlohmann::json::parse(R"({"choices":[{"message":{"content":"x"}}]})")).total_tokens, 0u);
    EXPECT_THROW(response_from_wire(nlohmann::json::parse(R"({"choices":[]})")), FormatError);
    EXPECT_THROW(response_from_wire(nlohmann::json::parse(R"({"nope":1})")), FormatError);
}

TEST(Http, SuccessfulExchange) {
    std::string seen_model, seen_auth;
    LoopbackServer server([&](const httplib::Request& req, httplib::Response& res) {
        auto body = nlohmann::json::parse(req.body);
        seen_model = body["model"];
        seen_auth = req.get_header_value("Authorization");
        res.set_content(chat_body("pong " + body["messages"][0]["content"][0]["text"].get<std::string>()),
                        "application/json");
    });
    auto cfg = endpoint(server, 0);
    ::setenv("CTXNAV_TEST_TOKEN", "sekrit", 1);
    cfg.auth_token_env_var = "CTXNAV_TEST_TOKEN";
    HttpTransport t(cfg);
    auto r = t.complete(ChatRequest::user({ContentPart::make_text("ping")}));
    ::unsetenv("CTXNAV_TEST_TOKEN");
    EXPECT_EQ(r.text, "pong ping");
    EXPECT_EQ(r.total_tokens, 7u);
    EXPECT_EQ(seen_model, "test-model");
    EXPECT_EQ(seen_auth, "Bearer sekrit");
}

TEST(Http, ServerErrorsExhaustRetries) {
    LoopbackServer server([](const httplib::Request&, httplib::Response& res) { res.status = 500; });
    HttpTransport t(endpoint(server, 2));
    try {
        t.complete(ChatRequest::user({ContentPart::make_text("x")}));
        FAIL();
    } catch (const TransportError& e) {
        EXPECT_EQ(e.status_chain(), (std::vector<int>{500, 500, 500}));
    }
    EXPECT_EQ(server.hits.load(), 3);
}

TEST(Http, RateLimitRetriedThenSucceeds) {
    LoopbackServer server([&](const httplib::Request&, httplib::Response& res) {
        static std::atomic<int> n{0};
        if (n++ == 0) {
            res.status = 429;
            return;
        }
        res.set_content(chat_body("after wait"), "application/json");
    });
    HttpTransport t(endpoint(server, 2));
    EXPECT_EQ(t.complete(ChatRequest::user({ContentPart::make_text("x")})).text, "after wait");
    EXPECT_EQ(server.hits.load(), 2);
}

TEST(Http, ClientErrorNotRetried) {
    LoopbackServer server([](const httplib::Request&, httplib::Response& res) { res.status = 400; });
    HttpTransport t(endpoint(server, 3));
    try {
        t.complete(ChatRequest::user({ContentPart::make_text("x")}));
        FAIL();
    } catch (const TransportError& e) {
        EXPECT_EQ(e.status_chain(), std::vector<int>{400});
    }
}

TEST(Http, ConnectionFailureRecordedAsZero) {
    EndpointConfig c;
    c.base_url = "http://127.0.0.1:1/v1";
    c.max_retries = 1;
    c.backoff_base_ms = 1;
    c.timeout_ms = 500;
    try {
        HttpTransport(c).complete(ChatRequest::user({ContentPart::make_text("x")}));
        FAIL();
    } catch (const TransportError& e) {
        EXPECT_EQ(e.status_chain(), (std::vector<int>{0, 0}));
    }
    c.base_url = "no-scheme";
    EXPECT_THROW(HttpTransport{c}, ConfigError);
}

TEST(Http, EmbeddingBackendReadsVectors) {
    LoopbackServer server([](const httplib::Request& req, httplib::Response& res) {
        auto body = nlohmann::json::parse(req.body);
        EXPECT_EQ(req.path, "/v1/embeddings");
        nlohmann::json data = nlohmann::json::array();
        for (std::size_t i = 0; i < body["input"].size(); ++i) data.push_back({{"embedding", {3.0, 4.0}}});
        res.set_content(nlohmann::json{{"data", data}}.dump(), "application/json");
    });
    HttpEmbeddingBackend b(endpoint(server, 0));
    auto v = b.embed_text(ModelSpec{"m", ModelKind::text, 1, 1, {}}, "hello");
    EXPECT_EQ(v, (std::vector<float>{3.0f, 4.0f}));
}

TEST(PolicyHandle, BoundsConcurrency) {
    ModelPolicy p(std::make_shared<SlowTransport>(), 3);
    std::vector<std::thread> threads;
    for (int i = 0; i < 12; ++i)
        threads.emplace_back([&] { p.complete(ChatRequest::user({ContentPart::make_text("x")})); });
    for (auto& t : threads) t.join();
    EXPECT_LE(p.peak_in_flight(), 3);
    EXPECT_GE(p.peak_in_flight(), 1);
    EXPECT_EQ(p.calls(), 12u);
    EXPECT_THROW(p.complete(ChatRequest{}), FormatError);
    EXPECT_THROW(ModelPolicy(nullptr), ConfigError);
}

TEST(Oracle, CoherenceByTask) {
    OracleTransport o(small_truth());
    auto reply = [&](const std::string& a, const std::string& b) {
        return parse_coherence(o.complete(ChatRequest::user({ContentPart::make_text(render_coherence_prompt(a, b))})).text);
    };
    EXPECT_EQ(reply("What is the color of the cone?", "What is the color of the cube?"), Judgement::yes);
    EXPECT_EQ(reply("What is the color of the cone?", "Determine the count of the apples."), Judgement::no);
    EXPECT_THROW(reply("What is unknown?", "What is the color of the cube?"), OracleUnavailable);
}

TEST(Oracle, StructuralRewriteAdoptsQueryForm) {
    OracleTransport o(small_truth());
    auto text = o.complete(ChatRequest::user({ContentPart::make_text(
                               render_structural_prompt("What is the color of the cone?",
                                                        "Determine the count of the apples."))}))
                    .text;
    EXPECT_EQ(text, "What is the count of the apples?");
}

TEST(Oracle, EmbeddingAndUnknownRoles) {
    OracleTransport o(small_truth());
    auto prompt = render_model_selection_prompt(ModelZoo::stock(), {32, 200}, {}, nullptr, PromptTemplates::defaults());
    auto sel = parse_model_selection(o.complete(ChatRequest::user({ContentPart::make_text(prompt)})).text);
    EXPECT_EQ(sel.first, ModelZoo::stock().text_models.front().model_id);
    EXPECT_THROW(o.complete(ChatRequest::user({ContentPart::make_text("hello there")})), OracleUnavailable);
    EXPECT_THROW(OracleTransport(small_truth(), OracleConfig{0, "chaotic"}), ConfigError);
}

TEST(Oracle, OrchestrationPicksUnusedValidChain) {
    OracleTransport o(small_truth());
    Memory memory;
    for (int t = 0; t < 3; ++t) {
        auto prompt = render_orchestration_prompt(default_graph(), memory, PlanConstraints{}, Timestep{static_cast<std::uint32_t>(t)});
        auto chain = parse_toolchain_text(o.complete(ChatRequest::user({ContentPart::make_text(prompt)})).text);
        EXPECT_TRUE(validate_sequence(default_graph(), chain));
        EXPECT_FALSE(memory.used(chain));
        EXPECT_EQ(check_constraints(default_graph(), chain, memory, PlanConstraints{}, Timestep{static_cast<std::uint32_t>(t)}), "") << format_chain(chain);
        memory.append(chain, FeedbackRecord{});
    }
}

TEST(Oracle, MalformedRateCorruptsSomePlans) {
    OracleTransport o(small_truth(), OracleConfig{3, "malformed:0.5"});
    int bad = 0;
    for (int i = 0; i < 200; ++i) {
        Memory memory;
        memory.append(parse_chain("start -> get_query -> load_vector_database -> textual_similarity_retrieval -> end"),
                      FeedbackRecord{Judgement::no, "case " + std::to_string(i), MismatchHint::none});
        auto prompt = render_orchestration_prompt(default_graph(), memory, PlanConstraints{}, Timestep{1});
        try {
            parse_toolchain_text(o.complete(ChatRequest::user({ContentPart::make_text(prompt)})).text);
        } catch (const FormatError&) {
            ++bad;
        }
    }
    EXPECT_GT(bad, 60);
    EXPECT_LT(bad, 140);
}

TEST(Oracle, DownstreamAnswersFromContext) {
    auto truth = small_truth();
    ModelPolicy model(std::make_shared<OracleTransport>(truth));
    Query q;
    q.text = "What is the color of the cone?";
    CandidateSet on;
    on.items.push_back(Candidate{test::make_sample("a", "What is the color of the cube?", "red", "data:,1"), 0, {}, {}, false});
    auto out = run_icl(model, assemble_icl_prompt(on, q, 1, ImagePlacement::upfront));
    EXPECT_EQ(out.answer, "green");
    EXPECT_EQ(out.feedback.judgement, Judgement::yes);

    CandidateSet off;
    off.items.push_back(Candidate{test::make_sample("b", "Determine the count of the apples.", "3", "data:,2"), 0, {}, {}, false});
    out = run_icl(model, assemble_icl_prompt(off, q, 1, ImagePlacement::upfront));
    EXPECT_EQ(out.answer, "unknown");
    EXPECT_EQ(out.feedback.hint, MismatchHint::image);

    out = run_icl(model, assemble_icl_prompt(on, q, 8, ImagePlacement::upfront));
    EXPECT_EQ(out.feedback.hint, MismatchHint::insufficient_shots);
}

TEST(GroundTruthFile, JsonRoundTrip) {
    auto g = small_truth();
    auto back = GroundTruth::from_json(g->to_json());
    EXPECT_EQ(back.to_json(), g->to_json());
    EXPECT_EQ(back.by_question("What is the color of the cone?")->difficulty, 1);
    EXPECT_EQ(back.by_answer("3")->task_tag, "count");
    EXPECT_THROW(GroundTruth::load("/nonexistent/facts.json"), IoError);
}
