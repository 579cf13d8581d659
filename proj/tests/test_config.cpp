#include <gtest/gtest.h>

#include <cstdlib>

#include "ctxnav/config.hpp"
#include "ctxnav/errors.hpp"
#include "support.hpp"

using namespace ctxnav;

namespace {

class EnvGuard {
public:
    EnvGuard(std::string name, const std::string& value) : name_(std::move(name)) {
        ::setenv(name_.c_str(), value.c_str(), 1);
    }
    ~EnvGuard() { ::unsetenv(name_.c_str()); }

private:
    std::string name_;
};

}  // namespace

TEST(ConfigText, ParsesSubset) {
    auto v = parse_config_text(R"(
# comment
top = 1
[retrieval]
k = 12            # trailing comment
mode = "visual-text"
[embed]
anchors = ["a", "b\"c", ]
residual_norm = 0.25
[planner]
persist_memory = true
big = 1_000
)");
    EXPECT_EQ(std::get<std::int64_t>(v.at("top")), 1);
    EXPECT_EQ(std::get<std::int64_t>(v.at("retrieval.k")), 12);
    EXPECT_EQ(std::get<std::string>(v.at("retrieval.mode")), "visual-text");
    EXPECT_EQ(std::get<std::vector<std::string>>(v.at("embed.anchors")), (std::vector<std::string>{"a", "b\"c"}));
    EXPECT_DOUBLE_EQ(std::get<double>(v.at("embed.residual_norm")), 0.25);
    EXPECT_TRUE(std::get<bool>(v.at("planner.persist_memory")));
    EXPECT_EQ(std::get<std::int64_t>(v.at("planner.big")), 1000);
}

TEST(ConfigText, RejectsMalformedLines) {
    EXPECT_THROW(parse_config_text("[open\n"), ConfigError);
    EXPECT_THROW(parse_config_text("novalue\n"), ConfigError);
    EXPECT_THROW(parse_config_text("k = \"unterminated\n"), ConfigError);
    EXPECT_THROW(parse_config_text("k = [1, 2]\n"), ConfigError);
    EXPECT_THROW(parse_config_text("k = 1 2\n"), ConfigError);
    EXPECT_THROW(parse_config_text("k = 1\nk = 2\n"), ConfigError);
    try {
        parse_config_text("a = 1\n\nb = oops\n");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
    }
}

TEST(Config, DefaultsWithoutFile) {
    auto c = Config::load({});
    EXPECT_EQ(c.k, 8u);
    EXPECT_EQ(c.max_steps, 5);
    EXPECT_EQ(c.planner_mode, PlanMode::rule);
    EXPECT_EQ(c.retrieval_mode, RetrievalMode::textual);
    EXPECT_EQ(c.preference.level, PreferenceLevel::balanced);
    EXPECT_EQ(c.placement, ImagePlacement::interleaved);
}

TEST(Config, FileValuesAndRelativePaths) {
    test::TempDir dir;
    test::write_file(dir / "ctx.toml", R"(
[corpus]
path = "data/corpus.jsonl"
[db]
dir = "/abs/db"
[planner]
mode = "model"
max_steps = 3
[retrieval]
k = 4
mode = "text-visual"
[policy]
backend = "http"
base_url = "http://127.0.0.1:9/v1"
max_retries = 2
[embed]
preference = "performance"
dim = 16
[hardware]
gpu_gb = 12
)");
    auto c = Config::load(dir / "ctx.toml");
    EXPECT_EQ(c.corpus_path, std::filesystem::absolute(dir.path()) / "data/corpus.jsonl");
    EXPECT_EQ(c.db_dir, "/abs/db");
    EXPECT_EQ(c.planner_mode, PlanMode::model);
    EXPECT_EQ(c.max_steps, 3);
    EXPECT_EQ(c.k, 4u);
    EXPECT_EQ(c.retrieval_mode, RetrievalMode::cascaded_text_then_visual);
    EXPECT_EQ(c.policy.backend, "http");
    EXPECT_EQ(c.policy.endpoint.max_retries, 2);
    EXPECT_EQ(c.preference.level, PreferenceLevel::performance);
    EXPECT_EQ(c.mock.dim, 16);
    EXPECT_DOUBLE_EQ(c.gpu_gb, 12.0);
}

TEST(Config, UnknownOrMistypedKeysRejected) {
    EXPECT_THROW(Config::from_values(parse_config_text("[retrieval]\nshots = 3\n"), {}), ConfigError);
    EXPECT_THROW(Config::from_values(parse_config_text("[retrieval]\nk = \"eight\"\n"), {}), ConfigError);
    EXPECT_THROW(Config::from_values(parse_config_text("[retrieval]\nmode = \"sideways\"\n"), {}), ConfigError);
    EXPECT_THROW(Config::from_values(parse_config_text("[planner]\nmax_steps = 0\n"), {}), ConfigError);
    EXPECT_THROW(Config::from_values(parse_config_text("[embed]\nbackend = \"gpu\"\n"), {}), ConfigError);
    EXPECT_THROW(Config::load("/nonexistent/ctxnav.toml"), IoError);
}

TEST(Config, EnvironmentOverridesFile) {
    test::TempDir dir;
    test::write_file(dir / "ctx.toml", "[retrieval]\nk = 4\n[planner]\nmode = \"model\"\n");
    EXPECT_EQ(Config::env_name("retrieval.k"), "CTXNAV_RETRIEVAL_K");
    EnvGuard k("CTXNAV_RETRIEVAL_K", "16");
    EnvGuard mode("CTXNAV_PLANNER_MODE", "rule");
    EnvGuard path("CTXNAV_DB_DIR", "rel/db");
    auto c = Config::load(dir / "ctx.toml");
    EXPECT_EQ(c.k, 16u);
    EXPECT_EQ(c.planner_mode, PlanMode::rule);
    EXPECT_EQ(c.db_dir, std::filesystem::current_path() / "rel/db");
}

TEST(Config, BadEnvironmentValueRejected) {
    EnvGuard k("CTXNAV_RETRIEVAL_K", "many");
    EXPECT_THROW(Config::load({}), ConfigError);
}

TEST(Config, KnownKeysAllSettable) {
    for (const auto& key : Config::known_keys()) EXPECT_NE(key.find('.'), std::string::npos) << key;
    EXPECT_GT(Config::known_keys().size(), 30u);
}
