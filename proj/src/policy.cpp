#include "ctxnav/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "ctxnav/errors.hpp"
#include "ctxnav/ogg.hpp"
#include "ctxnav/style.hpp"

namespace ctxnav {

namespace {

std::string_view trim(std::string_view s) {
    auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
    while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
    return s;
}

std::vector<std::string_view> lines_of(std::string_view text) {
    std::vector<std::string_view> out;
    while (!text.empty()) {
        auto nl = text.find('\n');
        out.push_back(text.substr(0, nl));
        if (nl == std::string_view::npos) break;
        text.remove_prefix(nl + 1);
    }
    return out;
}

std::optional<std::string_view> after_prefix(std::string_view line, std::string_view prefix) {
    line = trim(line);
    if (!line.starts_with(prefix)) return std::nullopt;
    return trim(line.substr(prefix.size()));
}

std::string_view strip_one_period(std::string_view s) {
    if (s.ends_with('.')) s.remove_suffix(1);
    return s;
}

std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

OperationSet named_ops_in(std::string_view line) {
    OperationSet s;
    for (auto op : all_operations()) {
        auto name = to_string(op);
        if (name.find('_') != std::string_view::npos && line.find(name) != std::string_view::npos)
            s.set(index_of(op));
    }
    return s;
}

void facts_to_json(nlohmann::json& arr, const std::map<std::string, OracleFacts, std::less<>>& m,
                   const char* key) {
    for (const auto& [k, f] : m)
        arr.push_back({{key, k},
                       {"task_tag", f.task_tag},
                       {"style_tag", f.style_tag},
                       {"answer", f.answer},
                       {"difficulty", f.difficulty}});
}

OracleFacts facts_from_json(const nlohmann::json& j) {
    OracleFacts f;
    f.task_tag = j.value("task_tag", std::string{});
    f.style_tag = j.value("style_tag", std::string{});
    f.answer = j.value("answer", std::string{});
    f.difficulty = j.value("difficulty", 0);
    return f;
}

}  // namespace

ContentPart ContentPart::make_text(std::string text) {
    ContentPart p;
    p.kind = Kind::text;
    p.text = std::move(text);
    return p;
}

ContentPart ContentPart::make_image(const MediaRef& ref) {
    ContentPart p;
    p.kind = Kind::image;
    p.image_uri = ref.uri;
    p.image_data = base64_encode(read_media(ref));
    return p;
}

ChatRequest ChatRequest::user(std::vector<ContentPart> parts) {
    ChatRequest r;
    r.messages.push_back(ChatMessage{"user", std::move(parts)});
    return r;
}

std::string ChatRequest::joined_text() const {
    std::string out;
    for (const auto& m : messages)
        for (const auto& p : m.content)
            if (p.kind == ContentPart::Kind::text) {
                if (!out.empty()) out += '\n';
                out += p.text;
            }
    return out;
}

nlohmann::json to_wire(const ChatRequest& request, std::string_view model, bool pass_image_paths) {
    nlohmann::json messages = nlohmann::json::array();
    for (const auto& m : request.messages) {
        nlohmann::json content = nlohmann::json::array();
        for (const auto& p : m.content) {
            if (p.kind == ContentPart::Kind::text)
                content.push_back({{"type", "text"}, {"text", p.text}});
            else if (pass_image_paths)
                content.push_back({{"type", "image_path"}, {"path", p.image_uri}});
            else
                content.push_back({{"type", "image_b64"}, {"data", p.image_data}});
        }
        messages.push_back({{"role", m.role}, {"content", std::move(content)}});
    }
    return {{"model", std::string(model)}, {"messages", std::move(messages)}};
}

ChatResponse response_from_wire(const nlohmann::json& body) {
    try {
        ChatResponse r;
        const auto& choices = body.at("choices");
        if (!choices.is_array() || choices.empty()) throw FormatError("response has no choices");
        r.text = choices.at(0).at("message").at("content").get<std::string>();
        if (auto it = body.find("usage"); it != body.end() && it->contains("total_tokens"))
            r.total_tokens = (*it)["total_tokens"].get<std::uint64_t>();
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed chat response: ") + e.what());
    }
}

// --- ground truth ------------------------------------------------------------

void GroundTruth::add_sample(const Sample& sample) {
    OracleFacts f;
    f.task_tag = sample.task_tag.value_or("");
    f.style_tag = sample.style_tag.value_or("");
    f.answer = sample.answer;
    by_question_[sample.question] = f;
    by_answer_[sample.answer] = f;
}

void GroundTruth::add_query(const std::string& question, OracleFacts facts) {
    by_question_[question] = std::move(facts);
}

const OracleFacts* GroundTruth::by_question(std::string_view question) const {
    auto it = by_question_.find(question);
    return it == by_question_.end() ? nullptr : &it->second;
}

const OracleFacts* GroundTruth::by_answer(std::string_view answer) const {
    auto it = by_answer_.find(answer);
    return it == by_answer_.end() ? nullptr : &it->second;
}

nlohmann::json GroundTruth::to_json() const {
    nlohmann::json questions = nlohmann::json::array();
    nlohmann::json answers = nlohmann::json::array();
    facts_to_json(questions, by_question_, "question");
    facts_to_json(answers, by_answer_, "key");
    return {{"questions", questions}, {"answers", answers}};
}

GroundTruth GroundTruth::from_json(const nlohmann::json& j) {
    GroundTruth g;
    for (const auto& e : j.at("questions"))
        g.by_question_[e.at("question").get<std::string>()] = facts_from_json(e);
    for (const auto& e : j.at("answers"))
        g.by_answer_[e.at("key").get<std::string>()] = facts_from_json(e);
    return g;
}

GroundTruth GroundTruth::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError(path.string(), "cannot open oracle facts");
    try {
        return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

// --- oracle ------------------------------------------------------------------

OracleTransport::OracleTransport(std::shared_ptr<const GroundTruth> truth, OracleConfig config)
    : truth_(std::move(truth)), config_(std::move(config)) {
    if (config_.rule_set.starts_with("malformed:")) {
        malformed_rate_ = std::stod(config_.rule_set.substr(10));
    } else if (config_.rule_set != "bench") {
        throw ConfigError("unknown oracle rule set '" + config_.rule_set + "'");
    }
}

ChatResponse OracleTransport::complete(const ChatRequest& request) {
    if (request.messages.empty()) throw FormatError("chat request has no messages");
    const std::string text = request.joined_text();
    std::string reply;
    if (text.find("Final Question:") != std::string::npos)
        reply = answer_icl(text);
    else if (text.find("Question to rewrite:") != std::string::npos)
        reply = answer_structural(text);
    else if (text.find("Question 1:") != std::string::npos &&
             text.find("Question 2:") != std::string::npos)
        reply = answer_coherence(text);
    else if (text.find("Text Embedding:") != std::string::npos)
        reply = answer_embedding(text);
    else if (text.find("Toolchain:") != std::string::npos)
        reply = answer_orchestration(text);
    else
        throw OracleUnavailable("oracle does not recognize the prompt role");
    return ChatResponse{reply, rough_token_count(text) + rough_token_count(reply)};
}

std::string OracleTransport::answer_coherence(const std::string& text) const {
    std::optional<std::string_view> q1, q2;
    for (auto line : lines_of(text)) {
        if (!q1) q1 = after_prefix(line, "Question 1:");
        if (!q2) q2 = after_prefix(line, "Question 2:");
    }
    if (!q1 || !q2) throw OracleUnavailable("coherence prompt is missing its questions");
    const OracleFacts* a = truth_ ? truth_->by_question(*q1) : nullptr;
    const OracleFacts* b = truth_ ? truth_->by_question(*q2) : nullptr;
    if (!a || !b || a->task_tag.empty() || b->task_tag.empty())
        throw OracleUnavailable("coherence oracle needs tagged questions");
    if (a->task_tag == b->task_tag) return "Judgement-YES";
    return "Judgement-NO. The two pairs belong to different tasks.";
}

std::string OracleTransport::answer_structural(const std::string& text) const {
    std::optional<std::string_view> query, ref;
    for (auto line : lines_of(text)) {
        if (!query) query = after_prefix(line, "Rewrite the following question in the style of");
        if (!ref) ref = after_prefix(line, "Question to rewrite:");
    }
    if (!query || !ref) throw OracleUnavailable("structural prompt is missing its questions");
    std::string_view q = strip_one_period(*query);
    std::string_view r = strip_one_period(*ref);
    auto form = classify_form(q);
    auto core = extract_core(r);
    if (!form || !core) return std::string(r);
    return render_form(*core, *form);
}

std::string OracleTransport::answer_embedding(const std::string& text) const {
    auto first_id = [&](std::string_view prefix) -> std::string {
        for (auto line : lines_of(text)) {
            if (auto rest = after_prefix(line, prefix)) {
                auto cut = rest->find(" (");
                return std::string(trim(rest->substr(0, cut)));
            }
        }
        throw OracleUnavailable("embedding prompt lists no models");
    };
    return "Text Embedding: " + first_id("- Text models:") +
           "; Image Embedding: " + first_id("- Visual models:");
}

std::string OracleTransport::answer_orchestration(const std::string& text) const {
    if (malformed_rate_ > 0.0) {
        double u = static_cast<double>(mix64(fnv1a(text) ^ mix64(config_.seed)) >> 11) * 0x1.0p-53;
        if (u < malformed_rate_)
            return "I would pick retrieval first.\nToolchain: get_query -> teleport_context -> end.";
    }
    std::vector<Edge> edges;
    std::vector<OperationSequence> used;
    OperationSet first_required, exhaustion_required, forbidden;
    bool first_step = text.find("This is your first step.") != std::string::npos;
    for (auto line : lines_of(text)) {
        auto t = trim(line);
        if (auto never = t.find("Never select a toolchain containing"); never != std::string_view::npos)
            forbidden |= named_ops_in(t.substr(never));
        if (t.starts_with("- Step ")) {
            used.push_back(parse_toolchain_text(t));
        } else if (t.find("first step, you must select a toolchain that contains") != std::string_view::npos) {
            if (first_required.none()) first_required = named_ops_in(t);
        } else if (t.find("instead select a toolchain that includes at least") != std::string_view::npos) {
            if (exhaustion_required.none()) exhaustion_required = named_ops_in(t);
        } else if (auto arrow = t.find(" -> "); arrow != std::string_view::npos &&
                                                t.find(" -> ", arrow + 4) == std::string_view::npos) {
            auto from = operation_from_string(trim(t.substr(0, arrow)));
            auto to = operation_from_string(trim(t.substr(arrow + 4)));
            if (from && to) edges.emplace_back(*from, *to);
        }
    }
    if (edges.empty()) throw OracleUnavailable("orchestration prompt carries no tool graph");
    GrammarGraph graph(edges);
    std::vector<OperationSequence> all;
    for (auto& c : enumerate_toolchains(graph))
        if (std::none_of(c.begin(), c.end(), [&](OperationId op) { return forbidden.test(index_of(op)); }))
            all.push_back(std::move(c));
    auto is_used = [&](const OperationSequence& s) {
        return std::find(used.begin(), used.end(), s) != used.end();
    };
    const OperationSequence* pick = nullptr;
    for (const auto& c : all) {
        if (is_used(c)) continue;
        if (first_step && !contains_all(c, first_required)) continue;
        pick = &c;
        break;
    }
    if (!pick)
        for (const auto& c : all)
            if (contains_all(c, exhaustion_required)) {
                pick = &c;
                break;
            }
    if (!pick) throw OracleUnavailable("no toolchain satisfies the stated criteria");
    std::string reply = "First step: ";
    reply += first_step ? "yes" : "no";
    reply += ". Previously used toolchains: " + std::to_string(used.size()) + ".\n";
    reply += render_toolchain(*pick);
    return reply;
}

std::string OracleTransport::answer_icl(const std::string& text) const {
    struct Shot {
        std::string question;
        std::string answer;
    };
    std::vector<Shot> shots;
    std::string final_question;
    long k = -1;
    for (auto line : lines_of(text)) {
        if (auto q = after_prefix(line, "Question:")) {
            shots.push_back({std::string(*q), {}});
        } else if (auto a = after_prefix(line, "Answer:")) {
            if (!shots.empty()) shots.back().answer = std::string(*a);
        } else if (auto f = after_prefix(line, "Final Question:")) {
            final_question = std::string(*f);
        }
    }
    if (auto pos = text.find("preset value "); pos != std::string::npos) {
        k = std::strtol(text.c_str() + pos + 13, nullptr, 10);
    }
    const OracleFacts* query = truth_ ? truth_->by_question(final_question) : nullptr;
    if (!query) throw OracleUnavailable("downstream oracle has no facts for the final question");
    if (k < 0) k = static_cast<long>(shots.size());

    auto query_form = classify_form(final_question);
    std::size_t n = shots.size();
    std::size_t on_task = 0, on_style = 0;
    for (const auto& s : shots) {
        const OracleFacts* f = truth_->by_answer(s.answer);
        if (f && f->task_tag == query->task_tag) ++on_task;
        auto form = classify_form(s.question);
        if (form && query_form && *form == *query_form) ++on_style;
    }
    const double eps = 1e-9;
    double task_share = n ? static_cast<double>(on_task) / static_cast<double>(n) : 1.0;
    double style_share = n ? static_cast<double>(on_style) / static_cast<double>(n) : 1.0;
    bool task_ok = task_share + eps >= config_.task_share_threshold;
    bool style_ok = style_share + eps >= config_.style_share_threshold;
    auto needed = static_cast<std::size_t>(
        std::ceil(config_.min_shot_fraction * static_cast<double>(k) - eps));
    bool sufficient = n >= needed;

    bool correct = n == 0 ? query->difficulty == 0
                          : task_ok && style_ok && on_task >= static_cast<std::size_t>(query->difficulty);
    std::string reply = correct ? query->answer : std::string("unknown");
    reply += '\n';
    if (sufficient && task_ok && style_ok) {
        reply += "Judgement-Yes";
    } else if (!sufficient) {
        reply += "Judgement-No\nFeedback: too few reference samples were provided; the shot "
                 "count is insufficient.";
    } else {
        double semantic_gap = task_ok ? 0.0 : config_.task_share_threshold - task_share;
        double form_gap = style_ok ? 0.0 : config_.style_share_threshold - style_share;
        if (semantic_gap >= form_gap)
            reply += "Judgement-No\nFeedback: the mismatch arose from the image of the reference "
                     "samples; several show content unrelated to the final question.";
        else
            reply += "Judgement-No\nFeedback: the mismatch arose from the text of the reference "
                     "samples; their questions are phrased differently from the final question.";
    }
    return reply;
}

// --- policy handle -----------------------------------------------------------

ModelPolicy::ModelPolicy(std::shared_ptr<Transport> transport, int max_concurrency)
    : transport_(std::move(transport)),
      max_concurrency_(std::max(1, max_concurrency)),
      state_(std::make_shared<State>(max_concurrency_)) {
    if (!transport_) throw ConfigError("model policy needs a transport");
}

ChatResponse ModelPolicy::complete(const ChatRequest& request) const {
    if (request.messages.empty()) throw FormatError("chat request has no messages");
    state_->slots.acquire();
    int now = ++state_->in_flight;
    int peak = state_->peak.load();
    while (now > peak && !state_->peak.compare_exchange_weak(peak, now)) {
    }
    ++state_->calls;
    struct Release {
        State* s;
        ~Release() {
            --s->in_flight;
            s->slots.release();
        }
    } release{state_.get()};
    return transport_->complete(request);
}

std::uint64_t rough_token_count(std::string_view text) {
    std::uint64_t n = 0;
    bool in_word = false;
    for (char c : text) {
        bool space = c == ' ' || c == '\n' || c == '\t' || c == '\r';
        if (!space && !in_word) ++n;
        in_word = !space;
    }
    return n;
}

}  // namespace ctxnav
