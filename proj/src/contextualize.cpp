#include "ctxnav/contextualize.hpp"

#include <cctype>
#include <string>

#include "ctxnav/errors.hpp"
#include "ctxnav/parallel.hpp"
#include "ctxnav/style.hpp"

namespace ctxnav {

namespace {

std::string trimmed(std::string_view s) {
    auto is_space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
    while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
    return std::string(s);
}

// Tag of the form a candidate currently presents.
std::optional<std::string> effective_style(const Candidate& c) {
    if (!c.rewritten_question) return c.sample.style_tag;
    auto form = classify_form(*c.rewritten_question);
    return form ? std::optional<std::string>(std::string(to_string(*form))) : std::nullopt;
}

}  // namespace

std::string_view to_string(CandidateStage stage) {
    switch (stage) {
        case CandidateStage::initial: return "initial";
        case CandidateStage::semantic_filtered: return "semantic_filtered";
        case CandidateStage::aligned: return "aligned";
    }
    return "initial";
}

Judgement parse_coherence(std::string_view reply) {
    auto y = reply.find("Judgement-YES");
    auto n = reply.find("Judgement-NO");
    if (y == std::string_view::npos && n == std::string_view::npos)
        throw FormatError("coherence reply carries neither Judgement-YES nor Judgement-NO");
    return y < n ? Judgement::yes : Judgement::no;
}

std::string render_coherence_prompt(std::string_view query_question, std::string_view ref_question,
                                    const PromptTemplates& templates) {
    return render_template(templates.coherence, {{"query_question", std::string(query_question)},
                                                 {"ref_question", std::string(ref_question)}});
}

std::string render_structural_prompt(std::string_view query_question, std::string_view ref_question,
                                     const PromptTemplates& templates) {
    return render_template(templates.structural, {{"query_question", std::string(query_question)},
                                                  {"ref_question", std::string(ref_question)}});
}

CandidateSet agentic_filter(const Query& query, const CandidateSet& candidates,
                            const ModelPolicy& policy, const PromptTemplates& templates,
                            const ContextualizeOptions& options) {
    if (candidates.stage != CandidateStage::initial)
        throw SchemaError("semantic filtering expects the initial candidate pool");

    std::vector<Candidate> judged(candidates.items);
    std::optional<ContentPart> query_image;
    if (options.attach_images && !query.image.uri.empty())
        query_image = ContentPart::make_image(query.image);

    parallel_for(judged.size(), options.max_concurrency, [&](std::size_t i) {
        Candidate& c = judged[i];
        std::vector<ContentPart> parts;
        if (query_image) parts.push_back(*query_image);
        if (options.attach_images) parts.push_back(ContentPart::make_image(c.sample.image));
        parts.push_back(ContentPart::make_text(render_coherence_prompt(query.text, c.sample.question, templates)));
        auto request = ChatRequest::user(std::move(parts));
        for (int attempt = 0; attempt < 2; ++attempt) {
            try {
                c.judgement = parse_coherence(policy.complete(request).text);
                return;
            } catch (const FormatError&) {
            }
        }
        c.flagged = true;
    });

    CandidateSet out;
    out.stage = CandidateStage::semantic_filtered;
    out.initial_count = candidates.initial_count;
    for (auto& c : judged)
        if (c.judgement != Judgement::no) out.items.push_back(std::move(c));
    out.filtered_count = out.items.size();
    return out;
}

CandidateSet structural_align(std::string_view query_text, const CandidateSet& candidates,
                              const ModelPolicy& policy, const PromptTemplates& templates,
                              const ContextualizeOptions& options) {
    if (candidates.stage == CandidateStage::aligned)
        throw SchemaError("candidates are already aligned");

    CandidateSet out = candidates;
    out.stage = CandidateStage::aligned;
    parallel_for(out.items.size(), options.max_concurrency, [&](std::size_t i) {
        Candidate& c = out.items[i];
        auto prompt = render_structural_prompt(query_text, c.sample.question, templates);
        auto reply = trimmed(policy.complete(ChatRequest::user({ContentPart::make_text(prompt)})).text);
        if (reply.empty()) {
            c.rewritten_question = c.sample.question;
            c.flagged = true;
        } else {
            c.rewritten_question = std::move(reply);
        }
    });
    return out;
}

NoiseCounts count_noise(const CandidateSet& candidates, const Query& query) {
    if (!query.task_tag || !query.style_tag)
        throw ReportUnavailable("noise accounting needs a query with task and style tags");
    NoiseCounts n;
    for (const auto& c : candidates.items) {
        if (!c.sample.task_tag || !c.sample.style_tag)
            throw ReportUnavailable("sample '" + c.sample.id + "' has no ground-truth tags");
        ++n.total;
        if (*c.sample.task_tag != *query.task_tag) ++n.off_task;
        if (effective_style(c) != query.style_tag) ++n.off_style;
    }
    return n;
}

NoiseReport noise_report(const CandidateSet& candidates, const Query& query) {
    NoiseCounts n = count_noise(candidates, query);
    NoiseReport r;
    if (n.total > 0) {
        r.semantic_noise = static_cast<double>(n.off_task) / static_cast<double>(n.total);
        r.structural_noise = static_cast<double>(n.off_style) / static_cast<double>(n.total);
    }
    if (candidates.filtered_count && candidates.initial_count > 0)
        r.effective_rate =
            static_cast<double>(*candidates.filtered_count) / static_cast<double>(candidates.initial_count);
    return r;
}

}  // namespace ctxnav
