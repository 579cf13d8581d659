#include "ctxnav/icl.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>

#include "ctxnav/errors.hpp"

namespace ctxnav {

namespace {

std::string trimmed(std::string_view s) {
    auto is_space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
    while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
    return std::string(s);
}

}  // namespace

std::string_view to_string(ImagePlacement p) {
    return p == ImagePlacement::upfront ? "upfront" : "interleaved";
}

std::optional<ImagePlacement> image_placement_from_string(std::string_view s) {
    if (s == "upfront") return ImagePlacement::upfront;
    if (s == "interleaved") return ImagePlacement::interleaved;
    return std::nullopt;
}

RenderedPrompt assemble_icl_prompt(const CandidateSet& context, const Query& query, std::size_t k,
                                   ImagePlacement placement, const PromptTemplates& templates,
                                   bool attach_images) {
    RenderedPrompt out;
    out.k = k;
    out.shots = std::min(k, context.items.size());

    std::vector<const MediaRef*> images;
    if (out.shots > 0) out.text += templates.icl_intro;
    for (std::size_t i = 0; i < out.shots; ++i) {
        const Candidate& c = context.items[i];
        out.text += render_template(templates.icl_reference,
                                    {{"index", std::to_string(i + 1)},
                                     {"image_marker", std::string(image_marker)},
                                     {"ref_question", c.effective_question()},
                                     {"ref_answer", c.sample.answer}});
        images.push_back(&c.sample.image);
    }
    bool query_has_image = !query.image.uri.empty();
    std::string feedback = render_template(templates.feedback_request, {{"k", std::to_string(k)}});
    out.text += render_template(templates.icl_final,
                                {{"image_marker", query_has_image ? std::string(image_marker) : "(none)"},
                                 {"query_question", query.text},
                                 {"feedback_request", feedback}});
    if (query_has_image) images.push_back(&query.image);

    std::vector<ContentPart> parts;
    if (!attach_images) {
        parts.push_back(ContentPart::make_text(out.text));
    } else if (placement == ImagePlacement::upfront) {
        for (const auto* ref : images) parts.push_back(ContentPart::make_image(*ref));
        parts.push_back(ContentPart::make_text(out.text));
    } else {
        std::string_view rest = out.text;
        std::size_t next_image = 0;
        for (auto pos = rest.find(image_marker); pos != std::string_view::npos && next_image < images.size();
             pos = rest.find(image_marker)) {
            parts.push_back(ContentPart::make_text(std::string(rest.substr(0, pos))));
            parts.push_back(ContentPart::make_image(*images[next_image++]));
            rest.remove_prefix(pos + image_marker.size());
        }
        parts.push_back(ContentPart::make_text(std::string(rest)));
    }
    out.request = ChatRequest::user(std::move(parts));
    return out;
}

std::pair<std::string, FeedbackRecord> split_icl_reply(std::string_view raw) {
    auto y = raw.find("Judgement-Yes");
    auto n = raw.find("Judgement-No");
    auto cut = std::min(y, n);
    std::string answer = trimmed(raw.substr(0, cut == std::string_view::npos ? raw.size() : cut));
    return {std::move(answer), parse_feedback(raw)};
}

IclOutcome run_icl(const ModelPolicy& model, const RenderedPrompt& prompt) {
    IclOutcome out;
    auto started = std::chrono::steady_clock::now();
    for (int attempt = 0; attempt < 2; ++attempt) {
        ChatResponse response;
        try {
            response = model.complete(prompt.request);
        } catch (const TransportError& e) {
            throw IclError(std::string("downstream model unreachable: ") + e.what());
        }
        out.raw = response.text;
        out.token_count += response.total_tokens;
        try {
            auto [answer, feedback] = split_icl_reply(out.raw);
            out.answer = std::move(answer);
            out.feedback = std::move(feedback);
            out.flagged = false;
            break;
        } catch (const FormatError&) {
            out.answer = trimmed(out.raw);
            out.feedback = FeedbackRecord{};
            out.flagged = true;
        }
    }
    out.latency_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
    return out;
}

}  // namespace ctxnav
