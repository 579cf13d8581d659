#include "ctxnav/embed.hpp"

#include <algorithm>
#include <cmath>
#include <regex>
#include <sstream>
#include <thread>

#include "ctxnav/errors.hpp"
#include "ctxnav/parallel.hpp"

namespace ctxnav {

namespace {

std::string format_gb(double v) {
    std::ostringstream ss;
    ss << v;
    return ss.str();
}

std::string describe_requirements(const ModelSpec& m) {
    return "Requires " + format_gb(m.disk_gb) + " GB of disk space and at least " +
           format_gb(m.gpu_gb) + " GB of available GPU memory.";
}

bool fits(const ModelSpec& m, double gpu_budget, double disk_budget) {
    return m.gpu_gb <= gpu_budget && m.disk_gb <= disk_budget;
}

bool compatible(const ModelSpec& m, const DbManifest* existing) {
    if (!existing) return true;
    const std::string& id = m.kind == ModelKind::text ? existing->text_backbone : existing->vision_backbone;
    int dim = m.kind == ModelKind::text ? existing->text_dim : existing->vision_dim;
    if (m.model_id != id) return false;
    return !m.vector_dim || *m.vector_dim == dim;
}

const ModelSpec* pick(const std::vector<ModelSpec>& models, double gpu_budget, double disk_budget,
                      const DbManifest* existing) {
    const ModelSpec* best = nullptr;
    for (const auto& m : models) {
        if (!fits(m, gpu_budget, disk_budget) || !compatible(m, existing)) continue;
        if (!best || m.footprint() > best->footprint()) best = &m;
    }
    return best;
}

[[noreturn]] void exhausted(const std::vector<ModelSpec>& models, const char* kind,
                            const HardwareStatus& hw, const ResourcePreference& pref) {
    const ModelSpec* smallest = nullptr;
    for (const auto& m : models)
        if (!smallest || m.footprint() < smallest->footprint()) smallest = &m;
    std::string msg = std::string("no ") + kind + " embedding model fits " + describe(hw) + " under a " +
                      std::string(to_string(pref.level)) + " preference";
    if (smallest)
        msg += "; smallest is " + smallest->model_id + " (" + format_gb(smallest->disk_gb) +
               " GB disk, " + format_gb(smallest->gpu_gb) + " GB GPU)";
    throw ResourceExhausted(msg);
}

const ModelSpec* find_model(const std::vector<ModelSpec>& models, std::string_view id) {
    for (const auto& m : models)
        if (m.model_id == id) return &m;
    return nullptr;
}

std::string zoo_line(const std::vector<ModelSpec>& models) {
    std::string out;
    for (const auto& m : models) {
        if (!out.empty()) out += "; ";
        out += m.model_id + " (" + describe_requirements(m) + ")";
    }
    return out;
}

// --- deterministic pseudo-random vectors ---

std::uint64_t splitmix(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::vector<double> gaussian_vector(std::uint64_t seed, int dim) {
    std::vector<double> v(static_cast<std::size_t>(dim));
    std::uint64_t state = seed;
    for (int i = 0; i < dim; i += 2) {
        double u1 = (static_cast<double>(splitmix(state) >> 11) + 1.0) * 0x1.0p-53;
        double u2 = static_cast<double>(splitmix(state) >> 11) * 0x1.0p-53;
        double r = std::sqrt(-2.0 * std::log(u1));
        v[static_cast<std::size_t>(i)] = r * std::cos(2.0 * M_PI * u2);
        if (i + 1 < dim) v[static_cast<std::size_t>(i) + 1] = r * std::sin(2.0 * M_PI * u2);
    }
    return v;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : text) {
        auto u = static_cast<unsigned char>(c);
        if (std::isalnum(u)) {
            cur.push_back(static_cast<char>(std::tolower(u)));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

std::uint64_t space_seed(std::uint64_t seed, const ModelSpec& model) {
    std::uint64_t h = fnv1a(model.model_id);
    h = fnv1a(model.kind == ModelKind::text ? "|text|" : "|vision|", h);
    std::uint64_t s = seed ^ h;
    return splitmix(s);
}

std::vector<float> checked_unit(std::vector<float> v, const char* what) {
    if (!l2_normalize(v)) throw FormatError(std::string("backend returned a zero ") + what + " vector");
    return v;
}

}  // namespace

std::string describe(const HardwareStatus& hw) {
    return "(free GPU memory " + format_gb(hw.free_gpu_gb) + " GB, free disk " +
           format_gb(hw.free_disk_gb) + " GB)";
}

const ModelZoo& ModelZoo::stock() {
    static const ModelZoo zoo{
        {
            {"Qwen/Qwen3-Embedding-8B", ModelKind::text, 18, 32, std::nullopt},
            {"Qwen/Qwen3-Embedding-4B", ModelKind::text, 9, 16, std::nullopt},
            {"Qwen/Qwen3-Embedding-0.6B", ModelKind::text, 2, 8, std::nullopt},
            {"openai/clip-vit-large-patch14", ModelKind::text, 2, 8, std::nullopt},
        },
        {
            {"Qwen/Qwen2.5-VL-3B-Instruct", ModelKind::vision, 8, 4, std::nullopt},
            {"openai/clip-vit-large-patch14", ModelKind::vision, 2, 8, std::nullopt},
        },
    };
    return zoo;
}

std::string_view to_string(PreferenceLevel level) {
    switch (level) {
        case PreferenceLevel::conservative: return "conservative";
        case PreferenceLevel::balanced: return "balanced";
        case PreferenceLevel::performance: return "performance";
    }
    return "balanced";
}

std::optional<PreferenceLevel> preference_from_string(std::string_view s) {
    for (auto l : {PreferenceLevel::conservative, PreferenceLevel::balanced, PreferenceLevel::performance})
        if (to_string(l) == s) return l;
    return std::nullopt;
}

double ResourcePreference::budget_fraction() const noexcept {
    switch (level) {
        case PreferenceLevel::conservative: return 0.5;
        case PreferenceLevel::balanced: return 0.75;
        case PreferenceLevel::performance: return 1.0;
    }
    return 0.75;
}

Backbones match_embedding_models(const ModelZoo& zoo, const HardwareStatus& hw,
                                 const ResourcePreference& pref, const DbManifest* existing) {
    if (zoo.text_models.empty() || zoo.vision_models.empty())
        throw ConfigError("model zoo needs at least one text and one vision model");
    double gpu = pref.budget_fraction() * std::max(0.0, hw.free_gpu_gb);
    double disk = pref.budget_fraction() * std::max(0.0, hw.free_disk_gb);
    const ModelSpec* text = pick(zoo.text_models, gpu, disk, existing);
    if (!text) exhausted(zoo.text_models, "text", hw, pref);
    const ModelSpec* vision = pick(zoo.vision_models, gpu, disk, existing);
    if (!vision) exhausted(zoo.vision_models, "vision", hw, pref);
    return {*text, *vision};
}

std::string render_model_selection_prompt(const ModelZoo& zoo, const HardwareStatus& hw,
                                          const ResourcePreference& pref,
                                          const DbManifest* existing,
                                          const PromptTemplates& templates) {
    std::string existing_note;
    if (existing)
        existing_note = " An existing vector database uses text backbone " + existing->text_backbone +
                        " and image backbone " + existing->vision_backbone + ".";
    return render_template(templates.embedding_spec,
                           {{"text_emb_model_zoo_prompt", zoo_line(zoo.text_models)},
                            {"vis_emb_model_zoo_prompt", zoo_line(zoo.vision_models)},
                            {"hardware_status", describe(hw)},
                            {"resource_usage_preference",
                             std::string(to_string(pref.level)) + " (use at most " +
                                 format_gb(pref.budget_fraction() * 100) + "% of free resources)"},
                            {"existing_database", existing_note}});
}

Backbones match_embedding_models(const ModelZoo& zoo, const HardwareStatus& hw,
                                 const ResourcePreference& pref, const DbManifest* existing,
                                 const ModelPolicy& policy, const PromptTemplates& templates) {
    Backbones rule = match_embedding_models(zoo, hw, pref, existing);
    std::string prompt = render_model_selection_prompt(zoo, hw, pref, existing, templates);
    for (int attempt = 0; attempt < 2; ++attempt) {
        auto reply = policy.complete(ChatRequest::user({ContentPart::make_text(prompt)}));
        std::pair<std::string, std::string> ids;
        try {
            ids = parse_model_selection(reply.text);
        } catch (const FormatError&) {
            prompt += "\n\nYour previous reply did not follow the output format exactly. Reply with "
                      "only: Text Embedding: <id>; Image Embedding: <id>";
            continue;
        }
        double gpu = pref.budget_fraction() * hw.free_gpu_gb;
        double disk = pref.budget_fraction() * hw.free_disk_gb;
        const ModelSpec* t = find_model(zoo.text_models, ids.first);
        const ModelSpec* v = find_model(zoo.vision_models, ids.second);
        if (t && v && fits(*t, gpu, disk) && fits(*v, gpu, disk) && compatible(*t, existing) &&
            compatible(*v, existing))
            return {*t, *v};
        break;
    }
    return rule;
}

std::pair<std::string, std::string> parse_model_selection(std::string_view text) {
    static const std::regex pattern(
        R"(^\s*Text Embedding:[ \t]*([A-Za-z0-9._/:\-]+)[ \t]*;\s*Image Embedding:[ \t]*([A-Za-z0-9._/:\-]+)\s*$)");
    std::match_results<std::string_view::const_iterator> m;
    if (!std::regex_match(text.begin(), text.end(), m, pattern))
        throw FormatError("expected 'Text Embedding: <id>; Image Embedding: <id>'");
    return {m[1].str(), m[2].str()};
}

std::string render_model_selection(std::string_view text_id, std::string_view vision_id) {
    return "Text Embedding: " + std::string(text_id) + "; Image Embedding: " + std::string(vision_id);
}

std::vector<Sample> detect_delta(const Corpus& corpus, const DbManifest& manifest) {
    std::vector<Sample> out;
    for (const auto& s : corpus.samples()) {
        auto it = manifest.digests.find(s.id);
        if (it == manifest.digests.end() || it->second != content_hash(s)) out.push_back(s);
    }
    return out;
}

// --- mock backend ------------------------------------------------------------

MockEmbeddingBackend::MockEmbeddingBackend(MockEmbeddingConfig config) : config_(std::move(config)) {
    if (config_.dim <= 0) throw ConfigError("mock embedding dimension must be positive");
    if (static_cast<int>(config_.anchors.size()) > config_.dim)
        throw ConfigError("more anchors than embedding dimensions");
}

const std::vector<std::vector<double>>& MockEmbeddingBackend::anchor_basis(const ModelSpec& model) const {
    std::lock_guard lock(basis_mutex_);
    std::string key = model.model_id + (model.kind == ModelKind::text ? "|t" : "|v");
    auto it = basis_cache_.find(key);
    if (it != basis_cache_.end()) return it->second;
    std::vector<std::vector<double>> basis;
    std::uint64_t base = space_seed(config_.seed, model);
    for (const auto& anchor : config_.anchors) {
        auto v = gaussian_vector(fnv1a("anchor:" + anchor, base), config_.dim);
        for (int pass = 0; pass < 2; ++pass)
            for (const auto& b : basis) {
                double p = dot(v, b);
                for (std::size_t i = 0; i < v.size(); ++i) v[i] -= p * b[i];
            }
        double n = std::sqrt(dot(v, v));
        for (auto& x : v) x /= n;
        basis.push_back(std::move(v));
    }
    return basis_cache_.emplace(key, std::move(basis)).first->second;
}

std::vector<float> MockEmbeddingBackend::embed_tokens(const ModelSpec& model, std::string_view text) const {
    const auto& basis = anchor_basis(model);
    const std::size_t dim = static_cast<std::size_t>(config_.dim);
    std::uint64_t base = space_seed(config_.seed, model);

    std::vector<double> anchored(dim, 0.0), residual(dim, 0.0);
    bool any_anchor = false;
    auto tokens = tokenize(text);
    if (tokens.empty()) tokens.push_back("<empty>");
    for (const auto& tok : tokens) {
        auto a = std::find(config_.anchors.begin(), config_.anchors.end(), tok);
        if (a != config_.anchors.end()) {
            const auto& b = basis[static_cast<std::size_t>(a - config_.anchors.begin())];
            for (std::size_t i = 0; i < dim; ++i) anchored[i] += b[i];
            any_anchor = true;
            continue;
        }
        auto g = gaussian_vector(fnv1a("token:" + tok, base), config_.dim);
        for (std::size_t i = 0; i < dim; ++i) residual[i] += g[i];
    }
    // The residual never leans toward any anchor.
    for (int pass = 0; pass < 2; ++pass)
        for (const auto& b : basis) {
            double p = dot(residual, b);
            for (std::size_t i = 0; i < dim; ++i) residual[i] -= p * b[i];
        }
    double rn = std::sqrt(dot(residual, residual));
    if (any_anchor && rn > 0) {
        double scale = config_.residual_norm * std::sqrt(dot(anchored, anchored)) / rn;
        for (auto& x : residual) x *= scale;
    }
    std::vector<float> out(dim);
    for (std::size_t i = 0; i < dim; ++i) out[i] = static_cast<float>(anchored[i] + residual[i]);
    if (!l2_normalize(out)) {
        auto g = gaussian_vector(fnv1a("<degenerate>", base), config_.dim);
        for (std::size_t i = 0; i < dim; ++i) out[i] = static_cast<float>(g[i]);
        l2_normalize(out);
    }
    return out;
}

std::vector<float> MockEmbeddingBackend::embed_text(const ModelSpec& model, std::string_view text) const {
    return embed_tokens(model, text);
}

std::vector<float> MockEmbeddingBackend::embed_image(const ModelSpec& model,
                                                     std::span<const std::uint8_t> image) const {
    return embed_tokens(model, std::string_view(reinterpret_cast<const char*>(image.data()), image.size()));
}

// --- http backend --------------------------------------------------------------

std::vector<float> HttpEmbeddingBackend::embed_text(const ModelSpec& model, std::string_view text) const {
    return request(model.model_id, nlohmann::json::array({std::string(text)})).at(0);
}

std::vector<float> HttpEmbeddingBackend::embed_image(const ModelSpec& model,
                                                     std::span<const std::uint8_t> image) const {
    return request(model.model_id, nlohmann::json::array({base64_encode(image)})).at(0);
}

// --- embedding -------------------------------------------------------------------

const EmbeddedSample* EmbeddingSet::find(std::string_view id) const {
    for (const auto& e : entries)
        if (e.id == id) return &e;
    return nullptr;
}

EmbeddingSet embed_samples(std::span<const Sample> samples, const EmbeddingBackend& backend,
                           const Backbones& backbones, const EmbedOptions& options) {
    EmbeddingSet set;
    set.text_backbone = backbones.text.model_id;
    set.vision_backbone = backbones.vision.model_id;
    if (samples.empty()) return set;

    std::vector<std::optional<EmbeddedSample>> results(samples.size());
    std::vector<std::string> errors(samples.size());
    auto embed_one = [&](std::size_t i) {
        const Sample& s = samples[i];
        for (int attempt = 1; attempt <= std::max(1, options.max_attempts); ++attempt) {
            try {
                EmbeddedSample e;
                e.id = s.id;
                e.text_vector = checked_unit(backend.embed_text(backbones.text, s.question), "text");
                e.vision_vector =
                    checked_unit(backend.embed_image(backbones.vision, read_media(s.image)), "vision");
                results[i] = std::move(e);
                return;
            } catch (const IoError& e) {
                errors[i] = e.what();
                return;
            } catch (const std::exception& e) {
                errors[i] = e.what();
                if (attempt < options.max_attempts)
                    std::this_thread::sleep_for(
                        std::chrono::milliseconds(static_cast<long>(options.backoff_base_ms) << (attempt - 1)));
            }
        }
    };
    parallel_for(samples.size(), options.max_concurrency, embed_one);

    std::vector<std::string> failed;
    std::string first_error;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (!results[i]) {
            failed.push_back(samples[i].id);
            if (first_error.empty()) first_error = errors[i];
        }
    }
    if (!failed.empty())
        throw EmbedError("embedding failed for " + std::to_string(failed.size()) + " sample(s): " + first_error,
                         failed);

    for (auto& r : results) set.entries.push_back(std::move(*r));
    const auto td = set.entries.front().text_vector.size();
    const auto vd = set.entries.front().vision_vector.size();
    for (const auto& e : set.entries)
        if (e.text_vector.size() != td || e.vision_vector.size() != vd)
            throw EmbedError("backend returned vectors of inconsistent dimension", {e.id});
    return set;
}

QueryVectors embed_query(const Query& query, const EmbeddingBackend& backend, const Backbones& backbones) {
    QueryVectors q;
    q.text = checked_unit(backend.embed_text(backbones.text, query.text), "text");
    if (!query.image.uri.empty())
        q.vision = checked_unit(backend.embed_image(backbones.vision, read_media(query.image)), "vision");
    return q;
}

std::vector<Record> make_records(std::span<const Sample> samples, const EmbeddingSet& set) {
    std::vector<Record> out;
    out.reserve(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const EmbeddedSample* e = i < set.entries.size() && set.entries[i].id == samples[i].id
                                      ? &set.entries[i]
                                      : set.find(samples[i].id);
        if (!e) throw SchemaError("no embedding for sample '" + samples[i].id + "'");
        out.push_back(Record{samples[i], e->text_vector, e->vision_vector, content_hash(samples[i])});
    }
    return out;
}

}  // namespace ctxnav
