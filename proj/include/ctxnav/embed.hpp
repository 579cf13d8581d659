#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctxnav/core.hpp"
#include "ctxnav/policy.hpp"
#include "ctxnav/prompts.hpp"
#include "ctxnav/vecdb.hpp"

namespace ctxnav {

struct HardwareStatus {
    double free_gpu_gb = 0.0;
    double free_disk_gb = 0.0;
};

std::string describe(const HardwareStatus& hw);

enum class ModelKind { text, vision };

struct ModelSpec {
    std::string model_id;
    ModelKind kind = ModelKind::text;
    double disk_gb = 0.0;
    double gpu_gb = 0.0;
    // Unknown for the stock zoo; fixed by the first backend response and
    // recorded in the database manifest.
    std::optional<int> vector_dim;

    double footprint() const noexcept { return disk_gb + gpu_gb; }
    bool operator==(const ModelSpec&) const = default;
};

struct ModelZoo {
    std::vector<ModelSpec> text_models;
    std::vector<ModelSpec> vision_models;

    static const ModelZoo& stock();
};

enum class PreferenceLevel { conservative, balanced, performance };

std::string_view to_string(PreferenceLevel level);
std::optional<PreferenceLevel> preference_from_string(std::string_view s);

struct ResourcePreference {
    PreferenceLevel level = PreferenceLevel::balanced;
    // 0.5 / 0.75 / 1.0 of the free resources.
    double budget_fraction() const noexcept;
};

struct Backbones {
    ModelSpec text;
    ModelSpec vision;
};

// Largest-footprint text and vision models whose disk and GPU needs both fit
// in budget_fraction * hardware. With an existing manifest, only models
// matching its backbones are eligible. Zoo order breaks footprint ties.
Backbones match_embedding_models(const ModelZoo& zoo, const HardwareStatus& hw,
                                 const ResourcePreference& pref,
                                 const DbManifest* existing = nullptr);

// Asks the policy first; its proposal is kept only if it names zoo models
// that pass the same fit and compatibility rules. One re-prompt on a format
// error, then the rule choice.
Backbones match_embedding_models(const ModelZoo& zoo, const HardwareStatus& hw,
                                 const ResourcePreference& pref, const DbManifest* existing,
                                 const ModelPolicy& policy, const PromptTemplates& templates);

std::string render_model_selection_prompt(const ModelZoo& zoo, const HardwareStatus& hw,
                                          const ResourcePreference& pref,
                                          const DbManifest* existing,
                                          const PromptTemplates& templates);

// "Text Embedding: <id>; Image Embedding: <id>"
std::pair<std::string, std::string> parse_model_selection(std::string_view text);
std::string render_model_selection(std::string_view text_id, std::string_view vision_id);

// Samples absent from the manifest or whose content digest changed, in
// corpus order.
std::vector<Sample> detect_delta(const Corpus& corpus, const DbManifest& manifest);

// --- backends ----------------------------------------------------------------

class EmbeddingBackend {
public:
    virtual ~EmbeddingBackend() = default;
    virtual std::vector<float> embed_text(const ModelSpec& model, std::string_view text) const = 0;
    virtual std::vector<float> embed_image(const ModelSpec& model,
                                           std::span<const std::uint8_t> image) const = 0;
};

struct MockEmbeddingConfig {
    int dim = 64;
    std::uint64_t seed = 0;
    // Tokens that pin an embedding to a fixed orthonormal direction, one per
    // anchor. Synthetic corpora use them to place same-task samples together.
    std::vector<std::string> anchors;
    // Norm of the token-hash residual relative to a unit anchor component.
    double residual_norm = 0.45;
};

// Deterministic stand-in for a real encoder: a seeded projection of token
// hashes, plus anchor directions. Different model ids give unrelated spaces.
class MockEmbeddingBackend final : public EmbeddingBackend {
public:
    explicit MockEmbeddingBackend(MockEmbeddingConfig config = {});
    std::vector<float> embed_text(const ModelSpec& model, std::string_view text) const override;
    std::vector<float> embed_image(const ModelSpec& model,
                                   std::span<const std::uint8_t> image) const override;

    const MockEmbeddingConfig& config() const noexcept { return config_; }

private:
    std::vector<float> embed_tokens(const ModelSpec& model, std::string_view text) const;
    const std::vector<std::vector<double>>& anchor_basis(const ModelSpec& model) const;

    MockEmbeddingConfig config_;
    mutable std::mutex basis_mutex_;
    mutable std::map<std::string, std::vector<std::vector<double>>> basis_cache_;
};

// POSTs {"model": id, "input": [...]} to <base_url>/embeddings and reads
// {"data": [{"embedding": [...]}]}. Images are sent base64-encoded.
class HttpEmbeddingBackend final : public EmbeddingBackend {
public:
    explicit HttpEmbeddingBackend(EndpointConfig config) : config_(std::move(config)) {}
    std::vector<float> embed_text(const ModelSpec& model, std::string_view text) const override;
    std::vector<float> embed_image(const ModelSpec& model,
                                   std::span<const std::uint8_t> image) const override;

private:
    std::vector<std::vector<float>> request(const std::string& model,
                                            const nlohmann::json& inputs) const;
    EndpointConfig config_;
};

// --- embedding ---------------------------------------------------------------

struct EmbeddedSample {
    std::string id;
    std::vector<float> text_vector;
    std::vector<float> vision_vector;
};

struct EmbeddingSet {
    std::vector<EmbeddedSample> entries;   // input order
    std::string text_backbone;
    std::string vision_backbone;

    const EmbeddedSample* find(std::string_view id) const;
    std::size_t size() const noexcept { return entries.size(); }
};

struct EmbedOptions {
    int max_concurrency = 4;
    int max_attempts = 3;
    int backoff_base_ms = 100;
};

// One (text, vision) pair per sample: text from the question only, vision
// from the image bytes, both L2-normalized. Any sample failing all attempts
// aborts the batch with EmbedError naming every failed id.
EmbeddingSet embed_samples(std::span<const Sample> samples, const EmbeddingBackend& backend,
                           const Backbones& backbones, const EmbedOptions& options = {});

QueryVectors embed_query(const Query& query, const EmbeddingBackend& backend,
                         const Backbones& backbones);

// Pairs samples with their embeddings and digests, ready for upsert.
std::vector<Record> make_records(std::span<const Sample> samples, const EmbeddingSet& set);

}  // namespace ctxnav
