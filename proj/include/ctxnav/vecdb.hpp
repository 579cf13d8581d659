#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctxnav/candidates.hpp"
#include "ctxnav/core.hpp"

namespace ctxnav {

inline constexpr int db_format_version = 1;

struct Record {
    Sample sample;
    std::vector<float> text_vector;
    std::vector<float> vision_vector;
    Digest digest;
};

struct DbManifest {
    std::string text_backbone;
    std::string vision_backbone;
    int text_dim = 0;
    int vision_dim = 0;
    std::map<std::string, Digest> digests;
    std::size_t record_count = 0;
    int format_version = db_format_version;

    nlohmann::json to_json() const;
    static DbManifest from_json(const nlohmann::json& j);
    bool operator==(const DbManifest&) const = default;
};

enum class RetrievalMode { textual, visual, cascaded_visual_then_text, cascaded_text_then_visual };

std::string_view to_string(RetrievalMode mode);
std::optional<RetrievalMode> retrieval_mode_from_string(std::string_view s);

struct RetrievalSpec {
    RetrievalMode mode = RetrievalMode::textual;
    // Cascaded modes only: first stage keeps overfetch * k records.
    int overfetch = 4;
};

struct QueryVectors {
    std::optional<std::vector<float>> text;
    std::optional<std::vector<float>> vision;
};

// Advisory exclusive lock guarding writes to a database directory. The lock
// file sits next to the directory, so it survives snapshot swaps.
class DbLock {
public:
    // Non-blocking; throws LockError if another writer holds it.
    explicit DbLock(const std::filesystem::path& db_dir);
    ~DbLock();
    DbLock(const DbLock&) = delete;
    DbLock& operator=(const DbLock&) = delete;

    const std::filesystem::path& db_dir() const noexcept { return dir_; }

private:
    std::filesystem::path dir_;
    int fd_ = -1;
};

// Flat, exact vector store. Vectors are unit length, so cosine similarity is
// a dot product.
class VectorDatabase {
public:
    VectorDatabase(std::string text_backbone, std::string vision_backbone, int text_dim,
                   int vision_dim);

    const DbManifest& manifest() const noexcept { return manifest_; }
    std::size_t size() const noexcept { return samples_.size(); }
    const Sample& sample(std::size_t i) const { return samples_[i]; }
    std::span<const float> text_vector(std::size_t i) const;
    std::span<const float> vision_vector(std::size_t i) const;
    std::optional<std::size_t> find(std::string_view id) const;

    // Replaces records whose id exists, appends the rest. All-or-nothing:
    // throws SchemaError before touching anything if a record has the wrong
    // dimension or is not unit length.
    void upsert(std::span<const Record> records);

    // Top-k by cosine similarity, descending, ties by ascending sample id.
    // k larger than the database returns every record.
    CandidateSet topk(const QueryVectors& query, std::size_t k, const RetrievalSpec& spec) const;

    // Writes manifest.json, records.jsonl, text.f32, vision.f32 and
    // checksums.txt, swapping the directory in atomically.
    void persist(const std::filesystem::path& dir) const;
    void persist(const std::filesystem::path& dir, const DbLock& held) const;
    static VectorDatabase load(const std::filesystem::path& dir);
    static bool exists(const std::filesystem::path& dir);

    bool operator==(const VectorDatabase& other) const;

private:
    static VectorDatabase load_snapshot(const std::filesystem::path& dir);

    DbManifest manifest_;
    std::vector<Sample> samples_;
    std::vector<float> text_;
    std::vector<float> vision_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Exact cosine similarity, clamped to [-1, 1], accumulated in double.
double cosine_score(std::span<const float> a, std::span<const float> b);

// Scales to unit L2 norm in place; returns false for a zero vector.
bool l2_normalize(std::vector<float>& v);

}  // namespace ctxnav
