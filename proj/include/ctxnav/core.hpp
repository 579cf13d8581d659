#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

namespace ctxnav {

enum class MediaKind { image };

// Reference to a sample's image. `uri` is either a filesystem path or a
// `data:` URI (`data:,<raw>` or `data:<mime>;base64,<payload>`), the latter
// used by synthetic corpora that never touch the disk.
struct MediaRef {
    std::string uri;
    MediaKind kind = MediaKind::image;

    bool operator==(const MediaRef&) const = default;
};

struct Sample {
    std::string id;
    std::string question;
    std::string answer;
    MediaRef image;
    // Ground truth, present only on benchmark corpora.
    std::optional<std::string> style_tag;
    std::optional<std::string> task_tag;

    bool operator==(const Sample&) const = default;
};

struct Query {
    std::string text;
    MediaRef image;
    std::optional<std::string> task_tag;
    std::optional<std::string> style_tag;

    bool operator==(const Query&) const = default;
};

struct Timestep {
    std::uint32_t value = 0;
};

// SHA-256 of a sample's content.
class Digest {
public:
    static constexpr std::size_t size = 32;

    Digest() = default;
    explicit Digest(const std::array<std::uint8_t, size>& bytes) : bytes_(bytes) {}

    static Digest from_hex(std::string_view hex);
    std::string hex() const;
    const std::array<std::uint8_t, size>& bytes() const noexcept { return bytes_; }

    auto operator<=>(const Digest&) const = default;

private:
    std::array<std::uint8_t, size> bytes_{};
};

class Corpus {
public:
    Corpus() = default;
    explicit Corpus(std::vector<Sample> samples);

    const std::vector<Sample>& samples() const noexcept { return samples_; }
    std::uint64_t version() const noexcept { return version_; }
    std::size_t size() const noexcept { return samples_.size(); }

    const Sample* find(std::string_view id) const;

    // Appends; throws SchemaError on a duplicate id.
    void add(Sample sample);
    // Replaces the sample with the same id in place, or appends it.
    void upsert(Sample sample);

private:
    std::vector<Sample> samples_;
    std::unordered_map<std::string, std::size_t> index_;
    std::uint64_t version_ = 0;
};

void validate(const Sample& sample);
void validate(const Query& query);

// Bytes behind a media reference. Throws IoError naming the path.
std::vector<std::uint8_t> read_media(const MediaRef& ref);

// Digest over (question, answer, image bytes), each length-prefixed. The
// image path itself is not hashed, so moving a file does not change it.
Digest content_hash(const Sample& sample);

// sha256 of an arbitrary buffer, lowercase hex.
std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::string_view text);

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

// JSON-lines corpus format: id, question, answer, image_path, optional
// style_tag and task_tag.
nlohmann::json to_json(const Sample& sample);
Sample sample_from_json(const nlohmann::json& j);
Corpus read_corpus_jsonl(const std::filesystem::path& path);
void write_corpus_jsonl(const Corpus& corpus, const std::filesystem::path& path);

nlohmann::json to_json(const Query& query);
Query query_from_json(const nlohmann::json& j);
Query read_query_file(const std::filesystem::path& path);

}  // namespace ctxnav
