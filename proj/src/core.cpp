#include "ctxnav/core.hpp"

#include <fstream>
#include <sstream>

#include <openssl/evp.h>

#include "ctxnav/errors.hpp"

namespace ctxnav {

namespace {

int hex_value(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
}

std::string to_hex(std::span<const std::uint8_t> bytes) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    out.reserve(bytes.size() * 2);
    for (auto b : bytes) {
        out.push_back(digits[b >> 4]);
        out.push_back(digits[b & 0x0f]);
    }
    return out;
}

class Sha256 {
public:
    Sha256() : ctx_(EVP_MD_CTX_new()) {
        if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1)
            throw Error("sha256 init failed");
    }
    ~Sha256() { EVP_MD_CTX_free(ctx_); }
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;

    void update(std::span<const std::uint8_t> bytes) {
        EVP_DigestUpdate(ctx_, bytes.data(), bytes.size());
    }
    void update(std::string_view text) {
        EVP_DigestUpdate(ctx_, text.data(), text.size());
    }
    // Field framing: tag byte + little-endian u64 length + payload.
    void field(char tag, std::span<const std::uint8_t> bytes) {
        std::uint8_t header[9];
        header[0] = static_cast<std::uint8_t>(tag);
        std::uint64_t n = bytes.size();
        for (int i = 0; i < 8; ++i) header[1 + i] = static_cast<std::uint8_t>(n >> (8 * i));
        update(std::span<const std::uint8_t>(header, 9));
        update(bytes);
    }
    void field(char tag, std::string_view text) {
        field(tag, std::span<const std::uint8_t>(
                       reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
    }
    std::array<std::uint8_t, 32> finish() {
        std::array<std::uint8_t, 32> out{};
        unsigned int len = 0;
        EVP_DigestFinal_ex(ctx_, out.data(), &len);
        return out;
    }

private:
    EVP_MD_CTX* ctx_;
};

std::string percent_decode(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '%' && i + 2 < s.size() && hex_value(s[i + 1]) >= 0 &&
            hex_value(s[i + 2]) >= 0) {
            out.push_back(static_cast<char>(hex_value(s[i + 1]) * 16 + hex_value(s[i + 2])));
            i += 2;
        } else {
            out.push_back(s[i]);
        }
    }
    return out;
}

std::optional<std::string> opt_string(const nlohmann::json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return std::nullopt;
    return it->get<std::string>();
}

}  // namespace

Digest Digest::from_hex(std::string_view hex) {
    if (hex.size() != size * 2) throw FormatError("digest must be 64 hex characters");
    std::array<std::uint8_t, size> bytes{};
    for (std::size_t i = 0; i < size; ++i) {
        int hi = hex_value(hex[2 * i]);
        int lo = hex_value(hex[2 * i + 1]);
        if (hi < 0 || lo < 0) throw FormatError("invalid hex digit in digest");
        bytes[i] = static_cast<std::uint8_t>(hi * 16 + lo);
    }
    return Digest(bytes);
}

std::string Digest::hex() const { return to_hex(bytes_); }

Corpus::Corpus(std::vector<Sample> samples) {
    for (auto& s : samples) {
        validate(s);
        if (!index_.emplace(s.id, samples_.size()).second)
            throw SchemaError("duplicate sample id '" + s.id + "'");
        samples_.push_back(std::move(s));
    }
}

const Sample* Corpus::find(std::string_view id) const {
    auto it = index_.find(std::string(id));
    return it == index_.end() ? nullptr : &samples_[it->second];
}

void Corpus::add(Sample sample) {
    validate(sample);
    if (index_.contains(sample.id))
        throw SchemaError("duplicate sample id '" + sample.id + "'");
    index_.emplace(sample.id, samples_.size());
    samples_.push_back(std::move(sample));
    ++version_;
}

void Corpus::upsert(Sample sample) {
    validate(sample);
    if (auto it = index_.find(sample.id); it != index_.end()) {
        samples_[it->second] = std::move(sample);
    } else {
        index_.emplace(sample.id, samples_.size());
        samples_.push_back(std::move(sample));
    }
    ++version_;
}

void validate(const Sample& sample) {
    if (sample.id.empty()) throw SchemaError("sample id must be non-empty");
    if (sample.question.empty())
        throw SchemaError("sample '" + sample.id + "' has an empty question");
    if (sample.image.uri.empty())
        throw SchemaError("sample '" + sample.id + "' has an empty image path");
}

void validate(const Query& query) {
    if (query.text.empty()) throw SchemaError("query text must be non-empty");
}

std::vector<std::uint8_t> read_media(const MediaRef& ref) {
    std::string_view uri = ref.uri;
    if (uri.starts_with("data:")) {
        auto comma = uri.find(',');
        if (comma == std::string_view::npos) throw IoError(ref.uri, "malformed data URI");
        std::string_view meta = uri.substr(5, comma - 5);
        std::string_view payload = uri.substr(comma + 1);
        if (meta.ends_with(";base64")) return base64_decode(payload);
        std::string raw = percent_decode(payload);
        return {raw.begin(), raw.end()};
    }
    std::ifstream in(ref.uri, std::ios::binary);
    if (!in) throw IoError(ref.uri, "cannot read image");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError(ref.uri, "error reading image");
    return bytes;
}

Digest content_hash(const Sample& sample) {
    auto image = read_media(sample.image);
    Sha256 h;
    h.field('q', sample.question);
    h.field('a', sample.answer);
    h.field('i', image);
    return Digest(h.finish());
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
    Sha256 h;
    h.update(bytes);
    return to_hex(h.finish());
}

std::string sha256_hex(std::string_view text) {
    Sha256 h;
    h.update(text);
    return to_hex(h.finish());
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                            static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
    if (text.size() % 4 != 0) throw FormatError("base64 length not a multiple of 4");
    std::vector<std::uint8_t> out(3 * text.size() / 4);
    int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                            static_cast<int>(text.size()));
    if (n < 0) throw FormatError("invalid base64");
    // EVP_DecodeBlock keeps the zero bytes produced by padding.
    std::size_t pad = 0;
    if (!text.empty() && text.back() == '=') ++pad;
    if (text.size() > 1 && text[text.size() - 2] == '=') ++pad;
    out.resize(static_cast<std::size_t>(n) - pad);
    return out;
}

nlohmann::json to_json(const Sample& s) {
    nlohmann::json j{{"id", s.id},
                     {"question", s.question},
                     {"answer", s.answer},
                     {"image_path", s.image.uri}};
    if (s.style_tag) j["style_tag"] = *s.style_tag;
    if (s.task_tag) j["task_tag"] = *s.task_tag;
    return j;
}

Sample sample_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw FormatError("sample must be a JSON object");
    for (const char* key : {"id", "question", "answer", "image_path"})
        if (!j.contains(key) || !j[key].is_string())
            throw FormatError(std::string("sample is missing string field '") + key + "'");
    Sample s;
    s.id = j["id"].get<std::string>();
    s.question = j["question"].get<std::string>();
    s.answer = j["answer"].get<std::string>();
    s.image.uri = j["image_path"].get<std::string>();
    s.style_tag = opt_string(j, "style_tag");
    s.task_tag = opt_string(j, "task_tag");
    validate(s);
    return s;
}

Corpus read_corpus_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(path.string(), "cannot open corpus");
    std::vector<Sample> samples;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            samples.push_back(sample_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    // Relative image paths resolve against the corpus file's directory.
    auto base = path.parent_path();
    for (auto& s : samples) {
        if (!s.image.uri.starts_with("data:") && std::filesystem::path(s.image.uri).is_relative())
            s.image.uri = (base / s.image.uri).lexically_normal().string();
    }
    return Corpus(std::move(samples));
}

void write_corpus_jsonl(const Corpus& corpus, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(path.string(), "cannot write corpus");
    for (const auto& s : corpus.samples()) out << to_json(s).dump() << '\n';
}

nlohmann::json to_json(const Query& q) {
    nlohmann::json j{{"question", q.text}, {"image_path", q.image.uri}};
    if (q.task_tag) j["task_tag"] = *q.task_tag;
    if (q.style_tag) j["style_tag"] = *q.style_tag;
    return j;
}

Query query_from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("question") || !j["question"].is_string())
        throw FormatError("query must be an object with a string 'question'");
    Query q;
    q.text = j["question"].get<std::string>();
    q.image.uri = j.value("image_path", std::string{});
    q.task_tag = opt_string(j, "task_tag");
    q.style_tag = opt_string(j, "style_tag");
    validate(q);
    return q;
}

Query read_query_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(path.string(), "cannot open query file");
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        Query q = query_from_json(nlohmann::json::parse(ss.str()));
        if (!q.image.uri.empty() && !q.image.uri.starts_with("data:") &&
            std::filesystem::path(q.image.uri).is_relative())
            q.image.uri = (path.parent_path() / q.image.uri).lexically_normal().string();
        return q;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

}  // namespace ctxnav
