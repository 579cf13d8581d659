#include "ctxnav/vecdb.hpp"

#include <algorithm>
#include <bit>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <utility>

#include <fcntl.h>
#include <sys/file.h>
#include <sys/stat.h>
#include <unistd.h>

#include "ctxnav/errors.hpp"

namespace ctxnav {

namespace fs = std::filesystem;

namespace {

constexpr const char* manifest_file = "manifest.json";
constexpr const char* records_file = "records.jsonl";
constexpr const char* text_file = "text.f32";
constexpr const char* vision_file = "vision.f32";
constexpr const char* checksums_file = "checksums.txt";

void write_file(const fs::path& p, std::string_view data) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(p.string(), "cannot write database file");
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    out.flush();
    if (!out) throw IoError(p.string(), "short write");
}

std::string encode_f32(std::span<const float> values) {
    std::string out(values.size() * 4, '\0');
    for (std::size_t i = 0; i < values.size(); ++i) {
        auto bits = std::bit_cast<std::uint32_t>(values[i]);
        for (int b = 0; b < 4; ++b)
            out[4 * i + b] = static_cast<char>((bits >> (8 * b)) & 0xff);
    }
    return out;
}

std::vector<float> decode_f32(std::string_view bytes) {
    std::vector<float> out(bytes.size() / 4);
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b)
            bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[4 * i + b])) << (8 * b);
        out[i] = std::bit_cast<float>(bits);
    }
    return out;
}

std::string sha_of(std::string_view data) {
    return sha256_hex(std::span<const std::uint8_t>(
        reinterpret_cast<const std::uint8_t*>(data.data()), data.size()));
}

struct Ranked {
    std::size_t index;
    double score;
};

// Keeps the best k of `pool` by (score desc, id asc).
std::vector<Ranked> select_top(std::vector<Ranked> pool, std::size_t k,
                               const std::vector<Sample>& samples) {
    auto better = [&](const Ranked& a, const Ranked& b) {
        if (a.score != b.score) return a.score > b.score;
        return samples[a.index].id < samples[b.index].id;
    };
    k = std::min(k, pool.size());
    std::partial_sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k), pool.end(), better);
    pool.resize(k);
    return pool;
}

void check_unit(std::span<const float> v, const std::string& id, const char* which) {
    double n = 0;
    for (float x : v) n += static_cast<double>(x) * x;
    if (std::abs(std::sqrt(n) - 1.0) > 1e-6)
        throw SchemaError(std::string(which) + " vector of '" + id + "' is not unit length");
}

}  // namespace

// --- manifest ----------------------------------------------------------------

nlohmann::json DbManifest::to_json() const {
    nlohmann::json digests_json = nlohmann::json::object();
    for (const auto& [id, d] : digests) digests_json[id] = d.hex();
    return {{"format_version", format_version},
            {"text_backbone", text_backbone},
            {"vision_backbone", vision_backbone},
            {"text_dim", text_dim},
            {"vision_dim", vision_dim},
            {"record_count", record_count},
            {"digests", digests_json}};
}

DbManifest DbManifest::from_json(const nlohmann::json& j) {
    DbManifest m;
    m.format_version = j.at("format_version").get<int>();
    m.text_backbone = j.at("text_backbone").get<std::string>();
    m.vision_backbone = j.at("vision_backbone").get<std::string>();
    m.text_dim = j.at("text_dim").get<int>();
    m.vision_dim = j.at("vision_dim").get<int>();
    m.record_count = j.at("record_count").get<std::size_t>();
    for (const auto& [id, hex] : j.at("digests").items())
        m.digests.emplace(id, Digest::from_hex(hex.get<std::string>()));
    return m;
}

std::string_view to_string(RetrievalMode mode) {
    switch (mode) {
        case RetrievalMode::textual: return "textual";
        case RetrievalMode::visual: return "visual";
        case RetrievalMode::cascaded_visual_then_text: return "visual-text";
        case RetrievalMode::cascaded_text_then_visual: return "text-visual";
    }
    return "textual";
}

std::optional<RetrievalMode> retrieval_mode_from_string(std::string_view s) {
    for (auto m : {RetrievalMode::textual, RetrievalMode::visual,
                   RetrievalMode::cascaded_visual_then_text, RetrievalMode::cascaded_text_then_visual})
        if (to_string(m) == s) return m;
    return std::nullopt;
}

// --- lock --------------------------------------------------------------------

DbLock::DbLock(const fs::path& db_dir) : dir_(db_dir) {
    auto lock_path = fs::path(db_dir.string() + ".lock");
    if (lock_path.has_parent_path()) fs::create_directories(lock_path.parent_path());
    fd_ = ::open(lock_path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
    if (fd_ < 0) throw IoError(lock_path.string(), std::string("cannot open lock file: ") + std::strerror(errno));
    if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
        ::close(fd_);
        fd_ = -1;
        throw LockError("database " + db_dir.string() + " is locked by another writer");
    }
}

DbLock::~DbLock() {
    if (fd_ >= 0) {
        ::flock(fd_, LOCK_UN);
        ::close(fd_);
    }
}

// --- database ----------------------------------------------------------------

double cosine_score(std::span<const float> a, std::span<const float> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
    return std::clamp(s, -1.0, 1.0);
}

bool l2_normalize(std::vector<float>& v) {
    double n = 0.0;
    for (float x : v) n += static_cast<double>(x) * x;
    if (!(n > 0.0) || !std::isfinite(n)) return false;
    double inv = 1.0 / std::sqrt(n);
    for (float& x : v) x = static_cast<float>(x * inv);
    return true;
}

VectorDatabase::VectorDatabase(std::string text_backbone, std::string vision_backbone,
                               int text_dim, int vision_dim) {
    if (text_dim <= 0 || vision_dim <= 0) throw SchemaError("vector dimensions must be positive");
    manifest_.text_backbone = std::move(text_backbone);
    manifest_.vision_backbone = std::move(vision_backbone);
    manifest_.text_dim = text_dim;
    manifest_.vision_dim = vision_dim;
}

std::span<const float> VectorDatabase::text_vector(std::size_t i) const {
    auto d = static_cast<std::size_t>(manifest_.text_dim);
    return {text_.data() + i * d, d};
}

std::span<const float> VectorDatabase::vision_vector(std::size_t i) const {
    auto d = static_cast<std::size_t>(manifest_.vision_dim);
    return {vision_.data() + i * d, d};
}

std::optional<std::size_t> VectorDatabase::find(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

void VectorDatabase::upsert(std::span<const Record> records) {
    for (const auto& r : records) {
        validate(r.sample);
        if (static_cast<int>(r.text_vector.size()) != manifest_.text_dim ||
            static_cast<int>(r.vision_vector.size()) != manifest_.vision_dim)
            throw SchemaError("record '" + r.sample.id + "' has dimensions (" +
                              std::to_string(r.text_vector.size()) + ", " +
                              std::to_string(r.vision_vector.size()) + "), database expects (" +
                              std::to_string(manifest_.text_dim) + ", " +
                              std::to_string(manifest_.vision_dim) + ")");
        check_unit(r.text_vector, r.sample.id, "text");
        check_unit(r.vision_vector, r.sample.id, "vision");
    }
    const auto td = static_cast<std::size_t>(manifest_.text_dim);
    const auto vd = static_cast<std::size_t>(manifest_.vision_dim);
    for (const auto& r : records) {
        std::size_t slot;
        if (auto it = index_.find(r.sample.id); it != index_.end()) {
            slot = it->second;
            samples_[slot] = r.sample;
        } else {
            slot = samples_.size();
            index_.emplace(r.sample.id, slot);
            samples_.push_back(r.sample);
            text_.resize(text_.size() + td);
            vision_.resize(vision_.size() + vd);
        }
        std::copy(r.text_vector.begin(), r.text_vector.end(), text_.begin() + static_cast<std::ptrdiff_t>(slot * td));
        std::copy(r.vision_vector.begin(), r.vision_vector.end(),
                  vision_.begin() + static_cast<std::ptrdiff_t>(slot * vd));
        manifest_.digests[r.sample.id] = r.digest;
    }
    manifest_.record_count = samples_.size();
}

CandidateSet VectorDatabase::topk(const QueryVectors& query, std::size_t k,
                                  const RetrievalSpec& spec) const {
    auto need = [&](const std::optional<std::vector<float>>& v, int dim, const char* what) {
        if (!v) throw SchemaError(std::string("retrieval mode ") + std::string(to_string(spec.mode)) +
                                  " needs a " + what + " query vector");
        if (static_cast<int>(v->size()) != dim)
            throw SchemaError(std::string(what) + " query vector has dimension " +
                              std::to_string(v->size()) + ", database expects " + std::to_string(dim));
    };
    auto score_pool = [&](const std::vector<std::size_t>& pool, bool text) {
        std::vector<Ranked> out;
        out.reserve(pool.size());
        for (auto i : pool)
            out.push_back({i, text ? cosine_score(text_vector(i), *query.text)
                                   : cosine_score(vision_vector(i), *query.vision)});
        return out;
    };
    std::vector<std::size_t> everything(samples_.size());
    std::iota(everything.begin(), everything.end(), std::size_t{0});

    std::vector<Ranked> top;
    switch (spec.mode) {
        case RetrievalMode::textual:
            need(query.text, manifest_.text_dim, "text");
            top = select_top(score_pool(everything, true), k, samples_);
            break;
        case RetrievalMode::visual:
            need(query.vision, manifest_.vision_dim, "vision");
            top = select_top(score_pool(everything, false), k, samples_);
            break;
        case RetrievalMode::cascaded_visual_then_text:
        case RetrievalMode::cascaded_text_then_visual: {
            need(query.text, manifest_.text_dim, "text");
            need(query.vision, manifest_.vision_dim, "vision");
            bool text_first = spec.mode == RetrievalMode::cascaded_text_then_visual;
            std::size_t factor = static_cast<std::size_t>(std::max(1, spec.overfetch));
            auto first = select_top(score_pool(everything, text_first), factor * k, samples_);
            std::vector<std::size_t> pool;
            pool.reserve(first.size());
            for (const auto& r : first) pool.push_back(r.index);
            top = select_top(score_pool(pool, !text_first), k, samples_);
            break;
        }
    }
    CandidateSet out;
    out.stage = CandidateStage::initial;
    for (const auto& r : top) out.items.push_back(Candidate{samples_[r.index], r.score, {}, {}, false});
    out.initial_count = out.items.size();
    return out;
}

void VectorDatabase::persist(const fs::path& dir) const {
    DbLock lock(dir);
    persist(dir, lock);
}

void VectorDatabase::persist(const fs::path& dir, const DbLock& held) const {
    if (fs::absolute(held.db_dir()).lexically_normal() != fs::absolute(dir).lexically_normal())
        throw LockError("lock held for " + held.db_dir().string() + ", not " + dir.string());

    std::string manifest = manifest_.to_json().dump(2) + "\n";
    std::string records;
    for (std::size_t i = 0; i < samples_.size(); ++i) {
        auto j = to_json(samples_[i]);
        j["digest"] = manifest_.digests.at(samples_[i].id).hex();
        records += j.dump();
        records += '\n';
    }
    std::string text = encode_f32(text_);
    std::string vision = encode_f32(vision_);
    std::string checksums = sha_of(manifest) + "  " + manifest_file + "\n" + sha_of(records) + "  " +
                            records_file + "\n" + sha_of(text) + "  " + text_file + "\n" +
                            sha_of(vision) + "  " + vision_file + "\n";

    fs::path target = fs::absolute(dir).lexically_normal();
    fs::path staging = target.string() + ".staging";
    fs::remove_all(staging);
    fs::create_directories(staging);
    write_file(staging / manifest_file, manifest);
    write_file(staging / records_file, records);
    write_file(staging / text_file, text);
    write_file(staging / vision_file, vision);
    write_file(staging / checksums_file, checksums);

    if (!fs::exists(target)) {
        fs::rename(staging, target);
        return;
    }
    if (::renameat2(AT_FDCWD, staging.c_str(), AT_FDCWD, target.c_str(), RENAME_EXCHANGE) == 0) {
        fs::remove_all(staging);
        return;
    }
    // Filesystems without RENAME_EXCHANGE: two renames, old snapshot kept
    // until the new one is in place.
    fs::path old = target.string() + ".old";
    fs::remove_all(old);
    fs::rename(target, old);
    fs::rename(staging, target);
    fs::remove_all(old);
}

bool VectorDatabase::exists(const fs::path& dir) {
    return fs::exists(dir / manifest_file) || fs::exists(fs::path(dir.string() + ".old") / manifest_file);
}

namespace {

// A snapshot file disappeared between listing and opening: a writer swapped
// in a newer snapshot and removed this one.
class SnapshotMoved : public IoError {
public:
    using IoError::IoError;
};

class Fd {
public:
    explicit Fd(int fd) : fd_(fd) {}
    ~Fd() {
        if (fd_ >= 0) ::close(fd_);
    }
    Fd(const Fd&) = delete;
    Fd& operator=(const Fd&) = delete;
    Fd(Fd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
    int get() const noexcept { return fd_; }

private:
    int fd_;
};

Fd open_in(int dirfd, const fs::path& dir, const char* name) {
    int fd = ::openat(dirfd, name, O_RDONLY | O_CLOEXEC);
    if (fd < 0) {
        if (errno == ENOENT) throw SnapshotMoved((dir / name).string(), "database file vanished");
        throw IoError((dir / name).string(), std::string("cannot read database file (") + std::strerror(errno) + ")");
    }
    return Fd(fd);
}

std::string read_all(const Fd& fd, const fs::path& path) {
    std::string out;
    char buf[1 << 16];
    while (true) {
        ssize_t n = ::read(fd.get(), buf, sizeof buf);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw IoError(path.string(), std::string("cannot read database file (") + std::strerror(errno) + ")");
        }
        if (n == 0) return out;
        out.append(buf, static_cast<std::size_t>(n));
    }
}

}  // namespace

VectorDatabase VectorDatabase::load(const fs::path& dir) {
    for (int attempt = 0;; ++attempt) {
        try {
            return load_snapshot(dir);
        } catch (const SnapshotMoved&) {
            if (attempt >= 50) throw;
        }
    }
}

VectorDatabase VectorDatabase::load_snapshot(const fs::path& dir_in) {
    fs::path dir = dir_in;
    if (!fs::exists(dir / manifest_file) && fs::exists(fs::path(dir.string() + ".old") / manifest_file))
        dir = dir.string() + ".old";
    if (!fs::exists(dir / manifest_file)) throw IoError(dir.string(), "no vector database at");

    // Every file is opened through one directory handle before any is read,
    // so all five come from the same snapshot even if a writer swaps it.
    Fd dirfd(::open(dir.c_str(), O_RDONLY | O_DIRECTORY | O_CLOEXEC));
    if (dirfd.get() < 0) throw SnapshotMoved(dir.string(), "database directory vanished");
    std::vector<Fd> fds;
    const char* names[] = {manifest_file, records_file, text_file, vision_file, checksums_file};
    for (const char* name : names) fds.push_back(open_in(dirfd.get(), dir, name));
    const std::string manifest_raw = read_all(fds[0], dir / manifest_file);
    const std::string records_raw = read_all(fds[1], dir / records_file);
    const std::string text_raw = read_all(fds[2], dir / text_file);
    const std::string vision_raw = read_all(fds[3], dir / vision_file);
    const std::string checksums_raw = read_all(fds[4], dir / checksums_file);

    DbManifest m;
    try {
        m = DbManifest::from_json(nlohmann::json::parse(manifest_raw));
    } catch (const nlohmann::json::exception& e) {
        throw IntegrityError(manifest_file, 0, std::string("unreadable manifest: ") + e.what());
    } catch (const FormatError& e) {
        throw IntegrityError(manifest_file, 0, e.what());
    }
    if (m.format_version != db_format_version)
        throw IntegrityError(manifest_file, 0, "unsupported format version " + std::to_string(m.format_version));
    if (m.text_dim <= 0 || m.vision_dim <= 0) throw IntegrityError(manifest_file, 0, "non-positive dimension");

    auto expect_size = [&](const std::string& data, int dim, const char* name) {
        std::size_t want = m.record_count * static_cast<std::size_t>(dim) * 4;
        if (data.size() != want)
            throw IntegrityError(name, std::min(data.size(), want),
                                 "expected " + std::to_string(want) + " bytes, found " + std::to_string(data.size()));
    };
    expect_size(text_raw, m.text_dim, text_file);
    expect_size(vision_raw, m.vision_dim, vision_file);

    std::map<std::string, std::string> sums;
    {
        std::istringstream in(checksums_raw);
        std::string line;
        while (std::getline(in, line)) {
            auto sep = line.find("  ");
            if (sep == std::string::npos) throw IntegrityError(checksums_file, 0, "malformed checksum line");
            sums[line.substr(sep + 2)] = line.substr(0, sep);
        }
    }
    for (auto [name, data] : {std::pair{manifest_file, &manifest_raw}, std::pair{records_file, &records_raw},
                              std::pair{text_file, &text_raw}, std::pair{vision_file, &vision_raw}}) {
        auto it = sums.find(name);
        if (it == sums.end()) throw IntegrityError(checksums_file, 0, std::string("no checksum for ") + name);
        if (it->second != sha_of(*data)) throw IntegrityError(name, 0, "checksum mismatch");
    }

    VectorDatabase db(m.text_backbone, m.vision_backbone, m.text_dim, m.vision_dim);
    std::size_t offset = 0;
    while (offset < records_raw.size()) {
        auto nl = records_raw.find('\n', offset);
        if (nl == std::string::npos) throw IntegrityError(records_file, offset, "unterminated record line");
        try {
            auto j = nlohmann::json::parse(records_raw.substr(offset, nl - offset));
            Digest d = Digest::from_hex(j.at("digest").get<std::string>());
            j.erase("digest");
            Sample s = sample_from_json(j);
            if (db.index_.contains(s.id)) throw IntegrityError(records_file, offset, "duplicate id " + s.id);
            db.index_.emplace(s.id, db.samples_.size());
            db.samples_.push_back(std::move(s));
            db.manifest_.digests.emplace(db.samples_.back().id, d);
        } catch (const nlohmann::json::exception& e) {
            throw IntegrityError(records_file, offset, std::string("bad record: ") + e.what());
        } catch (const FormatError& e) {
            throw IntegrityError(records_file, offset, std::string("bad record: ") + e.what());
        } catch (const SchemaError& e) {
            throw IntegrityError(records_file, offset, std::string("bad record: ") + e.what());
        }
        offset = nl + 1;
    }
    if (db.samples_.size() != m.record_count)
        throw IntegrityError(records_file, records_raw.size(),
                             "manifest declares " + std::to_string(m.record_count) + " records, found " +
                                 std::to_string(db.samples_.size()));
    if (db.manifest_.digests != m.digests)
        throw IntegrityError(manifest_file, 0, "manifest digests disagree with records");
    db.text_ = decode_f32(text_raw);
    db.vision_ = decode_f32(vision_raw);
    db.manifest_.record_count = m.record_count;
    return db;
}

bool VectorDatabase::operator==(const VectorDatabase& other) const {
    return manifest_ == other.manifest_ && samples_ == other.samples_ && text_ == other.text_ &&
           vision_ == other.vision_;
}

}  // namespace ctxnav
