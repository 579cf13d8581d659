#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <unistd.h>

#include "ctxnav/core.hpp"
#include "ctxnav/policy.hpp"

namespace ctxnav::test {

class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("ctxnav_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

// splitmix64; independent of the generators inside the library.
struct Rng {
    explicit Rng(std::uint64_t seed) : state(seed) {}
    std::uint64_t next() {
        std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }
    std::uint64_t below(std::uint64_t n) { return next() % n; }
    double unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
    double gauss() {
        double u = std::max(unit(), 1e-300), v = unit();
        return std::sqrt(-2.0 * std::log(u)) * std::cos(6.283185307179586 * v);
    }
    std::string word(std::size_t len) {
        std::string s;
        for (std::size_t i = 0; i < len; ++i) s += static_cast<char>('a' + below(26));
        return s;
    }
    std::uint64_t state;
};

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& data) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << data;
}

inline Sample make_sample(std::string id, std::string question, std::string answer, std::string image) {
    Sample s;
    s.id = std::move(id);
    s.question = std::move(question);
    s.answer = std::move(answer);
    s.image.uri = std::move(image);
    return s;
}

// Answers every request through a function; counts calls.
class ScriptedTransport final : public Transport {
public:
    using Fn = std::function<std::string(const ChatRequest&)>;
    explicit ScriptedTransport(Fn fn) : fn_(std::move(fn)) {}
    ChatResponse complete(const ChatRequest& request) override {
        ++calls;
        return {fn_(request), 1};
    }
    std::atomic<int> calls{0};

private:
    Fn fn_;
};

inline std::shared_ptr<ModelPolicy> scripted_policy(ScriptedTransport::Fn fn, int concurrency = 4) {
    return std::make_shared<ModelPolicy>(std::make_shared<ScriptedTransport>(std::move(fn)), concurrency);
}

// The grammar edges, written out independently of the library tables.
inline const std::vector<std::pair<std::string, std::string>>& reference_edges() {
    static const std::vector<std::pair<std::string, std::string>> edges = {
        {"start", "get_query"},
        {"get_query", "get_hardware_status"},
        {"get_query", "check_updating"},
        {"get_query", "load_vector_database"},
        {"check_updating", "get_hardware_status"},
        {"check_updating", "multimodal_embedding"},
        {"check_updating", "load_vector_database"},
        {"get_hardware_status", "matching_embedding_models"},
        {"matching_embedding_models", "multimodal_embedding"},
        {"multimodal_embedding", "load_vector_database"},
        {"load_vector_database", "textual_similarity_retrieval"},
        {"load_vector_database", "visual_similarity_retrieval"},
        {"textual_similarity_retrieval", "visual_similarity_retrieval"},
        {"textual_similarity_retrieval", "agentic_retrieval"},
        {"textual_similarity_retrieval", "structural_alignment"},
        {"visual_similarity_retrieval", "textual_similarity_retrieval"},
        {"visual_similarity_retrieval", "agentic_retrieval"},
        {"visual_similarity_retrieval", "structural_alignment"},
        {"agentic_retrieval", "structural_alignment"},
        {"textual_similarity_retrieval", "end"},
        {"visual_similarity_retrieval", "end"},
        {"agentic_retrieval", "end"},
        {"structural_alignment", "end"},
    };
    return edges;
}

using NamePath = std::vector<std::string>;

// Plain recursive DFS over simple paths, filtered and sorted afterwards.
inline std::vector<NamePath> oracle_paths(const std::vector<std::string>& required = {}) {
    std::vector<NamePath> out;
    NamePath path{"start"};
    std::function<void()> dfs = [&] {
        if (path.back() == "end") {
            out.push_back(path);
            return;
        }
        for (const auto& [from, to] : reference_edges()) {
            if (from != path.back() || std::find(path.begin(), path.end(), to) != path.end()) continue;
            path.push_back(to);
            dfs();
            path.pop_back();
        }
    };
    dfs();
    std::erase_if(out, [&](const NamePath& p) {
        return std::any_of(required.begin(), required.end(),
                           [&](const std::string& r) { return std::find(p.begin(), p.end(), r) == p.end(); });
    });
    std::sort(out.begin(), out.end());
    return out;
}

inline bool oracle_is_path(const NamePath& seq) {
    if (seq.empty() || seq.front() != "start" || seq.back() != "end") return false;
    for (std::size_t i = 0; i < seq.size(); ++i)
        for (std::size_t j = i + 1; j < seq.size(); ++j)
            if (seq[i] == seq[j]) return false;
    for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
        auto e = std::make_pair(seq[i], seq[i + 1]);
        if (std::find(reference_edges().begin(), reference_edges().end(), e) == reference_edges().end())
            return false;
    }
    return true;
}

}  // namespace ctxnav::test
