#include "ctxnav/config.hpp"

#include <cctype>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "ctxnav/errors.hpp"

namespace ctxnav {

namespace fs = std::filesystem;

namespace {

std::string_view trim(std::string_view s) {
    auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r'; };
    while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
    return s;
}

class ValueParser {
public:
    ValueParser(std::string_view text, std::size_t line) : text_(text), line_(line) {}

    ConfigValue parse() {
        skip_space();
        ConfigValue v = value();
        skip_space();
        if (pos_ < text_.size() && text_[pos_] == '#') pos_ = text_.size();
        if (pos_ != text_.size()) fail("trailing characters after value");
        return v;
    }

private:
    [[noreturn]] void fail(const std::string& what) const {
        throw ConfigError("config line " + std::to_string(line_) + ": " + what);
    }

    void skip_space() {
        while (pos_ < text_.size() && (text_[pos_] == ' ' || text_[pos_] == '\t')) ++pos_;
    }

    ConfigValue value() {
        if (pos_ >= text_.size()) fail("missing value");
        char c = text_[pos_];
        if (c == '"') return string();
        if (c == '[') return array();
        if (text_.substr(pos_).starts_with("true")) {
            pos_ += 4;
            return true;
        }
        if (text_.substr(pos_).starts_with("false")) {
            pos_ += 5;
            return false;
        }
        return number();
    }

    std::string string() {
        ++pos_;
        std::string out;
        while (pos_ < text_.size()) {
            char c = text_[pos_++];
            if (c == '"') return out;
            if (c != '\\') {
                out += c;
                continue;
            }
            if (pos_ >= text_.size()) break;
            switch (char e = text_[pos_++]) {
                case '"': out += '"'; break;
                case '\\': out += '\\'; break;
                case 'n': out += '\n'; break;
                case 't': out += '\t'; break;
                default: fail(std::string("unsupported escape \\") + e);
            }
        }
        fail("unterminated string");
    }

    std::vector<std::string> array() {
        ++pos_;
        std::vector<std::string> out;
        skip_space();
        if (pos_ < text_.size() && text_[pos_] == ']') {
            ++pos_;
            return out;
        }
        while (true) {
            skip_space();
            if (pos_ >= text_.size() || text_[pos_] != '"') fail("arrays may hold strings only");
            out.push_back(string());
            skip_space();
            if (pos_ < text_.size() && text_[pos_] == ',') {
                ++pos_;
                skip_space();
                if (pos_ < text_.size() && text_[pos_] == ']') {
                    ++pos_;
                    return out;
                }
                continue;
            }
            if (pos_ < text_.size() && text_[pos_] == ']') {
                ++pos_;
                return out;
            }
            fail("expected ',' or ']' in array");
        }
    }

    ConfigValue number() {
        std::size_t start = pos_;
        while (pos_ < text_.size() && !std::isspace(static_cast<unsigned char>(text_[pos_])) &&
               text_[pos_] != '#')
            ++pos_;
        std::string token;
        for (char c : text_.substr(start, pos_ - start))
            if (c != '_') token += c;
        if (token.empty()) fail("missing value");
        std::int64_t i = 0;
        auto [p, ec] = std::from_chars(token.data(), token.data() + token.size(), i);
        if (ec == std::errc() && p == token.data() + token.size()) return i;
        char* end = nullptr;
        double d = std::strtod(token.c_str(), &end);
        if (end == token.c_str() + token.size()) return d;
        fail("cannot parse value '" + token + "'");
    }

    std::string_view text_;
    std::size_t line_;
    std::size_t pos_ = 0;
};

const char* type_name(const ConfigValue& v) {
    switch (v.index()) {
        case 0: return "boolean";
        case 1: return "integer";
        case 2: return "float";
        case 3: return "string";
        default: return "array";
    }
}

[[noreturn]] void mistyped(const std::string& key, const char* want, const ConfigValue& v) {
    throw ConfigError("config key '" + key + "' expects " + want + ", got " + type_name(v));
}

std::string as_string(const std::string& key, const ConfigValue& v) {
    if (auto s = std::get_if<std::string>(&v)) return *s;
    mistyped(key, "a string", v);
}

std::int64_t as_int(const std::string& key, const ConfigValue& v) {
    if (auto i = std::get_if<std::int64_t>(&v)) return *i;
    mistyped(key, "an integer", v);
}

double as_double(const std::string& key, const ConfigValue& v) {
    if (auto d = std::get_if<double>(&v)) return *d;
    if (auto i = std::get_if<std::int64_t>(&v)) return static_cast<double>(*i);
    mistyped(key, "a number", v);
}

bool as_bool(const std::string& key, const ConfigValue& v) {
    if (auto b = std::get_if<bool>(&v)) return *b;
    mistyped(key, "a boolean", v);
}

std::vector<std::string> as_list(const std::string& key, const ConfigValue& v) {
    if (auto l = std::get_if<std::vector<std::string>>(&v)) return *l;
    mistyped(key, "an array of strings", v);
}

fs::path as_path(const std::string& key, const ConfigValue& v, const fs::path& base) {
    fs::path p = as_string(key, v);
    if (p.empty() || p.is_absolute()) return p;
    return (base.empty() ? fs::current_path() : base) / p;
}

int as_positive(const std::string& key, const ConfigValue& v, int min) {
    auto i = as_int(key, v);
    if (i < min) throw ConfigError("config key '" + key + "' must be at least " + std::to_string(min));
    return static_cast<int>(i);
}

using Setter = std::function<void(Config&, const std::string&, const ConfigValue&, const fs::path&)>;

void add_role(std::map<std::string, Setter>& t, const std::string& section,
              RoleSettings Config::*role) {
    t[section + ".backend"] = [role](Config& c, const std::string& k, const ConfigValue& v, const fs::path&) {
        auto b = as_string(k, v);
        if (b != "oracle" && b != "http") throw ConfigError("config key '" + k + "' must be oracle or http");
        (c.*role).backend = b;
    };
    t[section + ".base_url"] = [role](Config& c, const std::string& k, const ConfigValue& v, const fs::path&) {
        (c.*role).endpoint.base_url = as_string(k, v);
    };
    t[section + ".model"] = [role](Config& c, const std::string& k, const ConfigValue& v, const fs::path&) {
        (c.*role).endpoint.model_name = as_string(k, v);
    };
    t[section + ".auth_token_env"] = [role](Config& c, const std::string& k, const ConfigValue& v,
                                            const fs::path&) {
        (c.*role).endpoint.auth_token_env_var = as_string(k, v);
    };
    t[section + ".timeout_ms"] = [role](Config& c, const std::string& k, const ConfigValue& v, const fs::path&) {
        (c.*role).endpoint.timeout_ms = as_positive(k, v, 1);
    };
    t[section + ".max_retries"] = [role](Config& c, const std::string& k, const ConfigValue& v, const fs::path&) {
        (c.*role).endpoint.max_retries = as_positive(k, v, 0);
    };
    t[section + ".max_concurrency"] = [role](Config& c, const std::string& k, const ConfigValue& v,
                                             const fs::path&) {
        (c.*role).endpoint.max_concurrency = as_positive(k, v, 1);
    };
    t[section + ".pass_image_paths"] = [role](Config& c, const std::string& k, const ConfigValue& v,
                                              const fs::path&) {
        (c.*role).endpoint.pass_image_paths = as_bool(k, v);
    };
    t[section + ".oracle_facts"] = [role](Config& c, const std::string& k, const ConfigValue& v,
                                          const fs::path& base) { (c.*role).oracle_facts = as_path(k, v, base); };
    t[section + ".oracle_seed"] = [role](Config& c, const std::string& k, const ConfigValue& v, const fs::path&) {
        (c.*role).oracle_seed = static_cast<std::uint64_t>(as_positive(k, v, 0));
    };
    t[section + ".rule_set"] = [role](Config& c, const std::string& k, const ConfigValue& v, const fs::path&) {
        (c.*role).rule_set = as_string(k, v);
    };
}

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = [] {
        std::map<std::string, Setter> t;
        t["corpus.path"] = [](Config& c, const std::string& k, const ConfigValue& v, const fs::path& b) {
            c.corpus_path = as_path(k, v, b);
        };
        t["db.dir"] = [](Config& c, const std::string& k, const ConfigValue& v, const fs::path& b) {
            c.db_dir = as_path(k, v, b);
        };
        add_role(t, "policy", &Config::policy);
        add_role(t, "downstream", &Config::downstream);
        t["planner.mode"] = [](Config& c, const std::string& k, const ConfigValue& v, const fs::path&) {
            auto m = plan_mode_from_string(as_string(k, v));
            if (!m) throw ConfigError("config key '" + k + "' must be rule or model");
            c.planner_mode = *m;
        };
        t["planner.max_steps"] = [](Config& c, const std::string& k, const ConfigValue& v, const fs::path&) {
            c.max_steps = as_positive(k, v, 1);
        };
        t["planner.persist_memory"] = [](Config& c, const std::string& k, const ConfigValue& v, const fs::path&) {
            c.persist_memory = as_bool(k, v);
        };
        t["planner.memory_path"] = [](Config& c, const std::string& k, const ConfigValue& v, const fs::path& b) {
            c.memory_path = as_path(k, v, b);
        };
        t["retrieval.k"] = [](Config& c, const std::string& k, const ConfigValue& v, const fs::path&) {
            c.k = static_cast<std::size_t>(as_positive(k, v, 0));
        };
        t["retrieval.mode"] = [](Config& c, const std::string& k, const ConfigValue& v, const fs::path&) {
            auto m = retrieval_mode_from_string(as_string(k, v));
            if (!m) throw ConfigError("config key '" + k + "' names an unknown retrieval mode");
            c.retrieval_mode = *m;
        };
        t["retrieval.overfetch"] = [](Config& c, const std::string& k, const ConfigValue& v, const fs::path&) {
            c.cascade_overfetch = as_positive(k, v, 1);
        };
        t["retrieval.agentic_overfetch"] = [](Config& c, const std::string& k, const ConfigValue& v,
                                              const fs::path&) {
            double d = as_double(k, v);
            if (d < 1.0) throw ConfigError("config key '" + k + "' must be at least 1");
            c.agentic_overfetch = d;
        };
        t["icl.placement"] = [](Config& c, const std::string& k, const ConfigValue& v, const fs::path&) {
            auto p = image_placement_from_string(as_string(k, v));
            if (!p) throw ConfigError("config key '" + k + "' must be upfront or interleaved");
            c.placement = *p;
        };
        t["embed.backend"] = [](Config& c, const std::string& k, const ConfigValue& v, const fs::path&) {
            auto b = as_string(k, v);
            if (b != "mock" && b != "http") throw ConfigError("config key '" + k + "' must be mock or http");
            c.embed_backend = b;
        };
        t["embed.dim"] = [](Config& c, const std::string& k, const ConfigValue& v, const fs::path&) {
            c.mock.dim = as_positive(k, v, 1);
        };
        t["embed.seed"] = [](Config& c, const std::string& k, const ConfigValue& v, const fs::path&) {
            c.mock.seed = static_cast<std::uint64_t>(as_positive(k, v, 0));
        };
        t["embed.anchors"] = [](Config& c, const std::string& k, const ConfigValue& v, const fs::path&) {
            c.mock.anchors = as_list(k, v);
        };
        t["embed.residual_norm"] = [](Config& c, const std::string& k, const ConfigValue& v, const fs::path&) {
            c.mock.residual_norm = as_double(k, v);
        };
        t["embed.base_url"] = [](Config& c, const std::string& k, const ConfigValue& v, const fs::path&) {
            c.embed_endpoint.base_url = as_string(k, v);
        };
        t["embed.auth_token_env"] = [](Config& c, const std::string& k, const ConfigValue& v, const fs::path&) {
            c.embed_endpoint.auth_token_env_var = as_string(k, v);
        };
        t["embed.timeout_ms"] = [](Config& c, const std::string& k, const ConfigValue& v, const fs::path&) {
            c.embed_endpoint.timeout_ms = as_positive(k, v, 1);
        };
        t["embed.preference"] = [](Config& c, const std::string& k, const ConfigValue& v, const fs::path&) {
            auto p = preference_from_string(as_string(k, v));
            if (!p) throw ConfigError("config key '" + k + "' must be conservative, balanced or performance");
            c.preference.level = *p;
        };
        t["embed.model_matching"] = [](Config& c, const std::string& k, const ConfigValue& v, const fs::path&) {
            c.model_matching = as_bool(k, v);
        };
        t["embed.max_concurrency"] = [](Config& c, const std::string& k, const ConfigValue& v, const fs::path&) {
            c.max_concurrency = as_positive(k, v, 1);
        };
        t["hardware.gpu_gb"] = [](Config& c, const std::string& k, const ConfigValue& v, const fs::path&) {
            c.gpu_gb = as_double(k, v);
        };
        t["hardware.disk_gb"] = [](Config& c, const std::string& k, const ConfigValue& v, const fs::path&) {
            c.disk_gb = as_double(k, v);
        };
        t["prompts.path"] = [](Config& c, const std::string& k, const ConfigValue& v, const fs::path& b) {
            c.prompts = as_path(k, v, b);
        };
        t["bench.spec"] = [](Config& c, const std::string& k, const ConfigValue& v, const fs::path& b) {
            c.bench_spec = as_path(k, v, b);
        };
        return t;
    }();
    return table;
}

}  // namespace

std::map<std::string, ConfigValue> parse_config_text(std::string_view text) {
    std::map<std::string, ConfigValue> out;
    std::string section;
    std::size_t line_no = 0;
    std::istringstream in{std::string(text)};
    std::string raw;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string_view line = trim(raw);
        if (line.empty() || line.front() == '#') continue;
        if (line.front() == '[') {
            auto close = line.find(']');
            if (close == std::string_view::npos)
                throw ConfigError("config line " + std::to_string(line_no) + ": unterminated section header");
            auto rest = trim(line.substr(close + 1));
            if (!rest.empty() && rest.front() != '#')
                throw ConfigError("config line " + std::to_string(line_no) + ": text after section header");
            section = std::string(trim(line.substr(1, close - 1)));
            if (section.empty())
                throw ConfigError("config line " + std::to_string(line_no) + ": empty section name");
            continue;
        }
        auto eq = line.find('=');
        if (eq == std::string_view::npos)
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
        std::string key(trim(line.substr(0, eq)));
        if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
        std::string full = section.empty() ? key : section + "." + key;
        if (out.contains(full))
            throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key '" + full + "'");
        out[full] = ValueParser(line.substr(eq + 1), line_no).parse();
    }
    return out;
}

void Config::set(const std::string& key, const ConfigValue& value, const fs::path& base_dir) {
    auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError("unknown config key '" + key + "'");
    it->second(*this, key, value, base_dir);
}

const std::vector<std::string>& Config::known_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> k;
        for (const auto& [name, _] : setters()) k.push_back(name);
        return k;
    }();
    return keys;
}

std::string Config::env_name(std::string_view key) {
    std::string out = "CTXNAV_";
    for (char c : key) out += c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return out;
}

Config Config::from_values(const std::map<std::string, ConfigValue>& values, const fs::path& base_dir) {
    Config c;
    for (const auto& [key, value] : values) c.set(key, value, base_dir);
    return c;
}

Config Config::load(const fs::path& path) {
    Config c;
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) throw IoError(path.string(), "cannot open config file");
        std::ostringstream ss;
        ss << in.rdbuf();
        fs::path base = fs::absolute(path).parent_path();
        c = from_values(parse_config_text(ss.str()), base);
    }
    for (const auto& key : known_keys()) {
        const char* env = std::getenv(env_name(key).c_str());
        if (!env) continue;
        ConfigValue v;
        try {
            v = ValueParser(env, 0).parse();
        } catch (const ConfigError&) {
            v = std::string(env);
        }
        // A bare word in the environment is a string even if it parses as
        // something else the key does not accept.
        try {
            c.set(key, v, fs::current_path());
        } catch (const ConfigError&) {
            c.set(key, std::string(env), fs::current_path());
        }
    }
    return c;
}

}  // namespace ctxnav
