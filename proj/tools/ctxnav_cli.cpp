#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ctxnav/bench.hpp"
#include "ctxnav/config.hpp"
#include "ctxnav/core.hpp"
#include "ctxnav/embed.hpp"
#include "ctxnav/errors.hpp"
#include "ctxnav/ogg.hpp"
#include "ctxnav/orchestrator.hpp"
#include "ctxnav/planner.hpp"
#include "ctxnav/policy.hpp"
#include "ctxnav/vecdb.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ctxnav;

namespace {

struct Options {
    fs::path config_path;
    bool json_output = false;
    std::optional<fs::path> corpus;
    std::optional<fs::path> db;
};

Config load_config(const Options& o) {
    Config cfg = Config::load(o.config_path);
    const auto cwd = fs::current_path();
    if (o.corpus) cfg.set("corpus.path", o.corpus->string(), cwd);
    if (o.db) cfg.set("db.dir", o.db->string(), cwd);
    return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(path.string(), "cannot write");
    out << text;
    if (!out) throw IoError(path.string(), "write failed");
}

json read_json(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(path.string(), "cannot open");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void emit(const Options& o, const json& j, const std::string& plain) {
    if (o.json_output)
        std::cout << j.dump(2) << "\n";
    else
        std::cout << plain;
}

fs::path require_corpus(const Config& cfg) {
    if (cfg.corpus_path.empty()) throw ConfigError("corpus.path is not set");
    return cfg.corpus_path;
}

fs::path require_db(const Config& cfg) {
    if (cfg.db_dir.empty()) throw ConfigError("db.dir is not set");
    return cfg.db_dir;
}

HardwareStatus probe_hardware(const Config& cfg) {
    HardwareStatus hw;
    hw.free_gpu_gb = cfg.gpu_gb;
    if (cfg.disk_gb) {
        hw.free_disk_gb = *cfg.disk_gb;
    } else {
        fs::path where = cfg.db_dir.empty() ? fs::current_path() : cfg.db_dir;
        while (!where.empty() && !fs::exists(where)) where = where.parent_path();
        if (where.empty()) where = fs::current_path();
        hw.free_disk_gb = static_cast<double>(fs::space(where).available) / (1024.0 * 1024.0 * 1024.0);
    }
    return hw;
}

ModelSpec zoo_model(const std::string& id, ModelKind kind) {
    const auto& zoo = ModelZoo::stock();
    for (const auto& m : kind == ModelKind::text ? zoo.text_models : zoo.vision_models)
        if (m.model_id == id) return m;
    ModelSpec m;
    m.model_id = id;
    m.kind = kind;
    return m;
}

Backbones manifest_backbones(const DbManifest& m) {
    return {zoo_model(m.text_backbone, ModelKind::text), zoo_model(m.vision_backbone, ModelKind::vision)};
}

std::unique_ptr<EmbeddingBackend> make_embedder(const Config& cfg) {
    if (cfg.embed_backend == "http") return std::make_unique<HttpEmbeddingBackend>(cfg.embed_endpoint);
    return std::make_unique<MockEmbeddingBackend>(cfg.mock);
}

std::unique_ptr<ModelPolicy> make_policy(const RoleSettings& role) {
    std::shared_ptr<Transport> transport;
    if (role.backend == "http") {
        transport = std::make_shared<HttpTransport>(role.endpoint);
    } else {
        auto truth = role.oracle_facts.empty()
                         ? std::make_shared<const GroundTruth>()
                         : std::make_shared<const GroundTruth>(GroundTruth::load(role.oracle_facts));
        OracleConfig oc;
        oc.seed = role.oracle_seed;
        oc.rule_set = role.rule_set;
        transport = std::make_shared<OracleTransport>(std::move(truth), oc);
    }
    return std::make_unique<ModelPolicy>(std::move(transport), role.endpoint.max_concurrency);
}

EmbedOptions embed_options(const Config& cfg) {
    EmbedOptions e;
    e.max_concurrency = cfg.max_concurrency;
    return e;
}

PipelineConfig pipeline_config(const Config& cfg) {
    PipelineConfig p;
    p.k = cfg.k;
    p.cascade_overfetch = cfg.cascade_overfetch;
    p.agentic_overfetch = cfg.agentic_overfetch;
    p.placement = cfg.placement;
    p.plan_mode = cfg.planner_mode;
    p.max_steps = cfg.max_steps;
    p.preference = cfg.preference;
    p.embed = embed_options(cfg);
    p.contextualize.max_concurrency = cfg.policy.endpoint.max_concurrency;
    return p;
}

Backbones choose_backbones(const Config& cfg, const DbManifest* existing) {
    const HardwareStatus hw = probe_hardware(cfg);
    if (cfg.model_matching) {
        auto policy = make_policy(cfg.policy);
        const PromptTemplates templates =
            cfg.prompts.empty() ? PromptTemplates::defaults() : PromptTemplates::load(cfg.prompts);
        return match_embedding_models(ModelZoo::stock(), hw, cfg.preference, existing, *policy, templates);
    }
    return match_embedding_models(ModelZoo::stock(), hw, cfg.preference, existing);
}

// --- ingest / sync -------------------------------------------------------------

int cmd_ingest(const Options& o) {
    const Config cfg = load_config(o);
    const Corpus corpus = read_corpus_jsonl(require_corpus(cfg));
    const fs::path dir = require_db(cfg);
    const Backbones bb = choose_backbones(cfg, nullptr);
    auto embedder = make_embedder(cfg);
    auto db = build_database(corpus, *embedder, bb, embed_options(cfg));
    DbLock lock(dir);
    db->persist(dir, lock);
    json j = {{"db", dir.string()},
              {"records", db->size()},
              {"embedded", corpus.size()},
              {"text_backbone", bb.text.model_id},
              {"vision_backbone", bb.vision.model_id}};
    emit(o, j,
         "ingested " + std::to_string(db->size()) + " records into " + dir.string() + " (" +
             bb.text.model_id + ", " + bb.vision.model_id + ")\n");
    return 0;
}

int cmd_sync(const Options& o) {
    const Config cfg = load_config(o);
    const Corpus corpus = read_corpus_jsonl(require_corpus(cfg));
    const fs::path dir = require_db(cfg);
    if (!VectorDatabase::exists(dir)) return cmd_ingest(o);

    DbLock lock(dir);
    VectorDatabase db = VectorDatabase::load(dir);
    const auto delta = detect_delta(corpus, db.manifest());
    std::size_t stale = 0;
    for (const auto& [id, digest] : db.manifest().digests)
        if (!corpus.find(id)) ++stale;
    if (!delta.empty()) {
        const Backbones bb = manifest_backbones(db.manifest());
        auto embedder = make_embedder(cfg);
        auto set = embed_samples(delta, *embedder, bb, embed_options(cfg));
        db.upsert(make_records(delta, set));
        db.persist(dir, lock);
    }
    json j = {{"db", dir.string()},
              {"records", db.size()},
              {"embedded", delta.size()},
              {"stale", stale}};
    std::string plain = "embedded " + std::to_string(delta.size()) + " samples; " +
                        std::to_string(db.size()) + " records";
    if (stale) plain += "; " + std::to_string(stale) + " records no longer in the corpus (ingest to drop them)";
    emit(o, j, plain + "\n");
    return 0;
}

// --- retrieve ------------------------------------------------------------------

struct RetrieveArgs {
    fs::path query_file;
    std::string mode;
    std::optional<std::size_t> k;
};

int cmd_retrieve(const Options& o, const RetrieveArgs& a) {
    const Config cfg = load_config(o);
    const fs::path dir = require_db(cfg);
    if (!VectorDatabase::exists(dir)) throw IoError(dir.string(), "no ingested database");
    const VectorDatabase db = VectorDatabase::load(dir);
    const Query q = read_query_file(a.query_file);
    RetrievalSpec spec;
    spec.mode = cfg.retrieval_mode;
    if (!a.mode.empty()) {
        auto m = retrieval_mode_from_string(a.mode);
        if (!m) throw ConfigError("unknown retrieval mode '" + a.mode + "'");
        spec.mode = *m;
    }
    spec.overfetch = cfg.cascade_overfetch;
    const std::size_t k = a.k.value_or(cfg.k);
    auto embedder = make_embedder(cfg);
    const CandidateSet set = db.topk(embed_query(q, *embedder, manifest_backbones(db.manifest())), k, spec);

    json items = json::array();
    std::ostringstream plain;
    for (const auto& c : set.items) {
        items.push_back({{"id", c.sample.id},
                         {"score", c.score},
                         {"question", c.sample.question},
                         {"answer", c.sample.answer}});
        char score[32];
        std::snprintf(score, sizeof score, "%.6f", c.score);
        plain << c.sample.id << "\t" << score << "\t" << c.sample.question << "\n";
    }
    emit(o, {{"mode", to_string(spec.mode)}, {"k", k}, {"candidates", items}}, plain.str());
    return 0;
}

// --- run -----------------------------------------------------------------------

struct RunArgs {
    fs::path query_file;
    fs::path trace;
    std::optional<int> max_steps;
    std::string plan_mode;
};

json memory_to_json(const Memory& m) {
    json entries = json::array();
    for (const auto& e : m.entries())
        entries.push_back({{"chain", format_chain(e.chain)}, {"feedback", to_json(e.feedback)}});
    return {{"entries", entries}};
}

Memory memory_from_json(const json& j) {
    Memory m;
    try {
        for (const auto& e : j.at("entries"))
            m.append(parse_chain(e.at("chain").get<std::string>()), feedback_from_json(e.at("feedback")));
    } catch (const json::exception& e) {
        throw FormatError(std::string("memory file: ") + e.what());
    }
    return m;
}

int cmd_run(const Options& o, const RunArgs& a) {
    Config cfg = load_config(o);
    const auto cwd = fs::current_path();
    if (a.max_steps) cfg.set("planner.max_steps", static_cast<std::int64_t>(*a.max_steps), cwd);
    if (!a.plan_mode.empty()) cfg.set("planner.mode", a.plan_mode, cwd);

    const fs::path dir = require_db(cfg);
    if (!VectorDatabase::exists(dir))
        throw IoError(dir.string(), "no ingested database (run `ctxnav ingest` first)");
    const Corpus corpus = read_corpus_jsonl(require_corpus(cfg));
    const Query query = read_query_file(a.query_file);

    auto embedder = make_embedder(cfg);
    auto policy = make_policy(cfg.policy);
    auto downstream = make_policy(cfg.downstream);
    const PromptTemplates templates =
        cfg.prompts.empty() ? PromptTemplates::defaults() : PromptTemplates::load(cfg.prompts);

    Services services;
    services.embedder = embedder.get();
    services.policy = policy.get();
    services.downstream = downstream.get();
    services.templates = &templates;
    services.model_matching = cfg.model_matching;
    services.probe_hardware = [&cfg] { return probe_hardware(cfg); };

    EpisodeState state;
    state.corpus = &corpus;
    state.db_dir = dir;
    const bool persist = cfg.persist_memory && !cfg.memory_path.empty();
    if (persist && fs::exists(cfg.memory_path)) state.memory = memory_from_json(read_json(cfg.memory_path));

    const EpisodeReport report = run_episode(query, std::move(state), services, pipeline_config(cfg));

    const json trace = report.to_json();
    if (!a.trace.empty()) write_text(a.trace, trace.dump(2) + "\n");
    if (persist) write_text(cfg.memory_path, memory_to_json(report.memory).dump(2) + "\n");

    std::ostringstream plain;
    for (const auto& s : report.steps) {
        plain << "step " << s.timestep << ": " << format_chain(s.chain) << " -> "
              << (s.feedback.judgement == Judgement::yes ? "Judgement-Yes" : "Judgement-No");
        if (s.error) plain << " (error: " << *s.error << ")";
        plain << "\n";
    }
    plain << "answer: " << report.final_answer << "\n";
    if (!report.converged) plain << "did not converge within " << cfg.max_steps << " steps\n";
    emit(o, trace, plain.str());
    return 0;
}

// --- bench ---------------------------------------------------------------------

struct BenchArgs {
    fs::path spec;
    std::vector<std::string> ablate;
    fs::path out;
    fs::path trace;
    std::vector<std::size_t> shots;
    fs::path shots_csv;
    fs::path alignment_csv;
    fs::path gain_cdf_csv;
    std::size_t alignment_queries = 50;
    std::size_t alignment_candidates = 8;
    fs::path export_dir;
    int workers = 4;
    std::optional<std::size_t> k;
    std::string plan_mode;
    std::string oracle_rules = "bench";
    std::uint64_t oracle_seed = 0;
};

OperationSet parse_op_list(const std::vector<std::string>& names) {
    OperationSet set;
    for (const auto& n : names) {
        auto op = operation_from_string(n);
        if (!op) throw UnknownOperationError(n);
        set.set(index_of(*op));
    }
    return set;
}

void export_corpus(const SyntheticSpec& spec, const fs::path& dir) {
    SyntheticBench bench = generate_corpus(spec);
    fs::create_directories(dir);
    write_corpus_jsonl(bench.corpus, dir / "corpus.jsonl");
    std::string lines;
    for (const auto& q : bench.queries) lines += to_json(q).dump() + "\n";
    write_text(dir / "queries.jsonl", lines);
    if (!bench.queries.empty()) write_text(dir / "query.json", to_json(bench.queries.front()).dump(2) + "\n");
    write_text(dir / "facts.json", bench.truth.to_json().dump() + "\n");

    const HardwareStatus hw = bench_hardware();
    std::ostringstream toml;
    toml << "[corpus]\npath = \"corpus.jsonl\"\n\n"
         << "[db]\ndir = \"db\"\n\n"
         << "[policy]\nbackend = \"oracle\"\noracle_facts = \"facts.json\"\n\n"
         << "[downstream]\nbackend = \"oracle\"\noracle_facts = \"facts.json\"\n\n"
         << "[embed]\nbackend = \"mock\"\ndim = " << bench.embedding.dim << "\nseed = " << bench.embedding.seed
         << "\nanchors = [";
    for (std::size_t i = 0; i < bench.embedding.anchors.size(); ++i)
        toml << (i ? ", " : "") << "\"" << bench.embedding.anchors[i] << "\"";
    toml << "]\n\n[hardware]\ngpu_gb = " << hw.free_gpu_gb << "\ndisk_gb = " << hw.free_disk_gb << "\n";
    write_text(dir / "ctx.toml", toml.str());
}

int cmd_bench(const Options& o, const BenchArgs& a) {
    const Config cfg = load_config(o);
    fs::path spec_path = a.spec.empty() ? cfg.bench_spec : a.spec;
    if (spec_path.empty()) throw ConfigError("no synthetic spec given (--spec or bench.spec)");
    const SyntheticSpec spec = SyntheticSpec::load(spec_path);

    if (!a.export_dir.empty()) {
        export_corpus(spec, a.export_dir);
        emit(o, {{"exported", a.export_dir.string()}}, "exported corpus to " + a.export_dir.string() + "\n");
        return 0;
    }

    BenchConfig bc;
    bc.pipeline = pipeline_config(cfg);
    if (a.k) bc.pipeline.k = *a.k;
    if (!a.plan_mode.empty()) {
        auto m = plan_mode_from_string(a.plan_mode);
        if (!m) throw ConfigError("unknown planner mode '" + a.plan_mode + "'");
        bc.pipeline.plan_mode = *m;
    }
    bc.ablate = parse_op_list(a.ablate);
    bc.workers = a.workers;
    bc.oracle.rule_set = a.oracle_rules;
    bc.oracle.seed = a.oracle_seed;

    const BenchRun run = run_benchmark(spec, bc);
    json j = run.metrics.to_json();
    if (!a.trace.empty()) write_text(a.trace, run.log.to_json().dump() + "\n");

    if (!a.shots.empty()) {
        const auto points = shot_sweep(spec, bc, a.shots);
        json sweep = json::array();
        for (const auto& p : points) sweep.push_back({{"shots", p.shots}, {"metrics", p.metrics.to_json()}});
        j["shot_sweep"] = sweep;
        if (!a.shots_csv.empty()) write_text(a.shots_csv, shot_sweep_csv(points));
    }
    if (!a.alignment_csv.empty() || !a.gain_cdf_csv.empty()) {
        const auto analysis = run_alignment_analysis(spec, bc, a.alignment_queries, a.alignment_candidates);
        j["alignment"] = {{"pairs", analysis.pairs.size()},
                          {"fraction_above_diagonal", analysis.fraction_above_diagonal}};
        if (!a.alignment_csv.empty()) write_text(a.alignment_csv, alignment_csv(analysis));
        if (!a.gain_cdf_csv.empty()) write_text(a.gain_cdf_csv, gain_cdf_csv(analysis));
    }
    if (!a.out.empty()) write_text(a.out, j.dump(2) + "\n");

    std::ostringstream plain;
    const auto& m = run.metrics;
    plain << "queries            " << m.queries << "\n"
          << "baseline accuracy  " << m.baseline_accuracy << "\n"
          << "icl accuracy       " << m.icl_accuracy << "\n"
          << "icl gain (%)       " << m.icl_gain_percent << "\n"
          << "semantic noise     " << m.semantic_noise_pre << " -> " << m.semantic_noise_post << "\n"
          << "structural noise   " << m.structural_noise_pre << " -> " << m.structural_noise_post << "\n";
    if (m.effective_rate) plain << "effective rate     " << *m.effective_rate << "\n";
    plain << "tsr@1 / tsr@5      " << m.tsr_at_1 << " / " << m.tsr_at_5 << "\n"
          << "mean timesteps     " << m.mean_timesteps << "\n";
    if (j.contains("alignment"))
        plain << "above diagonal     " << j["alignment"]["fraction_above_diagonal"].get<double>() << "\n";
    emit(o, j, plain.str());
    return 0;
}

// --- graph / report --------------------------------------------------------------

std::string_view violation_name(ViolationKind k) {
    switch (k) {
        case ViolationKind::none: return "none";
        case ViolationKind::bad_start: return "bad_start";
        case ViolationKind::missing_edge: return "missing_edge";
        case ViolationKind::repeated_node: return "repeated_node";
        case ViolationKind::bad_end: return "bad_end";
    }
    return "none";
}

int cmd_graph_validate(const Options& o, const std::string& chain_text) {
    const OperationSequence chain = parse_chain(chain_text);
    const auto r = validate_sequence(default_graph(), chain);
    json j = {{"chain", format_chain(chain)}, {"valid", r.valid}};
    std::string plain = "valid\n";
    if (!r.valid) {
        j["violation"] = violation_name(r.kind);
        j["first_invalid_transition"] = r.first_invalid_transition;
        plain = "invalid: " + std::string(violation_name(r.kind)) + " at transition " +
                std::to_string(r.first_invalid_transition) + "\n";
    }
    emit(o, j, plain);
    return r.valid ? 0 : 1;
}

int cmd_graph_enumerate(const Options& o, const std::vector<std::string>& include) {
    const auto chains = enumerate_toolchains(default_graph(), parse_op_list(include));
    json arr = json::array();
    std::string plain;
    for (const auto& c : chains) {
        arr.push_back(format_chain(c));
        plain += format_chain(c) + "\n";
    }
    emit(o, arr, plain);
    return 0;
}

int cmd_report(const Options& o, const fs::path& trace) {
    const TrialLog log = TrialLog::from_json(read_json(trace));
    const TrialMetrics m = compute_metrics(log);
    emit(o, m.to_json(), m.to_json().dump(2) + "\n");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multimodal in-context retrieval with graph-planned toolchains"};
    app.require_subcommand(1);
    app.fallthrough();

    Options opts;
    app.add_option("-c,--config", opts.config_path, "Config file (TOML subset)");
    app.add_flag("--json", opts.json_output, "Machine-readable JSON output");
    app.add_option("--corpus", opts.corpus, "Corpus JSON-lines file (overrides corpus.path)");
    app.add_option("--db", opts.db, "Database directory (overrides db.dir)");

    auto* ingest = app.add_subcommand("ingest", "Embed the whole corpus into a fresh database");
    auto* sync = app.add_subcommand("sync", "Embed new or changed samples and upsert them");

    RetrieveArgs ra;
    auto* retrieve = app.add_subcommand("retrieve", "Top-k similarity search for one query");
    retrieve->add_option("--query-file", ra.query_file, "Query JSON")->required();
    retrieve->add_option("--mode", ra.mode, "textual | visual | visual-text | text-visual")
        ->check(CLI::IsMember({"textual", "visual", "visual-text", "text-visual"}));
    retrieve->add_option("--k", ra.k, "Number of results");

    RunArgs runa;
    auto* run = app.add_subcommand("run", "Run the closed loop for one query");
    run->add_option("--query-file", runa.query_file, "Query JSON")->required();
    run->add_option("--trace", runa.trace, "Write the episode trace here");
    run->add_option("--max-steps", runa.max_steps, "Planning iterations");
    run->add_option("--plan-mode", runa.plan_mode, "rule | model")->check(CLI::IsMember({"rule", "model"}));

    BenchArgs ba;
    auto* bench = app.add_subcommand("bench", "Synthetic benchmark with oracle policies");
    bench->add_option("--spec", ba.spec, "Synthetic spec JSON");
    bench->add_option("--ablate", ba.ablate, "Operations every chain must omit")->delimiter(',');
    bench->add_option("--out", ba.out, "Write metrics JSON here");
    bench->add_option("--trace", ba.trace, "Write the trial log here");
    bench->add_option("--shots", ba.shots, "Shot counts to sweep")->delimiter(',');
    bench->add_option("--csv", ba.shots_csv, "Shot sweep CSV");
    bench->add_option("--alignment-csv", ba.alignment_csv, "Per-pair similarity CSV");
    bench->add_option("--gain-cdf-csv", ba.gain_cdf_csv, "Similarity gain CDF CSV");
    bench->add_option("--alignment-queries", ba.alignment_queries, "Queries in the alignment analysis");
    bench->add_option("--alignment-candidates", ba.alignment_candidates, "Candidates per query");
    bench->add_option("--export-corpus", ba.export_dir, "Write the generated corpus and a config, then exit");
    bench->add_option("--workers", ba.workers, "Concurrent queries")->check(CLI::PositiveNumber);
    bench->add_option("--k", ba.k, "Context shots");
    bench->add_option("--plan-mode", ba.plan_mode, "rule | model")->check(CLI::IsMember({"rule", "model"}));
    bench->add_option("--oracle-rules", ba.oracle_rules, "bench | malformed:<p>");
    bench->add_option("--oracle-seed", ba.oracle_seed, "Oracle seed");

    auto* graph = app.add_subcommand("graph", "Inspect the operation grammar");
    graph->require_subcommand(1);
    std::string chain_text;
    auto* validate = graph->add_subcommand("validate", "Check a chain against the grammar");
    validate->add_option("--chain", chain_text, "\"a -> b -> c\"")->required();
    std::vector<std::string> include;
    auto* enumerate = graph->add_subcommand("enumerate", "List every start-to-end chain");
    enumerate->add_option("--include", include, "Operations every chain must contain")->delimiter(',');

    fs::path report_trace;
    auto* report = app.add_subcommand("report", "Recompute metrics from a bench trial log");
    report->add_option("--trace", report_trace, "Trial log JSON")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*ingest) return cmd_ingest(opts);
        if (*sync) return cmd_sync(opts);
        if (*retrieve) return cmd_retrieve(opts, ra);
        if (*run) return cmd_run(opts, runa);
        if (*bench) return cmd_bench(opts, ba);
        if (*validate) return cmd_graph_validate(opts, chain_text);
        if (*enumerate) return cmd_graph_enumerate(opts, include);
        if (*report) return cmd_report(opts, report_trace);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
