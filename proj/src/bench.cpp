#include "ctxnav/bench.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "ctxnav/contextualize.hpp"
#include "ctxnav/errors.hpp"
#include "ctxnav/parallel.hpp"
#include "ctxnav/style.hpp"

namespace ctxnav {

namespace {

constexpr std::array<const char*, 8> attributes = {"color",   "size",     "count",       "shape",
                                                   "position", "texture", "material", "orientation"};

// Distribution helpers over mt19937_64 whose output is fixed by the
// standard, unlike std::uniform_*_distribution.
struct Rng {
    explicit Rng(std::uint64_t seed) : engine(seed) {}
    double unit() { return static_cast<double>(engine() >> 11) * 0x1.0p-53; }
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                    std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t x;
        do x = engine();
        while (x >= limit);
        return x % n;
    }
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
    }
    std::mt19937_64 engine;
};

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a * 0x9e3779b97f4a7c15ULL + b + 0x632be59bd9b4e019ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::string pad_id(char prefix, std::size_t n) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%c%05zu", prefix, n);
    return buf;
}

std::string task_tag(int task) { return "task" + std::to_string(task); }

// Exactly round(fraction * n) of n slots set, in random positions.
std::vector<bool> pick_slots(Rng& rng, int n, double fraction) {
    auto count = static_cast<int>(std::lround(fraction * n));
    std::vector<bool> slots(static_cast<std::size_t>(n), false);
    for (int i = 0; i < count; ++i) slots[static_cast<std::size_t>(i)] = true;
    rng.shuffle(slots);
    return slots;
}

std::string join_ops(const OperationSet& set) {
    std::string out;
    for (auto op : all_operations())
        if (set.test(index_of(op))) {
            if (!out.empty()) out += ',';
            out += to_string(op);
        }
    return out;
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

double ratio(std::size_t a, std::size_t b) {
    return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b);
}

}  // namespace

void SyntheticSpec::validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("synthetic spec: " + m); };
    if (task_count < 1) fail("task_count must be at least 1");
    if (samples_per_task < 1) fail("samples_per_task must be at least 1");
    if (style_count < 1 || style_count > 3) fail("style_count must be 1, 2 or 3");
    if (!(semantic_noise_rate >= 0.0 && semantic_noise_rate <= 1.0))
        fail("semantic_noise_rate must lie in [0, 1]");
    if (!(structural_mix >= 0.0 && structural_mix <= 1.0)) fail("structural_mix must lie in [0, 1]");
    if (semantic_noise_rate > 0.0 && task_count < 2) fail("semantic noise needs at least two tasks");
    if (structural_mix > 0.0 && style_count < 2) fail("structural mix needs at least two styles");
    if (vector_dim < task_count) fail("vector_dim must be at least task_count");
    if (query_count < 0) fail("query_count must be non-negative");
    if (!(easy_fraction >= 0.0 && easy_fraction <= 1.0)) fail("easy_fraction must lie in [0, 1]");
    if (max_difficulty < 1) fail("max_difficulty must be at least 1");
}

nlohmann::json SyntheticSpec::to_json() const {
    return {{"task_count", task_count},
            {"samples_per_task", samples_per_task},
            {"style_count", style_count},
            {"semantic_noise_rate", semantic_noise_rate},
            {"structural_mix", structural_mix},
            {"vector_dim", vector_dim},
            {"seed", seed},
            {"query_count", query_count},
            {"easy_fraction", easy_fraction},
            {"max_difficulty", max_difficulty}};
}

SyntheticSpec SyntheticSpec::from_json(const nlohmann::json& j) {
    try {
        SyntheticSpec s;
        if (!j.contains("seed")) throw ConfigError("synthetic spec: seed is required");
        s.seed = j.at("seed").get<std::uint64_t>();
        s.task_count = j.value("task_count", s.task_count);
        s.samples_per_task = j.value("samples_per_task", s.samples_per_task);
        s.style_count = j.value("style_count", s.style_count);
        s.semantic_noise_rate = j.value("semantic_noise_rate", s.semantic_noise_rate);
        s.structural_mix = j.value("structural_mix", s.structural_mix);
        s.vector_dim = j.value("vector_dim", s.vector_dim);
        s.query_count = j.value("query_count", s.query_count);
        s.easy_fraction = j.value("easy_fraction", s.easy_fraction);
        s.max_difficulty = j.value("max_difficulty", s.max_difficulty);
        s.validate();
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("synthetic spec: ") + e.what());
    }
}

SyntheticSpec SyntheticSpec::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError(path.string(), "cannot open synthetic spec");
    try {
        return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

std::string task_anchor(int task) { return "topic" + std::to_string(task); }

SyntheticBench generate_corpus(const SyntheticSpec& spec) {
    spec.validate();
    SyntheticBench out;
    out.embedding.dim = spec.vector_dim;
    out.embedding.seed = spec.seed;
    for (int t = 0; t < spec.task_count; ++t) out.embedding.anchors.push_back(task_anchor(t));

    Rng rng(spec.seed);
    std::size_t next_id = 0;
    for (int t = 0; t < spec.task_count; ++t) {
        auto distractor = pick_slots(rng, spec.samples_per_task, spec.semantic_noise_rate);
        auto reshaped = pick_slots(rng, spec.samples_per_task, spec.structural_mix);
        for (int i = 0; i < spec.samples_per_task; ++i) {
            const std::size_t n = next_id++;
            int owner = t;
            if (distractor[static_cast<std::size_t>(i)])
                owner = (t + 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.task_count - 1)))) %
                        spec.task_count;
            auto form = QuestionForm::interrogative;
            if (reshaped[static_cast<std::size_t>(i)])
                form = static_cast<QuestionForm>(1 + rng.below(static_cast<std::uint64_t>(spec.style_count - 1)));
            const char* attr = attributes[rng.below(attributes.size())];
            std::string scene = std::to_string(n);

            Sample s;
            s.id = pad_id('s', n);
            s.question = render_form("the " + std::string(attr) + " of the " + task_anchor(t) +
                                         " object in scene " + scene,
                                     form);
            s.answer = std::string(attr) + " answer " + s.id;
            s.image.uri = "data:,picture of a " + task_anchor(t) + " object in scene " + scene;
            s.task_tag = task_tag(owner);
            s.style_tag = std::string(to_string(form));
            out.truth.add_sample(s);
            out.corpus.add(std::move(s));
        }
    }

    const std::size_t first_query_scene = next_id;
    for (int i = 0; i < spec.query_count; ++i) {
        int t = i % spec.task_count;
        const char* attr = attributes[rng.below(attributes.size())];
        std::string scene = std::to_string(first_query_scene + static_cast<std::size_t>(i));
        Query q;
        q.text = render_form("the " + std::string(attr) + " of the " + task_anchor(t) +
                                 " object in scene " + scene,
                             QuestionForm::interrogative);
        q.image.uri = "data:,picture of a " + task_anchor(t) + " object in scene " + scene;
        q.task_tag = task_tag(t);
        q.style_tag = std::string(to_string(QuestionForm::interrogative));

        OracleFacts facts;
        facts.task_tag = *q.task_tag;
        facts.style_tag = *q.style_tag;
        facts.answer = "gold answer " + pad_id('q', static_cast<std::size_t>(i));
        facts.difficulty = rng.unit() < spec.easy_fraction
                               ? 0
                               : 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.max_difficulty)));
        out.truth.add_query(q.text, facts);
        out.queries.push_back(std::move(q));
    }
    return out;
}

// --- trials ----------------------------------------------------------------------

nlohmann::json TrialLog::to_json() const {
    nlohmann::json trials_json = nlohmann::json::array();
    for (const auto& t : trials)
        trials_json.push_back({{"query", ctxnav::to_json(t.query)},
                               {"gold", t.gold},
                               {"baseline_answer", t.baseline_answer},
                               {"episode", t.episode.to_json()}});
    return {{"spec", spec.to_json()}, {"k", k}, {"ablate", ablate}, {"trials", trials_json}};
}

TrialLog TrialLog::from_json(const nlohmann::json& j) {
    try {
        TrialLog log;
        log.spec = SyntheticSpec::from_json(j.at("spec"));
        log.k = j.at("k").get<std::size_t>();
        log.ablate = j.at("ablate").get<std::string>();
        for (const auto& t : j.at("trials"))
            log.trials.push_back({query_from_json(t.at("query")), t.at("gold").get<std::string>(),
                                  t.at("baseline_answer").get<std::string>(),
                                  EpisodeReport::from_json(t.at("episode"))});
        return log;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("malformed bench trace: ") + e.what());
    } catch (const ConfigError& e) {
        throw SchemaError(std::string("malformed bench trace: ") + e.what());
    } catch (const FormatError& e) {
        throw SchemaError(std::string("malformed bench trace: ") + e.what());
    }
}

nlohmann::json TrialMetrics::to_json() const {
    return {{"queries", queries},
            {"baseline_accuracy", baseline_accuracy},
            {"icl_accuracy", icl_accuracy},
            {"icl_gain_percent", icl_gain_percent},
            {"semantic_noise_pre", semantic_noise_pre},
            {"semantic_noise_post", semantic_noise_post},
            {"structural_noise_pre", structural_noise_pre},
            {"structural_noise_post", structural_noise_post},
            {"effective_rate", effective_rate ? nlohmann::json(*effective_rate) : nlohmann::json(nullptr)},
            {"tsr_at_1", tsr_at_1},
            {"tsr_at_5", tsr_at_5},
            {"mean_timesteps", mean_timesteps}};
}

double toolchain_success_rate(const TrialLog& log, std::size_t x) {
    if (log.trials.empty()) return 0.0;
    std::size_t ok = 0;
    for (const auto& t : log.trials) {
        if (t.episode.steps.empty()) continue;
        const auto& attempts = t.episode.steps.front().plan_attempts;
        if (attempts.empty()) {
            ok += t.episode.steps.front().chain_valid ? 1 : 0;
            continue;
        }
        for (std::size_t i = 0; i < attempts.size() && i < x; ++i)
            if (attempts[i].valid) {
                ++ok;
                break;
            }
    }
    return ratio(ok, log.trials.size());
}

TrialMetrics compute_metrics(const TrialLog& log) {
    TrialMetrics m;
    m.queries = log.trials.size();
    if (m.queries == 0) return m;

    std::size_t base_ok = 0, icl_ok = 0, steps = 0;
    std::size_t pre_total = 0, pre_task = 0, pre_style = 0;
    std::size_t post_total = 0, post_task = 0, post_style = 0;
    std::size_t filter_in = 0, filter_out = 0;
    bool filtered = false;
    for (const auto& t : log.trials) {
        base_ok += t.baseline_answer == t.gold ? 1 : 0;
        icl_ok += t.episode.final_answer == t.gold ? 1 : 0;
        steps += t.episode.steps.size();
        if (t.episode.steps.empty() || !t.episode.steps.front().noise) continue;
        const StageCounts& n = *t.episode.steps.front().noise;
        pre_total += n.initial.total;
        pre_task += n.initial.off_task;
        pre_style += n.initial.off_style;
        if (n.final_context) {
            post_total += n.final_context->total;
            post_task += n.final_context->off_task;
            post_style += n.final_context->off_style;
        }
        if (n.filtered) {
            filtered = true;
            filter_in += n.initial.total;
            filter_out += *n.filtered;
        }
    }
    m.baseline_accuracy = ratio(base_ok, m.queries);
    m.icl_accuracy = ratio(icl_ok, m.queries);
    m.icl_gain_percent = m.baseline_accuracy > 0.0
                             ? (m.icl_accuracy - m.baseline_accuracy) / m.baseline_accuracy * 100.0
                             : 0.0;
    m.semantic_noise_pre = ratio(pre_task, pre_total);
    m.structural_noise_pre = ratio(pre_style, pre_total);
    m.semantic_noise_post = ratio(post_task, post_total);
    m.structural_noise_post = ratio(post_style, post_total);
    if (filtered) m.effective_rate = ratio(filter_out, filter_in);
    m.tsr_at_1 = toolchain_success_rate(log, 1);
    m.tsr_at_5 = toolchain_success_rate(log, 5);
    m.mean_timesteps = ratio(steps, m.queries);
    return m;
}

HardwareStatus bench_hardware() { return HardwareStatus{32.0, 200.0}; }

Backbones bench_backbones() {
    return match_embedding_models(ModelZoo::stock(), bench_hardware(),
                                  ResourcePreference{PreferenceLevel::balanced});
}

BenchRun run_benchmark(const SyntheticSpec& spec, const BenchConfig& config) {
    SyntheticBench bench = generate_corpus(spec);
    auto truth = std::make_shared<const GroundTruth>(std::move(bench.truth));
    MockEmbeddingBackend backend(bench.embedding);
    const Backbones backbones = bench_backbones();
    std::shared_ptr<const VectorDatabase> db = build_database(bench.corpus, backend, backbones,
                                                              config.pipeline.embed);

    PipelineConfig pipeline = config.pipeline;
    pipeline.constraints.forbidden |= config.ablate;
    ModelPolicy downstream(std::make_shared<OracleTransport>(truth, config.oracle));

    BenchRun run;
    run.log.spec = spec;
    run.log.k = pipeline.k;
    run.log.ablate = join_ops(config.ablate);
    run.log.trials.resize(bench.queries.size());

    parallel_for(bench.queries.size(), config.workers, [&](std::size_t i) {
        const Query& q = bench.queries[i];
        OracleConfig episode_oracle = config.oracle;
        episode_oracle.seed = mix(config.oracle.seed, i);
        ModelPolicy policy(std::make_shared<OracleTransport>(truth, episode_oracle));

        Services services;
        services.embedder = &backend;
        services.policy = &policy;
        services.downstream = &downstream;
        services.probe_hardware = bench_hardware;

        QueryTrial& trial = run.log.trials[i];
        trial.query = q;
        trial.gold = truth->by_question(q.text)->answer;
        auto zero_shot = assemble_icl_prompt(CandidateSet{}, q, 0, pipeline.placement,
                                             *services.templates, pipeline.attach_images);
        trial.baseline_answer = run_icl(downstream, zero_shot).answer;

        EpisodeState state;
        state.corpus = &bench.corpus;
        state.db = db;
        state.backbones = backbones;
        trial.episode = run_episode(q, std::move(state), services, pipeline);
    });
    run.metrics = compute_metrics(run.log);
    return run;
}

std::vector<ShotPoint> shot_sweep(const SyntheticSpec& spec, const BenchConfig& config,
                                  const std::vector<std::size_t>& shots) {
    std::vector<ShotPoint> out;
    for (auto k : shots) {
        BenchConfig c = config;
        c.pipeline.k = k;
        out.push_back({k, run_benchmark(spec, c).metrics});
    }
    return out;
}

std::string shot_sweep_csv(const std::vector<ShotPoint>& points) {
    std::string out = "shots,baseline_accuracy,icl_accuracy,icl_gain_percent\n";
    for (const auto& p : points)
        out += std::to_string(p.shots) + "," + fmt(p.metrics.baseline_accuracy) + "," +
               fmt(p.metrics.icl_accuracy) + "," + fmt(p.metrics.icl_gain_percent) + "\n";
    return out;
}

AlignmentAnalysis alignment_similarity_analysis(const std::vector<Query>& queries,
                                                const std::vector<CandidateSet>& aligned,
                                                const EmbeddingBackend& backend,
                                                const ModelSpec& text_model) {
    if (queries.size() != aligned.size())
        throw SchemaError("alignment analysis needs one candidate set per query");
    AlignmentAnalysis out;
    std::size_t above = 0;
    for (std::size_t i = 0; i < queries.size(); ++i) {
        auto qv = backend.embed_text(text_model, queries[i].text);
        for (const auto& c : aligned[i].items) {
            SimilarityPair p;
            p.query_id = pad_id('q', i);
            p.candidate_id = c.sample.id;
            p.original = cosine_score(qv, backend.embed_text(text_model, c.sample.question));
            p.aligned = cosine_score(qv, backend.embed_text(text_model, c.effective_question()));
            if (p.aligned > p.original) ++above;
            out.pairs.push_back(std::move(p));
        }
    }
    out.fraction_above_diagonal = ratio(above, out.pairs.size());
    std::vector<double> gains;
    for (const auto& p : out.pairs) gains.push_back(p.aligned - p.original);
    std::sort(gains.begin(), gains.end());
    for (std::size_t i = 0; i < gains.size(); ++i)
        out.gain_cdf.emplace_back(gains[i], ratio(i + 1, gains.size()));
    return out;
}

AlignmentAnalysis run_alignment_analysis(const SyntheticSpec& spec, const BenchConfig& config,
                                         std::size_t query_count, std::size_t candidates) {
    SyntheticBench bench = generate_corpus(spec);
    auto truth = std::make_shared<const GroundTruth>(std::move(bench.truth));
    MockEmbeddingBackend backend(bench.embedding);
    const Backbones backbones = bench_backbones();
    auto db = build_database(bench.corpus, backend, backbones, config.pipeline.embed);
    ModelPolicy policy(std::make_shared<OracleTransport>(truth, config.oracle));

    std::vector<Query> queries(bench.queries.begin(),
                               bench.queries.begin() +
                                   static_cast<std::ptrdiff_t>(std::min(query_count, bench.queries.size())));
    std::vector<CandidateSet> sets(queries.size());
    parallel_for(queries.size(), config.workers, [&](std::size_t i) {
        auto ranked = db->topk(embed_query(queries[i], backend, backbones), db->size(),
                               RetrievalSpec{RetrievalMode::textual, config.pipeline.cascade_overfetch});
        const auto form = classify_form(queries[i].text);
        CandidateSet pool;
        pool.initial_count = ranked.initial_count;
        for (auto& c : ranked.items) {
            if (pool.size() == candidates) break;
            if (classify_form(c.sample.question) != form) pool.items.push_back(std::move(c));
        }
        sets[i] = structural_align(queries[i].text, pool, policy, PromptTemplates::defaults(),
                                   config.pipeline.contextualize);
    });
    return alignment_similarity_analysis(queries, sets, backend, backbones.text);
}

std::string alignment_csv(const AlignmentAnalysis& analysis) {
    std::string out = "query,candidate,original_similarity,aligned_similarity\n";
    for (const auto& p : analysis.pairs)
        out += p.query_id + "," + p.candidate_id + "," + fmt(p.original) + "," + fmt(p.aligned) + "\n";
    return out;
}

std::string gain_cdf_csv(const AlignmentAnalysis& analysis) {
    std::string out = "gain,cdf\n";
    for (const auto& [gain, cdf] : analysis.gain_cdf) out += fmt(gain) + "," + fmt(cdf) + "\n";
    return out;
}

}  // namespace ctxnav
