#include "ctxnav/orchestrator.hpp"

#include <cmath>

#include "ctxnav/errors.hpp"

namespace ctxnav {

namespace {

using O = OperationId;

bool is_retrieval(OperationId op) {
    return op == O::textual_similarity_retrieval || op == O::visual_similarity_retrieval;
}

ModelSpec spec_for(const ModelZoo& zoo, const std::string& id, ModelKind kind) {
    const auto& models = kind == ModelKind::text ? zoo.text_models : zoo.vision_models;
    for (const auto& m : models)
        if (m.model_id == id) return m;
    return ModelSpec{id, kind, 0, 0, std::nullopt};
}

class ChainRunner {
public:
    ChainRunner(EpisodeState& state, const Services& services, const PipelineConfig& config)
        : s_(state), svc_(services), cfg_(config) {}

    void run(const OperationSequence& chain) {
        pool_size_ = contains(chain, O::agentic_retrieval)
                         ? static_cast<std::size_t>(std::ceil(cfg_.agentic_overfetch *
                                                              static_cast<double>(cfg_.k)))
                         : cfg_.k;
        s_.retrieved = false;
        s_.retrieved_pool = {};
        s_.candidates = {};
        for (std::size_t i = 0; i < chain.size(); ++i) {
            OperationId op = chain[i];
            if (is_retrieval(op)) {
                bool cascade = i + 1 < chain.size() && is_retrieval(chain[i + 1]);
                retrieve(op, cascade);
                if (cascade) ++i;
                continue;
            }
            step(op);
        }
        if (s_.candidates.items.size() > cfg_.k) s_.candidates.items.resize(cfg_.k);
    }

private:
    void step(OperationId op) {
        switch (op) {
            case O::start:
            case O::end: return;
            case O::get_query:
                validate(s_.query);
                s_.query_loaded = true;
                s_.query_vectors.reset();
                return;
            case O::get_hardware_status: s_.hardware = probe(); return;
            case O::matching_embedding_models: match(); return;
            case O::check_updating: s_.delta = detect_delta(corpus(), current_manifest()); return;
            case O::multimodal_embedding: embed(); return;
            case O::load_vector_database: load(); return;
            case O::agentic_retrieval:
                require_pool(op);
                s_.candidates = agentic_filter(s_.query, s_.candidates, policy(), *svc_.templates,
                                               cfg_.contextualize);
                return;
            case O::structural_alignment:
                require_pool(op);
                s_.candidates = structural_align(s_.query.text, s_.candidates, policy(),
                                                 *svc_.templates, cfg_.contextualize);
                return;
            default: return;
        }
    }

    const Corpus& corpus() const {
        if (!s_.corpus) throw SchemaError("episode has no corpus");
        return *s_.corpus;
    }

    const ModelPolicy& policy() const {
        if (!svc_.policy) throw ConfigError("no policy model configured");
        return *svc_.policy;
    }

    HardwareStatus probe() const {
        if (!svc_.probe_hardware) throw ConfigError("no hardware probe configured");
        return svc_.probe_hardware();
    }

    void require_pool(OperationId op) const {
        if (!s_.retrieved)
            throw SchemaError(std::string(to_string(op)) + " ran before any retrieval");
    }

    DbManifest current_manifest() {
        open_db();
        return s_.db ? s_.db->manifest() : DbManifest{};
    }

    void open_db() {
        if (s_.db || s_.db_dir.empty() || !VectorDatabase::exists(s_.db_dir)) return;
        s_.db = std::make_shared<const VectorDatabase>(VectorDatabase::load(s_.db_dir));
    }

    void match() {
        if (!s_.hardware) s_.hardware = probe();
        open_db();
        const DbManifest* existing = s_.db ? &s_.db->manifest() : nullptr;
        s_.backbones = svc_.model_matching && svc_.policy
                           ? match_embedding_models(*svc_.zoo, *s_.hardware, cfg_.preference, existing,
                                                    *svc_.policy, *svc_.templates)
                           : match_embedding_models(*svc_.zoo, *s_.hardware, cfg_.preference, existing);
    }

    const Backbones& backbones() {
        if (s_.backbones) return *s_.backbones;
        open_db();
        if (s_.db) {
            s_.backbones = Backbones{
                spec_for(*svc_.zoo, s_.db->manifest().text_backbone, ModelKind::text),
                spec_for(*svc_.zoo, s_.db->manifest().vision_backbone, ModelKind::vision)};
        } else {
            match();
        }
        return *s_.backbones;
    }

    const EmbeddingBackend& embedder() const {
        if (!svc_.embedder) throw ConfigError("no embedding backend configured");
        return *svc_.embedder;
    }

    void embed() {
        if (!s_.delta) s_.delta = detect_delta(corpus(), current_manifest());
        s_.fresh = embed_samples(*s_.delta, embedder(), backbones(), cfg_.embed);
    }

    void load() {
        open_db();
        if (!s_.fresh || s_.fresh->entries.empty()) return;
        const auto& first = s_.fresh->entries.front();
        std::shared_ptr<VectorDatabase> next =
            s_.db ? std::make_shared<VectorDatabase>(*s_.db)
                  : std::make_shared<VectorDatabase>(
                        s_.fresh->text_backbone, s_.fresh->vision_backbone,
                        static_cast<int>(first.text_vector.size()),
                        static_cast<int>(first.vision_vector.size()));
        const auto& m = next->manifest();
        if (m.text_backbone != s_.fresh->text_backbone || m.vision_backbone != s_.fresh->vision_backbone)
            throw SchemaError("fresh embeddings come from backbones the database does not use");
        next->upsert(make_records(*s_.delta, *s_.fresh));
        if (!s_.db_dir.empty()) next->persist(s_.db_dir);
        s_.db = std::move(next);
        s_.fresh.reset();
        s_.delta.reset();
    }

    void cold_start(OperationId op) {
        s_.deviations.push_back("cold-start build inserted before " + std::string(to_string(op)));
        s_.delta = detect_delta(corpus(), current_manifest());
        embed();
        load();
        if (!s_.db) throw SchemaError("cannot retrieve from an empty corpus");
    }

    const QueryVectors& query_vectors() {
        if (!s_.query_loaded) throw SchemaError("retrieval ran before get_query");
        if (!s_.query_vectors) {
            const auto& m = s_.db->manifest();
            Backbones b{spec_for(*svc_.zoo, m.text_backbone, ModelKind::text),
                        spec_for(*svc_.zoo, m.vision_backbone, ModelKind::vision)};
            s_.query_vectors = embed_query(s_.query, embedder(), b);
        }
        return *s_.query_vectors;
    }

    void retrieve(OperationId op, bool cascade) {
        open_db();
        if (!s_.db || s_.db->size() == 0) cold_start(op);
        RetrievalSpec spec;
        spec.overfetch = cfg_.cascade_overfetch;
        bool text_first = op == O::textual_similarity_retrieval;
        if (cascade)
            spec.mode = text_first ? RetrievalMode::cascaded_text_then_visual
                                   : RetrievalMode::cascaded_visual_then_text;
        else
            spec.mode = text_first ? RetrievalMode::textual : RetrievalMode::visual;
        s_.candidates = s_.db->topk(query_vectors(), pool_size_, spec);
        s_.retrieved_pool = s_.candidates;
        s_.retrieved = true;
    }

    EpisodeState& s_;
    const Services& svc_;
    const PipelineConfig& cfg_;
    std::size_t pool_size_ = 0;
};

std::optional<NoiseCounts> try_count(const CandidateSet& set, const Query& q) {
    try {
        return count_noise(set, q);
    } catch (const ReportUnavailable&) {
        return std::nullopt;
    }
}

nlohmann::json step_to_json(const TimestepRecord& r) {
    nlohmann::json attempts = nlohmann::json::array();
    for (const auto& a : r.plan_attempts)
        attempts.push_back({{"reply", a.reply}, {"valid", a.valid}, {"rejection", a.rejection}});
    nlohmann::json j = {{"timestep", r.timestep},
                        {"chain", format_chain(r.chain)},
                        {"plan_attempts", attempts},
                        {"plan_fell_back", r.plan_fell_back},
                        {"chain_valid", r.chain_valid},
                        {"initial_count", r.initial_count},
                        {"context_count", r.context_count},
                        {"answer", r.answer},
                        {"feedback", to_json(r.feedback)},
                        {"icl_flagged", r.icl_flagged},
                        {"error", r.error ? nlohmann::json(*r.error) : nlohmann::json(nullptr)},
                        {"deviations", r.deviations},
                        {"tokens", r.tokens},
                        {"latency_ms", r.latency_ms}};
    if (r.noise) {
        nlohmann::json n = {{"initial", to_json(r.noise->initial)}};
        n["final"] = r.noise->final_context ? to_json(*r.noise->final_context) : nlohmann::json(nullptr);
        n["filtered"] = r.noise->filtered ? nlohmann::json(*r.noise->filtered) : nlohmann::json(nullptr);
        j["noise"] = std::move(n);
    } else {
        j["noise"] = nullptr;
    }
    return j;
}

TimestepRecord step_from_json(const nlohmann::json& j) {
    TimestepRecord r;
    r.timestep = j.at("timestep").get<std::uint32_t>();
    r.chain = parse_chain(j.at("chain").get<std::string>());
    for (const auto& a : j.at("plan_attempts"))
        r.plan_attempts.push_back({a.at("reply").get<std::string>(), a.at("valid").get<bool>(),
                                   a.at("rejection").get<std::string>()});
    r.plan_fell_back = j.at("plan_fell_back").get<bool>();
    r.chain_valid = j.at("chain_valid").get<bool>();
    r.initial_count = j.at("initial_count").get<std::size_t>();
    r.context_count = j.at("context_count").get<std::size_t>();
    r.answer = j.at("answer").get<std::string>();
    r.feedback = feedback_from_json(j.at("feedback"));
    r.icl_flagged = j.at("icl_flagged").get<bool>();
    if (!j.at("error").is_null()) r.error = j.at("error").get<std::string>();
    r.deviations = j.at("deviations").get<std::vector<std::string>>();
    r.tokens = j.at("tokens").get<std::uint64_t>();
    r.latency_ms = j.at("latency_ms").get<double>();
    if (const auto& n = j.at("noise"); !n.is_null()) {
        StageCounts c;
        c.initial = noise_counts_from_json(n.at("initial"));
        if (!n.at("final").is_null()) c.final_context = noise_counts_from_json(n.at("final"));
        if (!n.at("filtered").is_null()) c.filtered = n.at("filtered").get<std::size_t>();
        r.noise = c;
    }
    return r;
}

}  // namespace

nlohmann::json to_json(const NoiseCounts& n) {
    return {{"total", n.total}, {"off_task", n.off_task}, {"off_style", n.off_style}};
}

NoiseCounts noise_counts_from_json(const nlohmann::json& j) {
    return {j.at("total").get<std::size_t>(), j.at("off_task").get<std::size_t>(),
            j.at("off_style").get<std::size_t>()};
}

void execute_chain(const OperationSequence& chain, EpisodeState& state, const Services& services,
                   const PipelineConfig& config) {
    auto v = validate_sequence(*services.graph, chain);
    if (!v)
        throw SchemaError("toolchain '" + format_chain(chain) + "' is invalid at transition " +
                          std::to_string(v.first_invalid_transition));
    ChainRunner(state, services, config).run(chain);
}

EpisodeReport run_episode(const Query& query, EpisodeState state, const Services& services,
                          const PipelineConfig& config) {
    if (!services.downstream) throw ConfigError("no downstream model configured");
    EpisodeReport report;
    report.query = query;
    state.query = query;
    state.query_loaded = false;

    for (int t = 0; t < config.max_steps; ++t) {
        state.timestep = Timestep{static_cast<std::uint32_t>(t)};
        PlanResult plan = plan_toolchain(*services.graph, state.memory, config.constraints,
                                         state.timestep, config.plan_mode, services.policy,
                                         *services.templates);
        TimestepRecord rec;
        rec.timestep = state.timestep.value;
        rec.chain = plan.chain;
        rec.plan_attempts = std::move(plan.attempts);
        rec.plan_fell_back = plan.fell_back;
        rec.chain_valid = static_cast<bool>(validate_sequence(*services.graph, rec.chain));
        if (!rec.chain_valid)
            throw SchemaError("planner produced an invalid toolchain: " + format_chain(rec.chain));

        state.deviations.clear();
        try {
            execute_chain(rec.chain, state, services, config);
            rec.initial_count = state.retrieved_pool.size();
            rec.context_count = state.candidates.size();
            if (state.retrieved) {
                if (auto initial = try_count(state.retrieved_pool, query)) {
                    StageCounts c{*initial, try_count(state.candidates, query),
                                  state.candidates.filtered_count};
                    rec.noise = c;
                }
            }
            auto prompt = assemble_icl_prompt(state.candidates, query, config.k, config.placement,
                                              *services.templates, config.attach_images);
            IclOutcome outcome = run_icl(*services.downstream, prompt);
            rec.answer = outcome.answer;
            rec.feedback = outcome.feedback;
            rec.icl_flagged = outcome.flagged;
            rec.tokens = outcome.token_count;
            rec.latency_ms = outcome.latency_ms;
        } catch (const Error& e) {
            rec.error = e.what();
            rec.feedback = FeedbackRecord{};
        }
        rec.deviations = state.deviations;

        state.memory.append(rec.chain, rec.feedback);
        report.final_answer = rec.answer;
        bool done = rec.feedback.judgement == Judgement::yes;
        report.steps.push_back(std::move(rec));
        if (done) {
            report.converged = true;
            break;
        }
    }
    report.memory = std::move(state.memory);
    return report;
}

nlohmann::json EpisodeReport::to_json() const {
    nlohmann::json steps_json = nlohmann::json::array();
    for (const auto& s : steps) steps_json.push_back(step_to_json(s));
    return {{"query", ctxnav::to_json(query)},
            {"final_answer", final_answer},
            {"converged", converged},
            {"steps", steps_json}};
}

EpisodeReport EpisodeReport::from_json(const nlohmann::json& j) {
    try {
        EpisodeReport r;
        r.query = query_from_json(j.at("query"));
        r.final_answer = j.at("final_answer").get<std::string>();
        r.converged = j.at("converged").get<bool>();
        for (const auto& s : j.at("steps")) {
            r.steps.push_back(step_from_json(s));
            r.memory.append(r.steps.back().chain, r.steps.back().feedback);
        }
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("malformed episode trace: ") + e.what());
    } catch (const FormatError& e) {
        throw SchemaError(std::string("malformed episode trace: ") + e.what());
    }
}

std::shared_ptr<VectorDatabase> build_database(const Corpus& corpus, const EmbeddingBackend& backend,
                                               const Backbones& backbones, const EmbedOptions& options) {
    if (corpus.size() == 0) throw SchemaError("cannot build a database from an empty corpus");
    EmbeddingSet set = embed_samples(corpus.samples(), backend, backbones, options);
    auto db = std::make_shared<VectorDatabase>(
        backbones.text.model_id, backbones.vision.model_id,
        static_cast<int>(set.entries.front().text_vector.size()),
        static_cast<int>(set.entries.front().vision_vector.size()));
    db->upsert(make_records(corpus.samples(), set));
    return db;
}

}  // namespace ctxnav
