#include "ctxnav/ogg.hpp"

#include <algorithm>

#include "ctxnav/errors.hpp"

namespace ctxnav {

namespace {

constexpr std::array<std::string_view, operation_count> names{
    "start",
    "get_query",
    "get_hardware_status",
    "check_updating",
    "matching_embedding_models",
    "multimodal_embedding",
    "load_vector_database",
    "textual_similarity_retrieval",
    "visual_similarity_retrieval",
    "agentic_retrieval",
    "structural_alignment",
    "end",
};

constexpr std::array<OperationId, operation_count> ops{
    OperationId::start,
    OperationId::get_query,
    OperationId::get_hardware_status,
    OperationId::check_updating,
    OperationId::matching_embedding_models,
    OperationId::multimodal_embedding,
    OperationId::load_vector_database,
    OperationId::textual_similarity_retrieval,
    OperationId::visual_similarity_retrieval,
    OperationId::agentic_retrieval,
    OperationId::structural_alignment,
    OperationId::end,
};

using O = OperationId;

const std::array<Edge, 23> edge_list{{
    {O::start, O::get_query},
    {O::get_query, O::get_hardware_status},
    {O::get_query, O::check_updating},
    {O::get_query, O::load_vector_database},
    {O::check_updating, O::get_hardware_status},
    {O::check_updating, O::multimodal_embedding},
    {O::check_updating, O::load_vector_database},
    {O::get_hardware_status, O::matching_embedding_models},
    {O::matching_embedding_models, O::multimodal_embedding},
    {O::multimodal_embedding, O::load_vector_database},
    {O::load_vector_database, O::textual_similarity_retrieval},
    {O::load_vector_database, O::visual_similarity_retrieval},
    {O::textual_similarity_retrieval, O::visual_similarity_retrieval},
    {O::textual_similarity_retrieval, O::agentic_retrieval},
    {O::textual_similarity_retrieval, O::structural_alignment},
    {O::visual_similarity_retrieval, O::textual_similarity_retrieval},
    {O::visual_similarity_retrieval, O::agentic_retrieval},
    {O::visual_similarity_retrieval, O::structural_alignment},
    {O::agentic_retrieval, O::structural_alignment},
    {O::textual_similarity_retrieval, O::end},
    {O::visual_similarity_retrieval, O::end},
    {O::agentic_retrieval, O::end},
    {O::structural_alignment, O::end},
}};

std::string_view trim(std::string_view s) {
    auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
    while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
    return s;
}

void dfs(const GrammarGraph& g, OperationSequence& path, OperationSet& on_path,
         const OperationSet& must_include, std::vector<OperationSequence>& out) {
    OperationId tail = path.back();
    if (tail == O::end) {
        if (contains_all(path, must_include)) out.push_back(path);
        return;
    }
    for (OperationId next : g.successors(tail)) {
        if (on_path.test(index_of(next))) continue;
        path.push_back(next);
        on_path.set(index_of(next));
        dfs(g, path, on_path, must_include, out);
        on_path.reset(index_of(next));
        path.pop_back();
    }
}

}  // namespace

std::string_view to_string(OperationId op) { return names[index_of(op)]; }

std::optional<OperationId> operation_from_string(std::string_view name) {
    for (std::size_t i = 0; i < operation_count; ++i)
        if (names[i] == name) return ops[i];
    return std::nullopt;
}

std::span<const OperationId> all_operations() { return ops; }

OperationSet make_set(std::initializer_list<OperationId> list) {
    OperationSet s;
    for (auto op : list) s.set(index_of(op));
    return s;
}

bool contains(const OperationSequence& seq, OperationId op) {
    return std::find(seq.begin(), seq.end(), op) != seq.end();
}

bool contains_all(const OperationSequence& seq, const OperationSet& required) {
    OperationSet present;
    for (auto op : seq) present.set(index_of(op));
    return (required & ~present).none();
}

GrammarGraph::GrammarGraph(std::span<const Edge> edges) {
    for (const auto& [from, to] : edges) {
        if (to == O::start) throw SchemaError("'start' cannot have an in-edge");
        if (from == O::end) throw SchemaError("'end' cannot have an out-edge");
        if (adjacency_[index_of(from)].test(index_of(to))) continue;
        adjacency_[index_of(from)].set(index_of(to));
        nodes_.set(index_of(from));
        nodes_.set(index_of(to));
        edges_.emplace_back(from, to);
    }
}

std::vector<OperationId> GrammarGraph::successors(OperationId op) const {
    std::vector<OperationId> out;
    for (std::size_t i = 0; i < operation_count; ++i)
        if (adjacency_[index_of(op)].test(i)) out.push_back(ops[i]);
    return out;
}

std::string GrammarGraph::textualize() const {
    std::string out;
    for (const auto& [from, to] : edges_) {
        out += to_string(from);
        out += " -> ";
        out += to_string(to);
        out += '\n';
    }
    return out;
}

std::span<const Edge> default_edges() { return edge_list; }

GrammarGraph build_default_graph() { return GrammarGraph(edge_list); }

const GrammarGraph& default_graph() {
    static const GrammarGraph g = build_default_graph();
    return g;
}

ValidationResult validate_sequence(const GrammarGraph& graph, const OperationSequence& seq) {
    ValidationResult r;
    if (seq.empty() || seq.front() != O::start) {
        r.kind = ViolationKind::bad_start;
        return r;
    }
    OperationSet seen;
    seen.set(index_of(seq.front()));
    for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
        if (!graph.has_edge(seq[i], seq[i + 1])) {
            r.first_invalid_transition = i;
            r.kind = ViolationKind::missing_edge;
            return r;
        }
        if (seen.test(index_of(seq[i + 1]))) {
            r.first_invalid_transition = i;
            r.kind = ViolationKind::repeated_node;
            return r;
        }
        seen.set(index_of(seq[i + 1]));
    }
    if (seq.back() != O::end) {
        r.first_invalid_transition = seq.size() - 1;
        r.kind = ViolationKind::bad_end;
        return r;
    }
    r.valid = true;
    return r;
}

bool lexicographic_less(const OperationSequence& a, const OperationSequence& b) {
    return std::lexicographical_compare(
        a.begin(), a.end(), b.begin(), b.end(),
        [](OperationId x, OperationId y) { return to_string(x) < to_string(y); });
}

std::vector<OperationSequence> enumerate_toolchains(const GrammarGraph& graph,
                                                    const OperationSet& must_include) {
    std::vector<OperationSequence> out;
    if (!graph.has_node(O::start)) return out;
    OperationSequence path{O::start};
    OperationSet on_path;
    on_path.set(index_of(O::start));
    dfs(graph, path, on_path, must_include, out);
    std::sort(out.begin(), out.end(), lexicographic_less);
    return out;
}

std::string format_chain(const OperationSequence& seq) {
    std::string out;
    for (std::size_t i = 0; i < seq.size(); ++i) {
        if (i) out += " -> ";
        out += to_string(seq[i]);
    }
    return out;
}

std::string render_toolchain(const OperationSequence& seq) {
    return "Toolchain: " + format_chain(seq) + ".";
}

OperationSequence parse_chain(std::string_view text) {
    OperationSequence seq;
    text = trim(text);
    if (text.empty()) throw FormatError("empty toolchain");
    while (true) {
        auto arrow = text.find("->");
        std::string_view token = trim(text.substr(0, arrow));
        if (token.empty()) throw FormatError("empty operation name in toolchain");
        auto op = operation_from_string(token);
        if (!op) throw UnknownOperationError(std::string(token));
        seq.push_back(*op);
        if (arrow == std::string_view::npos) break;
        text.remove_prefix(arrow + 2);
    }
    return seq;
}

OperationSequence parse_toolchain_text(std::string_view text) {
    static constexpr std::string_view marker = "Toolchain:";
    auto pos = text.rfind(marker);
    if (pos == std::string_view::npos) throw FormatError("no 'Toolchain:' declaration found");
    std::string_view rest = text.substr(pos + marker.size());
    rest = rest.substr(0, rest.find('\n'));
    auto period = rest.find('.');
    if (period == std::string_view::npos)
        throw FormatError("toolchain declaration is not terminated by '.'");
    OperationSequence seq = parse_chain(rest.substr(0, period));
    if (seq.front() != O::start) seq.insert(seq.begin(), O::start);
    return seq;
}

}  // namespace ctxnav
