#pragma once

#include <array>
#include <bitset>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace ctxnav {

// The closed vocabulary of atomic operations a toolchain may contain.
enum class OperationId : std::uint8_t {
    start,
    get_query,
    get_hardware_status,
    check_updating,
    matching_embedding_models,
    multimodal_embedding,
    load_vector_database,
    textual_similarity_retrieval,
    visual_similarity_retrieval,
    agentic_retrieval,
    structural_alignment,
    end,
};

inline constexpr std::size_t operation_count = 12;

std::string_view to_string(OperationId op);
std::optional<OperationId> operation_from_string(std::string_view name);
std::span<const OperationId> all_operations();

using OperationSet = std::bitset<operation_count>;

inline std::size_t index_of(OperationId op) { return static_cast<std::size_t>(op); }

OperationSet make_set(std::initializer_list<OperationId> ops);

using OperationSequence = std::vector<OperationId>;
using Edge = std::pair<OperationId, OperationId>;

bool contains(const OperationSequence& seq, OperationId op);
bool contains_all(const OperationSequence& seq, const OperationSet& required);

// Directed grammar of permissible transitions between operations.
class GrammarGraph {
public:
    // Throws SchemaError if `start` gains an in-edge or `end` an out-edge.
    explicit GrammarGraph(std::span<const Edge> edges);

    bool has_node(OperationId op) const { return nodes_.test(index_of(op)); }
    bool has_edge(OperationId from, OperationId to) const {
        return adjacency_[index_of(from)].test(index_of(to));
    }
    const OperationSet& nodes() const noexcept { return nodes_; }
    const std::vector<Edge>& edges() const noexcept { return edges_; }
    std::vector<OperationId> successors(OperationId op) const;

    // One "from -> to" line per edge, in construction order.
    std::string textualize() const;

private:
    OperationSet nodes_;
    std::array<OperationSet, operation_count> adjacency_{};
    std::vector<Edge> edges_;
};

std::span<const Edge> default_edges();
const GrammarGraph& default_graph();
GrammarGraph build_default_graph();

enum class ViolationKind { none, bad_start, missing_edge, repeated_node, bad_end };

struct ValidationResult {
    bool valid = false;
    // Index i of the first failing transition seq[i] -> seq[i+1]. A wrong
    // first element reports 0; a chain that stops before `end` reports
    // seq.size() - 1.
    std::size_t first_invalid_transition = 0;
    ViolationKind kind = ViolationKind::none;

    explicit operator bool() const noexcept { return valid; }
};

ValidationResult validate_sequence(const GrammarGraph& graph, const OperationSequence& seq);

// Every simple start -> end path containing all of `must_include`, sorted
// lexicographically by operation name.
std::vector<OperationSequence> enumerate_toolchains(const GrammarGraph& graph,
                                                    const OperationSet& must_include = {});

bool lexicographic_less(const OperationSequence& a, const OperationSequence& b);

// "a -> b -> c"
std::string format_chain(const OperationSequence& seq);
// "Toolchain: a -> b -> c."
std::string render_toolchain(const OperationSequence& seq);

// Splits "a -> b -> c" into operations. Throws FormatError on an empty
// token and UnknownOperationError on a name outside the vocabulary.
OperationSequence parse_chain(std::string_view text);

// Extracts the last `Toolchain: ... .` declaration from free text, prepending
// `start` when the model left it implicit.
OperationSequence parse_toolchain_text(std::string_view text);

}  // namespace ctxnav
