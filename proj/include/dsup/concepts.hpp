#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace dsup {

// Value space of one concept: a K-way one-hot code, a binary vector, or a
// real vector. `dim` is the encoded length.
enum class ValueKind { one_hot, binary, real };

struct ConceptSpec {
    std::string name;
    ValueKind kind = ValueKind::real;
    int dim = 0;
    float loss_weight = 1.0f;
    std::string label_extractor; // key into sample records

    void validate() const;
};

using ConceptValue = std::vector<float>;
// Deterministic map from a concept value to the previous concept's value.
using TransferFn = std::function<ConceptValue(const ConceptValue&)>;

struct LabeledPair {
    ConceptValue prev;
    ConceptValue next;
};

struct EpsilonReport {
    std::string pair;
    double epsilon = 0.0;
    int bucket_count = 0;
    std::size_t sample_count = 0;
    std::vector<std::string> warnings;
};

// Ordered concept list (y_1..y_m). Adjacent pairs may carry a deterministic
// map T with y_{i-1} = T(y_i); measured epsilons are attached by validation.
class ConceptHierarchy {
public:
    ConceptHierarchy() = default;
    explicit ConceptHierarchy(std::vector<ConceptSpec> concepts);

    const std::vector<ConceptSpec>& concepts() const { return concepts_; }
    std::size_t size() const { return concepts_.size(); }
    const ConceptSpec& at(std::size_t i) const { return concepts_[i]; }
    int index_of(const std::string& name) const;
    const ConceptSpec& by_name(const std::string& name) const;

    // pair_index i refers to the pair (y_{i-1}, y_i); valid range [1, size).
    void register_map(std::size_t pair_index, TransferFn map);
    bool has_map(std::size_t pair_index) const;

    std::vector<EpsilonReport> epsilons; // filled by estimate_hierarchy_epsilons

    ConceptValue apply_map(std::size_t pair_index, const ConceptValue& label) const;

private:
    std::vector<ConceptSpec> concepts_;
    std::vector<std::optional<TransferFn>> maps_; // size() entries, [0] unused
};

// Empirical epsilon of the necessary-condition relation between prev and
// next: 1 - min over observed next-classes c of the best conditional
// frequency of a prev-class given c. Real-valued concepts are bucketed
// per-dimension into `buckets` uniform bins over the observed range.
EpsilonReport estimate_epsilon(const ConceptSpec& prev, const ConceptSpec& next, const std::vector<LabeledPair>& data,
                               int buckets = 16);

} // namespace dsup
