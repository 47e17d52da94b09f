#include "dsup/concepts.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace dsup {

void ConceptSpec::validate() const {
    if (name.empty()) throw std::invalid_argument("concept name must be nonempty");
    if (dim <= 0) throw std::invalid_argument("concept '" + name + "': value space dimension must be positive");
    if (loss_weight < 0.0f) throw std::invalid_argument("concept '" + name + "': loss weight must be >= 0");
}

ConceptHierarchy::ConceptHierarchy(std::vector<ConceptSpec> concepts) : concepts_(std::move(concepts)) {
    if (concepts_.empty()) throw std::invalid_argument("hierarchy needs at least one concept");
    for (const auto& c : concepts_) c.validate();
    for (std::size_t i = 0; i < concepts_.size(); ++i)
        for (std::size_t j = i + 1; j < concepts_.size(); ++j)
            if (concepts_[i].name == concepts_[j].name)
                throw std::invalid_argument("duplicate concept name '" + concepts_[i].name + "'");
    maps_.resize(concepts_.size());
}

int ConceptHierarchy::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < concepts_.size(); ++i)
        if (concepts_[i].name == name) return static_cast<int>(i);
    return -1;
}

const ConceptSpec& ConceptHierarchy::by_name(const std::string& name) const {
    const int i = index_of(name);
    if (i < 0) throw std::out_of_range("no concept named '" + name + "'");
    return concepts_[static_cast<std::size_t>(i)];
}

void ConceptHierarchy::register_map(std::size_t pair_index, TransferFn map) {
    if (pair_index == 0 || pair_index >= concepts_.size())
        throw std::out_of_range("pair index must address an adjacent pair");
    maps_[pair_index] = std::move(map);
}

bool ConceptHierarchy::has_map(std::size_t pair_index) const {
    return pair_index > 0 && pair_index < maps_.size() && maps_[pair_index].has_value();
}

ConceptValue ConceptHierarchy::apply_map(std::size_t pair_index, const ConceptValue& label) const {
    if (!has_map(pair_index))
        throw std::runtime_error("no map registered for pair " + std::to_string(pair_index));
    return (*maps_[pair_index])(label);
}

namespace {

// Class key of one concept value: argmax bin for one-hot, rounded bits for
// binary, per-dimension uniform bucket index for real.
std::vector<int> bucketize(const ConceptSpec& spec, const ConceptValue& v, const std::vector<float>& lo,
                           const std::vector<float>& hi, int buckets) {
    std::vector<int> key;
    switch (spec.kind) {
    case ValueKind::one_hot: {
        int arg = 0;
        for (std::size_t i = 1; i < v.size(); ++i)
            if (v[i] > v[static_cast<std::size_t>(arg)]) arg = static_cast<int>(i);
        key.push_back(arg);
        break;
    }
    case ValueKind::binary:
        key.reserve(v.size());
        for (float x : v) key.push_back(x >= 0.5f ? 1 : 0);
        break;
    case ValueKind::real:
        key.reserve(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) {
            const float span = hi[i] - lo[i];
            int b = 0;
            if (span > 0.0f) {
                b = static_cast<int>(std::floor((v[i] - lo[i]) / span * static_cast<float>(buckets)));
                b = std::clamp(b, 0, buckets - 1);
            }
            key.push_back(b);
        }
        break;
    }
    return key;
}

void observed_range(const std::vector<LabeledPair>& data, bool use_prev, std::size_t dim, std::vector<float>& lo,
                    std::vector<float>& hi) {
    lo.assign(dim, 0.0f);
    hi.assign(dim, 0.0f);
    bool first = true;
    for (const auto& s : data) {
        const ConceptValue& v = use_prev ? s.prev : s.next;
        for (std::size_t i = 0; i < dim; ++i) {
            if (first || v[i] < lo[i]) lo[i] = v[i];
            if (first || v[i] > hi[i]) hi[i] = v[i];
        }
        first = false;
    }
}

} // namespace

EpsilonReport estimate_epsilon(const ConceptSpec& prev, const ConceptSpec& next, const std::vector<LabeledPair>& data,
                               int buckets) {
    if (data.empty()) throw std::invalid_argument("estimate_epsilon: empty dataset");
    if (buckets < 1) throw std::invalid_argument("estimate_epsilon: bucket count must be positive");
    for (const auto& s : data) {
        if (static_cast<int>(s.prev.size()) != prev.dim || static_cast<int>(s.next.size()) != next.dim)
            throw std::invalid_argument("estimate_epsilon: sample label dimensions do not match the concept specs");
    }

    std::vector<float> lo_p, hi_p, lo_n, hi_n;
    observed_range(data, true, static_cast<std::size_t>(prev.dim), lo_p, hi_p);
    observed_range(data, false, static_cast<std::size_t>(next.dim), lo_n, hi_n);

    // counts[next-class][prev-class]
    std::map<std::vector<int>, std::map<std::vector<int>, std::size_t>> counts;
    for (const auto& s : data) {
        const auto kn = bucketize(next, s.next, lo_n, hi_n, buckets);
        const auto kp = bucketize(prev, s.prev, lo_p, hi_p, buckets);
        ++counts[kn][kp];
    }

    EpsilonReport rep;
    rep.pair = prev.name + "<-" + next.name;
    rep.bucket_count = buckets;
    rep.sample_count = data.size();

    double min_best = 1.0;
    for (const auto& [c, dist] : counts) {
        std::size_t total = 0, best = 0;
        for (const auto& [p, n] : dist) {
            total += n;
            best = std::max(best, n);
        }
        min_best = std::min(min_best, static_cast<double>(best) / static_cast<double>(total));
    }
    rep.epsilon = 1.0 - min_best;

    if (next.kind == ValueKind::one_hot) {
        for (int c = 0; c < next.dim; ++c)
            if (counts.find(std::vector<int>{c}) == counts.end())
                rep.warnings.push_back("class " + std::to_string(c) + " of '" + next.name +
                                       "' has zero samples; skipped");
    }
    return rep;
}

} // namespace dsup
