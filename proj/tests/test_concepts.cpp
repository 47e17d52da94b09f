#include "doctest.h"

#include <algorithm>
#include <stdexcept>

#include "dsup/concepts.hpp"
#include "dsup/rng.hpp"

using namespace dsup;

namespace {

ConceptValue one_hot(int k, int dim) {
    ConceptValue v(static_cast<std::size_t>(dim), 0.0f);
    v[static_cast<std::size_t>(k)] = 1.0f;
    return v;
}

ConceptSpec oh_spec(std::string name, int dim) {
    return ConceptSpec{std::move(name), ValueKind::one_hot, dim, 1.0f, ""};
}

// fine class -> coarse class by integer division
std::vector<LabeledPair> partition_data(int n_fine, int fines_per_coarse, std::size_t count, RngStream& rng,
                                        double corrupt_prob = 0.0) {
    const int n_coarse = n_fine / fines_per_coarse;
    std::vector<LabeledPair> data;
    data.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const int fine = static_cast<int>(rng.uniform_int(0, n_fine - 1));
        int coarse = fine / fines_per_coarse;
        if (corrupt_prob > 0.0 && rng.bernoulli(corrupt_prob))
            coarse = static_cast<int>(rng.uniform_int(0, n_coarse - 1));
        data.push_back({one_hot(coarse, n_coarse), one_hot(fine, n_fine)});
    }
    return data;
}

} // namespace

TEST_CASE("apply_T: partition lookup and identity") {
    ConceptHierarchy h({oh_spec("coarse", 3), oh_spec("fine", 9)});
    h.register_map(1, [](const ConceptValue& fine) {
        int arg = 0;
        for (std::size_t i = 1; i < fine.size(); ++i)
            if (fine[i] > fine[static_cast<std::size_t>(arg)]) arg = static_cast<int>(i);
        ConceptValue coarse(3, 0.0f);
        coarse[static_cast<std::size_t>(arg / 3)] = 1.0f;
        return coarse;
    });
    CHECK(h.has_map(1));
    // "oak" = fine class 4 -> "tree" = coarse class 1
    CHECK(h.apply_map(1, one_hot(4, 9)) == one_hot(1, 3));

    ConceptHierarchy ident({oh_spec("a", 4), oh_spec("b", 4)});
    ident.register_map(1, [](const ConceptValue& v) { return v; });
    const ConceptValue v = one_hot(2, 4);
    CHECK(ident.apply_map(1, v) == v);

    CHECK_THROWS_AS(ident.apply_map(0, v), std::runtime_error);
    ConceptHierarchy none({oh_spec("a", 4), oh_spec("b", 4)});
    CHECK_THROWS_AS(none.apply_map(1, v), std::runtime_error);
}

TEST_CASE("estimate_epsilon: strict partition gives exactly zero") {
    RngStream rng(3);
    auto data = partition_data(10, 2, 2000, rng);
    auto rep = estimate_epsilon(oh_spec("coarse", 5), oh_spec("fine", 10), data);
    CHECK(rep.epsilon == 0.0);
    CHECK(rep.sample_count == 2000);
}

TEST_CASE("estimate_epsilon: 10% independent corruption is measured near 0.1") {
    RngStream rng(11);
    auto data = partition_data(10, 2, 20000, rng, 0.1);
    auto rep = estimate_epsilon(oh_spec("coarse", 5), oh_spec("fine", 10), data);
    CHECK(std::abs(rep.epsilon - 0.1) < 0.02 + 0.02);
}

TEST_CASE("estimate_epsilon: independent uniform coarse over 5 classes gives ~0.8") {
    RngStream rng(19);
    std::vector<LabeledPair> data;
    for (int i = 0; i < 20000; ++i) {
        const int fine = static_cast<int>(rng.uniform_int(0, 9));
        const int coarse = static_cast<int>(rng.uniform_int(0, 4));
        data.push_back({one_hot(coarse, 5), one_hot(fine, 10)});
    }
    auto rep = estimate_epsilon(oh_spec("coarse", 5), oh_spec("fine", 10), data);
    CHECK(std::abs(rep.epsilon - 0.8) < 0.05);
}

TEST_CASE("estimate_epsilon: order and duplication invariance") {
    RngStream rng(23);
    auto data = partition_data(8, 2, 500, rng, 0.2);
    auto rep = estimate_epsilon(oh_spec("coarse", 4), oh_spec("fine", 8), data);

    auto shuffled = data;
    for (std::size_t i = shuffled.size(); i > 1; --i)
        std::swap(shuffled[i - 1], shuffled[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
    auto rep2 = estimate_epsilon(oh_spec("coarse", 4), oh_spec("fine", 8), shuffled);
    CHECK(rep.epsilon == rep2.epsilon);

    auto doubled = data;
    doubled.insert(doubled.end(), data.begin(), data.end());
    auto rep3 = estimate_epsilon(oh_spec("coarse", 4), oh_spec("fine", 8), doubled);
    CHECK(rep.epsilon == rep3.epsilon);
}

TEST_CASE("estimate_epsilon: monotone under increasing corruption") {
    // statistical: averaged over seeds, higher corruption never lowers epsilon
    const double probs[] = {0.0, 0.1, 0.2, 0.4};
    double prior = -1.0;
    for (double p : probs) {
        double acc = 0.0;
        for (std::uint64_t seed = 1; seed <= 5; ++seed) {
            RngStream rng(seed * 101);
            auto data = partition_data(10, 2, 5000, rng, p);
            acc += estimate_epsilon(oh_spec("coarse", 5), oh_spec("fine", 10), data).epsilon;
        }
        acc /= 5.0;
        CHECK(acc >= prior - 1e-9);
        prior = acc;
    }
}

TEST_CASE("estimate_epsilon: real-valued concepts are bucketed") {
    // prev = quantized copy of next's first dimension: deterministic after bucketing
    RngStream rng(31);
    std::vector<LabeledPair> data;
    // anchor the observed range to [0,1] so bucket edges align with the levels
    auto coarse4 = [](float x) { return std::min(std::floor(x * 4.0f), 3.0f) / 4.0f; };
    data.push_back({{coarse4(0.0f)}, {0.0f}});
    data.push_back({{coarse4(1.0f)}, {1.0f}});
    for (int i = 0; i < 4000; ++i) {
        const float x = static_cast<float>(rng.uniform(0.0, 1.0));
        data.push_back({{coarse4(x)}, {x}});
    }
    ConceptSpec prev{"coarse_val", ValueKind::real, 1, 1.0f, ""};
    ConceptSpec next{"fine_val", ValueKind::real, 1, 1.0f, ""};
    // 16 buckets refine the 4 coarse levels exactly, so the relation is deterministic
    auto rep = estimate_epsilon(prev, next, data, 16);
    CHECK(rep.epsilon == 0.0);
    CHECK(rep.bucket_count == 16);
}

TEST_CASE("estimate_epsilon: error paths and warnings") {
    ConceptSpec c = oh_spec("coarse", 3), f = oh_spec("fine", 6);
    CHECK_THROWS_AS(estimate_epsilon(c, f, {}), std::invalid_argument);

    // a declared fine class never observed -> warning
    std::vector<LabeledPair> data;
    for (int i = 0; i < 50; ++i) data.push_back({one_hot(0, 3), one_hot(0, 6)});
    auto rep = estimate_epsilon(c, f, data);
    CHECK(rep.warnings.size() == 5);
}

TEST_CASE("hierarchy validation rejects bad specs") {
    CHECK_THROWS_AS(ConceptHierarchy({ConceptSpec{"x", ValueKind::real, 0, 1.0f, ""}}), std::invalid_argument);
    CHECK_THROWS_AS(ConceptHierarchy({ConceptSpec{"x", ValueKind::real, 3, -1.0f, ""}}), std::invalid_argument);
    CHECK_THROWS_AS(ConceptHierarchy({oh_spec("a", 2), oh_spec("a", 2)}), std::invalid_argument);
}
