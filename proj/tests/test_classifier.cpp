#include "doctest.h"

#include "fedgen/classifier.hpp"
#include "fedgen/error.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace fedgen;
using fixtures::random_images;

TEST_CASE("forward agrees with the double-precision oracle") {
    const Classifier m(ClassifierConfig{}, 5, 3);
    const auto x = random_images({1, 16, 16}, 3, 4);
    const auto pred = m.forward(x);
    REQUIRE(pred.size() == 3);
    const oracle::Params P(m.params());
    for (int s = 0; s < 3; ++s) {
        const auto ref = oracle::classifier_forward(P, fixtures::sample_tensor(x, {1, 16, 16}, s));
        CHECK(oracle::relative_error(fixtures::column(pred.logits, s), ref.logits) < 1e-5);
        CHECK(oracle::relative_error(fixtures::column(pred.features, s), ref.features) < 1e-5);
    }
}

TEST_CASE("probabilities are normalized, outputs are pure") {
    const Classifier m(ClassifierConfig{}, 7, 1);
    const auto x = random_images({1, 16, 16}, 9, 2);
    const auto a = m.forward(x);
    const auto b = m.forward(x);
    CHECK(a.logits == b.logits);
    CHECK(a.features == b.features);
    for (int s = 0; s < a.size(); ++s) {
        const auto p = a.at(s);
        double sum = 0;
        for (Real v : p.probabilities) {
            CHECK(v >= 0);
            sum += v;
        }
        CHECK(std::abs(sum - 1) <= 1e-6);
        CHECK(p.logits.size() == 7);
        CHECK(p.features.size() == 64);
    }
    CHECK(m.forward(nn::Act(1, 0)).size() == 0);
    CHECK_THROWS_AS(m.forward(nn::Act(2, 256)), ShapeError);
    CHECK_THROWS_AS(m.forward(std::vector<std::vector<Real>>{std::vector<Real>(10)}), ShapeError);
}

TEST_CASE("expand_head preserves old logits") {
    Classifier m(ClassifierConfig{}, 4, 8);
    const auto x = random_images({1, 16, 16}, 2, 6);
    const auto before = m.forward(x).logits;
    const ParamSet snapshot = m.params();
    m.expand_head(4, 1);
    CHECK(m.params() == snapshot);
    m.expand_head(6, 99);
    CHECK(m.current_classes() == 6);
    const auto after = m.forward(x).logits;
    REQUIRE(after.rows() == 6);
    CHECK((after.topRows(4) - before).cwiseAbs().maxCoeff() <= 1e-6);
    // New rows come from the small symmetric range.
    const Real bound = 1 / std::sqrt(Real(64));
    CHECK(m.params().at("head.weight").bottomRows(2).cwiseAbs().maxCoeff() <= bound);
    CHECK(m.params().at("head.weight").bottomRows(2).cwiseAbs().maxCoeff() > 0);
    CHECK(m.restricted(4).params() == snapshot);
    CHECK_THROWS_AS(m.expand_head(5, 1), ConfigError);
}

TEST_CASE("aggregate: means, weights, identity, permutation") {
    const ClassifierConfig cfg = fixtures::tiny_classifier();
    Classifier a(cfg, 2, 1), b(cfg, 2, 2);
    for (auto& e : a.params()) e.value.setConstant(1);
    for (auto& e : b.params()) e.value.setConstant(3);
    const double eq[] = {1, 1};
    const Classifier avg = aggregate(std::vector<Classifier>{a, b}, eq);
    for (const auto& e : avg.params()) CHECK(e.value.isConstant(2));

    for (auto& e : a.params()) e.value.setConstant(0);
    for (auto& e : b.params()) e.value.setConstant(4);
    const double w13[] = {1, 3};
    for (const auto& e : aggregate(std::vector<Classifier>{a, b}, w13).params()) CHECK(e.value.isConstant(3));

    Classifier c(cfg, 2, 3), d(cfg, 2, 4);
    const double one[] = {0.37};
    CHECK(aggregate(std::vector<Classifier>{c}, one).params() == c.params());
    const double w2[] = {2, 2};
    CHECK(aggregate(std::vector<Classifier>{c, c}, w2).params() == c.params());
    const double wcd[] = {0.25, 0.75}, wdc[] = {0.75, 0.25};
    const auto p1 = aggregate(std::vector<Classifier>{c, d}, wcd).params();
    const auto p2 = aggregate(std::vector<Classifier>{d, c}, wdc).params();
    for (std::size_t i = 0; i < p1.size(); ++i) CHECK((p1[i] - p2[i]).cwiseAbs().maxCoeff() <= 1e-6);

    const Classifier wide(cfg, 3, 1);
    CHECK_THROWS_AS(aggregate(std::vector<Classifier>{c, wide}, w2), ShapeError);
    const double neg[] = {-1, 2}, zero[] = {0, 0};
    CHECK_THROWS_AS(aggregate(std::vector<Classifier>{c, d}, neg), ConfigError);
    CHECK_THROWS_AS(aggregate(std::vector<Classifier>{c, d}, zero), ConfigError);
}

TEST_CASE("from_params rebuilds the same function") {
    const Classifier m(fixtures::tiny_classifier(), 3, 5);
    const Classifier r = Classifier::from_params(m.params(), {1, 4, 4});
    const auto x = random_images({1, 4, 4}, 4, 1);
    CHECK(r.forward(x).logits == m.forward(x).logits);
    CHECK(r.feature_dim() == 4);
    CHECK_THROWS_AS(Classifier::from_params(m.params(), {2, 4, 4}), ShapeError);
}

TEST_CASE("softmax with temperature") {
    nn::Act z(2, 1);
    z << 0, std::log(3.0f);
    const auto p = softmax(z);
    CHECK(p(1, 0) == doctest::Approx(0.75).epsilon(1e-6));
    const auto q = softmax(z, 2);
    CHECK(q(1, 0) == doctest::Approx(std::sqrt(3.0) / (1 + std::sqrt(3.0))).epsilon(1e-6));
}
