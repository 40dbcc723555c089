/*
 * Copyright (C) 2026 The chils Authors
 * SPDX-License-Identifier: Apache-2.0
 */

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "chils/engine.hpp"
#include "oracle.hpp"
#include "test_util.hpp"

namespace chils {
namespace {

ClassTextReps reps_of(const std::vector<std::vector<float>>& rows) {
    ClassTextReps r{rows.front().size(), rows.size(), {}, {}};
    for (std::size_t i = 0; i < rows.size(); ++i) {
        r.rows.insert(r.rows.end(), rows[i].begin(), rows[i].end());
        r.owner.push_back(i);
    }
    return r;
}

ClassTextReps reps_of(const EmbeddingBundle& b) {
    ClassTextReps r{b.dim, b.count(), b.matrix, {}};
    for (std::size_t i = 0; i < b.count(); ++i) r.owner.push_back(i);
    return r;
}

std::vector<std::vector<float>> rows_of(const EmbeddingBundle& b) {
    std::vector<std::vector<float>> out;
    for (std::size_t i = 0; i < b.count(); ++i) out.emplace_back(b.row(i).begin(), b.row(i).end());
    return out;
}

TEST(Similarity, Examples) {
    const std::vector<float> img{1.f, 0.f};
    const auto ident = similarity_logits(img, reps_of({{1.f, 0.f}, {0.f, 1.f}}), 1.0);
    EXPECT_EQ(ident, (std::vector<double>{1.0, 0.0}));
    const auto scaled = similarity_logits(img, reps_of({{1.f, 0.f}, {0.f, 1.f}}), 100.0);
    EXPECT_EQ(scaled, (std::vector<double>{100.0, 0.0}));
    const std::vector<float> a{0.6f, 0.8f};
    EXPECT_NEAR(similarity_logits(a, reps_of({{0.8f, 0.6f}}), 1.0)[0], 0.96, 1e-6);
    EXPECT_THROW(similarity_logits(a, reps_of({{1.f, 0.f, 0.f}}), 1.0), Error);
}

TEST(Softmax, Examples) {
    const auto u = softmax(std::vector<double>{0.0, 0.0, 0.0});
    for (double p : u) EXPECT_NEAR(p, 1.0 / 3.0, 1e-15);
    const auto two = softmax(std::vector<double>{0.0, std::log(2.0)});
    EXPECT_NEAR(two[0], 1.0 / 3.0, 1e-12);
    EXPECT_NEAR(two[1], 2.0 / 3.0, 1e-12);
    const auto big = softmax(std::vector<double>{1000.0, 0.0});
    EXPECT_TRUE(std::isfinite(big[0]) && std::isfinite(big[1]));
    EXPECT_NEAR(big[0], 1.0, 1e-12);
    EXPECT_GE(big[1], 0.0);
    const auto extreme = softmax(std::vector<double>{1e4, -1e4});
    EXPECT_EQ(extreme[0], 1.0);
    EXPECT_EQ(extreme[1], 0.0);
    EXPECT_THROW(softmax(std::vector<double>{}), Error);
}

TEST(Softmax, MatchesOracleAndShiftInvariant) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-50.0, 50.0);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> x(1 + rng() % 20);
        for (auto& v : x) v = u(rng);
        const auto p = softmax(x);
        const auto q = oracle::softmax(x);
        double sum = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            EXPECT_NEAR(p[i], q[i], 1e-12);
            EXPECT_GE(p[i], 0.0);
            sum += p[i];
        }
        EXPECT_NEAR(sum, 1.0, 1e-12);
        const double c = u(rng) * 10.0;
        std::vector<double> shifted = x;
        for (auto& v : shifted) v += c;
        const auto ps = softmax(shifted);
        for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(p[i], ps[i], 1e-9);
    }
}

TEST(Baseline, Examples) {
    const InferenceConfig cfg;
    const std::vector<float> img{1.f, 0.f};
    EXPECT_EQ(predict_baseline(img, reps_of({{1.f, 0.f}, {0.f, 1.f}}), cfg).superclass, 0u);
    EXPECT_EQ(predict_baseline(img, reps_of({{0.f, 1.f}, {0.f, 1.f}}), cfg).superclass, 0u);
    EXPECT_EQ(argmax(std::vector<double>{0.1, 0.9, 0.3}), 1u);
    EXPECT_EQ(argmax(std::vector<double>{0.5, 0.5}), 0u);
}

TEST(Baseline, SetBasedOwnerOfBestRow) {
    ClassTextReps r{2, 2, {0.f, 1.f, 0.6f, 0.8f, 1.f, 0.f}, {0, 1, 1}};
    const std::vector<float> img{0.f, 1.f};
    const auto b = predict_baseline(img, r, InferenceConfig{});
    EXPECT_EQ(b.superclass, 0u);
    ASSERT_EQ(b.sup_probs.size(), 2u);
    EXPECT_NEAR(b.sup_probs[0] + b.sup_probs[1], 1.0, 1e-12);
}

TEST(Reweight, PaperStyleExample) {
    const LabelMap map({{"A", {"a1", "a2"}}, {"B", {"b1", "b2"}}});
    const std::vector<double> sub{0.3, 0.0, 0.4, 0.3}, sup{0.6, 0.4};
    const auto s = reweight(sub, sup, map, ReweightVariant::standard, Aggregator::mean);
    ASSERT_EQ(s.size(), 4u);
    EXPECT_NEAR(s[0], 0.18, 1e-15);
    EXPECT_NEAR(s[2], 0.16, 1e-15);
    EXPECT_NEAR(s[3], 0.12, 1e-15);
    EXPECT_EQ(argmax(s), 0u);
}

TEST(Reweight, SubclassEvidenceCanOverrideSuperclass) {
    const LabelMap map({{"A", {"a1"}}, {"B", {"b1"}}});
    const std::vector<double> sub{0.3, 0.7}, sup{0.6, 0.4};
    const auto s = reweight(sub, sup, map, ReweightVariant::standard, Aggregator::mean);
    EXPECT_NEAR(s[0], 0.18, 1e-15);
    EXPECT_NEAR(s[1], 0.28, 1e-15);
    EXPECT_EQ(argmax(s), 1u);
}

TEST(Reweight, UniformSuperclassKeepsSubclassArgmax) {
    const LabelMap map({{"A", {"a1", "a2"}}, {"B", {"b1"}}});
    const std::vector<double> sub{0.2, 0.3, 0.5}, sup{0.5, 0.5};
    const auto s = reweight(sub, sup, map, ReweightVariant::standard, Aggregator::mean);
    EXPECT_EQ(argmax(s), argmax(sub));
}

TEST(Reweight, SuperclassSpaceSumTieGoesFirst) {
    const LabelMap map({{"A", {"a1", "a2"}}, {"B", {"b1", "b2"}}});
    const std::vector<double> sub{0.25, 0.25, 0.25, 0.25}, sup{0.5, 0.5};
    const auto s = reweight(sub, sup, map, ReweightVariant::agg_sub_with_sup, Aggregator::sum);
    EXPECT_EQ(s, (std::vector<double>{0.25, 0.25}));
    EXPECT_EQ(argmax(s), 0u);
}

TEST(Reweight, NoneAndSubAgg) {
    const LabelMap map({{"A", {"a1", "a2"}}, {"B", {"b1"}}});
    const std::vector<double> sub{0.1, 0.3, 0.6}, sup{0.9, 0.1};
    EXPECT_EQ(reweight(sub, sup, map, ReweightVariant::none, Aggregator::mean), sub);
    const auto m = reweight(sub, sup, map, ReweightVariant::sub_with_agg_sub, Aggregator::mean);
    EXPECT_NEAR(m[0], 0.1 * 0.2, 1e-15);
    EXPECT_NEAR(m[1], 0.3 * 0.2, 1e-15);
    EXPECT_NEAR(m[2], 0.36, 1e-15);
    const auto s = reweight(sub, sup, map, ReweightVariant::sub_with_agg_sub, Aggregator::sum);
    EXPECT_NEAR(s[0], 0.1 * 0.4, 1e-15);
    EXPECT_THROW(reweight(std::vector<double>{0.5, 0.5}, sup, map, ReweightVariant::standard, Aggregator::mean),
                 Error);
    EXPECT_THROW(reweight(sub, std::vector<double>{1.0}, map, ReweightVariant::standard, Aggregator::mean), Error);
}

TEST(PredictChils, IdentityMapMatchesBaseline) {
    const auto texts = testing::random_unit_bundle(4, 6, 11);
    std::vector<LabelMap::Set> sets;
    for (const auto& n : texts.names) sets.push_back({n, {n}});
    const LabelMap map(sets);
    const auto images = testing::random_unit_bundle(100, 6, 12);
    const auto reps = reps_of(texts);
    for (std::size_t i = 0; i < images.count(); ++i) {
        const auto t = predict_chils(images.row(i), map, reps, reps, InferenceConfig{});
        EXPECT_EQ(t.predicted_superclass, t.baseline_superclass);
    }
}

TEST(PredictChils, ZeroSuperclassMassAnnihilates) {
    // Superclass B is nearly orthogonal-opposite to the image so its mass underflows.
    const LabelMap map({{"A", {"a1"}}, {"B", {"b1"}}});
    const auto sub = reps_of({{0.f, 1.f}, {1.f, 0.f}});
    const auto sup = reps_of({{1.f, 0.f}, {-1.f, 0.f}});
    const std::vector<float> img{0.6f, 0.8f};
    InferenceConfig cfg;
    cfg.logit_scale = 1000.0;
    const auto t = predict_chils(img, map, sub, sup, cfg);
    EXPECT_EQ(t.sup_probs[1], 0.0);
    EXPECT_EQ(t.reweighted[1], 0.0);
    EXPECT_EQ(t.predicted_superclass, 0u);
}

TEST(PredictChils, TwoByTwoBruteForce) {
    const LabelMap map({{"A", {"a1", "a2"}}, {"B", {"b1", "b2"}}});
    const std::vector<std::vector<float>> sub_rows{{1.f, 0.f, 0.f, 0.f}, {0.f, 1.f, 0.f, 0.f},
                                                   {0.f, 0.f, 1.f, 0.f}, {0.f, 0.f, 0.f, 1.f}};
    const float h = static_cast<float>(std::sqrt(0.5));
    const std::vector<std::vector<float>> sup_rows{{h, h, 0.f, 0.f}, {0.f, 0.f, h, h}};
    const std::vector<float> img{0.1f, 0.7f, 0.7f, 0.1f};
    InferenceConfig cfg;
    cfg.logit_scale = 10.0;
    const auto sub = oracle::softmax(oracle::logits(img, sub_rows, 10.0));
    const auto sup = oracle::softmax(oracle::logits(img, sup_rows, 10.0));
    const std::pair<ReweightVariant, oracle::Variant> variants[] = {
        {ReweightVariant::standard, oracle::Variant::standard},
        {ReweightVariant::none, oracle::Variant::none},
        {ReweightVariant::sub_with_agg_sub, oracle::Variant::sub_agg},
        {ReweightVariant::agg_sub_with_sup, oracle::Variant::sup_space}};
    for (const auto& [v, ov] : variants) {
        cfg.reweight = v;
        const auto t = predict_chils(img, map, reps_of(sub_rows), reps_of(sup_rows), cfg);
        const auto expect = oracle::scores(sub, sup, {2, 2}, ov, true);
        ASSERT_EQ(t.reweighted.size(), expect.size());
        for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_NEAR(t.reweighted[i], expect[i], 1e-12);
        EXPECT_EQ(t.predicted_superclass, oracle::predicted_superclass(expect, {2, 2}, ov));
    }
}

TEST(PredictChils, RandomAgreesWithOracle) {
    std::mt19937_64 rng(77);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t k = 2 + rng() % 3, dim = 3 + rng() % 8;
        std::vector<LabelMap::Set> sets;
        std::vector<std::size_t> sizes;
        std::size_t total = 0;
        for (std::size_t i = 0; i < k; ++i) {
            const std::size_t m = 1 + rng() % 3;
            LabelMap::Set s{"S" + std::to_string(i), {}};
            for (std::size_t j = 0; j < m; ++j) s.subclasses.push_back("s" + std::to_string(total++));
            sizes.push_back(m);
            sets.push_back(s);
        }
        const LabelMap map(sets);
        const auto sub_b = testing::random_unit_bundle(total, dim, rng());
        const auto sup_b = testing::random_unit_bundle(k, dim, rng());
        const auto img_b = testing::random_unit_bundle(1, dim, rng());
        const std::vector<float> img(img_b.matrix.begin(), img_b.matrix.end());
        const auto sub = oracle::softmax(oracle::logits(img, rows_of(sub_b), 100.0));
        const auto sup = oracle::softmax(oracle::logits(img, rows_of(sup_b), 100.0));
        for (bool mean : {true, false}) {
            InferenceConfig cfg;
            cfg.agg = mean ? Aggregator::mean : Aggregator::sum;
            cfg.reweight = ReweightVariant::sub_with_agg_sub;
            const auto t = predict_chils(img, map, reps_of(sub_b), reps_of(sup_b), cfg);
            const auto expect = oracle::scores(sub, sup, sizes, oracle::Variant::sub_agg, mean);
            for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_NEAR(t.reweighted[i], expect[i], 1e-12);
        }
        const auto t = predict_chils(img, map, reps_of(sub_b), reps_of(sup_b), InferenceConfig{});
        const auto expect = oracle::scores(sub, sup, sizes, oracle::Variant::standard, true);
        EXPECT_EQ(t.predicted_superclass, oracle::predicted_superclass(expect, sizes, oracle::Variant::standard));
        EXPECT_EQ(t.baseline_superclass, oracle::first_max(sup));
    }
}

TEST(PredictChils, Misalignment) {
    const LabelMap map(std::vector<LabelMap::Set>{{"A", {"a1", "a2"}}});
    const auto r = reps_of({{1.f, 0.f}});
    EXPECT_THROW(predict_chils(std::vector<float>{1.f, 0.f}, map, r, r, InferenceConfig{}), Error);
    InferenceConfig bad;
    bad.logit_scale = 0.0;
    EXPECT_THROW(bad.validate(), Error);
}

TEST(PredictChils, BatchIsThreadCountInvariant) {
    const auto sub_b = testing::random_unit_bundle(6, 8, 1);
    const auto sup_b = testing::random_unit_bundle(2, 8, 2);
    const auto images = testing::random_unit_bundle(37, 8, 3);
    const LabelMap map({{"r0", {"r0", "r1", "r2"}}, {"r1", {"r3", "r4", "r5"}}});
    const auto one = predict_chils_batch(images, map, reps_of(sub_b), reps_of(sup_b), InferenceConfig{}, 1);
    for (std::size_t threads : {2u, 3u, 8u, 64u}) {
        EXPECT_EQ(predict_chils_batch(images, map, reps_of(sub_b), reps_of(sup_b), InferenceConfig{}, threads), one);
    }
}

TEST(BestPossible, Examples) {
    const std::vector<std::size_t> labels{0, 1, 2, 3};
    EXPECT_EQ(best_possible(std::vector<std::size_t>{0, 1, 2, 3}, std::vector<std::size_t>{9, 9, 9, 9}, labels), 1.0);
    EXPECT_EQ(best_possible(std::vector<std::size_t>{0, 9, 2, 9}, std::vector<std::size_t>{9, 1, 9, 3}, labels), 1.0);
    EXPECT_EQ(best_possible(std::vector<std::size_t>{0, 9, 9, 9}, std::vector<std::size_t>{9, 1, 2, 9}, labels), 0.75);
    EXPECT_THROW(best_possible(std::vector<std::size_t>{0}, std::vector<std::size_t>{0}, labels), Error);
}

}  // namespace
}  // namespace chils
