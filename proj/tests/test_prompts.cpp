/*
 * Copyright (C) 2026 The chils Authors
 * SPDX-License-Identifier: Apache-2.0
 */

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "chils/prompts.hpp"
#include "test_util.hpp"

namespace chils {
namespace {

using testing::TempDir;

TEST(RenderPrompt, Standard) { EXPECT_EQ(render_prompt("A photo of a {}.", "dog"), "A photo of a dog."); }

TEST(RenderPrompt, WithContext) {
    EXPECT_EQ(render_prompt("A photo of a {}, a type of food.", "pizza"), "A photo of a pizza, a type of food.");
}

TEST(RenderPrompt, PlaceholderCountMustBeOne) {
    EXPECT_THROW(render_prompt("no placeholder", "x"), Error);
    EXPECT_THROW(render_prompt("{} and {}", "x"), Error);
}

TEST(RenderPrompt, ClassNameIsVerbatim) {
    EXPECT_EQ(render_prompt("a {} b", "{}"), "a {} b");
    EXPECT_EQ(render_prompt("{}", "Golden Retriever"), "Golden Retriever");
}

TEST(RenderAll, ClassMajorOrder) {
    const PromptSet ps{{"t1 {}", "t2 {}"}, std::nullopt};
    const auto out = render_all(ps, {"a", "b"});
    const std::vector<RenderedCaption> expected{{0, 0, "t1 a"}, {0, 1, "t2 a"}, {1, 0, "t1 b"}, {1, 1, "t2 b"}};
    EXPECT_EQ(out, expected);
}

TEST(RenderAll, Counts) {
    EXPECT_EQ(render_all({{"x {}", "y {}", "z {}"}, std::nullopt}, {"a", "b"}).size(), 6u);
    EXPECT_EQ(render_all({{"x {}"}, std::nullopt}, {"a"}).size(), 1u);
}

TEST(RenderAll, ContextMarker) {
    const PromptSet ps{{"A photo of a {}, a type of [context]."}, std::string("food")};
    EXPECT_EQ(render_all(ps, {"pizza"})[0].caption, "A photo of a pizza, a type of food.");
    EXPECT_THROW(render_all({{"A photo of a {}, a type of [context]."}, std::nullopt}, {"pizza"}), Error);
}

TEST(PromptSetFile, RoundTrip) {
    TempDir tmp;
    const PromptSet ps{{"A photo of a {}.", "A blurry photo of a {}."}, std::string("food")};
    save_prompt_set(ps, tmp / "a.json");
    const auto loaded = load_prompt_set(tmp / "a.json");
    EXPECT_EQ(loaded.templates, ps.templates);
    EXPECT_EQ(loaded.context, ps.context);
    save_prompt_set(loaded, tmp / "b.json");
    EXPECT_EQ(testing::slurp(tmp / "a.json"), testing::slurp(tmp / "b.json"));
    save_prompt_set({{"{}"}, std::nullopt}, tmp / "c.json");
    EXPECT_FALSE(load_prompt_set(tmp / "c.json").context.has_value());
}

TEST(Aggregate, SingleTemplateIsIdentity) {
    const auto b = testing::random_unit_bundle(3, 5, 1);
    const auto reps = aggregate_prompt_embeddings(b, 3, 1, PromptAggregation::linear_average);
    ASSERT_EQ(reps.rows.size(), b.matrix.size());
    for (std::size_t i = 0; i < b.matrix.size(); ++i) EXPECT_NEAR(reps.rows[i], b.matrix[i], 1e-7);
}

TEST(Aggregate, AntipodalMeanIsDegenerate) {
    const EmbeddingBundle b{2, {"p", "q"}, {1.f, 0.f, -1.f, 0.f}, true};
    try {
        aggregate_prompt_embeddings(b, 1, 2, PromptAggregation::linear_average);
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("degenerate mean"), std::string::npos);
    }
}

TEST(Aggregate, OrthogonalPairAveragesToDiagonal) {
    const EmbeddingBundle b{2, {"p", "q"}, {1.f, 0.f, 0.f, 1.f}, true};
    const auto reps = aggregate_prompt_embeddings(b, 1, 2, PromptAggregation::linear_average);
    EXPECT_NEAR(reps.rows[0], std::sqrt(2.0) / 2, 1e-7);
    EXPECT_NEAR(reps.rows[1], std::sqrt(2.0) / 2, 1e-7);
    const auto raw = aggregate_prompt_embeddings(b, 1, 2, PromptAggregation::linear_average, false);
    EXPECT_EQ(raw.rows, (std::vector<float>{0.5f, 0.5f}));
}

TEST(Aggregate, CountMismatch) {
    EXPECT_THROW(aggregate_prompt_embeddings(testing::random_unit_bundle(5, 3, 2), 2, 2, PromptAggregation::set_based),
                 Error);
}

TEST(Aggregate, SetBasedIsPassthroughWithOwners) {
    const auto b = testing::random_unit_bundle(6, 4, 3);
    const auto reps = aggregate_prompt_embeddings(b, 2, 3, PromptAggregation::set_based);
    EXPECT_EQ(reps.rows, b.matrix);
    EXPECT_EQ(reps.owner, (std::vector<std::size_t>{0, 0, 0, 1, 1, 1}));
    EXPECT_EQ(reps.n_classes, 2u);
}

TEST(Aggregate, UnitNormAndTemplateOrderInvariance) {
    std::mt19937 rng(9);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n_classes = 1 + rng() % 4, n_templates = 1 + rng() % 6, dim = 2 + rng() % 10;
        const auto b = testing::random_unit_bundle(n_classes * n_templates, dim, rng());
        const auto reps = aggregate_prompt_embeddings(b, n_classes, n_templates, PromptAggregation::linear_average);
        for (std::size_t c = 0; c < n_classes; ++c) EXPECT_NEAR(l2_norm(reps.row(c)), 1.0, 1e-6);

        std::vector<std::size_t> perm(n_templates);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        EmbeddingBundle shuffled = b;
        for (std::size_t c = 0; c < n_classes; ++c) {
            for (std::size_t t = 0; t < n_templates; ++t) {
                const auto src = b.row(c * n_templates + perm[t]);
                std::copy(src.begin(), src.end(), shuffled.row(c * n_templates + t).begin());
            }
        }
        const auto reps2 =
            aggregate_prompt_embeddings(shuffled, n_classes, n_templates, PromptAggregation::linear_average);
        for (std::size_t i = 0; i < reps.rows.size(); ++i) EXPECT_NEAR(reps.rows[i], reps2.rows[i], 1e-7);
    }
}

TEST(Reps, LookupByName) {
    const EmbeddingBundle b{2, {"dog", "cat"}, {1.f, 0.f, 0.f, 1.f}, true};
    const auto reps = reps_from_bundle(b, {"cat", "dog", "cat"});
    EXPECT_EQ(reps.rows, (std::vector<float>{0.f, 1.f, 1.f, 0.f, 0.f, 1.f}));
    try {
        reps_from_bundle(b, {"fish"}, "superclass text bundle");
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("\"fish\""), std::string::npos);
    }
}

TEST(Reps, FromCaptions) {
    const PromptSet ps{{"a {}", "b {}"}, std::nullopt};
    const EmbeddingBundle caps{2, {"b dog", "a dog", "a cat", "b cat"}, {0.f, 1.f, 1.f, 0.f, 1.f, 0.f, 1.f, 0.f}, true};
    const auto set = reps_from_captions(caps, ps, {"dog", "cat"}, PromptAggregation::set_based);
    EXPECT_EQ(set.rows, (std::vector<float>{1.f, 0.f, 0.f, 1.f, 1.f, 0.f, 1.f, 0.f}));
    const auto lin = reps_from_captions(caps, ps, {"dog", "cat"}, PromptAggregation::linear_average);
    EXPECT_NEAR(lin.rows[0], std::sqrt(0.5), 1e-7);
    EXPECT_EQ(lin.rows[2], 1.f);
    EXPECT_THROW(reps_from_captions(caps, ps, {"fish"}, PromptAggregation::set_based), Error);
}

TEST(Reps, AverageSubclassReps) {
    const LabelMap map({{"A", {"a1", "a2"}}, {"B", {"b1"}}});
    ClassTextReps sub{2, 3, {1.f, 0.f, 0.f, 1.f, -1.f, 0.f}, {0, 1, 2}};
    const auto avg = average_subclass_reps(map, sub);
    ASSERT_EQ(avg.n_classes, 2u);
    EXPECT_NEAR(avg.rows[0], std::sqrt(0.5), 1e-7);
    EXPECT_NEAR(avg.rows[1], std::sqrt(0.5), 1e-7);
    EXPECT_EQ(avg.rows[2], -1.f);
}

}  // namespace
}  // namespace chils
