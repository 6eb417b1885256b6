// Copyright (C) 2026 The amk authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <numeric>

#include "amk/attention_math.hpp"
#include "amk/error.hpp"
#include "support.hpp"

using namespace amk;
using namespace amk::test;

namespace {

TokenLayout layout_2x3() {
    TokenLayout l;
    l.text_tokens = 1;
    l.image_tokens = 2;
    l.heads = 2;
    l.head_dim = 3;
    return l;
}

FeatureBlock scaled(const FeatureBlock& b, float s) {
    FeatureBlock out = b;
    for (float& x : out.values()) x *= s;
    return out;
}

SiteFeatureMap single_site(const FeatureBlock& k, const FeatureBlock& v) { return {{SiteKey{0, 0}, KeyValue{k, v}}}; }

}  // namespace

TEST_CASE("layout validation rejects zero counts") {
    TokenLayout l = layout_2x3();
    CHECK_NOTHROW(l.validate());
    l.heads = 0;
    CHECK_THROWS_AS(l.validate(), ContractError);
}

TEST_CASE("feature block rejects a value count that disagrees with the layout") {
    CHECK_THROWS_AS(FeatureBlock(layout_2x3(), std::vector<float>(5)), ContractError);
}

TEST_CASE("alpha matches the reference on random blocks") {
    Rng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        const TokenLayout l = random_layout(rng);
        const FeatureBlock inv = random_block(l, rng);
        const FeatureBlock ed = random_nondegenerate_block(l, rng);
        CHECK(max_abs_diff(compute_alpha(inv, ed).values(), oracle::alpha(inv, ed)) <= 1e-5);
    }
}

TEST_CASE("alpha hand-computed example") {
    TokenLayout l;
    l.text_tokens = 1;
    l.image_tokens = 1;
    l.heads = 1;
    l.head_dim = 2;
    // token 0: <(2,0),(1,0)> / 1 = 2; token 1: <(1,1),(0,2)> / 4 = 0.5
    const FeatureBlock inv(l, {2, 0, 1, 1});
    const FeatureBlock ed(l, {1, 0, 0, 2});
    const AlphaField a = compute_alpha(inv, ed);
    CHECK(a.at(0, 0) == 2.0f);
    CHECK(a.at(0, 1) == 0.5f);
}

TEST_CASE("degenerate edit token yields alpha one") {
    const TokenLayout l = layout_2x3();
    Rng rng(3);
    const FeatureBlock inv = random_block(l, rng);
    FeatureBlock ed = random_nondegenerate_block(l, rng);
    for (float& x : ed.token(1, 2)) x = 0.0f;
    for (float& x : ed.token(0, 1)) x = 1e-7f;  // squared norm 3e-14
    const AlphaField a = compute_alpha(inv, ed);
    CHECK(a.at(1, 2) == 1.0f);
    CHECK(a.at(0, 1) == 1.0f);
    CHECK(project_value(inv, ed, false).all_finite());
}

TEST_CASE("alpha is one when both branches agree and zero for orthogonal tokens") {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const TokenLayout l = random_layout(rng);
        const FeatureBlock v = random_nondegenerate_block(l, rng);
        const AlphaField a = compute_alpha(v, v);
        for (float x : a.values()) CHECK(x == doctest::Approx(1.0).epsilon(1e-6));
    }
    TokenLayout l;
    l.text_tokens = 1;
    l.image_tokens = 1;
    l.heads = 1;
    l.head_dim = 2;
    const FeatureBlock inv(l, {0, 3, -1, 1});
    const FeatureBlock ed(l, {2, 0, 1, 1});
    const AlphaField a = compute_alpha(inv, ed);
    for (float x : a.values()) CHECK(x == 0.0f);
}

TEST_CASE("projection is invariant to rescaling the edit value") {
    Rng rng(17);
    for (int trial = 0; trial < 50; ++trial) {
        const TokenLayout l = random_layout(rng);
        const FeatureBlock inv = random_block(l, rng);
        const FeatureBlock ed = random_nondegenerate_block(l, rng);
        const float s = static_cast<float>(uniform(rng, 0.25, 4.0));
        const FeatureBlock p1 = project_value(inv, ed, false);
        const FeatureBlock p2 = project_value(inv, scaled(ed, s), false);
        for (std::size_t i = 0; i < p1.size(); ++i)
            CHECK(p2.values()[i] == doctest::Approx(p1.values()[i]).epsilon(1e-5).scale(1.0));
    }
}

TEST_CASE("projection is idempotent") {
    Rng rng(19);
    for (int trial = 0; trial < 50; ++trial) {
        const TokenLayout l = random_layout(rng);
        const FeatureBlock inv = random_block(l, rng);
        const FeatureBlock ed = random_nondegenerate_block(l, rng);
        const FeatureBlock p = project_value(inv, ed, false);
        // Projecting v_inv onto span(p) again gives p (where p is non-degenerate).
        const FeatureBlock pp = project_value(inv, p, false);
        const auto a = compute_alpha(inv, ed);
        for (std::size_t h = 0; h < l.heads; ++h)
            for (std::size_t i = 0; i < l.total_tokens(); ++i) {
                if (std::abs(a.at(h, i)) < 1e-2f) continue;
                for (std::size_t c = 0; c < l.head_dim; ++c)
                    CHECK(pp.at(h, i, c) == doctest::Approx(p.at(h, i, c)).epsilon(1e-4).scale(1.0));
            }
    }
}

TEST_CASE("projection with and without masking matches the reference") {
    Rng rng(23);
    for (int trial = 0; trial < 100; ++trial) {
        const TokenLayout l = random_layout(rng);
        const FeatureBlock inv = random_block(l, rng);
        const FeatureBlock ed = random_nondegenerate_block(l, rng);
        CHECK(max_abs_diff(project_value(inv, ed, false).values(), oracle::project(inv, ed, false)) <= 1e-5);
        CHECK(max_abs_diff(project_value(inv, ed, true).values(), oracle::project(inv, ed, true)) <= 1e-5);
    }
}

TEST_CASE("text masking pins text tokens and leaves image tokens") {
    Rng rng(29);
    for (int trial = 0; trial < 50; ++trial) {
        const TokenLayout l = random_layout(rng);
        const AlphaField raw = compute_alpha(random_block(l, rng), random_nondegenerate_block(l, rng));
        const AlphaField masked = mask_text_alpha(raw);
        for (std::size_t h = 0; h < l.heads; ++h)
            for (std::size_t i = 0; i < l.total_tokens(); ++i)
                CHECK(masked.at(h, i) == (l.is_text(i) ? 1.0f : raw.at(h, i)));
        CHECK(mask_text_alpha(masked) == masked);
    }
}

TEST_CASE("masked projection keeps text rows of the edit value bit-exact") {
    Rng rng(31);
    const TokenLayout l = layout_2x3();
    const FeatureBlock inv = random_block(l, rng);
    const FeatureBlock ed = random_nondegenerate_block(l, rng);
    const FeatureBlock p = project_value(inv, ed, true);
    for (std::size_t h = 0; h < l.heads; ++h)
        for (std::size_t c = 0; c < l.head_dim; ++c) CHECK(p.at(h, 0, c) == ed.at(h, 0, c));
}

TEST_CASE("alpha clamp bounds coefficients") {
    TokenLayout l;
    l.text_tokens = 1;
    l.image_tokens = 1;
    l.heads = 1;
    l.head_dim = 1;
    const FeatureBlock inv(l, {10, -10});
    const FeatureBlock ed(l, {1, 1});
    const AlphaField a = clamp_alpha(compute_alpha(inv, ed), AlphaClamp{-1, 1});
    CHECK(a.at(0, 0) == 1.0f);
    CHECK(a.at(0, 1) == -1.0f);
    CHECK(project_value(inv, ed, false, AlphaClamp{-2, 2}).values()[0] == 2.0f);
}

TEST_CASE("alignment rows are stochastic and match the reference") {
    Rng rng(37);
    for (int trial = 0; trial < 100; ++trial) {
        const TokenLayout l = random_layout(rng);
        const FeatureBlock ke = random_block(l, rng, 3.0);
        const FeatureBlock ki = random_block(l, rng, 3.0);
        const auto a = key_alignment(ke, ki);
        const auto ref = oracle::alignment(ke, ki);
        REQUIRE(a.size() == l.heads);
        const std::size_t n = l.total_tokens();
        for (std::size_t h = 0; h < l.heads; ++h) {
            CHECK(max_abs_diff(a[h], ref[h]) <= 1e-6);
            for (std::size_t i = 0; i < n; ++i) {
                double sum = 0;
                for (std::size_t j = 0; j < n; ++j) {
                    CHECK(a[h][i * n + j] >= 0.0f);
                    sum += a[h][i * n + j];
                }
                CHECK(std::abs(sum - 1.0) <= 1e-6);
            }
        }
    }
}

TEST_CASE("alignment survives large logits") {
    const TokenLayout l = layout_2x3();
    Rng rng(41);
    const auto a = key_alignment(random_block(l, rng, 200.0), random_block(l, rng, 200.0));
    for (const auto& head : a)
        for (float x : head) CHECK(std::isfinite(x));
}

TEST_CASE("key modulation: reference, g = 0 identity, linearity in g") {
    Rng rng(43);
    for (int trial = 0; trial < 100; ++trial) {
        const TokenLayout l = random_layout(rng);
        const FeatureBlock ke = random_block(l, rng);
        const FeatureBlock ki = random_block(l, rng);
        const double g = uniform(rng, -2, 2);
        CHECK(max_abs_diff(modulate_key(ke, ki, static_cast<float>(g)).values(), oracle::modulate(ke, ki, g)) <=
              1e-5);
        CHECK(modulate_key(ke, ki, 0.0f) == ke);

        // K(g1 + g2) - K_edit = (K(g1) - K_edit) + (K(g2) - K_edit)
        const FeatureBlock k1 = modulate_key(ke, ki, 0.5f);
        const FeatureBlock k2 = modulate_key(ke, ki, 1.5f);
        const FeatureBlock k3 = modulate_key(ke, ki, 2.0f);
        for (std::size_t i = 0; i < ke.size(); ++i) {
            const double lhs = double(k3.values()[i]) - ke.values()[i];
            const double rhs = (double(k1.values()[i]) - ke.values()[i]) + (double(k2.values()[i]) - ke.values()[i]);
            CHECK(std::abs(lhs - rhs) <= 1e-6 * std::max(1.0, std::abs(lhs)) + 1e-6);
        }
    }
}

TEST_CASE("mismatched layouts are contract errors") {
    TokenLayout a = layout_2x3();
    TokenLayout b = a;
    b.head_dim = 4;
    CHECK_THROWS_AS(compute_alpha(FeatureBlock(a), FeatureBlock(b)), ContractError);
    CHECK_THROWS_AS(modulate_key(FeatureBlock(a), FeatureBlock(b), 1.0f), ContractError);
}

TEST_CASE("age weight endpoints, midpoint and extrapolation") {
    CHECK(age_weight(30, 30, 70) == 0.0f);
    CHECK(age_weight(70, 30, 70) == 1.0f);
    CHECK(age_weight(50, 30, 70) == 0.5f);
    CHECK(age_weight(90, 30, 70) == 1.5f);
    CHECK(age_weight(20, 30, 70) == -0.25f);
    CHECK(age_weight(90, 30, 70, true) == 1.0f);
    CHECK(age_weight(20, 30, 70, true) == 0.0f);
    CHECK_THROWS_AS(age_weight(50, 40, 40), ContractError);
}

TEST_CASE("age weight is affine in the target age") {
    Rng rng(47);
    for (int trial = 0; trial < 100; ++trial) {
        const double lo = uniform(rng, 10, 50), hi = lo + uniform(rng, 5, 50);
        const double a = uniform(rng, 0, 100), b = uniform(rng, 0, 100);
        const double wa = age_weight(float(a), float(lo), float(hi));
        const double wb = age_weight(float(b), float(lo), float(hi));
        const double wm = age_weight(float((a + b) / 2), float(lo), float(hi));
        CHECK(wm == doctest::Approx((wa + wb) / 2).epsilon(1e-5).scale(1.0));
        CHECK(wa == doctest::Approx(oracle::weight(float(a), float(lo), float(hi))).epsilon(1e-5).scale(1.0));
    }
}

TEST_CASE("aging direction: reference, antisymmetry, permutation and shift invariance") {
    Rng rng(53);
    for (int trial = 0; trial < 50; ++trial) {
        const TokenLayout l = random_layout(rng);
        const std::size_t n_old = pick(rng, 1, 4), n_young = pick(rng, 1, 4);
        std::vector<FeatureBlock> ok, ov, yk, yv;
        std::vector<SiteFeatureMap> old_maps, young_maps;
        for (std::size_t i = 0; i < n_old; ++i) {
            ok.push_back(random_block(l, rng));
            ov.push_back(random_block(l, rng));
            old_maps.push_back(single_site(ok.back(), ov.back()));
        }
        for (std::size_t i = 0; i < n_young; ++i) {
            yk.push_back(random_block(l, rng));
            yv.push_back(random_block(l, rng));
            young_maps.push_back(single_site(yk.back(), yv.back()));
        }
        const AgingDirection d = compute_aging_direction(old_maps, young_maps);
        const KeyValue& delta = d.deltas.at(SiteKey{0, 0});
        CHECK(max_abs_diff(delta.k.values(), oracle::direction(ok, yk)) <= 1e-5);
        CHECK(max_abs_diff(delta.v.values(), oracle::direction(ov, yv)) <= 1e-5);

        const AgingDirection r = compute_aging_direction(young_maps, old_maps);
        const KeyValue& rd = r.deltas.at(SiteKey{0, 0});
        for (std::size_t i = 0; i < delta.k.size(); ++i) {
            CHECK(rd.k.values()[i] == -delta.k.values()[i]);
            CHECK(rd.v.values()[i] == -delta.v.values()[i]);
        }

        std::vector<SiteFeatureMap> shuffled = old_maps;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        const AgingDirection p = compute_aging_direction(shuffled, young_maps);
        CHECK(max_abs_diff(p.deltas.at(SiteKey{0, 0}).k.values(), delta.k.values()) <= 1e-6);

        // A common offset added to every member cancels.
        const FeatureBlock off = random_block(l, rng);
        auto add = [&](std::vector<SiteFeatureMap> maps) {
            for (auto& m : maps)
                for (auto& [site, kv] : m)
                    for (std::size_t i = 0; i < kv.k.size(); ++i) kv.k.values()[i] += off.values()[i];
            return maps;
        };
        const AgingDirection s = compute_aging_direction(add(old_maps), add(young_maps));
        CHECK(max_abs_diff(s.deltas.at(SiteKey{0, 0}).k.values(), delta.k.values()) <= 1e-5);
    }
}

TEST_CASE("identical clusters give a zero direction") {
    Rng rng(59);
    const TokenLayout l = layout_2x3();
    const std::vector<SiteFeatureMap> c = {single_site(random_block(l, rng), random_block(l, rng)),
                                           single_site(random_block(l, rng), random_block(l, rng))};
    const AgingDirection d = compute_aging_direction(c, c);
    const KeyValue& delta = d.deltas.at(SiteKey{0, 0});
    for (float x : delta.k.values()) CHECK(x == 0.0f);
}

TEST_CASE("direction requires matching sites and non-empty clusters") {
    Rng rng(61);
    const TokenLayout l = layout_2x3();
    const FeatureBlock b = random_block(l, rng);
    std::vector<SiteFeatureMap> a = {single_site(b, b)};
    std::vector<SiteFeatureMap> other = {{{SiteKey{1, 0}, KeyValue{b, b}}}};
    CHECK_THROWS_AS(compute_aging_direction(a, other), ContractError);
    CHECK_THROWS_AS(compute_aging_direction(a, std::vector<SiteFeatureMap>{}), ContractError);
}

TEST_CASE("applying a direction: reference, w = 0 identity, composition") {
    Rng rng(67);
    for (int trial = 0; trial < 100; ++trial) {
        const TokenLayout l = random_layout(rng);
        const FeatureBlock k = random_block(l, rng), v = random_block(l, rng);
        const KeyValue delta{random_block(l, rng), random_block(l, rng)};
        const double w = uniform(rng, -1.5, 1.5);
        const auto [k2, v2] = apply_aging_direction(k, v, delta, static_cast<float>(w));
        CHECK(max_abs_diff(k2.values(), oracle::shift(k, delta.k, w)) <= 1e-5);
        CHECK(max_abs_diff(v2.values(), oracle::shift(v, delta.v, w)) <= 1e-5);

        const auto [k0, v0] = apply_aging_direction(k, v, delta, 0.0f);
        CHECK(k0 == k);
        CHECK(v0 == v);

        const float w1 = static_cast<float>(uniform(rng, -1, 1)), w2 = static_cast<float>(uniform(rng, -1, 1));
        const auto [ka, va] = apply_aging_direction(k, v, delta, w1);
        const auto [kb, vb] = apply_aging_direction(ka, va, delta, w2);
        const auto [kc, vc] = apply_aging_direction(k, v, delta, w1 + w2);
        CHECK(max_abs_diff(kb.values(), kc.values()) <= 1e-5);
        CHECK(max_abs_diff(vb.values(), vc.values()) <= 1e-5);
    }
}
