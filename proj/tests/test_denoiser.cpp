#include "asyncdiff/denoiser.hpp"
#include "asyncdiff/partition.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <cmath>
#include <set>

using namespace asyncdiff;
using namespace asyncdiff::testutil;

namespace {

LayeredDenoiser zero_model(int L, const std::vector<int>& widths,
                           std::vector<std::pair<int, int>> links, int embed = 2) {
    return make_denoiser_shell(L, widths, std::move(links), embed);
}

bool params_equal(const LayeredDenoiser& a, const LayeredDenoiser& b) {
    if (a.time_embed.proj != b.time_embed.proj) return false;
    if (a.stages.size() != b.stages.size()) return false;
    for (size_t i = 0; i < a.stages.size(); ++i) {
        if (a.stages[i].w1 != b.stages[i].w1) return false;
        if (a.stages[i].b1 != b.stages[i].b1) return false;
        if (a.stages[i].time_in != b.stages[i].time_in) return false;
        if (a.stages[i].w2 != b.stages[i].w2) return false;
        if (a.stages[i].b2 != b.stages[i].b2) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("build_toy_denoiser: skip specs") {
    auto none = build_toy_denoiser(4, {2, 8, 8, 8, 2}, SkipSpec::None, 1);
    CHECK(none.skip_links.empty());

    auto mirror = build_toy_denoiser(6, {2, 8, 8, 8, 8, 8, 2}, SkipSpec::UnetMirror, 1);
    std::vector<std::pair<int, int>> expected{{1, 6}, {2, 5}, {3, 4}};
    CHECK(mirror.skip_links == expected);

    auto odd = build_toy_denoiser(5, {2, 8, 8, 8, 8, 2}, SkipSpec::UnetMirror, 1);
    std::vector<std::pair<int, int>> expected_odd{{1, 5}, {2, 4}};  // no self-pair
    CHECK(odd.skip_links == expected_odd);
}

TEST_CASE("build_toy_denoiser: determinism and parameter errors") {
    auto a = build_toy_denoiser(4, {2, 8, 6, 8, 2}, SkipSpec::UnetMirror, 42);
    auto b = build_toy_denoiser(4, {2, 8, 6, 8, 2}, SkipSpec::UnetMirror, 42);
    CHECK(params_equal(a, b));
    auto c = build_toy_denoiser(4, {2, 8, 6, 8, 2}, SkipSpec::UnetMirror, 43);
    CHECK(!params_equal(a, c));

    CHECK_THROWS_AS(build_toy_denoiser(1, {2, 2}, SkipSpec::None, 1), std::invalid_argument);
    CHECK_THROWS_AS(build_toy_denoiser(4, {2, 8, 8, 2}, SkipSpec::None, 1),
                    std::invalid_argument);  // widths length != L+1
    CHECK_THROWS_AS(build_toy_denoiser(4, {2, 8, 8, 8, 3}, SkipSpec::None, 1),
                    std::invalid_argument);  // widths[0] != widths[L]
}

TEST_CASE("stage widths account for concat inputs") {
    auto m = build_toy_denoiser(6, {2, 8, 8, 8, 8, 8, 2}, SkipSpec::UnetMirror, 1, 8);
    CHECK(m.stages[0].in_width() == 2 + 8);  // x ++ time embedding
    CHECK(m.stages[3].in_width() == 8 + 8);  // stage 4 consumes (3,4)
    CHECK(m.stages[5].in_width() == 8 + 8);  // stage 6 consumes (1,6)
    for (const Stage& s : m.stages) CHECK(s.cost_macs > 0);
}

TEST_CASE("eval_full: hand-computed 2x2 case") {
    // zero time embedding; positive activations keep the leaky relu linear
    auto m = zero_model(2, {2, 2, 2}, {});
    m.stages[0].w1 << 1, 0, 0, 0,  // picks out x
                      0, 1, 0, 0;
    m.stages[0].w2 << 2, 0,
                      0, 3;
    m.stages[1].w1 << 1, 1,
                      0, 1;
    m.stages[1].w2 << 0.5, 0,
                      0, 0.5;
    Latent x{Vec(2), 1};
    x.values << 1.0, 2.0;
    Vec out = eval_full(m, x, 1);
    // stage1: h=(1,2), y=(2,6); stage2: z=(8,6), y=(4,3)
    CHECK(out[0] == doctest::Approx(4.0).epsilon(1e-15));
    CHECK(out[1] == doctest::Approx(3.0).epsilon(1e-15));
}

TEST_CASE("eval_full: zero weights give zero output") {
    auto m = zero_model(3, {2, 4, 4, 2}, {{1, 3}});
    Latent x{Vec(2), 5};
    x.values << -3.0, 7.0;
    Vec out = eval_full(m, x, 5);
    CHECK(out.norm() == 0.0);
}

TEST_CASE("eval_full: non-finite activation names the stage") {
    auto m = build_toy_denoiser(3, {2, 4, 4, 2}, SkipSpec::None, 9);
    m.stages[1].w2(0, 0) = std::numeric_limits<double>::infinity();
    Latent x{Vec::Ones(2), 1};
    CHECK_THROWS_WITH_AS(eval_full(m, x, 1), doctest::Contains("stage 2"),
                         std::domain_error);
}

TEST_CASE("segment chaining reproduces eval_full bit-exactly") {
    Rng rng(77);
    for (int rep = 0; rep < 10; ++rep) {
        auto m = build_toy_denoiser(6, {2, 8, 6, 10, 6, 8, 2}, SkipSpec::UnetMirror,
                                    1000 + static_cast<uint64_t>(rep));
        Partition p = partition_balanced(m, 3, PartitionStrategy::SequentialBalanced);
        Latent x{random_vec(rng, 2), 7};
        int t = 1 + static_cast<int>(rng.below(20));

        Vec whole = eval_full(m, x, t);

        SkipMap skips;
        SegmentOutput so = eval_segment(m, p, 1, x, skips, t);
        for (int seg = 2; seg <= 3; ++seg) {
            const HiddenBundle& b = std::get<HiddenBundle>(so);
            CHECK(b.produced_by == seg - 1);
            CHECK(b.produced_at == t);
            for (const auto& [link, f] : b.skips) skips[link] = f;
            so = eval_segment(m, p, seg, b, skips, t);
        }
        Vec chained = std::get<Vec>(so);
        CHECK(bits_equal(whole, chained));
    }
}

TEST_CASE("eval_segment: N=1 partition equals eval_full") {
    auto m = build_toy_denoiser(4, {2, 6, 6, 6, 2}, SkipSpec::UnetMirror, 3);
    Partition p = partition_balanced(m, 1, PartitionStrategy::SequentialBalanced);
    Rng rng(8);
    Latent x{random_vec(rng, 2), 4};
    SegmentOutput so = eval_segment(m, p, 1, x, {}, 4);
    CHECK(bits_equal(std::get<Vec>(so), eval_full(m, x, 4)));
}

TEST_CASE("eval_segment: stale bundles are legal") {
    auto m = build_toy_denoiser(4, {2, 6, 6, 6, 2}, SkipSpec::None, 3);
    Partition p = partition_balanced(m, 2, PartitionStrategy::SequentialBalanced);
    Rng rng(9);
    Latent x{random_vec(rng, 2), 9};

    auto b9 = std::get<HiddenBundle>(eval_segment(m, p, 1, x, {}, 9));
    CHECK(b9.produced_at == 9);
    // consume at a different embedding timestep
    SegmentOutput so = eval_segment(m, p, 2, b9, {}, 8);
    Vec eps = std::get<Vec>(so);
    CHECK(eps.allFinite());
}

TEST_CASE("eval_segment: input contract errors") {
    auto m = build_toy_denoiser(4, {2, 6, 6, 6, 2}, SkipSpec::None, 3);
    Partition p = partition_balanced(m, 2, PartitionStrategy::SequentialBalanced);
    Latent x{Vec::Ones(2), 4};

    CHECK_THROWS_AS(eval_segment(m, p, 2, x, {}, 4), std::invalid_argument);

    auto b = std::get<HiddenBundle>(eval_segment(m, p, 1, x, {}, 4));
    CHECK_THROWS_AS(eval_segment(m, p, 1, b, {}, 4), std::invalid_argument);

    HiddenBundle wrong = b;
    wrong.produced_by = 2;
    CHECK_THROWS_WITH_AS(eval_segment(m, p, 2, wrong, {}, 4),
                         doctest::Contains("segment"), std::invalid_argument);
}

TEST_CASE("eval_segment: missing crossing skip feature identifies the link") {
    auto m = build_toy_denoiser(6, {2, 8, 8, 8, 8, 8, 2}, SkipSpec::UnetMirror, 5);
    Partition p = partition_balanced(m, 3, PartitionStrategy::SequentialBalanced);
    // segments are {1,2} {3,4} {5,6}; both (1,6) and (2,5) originate in segment 1
    REQUIRE(p.segments[0] == std::vector<int>{1, 2});
    Latent x{Vec::Ones(2), 3};
    auto b1 = std::get<HiddenBundle>(eval_segment(m, p, 1, x, {}, 3));
    CHECK(b1.skips.size() == 2);
    // segment 2 only consumes its internal (3,4) link, so empty skips are fine
    auto b2 = std::get<HiddenBundle>(eval_segment(m, p, 2, b1, {}, 3));
    CHECK(b2.skips.empty());
    // withholding segment 1's crossing features from segment 3 names the link
    CHECK_THROWS_WITH_AS(eval_segment(m, p, 3, b2, {}, 3), doctest::Contains("->"),
                         std::runtime_error);
}

TEST_CASE("skip completeness: bundles cover crossing links exactly once") {
    auto m = build_toy_denoiser(6, {2, 8, 8, 8, 8, 8, 2}, SkipSpec::UnetMirror, 5);
    for (int N : {2, 3, 4, 5}) {
        Partition p = partition_balanced(m, N, PartitionStrategy::SequentialBalanced);
        Latent x{Vec::Ones(2), 3};

        std::multiset<std::pair<int, int>> seen;
        SkipMap skips;
        SegmentOutput so = eval_segment(m, p, 1, x, skips, 3);
        for (int seg = 2; seg <= N; ++seg) {
            const HiddenBundle& b = std::get<HiddenBundle>(so);
            for (const auto& [link, f] : b.skips) {
                seen.insert(link);
                skips[link] = f;
            }
            so = eval_segment(m, p, seg, b, skips, 3);
        }
        auto crossing = crossing_links(m, p);
        std::multiset<std::pair<int, int>> expected(crossing.begin(), crossing.end());
        CHECK(seen == expected);
    }
}

TEST_CASE("sinusoid embedding is deterministic in t and bounded") {
    Vec a = TimeEmbedding::sinusoid(7, 8);
    Vec b = TimeEmbedding::sinusoid(7, 8);
    CHECK(bits_equal(a, b));
    CHECK(a.cwiseAbs().maxCoeff() <= 1.0);
    Vec c = TimeEmbedding::sinusoid(8, 8);
    CHECK(!bits_equal(a, c));
}
