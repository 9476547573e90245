#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include <cadenza/metrics.hpp>
#include <cadenza/rng.hpp>

using namespace cadenza;
using namespace cadenza::metrics;

namespace {

midi::Score score_from(std::vector<midi::NoteEvent> notes, int tpq = 480) {
    midi::Score s;
    s.ticks_per_quarter = tpq;
    s.notes = std::move(notes);
    midi::normalize(s);
    return s;
}

} // namespace

TEST_CASE("cosine similarity fixture: [2,1,0] vs [1,1,0] -> 94.868") {
    AttributeVector a{AttributeKind::Pitch, {2, 1, 0}};
    AttributeVector b{AttributeKind::Pitch, {1, 1, 0}};
    // 100 * 3 / (sqrt(5) * sqrt(2)) = 94.8683...
    CHECK(cosine_similarity(a, b) == doctest::Approx(94.868).epsilon(1e-5));
    CHECK(cosine_similarity(a, a) == doctest::Approx(100.0).epsilon(1e-12));
    // symmetric
    CHECK(cosine_similarity(a, b) == cosine_similarity(b, a));
}

TEST_CASE("cosine similarity errors on zero vectors and length mismatch") {
    AttributeVector z{AttributeKind::Pitch, {0, 0, 0}};
    AttributeVector a{AttributeKind::Pitch, {1, 0, 0}};
    CHECK_THROWS_AS(cosine_similarity(z, a), std::invalid_argument);
    CHECK_THROWS_AS(cosine_similarity(a, z), std::invalid_argument);
    AttributeVector shorter{AttributeKind::Pitch, {1, 0}};
    CHECK_THROWS_AS(cosine_similarity(a, shorter), std::invalid_argument);
}

TEST_CASE("onset slots: round half up to 16ths, modulo 4 bars") {
    // TPQ 480: one 16th = 120 ticks
    CHECK(onset_slot(0, 480) == 0);
    CHECK(onset_slot(59, 480) == 0);   // below halfway
    CHECK(onset_slot(60, 480) == 1);   // exactly halfway rounds up
    CHECK(onset_slot(120, 480) == 1);
    CHECK(onset_slot(489, 480) == 4);  // just past beat 2
    CHECK(onset_slot(64 * 120, 480) == 0); // wraps after 4 bars
    CHECK(onset_slot(65 * 120, 480) == 1);
}

TEST_CASE("duration slots clamp to [0, 63]") {
    CHECK(duration_slot(120, 480) == 1);
    CHECK(duration_slot(50, 480) == 0);
    CHECK(duration_slot(100000, 480) == 63);
}

TEST_CASE("attribute vectors count notes into the right bins") {
    auto s = score_from({{60, 0, 120, 90}, {60, 480, 240, 90}, {72, 489, 120, 90}});
    auto pitch = attribute_vector(s, AttributeKind::Pitch);
    REQUIRE(pitch.values.size() == 128);
    CHECK(pitch.values[60] == 2);
    CHECK(pitch.values[72] == 1);
    long total = 0;
    for (long v : pitch.values) total += v;
    CHECK(total == 3);

    auto onset = attribute_vector(s, AttributeKind::Onset);
    REQUIRE(onset.values.size() == 64);
    CHECK(onset.values[0] == 1);
    CHECK(onset.values[4] == 2); // 480 and 489 share slot 4

    auto dur = attribute_vector(s, AttributeKind::Duration);
    REQUIRE(dur.values.size() == 64);
    CHECK(dur.values[1] == 2);
    CHECK(dur.values[2] == 1);
}

TEST_CASE("absolute similarity: exact fraction matched, one-to-one") {
    auto src = score_from({{60, 0, 120, 90}, {64, 480, 120, 90}});
    CHECK(absolute_similarity(src, src) == doctest::Approx(100.0));
    // half of the generated notes match
    auto gen = score_from({{60, 0, 120, 70}, {65, 480, 120, 70}});
    CHECK(absolute_similarity(gen, src) == doctest::Approx(50.0));
    // duplicates cannot double-claim one source note
    auto dupes = score_from({{60, 0, 120, 70}, {60, 0, 120, 80}});
    CHECK(absolute_similarity(dupes, src) == doctest::Approx(50.0));
    // empty generation scores zero
    midi::Score empty;
    empty.ticks_per_quarter = 480;
    CHECK(absolute_similarity(empty, src) == 0.0);
}

TEST_CASE("microtiming bins: +15 ticks at TPQ 480 lands in the +12.5% bin") {
    // 15/120 = +12.5% of a 16th -> floor(12.5)+50 = bin 62
    auto s = score_from({{60, 480 + 15, 120, 90}});
    auto h = expression_histograms(s, 480);
    REQUIRE(h.microtiming.size() == 100);
    CHECK(h.microtiming[62] == 1);
    long total = 0;
    for (long v : h.microtiming) total += v;
    CHECK(total == 1);

    // on-grid note sits in the zero-deviation bin (50)
    auto on_grid = expression_histograms(score_from({{60, 480, 120, 90}}), 480);
    CHECK(on_grid.microtiming[50] == 1);
    // -15 ticks -> floor(-12.5)+50 = bin 37
    auto neg = expression_histograms(score_from({{60, 480 - 15, 120, 90}}), 480);
    CHECK(neg.microtiming[37] == 1);
}

TEST_CASE("velocity histogram counts raw values") {
    auto h = expression_histograms(score_from({{60, 0, 120, 100}, {62, 120, 120, 100},
                                               {64, 240, 120, 64}}),
                                   480);
    REQUIRE(h.velocity.size() == 128);
    CHECK(h.velocity[100] == 2);
    CHECK(h.velocity[64] == 1);
}

TEST_CASE("accumulate adds counts, and initializes from empty") {
    ExpressionHistogram total;
    auto a = expression_histograms(score_from({{60, 0, 120, 90}}), 480);
    auto b = expression_histograms(score_from({{60, 0, 120, 90}}), 480);
    accumulate(total, a);
    accumulate(total, b);
    CHECK(total.velocity[90] == 2);
    CHECK(total.microtiming[50] == 2);
}

TEST_CASE("histogram divergence: zero for identical, asymmetric, errors on empty") {
    std::vector<long> p = {10, 20, 5, 0};
    std::vector<long> q = {2, 30, 1, 4};
    auto same = histogram_divergence(p, p);
    CHECK(same.kl == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(same.mean_delta == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(same.std_delta == doctest::Approx(0.0).epsilon(1e-12));

    auto pq = histogram_divergence(p, q);
    auto qp = histogram_divergence(q, p);
    CHECK(pq.kl > 0);
    CHECK(pq.kl != qp.kl); // KL is not symmetric
    CHECK(pq.mean_delta == doctest::Approx(qp.mean_delta).epsilon(1e-12));

    CHECK_THROWS_AS(histogram_divergence({0, 0}, {1, 1}), std::invalid_argument);
    CHECK_THROWS_AS(histogram_divergence({1, 1}, {1, 1, 1}), std::invalid_argument);
}

TEST_CASE("divergence mean_delta tracks the gap between two sampled Gaussians") {
    // two velocity populations ~N(100,5) and ~N(80,5): mean_delta ~ 20 bins
    Pcg32 rng(77);
    std::vector<long> hp(128, 0), hq(128, 0);
    for (int i = 0; i < 20000; ++i) {
        int a = std::clamp<int>(static_cast<int>(std::lround(rng.normal(100, 5))), 0, 127);
        int b = std::clamp<int>(static_cast<int>(std::lround(rng.normal(80, 5))), 0, 127);
        hp[a]++;
        hq[b]++;
    }
    auto d = histogram_divergence(hp, hq);
    CHECK(d.mean_delta == doctest::Approx(20.0).epsilon(0.03));
    CHECK(d.std_delta < 0.5);
    CHECK(d.kl > 1.0); // well-separated distributions
}

TEST_CASE("smoothing keeps divergence finite with disjoint support") {
    std::vector<long> p = {100, 0};
    std::vector<long> q = {0, 100};
    auto d = histogram_divergence(p, q);
    CHECK(std::isfinite(d.kl));
    CHECK(d.kl > 5.0);
    CHECK(d.mean_delta == doctest::Approx(1.0).epsilon(1e-3));
}
