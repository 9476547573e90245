#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include <cadenza/performer.hpp>
#include <cadenza/pertok.hpp>

using namespace cadenza;
using namespace cadenza::performer;
using nn::Real;

namespace {

pertok::TokenizerConfig small_tok_config() {
    pertok::TokenizerConfig c;
    c.grids = {120};
    c.pitch_min = 60;
    c.pitch_max = 67;
    c.max_timeshift_ticks = 480;
    c.velocity_buckets = 8;
    c.microshift_buckets = 5;
    return c;
}

PerformerConfig small_config(int vocab) {
    PerformerConfig c;
    c.layers = 1;
    c.heads = 2;
    c.hidden_d = 16;
    c.max_seq_len = 64;
    c.vocab_size = vocab;
    c.dropout = 0.0;
    return c;
}

midi::Score demo_score(long jitter = 0, int vel = 90) {
    midi::Score s;
    s.ticks_per_quarter = 480;
    s.notes = {{60, 120 + jitter, 120, vel}, {64, 360, 240, vel}};
    midi::normalize(s);
    return s;
}

} // namespace

TEST_CASE("forward uses every position: perturbing one input changes other logits") {
    PerformerModel m(small_config(12), 3);
    std::vector<int> a = {1, 4, 7, 9, 2};
    std::vector<int> b = {1, 4, 7, 10, 2}; // differs at position 3
    auto la = m.forward(a);
    auto lb = m.forward(b);
    Real diff0 = 0;
    for (int v = 0; v < 12; ++v) diff0 += std::abs(la.at(0, v) - lb.at(0, v));
    CHECK(diff0 > 1e-8); // bidirectional: position 0 sees position 3
}

TEST_CASE("position table breaks permutation symmetry") {
    PerformerModel m(small_config(12), 3);
    auto la = m.forward({1, 4, 7, 2});
    auto lb = m.forward({1, 7, 4, 2}); // swapped middle tokens
    Real diff = 0;
    for (int v = 0; v < 12; ++v) diff += std::abs(la.at(1, v) - lb.at(2, v));
    CHECK(diff > 1e-8); // same token, different position -> different logits
}

TEST_CASE("forward is finite on an all-PAD sequence") {
    PerformerModel m(small_config(12), 3);
    auto logits = m.forward({0, 0, 0, 0});
    for (Real v : logits.value()) CHECK(std::isfinite(v));
}

TEST_CASE("loss is restricted to mask positions and rejects empty masks") {
    PerformerModel m(small_config(12), 3);
    std::vector<int> ids = {1, 4, 3, 9, 2};
    auto logits = m.forward(ids);
    std::vector<int> targets = {1, 4, 6, 9, 2};
    CHECK_THROWS_AS(PerformerModel::loss(logits, targets, {}), std::invalid_argument);
    auto l = PerformerModel::loss(logits, targets, {2});
    // oracle: -log softmax(logits[2])[6]
    Real mx = -1e300;
    for (int v = 0; v < 12; ++v) mx = std::max(mx, logits.at(2, v));
    Real denom = 0;
    for (int v = 0; v < 12; ++v) denom += std::exp(logits.at(2, v) - mx);
    Real expect = -(logits.at(2, 6) - mx - std::log(denom));
    CHECK(l.item() == doctest::Approx(expect).epsilon(1e-10));
}

TEST_CASE("apply_performance fills every slot with the right token kind") {
    pertok::Tokenizer tok{small_tok_config()};
    PerformerModel m(small_config(static_cast<int>(tok.vocab().size())), 5);

    auto expressive = tok.encode(demo_score(7, 100));
    auto score_only = tok.strip_performance(expressive);
    auto performed = performer::apply_performance(score_only, m, tok);

    CHECK(performed.size() == expressive.size()); // one slot per stripped token
    size_t vel = 0, ms = 0;
    for (size_t i = 0; i < performed.size(); ++i) {
        if (performed[i].kind == pertok::Kind::Velocity) ++vel;
        if (performed[i].kind == pertok::Kind::MicroShift) ++ms;
        CHECK(performed[i].kind != pertok::Kind::Mask);
    }
    CHECK(vel == 2);
    CHECK(ms == 2);
    // score structure is untouched
    CHECK(tok.strip_performance(performed) == score_only);
    // result decodes cleanly
    auto back = tok.decode(performed);
    CHECK(back.notes.size() == 2);
}

TEST_CASE("apply_performance re-predicts existing performance tokens in place") {
    pertok::Tokenizer tok{small_tok_config()};
    PerformerModel m(small_config(static_cast<int>(tok.vocab().size())), 5);
    auto expressive = tok.encode(demo_score(7, 100));
    auto performed = performer::apply_performance(expressive, m, tok);
    CHECK(performed.size() == expressive.size());
    for (size_t i = 0; i < performed.size(); ++i) {
        CHECK(performed[i].kind == expressive[i].kind);
        if (!pertok::is_performance(expressive[i].kind)) CHECK(performed[i] == expressive[i]);
    }
}

TEST_CASE("apply_performance is deterministic; sampling depends only on the seed") {
    pertok::Tokenizer tok{small_tok_config()};
    PerformerModel m(small_config(static_cast<int>(tok.vocab().size())), 5);
    auto score_only = tok.strip_performance(tok.encode(demo_score()));
    auto a = performer::apply_performance(score_only, m, tok, FillMode::Greedy);
    auto b = performer::apply_performance(score_only, m, tok, FillMode::Greedy, 999);
    CHECK(a == b); // greedy ignores the seed
    auto s1 = performer::apply_performance(score_only, m, tok, FillMode::Sample, 7);
    auto s2 = performer::apply_performance(score_only, m, tok, FillMode::Sample, 7);
    CHECK(s1 == s2);
}

TEST_CASE("config kv round-trip and validation") {
    PerformerConfig c = small_config(20);
    c.lr = 5e-4;
    auto kv = c.to_kv("performer.");
    PerformerConfig back = PerformerConfig::from_kv(kv, "performer.");
    CHECK(back.hidden_d == 16);
    CHECK(back.lr == doctest::Approx(5e-4));
    PerformerConfig bad = c;
    bad.hidden_d = 15; // not divisible by heads=2
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("checkpoint round-trip reproduces logits at f32 precision") {
    PerformerModel m(small_config(12), 9);
    auto ckpt = m.to_checkpoint();
    CHECK(ckpt.meta_or("model", "") == "performer");
    PerformerModel back = PerformerModel::from_checkpoint(
        Checkpoint::deserialize(ckpt.serialize()));
    auto la = m.forward({1, 4, 7, 2});
    auto lb = back.forward({1, 4, 7, 2});
    for (size_t i = 0; i < la.value().size(); ++i)
        CHECK(la.value()[i] == doctest::Approx(lb.value()[i]).epsilon(1e-4));
    // composer checkpoints are refused
    ckpt.meta["model"] = "composer";
    CHECK_THROWS_AS(PerformerModel::from_checkpoint(ckpt), std::runtime_error);
}

TEST_CASE("training is deterministic, loss falls, predictions sharpen") {
    pertok::Tokenizer tok{small_tok_config()};
    PerformerConfig c = small_config(static_cast<int>(tok.vocab().size()));
    c.train_steps = 80;
    c.batch_size = 4;
    c.lr = 3e-3;

    // consistent style: loud notes, always the same small positive shift
    std::vector<pertok::TokenSequence> corpus;
    for (int i = 0; i < 4; ++i) {
        midi::Score s;
        s.ticks_per_quarter = 480;
        s.notes = {{60 + i, 120 + 15, 120, 120}, {60 + i, 360 + 15, 120, 120}};
        midi::normalize(s);
        corpus.push_back(tok.encode(s));
    }

    PerformerModel m1(c, 17);
    auto r1 = train_performer(m1, corpus, tok, 5);
    PerformerModel m2(c, 17);
    auto r2 = train_performer(m2, corpus, tok, 5);
    REQUIRE(r1.log.size() == r2.log.size());
    for (size_t i = 0; i < r1.log.size(); ++i) CHECK(r1.log[i].loss == r2.log[i].loss);
    CHECK(r1.log.back().loss < 0.5 * r1.log.front().loss);

    // the trained model reproduces the style on a held-out score shape
    midi::Score probe;
    probe.ticks_per_quarter = 480;
    probe.notes = {{65, 240, 120, 64}};
    midi::normalize(probe);
    auto filled = performer::apply_performance(
        tok.strip_performance(tok.encode(probe)), m1, tok);
    auto decoded = tok.decode(filled);
    REQUIRE(decoded.notes.size() == 1);
    CHECK(decoded.notes[0].velocity > 100);          // learned loud style
    CHECK(decoded.notes[0].onset_ticks > 240);       // learned positive shift
}

TEST_CASE("training rejects corpora without performance tokens") {
    pertok::Tokenizer tok{small_tok_config()};
    PerformerConfig c = small_config(static_cast<int>(tok.vocab().size()));
    PerformerModel m(c, 1);
    std::vector<pertok::TokenSequence> bare = {
        tok.strip_performance(tok.encode(demo_score()))};
    CHECK_THROWS_AS(train_performer(m, bare, tok, 1), std::invalid_argument);
}
