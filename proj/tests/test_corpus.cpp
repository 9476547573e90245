#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>

#include <cadenza/corpus.hpp>
#include <cadenza/midi.hpp>

using namespace cadenza;
using namespace cadenza::corpus;

namespace {

midi::Score long_score(int bars, int tpq = 480) {
    midi::Score s;
    s.ticks_per_quarter = tpq;
    long bar = 4L * tpq;
    for (int b = 0; b < bars; ++b)
        s.notes.push_back({60 + (b % 12), b * bar + 120, 240, 80});
    midi::normalize(s);
    return s;
}

} // namespace

TEST_CASE("segment: 8 bars split into two 4-bar windows with local onsets") {
    auto segs = segment(long_score(8), 4);
    REQUIRE(segs.size() == 2);
    for (const auto& seg : segs) {
        CHECK(seg.length_ticks == 4 * 4 * 480);
        CHECK(seg.notes.size() == 4);
        for (const auto& n : seg.notes) {
            CHECK(n.onset_ticks >= 0);
            CHECK(n.onset_ticks < seg.length_ticks);
        }
    }
    CHECK(segs[0].notes[0].onset_ticks == 120);
    CHECK(segs[1].notes[0].onset_ticks == 120); // bar 4 rebased to 0
}

TEST_CASE("segment: a 3-bar score still yields one window") {
    auto segs = segment(long_score(3), 4);
    REQUIRE(segs.size() == 1);
    CHECK(segs[0].notes.size() == 3);
}

TEST_CASE("segment: notes straddling a boundary are truncated at it") {
    midi::Score s;
    s.ticks_per_quarter = 480;
    long window = 4 * 4 * 480;
    s.notes = {{60, window - 120, 480, 80}, {62, window + 120, 240, 80}};
    midi::normalize(s);
    auto segs = segment(s, 4);
    REQUIRE(segs.size() == 2);
    CHECK(segs[0].notes[0].duration_ticks == 120); // cut at the boundary
    CHECK(segs[1].notes[0].onset_ticks == 120);
}

TEST_CASE("segment: empty windows are dropped") {
    midi::Score s;
    s.ticks_per_quarter = 480;
    long window = 4 * 4 * 480;
    s.notes = {{60, 0, 120, 80}, {62, 2 * window + 120, 120, 80}};
    midi::normalize(s);
    auto segs = segment(s, 4);
    CHECK(segs.size() == 2); // the silent middle window disappears
}

TEST_CASE("synth_corpus is deterministic and independent per file") {
    StyleSpec spec;
    spec.seed = 42;
    auto a = synth_corpus(spec, 5);
    auto b = synth_corpus(spec, 5);
    REQUIRE(a.size() == 5);
    for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
    // a shorter run produces the same leading files
    auto c = synth_corpus(spec, 2);
    CHECK(c[0] == a[0]);
    CHECK(c[1] == a[1]);
    // files differ from each other
    CHECK(a[0].notes != a[1].notes);
}

TEST_CASE("synth_corpus respects note count, clamps, and pitch set") {
    StyleSpec spec;
    spec.notes_per_bar = 6;
    spec.bars = 4;
    spec.pitch_set = {60, 64, 67};
    spec.velocity_mean = 120;
    spec.velocity_std = 10;
    spec.seed = 7;
    auto scores = synth_corpus(spec, 20);
    std::set<int> allowed(spec.pitch_set.begin(), spec.pitch_set.end());
    for (const auto& s : scores) {
        CHECK(s.notes.size() == 24);
        std::set<long> onsets;
        for (const auto& n : s.notes) {
            CHECK(allowed.count(n.pitch) == 1);
            CHECK(n.velocity >= 1);
            CHECK(n.velocity <= 127);
            CHECK(n.onset_ticks >= 0);
            CHECK(n.onset_ticks < s.length_ticks);
            // distinct 16th slots: onsets at most one per slot
            long slot = (n.onset_ticks + 60) / 120;
            CHECK(onsets.insert(slot).second);
            long grid = slot * 120;
            CHECK(std::abs(n.onset_ticks - grid) <= spec.max_microshift_ticks);
        }
    }
}

TEST_CASE("synth_corpus sample statistics track the style parameters") {
    StyleSpec spec;
    spec.velocity_mean = 100;
    spec.velocity_std = 5;
    spec.microshift_mean = 8;
    spec.microshift_std = 3;
    spec.notes_per_bar = 8;
    spec.seed = 11;
    auto scores = synth_corpus(spec, 200);
    double vsum = 0, msum = 0;
    long n = 0;
    for (const auto& s : scores) {
        for (const auto& note : s.notes) {
            vsum += note.velocity;
            long grid = ((2 * note.onset_ticks + 120) / 240) * 120;
            msum += static_cast<double>(note.onset_ticks - grid);
            ++n;
        }
    }
    CHECK(vsum / n == doctest::Approx(100.0).epsilon(0.01));
    CHECK(msum / n == doctest::Approx(8.0).epsilon(0.1));
}

TEST_CASE("style validation rejects shift distributions that overflow the cap") {
    StyleSpec spec;
    spec.microshift_mean = 20;
    spec.microshift_std = 10; // 20 + 2*10 > 30
    CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
    spec.microshift_std = 5;
    spec.validate();
    spec.pitch_set.clear();
    CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
}

TEST_CASE("split: partition, determinism, ratio") {
    StyleSpec spec;
    spec.seed = 3;
    auto corpus = synth_corpus(spec, 40);
    auto [train, test] = split(corpus, 0.8, 9);
    CHECK(train.size() == 32);
    CHECK(test.size() == 8);
    auto [train2, test2] = split(corpus, 0.8, 9);
    CHECK(train == train2);
    CHECK(test == test2);
    // different seed shuffles differently
    auto [train3, test3] = split(corpus, 0.8, 10);
    CHECK(train != train3);

    // partition: every input score appears exactly once across both halves
    auto count_in = [&](const midi::Score& s) {
        long c = 0;
        for (const auto& t : train) c += (t == s);
        for (const auto& t : test) c += (t == s);
        return c;
    };
    for (const auto& s : corpus) CHECK(count_in(s) >= 1);
    CHECK(train.size() + test.size() == corpus.size());

    CHECK_THROWS_AS(split(corpus, 1.5, 0), std::invalid_argument);
}

TEST_CASE("find_midi_files and load_corpus_dir walk a directory tree") {
    namespace fs = std::filesystem;
    fs::path root = fs::temp_directory_path() / "cadenza_corpus_test";
    fs::remove_all(root);
    fs::create_directories(root / "sub");

    midi::write_midi_file(long_score(8), (root / "a.mid").string());
    midi::write_midi_file(long_score(4), (root / "sub" / "b.midi").string());
    {
        FILE* f = std::fopen((root / "notes.txt").string().c_str(), "w");
        std::fputs("not midi\n", f);
        std::fclose(f);
    }

    auto files = find_midi_files(root.string());
    REQUIRE(files.size() == 2);
    CHECK(files[0].find("a.mid") != std::string::npos);
    CHECK(files[1].find("b.midi") != std::string::npos);

    auto corpus = load_corpus_dir(root.string(), 4);
    CHECK(corpus.size() == 3); // 8 bars -> 2 segments, 4 bars -> 1

    CHECK_THROWS_AS(find_midi_files((root / "missing").string()), std::runtime_error);
    fs::remove_all(root);
}
