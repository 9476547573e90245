#pragma once

#include <string>
#include <vector>

#include "cadenza/midi.hpp"
#include "cadenza/rng.hpp"

namespace cadenza::corpus {

// Parameters for a synthetic expressive style; stands in for a real
// performance dataset in desk-scale experiments.
struct StyleSpec {
    double velocity_mean = 96;
    double velocity_std = 8;
    double microshift_mean = 0;   // ticks
    double microshift_std = 4;    // ticks
    int max_microshift_ticks = 30;
    double notes_per_bar = 8;
    std::vector<int> pitch_set = {60, 62, 64, 65, 67, 69, 71, 72};
    int ticks_per_quarter = 480;
    int bars = 4;
    uint64_t seed = 0;

    void validate() const;
};

// Non-overlapping windows of bars*4*TPQ ticks. Notes straddling a
// boundary are truncated at it; a final partial window is kept when it
// holds at least one bar of content; empty windows are dropped.
std::vector<midi::Score> segment(const midi::Score& score, int bars = 4);

std::vector<midi::Score> synth_corpus(const StyleSpec& spec, int count);

std::pair<std::vector<midi::Score>, std::vector<midi::Score>>
split(const std::vector<midi::Score>& corpus, double train_ratio, uint64_t seed);

// Recursively collects .mid/.midi files under a directory, sorted by path.
std::vector<std::string> find_midi_files(const std::string& dir);

// Loads every MIDI file under `dir` and segments it into `bars`-bar scores.
std::vector<midi::Score> load_corpus_dir(const std::string& dir, int bars = 4);

} // namespace cadenza::corpus
