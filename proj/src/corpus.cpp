#include "cadenza/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <stdexcept>

namespace cadenza::corpus {

void StyleSpec::validate() const {
    if (velocity_std < 0 || microshift_std < 0)
        throw std::invalid_argument("style: standard deviations must be non-negative");
    if (std::abs(microshift_mean) + 2.0 * microshift_std > max_microshift_ticks)
        throw std::invalid_argument(
            "style: |microshift_mean| + 2*microshift_std must fit inside max_microshift_ticks");
    if (pitch_set.empty()) throw std::invalid_argument("style: pitch set is empty");
    if (notes_per_bar <= 0) throw std::invalid_argument("style: notes_per_bar must be positive");
    if (ticks_per_quarter <= 0 || bars <= 0)
        throw std::invalid_argument("style: ticks_per_quarter and bars must be positive");
}

std::vector<midi::Score> segment(const midi::Score& score, int bars) {
    if (bars <= 0) throw std::invalid_argument("segment: bars must be positive");
    long window = static_cast<long>(bars) * 4 * score.ticks_per_quarter;
    long bar = 4L * score.ticks_per_quarter;
    long total = score.length_ticks;
    for (const auto& n : score.notes)
        total = std::max(total, n.onset_ticks + n.duration_ticks);

    std::vector<midi::Score> out;
    for (long start = 0; start < total; start += window) {
        long end = std::min(start + window, total);
        if (end - start < bar && start > 0) break; // partial tail under one bar: drop
        midi::Score seg;
        seg.ticks_per_quarter = score.ticks_per_quarter;
        seg.length_ticks = window;
        for (const auto& n : score.notes) {
            if (n.onset_ticks < start || n.onset_ticks >= start + window) continue;
            midi::NoteEvent local = n;
            local.onset_ticks -= start;
            local.duration_ticks = std::min(local.duration_ticks, window - local.onset_ticks);
            seg.notes.push_back(local);
        }
        if (!seg.notes.empty()) out.push_back(std::move(seg));
    }
    return out;
}

std::vector<midi::Score> synth_corpus(const StyleSpec& spec, int count) {
    spec.validate();
    std::vector<midi::Score> out;
    out.reserve(count);
    long sixteenth = spec.ticks_per_quarter / 4;
    long window = static_cast<long>(spec.bars) * 4 * spec.ticks_per_quarter;
    int slots = spec.bars * 16;
    int notes_per_score = std::max(1, static_cast<int>(std::lround(spec.notes_per_bar * spec.bars)));

    for (int i = 0; i < count; ++i) {
        Pcg32 rng(spec.seed, 1000 + static_cast<uint64_t>(i)); // per-file stream
        midi::Score s;
        s.ticks_per_quarter = spec.ticks_per_quarter;
        s.length_ticks = window;

        // distinct 16th-grid slots, then style-driven jitter
        std::vector<int> all(slots);
        std::iota(all.begin(), all.end(), 0);
        for (int k = slots - 1; k > 0; --k)
            std::swap(all[k], all[rng.next_below(static_cast<uint32_t>(k + 1))]);
        int n = std::min(notes_per_score, slots);

        for (int k = 0; k < n; ++k) {
            long grid = all[k] * sixteenth;
            long shift = std::lround(rng.normal(spec.microshift_mean, spec.microshift_std));
            shift = std::clamp<long>(shift, -spec.max_microshift_ticks, spec.max_microshift_ticks);
            long onset = std::clamp(grid + shift, 0L, window - 1);
            int vel = static_cast<int>(std::lround(rng.normal(spec.velocity_mean, spec.velocity_std)));
            vel = std::clamp(vel, 1, 127);
            int pitch = spec.pitch_set[rng.next_below(static_cast<uint32_t>(spec.pitch_set.size()))];
            long dur = std::min<long>(sixteenth, window - onset);
            s.notes.push_back({pitch, onset, std::max(1L, dur), vel});
        }
        midi::normalize(s);
        s.length_ticks = window;
        out.push_back(std::move(s));
    }
    return out;
}

std::pair<std::vector<midi::Score>, std::vector<midi::Score>>
split(const std::vector<midi::Score>& corpus, double train_ratio, uint64_t seed) {
    if (train_ratio < 0.0 || train_ratio > 1.0)
        throw std::invalid_argument("split: ratio must be in [0,1]");
    std::vector<size_t> order(corpus.size());
    std::iota(order.begin(), order.end(), 0);
    Pcg32 rng(seed, 11);
    for (size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[rng.next_below(static_cast<uint32_t>(i))]);

    size_t n_train = static_cast<size_t>(std::lround(train_ratio * corpus.size()));
    std::pair<std::vector<midi::Score>, std::vector<midi::Score>> out;
    for (size_t i = 0; i < order.size(); ++i)
        (i < n_train ? out.first : out.second).push_back(corpus[order[i]]);
    return out;
}

std::vector<std::string> find_midi_files(const std::string& dir) {
    namespace fs = std::filesystem;
    std::vector<std::string> files;
    if (!fs::exists(dir)) throw std::runtime_error("corpus directory not found: " + dir);
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        auto ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
        if (ext == ".mid" || ext == ".midi") files.push_back(entry.path().string());
    }
    std::sort(files.begin(), files.end());
    return files;
}

std::vector<midi::Score> load_corpus_dir(const std::string& dir, int bars) {
    std::vector<midi::Score> out;
    for (const auto& path : find_midi_files(dir)) {
        midi::Score s = midi::read_midi_file(path);
        for (auto& seg : segment(s, bars)) out.push_back(std::move(seg));
    }
    return out;
}

} // namespace cadenza::corpus
