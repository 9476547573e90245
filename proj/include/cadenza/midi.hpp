#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace cadenza::midi {

// A sounding note. Onset and duration are in absolute ticks at the
// owning Score's ticks-per-quarter resolution.
struct NoteEvent {
    int pitch = 0;           // 0..127
    long onset_ticks = 0;    // >= 0
    long duration_ticks = 1; // >= 1
    int velocity = 64;       // 1..127

    bool operator==(const NoteEvent&) const = default;
};

struct Score {
    int ticks_per_quarter = 480;
    std::vector<NoteEvent> notes; // sorted by (onset_ticks, pitch)
    long length_ticks = 0;

    bool operator==(const Score&) const = default;
};

// Structured parse failure; `offset` is the byte position at which the
// input stopped making sense.
class MidiError : public std::runtime_error {
public:
    MidiError(const std::string& what, size_t offset)
        : std::runtime_error(what + " (byte offset " + std::to_string(offset) + ")"),
          offset_(offset) {}
    size_t offset() const { return offset_; }

private:
    size_t offset_;
};

// Parses a format 0/1 Standard MIDI File. Notes are taken from the first
// track containing note events; velocity-0 note-ons are note-offs;
// note-ons left open at end of track are closed there. Throws MidiError.
Score parse_midi(const std::vector<uint8_t>& bytes);

// Emits a format-0 SMF. parse_midi(write_midi(s)) == s for any valid
// Score without overlapping same-pitch notes.
std::vector<uint8_t> write_midi(const Score& score);

// Sorts notes by (onset, pitch) and recomputes length_ticks to cover all
// note ends, rounded up to a whole bar of 4/4.
void normalize(Score& score);

Score read_midi_file(const std::string& path);
void write_midi_file(const Score& score, const std::string& path);

} // namespace cadenza::midi
