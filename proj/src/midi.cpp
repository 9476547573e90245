#include "cadenza/midi.hpp"

#include <algorithm>
#include <fstream>
#include <tuple>

namespace cadenza::midi {

namespace {

struct Reader {
    const std::vector<uint8_t>& buf;
    size_t pos = 0;

    bool eof() const { return pos >= buf.size(); }

    uint8_t u8() {
        if (pos >= buf.size()) throw MidiError("unexpected end of data", pos);
        return buf[pos++];
    }

    uint16_t u16() { return static_cast<uint16_t>(u8() << 8 | u8()); }

    uint32_t u32() {
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v = v << 8 | u8();
        return v;
    }

    // Variable-length quantity, at most 4 bytes per the SMF spec.
    uint32_t vlq() {
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            uint8_t b = u8();
            v = (v << 7) | (b & 0x7f);
            if (!(b & 0x80)) return v;
        }
        throw MidiError("variable-length quantity longer than 4 bytes", pos);
    }

    void expect_tag(const char* tag) {
        size_t at = pos;
        for (int i = 0; i < 4; ++i) {
            if (u8() != static_cast<uint8_t>(tag[i]))
                throw MidiError(std::string("expected chunk tag '") + tag + "'", at);
        }
    }
};

struct OpenNote {
    int pitch;
    long onset;
    int velocity;
};

uint32_t vlq_checked(Reader& r, size_t limit) {
    if (r.pos >= limit) throw MidiError("delta time truncated", r.pos);
    return r.vlq();
}

// Parses one MTrk body, returning the notes and the end-of-track tick.
void parse_track(Reader& r, size_t track_len, std::vector<NoteEvent>& notes, long& end_tick) {
    size_t track_end = r.pos + track_len;
    if (track_end > r.buf.size())
        throw MidiError("track chunk length exceeds file size", r.pos);

    long tick = 0;
    uint8_t running_status = 0;
    std::vector<OpenNote> open;

    auto close_note = [&](int pitch, long at) {
        for (size_t i = 0; i < open.size(); ++i) {
            if (open[i].pitch == pitch) {
                long dur = at - open[i].onset;
                if (dur < 1) dur = 1;
                notes.push_back({pitch, open[i].onset, dur, open[i].velocity});
                open.erase(open.begin() + i);
                return;
            }
        }
        // note-off without a matching note-on: ignore
    };

    while (r.pos < track_end) {
        tick += vlq_checked(r, track_end);
        if (r.pos >= track_end) throw MidiError("event truncated at track end", r.pos);

        uint8_t b = r.buf[r.pos];
        uint8_t status;
        if (b & 0x80) {
            status = b;
            ++r.pos;
            if (status < 0xf0) running_status = status;
        } else {
            if (!(running_status & 0x80))
                throw MidiError("data byte with no running status", r.pos);
            status = running_status;
        }

        uint8_t type = status & 0xf0;
        switch (type) {
        case 0x80: { // note off
            int pitch = r.u8() & 0x7f;
            r.u8(); // release velocity
            close_note(pitch, tick);
            break;
        }
        case 0x90: { // note on (velocity 0 == note off)
            int pitch = r.u8() & 0x7f;
            int vel = r.u8() & 0x7f;
            if (vel == 0) {
                close_note(pitch, tick);
            } else {
                // a second note-on at the same pitch closes the first
                close_note(pitch, tick);
                open.push_back({pitch, tick, vel});
            }
            break;
        }
        case 0xa0: // poly aftertouch
        case 0xb0: // control change
        case 0xe0: // pitch bend
            r.u8();
            r.u8();
            break;
        case 0xc0: // program change
        case 0xd0: // channel aftertouch
            r.u8();
            break;
        case 0xf0:
            if (status == 0xff) { // meta
                uint8_t meta = r.u8();
                uint32_t len = r.vlq();
                if (r.pos + len > track_end)
                    throw MidiError("meta event length exceeds track", r.pos);
                if (meta == 0x2f) { // end of track
                    r.pos = track_end;
                    end_tick = std::max(end_tick, tick);
                    goto done;
                }
                r.pos += len;
            } else if (status == 0xf0 || status == 0xf7) { // sysex
                uint32_t len = r.vlq();
                if (r.pos + len > track_end)
                    throw MidiError("sysex length exceeds track", r.pos);
                r.pos += len;
            } else {
                throw MidiError("unsupported system message", r.pos);
            }
            break;
        default:
            throw MidiError("invalid status byte", r.pos);
        }
    }
    end_tick = std::max(end_tick, tick);
done:
    // close anything still sounding at end of track
    for (const auto& on : open) {
        long dur = std::max<long>(1, tick - on.onset);
        notes.push_back({on.pitch, on.onset, dur, on.velocity});
        end_tick = std::max(end_tick, on.onset + dur);
    }
}

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v));
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<uint8_t>(v >> s));
}

void put_vlq(std::vector<uint8_t>& out, uint32_t v) {
    uint8_t stack[4];
    int n = 0;
    stack[n++] = static_cast<uint8_t>(v & 0x7f);
    while (v >>= 7) stack[n++] = static_cast<uint8_t>(0x80 | (v & 0x7f));
    while (n--) out.push_back(stack[n]);
}

} // namespace

Score parse_midi(const std::vector<uint8_t>& bytes) {
    Reader r{bytes};
    r.expect_tag("MThd");
    uint32_t header_len = r.u32();
    if (header_len < 6) throw MidiError("header chunk too short", r.pos);
    uint16_t format = r.u16();
    uint16_t ntrks = r.u16();
    uint16_t division = r.u16();
    r.pos += header_len - 6;
    if (format > 1) throw MidiError("unsupported SMF format " + std::to_string(format), 8);
    if (division & 0x8000) throw MidiError("SMPTE time division not supported", 12);
    if (division == 0) throw MidiError("zero ticks-per-quarter", 12);

    Score score;
    score.ticks_per_quarter = division;

    long end_tick = 0;
    for (uint16_t t = 0; t < ntrks && !r.eof(); ++t) {
        r.expect_tag("MTrk");
        uint32_t len = r.u32();
        std::vector<NoteEvent> notes;
        long track_end = 0;
        parse_track(r, len, notes, track_end);
        end_tick = std::max(end_tick, track_end);
        if (!notes.empty() && score.notes.empty()) score.notes = std::move(notes);
    }

    std::sort(score.notes.begin(), score.notes.end(), [](const NoteEvent& a, const NoteEvent& b) {
        return std::tie(a.onset_ticks, a.pitch) < std::tie(b.onset_ticks, b.pitch);
    });
    score.length_ticks = end_tick;
    for (const auto& n : score.notes)
        score.length_ticks = std::max(score.length_ticks, n.onset_ticks + n.duration_ticks);
    return score;
}

std::vector<uint8_t> write_midi(const Score& score) {
    struct Event {
        long tick;
        int order; // offs before ons at the same tick
        uint8_t status, d1, d2;
    };
    std::vector<Event> events;
    events.reserve(score.notes.size() * 2);
    for (const auto& n : score.notes) {
        events.push_back({n.onset_ticks, 1, 0x90, static_cast<uint8_t>(n.pitch),
                          static_cast<uint8_t>(n.velocity)});
        events.push_back({n.onset_ticks + n.duration_ticks, 0, 0x80,
                          static_cast<uint8_t>(n.pitch), 0x40});
    }
    std::sort(events.begin(), events.end(), [](const Event& a, const Event& b) {
        return std::tie(a.tick, a.order, a.d1) < std::tie(b.tick, b.order, b.d1);
    });

    std::vector<uint8_t> track;
    long tick = 0;
    for (const auto& e : events) {
        put_vlq(track, static_cast<uint32_t>(e.tick - tick));
        tick = e.tick;
        track.push_back(e.status);
        track.push_back(e.d1);
        track.push_back(e.d2);
    }
    long end_tick = std::max(score.length_ticks, tick);
    put_vlq(track, static_cast<uint32_t>(end_tick - tick));
    track.push_back(0xff);
    track.push_back(0x2f);
    track.push_back(0x00);

    std::vector<uint8_t> out;
    out.insert(out.end(), {'M', 'T', 'h', 'd'});
    put_u32(out, 6);
    put_u16(out, 0); // format 0
    put_u16(out, 1);
    put_u16(out, static_cast<uint16_t>(score.ticks_per_quarter));
    out.insert(out.end(), {'M', 'T', 'r', 'k'});
    put_u32(out, static_cast<uint32_t>(track.size()));
    out.insert(out.end(), track.begin(), track.end());
    return out;
}

void normalize(Score& score) {
    std::sort(score.notes.begin(), score.notes.end(), [](const NoteEvent& a, const NoteEvent& b) {
        return std::tie(a.onset_ticks, a.pitch) < std::tie(b.onset_ticks, b.pitch);
    });
    long end = 0;
    for (const auto& n : score.notes) end = std::max(end, n.onset_ticks + n.duration_ticks);
    long bar = 4L * score.ticks_per_quarter;
    long bars = (end + bar - 1) / bar;
    score.length_ticks = std::max(score.length_ticks, std::max(bars, 1L) * bar);
}

Score read_midi_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open MIDI file: " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    return parse_midi(bytes);
}

void write_midi_file(const Score& score, const std::string& path) {
    auto bytes = write_midi(score);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open output file: " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

} // namespace cadenza::midi
