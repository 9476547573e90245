#include "cadenza/pertok.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <set>
#include <sstream>
#include <tuple>

namespace cadenza::pertok {

const char* kind_name(Kind k) {
    switch (k) {
    case Kind::Pad: return "PAD";
    case Kind::Bos: return "BOS";
    case Kind::Eos: return "EOS";
    case Kind::Mask: return "MASK";
    case Kind::Pitch: return "Pitch";
    case Kind::TimeShift: return "TimeShift";
    case Kind::Velocity: return "Velocity";
    case Kind::MicroShift: return "MicroShift";
    case Kind::Duration: return "Duration";
    }
    return "?";
}

bool kind_has_value(Kind k) { return !is_special(k); }

bool is_performance(Kind k) { return k == Kind::Velocity || k == Kind::MicroShift; }

bool is_special(Kind k) {
    return k == Kind::Pad || k == Kind::Bos || k == Kind::Eos || k == Kind::Mask;
}

std::string token_to_string(const Token& t) {
    if (is_special(t.kind)) return kind_name(t.kind);
    return std::string(kind_name(t.kind)) + "_" + std::to_string(t.value);
}

Token token_from_string(const std::string& s) {
    static const Kind kinds[] = {Kind::Pad, Kind::Bos, Kind::Eos, Kind::Mask,
                                 Kind::Pitch, Kind::TimeShift, Kind::Velocity,
                                 Kind::MicroShift, Kind::Duration};
    auto us = s.find('_');
    std::string name = s.substr(0, us);
    for (Kind k : kinds) {
        if (name != kind_name(k)) continue;
        if (is_special(k)) {
            if (us != std::string::npos) break;
            return {k, 0};
        }
        if (us == std::string::npos) break;
        return {k, std::stoi(s.substr(us + 1))};
    }
    throw TokenizeError("unrecognized token text: '" + s + "'");
}

void TokenizerConfig::validate() const {
    if (ticks_per_quarter <= 0) throw std::invalid_argument("ticks_per_quarter must be positive");
    if (grids.empty()) throw std::invalid_argument("at least one grid is required");
    std::set<int> distinct(grids.begin(), grids.end());
    if (distinct.size() != grids.size() || *distinct.begin() <= 0)
        throw std::invalid_argument("grids must be distinct positive step sizes");
    int min_grid = *distinct.begin();
    if (max_microshift_ticks < 0 || 2 * max_microshift_ticks >= min_grid)
        throw std::invalid_argument("max_microshift_ticks must satisfy 0 <= m < min(grids)/2");
    if (microshift_buckets <= 0 || microshift_buckets % 2 == 0)
        throw std::invalid_argument("microshift_buckets must be odd and positive");
    if (velocity_buckets <= 0 || velocity_buckets > 127)
        throw std::invalid_argument("velocity_buckets must be in [1,127]");
    if (pitch_min < 0 || pitch_max > 127 || pitch_min > pitch_max)
        throw std::invalid_argument("pitch range must satisfy 0 <= min <= max <= 127");
    if (max_timeshift_ticks < min_grid)
        throw std::invalid_argument("max_timeshift_ticks must cover at least one grid step");
}

Vocabulary::Vocabulary(const TokenizerConfig& config) {
    config.validate();

    std::set<int> ts;
    for (int g : config.grids)
        for (long v = g; v <= config.max_timeshift_ticks; v += g)
            ts.insert(static_cast<int>(v)); // overlapping multiples merge here
    timeshifts_.assign(ts.begin(), ts.end());
    if (config.use_duration) durations_ = timeshifts_;

    if (config.use_microshift) {
        int b = config.microshift_buckets;
        int m = config.max_microshift_ticks;
        if (b == 1 || m == 0) {
            microshifts_ = {0};
        } else {
            double step = 2.0 * m / (b - 1);
            for (int i = 0; i < b; ++i)
                microshifts_.push_back(static_cast<int>(std::llround(-m + i * step)));
        }
    }

    if (config.use_velocity) {
        int b = config.velocity_buckets;
        for (int i = 0; i < b; ++i) velocity_lows_.push_back(1 + (i * 126) / b);
        for (int i = 0; i < b; ++i) {
            int hi = (i + 1 < b) ? velocity_lows_[i + 1] - 1 : 127;
            velocity_centers_.push_back((velocity_lows_[i] + hi) / 2);
        }
    }

    auto add = [&](Kind k, int value) {
        Token t{k, value};
        ids_.emplace(t, static_cast<int>(tokens_.size()));
        tokens_.push_back(t);
    };
    auto add_kind = [&](Kind k, const std::vector<int>& values) {
        int first = static_cast<int>(tokens_.size());
        for (int v : values) add(k, v);
        ranges_[k] = {first, static_cast<int>(values.size())};
    };

    add(Kind::Pad, 0);
    add(Kind::Bos, 0);
    add(Kind::Eos, 0);
    add(Kind::Mask, 0);
    ranges_[Kind::Pad] = {0, 1};
    ranges_[Kind::Bos] = {1, 1};
    ranges_[Kind::Eos] = {2, 1};
    ranges_[Kind::Mask] = {3, 1};

    std::vector<int> pitches;
    for (int p = config.pitch_min; p <= config.pitch_max; ++p) pitches.push_back(p);
    add_kind(Kind::Pitch, pitches);
    add_kind(Kind::TimeShift, timeshifts_);
    if (config.use_velocity) add_kind(Kind::Velocity, velocity_centers_);
    if (config.use_microshift) add_kind(Kind::MicroShift, microshifts_);
    if (config.use_duration) add_kind(Kind::Duration, durations_);
}

const Token& Vocabulary::token(int id) const {
    if (id < 0 || id >= static_cast<int>(tokens_.size()))
        throw TokenizeError("token id out of range: " + std::to_string(id));
    return tokens_[id];
}

int Vocabulary::id(const Token& t) const {
    auto it = ids_.find(t);
    if (it == ids_.end())
        throw TokenizeError("token not in vocabulary: " + token_to_string(t));
    return it->second;
}

std::optional<int> Vocabulary::try_id(const Token& t) const {
    auto it = ids_.find(t);
    if (it == ids_.end()) return std::nullopt;
    return it->second;
}

size_t Vocabulary::count(Kind k) const {
    auto it = ranges_.find(k);
    return it == ranges_.end() ? 0 : it->second.second;
}

std::pair<int, int> Vocabulary::id_range(Kind k) const {
    auto it = ranges_.find(k);
    if (it == ranges_.end()) return {0, 0};
    return it->second;
}

int Vocabulary::bucket_velocity(int velocity) const {
    if (velocity_centers_.empty()) return velocity;
    int v = std::clamp(velocity, 1, 127);
    auto it = std::upper_bound(velocity_lows_.begin(), velocity_lows_.end(), v);
    return velocity_centers_[it - velocity_lows_.begin() - 1];
}

int Vocabulary::bucket_microshift(int residual) const {
    if (microshifts_.empty() || microshifts_.size() == 1) return 0;
    int m = microshifts_.back();
    double r = std::clamp(residual, -m, m);
    double step = 2.0 * m / (static_cast<int>(microshifts_.size()) - 1);
    int idx = static_cast<int>(std::llround((r + m) / step));
    idx = std::clamp(idx, 0, static_cast<int>(microshifts_.size()) - 1);
    return microshifts_[idx];
}

int Vocabulary::nearest_duration(long duration) const {
    const auto& vals = durations_.empty() ? timeshifts_ : durations_;
    auto it = std::lower_bound(vals.begin(), vals.end(), duration);
    if (it == vals.end()) return vals.back();
    if (it == vals.begin()) return vals.front();
    long above = *it, below = *(it - 1);
    return (above - duration < duration - below) ? static_cast<int>(above)
                                                 : static_cast<int>(below);
}

std::string Vocabulary::export_text() const {
    std::ostringstream out;
    for (size_t i = 0; i < tokens_.size(); ++i)
        out << i << '\t' << token_to_string(tokens_[i]) << '\n';
    return out.str();
}

Tokenizer::Tokenizer(TokenizerConfig config)
    : config_(std::move(config)), vocab_(config_) {
    min_grid_ = *std::min_element(config_.grids.begin(), config_.grids.end());
    reach_.assign(1, 1); // sum 0 is reachable
}

Quantized Tokenizer::quantize_onset(long onset_ticks) const {
    std::vector<int> grids = config_.grids;
    std::sort(grids.begin(), grids.end()); // finer grids win ties
    long best_tick = 0;
    long best_dist = std::llabs(onset_ticks);
    int best_grid = grids.front();
    for (int g : grids) {
        for (long k : {onset_ticks / g, onset_ticks / g + 1}) {
            if (k < 0) continue;
            long tick = k * g;
            long dist = std::llabs(onset_ticks - tick);
            if (std::tuple(dist, g, tick) < std::tuple(best_dist, best_grid, best_tick)) {
                best_dist = dist;
                best_grid = g;
                best_tick = tick;
            }
        }
    }
    return {best_tick, onset_ticks - best_tick};
}

bool Tokenizer::reachable(long sum) const {
    if (sum < 0) return false;
    if (sum >= static_cast<long>(reach_.size())) {
        size_t old = reach_.size();
        reach_.resize(sum + 1, 0);
        const auto& vals = vocab_.timeshift_values();
        for (size_t i = old; i < reach_.size(); ++i) {
            for (int v : vals) {
                if (static_cast<long>(i) >= v && reach_[i - v]) {
                    reach_[i] = 1;
                    break;
                }
            }
        }
    }
    return reach_[sum] != 0;
}

std::vector<int> Tokenizer::decompose_delta(long delta) const {
    std::vector<int> out;
    if (delta <= 0) return out;
    if (delta > (1L << 24)) throw TokenizeError("timeshift delta too large");

    // Nearest reachable sum; smaller wins ties so microshifts stay local.
    long target = -1;
    for (long off = 0; target < 0; ++off) {
        if (reachable(delta - off)) target = delta - off;
        else if (reachable(delta + off)) target = delta + off;
    }

    const auto& vals = vocab_.timeshift_values();
    long rest = target;
    while (rest > 0) {
        // largest value that leaves a reachable remainder
        int pick = 0;
        for (auto it = vals.rbegin(); it != vals.rend(); ++it) {
            if (*it <= rest && reachable(rest - *it)) {
                pick = *it;
                break;
            }
        }
        out.push_back(pick);
        rest -= pick;
    }
    return out;
}

TokenSequence Tokenizer::encode(const midi::Score& score) const {
    if (score.ticks_per_quarter != config_.ticks_per_quarter)
        throw TokenizeError("score TPQ " + std::to_string(score.ticks_per_quarter) +
                            " does not match tokenizer TPQ " +
                            std::to_string(config_.ticks_per_quarter));

    std::vector<midi::NoteEvent> notes = score.notes;
    for (size_t i = 0; i < notes.size(); ++i) {
        const auto& n = notes[i];
        if (n.pitch < config_.pitch_min || n.pitch > config_.pitch_max)
            throw TokenizeError("note " + std::to_string(i) + " pitch " +
                                std::to_string(n.pitch) + " outside configured range [" +
                                std::to_string(config_.pitch_min) + "," +
                                std::to_string(config_.pitch_max) + "]");
    }
    std::stable_sort(notes.begin(), notes.end(),
                     [](const midi::NoteEvent& a, const midi::NoteEvent& b) {
                         return std::tie(a.onset_ticks, a.pitch) < std::tie(b.onset_ticks, b.pitch);
                     });

    TokenSequence out;
    out.push_back({Kind::Bos, 0});
    // Each onset is quantized to the nearest cumulative sum of timeshift
    // values reachable from the previous one; what remains is the
    // microshift residual. Quantizing to a single grid first would leave
    // residuals beyond the microshift range wherever the sum lattice is
    // denser than any one grid (e.g. 120+160 with grids {120,160}).
    long cum = 0;
    for (const auto& note : notes) {
        for (int v : decompose_delta(note.onset_ticks - cum)) {
            out.push_back({Kind::TimeShift, v});
            cum += v;
        }

        out.push_back({Kind::Pitch, note.pitch});
        if (config_.use_velocity)
            out.push_back({Kind::Velocity, vocab_.bucket_velocity(note.velocity)});
        if (config_.use_microshift) {
            long residual = note.onset_ticks - cum;
            out.push_back({Kind::MicroShift,
                           vocab_.bucket_microshift(static_cast<int>(
                               std::clamp(residual, -(1L << 30), 1L << 30)))});
        }
        if (config_.use_duration)
            out.push_back({Kind::Duration, vocab_.nearest_duration(note.duration_ticks)});
    }
    out.push_back({Kind::Eos, 0});
    return out;
}

midi::Score Tokenizer::decode(const TokenSequence& tokens) const {
    midi::Score score;
    score.ticks_per_quarter = config_.ticks_per_quarter;

    long cum = 0;
    bool seen_bos = false, seen_eos = false;
    bool have_pitch = false;
    int pitch = 0, velocity = 64, microshift = 0;
    long duration = min_grid_;

    auto fail = [](size_t i, const std::string& msg) {
        throw TokenizeError("token " + std::to_string(i) + ": " + msg);
    };
    auto flush = [&]() {
        if (!have_pitch) return;
        long onset = std::max(0L, cum + microshift);
        score.notes.push_back({pitch, onset, duration, velocity});
        have_pitch = false;
        velocity = 64;
        microshift = 0;
        duration = min_grid_;
    };

    for (size_t i = 0; i < tokens.size(); ++i) {
        const Token& t = tokens[i];
        if (!vocab_.try_id(t)) fail(i, "not in vocabulary: " + token_to_string(t));
        if (!seen_bos) {
            if (t.kind != Kind::Bos) fail(i, "sequence must start with BOS");
            seen_bos = true;
            continue;
        }
        if (seen_eos) {
            if (t.kind == Kind::Pad) continue;
            fail(i, "token after EOS");
        }
        switch (t.kind) {
        case Kind::TimeShift:
            flush();
            cum += t.value;
            break;
        case Kind::Pitch:
            flush();
            pitch = t.value;
            have_pitch = true;
            break;
        case Kind::Velocity:
            if (!have_pitch) fail(i, "Velocity before any Pitch");
            velocity = t.value;
            break;
        case Kind::MicroShift:
            if (!have_pitch) fail(i, "MicroShift before any Pitch");
            microshift = t.value;
            break;
        case Kind::Duration:
            if (!have_pitch) fail(i, "Duration before any Pitch");
            duration = t.value;
            break;
        case Kind::Eos:
            flush();
            seen_eos = true;
            break;
        case Kind::Bos:
            fail(i, "duplicate BOS");
            break;
        case Kind::Pad:
        case Kind::Mask:
            fail(i, std::string("unexpected ") + kind_name(t.kind));
            break;
        }
    }
    if (!seen_eos) flush();
    midi::normalize(score);
    return score;
}

TokenSequence Tokenizer::strip_performance(const TokenSequence& tokens) const {
    TokenSequence out;
    out.reserve(tokens.size());
    for (const Token& t : tokens)
        if (!is_performance(t.kind)) out.push_back(t);
    return out;
}

std::pair<TokenSequence, std::vector<Tokenizer::MaskTarget>>
Tokenizer::mask_performance(const TokenSequence& tokens) const {
    TokenSequence masked = tokens;
    std::vector<MaskTarget> targets;
    for (size_t i = 0; i < masked.size(); ++i) {
        if (is_performance(masked[i].kind)) {
            targets.push_back({i, masked[i]});
            masked[i] = {Kind::Mask, 0};
        }
    }
    return {std::move(masked), std::move(targets)};
}

std::vector<int> Tokenizer::to_ids(const TokenSequence& tokens) const {
    std::vector<int> ids;
    ids.reserve(tokens.size());
    for (const Token& t : tokens) ids.push_back(vocab_.id(t));
    return ids;
}

TokenSequence Tokenizer::from_ids(const std::vector<int>& ids) const {
    TokenSequence out;
    out.reserve(ids.size());
    for (int id : ids) out.push_back(vocab_.token(id));
    return out;
}

std::string sequence_to_text(const TokenSequence& tokens) {
    std::ostringstream out;
    for (const Token& t : tokens) out << token_to_string(t) << '\n';
    return out.str();
}

TokenSequence sequence_from_text(const std::string& text) {
    TokenSequence out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        if (line.empty()) continue;
        out.push_back(token_from_string(line));
    }
    return out;
}

KvMap tokenizer_config_to_kv(const TokenizerConfig& c, const std::string& prefix) {
    KvMap kv;
    kv[prefix + "ticks_per_quarter"] = std::to_string(c.ticks_per_quarter);
    kv[prefix + "grids"] = int_list_to_string(c.grids);
    kv[prefix + "max_microshift_ticks"] = std::to_string(c.max_microshift_ticks);
    kv[prefix + "microshift_buckets"] = std::to_string(c.microshift_buckets);
    kv[prefix + "velocity_buckets"] = std::to_string(c.velocity_buckets);
    kv[prefix + "use_duration"] = c.use_duration ? "true" : "false";
    kv[prefix + "use_velocity"] = c.use_velocity ? "true" : "false";
    kv[prefix + "use_microshift"] = c.use_microshift ? "true" : "false";
    kv[prefix + "pitch_min"] = std::to_string(c.pitch_min);
    kv[prefix + "pitch_max"] = std::to_string(c.pitch_max);
    kv[prefix + "max_timeshift_ticks"] = std::to_string(c.max_timeshift_ticks);
    return kv;
}

TokenizerConfig tokenizer_config_from_kv(const KvMap& kv, const std::string& prefix) {
    TokenizerConfig d; // defaults
    TokenizerConfig c;
    c.ticks_per_quarter = kv_get_int(kv, prefix + "ticks_per_quarter", d.ticks_per_quarter);
    c.grids = kv_get_int_list(kv, prefix + "grids", d.grids);
    c.max_microshift_ticks = kv_get_int(kv, prefix + "max_microshift_ticks", d.max_microshift_ticks);
    c.microshift_buckets = kv_get_int(kv, prefix + "microshift_buckets", d.microshift_buckets);
    c.velocity_buckets = kv_get_int(kv, prefix + "velocity_buckets", d.velocity_buckets);
    c.use_duration = kv_get_bool(kv, prefix + "use_duration", d.use_duration);
    c.use_velocity = kv_get_bool(kv, prefix + "use_velocity", d.use_velocity);
    c.use_microshift = kv_get_bool(kv, prefix + "use_microshift", d.use_microshift);
    c.pitch_min = kv_get_int(kv, prefix + "pitch_min", d.pitch_min);
    c.pitch_max = kv_get_int(kv, prefix + "pitch_max", d.pitch_max);
    c.max_timeshift_ticks = kv_get_int(kv, prefix + "max_timeshift_ticks", d.max_timeshift_ticks);
    c.validate();
    return c;
}

} // namespace cadenza::pertok
