#pragma once

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cadenza/config.hpp"
#include "cadenza/midi.hpp"

namespace cadenza::pertok {

enum class Kind {
    Pad = 0,
    Bos,
    Eos,
    Mask,
    Pitch,
    TimeShift,
    Velocity,
    MicroShift,
    Duration,
};

const char* kind_name(Kind k);
bool kind_has_value(Kind k);
bool is_performance(Kind k); // Velocity or MicroShift
bool is_special(Kind k);     // Pad/Bos/Eos/Mask

struct Token {
    Kind kind = Kind::Pad;
    int value = 0; // ticks for TimeShift/MicroShift/Duration, MIDI pitch, bucket-center velocity

    bool operator==(const Token&) const = default;
    auto operator<=>(const Token&) const = default;
};

// Text form, one token per line: `Kind_value`, bare name for specials.
std::string token_to_string(const Token& t);
Token token_from_string(const std::string& s);

using TokenSequence = std::vector<Token>;

struct TokenizerConfig {
    int ticks_per_quarter = 480;
    std::vector<int> grids = {120, 160};  // step sizes in ticks
    int max_microshift_ticks = 30;
    int microshift_buckets = 31;          // odd, so a zero bucket exists
    int velocity_buckets = 32;
    bool use_duration = true;
    bool use_velocity = true;
    bool use_microshift = true;
    int pitch_min = 0;
    int pitch_max = 127;
    int max_timeshift_ticks = 1920;       // default 4*TPQ

    void validate() const; // throws std::invalid_argument
};

class TokenizeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Dense bijective token<->id tables derived from a config. Id 0 is PAD.
class Vocabulary {
public:
    explicit Vocabulary(const TokenizerConfig& config);

    size_t size() const { return tokens_.size(); }
    const Token& token(int id) const;
    int id(const Token& t) const; // throws TokenizeError on unknown token
    std::optional<int> try_id(const Token& t) const;
    size_t count(Kind k) const;

    // Contiguous id range [first, first+count) for one kind.
    std::pair<int, int> id_range(Kind k) const;

    const std::vector<int>& timeshift_values() const { return timeshifts_; }
    const std::vector<int>& microshift_values() const { return microshifts_; }
    const std::vector<int>& duration_values() const { return durations_; }
    const std::vector<int>& velocity_centers() const { return velocity_centers_; }

    int bucket_velocity(int velocity) const;   // raw 1..127 -> bucket center
    int bucket_microshift(int residual) const; // ticks -> nearest bucket value, clamped
    int nearest_duration(long duration) const;

    std::string export_text() const; // `id<TAB>Kind_value` lines

private:
    std::vector<Token> tokens_;
    std::map<Token, int> ids_;
    std::vector<int> timeshifts_, microshifts_, durations_, velocity_centers_, velocity_lows_;
    std::map<Kind, std::pair<int, int>> ranges_;
};

struct Quantized {
    long grid_tick = 0;
    long residual = 0; // onset - grid_tick
};

class Tokenizer {
public:
    explicit Tokenizer(TokenizerConfig config);

    const TokenizerConfig& config() const { return config_; }
    const Vocabulary& vocab() const { return vocab_; }

    // Nearest k*g over all grids g, k >= 0. Ties prefer the finer grid,
    // then the earlier tick.
    Quantized quantize_onset(long onset_ticks) const;

    TokenSequence encode(const midi::Score& score) const;
    midi::Score decode(const TokenSequence& tokens) const;

    TokenSequence strip_performance(const TokenSequence& tokens) const;

    struct MaskTarget {
        size_t position;
        Token original;
    };
    // Replaces every Velocity/MicroShift token in place with MASK.
    std::pair<TokenSequence, std::vector<MaskTarget>>
    mask_performance(const TokenSequence& tokens) const;

    std::vector<int> to_ids(const TokenSequence& tokens) const;
    TokenSequence from_ids(const std::vector<int>& ids) const;

private:
    // Largest reachable sum of timeshift values nearest to `delta`,
    // decomposed greedy largest-first.
    std::vector<int> decompose_delta(long delta) const;
    bool reachable(long sum) const;

    TokenizerConfig config_;
    Vocabulary vocab_;
    mutable std::vector<char> reach_; // lazily grown reachability table
    int min_grid_ = 0;
};

std::string sequence_to_text(const TokenSequence& tokens);
TokenSequence sequence_from_text(const std::string& text);

// key-value (de)serialization; `prefix` namespaces the keys
KvMap tokenizer_config_to_kv(const TokenizerConfig& config, const std::string& prefix = "");
TokenizerConfig tokenizer_config_from_kv(const KvMap& kv, const std::string& prefix = "");

} // namespace cadenza::pertok
