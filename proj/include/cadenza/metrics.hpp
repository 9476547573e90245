#pragma once

#include <string>
#include <vector>

#include "cadenza/midi.hpp"

namespace cadenza::metrics {

enum class AttributeKind { Pitch, Onset, Duration };

// Count histogram over 128 pitches, or 64 16th-note slots for onsets
// (modulo 4 bars) and durations (clamped).
struct AttributeVector {
    AttributeKind kind;
    std::vector<long> values;
};

AttributeVector attribute_vector(const midi::Score& score, AttributeKind kind);

// 100 * <a,b> / (|a||b|); throws on zero vectors rather than returning 0.
double cosine_similarity(const AttributeVector& a, const AttributeVector& b);

// Percentage of generated notes with an exact (pitch, onset slot,
// snapped duration) match in the source, matched greedily one-to-one.
double absolute_similarity(const midi::Score& gen, const midi::Score& src);

struct ExpressionHistogram {
    std::vector<long> velocity;    // 128 raw velocity counts
    std::vector<long> microtiming; // 100 one-percent bins over [-50, +50)
};

ExpressionHistogram expression_histograms(const midi::Score& score, int tpq);

// Merges per-score histograms (counts add).
void accumulate(ExpressionHistogram& into, const ExpressionHistogram& other);

struct Divergence {
    double kl;         // KL(p || q) after epsilon smoothing
    double mean_delta; // |mean_p - mean_q| over bin indices
    double std_delta;  // |std_p - std_q|
};

Divergence histogram_divergence(const std::vector<long>& p, const std::vector<long>& q);

// onset snapped to the nearest 16th slot (round half up), modulo 64
int onset_slot(long onset_ticks, int tpq);
// duration snapped to the nearest whole number of 16ths, clamped to [0, 63]
int duration_slot(long duration_ticks, int tpq);

} // namespace cadenza::metrics
