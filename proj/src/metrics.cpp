#include "cadenza/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace cadenza::metrics {

int onset_slot(long onset_ticks, int tpq) {
    // round half up to the nearest 16th (tpq/4 ticks per 16th)
    long num = onset_ticks * 8 + tpq; // == (onset / (tpq/4) + 0.5) * 2*tpq
    long slot = num / (2 * tpq);
    return static_cast<int>(((slot % 64) + 64) % 64);
}

int duration_slot(long duration_ticks, int tpq) {
    long num = duration_ticks * 8 + tpq;
    long slot = num / (2 * tpq);
    return static_cast<int>(std::clamp<long>(slot, 0, 63));
}

AttributeVector attribute_vector(const midi::Score& score, AttributeKind kind) {
    AttributeVector out{kind, {}};
    out.values.assign(kind == AttributeKind::Pitch ? 128 : 64, 0);
    for (const auto& n : score.notes) {
        switch (kind) {
        case AttributeKind::Pitch:
            out.values[static_cast<size_t>(std::clamp(n.pitch, 0, 127))] += 1;
            break;
        case AttributeKind::Onset:
            out.values[onset_slot(n.onset_ticks, score.ticks_per_quarter)] += 1;
            break;
        case AttributeKind::Duration:
            out.values[duration_slot(n.duration_ticks, score.ticks_per_quarter)] += 1;
            break;
        }
    }
    return out;
}

double cosine_similarity(const AttributeVector& a, const AttributeVector& b) {
    if (a.values.size() != b.values.size())
        throw std::invalid_argument("cosine_similarity: vector length mismatch");
    double dot = 0, na = 0, nb = 0;
    for (size_t i = 0; i < a.values.size(); ++i) {
        dot += static_cast<double>(a.values[i]) * b.values[i];
        na += static_cast<double>(a.values[i]) * a.values[i];
        nb += static_cast<double>(b.values[i]) * b.values[i];
    }
    if (na == 0 || nb == 0)
        throw std::invalid_argument("cosine_similarity: undefined for a zero vector");
    return 100.0 * dot / (std::sqrt(na) * std::sqrt(nb));
}

double absolute_similarity(const midi::Score& gen, const midi::Score& src) {
    if (gen.notes.empty()) return 0.0;
    std::map<std::tuple<int, int, int>, long> pool;
    for (const auto& n : src.notes) {
        pool[{n.pitch, onset_slot(n.onset_ticks, src.ticks_per_quarter),
              duration_slot(n.duration_ticks, src.ticks_per_quarter)}] += 1;
    }
    long matched = 0;
    for (const auto& n : gen.notes) {
        auto key = std::tuple{n.pitch, onset_slot(n.onset_ticks, gen.ticks_per_quarter),
                              duration_slot(n.duration_ticks, gen.ticks_per_quarter)};
        auto it = pool.find(key);
        if (it != pool.end() && it->second > 0) {
            --it->second;
            ++matched;
        }
    }
    return 100.0 * matched / static_cast<double>(gen.notes.size());
}

ExpressionHistogram expression_histograms(const midi::Score& score, int tpq) {
    ExpressionHistogram h;
    h.velocity.assign(128, 0);
    h.microtiming.assign(100, 0);
    long sixteenth = tpq / 4;
    for (const auto& n : score.notes) {
        h.velocity[static_cast<size_t>(std::clamp(n.velocity, 0, 127))] += 1;
        // deviation from the nearest 16th; exactly halfway rounds to the
        // later grid point, so -50% is reachable and +50% is not
        long nearest = ((2 * n.onset_ticks + sixteenth) / (2 * sixteenth)) * sixteenth;
        double percent = 100.0 * static_cast<double>(n.onset_ticks - nearest) / sixteenth;
        int bin = static_cast<int>(std::floor(percent)) + 50;
        bin = std::clamp(bin, 0, 99);
        h.microtiming[static_cast<size_t>(bin)] += 1;
    }
    return h;
}

void accumulate(ExpressionHistogram& into, const ExpressionHistogram& other) {
    if (into.velocity.empty()) {
        into = other;
        return;
    }
    for (size_t i = 0; i < into.velocity.size(); ++i) into.velocity[i] += other.velocity[i];
    for (size_t i = 0; i < into.microtiming.size(); ++i)
        into.microtiming[i] += other.microtiming[i];
}

Divergence histogram_divergence(const std::vector<long>& p, const std::vector<long>& q) {
    if (p.size() != q.size())
        throw std::invalid_argument("histogram_divergence: length mismatch");
    long sp = 0, sq = 0;
    for (long v : p) sp += v;
    for (long v : q) sq += v;
    if (sp <= 0 || sq <= 0)
        throw std::invalid_argument("histogram_divergence: empty histogram");

    const double eps = 1e-6;
    size_t n = p.size();
    std::vector<double> pp(n), qq(n);
    double zp = 0, zq = 0;
    for (size_t i = 0; i < n; ++i) {
        pp[i] = static_cast<double>(p[i]) / sp + eps;
        qq[i] = static_cast<double>(q[i]) / sq + eps;
        zp += pp[i];
        zq += qq[i];
    }
    Divergence d{0, 0, 0};
    double mp = 0, mq = 0;
    for (size_t i = 0; i < n; ++i) {
        pp[i] /= zp;
        qq[i] /= zq;
        d.kl += pp[i] * std::log(pp[i] / qq[i]);
        mp += pp[i] * static_cast<double>(i);
        mq += qq[i] * static_cast<double>(i);
    }
    double vp = 0, vq = 0;
    for (size_t i = 0; i < n; ++i) {
        vp += pp[i] * (i - mp) * (i - mp);
        vq += qq[i] * (i - mq) * (i - mq);
    }
    d.mean_delta = std::abs(mp - mq);
    d.std_delta = std::abs(std::sqrt(vp) - std::sqrt(vq));
    return d;
}

} // namespace cadenza::metrics
