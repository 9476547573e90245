#include "cadenza/composer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace cadenza::composer {

using nn::Real;
using nn::Tensor;

void ComposerConfig::validate() const {
    if (layers <= 0 || heads <= 0 || hidden_d <= 0 || latent_dz <= 0)
        throw std::invalid_argument("composer: dimensions must be positive");
    if (hidden_d % heads != 0)
        throw std::invalid_argument("composer: hidden_d must be divisible by heads");
    if ((hidden_d / heads) % 2 != 0)
        throw std::invalid_argument("composer: head dimension must be even for rotary positions");
    if (latent_dz > hidden_d)
        throw std::invalid_argument("composer: latent_dz must not exceed hidden_d");
    if (vocab_size <= 0) throw std::invalid_argument("composer: vocab_size must be set");
    if (max_seq_len <= 1) throw std::invalid_argument("composer: max_seq_len too small");
}

KvMap ComposerConfig::to_kv(const std::string& p) const {
    KvMap kv;
    kv[p + "layers"] = std::to_string(layers);
    kv[p + "heads"] = std::to_string(heads);
    kv[p + "hidden_d"] = std::to_string(hidden_d);
    kv[p + "latent_dz"] = std::to_string(latent_dz);
    kv[p + "max_seq_len"] = std::to_string(max_seq_len);
    kv[p + "vocab_size"] = std::to_string(vocab_size);
    kv[p + "free_bit_lambda"] = std::to_string(free_bit_lambda);
    kv[p + "beta_max"] = std::to_string(beta_max);
    kv[p + "warmup_steps"] = std::to_string(warmup_steps);
    kv[p + "ramp_steps"] = std::to_string(ramp_steps);
    kv[p + "cycle_steps"] = std::to_string(cycle_steps);
    kv[p + "rope_base"] = std::to_string(rope_base);
    kv[p + "dropout"] = std::to_string(dropout);
    kv[p + "lr"] = std::to_string(lr);
    kv[p + "grad_clip"] = std::to_string(grad_clip);
    kv[p + "batch_size"] = std::to_string(batch_size);
    kv[p + "train_steps"] = std::to_string(train_steps);
    kv[p + "checkpoint_every"] = std::to_string(checkpoint_every);
    return kv;
}

ComposerConfig ComposerConfig::from_kv(const KvMap& kv, const std::string& p) {
    ComposerConfig d;
    ComposerConfig c;
    c.layers = kv_get_int(kv, p + "layers", d.layers);
    c.heads = kv_get_int(kv, p + "heads", d.heads);
    c.hidden_d = kv_get_int(kv, p + "hidden_d", d.hidden_d);
    c.latent_dz = kv_get_int(kv, p + "latent_dz", d.latent_dz);
    c.max_seq_len = kv_get_int(kv, p + "max_seq_len", d.max_seq_len);
    c.vocab_size = kv_get_int(kv, p + "vocab_size", d.vocab_size);
    c.free_bit_lambda = kv_get_double(kv, p + "free_bit_lambda", d.free_bit_lambda);
    c.beta_max = kv_get_double(kv, p + "beta_max", d.beta_max);
    c.warmup_steps = kv_get_long(kv, p + "warmup_steps", d.warmup_steps);
    c.ramp_steps = kv_get_long(kv, p + "ramp_steps", d.ramp_steps);
    c.cycle_steps = kv_get_long(kv, p + "cycle_steps", d.cycle_steps);
    c.rope_base = kv_get_double(kv, p + "rope_base", d.rope_base);
    c.dropout = kv_get_double(kv, p + "dropout", d.dropout);
    c.lr = kv_get_double(kv, p + "lr", d.lr);
    c.grad_clip = kv_get_double(kv, p + "grad_clip", d.grad_clip);
    c.batch_size = kv_get_int(kv, p + "batch_size", d.batch_size);
    c.train_steps = kv_get_long(kv, p + "train_steps", d.train_steps);
    c.checkpoint_every = kv_get_long(kv, p + "checkpoint_every", d.checkpoint_every);
    return c;
}

double beta_schedule(long step, const ComposerConfig& c) {
    double envelope;
    if (step < c.warmup_steps) {
        envelope = 0.0;
    } else if (step < c.warmup_steps + c.ramp_steps) {
        envelope = c.beta_max * static_cast<double>(step - c.warmup_steps) / c.ramp_steps;
    } else {
        envelope = c.beta_max;
    }
    double phase = static_cast<double>(step % c.cycle_steps) / c.cycle_steps;
    double cycle = 0.5 * (1.0 - std::cos(2.0 * 3.14159265358979323846 * phase));
    return envelope * cycle;
}

ComposerModel::ComposerModel(ComposerConfig config, uint64_t seed) : config_(config) {
    config_.validate();
    Pcg32 rng(seed, 17);
    embedding_ = Tensor::randn(config_.vocab_size, config_.hidden_d, 0.02, rng);
    for (int l = 0; l < config_.layers; ++l)
        encoder_.push_back(nn::TransformerLayer::init(config_.hidden_d, rng));
    for (int l = 0; l < config_.layers; ++l)
        decoder_.push_back(nn::TransformerLayer::init(config_.hidden_d, rng));
    enc_final_ = nn::LayerNormParams::init(config_.hidden_d);
    dec_final_ = nn::LayerNormParams::init(config_.hidden_d);
    w_mu_ = Tensor::randn(config_.hidden_d, config_.latent_dz, 0.02, rng);
    w_logvar_ = Tensor::randn(config_.hidden_d, config_.latent_dz, 0.02, rng);
    w_pre_ = Tensor::randn(config_.latent_dz, config_.hidden_d, 0.02, rng);
    rotary_ = nn::RotaryTable::build(config_.max_seq_len, config_.hidden_d / config_.heads,
                                     config_.rope_base);
}

std::vector<Tensor> ComposerModel::parameters() {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
}

std::vector<std::pair<std::string, Tensor>> ComposerModel::named_parameters() {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("embedding", embedding_);
    auto add_layer = [&](const std::string& stem, nn::TransformerLayer& l) {
        std::vector<Tensor> ts;
        l.collect(ts);
        static const char* names[] = {"ln1.gamma", "ln1.beta", "ln2.gamma", "ln2.beta",
                                      "attn.wq",   "attn.wk",  "attn.wv",   "attn.wo",
                                      "attn.bq",   "attn.bk",  "attn.bv",   "attn.bo",
                                      "ff.w1",     "ff.b1",    "ff.w2",     "ff.b2"};
        for (size_t i = 0; i < ts.size(); ++i)
            out.emplace_back(stem + "." + names[i], ts[i]);
    };
    for (size_t l = 0; l < encoder_.size(); ++l)
        add_layer("encoder." + std::to_string(l), encoder_[l]);
    for (size_t l = 0; l < decoder_.size(); ++l)
        add_layer("decoder." + std::to_string(l), decoder_[l]);
    out.emplace_back("enc_final.gamma", enc_final_.gamma);
    out.emplace_back("enc_final.beta", enc_final_.beta);
    out.emplace_back("dec_final.gamma", dec_final_.gamma);
    out.emplace_back("dec_final.beta", dec_final_.beta);
    out.emplace_back("w_mu", w_mu_);
    out.emplace_back("w_logvar", w_logvar_);
    out.emplace_back("w_pre", w_pre_);
    return out;
}

nn::Tensor ComposerModel::encode_hidden(const std::vector<int>& ids) {
    if (ids.empty()) throw std::invalid_argument("composer: empty sequence");
    if (static_cast<int>(ids.size()) > config_.max_seq_len)
        throw std::invalid_argument("composer: sequence longer than max_seq_len (" +
                                    std::to_string(ids.size()) + " > " +
                                    std::to_string(config_.max_seq_len) + ")");
    Tensor h = nn::embedding(embedding_, ids);
    for (const auto& layer : encoder_)
        h = layer.forward(h, config_.heads, nn::AttnMask::Bidirectional, &rotary_);
    h = nn::layer_norm(h, enc_final_.gamma, enc_final_.beta);
    return nn::slice_rows(h, 0, 1);
}

ComposerModel::Latent ComposerModel::reparameterize(const Tensor& h,
                                                    const std::vector<Real>& eps) {
    if (static_cast<int>(eps.size()) != config_.latent_dz)
        throw std::invalid_argument("composer: eps must have latent_dz entries");
    Latent lat;
    lat.mu = nn::matmul(h, w_mu_);
    lat.logvar = nn::matmul(h, w_logvar_);
    Tensor eps_t = Tensor::from(eps, 1, config_.latent_dz);
    lat.z = nn::add(lat.mu, nn::mul(nn::exp_t(nn::scale(lat.logvar, 0.5)), eps_t));
    return lat;
}

nn::Tensor ComposerModel::decode_forward(const std::vector<int>& prev_ids, const Tensor& z,
                                         bool train_mode, Pcg32* dropout_rng) {
    if (prev_ids.empty()) throw std::invalid_argument("composer: empty decoder input");
    if (static_cast<int>(prev_ids.size()) > config_.max_seq_len)
        throw std::invalid_argument("composer: decoder input longer than max_seq_len");
    if (z.rows() != 1 || z.cols() != config_.latent_dz)
        throw std::invalid_argument("composer: z must be 1x" + std::to_string(config_.latent_dz));

    Tensor z_pre = nn::matmul(z, w_pre_); // 1×d
    Tensor h = nn::embedding(embedding_, prev_ids);
    double p = train_mode ? config_.dropout : 0.0;
    for (const auto& layer : decoder_) {
        // in-attention: the projected latent joins every timestep before the layer
        Tensor x = nn::add_rowvec(h, z_pre);
        h = layer.forward(x, config_.heads, nn::AttnMask::Causal, &rotary_, p, dropout_rng);
    }
    h = nn::layer_norm(h, dec_final_.gamma, dec_final_.beta);
    return nn::matmul_transB(h, embedding_); // tied output projection
}

ComposerModel::LossParts ComposerModel::loss(const std::vector<int>& ids,
                                             const std::vector<Real>& eps, double beta,
                                             bool train_mode, Pcg32* dropout_rng) {
    if (ids.size() < 2) throw std::invalid_argument("composer: loss needs at least 2 tokens");
    Tensor h = encode_hidden(ids);
    Latent lat = reparameterize(h, eps);

    std::vector<int> prev(ids.begin(), ids.end() - 1);
    std::vector<int> next(ids.begin() + 1, ids.end());
    Tensor logits = decode_forward(prev, lat.z, train_mode, dropout_rng);

    LossParts parts;
    parts.recon = nn::cross_entropy_mean(logits, next);
    parts.kl = nn::kl_free_bits(lat.mu, lat.logvar, config_.free_bit_lambda);
    parts.total = nn::add(parts.recon, nn::scale(parts.kl, beta));
    return parts;
}

std::vector<Real> ComposerModel::latent_mean(const std::vector<int>& ids) {
    Tensor h = encode_hidden(ids);
    return nn::matmul(h, w_mu_).value();
}

std::vector<Real> ComposerModel::latent_sample(const std::vector<int>& ids, Pcg32& rng) {
    std::vector<Real> eps(config_.latent_dz);
    for (auto& e : eps) e = rng.normal();
    Latent lat = reparameterize(encode_hidden(ids), eps);
    return lat.z.value();
}

namespace {

// Canonical score-token grammar: which kinds may follow the current one.
std::vector<pertok::Kind> allowed_next(pertok::Kind last, bool with_duration) {
    using pertok::Kind;
    switch (last) {
    case Kind::Bos:
        return {Kind::TimeShift, Kind::Pitch, Kind::Eos};
    case Kind::TimeShift:
        return {Kind::TimeShift, Kind::Pitch};
    case Kind::Pitch:
        if (with_duration) return {Kind::Duration};
        return {Kind::TimeShift, Kind::Pitch, Kind::Eos};
    case Kind::Duration:
        return {Kind::TimeShift, Kind::Pitch, Kind::Eos};
    default:
        return {};
    }
}

} // namespace

std::vector<int> ComposerModel::generate(const std::vector<Real>& z,
                                         const pertok::Vocabulary& vocab, bool with_duration,
                                         const GenerateOptions& opts) {
    if (static_cast<int>(vocab.size()) != config_.vocab_size)
        throw std::invalid_argument("composer: vocabulary size does not match checkpoint");
    Tensor zt = Tensor::from(z, 1, config_.latent_dz);
    Pcg32 rng(opts.seed, 91);

    std::vector<int> ids = {vocab.id({pertok::Kind::Bos, 0})};
    pertok::Kind last = pertok::Kind::Bos;
    int limit = std::min(opts.max_len, config_.max_seq_len - 1);

    while (static_cast<int>(ids.size()) < limit) {
        Tensor logits = decode_forward(ids, zt);
        int t = logits.rows() - 1;

        // mask ids whose kind the grammar forbids
        std::vector<std::pair<int, Real>> candidates;
        for (pertok::Kind k : allowed_next(last, with_duration)) {
            auto [first, count] = vocab.id_range(k);
            for (int i = 0; i < count; ++i)
                candidates.emplace_back(first + i, logits.at(t, first + i));
        }
        if (candidates.empty()) break;

        int chosen;
        if (opts.mode == GenerateOptions::Mode::Greedy || opts.temperature <= 1e-9) {
            chosen = std::max_element(candidates.begin(), candidates.end(),
                                      [](const auto& a, const auto& b) {
                                          return std::tie(a.second, a.first) <
                                                 std::tie(b.second, b.first);
                                      })
                         ->first;
        } else {
            // temperature softmax over allowed ids, then top-p truncation
            Real mx = -1e300;
            for (auto& [id, v] : candidates) mx = std::max(mx, v / opts.temperature);
            Real denom = 0;
            for (auto& [id, v] : candidates) {
                v = std::exp(v / opts.temperature - mx);
                denom += v;
            }
            for (auto& [id, v] : candidates) v /= denom;
            std::sort(candidates.begin(), candidates.end(),
                      [](const auto& a, const auto& b) { return a.second > b.second; });
            Real cum = 0;
            size_t keep = 0;
            while (keep < candidates.size() && cum < opts.top_p)
                cum += candidates[keep++].second;
            Real r = rng.uniform() * cum;
            Real acc = 0;
            chosen = candidates[keep - 1].first;
            for (size_t i = 0; i < keep; ++i) {
                acc += candidates[i].second;
                if (r <= acc) {
                    chosen = candidates[i].first;
                    break;
                }
            }
        }

        ids.push_back(chosen);
        last = vocab.token(chosen).kind;
        if (last == pertok::Kind::Eos) return ids;
    }
    ids.push_back(vocab.id({pertok::Kind::Eos, 0}));
    return ids;
}

Checkpoint ComposerModel::to_checkpoint(const KvMap& extra_meta) {
    Checkpoint ckpt;
    ckpt.meta["model"] = "composer";
    for (const auto& [k, v] : config_.to_kv("composer.")) ckpt.meta[k] = v;
    for (const auto& [k, v] : extra_meta) ckpt.meta[k] = v;
    for (auto& [name, t] : named_parameters()) {
        Checkpoint::Array a;
        a.name = name;
        a.dims = {static_cast<uint32_t>(t.rows()), static_cast<uint32_t>(t.cols())};
        a.data.assign(t.value().begin(), t.value().end());
        ckpt.arrays.push_back(std::move(a));
    }
    return ckpt;
}

ComposerModel ComposerModel::from_checkpoint(const Checkpoint& ckpt) {
    if (ckpt.meta_or("model", "") != "composer")
        throw std::runtime_error("checkpoint does not contain a composer model");
    ComposerConfig config = ComposerConfig::from_kv(ckpt.meta, "composer.");
    ComposerModel model(config, 0);
    for (auto& [name, t] : model.named_parameters()) {
        const auto* a = ckpt.find(name);
        if (!a) throw std::runtime_error("checkpoint missing array: " + name);
        if (a->data.size() != t.size())
            throw std::runtime_error("checkpoint array '" + name + "' has wrong size");
        std::copy(a->data.begin(), a->data.end(), t.value().begin());
    }
    return model;
}

TrainResult train_composer(ComposerModel& model, const std::vector<std::vector<int>>& corpus,
                           uint64_t seed, const CheckpointSink& sink) {
    if (corpus.empty()) throw std::invalid_argument("composer training corpus is empty");
    const auto& c = model.config();
    auto params = model.parameters();
    nn::AdamState adam;
    Pcg32 shuffle_rng(seed, 3);
    Pcg32 eps_rng(seed, 5);
    Pcg32 drop_rng(seed, 7);

    std::vector<size_t> order(corpus.size());
    std::iota(order.begin(), order.end(), 0);
    size_t cursor = order.size(); // trigger shuffle on first use

    TrainResult result;
    for (long step = 0; step < c.train_steps; ++step) {
        double beta = beta_schedule(step, c);
        std::vector<Tensor> losses;
        double recon_sum = 0, kl_sum = 0;
        int batch = std::min<int>(c.batch_size, static_cast<int>(corpus.size()));
        for (int b = 0; b < batch; ++b) {
            if (cursor >= order.size()) {
                for (size_t i = order.size(); i > 1; --i)
                    std::swap(order[i - 1], order[shuffle_rng.next_below(static_cast<uint32_t>(i))]);
                cursor = 0;
            }
            const auto& ids = corpus[order[cursor++]];
            std::vector<Real> eps(c.latent_dz);
            for (auto& e : eps) e = eps_rng.normal();
            auto parts = model.loss(ids, eps, beta, c.dropout > 0.0, &drop_rng);
            recon_sum += parts.recon.item();
            kl_sum += parts.kl.item();
            losses.push_back(parts.total);
        }
        Tensor batch_loss = losses[0];
        for (size_t i = 1; i < losses.size(); ++i) batch_loss = nn::add(batch_loss, losses[i]);
        batch_loss = nn::scale(batch_loss, 1.0 / batch);

        nn::backward(batch_loss);
        nn::clip_grad_norm(params, c.grad_clip);
        nn::adam_step(params, adam, c.lr);

        result.log.push_back({step, recon_sum / batch, kl_sum / batch, beta});
        if (sink && c.checkpoint_every > 0 && (step + 1) % c.checkpoint_every == 0)
            sink(step + 1, model);
    }
    if (sink) sink(c.train_steps, model);
    return result;
}

} // namespace cadenza::composer
