#include "cadenza/performer.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace cadenza::performer {

using nn::Real;
using nn::Tensor;

void PerformerConfig::validate() const {
    if (layers <= 0 || heads <= 0 || hidden_d <= 0)
        throw std::invalid_argument("performer: dimensions must be positive");
    if (hidden_d % heads != 0)
        throw std::invalid_argument("performer: hidden_d must be divisible by heads");
    if (vocab_size <= 0) throw std::invalid_argument("performer: vocab_size must be set");
    if (dropout < 0.0 || dropout >= 1.0)
        throw std::invalid_argument("performer: dropout must be in [0,1)");
}

KvMap PerformerConfig::to_kv(const std::string& p) const {
    KvMap kv;
    kv[p + "layers"] = std::to_string(layers);
    kv[p + "heads"] = std::to_string(heads);
    kv[p + "hidden_d"] = std::to_string(hidden_d);
    kv[p + "max_seq_len"] = std::to_string(max_seq_len);
    kv[p + "vocab_size"] = std::to_string(vocab_size);
    kv[p + "dropout"] = std::to_string(dropout);
    kv[p + "lr"] = std::to_string(lr);
    kv[p + "grad_clip"] = std::to_string(grad_clip);
    kv[p + "batch_size"] = std::to_string(batch_size);
    kv[p + "train_steps"] = std::to_string(train_steps);
    return kv;
}

PerformerConfig PerformerConfig::from_kv(const KvMap& kv, const std::string& p) {
    PerformerConfig d;
    PerformerConfig c;
    c.layers = kv_get_int(kv, p + "layers", d.layers);
    c.heads = kv_get_int(kv, p + "heads", d.heads);
    c.hidden_d = kv_get_int(kv, p + "hidden_d", d.hidden_d);
    c.max_seq_len = kv_get_int(kv, p + "max_seq_len", d.max_seq_len);
    c.vocab_size = kv_get_int(kv, p + "vocab_size", d.vocab_size);
    c.dropout = kv_get_double(kv, p + "dropout", d.dropout);
    c.lr = kv_get_double(kv, p + "lr", d.lr);
    c.grad_clip = kv_get_double(kv, p + "grad_clip", d.grad_clip);
    c.batch_size = kv_get_int(kv, p + "batch_size", d.batch_size);
    c.train_steps = kv_get_long(kv, p + "train_steps", d.train_steps);
    return c;
}

PerformerModel::PerformerModel(PerformerConfig config, uint64_t seed) : config_(config) {
    config_.validate();
    Pcg32 rng(seed, 23);
    embedding_ = Tensor::randn(config_.vocab_size, config_.hidden_d, 0.02, rng);
    positions_ = nn::sinusoidal_positions(config_.max_seq_len, config_.hidden_d);
    for (int l = 0; l < config_.layers; ++l)
        layers_.push_back(nn::TransformerLayer::init(config_.hidden_d, rng));
    final_norm_ = nn::LayerNormParams::init(config_.hidden_d);
}

std::vector<Tensor> PerformerModel::parameters() {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
}

std::vector<std::pair<std::string, Tensor>> PerformerModel::named_parameters() {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("embedding", embedding_);
    for (size_t l = 0; l < layers_.size(); ++l) {
        std::vector<Tensor> ts;
        layers_[l].collect(ts);
        static const char* names[] = {"ln1.gamma", "ln1.beta", "ln2.gamma", "ln2.beta",
                                      "attn.wq",   "attn.wk",  "attn.wv",   "attn.wo",
                                      "attn.bq",   "attn.bk",  "attn.bv",   "attn.bo",
                                      "ff.w1",     "ff.b1",    "ff.w2",     "ff.b2"};
        for (size_t i = 0; i < ts.size(); ++i)
            out.emplace_back("layer." + std::to_string(l) + "." + names[i], ts[i]);
    }
    out.emplace_back("final.gamma", final_norm_.gamma);
    out.emplace_back("final.beta", final_norm_.beta);
    return out;
}

nn::Tensor PerformerModel::forward(const std::vector<int>& ids, bool train_mode,
                                   Pcg32* dropout_rng) {
    if (ids.empty()) throw std::invalid_argument("performer: empty sequence");
    if (static_cast<int>(ids.size()) > config_.max_seq_len)
        throw std::invalid_argument("performer: sequence longer than max_seq_len (" +
                                    std::to_string(ids.size()) + " > " +
                                    std::to_string(config_.max_seq_len) + ")");
    Tensor h = nn::embedding(embedding_, ids);
    h = nn::add(h, nn::slice_rows(positions_, 0, static_cast<int>(ids.size())));
    double p = train_mode ? config_.dropout : 0.0;
    for (const auto& layer : layers_)
        h = layer.forward(h, config_.heads, nn::AttnMask::Bidirectional, nullptr, p, dropout_rng);
    h = nn::layer_norm(h, final_norm_.gamma, final_norm_.beta);
    return nn::matmul_transB(h, embedding_);
}

nn::Tensor PerformerModel::loss(const Tensor& logits, const std::vector<int>& targets,
                                const std::vector<size_t>& mask_positions) {
    if (mask_positions.empty())
        throw std::invalid_argument("performer: no masked positions to score");
    return nn::cross_entropy_mean(logits, targets, mask_positions);
}

Checkpoint PerformerModel::to_checkpoint(const KvMap& extra_meta) {
    Checkpoint ckpt;
    ckpt.meta["model"] = "performer";
    for (const auto& [k, v] : config_.to_kv("performer.")) ckpt.meta[k] = v;
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

PerformerModel PerformerModel::from_checkpoint(const Checkpoint& ckpt) {
    if (ckpt.meta_or("model", "") != "performer")
        throw std::runtime_error("checkpoint does not contain a performer model");
    PerformerConfig config = PerformerConfig::from_kv(ckpt.meta, "performer.");
    PerformerModel model(config, 0);
    for (auto& [name, t] : model.named_parameters()) {
        const auto* a = ckpt.find(name);
        if (!a) throw std::runtime_error("checkpoint missing array: " + name);
        if (a->data.size() != t.size())
            throw std::runtime_error("checkpoint array '" + name + "' has wrong size");
        std::copy(a->data.begin(), a->data.end(), t.value().begin());
    }
    return model;
}

namespace {

// Inserts empty performance slots after each Pitch token (before its
// Duration) so a bare score sequence can be expressivized.
pertok::TokenSequence insert_slots(const pertok::TokenSequence& tokens,
                                   const pertok::TokenizerConfig& config) {
    using pertok::Kind;
    pertok::TokenSequence out;
    out.reserve(tokens.size() * 2);
    for (const auto& t : tokens) {
        if (t.kind == Kind::Velocity || t.kind == Kind::MicroShift) return tokens;
        out.push_back(t);
        if (t.kind == Kind::Pitch) {
            if (config.use_velocity) out.push_back({Kind::Velocity, 0});
            if (config.use_microshift) out.push_back({Kind::MicroShift, 0});
        }
    }
    return out;
}

} // namespace

pertok::TokenSequence apply_performance(const pertok::TokenSequence& score_tokens,
                                        PerformerModel& model,
                                        const pertok::Tokenizer& tokenizer, FillMode mode,
                                        uint64_t seed) {
    const auto& vocab = tokenizer.vocab();
    if (static_cast<int>(vocab.size()) != model.config().vocab_size)
        throw std::runtime_error("performer checkpoint vocabulary size does not match tokenizer");

    pertok::TokenSequence with_slots = insert_slots(score_tokens, tokenizer.config());
    auto [masked, targets] = tokenizer.mask_performance(with_slots);

    if (targets.empty()) return with_slots;

    std::vector<int> ids = tokenizer.to_ids(masked);
    Tensor logits = model.forward(ids);
    Pcg32 rng(seed, 41);

    pertok::TokenSequence out = with_slots;
    for (const auto& target : targets) {
        auto [first, count] = vocab.id_range(target.original.kind);
        int row = static_cast<int>(target.position);
        int chosen = first;
        if (mode == FillMode::Greedy) {
            for (int i = 1; i < count; ++i)
                if (logits.at(row, first + i) > logits.at(row, chosen)) chosen = first + i;
        } else {
            Real mx = -1e300;
            for (int i = 0; i < count; ++i) mx = std::max(mx, logits.at(row, first + i));
            std::vector<Real> p(count);
            Real denom = 0;
            for (int i = 0; i < count; ++i) {
                p[i] = std::exp(logits.at(row, first + i) - mx);
                denom += p[i];
            }
            Real r = rng.uniform() * denom;
            Real acc = 0;
            chosen = first + count - 1;
            for (int i = 0; i < count; ++i) {
                acc += p[i];
                if (r <= acc) {
                    chosen = first + i;
                    break;
                }
            }
        }
        out[target.position] = vocab.token(chosen);
    }
    return out;
}

TrainResult train_performer(PerformerModel& model,
                            const std::vector<pertok::TokenSequence>& expressive_corpus,
                            const pertok::Tokenizer& tokenizer, uint64_t seed) {
    if (expressive_corpus.empty())
        throw std::invalid_argument("performer training corpus is empty");
    const auto& c = model.config();

    // pre-mask: 100% of performance tokens in every example
    struct Example {
        std::vector<int> masked_ids, target_ids;
        std::vector<size_t> positions;
    };
    std::vector<Example> examples;
    for (const auto& seq : expressive_corpus) {
        auto [masked, targets] = tokenizer.mask_performance(seq);
        if (targets.empty()) continue;
        Example ex;
        ex.masked_ids = tokenizer.to_ids(masked);
        ex.target_ids = tokenizer.to_ids(seq);
        for (const auto& t : targets) ex.positions.push_back(t.position);
        examples.push_back(std::move(ex));
    }
    if (examples.empty())
        throw std::invalid_argument("performer corpus contains no performance tokens");

    auto params = model.parameters();
    nn::AdamState adam;
    Pcg32 shuffle_rng(seed, 3);
    Pcg32 drop_rng(seed, 7);

    std::vector<size_t> order(examples.size());
    std::iota(order.begin(), order.end(), 0);
    size_t cursor = order.size();

    TrainResult result;
    for (long step = 0; step < c.train_steps; ++step) {
        std::vector<Tensor> losses;
        double loss_sum = 0;
        int batch = std::min<int>(c.batch_size, static_cast<int>(examples.size()));
        for (int b = 0; b < batch; ++b) {
            if (cursor >= order.size()) {
                for (size_t i = order.size(); i > 1; --i)
                    std::swap(order[i - 1], order[shuffle_rng.next_below(static_cast<uint32_t>(i))]);
                cursor = 0;
            }
            const auto& ex = examples[order[cursor++]];
            Tensor logits = model.forward(ex.masked_ids, c.dropout > 0.0, &drop_rng);
            Tensor l = PerformerModel::loss(logits, ex.target_ids, ex.positions);
            loss_sum += l.item();
            losses.push_back(l);
        }
        Tensor batch_loss = losses[0];
        for (size_t i = 1; i < losses.size(); ++i) batch_loss = nn::add(batch_loss, losses[i]);
        batch_loss = nn::scale(batch_loss, 1.0 / batch);

        nn::backward(batch_loss);
        nn::clip_grad_norm(params, c.grad_clip);
        nn::adam_step(params, adam, c.lr);
        result.log.push_back({step, loss_sum / batch});
    }
    return result;
}

} // namespace cadenza::performer
