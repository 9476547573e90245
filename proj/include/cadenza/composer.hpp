#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cadenza/checkpoint.hpp"
#include "cadenza/config.hpp"
#include "cadenza/nn.hpp"
#include "cadenza/pertok.hpp"

namespace cadenza::composer {

struct ComposerConfig {
    int layers = 12;
    int heads = 8;
    int hidden_d = 512;
    int latent_dz = 128;
    int max_seq_len = 512;
    int vocab_size = 0;

    double free_bit_lambda = 0.15;
    double beta_max = 1.0;
    long warmup_steps = 25000; // beta held at 0
    long ramp_steps = 25000;   // linear rise of the envelope to beta_max
    long cycle_steps = 10000;  // cosine cycle period

    double rope_base = 10000.0;
    double dropout = 0.10;

    double lr = 1e-4;
    double grad_clip = 1.0;
    int batch_size = 8;
    long train_steps = 2000;
    long checkpoint_every = 0; // 0 = final only

    void validate() const;
    KvMap to_kv(const std::string& prefix = "") const;
    static ComposerConfig from_kv(const KvMap& kv, const std::string& prefix = "");
};

// envelope(step) × cosine cycle; envelope is 0 through warmup, then a
// linear rise to beta_max over ramp_steps, then flat.
double beta_schedule(long step, const ComposerConfig& config);

struct GenerateOptions {
    enum class Mode { Greedy, Sample } mode = Mode::Greedy;
    double temperature = 1.0;
    double top_p = 1.0;
    int max_len = 512;
    uint64_t seed = 0;
};

// Sequence-to-sequence transformer VAE. The encoder pools position 0 of
// its last layer into h; the decoder is causal with the projected latent
// added to every timestep before each layer and an output projection
// tied to the embedding table.
class ComposerModel {
public:
    ComposerModel(ComposerConfig config, uint64_t seed);

    const ComposerConfig& config() const { return config_; }
    std::vector<nn::Tensor> parameters();
    std::vector<std::pair<std::string, nn::Tensor>> named_parameters();

    // pooled hidden vector h (1×d); bidirectional attention with rotary positions
    nn::Tensor encode_hidden(const std::vector<int>& ids);

    struct Latent {
        nn::Tensor mu, logvar, z; // each 1×dz
    };
    // z = mu + exp(0.5·logvar) ⊙ eps
    Latent reparameterize(const nn::Tensor& h, const std::vector<nn::Real>& eps);

    // teacher-forcing logits (t×vocab), z is 1×dz
    nn::Tensor decode_forward(const std::vector<int>& prev_ids, const nn::Tensor& z,
                              bool train_mode = false, Pcg32* dropout_rng = nullptr);

    struct LossParts {
        nn::Tensor recon, kl, total;
    };
    // ids must start with BOS and end with EOS
    LossParts loss(const std::vector<int>& ids, const std::vector<nn::Real>& eps, double beta,
                   bool train_mode = false, Pcg32* dropout_rng = nullptr);

    // deterministic latent (mu) of a sequence
    std::vector<nn::Real> latent_mean(const std::vector<int>& ids);
    // sampled latent with explicit noise source
    std::vector<nn::Real> latent_sample(const std::vector<int>& ids, Pcg32& rng);

    // grammar-constrained autoregressive decoding from BOS
    std::vector<int> generate(const std::vector<nn::Real>& z, const pertok::Vocabulary& vocab,
                              bool with_duration, const GenerateOptions& opts);

    Checkpoint to_checkpoint(const KvMap& extra_meta = {});
    static ComposerModel from_checkpoint(const Checkpoint& ckpt);

private:
    ComposerConfig config_;
    nn::Tensor embedding_; // vocab×d, tied to the output projection
    std::vector<nn::TransformerLayer> encoder_, decoder_;
    nn::LayerNormParams enc_final_, dec_final_;
    nn::Tensor w_mu_, w_logvar_; // d×dz
    nn::Tensor w_pre_;           // dz×d
    nn::RotaryTable rotary_;
};

struct TrainLogEntry {
    long step;
    double recon, kl, beta;
};

struct TrainResult {
    std::vector<TrainLogEntry> log;
};

using CheckpointSink = std::function<void(long step, ComposerModel&)>;

// Teacher-forced Adam training over score-only id sequences. Fully
// deterministic under (config, corpus, seed).
TrainResult train_composer(ComposerModel& model, const std::vector<std::vector<int>>& corpus,
                           uint64_t seed, const CheckpointSink& sink = {});

} // namespace cadenza::composer
