#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cadenza/checkpoint.hpp"
#include "cadenza/config.hpp"
#include "cadenza/nn.hpp"
#include "cadenza/pertok.hpp"

namespace cadenza::performer {

struct PerformerConfig {
    int layers = 12;
    int heads = 12;
    int hidden_d = 768;
    int max_seq_len = 512;
    int vocab_size = 0;
    double dropout = 0.10;

    double lr = 1e-4;
    double grad_clip = 1.0;
    int batch_size = 8;
    long train_steps = 2000;

    void validate() const;
    KvMap to_kv(const std::string& prefix = "") const;
    static PerformerConfig from_kv(const KvMap& kv, const std::string& prefix = "");
};

// Bidirectional transformer encoder with additive sinusoidal positions
// and an output projection tied to the embedding table. Infills MASK
// slots holding Velocity/MicroShift tokens.
class PerformerModel {
public:
    PerformerModel(PerformerConfig config, uint64_t seed);

    const PerformerConfig& config() const { return config_; }
    std::vector<nn::Tensor> parameters();
    std::vector<std::pair<std::string, nn::Tensor>> named_parameters();

    nn::Tensor forward(const std::vector<int>& ids, bool train_mode = false,
                       Pcg32* dropout_rng = nullptr);

    // mean cross-entropy over mask_positions only
    static nn::Tensor loss(const nn::Tensor& logits, const std::vector<int>& targets,
                           const std::vector<size_t>& mask_positions);

    Checkpoint to_checkpoint(const KvMap& extra_meta = {});
    static PerformerModel from_checkpoint(const Checkpoint& ckpt);

private:
    PerformerConfig config_;
    nn::Tensor embedding_;
    nn::Tensor positions_; // constant sinusoidal table
    std::vector<nn::TransformerLayer> layers_;
    nn::LayerNormParams final_norm_;
};

enum class FillMode { Greedy, Sample };

// Masks (inserting Velocity/MicroShift slots when the input is a bare
// score sequence), runs the model, and fills each slot with a token of
// the kind that slot requires. Pitch/TimeShift/Duration tokens pass
// through untouched.
pertok::TokenSequence apply_performance(const pertok::TokenSequence& score_tokens,
                                        PerformerModel& model,
                                        const pertok::Tokenizer& tokenizer,
                                        FillMode mode = FillMode::Greedy, uint64_t seed = 0);

struct TrainLogEntry {
    long step;
    double loss;
};

struct TrainResult {
    std::vector<TrainLogEntry> log;
};

// Masked-token training: every performance token of every example is
// masked. Deterministic under (config, corpus, seed).
TrainResult train_performer(PerformerModel& model,
                            const std::vector<pertok::TokenSequence>& expressive_corpus,
                            const pertok::Tokenizer& tokenizer, uint64_t seed);

} // namespace cadenza::performer
