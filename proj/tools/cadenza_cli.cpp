// cadenza: tokenize, train, and render expressive MIDI from the command line.
//
// Pipelines communicate through files: MIDI in/out, token text
// (one `Kind_value` token per line), binary checkpoints, and `key = value`
// config files. Every command writes a fully-resolved config next to its
// primary output so any run can be reproduced from the artifacts alone.

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <cadenza/composer.hpp>
#include <cadenza/config.hpp>
#include <cadenza/corpus.hpp>
#include <cadenza/metrics.hpp>
#include <cadenza/midi.hpp>
#include <cadenza/performer.hpp>
#include <cadenza/pertok.hpp>
#include <cadenza/rng.hpp>

namespace fs = std::filesystem;
using namespace cadenza;

namespace {

struct GlobalOpts {
    std::string config_path;
    uint64_t seed = 0;
};

KvMap load_config(const GlobalOpts& g) {
    if (g.config_path.empty()) return {};
    return load_kv_file(g.config_path);
}

// The reproducibility artifact: everything needed to rerun the command.
void write_config_echo(const std::string& next_to, const std::string& command, KvMap kv,
                       uint64_t seed) {
    kv["command"] = command;
    kv["seed"] = std::to_string(seed);
    save_kv_file(kv, next_to + ".config");
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << text;
}

std::vector<midi::Score> load_scores_arg(const std::string& path, int bars) {
    if (fs::is_directory(path)) return corpus::load_corpus_dir(path, bars);
    return corpus::segment(midi::read_midi_file(path), bars);
}

pertok::Tokenizer tokenizer_from_meta(const std::map<std::string, std::string>& meta) {
    KvMap kv(meta.begin(), meta.end());
    return pertok::Tokenizer(pertok::tokenizer_config_from_kv(kv, "tok."));
}

// ---------------------------------------------------------------- tokenize

int cmd_tokenize(const GlobalOpts& g, const std::string& in, const std::string& out,
                 bool no_performance) {
    KvMap kv = load_config(g);
    pertok::Tokenizer tok(pertok::tokenizer_config_from_kv(kv, "tok."));
    midi::Score score = midi::read_midi_file(in);
    auto seq = tok.encode(score);
    if (no_performance) seq = tok.strip_performance(seq);
    write_text_file(out, pertok::sequence_to_text(seq));

    KvMap echo = pertok::tokenizer_config_to_kv(tok.config(), "tok.");
    echo["input"] = in;
    echo["no_performance"] = no_performance ? "true" : "false";
    write_config_echo(out, "tokenize", echo, g.seed);
    return 0;
}

int cmd_detokenize(const GlobalOpts& g, const std::string& in, const std::string& out) {
    KvMap kv = load_config(g);
    pertok::Tokenizer tok(pertok::tokenizer_config_from_kv(kv, "tok."));
    auto seq = pertok::sequence_from_text(read_text_file(in));
    midi::write_midi_file(tok.decode(seq), out);

    KvMap echo = pertok::tokenizer_config_to_kv(tok.config(), "tok.");
    echo["input"] = in;
    write_config_echo(out, "detokenize", echo, g.seed);
    return 0;
}

int cmd_vocab(const GlobalOpts& g, const std::string& out) {
    KvMap kv = load_config(g);
    pertok::Tokenizer tok(pertok::tokenizer_config_from_kv(kv, "tok."));
    if (out.empty()) {
        std::cout << tok.vocab().export_text();
    } else {
        write_text_file(out, tok.vocab().export_text());
        write_config_echo(out, "vocab", pertok::tokenizer_config_to_kv(tok.config(), "tok."),
                          g.seed);
    }
    return 0;
}

// ------------------------------------------------------------------- bench

int cmd_bench(const GlobalOpts& g, const std::string& corpus_dir, int bars) {
    KvMap kv = load_config(g);
    pertok::TokenizerConfig base = pertok::tokenizer_config_from_kv(kv, "tok.");

    // fine-microshift variant: denser expressive resolution and shorter
    // macro shifts, so sequences are never shorter than the base config
    pertok::TokenizerConfig fine = base;
    fine.microshift_buckets = 2 * base.microshift_buckets - 1;
    fine.velocity_buckets = std::min(127, 2 * base.velocity_buckets);
    fine.max_timeshift_ticks = std::max(*std::min_element(base.grids.begin(), base.grids.end()),
                                        base.ticks_per_quarter);

    pertok::TokenizerConfig nodur = base;
    nodur.use_duration = false;

    auto scores = load_scores_arg(corpus_dir, bars);
    if (scores.empty()) throw std::runtime_error("bench: corpus is empty");

    struct Row {
        const char* name;
        pertok::TokenizerConfig config;
    };
    std::printf("%-24s %12s %16s\n", "config", "vocab size", "mean seq length");
    for (const Row& row : {Row{"pertok", base}, Row{"pertok-p (fine)", fine},
                           Row{"pertok (no duration)", nodur}}) {
        pertok::Tokenizer tok(row.config);
        double total = 0;
        for (const auto& s : scores) total += static_cast<double>(tok.encode(s).size());
        std::printf("%-24s %12zu %16.2f\n", row.name, tok.vocab().size(),
                    total / static_cast<double>(scores.size()));
    }
    return 0;
}

// ---------------------------------------------------------------- training

int cmd_train_composer(const GlobalOpts& g, const std::string& corpus_dir,
                       const std::string& out, int bars) {
    KvMap kv = load_config(g);
    pertok::Tokenizer tok(pertok::tokenizer_config_from_kv(kv, "tok."));
    composer::ComposerConfig cfg = composer::ComposerConfig::from_kv(kv, "composer.");
    cfg.vocab_size = static_cast<int>(tok.vocab().size());

    auto scores = load_scores_arg(corpus_dir, bars);
    if (scores.empty()) throw std::runtime_error("training corpus is empty");
    std::vector<std::vector<int>> ids;
    for (const auto& s : scores)
        ids.push_back(tok.to_ids(tok.strip_performance(tok.encode(s))));

    composer::ComposerModel model(cfg, g.seed);
    KvMap meta = pertok::tokenizer_config_to_kv(tok.config(), "tok.");
    auto save = [&](long step, composer::ComposerModel& m) {
        KvMap m2 = meta;
        m2["step"] = std::to_string(step);
        m.to_checkpoint(m2).save(out);
    };
    auto result = composer::train_composer(model, ids, g.seed, save);

    std::ostringstream log;
    log << "step\trecon\tkl\tbeta\n";
    for (const auto& e : result.log)
        log << e.step << '\t' << e.recon << '\t' << e.kl << '\t' << e.beta << '\n';
    write_text_file(out + ".log", log.str());

    KvMap echo = cfg.to_kv("composer.");
    for (const auto& [k, v] : meta) echo[k] = v;
    echo["corpus"] = corpus_dir;
    write_config_echo(out, "train-composer", echo, g.seed);
    std::cout << "final recon " << result.log.back().recon << ", checkpoint " << out << "\n";
    return 0;
}

int cmd_train_performer(const GlobalOpts& g, const std::string& corpus_dir,
                        const std::string& out, int bars) {
    KvMap kv = load_config(g);
    pertok::Tokenizer tok(pertok::tokenizer_config_from_kv(kv, "tok."));
    performer::PerformerConfig cfg = performer::PerformerConfig::from_kv(kv, "performer.");
    cfg.vocab_size = static_cast<int>(tok.vocab().size());

    auto scores = load_scores_arg(corpus_dir, bars);
    if (scores.empty()) throw std::runtime_error("training corpus is empty");
    std::vector<pertok::TokenSequence> seqs;
    for (const auto& s : scores) seqs.push_back(tok.encode(s));

    performer::PerformerModel model(cfg, g.seed);
    auto result = performer::train_performer(model, seqs, tok, g.seed);

    KvMap meta = pertok::tokenizer_config_to_kv(tok.config(), "tok.");
    model.to_checkpoint(meta).save(out);

    std::ostringstream log;
    log << "step\tloss\n";
    for (const auto& e : result.log) log << e.step << '\t' << e.loss << '\n';
    write_text_file(out + ".log", log.str());

    KvMap echo = cfg.to_kv("performer.");
    for (const auto& [k, v] : meta) echo[k] = v;
    echo["corpus"] = corpus_dir;
    write_config_echo(out, "train-performer", echo, g.seed);
    std::cout << "final loss " << result.log.back().loss << ", checkpoint " << out << "\n";
    return 0;
}

// -------------------------------------------------------------- generation

int cmd_vary(const GlobalOpts& g, const std::string& in, const std::string& ckpt_path,
             const std::string& out, bool unconditional, bool sample, double temperature,
             double top_p) {
    Checkpoint ckpt = Checkpoint::load(ckpt_path);
    composer::ComposerModel model = composer::ComposerModel::from_checkpoint(ckpt);
    pertok::Tokenizer tok = tokenizer_from_meta(ckpt.meta);

    std::vector<nn::Real> z;
    if (unconditional) {
        Pcg32 rng(g.seed, 61);
        z.resize(model.config().latent_dz);
        for (auto& v : z) v = rng.normal();
    } else {
        if (in.empty()) throw std::runtime_error("vary: --in is required unless --unconditional");
        auto seq = tok.strip_performance(tok.encode(midi::read_midi_file(in)));
        z = model.latent_mean(tok.to_ids(seq));
    }

    composer::GenerateOptions opts;
    opts.mode = sample ? composer::GenerateOptions::Mode::Sample
                       : composer::GenerateOptions::Mode::Greedy;
    opts.temperature = temperature;
    opts.top_p = top_p;
    opts.max_len = model.config().max_seq_len - 1;
    opts.seed = g.seed;
    auto ids = model.generate(z, tok.vocab(), tok.config().use_duration, opts);
    midi::write_midi_file(tok.decode(tok.from_ids(ids)), out);

    KvMap echo = pertok::tokenizer_config_to_kv(tok.config(), "tok.");
    echo["checkpoint"] = ckpt_path;
    echo["input"] = in;
    echo["unconditional"] = unconditional ? "true" : "false";
    echo["mode"] = sample ? "sample" : "greedy";
    echo["temperature"] = std::to_string(temperature);
    echo["top_p"] = std::to_string(top_p);
    write_config_echo(out, "vary", echo, g.seed);
    return 0;
}

int cmd_perform(const GlobalOpts& g, const std::string& in, const std::string& ckpt_path,
                const std::string& out, bool sample) {
    Checkpoint ckpt = Checkpoint::load(ckpt_path);
    performer::PerformerModel model = performer::PerformerModel::from_checkpoint(ckpt);
    pertok::Tokenizer tok = tokenizer_from_meta(ckpt.meta);

    auto score_seq = tok.strip_performance(tok.encode(midi::read_midi_file(in)));
    auto performed = performer::apply_performance(
        score_seq, model, tok, sample ? performer::FillMode::Sample : performer::FillMode::Greedy,
        g.seed);
    midi::write_midi_file(tok.decode(performed), out);

    KvMap echo = pertok::tokenizer_config_to_kv(tok.config(), "tok.");
    echo["checkpoint"] = ckpt_path;
    echo["input"] = in;
    echo["mode"] = sample ? "sample" : "greedy";
    write_config_echo(out, "perform", echo, g.seed);
    return 0;
}

// ----------------------------------------------------------------- metrics

std::vector<midi::Score> load_plain(const std::string& path) {
    std::vector<midi::Score> out;
    if (fs::is_directory(path)) {
        for (const auto& f : corpus::find_midi_files(path)) out.push_back(midi::read_midi_file(f));
    } else {
        out.push_back(midi::read_midi_file(path));
    }
    return out;
}

int cmd_metrics(const std::string& gen_path, const std::string& ref_path,
                const std::string& kind) {
    auto gen = load_plain(gen_path);
    auto ref = load_plain(ref_path);
    if (gen.empty() || ref.empty()) throw std::runtime_error("metrics: empty input");
    if (gen.size() != ref.size())
        throw std::runtime_error("metrics: generated and reference sets differ in size (" +
                                 std::to_string(gen.size()) + " vs " +
                                 std::to_string(ref.size()) + ")");

    if (kind == "similarity") {
        using metrics::AttributeKind;
        struct Acc {
            AttributeKind kind;
            const char* name;
            double per_file = 0;
            metrics::AttributeVector pooled_g, pooled_r;
        };
        std::vector<Acc> accs = {{AttributeKind::Pitch, "pitch"},
                                 {AttributeKind::Onset, "onset"},
                                 {AttributeKind::Duration, "duration"}};
        double abs_sim = 0;
        for (size_t i = 0; i < gen.size(); ++i) {
            for (auto& a : accs) {
                auto vg = metrics::attribute_vector(gen[i], a.kind);
                auto vr = metrics::attribute_vector(ref[i], a.kind);
                a.per_file += metrics::cosine_similarity(vg, vr);
                if (a.pooled_g.values.empty()) {
                    a.pooled_g = vg;
                    a.pooled_r = vr;
                } else {
                    for (size_t j = 0; j < vg.values.size(); ++j) {
                        a.pooled_g.values[j] += vg.values[j];
                        a.pooled_r.values[j] += vr.values[j];
                    }
                }
            }
            abs_sim += metrics::absolute_similarity(gen[i], ref[i]);
        }
        std::printf("%-10s %14s %10s\n", "attribute", "per-file mean", "pooled");
        for (auto& a : accs) {
            double pooled = metrics::cosine_similarity(a.pooled_g, a.pooled_r);
            std::printf("%-10s %14.3f %10.3f\n", a.name, a.per_file / gen.size(), pooled);
            std::cout << "similarity." << a.name << ".per_file = " << a.per_file / gen.size()
                      << "\n"
                      << "similarity." << a.name << ".pooled = " << pooled << "\n";
        }
        std::cout << "similarity.absolute.per_file = " << abs_sim / gen.size() << "\n";
        return 0;
    }
    if (kind == "fidelity") {
        metrics::ExpressionHistogram hg, hr;
        double vel_pf = 0, mt_pf = 0;
        for (size_t i = 0; i < gen.size(); ++i) {
            auto g = metrics::expression_histograms(gen[i], gen[i].ticks_per_quarter);
            auto r = metrics::expression_histograms(ref[i], ref[i].ticks_per_quarter);
            vel_pf += metrics::histogram_divergence(g.velocity, r.velocity).kl;
            mt_pf += metrics::histogram_divergence(g.microtiming, r.microtiming).kl;
            metrics::accumulate(hg, g);
            metrics::accumulate(hr, r);
        }
        auto vel = metrics::histogram_divergence(hg.velocity, hr.velocity);
        auto mt = metrics::histogram_divergence(hg.microtiming, hr.microtiming);
        std::printf("%-12s %10s %12s %12s %14s\n", "histogram", "kl", "mean_delta", "std_delta",
                    "per-file kl");
        std::printf("%-12s %10.4f %12.4f %12.4f %14.4f\n", "velocity", vel.kl, vel.mean_delta,
                    vel.std_delta, vel_pf / gen.size());
        std::printf("%-12s %10.4f %12.4f %12.4f %14.4f\n", "microtiming", mt.kl, mt.mean_delta,
                    mt.std_delta, mt_pf / gen.size());
        std::cout << "fidelity.velocity.kl = " << vel.kl << "\n"
                  << "fidelity.velocity.mean_delta = " << vel.mean_delta << "\n"
                  << "fidelity.microtiming.kl = " << mt.kl << "\n"
                  << "fidelity.microtiming.mean_delta = " << mt.mean_delta << "\n";
        return 0;
    }
    throw std::runtime_error("metrics: kind must be 'similarity' or 'fidelity'");
}

// ------------------------------------------------------------ synth-corpus

int cmd_synth_corpus(const GlobalOpts& g, const std::string& out_dir, int count) {
    KvMap kv = load_config(g);
    corpus::StyleSpec spec;
    spec.velocity_mean = kv_get_double(kv, "style.velocity_mean", spec.velocity_mean);
    spec.velocity_std = kv_get_double(kv, "style.velocity_std", spec.velocity_std);
    spec.microshift_mean = kv_get_double(kv, "style.microshift_mean", spec.microshift_mean);
    spec.microshift_std = kv_get_double(kv, "style.microshift_std", spec.microshift_std);
    spec.max_microshift_ticks =
        kv_get_int(kv, "style.max_microshift_ticks", spec.max_microshift_ticks);
    spec.notes_per_bar = kv_get_double(kv, "style.notes_per_bar", spec.notes_per_bar);
    spec.pitch_set = kv_get_int_list(kv, "style.pitch_set", spec.pitch_set);
    spec.ticks_per_quarter = kv_get_int(kv, "style.ticks_per_quarter", spec.ticks_per_quarter);
    spec.bars = kv_get_int(kv, "style.bars", spec.bars);
    spec.seed = g.seed;

    fs::create_directories(out_dir);
    auto scores = corpus::synth_corpus(spec, count);
    char name[32];
    for (size_t i = 0; i < scores.size(); ++i) {
        std::snprintf(name, sizeof(name), "%05zu.mid", i);
        midi::write_midi_file(scores[i], (fs::path(out_dir) / name).string());
    }

    KvMap echo;
    echo["style.velocity_mean"] = std::to_string(spec.velocity_mean);
    echo["style.velocity_std"] = std::to_string(spec.velocity_std);
    echo["style.microshift_mean"] = std::to_string(spec.microshift_mean);
    echo["style.microshift_std"] = std::to_string(spec.microshift_std);
    echo["style.max_microshift_ticks"] = std::to_string(spec.max_microshift_ticks);
    echo["style.notes_per_bar"] = std::to_string(spec.notes_per_bar);
    echo["style.pitch_set"] = int_list_to_string(spec.pitch_set);
    echo["style.ticks_per_quarter"] = std::to_string(spec.ticks_per_quarter);
    echo["style.bars"] = std::to_string(spec.bars);
    echo["count"] = std::to_string(count);
    write_config_echo((fs::path(out_dir) / "corpus").string(), "synth-corpus", echo, g.seed);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"cadenza: expressive MIDI tokenization, generation, and evaluation"};
    app.require_subcommand(1);
    app.fallthrough(); // --seed / --config may follow the subcommand name

    GlobalOpts g;
    app.add_option("--config", g.config_path, "key = value config file")->capture_default_str();
    app.add_option("--seed", g.seed, "seed for all randomness in the run")
        ->capture_default_str();

    std::string in, out, ckpt, gen_path, ref_path, kind = "similarity";
    bool no_performance = false, unconditional = false, sample = false;
    double temperature = 1.0, top_p = 1.0;
    int bars = 4, count = 100;

    auto* tokenize = app.add_subcommand("tokenize", "MIDI file -> token text");
    tokenize->add_option("--in", in, "input MIDI file")->required();
    tokenize->add_option("--out", out, "output token-text file")->required();
    tokenize->add_flag("--no-performance", no_performance,
                       "strip Velocity/MicroShift tokens from the output");

    auto* detokenize = app.add_subcommand("detokenize", "token text -> MIDI file");
    detokenize->add_option("--in", in, "input token-text file")->required();
    detokenize->add_option("--out", out, "output MIDI file")->required();

    auto* vocab = app.add_subcommand("vocab", "export the token vocabulary");
    vocab->add_option("--out", out, "output file (stdout when omitted)");

    auto* bench = app.add_subcommand("bench", "vocab size and mean sequence length per config");
    bench->add_option("--corpus", in, "MIDI file or directory")->required();
    bench->add_option("--bars", bars, "segment window in bars")->capture_default_str();

    auto* trainc = app.add_subcommand("train-composer", "train the variation model");
    trainc->add_option("--corpus", in, "MIDI file or directory")->required();
    trainc->add_option("--out", out, "checkpoint output path")->required();
    trainc->add_option("--bars", bars, "segment window in bars")->capture_default_str();

    auto* trainp = app.add_subcommand("train-performer", "train the expression model");
    trainp->add_option("--corpus", in, "MIDI file or directory")->required();
    trainp->add_option("--out", out, "checkpoint output path")->required();
    trainp->add_option("--bars", bars, "segment window in bars")->capture_default_str();

    auto* vary = app.add_subcommand("vary", "generate a score variation of a MIDI file");
    vary->add_option("--in", in, "input MIDI file (conditioning)");
    vary->add_option("--checkpoint", ckpt, "composer checkpoint")->required();
    vary->add_option("--out", out, "output MIDI file")->required();
    vary->add_flag("--unconditional", unconditional, "draw the latent from N(0, I)");
    vary->add_flag("--sample", sample, "sample instead of greedy decoding");
    vary->add_option("--temperature", temperature, "sampling temperature")
        ->capture_default_str();
    vary->add_option("--top-p", top_p, "nucleus sampling mass")->capture_default_str();

    auto* perform = app.add_subcommand("perform", "add expressive performance to a MIDI score");
    perform->add_option("--in", in, "input MIDI file")->required();
    perform->add_option("--checkpoint", ckpt, "performer checkpoint")->required();
    perform->add_option("--out", out, "output MIDI file")->required();
    perform->add_flag("--sample", sample, "sample instead of greedy filling");

    auto* metrics_cmd = app.add_subcommand("metrics", "compare generated against reference MIDI");
    metrics_cmd->add_option("--gen", gen_path, "generated MIDI file or directory")->required();
    metrics_cmd->add_option("--ref", ref_path, "reference MIDI file or directory")->required();
    metrics_cmd->add_option("--kind", kind, "similarity | fidelity")->capture_default_str();

    auto* synth = app.add_subcommand("synth-corpus", "write a synthetic styled corpus");
    synth->add_option("--out", out, "output directory")->required();
    synth->add_option("--count", count, "number of files")->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*tokenize) return cmd_tokenize(g, in, out, no_performance);
        if (*detokenize) return cmd_detokenize(g, in, out);
        if (*vocab) return cmd_vocab(g, out);
        if (*bench) return cmd_bench(g, in, bars);
        if (*trainc) return cmd_train_composer(g, in, out, bars);
        if (*trainp) return cmd_train_performer(g, in, out, bars);
        if (*vary) return cmd_vary(g, in, ckpt, out, unconditional, sample, temperature, top_p);
        if (*perform) return cmd_perform(g, in, ckpt, out, sample);
        if (*metrics_cmd) return cmd_metrics(gen_path, ref_path, kind);
        if (*synth) return cmd_synth_corpus(g, out, count);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
