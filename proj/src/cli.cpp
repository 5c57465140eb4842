#include "aifn/cli.hpp"

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "aifn/corpus.hpp"
#include "aifn/errors.hpp"
#include "aifn/model.hpp"
#include "aifn/trainer.hpp"

namespace aifn {
namespace {

// Problems with the invocation itself, as opposed to failures while running
// the command. They exit with code 1 like any other usage error.
struct UsageNote {
    std::string message;
};

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open \"" + path + "\"");
    }
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw FormatError("cannot write \"" + path + "\"");
    }
    out << text;
    out.close();
    if (!out) {
        throw FormatError("failed while writing \"" + path + "\"");
    }
}

// The vocabulary travels next to the checkpoint as a plain token list, one
// token per line in id order. Checkpoints carry weights only, so scoring a
// new corpus needs this file to map tokens back to embedding rows.
void write_vocab(const std::string& path, const Vocabulary& vocab) {
    std::ostringstream out;
    for (const std::string& token : vocab.to_token) {
        out << token << '\n';
    }
    write_text(path, out.str());
}

Vocabulary read_vocab(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open vocabulary file \"" + path + "\"");
    }
    Vocabulary vocab;
    vocab.to_token.clear();
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (!vocab.to_id.emplace(line, vocab.to_token.size()).second) {
            throw FormatError("vocabulary file \"" + path + "\" repeats token \"" + line + "\"");
        }
        vocab.to_token.push_back(line);
    }
    if (vocab.size() < 2 || vocab.to_token[0] != "<pad>" || vocab.to_token[1] != "<oov>") {
        throw FormatError("\"" + path +
                          "\" is not a vocabulary file (expected <pad> then <oov> up front)");
    }
    return vocab;
}

std::string default_vocab_path(const std::string& checkpoint_path) {
    return (std::filesystem::path(checkpoint_path).parent_path() / "vocab.txt").string();
}

std::string plants_path(const std::string& corpus_path) {
    const std::string ext = ".jsonl";
    if (corpus_path.size() > ext.size() &&
        corpus_path.compare(corpus_path.size() - ext.size(), ext.size(), ext) == 0) {
        return corpus_path.substr(0, corpus_path.size() - ext.size()) + ".plants.jsonl";
    }
    return corpus_path + ".plants";
}

std::optional<std::uint64_t> env_seed() {
    const char* raw = std::getenv("AIFN_SEED");
    if (raw == nullptr || *raw == '\0') {
        return std::nullopt;
    }
    const std::string text(raw);
    std::uint64_t value = 0;
    const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc() || end != text.data() + text.size()) {
        throw UsageNote{"AIFN_SEED must be a whole number, got \"" + text + "\""};
    }
    return value;
}

// Everything a subcommand needs after the global layers are merged: preset,
// then config file, then --seed, then the AIFN_SEED environment override.
struct Settings {
    ModelConfig model;
    TrainConfig train;
    std::uint64_t seed = 0;  // drives corpus generation and splitting
};

Settings make_settings(const std::string& preset, const std::string& config_path,
                       const std::optional<std::uint64_t>& cli_seed) {
    Settings s;
    if (preset == "paper") {
        s.model = paper_model_config();
    } else {
        s.model = desk_model_config();
    }
    // Training defaults already sit at the published operating point
    // (learning rate 0.001, minibatch 64), so presets only swap the model.
    if (!config_path.empty()) {
        nlohmann::json doc;
        try {
            doc = nlohmann::json::parse(slurp(config_path));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("config file \"" + config_path +
                              "\" is not valid JSON: " + e.what());
        }
        if (!doc.is_object()) {
            throw FormatError("config file \"" + config_path + "\" must hold a JSON object");
        }
        for (const auto& [key, value] : doc.items()) {
            if (key == "model") {
                s.model = config_from_json(value.dump(), s.model);
            } else if (key == "train") {
                s.train = train_config_from_json(value.dump(), s.train);
            } else {
                throw FormatError("config file \"" + config_path + "\": unknown section \"" +
                                  key + "\" (expected \"model\" and \"train\")");
            }
        }
    }
    std::optional<std::uint64_t> seed = env_seed();
    if (!seed) {
        seed = cli_seed;
    }
    if (seed) {
        s.model.seed = *seed;
        s.train.seed = *seed;
    }
    s.seed = s.train.seed;
    return s;
}

nlohmann::json metrics_json(const MetricsReport& m) {
    auto side = [](const ClassMetrics& c) {
        return nlohmann::json{{"positive_class", c.positive_class},
                              {"tp", c.tp},
                              {"fp", c.fp},
                              {"fn", c.fn},
                              {"tn", c.tn},
                              {"accuracy", c.accuracy},
                              {"precision", c.precision},
                              {"recall", c.recall},
                              {"f1", c.f1}};
    };
    return nlohmann::json{{"accuracy", m.accuracy},
                          {"positive", side(m.positive)},
                          {"negative", side(m.negative)},
                          {"macro_precision", m.macro_precision},
                          {"macro_recall", m.macro_recall},
                          {"macro_f1", m.macro_f1}};
}

std::string metrics_line(const MetricsReport& m) {
    char buf[240];
    std::snprintf(buf, sizeof buf,
                  "accuracy %.4f | %s-as-positive P %.4f R %.4f F1 %.4f | macro P %.4f R %.4f "
                  "F1 %.4f",
                  m.accuracy, m.positive.positive_class.c_str(), m.positive.precision,
                  m.positive.recall, m.positive.f1, m.macro_precision, m.macro_recall,
                  m.macro_f1);
    return buf;
}

std::pair<std::size_t, std::size_t> label_counts(const std::vector<Thread>& threads) {
    std::size_t trues = 0;
    for (const Thread& t : threads) {
        if (t.label == kLabelTrue) {
            ++trues;
        }
    }
    return {trues, threads.size() - trues};
}

void run_generate(const Settings& settings, std::size_t threads, double conflict, double emotion,
                  const std::string& out) {
    SyntheticSpec spec;
    spec.thread_count = threads;
    spec.conflict_strength = conflict;
    spec.emotion_strength = emotion;
    spec.seed = settings.seed;
    const SyntheticCorpus corpus = generate_synthetic(spec);
    write_corpus(out, corpus.threads);
    const std::string sidecar = plants_path(out);
    write_plants(sidecar, corpus.plants);
    const auto [trues, falses] = label_counts(corpus.threads);
    std::size_t conflicted = 0;
    for (const PlantRecord& plant : corpus.plants) {
        conflicted += plant.conflicted ? 1 : 0;
    }
    std::cout << "wrote " << corpus.threads.size() << " threads (" << trues << " true / "
              << falses << " false, " << conflicted << " with planted conflicts) to " << out
              << "\nplant records: " << sidecar << "\n";
}

void run_train(const Settings& settings, const std::string& corpus_path,
               const std::string& out_dir) {
    const ParseResult parsed = parse_corpus(corpus_path);
    const SplitResult parts = split(parsed.threads, settings.train.seed);
    const Vocabulary vocab = build_vocab(parts.train, 1);

    ModelConfig mc = settings.model;
    mc.vocab_size = vocab.size();
    const TokenizedSplits data = tokenize_splits(parts, vocab, mc.post_len, mc.comment_len);

    std::filesystem::create_directories(out_dir);
    TrainConfig tc = settings.train;
    tc.checkpoint_dir = out_dir;

    Model model(mc, &vocab);
    const RunArtifacts run = train(model, data, tc);
    write_vocab((std::filesystem::path(out_dir) / "vocab.txt").string(), vocab);

    nlohmann::json report;
    report["schema"] = "aifn-train-report/1";
    report["corpus"] = {{"path", corpus_path},
                        {"threads", parsed.threads.size()},
                        {"dropped_unverified", parsed.dropped_unverified},
                        {"train", data.train.size()},
                        {"val", data.val.size()},
                        {"test", data.test.size()},
                        {"vocab", vocab.size()}};
    report["model"] = nlohmann::json::parse(config_to_json(run.model_config));
    report["train"] = nlohmann::json::parse(train_config_to_json(run.train_config));
    nlohmann::json history = nlohmann::json::array();
    for (const EpochRecord& rec : run.history) {
        history.push_back({{"epoch", rec.epoch},
                           {"train_loss", rec.train_loss},
                           {"val_accuracy", rec.val_accuracy}});
    }
    report["history"] = std::move(history);
    report["best_epoch"] = run.best_epoch;
    report["best_val_accuracy"] = run.best_val_accuracy;
    report["checkpoint"] = run.best_checkpoint_path;
    report["test"] = metrics_json(run.test);
    const std::string report_path = (std::filesystem::path(out_dir) / "report.json").string();
    write_text(report_path, report.dump(2) + "\n");

    std::cout << "corpus: " << parsed.threads.size() << " threads, vocabulary " << vocab.size()
              << " tokens, split " << data.train.size() << "/" << data.val.size() << "/"
              << data.test.size() << " (seed " << tc.seed << ")\n"
              << "trained " << run.history.size() << " epochs; best epoch " << run.best_epoch
              << " at validation accuracy " << run.best_val_accuracy << "\n"
              << "test: " << metrics_line(run.test) << "\n"
              << "report: " << report_path << "\n"
              << "checkpoint: " << run.best_checkpoint_path << "\n";
}

// Rebuilds the tokenizer side of a saved run and checks it still matches the
// checkpoint before any scoring happens.
std::pair<LoadedCheckpoint, Vocabulary> load_run(const std::string& checkpoint_path,
                                                 const std::string& vocab_flag) {
    LoadedCheckpoint loaded = load_checkpoint(checkpoint_path);
    const std::string vocab_path =
        vocab_flag.empty() ? default_vocab_path(checkpoint_path) : vocab_flag;
    Vocabulary vocab = read_vocab(vocab_path);
    if (vocab.size() != loaded.model.config().vocab_size) {
        throw FormatError("vocabulary \"" + vocab_path + "\" has " +
                          std::to_string(vocab.size()) + " tokens but the checkpoint expects " +
                          std::to_string(loaded.model.config().vocab_size));
    }
    return {std::move(loaded), std::move(vocab)};
}

void run_eval(const std::string& corpus_path, const std::string& checkpoint_path,
              const std::string& vocab_flag, const std::string& out) {
    auto [loaded, vocab] = load_run(checkpoint_path, vocab_flag);
    const ModelConfig& mc = loaded.model.config();
    const ParseResult parsed = parse_corpus(corpus_path);
    std::vector<TokenizedThread> tokenized;
    tokenized.reserve(parsed.threads.size());
    for (const Thread& thread : parsed.threads) {
        tokenized.push_back(tokenize_and_pad(thread, vocab, mc.post_len, mc.comment_len));
    }
    const MetricsReport metrics = evaluate(loaded.model, tokenized);

    nlohmann::json report;
    report["schema"] = "aifn-eval-report/1";
    report["corpus"] = {{"path", corpus_path},
                        {"threads", parsed.threads.size()},
                        {"dropped_unverified", parsed.dropped_unverified}};
    report["checkpoint"] = {{"path", checkpoint_path},
                            {"epoch", loaded.meta.epoch},
                            {"val_accuracy", loaded.meta.val_metric}};
    report["metrics"] = metrics_json(metrics);
    write_text(out, report.dump(2) + "\n");

    std::cout << "scored " << parsed.threads.size() << " threads from " << corpus_path
              << " with " << checkpoint_path << " (saved at epoch " << loaded.meta.epoch
              << ")\n"
              << metrics_line(metrics) << "\n"
              << "report: " << out << "\n";
}

nlohmann::json cell_json(const AblationCell& cell) {
    return nlohmann::json{{"per_seed", cell.per_seed}, {"mean", cell.mean}, {"sd", cell.sd}};
}

std::string cell_text(const AblationCell& cell, bool spread) {
    char buf[64];
    if (spread) {
        std::snprintf(buf, sizeof buf, "%.4f±%.4f", cell.mean, cell.sd);
    } else {
        std::snprintf(buf, sizeof buf, "%.4f", cell.mean);
    }
    return buf;
}

void run_ablate(const Settings& settings, const std::string& corpus_path,
                const std::string& suite, std::size_t seed_count, const std::string& out) {
    const ParseResult parsed = parse_corpus(corpus_path);
    const std::vector<Variant> variants = ablation_suite(suite);
    std::vector<std::uint64_t> seeds;
    seeds.reserve(seed_count);
    for (std::size_t i = 0; i < seed_count; ++i) {
        seeds.push_back(settings.seed + i);
    }
    const AblationTable table =
        run_ablation_suite(parsed.threads, variants, settings.model, settings.train, seeds);

    nlohmann::json report;
    report["schema"] = "aifn-ablation-report/1";
    report["corpus"] = {{"path", corpus_path}, {"threads", parsed.threads.size()}};
    report["suite"] = suite;
    report["seeds"] = seeds;
    nlohmann::json rows = nlohmann::json::array();
    for (const AblationRow& row : table.rows) {
        char hash[24];
        std::snprintf(hash, sizeof hash, "%016llx",
                      static_cast<unsigned long long>(row.schedule_hash));
        rows.push_back({{"variant", variant_name(row.variant)},
                        {"display", row.display},
                        {"schedule_hash", hash},
                        {"error", row.error},
                        {"accuracy", cell_json(row.accuracy)},
                        {"precision", cell_json(row.precision)},
                        {"recall", cell_json(row.recall)},
                        {"f1", cell_json(row.f1)}});
    }
    report["rows"] = std::move(rows);
    write_text(out, report.dump(2) + "\n");

    const bool spread = seeds.size() > 1;
    std::cout << "suite \"" << suite << "\" on " << parsed.threads.size() << " threads, "
              << seeds.size() << (seeds.size() == 1 ? " seed\n" : " seeds\n");
    std::printf("%-20s %-15s %-15s %-15s %-15s\n", "variant", "A", "P", "R", "F1");
    for (const AblationRow& row : table.rows) {
        if (!row.error.empty()) {
            std::printf("%-20s failed: %s\n", row.display.c_str(), row.error.c_str());
            continue;
        }
        std::printf("%-20s %-15s %-15s %-15s %-15s\n", row.display.c_str(),
                    cell_text(row.accuracy, spread).c_str(),
                    cell_text(row.precision, spread).c_str(),
                    cell_text(row.recall, spread).c_str(), cell_text(row.f1, spread).c_str());
    }
    std::cout << "report: " << out << "\n";
}

nlohmann::json channel_json(const ChannelAttribution& chan) {
    return nlohmann::json{{"tokens", chan.tokens},
                         {"counts", chan.counts},
                         {"ranking", chan.ranking}};
}

std::string top_tokens(const ChannelAttribution& chan, std::size_t top) {
    std::ostringstream out;
    std::size_t shown = 0;
    for (const std::size_t pos : chan.ranking) {
        if (shown == top || chan.counts[pos] == 0) {
            break;
        }
        if (shown > 0) {
            out << "  ";
        }
        out << chan.tokens[pos] << "(" << chan.counts[pos] << ")";
        ++shown;
    }
    return shown == 0 ? "(none)" : out.str();
}

void run_attribute(const std::string& corpus_path, const std::string& checkpoint_path,
                   const std::string& vocab_flag, const std::string& fusion_flag,
                   const std::string& thread_id, std::size_t top, const std::string& out) {
    auto [loaded, vocab] = load_run(checkpoint_path, vocab_flag);
    const ParseResult parsed = parse_corpus(corpus_path);
    std::vector<const Thread*> picked;
    for (const Thread& thread : parsed.threads) {
        if (thread_id.empty() || thread.id == thread_id) {
            picked.push_back(&thread);
        }
    }
    if (picked.empty()) {
        throw ContractError(thread_id.empty()
                                ? "corpus \"" + corpus_path + "\" holds no threads"
                                : "corpus \"" + corpus_path + "\" has no thread with id \"" +
                                      thread_id + "\"");
    }
    const FusionMode mode = fusion_flag.empty() ? loaded.model.config().fusion
                                                : fusion_mode_from_name(fusion_flag);

    nlohmann::json report;
    report["schema"] = "aifn-attribution-report/1";
    report["corpus"] = corpus_path;
    report["checkpoint"] = checkpoint_path;
    report["fusion"] = fusion_mode_name(mode);
    nlohmann::json entries = nlohmann::json::array();
    for (const Thread* thread : picked) {
        const AttributionReport rep = loaded.model.attribute(*thread, vocab, mode);
        entries.push_back({{"id", thread->id},
                           {"label", label_name(thread->label)},
                           {"post_truncated", rep.post_truncated},
                           {"comments_truncated", rep.comments_truncated},
                           {"post_word", channel_json(rep.post_word)},
                           {"post_emotion", channel_json(rep.post_emotion)},
                           {"comment_word", channel_json(rep.comment_word)},
                           {"comment_emotion", channel_json(rep.comment_emotion)}});
        std::cout << "thread " << thread->id << " (" << label_name(thread->label) << ")\n"
                  << "  post word:       " << top_tokens(rep.post_word, top) << "\n"
                  << "  post emotion:    " << top_tokens(rep.post_emotion, top) << "\n"
                  << "  comment word:    " << top_tokens(rep.comment_word, top) << "\n"
                  << "  comment emotion: " << top_tokens(rep.comment_emotion, top) << "\n";
    }
    report["threads"] = std::move(entries);
    write_text(out, report.dump(2) + "\n");
    std::cout << "report: " << out << "\n";
}

}  // namespace

int run_cli(int argc, char** argv) {
    CLI::App app{"Thread credibility classifier driven by gated post-comment fusion"};
    app.name("aifn");
    app.require_subcommand(1);
    app.failure_message(CLI::FailureMessage::help);

    std::string config_path;
    std::string preset;
    std::uint64_t seed_flag = 0;
    app.add_option("--config", config_path,
                   "JSON file with optional \"model\" and \"train\" sections layered over the "
                   "preset");
    app.add_option("--preset", preset, "Base model size")
        ->check(CLI::IsMember({"paper", "desk"}));
    CLI::Option* seed_opt =
        app.add_option("--seed", seed_flag,
                       "Seed for model init, batching, and splits (the AIFN_SEED environment "
                       "variable wins over this flag)");

    auto* gen = app.add_subcommand(
        "generate", "Write a synthetic labeled corpus plus its planted-conflict sidecar");
    gen->fallthrough();
    std::size_t gen_threads = 200;
    double gen_conflict = 1.0;
    double gen_emotion = 0.0;
    std::string gen_out;
    gen->add_option("--threads", gen_threads, "Thread count")->capture_default_str();
    gen->add_option("--conflict", gen_conflict,
                    "Chance that a false thread's comments contradict its post")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    gen->add_option("--emotion", gen_emotion,
                    "How strongly comment mood follows the post on true threads and inverts it "
                    "on false ones")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    gen->add_option("--out", gen_out, "Corpus path, one JSON object per line")->required();

    auto* tr = app.add_subcommand("train", "Train on a corpus and write a run directory");
    tr->fallthrough();
    std::string tr_corpus;
    std::string tr_out = "aifn-run";
    tr->add_option("--corpus", tr_corpus, "Corpus path, one JSON object per line")->required();
    tr->add_option("--out", tr_out,
                   "Run directory for report.json, vocab.txt, and the best checkpoint")
        ->capture_default_str();

    auto* ev = app.add_subcommand("eval", "Score a saved checkpoint against a corpus");
    ev->fallthrough();
    std::string ev_corpus;
    std::string ev_ckpt;
    std::string ev_vocab;
    std::string ev_out = "eval-report.json";
    ev->add_option("--corpus", ev_corpus, "Corpus path")->required();
    ev->add_option("--checkpoint", ev_ckpt, "Checkpoint written by train")->required();
    ev->add_option("--vocab", ev_vocab,
                   "Vocabulary file (default: vocab.txt next to the checkpoint)");
    ev->add_option("--out", ev_out, "Report path")->capture_default_str();

    auto* ab = app.add_subcommand(
        "ablate", "Train a variant suite on identical data and print the comparison table");
    ab->fallthrough();
    std::string ab_corpus;
    std::string ab_suite = "gain";
    std::size_t ab_seeds = 1;
    std::string ab_out = "ablation.json";
    ab->add_option("--corpus", ab_corpus, "Corpus path")->required();
    ab->add_option("--suite", ab_suite, "Variant set to compare")
        ->check(CLI::IsMember({"gain", "sfsn", "stack", "all"}))
        ->capture_default_str();
    ab->add_option("--seeds", ab_seeds, "How many consecutive seeds to average, starting at "
                                        "--seed")
        ->check(CLI::Range(std::size_t{1}, std::size_t{64}))
        ->capture_default_str();
    ab->add_option("--out", ab_out, "Report path")->capture_default_str();

    auto* at = app.add_subcommand(
        "attribute", "Report which token positions win each channel's pooled features");
    at->fallthrough();
    std::string at_corpus;
    std::string at_ckpt;
    std::string at_vocab;
    std::string at_fusion;
    std::string at_thread;
    std::size_t at_top = 5;
    std::string at_out = "attribution.json";
    at->add_option("--corpus", at_corpus, "Corpus path")->required();
    at->add_option("--checkpoint", at_ckpt, "Checkpoint written by train")->required();
    at->add_option("--vocab", at_vocab,
                   "Vocabulary file (default: vocab.txt next to the checkpoint)");
    at->add_option("--fusion", at_fusion,
                   "Override the checkpoint's fusion mode for the attribution pass")
        ->check(CLI::IsMember({"multiply", "add", "concat_after"}));
    at->add_option("--thread", at_thread, "Restrict to one thread id");
    at->add_option("--top", at_top, "Tokens to print per channel")
        ->check(CLI::Range(std::size_t{1}, std::size_t{100}))
        ->capture_default_str();
    at->add_option("--out", at_out, "Report path")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        const std::optional<std::uint64_t> cli_seed =
            seed_opt->count() > 0 ? std::optional<std::uint64_t>(seed_flag) : std::nullopt;
        const Settings settings = make_settings(preset, config_path, cli_seed);
        if (gen->parsed()) {
            run_generate(settings, gen_threads, gen_conflict, gen_emotion, gen_out);
        } else if (tr->parsed()) {
            run_train(settings, tr_corpus, tr_out);
        } else if (ev->parsed()) {
            run_eval(ev_corpus, ev_ckpt, ev_vocab, ev_out);
        } else if (ab->parsed()) {
            run_ablate(settings, ab_corpus, ab_suite, ab_seeds, ab_out);
        } else if (at->parsed()) {
            run_attribute(at_corpus, at_ckpt, at_vocab, at_fusion, at_thread, at_top, at_out);
        }
    } catch (const UsageNote& note) {
        std::cerr << "aifn: " << note.message << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "aifn: error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}

int run_cli(const std::vector<std::string>& args) {
    std::vector<std::string> storage;
    storage.reserve(args.size() + 1);
    storage.push_back("aifn");
    storage.insert(storage.end(), args.begin(), args.end());
    std::vector<char*> argv;
    argv.reserve(storage.size());
    for (std::string& arg : storage) {
        argv.push_back(arg.data());
    }
    return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace aifn
