#include "aifn/trainer.hpp"

#include <cmath>
#include <filesystem>

#include <json.hpp>

#include "aifn/rng.hpp"

namespace aifn {

std::string optimizer_name(Optimizer opt) {
    return opt == Optimizer::adam ? "adam" : "sgd";
}

Optimizer optimizer_from_name(const std::string& name) {
    if (name == "adam") {
        return Optimizer::adam;
    }
    if (name == "sgd") {
        return Optimizer::sgd;
    }
    throw ConfigError("unknown optimizer \"" + name + "\"");
}

std::string train_config_to_json(const TrainConfig& cfg) {
    nlohmann::json j;
    j["lr"] = cfg.lr;
    j["max_epochs"] = cfg.max_epochs;
    j["patience"] = cfg.patience;
    j["batch_size"] = cfg.batch_size;
    j["seed"] = cfg.seed;
    j["checkpoint_dir"] = cfg.checkpoint_dir;
    j["optimizer"] = optimizer_name(cfg.optimizer);
    return j.dump();
}

TrainConfig train_config_from_json(const std::string& text, TrainConfig base) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("training config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) {
        throw FormatError("training config JSON must be an object");
    }
    TrainConfig cfg = std::move(base);
    for (const auto& [key, value] : j.items()) {
        try {
            if (key == "lr") {
                cfg.lr = value.get<double>();
            } else if (key == "max_epochs") {
                cfg.max_epochs = value.get<std::size_t>();
            } else if (key == "patience") {
                cfg.patience = value.get<std::size_t>();
            } else if (key == "batch_size") {
                cfg.batch_size = value.get<std::size_t>();
            } else if (key == "seed") {
                cfg.seed = value.get<std::uint64_t>();
            } else if (key == "checkpoint_dir") {
                cfg.checkpoint_dir = value.get<std::string>();
            } else if (key == "optimizer") {
                cfg.optimizer = optimizer_from_name(value.get<std::string>());
            } else {
                throw FormatError("unknown training config key \"" + key + "\"");
            }
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("training config key \"" + key + "\": " + e.what());
        } catch (const ConfigError& e) {
            throw FormatError("training config key \"" + key + "\": " + e.what());
        }
    }
    return cfg;
}

TokenizedSplits tokenize_splits(const SplitResult& split, const Vocabulary& vocab,
                                std::size_t post_len, std::size_t comment_len) {
    TokenizedSplits out;
    auto convert = [&](const std::vector<Thread>& threads,
                       std::vector<TokenizedThread>& into) {
        into.reserve(threads.size());
        for (const Thread& t : threads) {
            into.push_back(tokenize_and_pad(t, vocab, post_len, comment_len));
        }
    };
    convert(split.train, out.train);
    convert(split.val, out.val);
    convert(split.test, out.test);
    return out;
}

namespace {

void validate_train_config(const TrainConfig& cfg) {
    if (cfg.lr < 0.0 || !std::isfinite(cfg.lr)) {
        throw ConfigError("learning rate must be finite and non-negative");
    }
    if (cfg.max_epochs < 1) {
        throw ConfigError("max epochs must be at least 1");
    }
    if (cfg.patience < 1) {
        throw ConfigError("patience must be at least 1");
    }
    if (cfg.batch_size < 1) {
        throw ConfigError("batch size must be at least 1");
    }
}

// First- and second-moment accumulators per parameter tensor.
struct AdamState {
    std::vector<std::vector<double>> m, v;
    std::size_t steps = 0;
};

void optimizer_step(const ParamRegistry& reg, const TrainConfig& cfg, AdamState& adam) {
    const auto& items = reg.items();
    if (cfg.optimizer == Optimizer::sgd) {
        for (const auto& [name, p] : items) {
            auto vals = p.values_mut();
            const auto grad = p.grad();
            for (std::size_t i = 0; i < vals.size(); ++i) {
                vals[i] -= cfg.lr * grad[i];
            }
        }
        return;
    }
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    ++adam.steps;
    const double bias1 = 1.0 - std::pow(b1, static_cast<double>(adam.steps));
    const double bias2 = 1.0 - std::pow(b2, static_cast<double>(adam.steps));
    for (std::size_t k = 0; k < items.size(); ++k) {
        auto vals = items[k].second.values_mut();
        const auto grad = items[k].second.grad();
        auto& m = adam.m[k];
        auto& v = adam.v[k];
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double g = grad[i];
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            vals[i] -= cfg.lr * (m[i] / bias1) / (std::sqrt(v[i] / bias2) + eps);
        }
    }
}

std::vector<std::vector<double>> snapshot_params(const ParamRegistry& reg) {
    std::vector<std::vector<double>> snap;
    snap.reserve(reg.items().size());
    for (const auto& [name, p] : reg.items()) {
        snap.emplace_back(p.values().begin(), p.values().end());
    }
    return snap;
}

void restore_params(const ParamRegistry& reg, const std::vector<std::vector<double>>& snap) {
    for (std::size_t k = 0; k < snap.size(); ++k) {
        auto vals = reg.items()[k].second.values_mut();
        std::copy(snap[k].begin(), snap[k].end(), vals.begin());
    }
}

}  // namespace

RunArtifacts train(Model& model, const TokenizedSplits& data, const TrainConfig& cfg) {
    validate_train_config(cfg);
    if (data.train.empty() || data.val.empty() || data.test.empty()) {
        throw ContractError("training needs nonempty train, validation, and test splits");
    }

    RunArtifacts run;
    run.model_config = model.config();
    run.train_config = cfg;

    AdamState adam;
    if (cfg.optimizer == Optimizer::adam) {
        for (const auto& [name, p] : model.params().items()) {
            adam.m.emplace_back(p.numel(), 0.0);
            adam.v.emplace_back(p.numel(), 0.0);
        }
    }

    std::string ckpt_path;
    if (!cfg.checkpoint_dir.empty()) {
        std::filesystem::create_directories(cfg.checkpoint_dir);
        ckpt_path = (std::filesystem::path(cfg.checkpoint_dir) / "best.bin").string();
    }

    Rng order_rng = named_rng(cfg.seed, "batch.order");
    Rng dropout_rng = named_rng(cfg.seed, "dropout");
    std::vector<std::vector<double>> best_snapshot = snapshot_params(model.params());
    double best_acc = -1.0;
    std::size_t best_epoch = 0;

    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        const auto batches =
            make_batches(data.train.size(), cfg.batch_size, order_rng.next_u64(), true);
        double loss_sum = 0.0;
        for (std::size_t b = 0; b < batches.size(); ++b) {
            std::vector<TokenizedThread> batch;
            std::vector<int> labels;
            batch.reserve(batches[b].size());
            for (const std::size_t idx : batches[b]) {
                batch.push_back(data.train[idx]);
                labels.push_back(data.train[idx].label);
            }
            Tape tape;
            const Tensor probs = model.forward_batch(tape, batch, Mode::train, &dropout_rng);
            const Tensor loss = cross_entropy(tape, probs, labels);
            const double loss_value = loss.item();
            if (!std::isfinite(loss_value)) {
                throw TrainError("training diverged: loss is not finite at epoch " +
                                 std::to_string(epoch) + ", batch " + std::to_string(b + 1));
            }
            loss_sum += loss_value * static_cast<double>(batch.size());
            model.params().zero_grads();
            tape.backward(loss);
            optimizer_step(model.params(), cfg, adam);
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(data.train.size());
        rec.val_accuracy = evaluate(model, data.val).accuracy;
        run.history.push_back(rec);

        if (rec.val_accuracy > best_acc) {
            best_acc = rec.val_accuracy;
            best_epoch = epoch;
            best_snapshot = snapshot_params(model.params());
            if (!ckpt_path.empty()) {
                save_checkpoint(model, ckpt_path, epoch, best_acc);
            }
        } else if (epoch - best_epoch >= cfg.patience) {
            break;
        }
    }

    restore_params(model.params(), best_snapshot);
    run.best_epoch = best_epoch;
    run.best_val_accuracy = best_acc;
    run.best_checkpoint_path = ckpt_path;
    run.test = evaluate(model, data.test);
    return run;
}

std::string ablation_display_name(Variant v) {
    switch (v) {
        case Variant::full: return "AIFN";
        case Variant::no_gain_concat: return "-All";
        case Variant::no_conflicting: return "-Conflicting";
        case Variant::no_refining: return "-Refining";
        case Variant::no_adaptive: return "-Adaptive";
        case Variant::sfsn_minus_post_word: return "SFSN-post-word";
        case Variant::sfsn_minus_post_emotion: return "SFSN-post-emotion";
        case Variant::sfsn_minus_comment_word: return "SFSN-comment-word";
        case Variant::sfsn_minus_comment_emotion: return "SFSN-comment-emotion";
        case Variant::no_sfsn: return "-GAIN";
        case Variant::no_sfsn_no_gain: return "-GAIN-SFSN";
    }
    throw ContractError("unhandled variant value");
}

std::vector<Variant> ablation_suite(const std::string& name) {
    if (name == "gain") {
        return {Variant::no_gain_concat, Variant::no_conflicting, Variant::no_refining,
                Variant::no_adaptive, Variant::full};
    }
    if (name == "sfsn") {
        return {Variant::sfsn_minus_post_word, Variant::sfsn_minus_post_emotion,
                Variant::sfsn_minus_comment_word, Variant::sfsn_minus_comment_emotion,
                Variant::full};
    }
    if (name == "stack") {
        return {Variant::no_sfsn_no_gain, Variant::no_sfsn, Variant::full};
    }
    if (name == "all") {
        return all_variants();
    }
    throw ConfigError("unknown ablation suite \"" + name +
                      "\" (choose gain, sfsn, stack, or all)");
}

namespace {

void finish_cell(AblationCell& cell) {
    const std::size_t n = cell.per_seed.size();
    if (n == 0) {
        return;
    }
    double sum = 0.0;
    for (const double v : cell.per_seed) {
        sum += v;
    }
    cell.mean = sum / static_cast<double>(n);
    if (n > 1) {
        double sq = 0.0;
        for (const double v : cell.per_seed) {
            sq += (v - cell.mean) * (v - cell.mean);
        }
        cell.sd = std::sqrt(sq / static_cast<double>(n - 1));
    }
}

}  // namespace

AblationTable run_ablation_suite(const std::vector<Thread>& corpus,
                                 const std::vector<Variant>& variants,
                                 const ModelConfig& base_model, const TrainConfig& base_train,
                                 const std::vector<std::uint64_t>& seeds) {
    if (variants.empty() || seeds.empty()) {
        throw ConfigError("the ablation suite needs at least one variant and one seed");
    }

    AblationTable table;
    table.rows.resize(variants.size());
    for (std::size_t r = 0; r < variants.size(); ++r) {
        table.rows[r].variant = variants[r];
        table.rows[r].display = ablation_display_name(variants[r]);
    }

    // One schedule fingerprint per row, accumulated from the exact configs
    // each run used, with the row-specific fields blanked. Any accidental
    // divergence in schedule shows up as unequal hashes.
    std::vector<std::string> canon(variants.size());

    for (const std::uint64_t seed : seeds) {
        const SplitResult parts = split(corpus, seed, /*stratified=*/true);
        const Vocabulary vocab = build_vocab(parts.train, 1);
        const TokenizedSplits data =
            tokenize_splits(parts, vocab, base_model.post_len, base_model.comment_len);

        for (std::size_t r = 0; r < variants.size(); ++r) {
            AblationRow& row = table.rows[r];
            ModelConfig mc = base_model;
            mc.variant = variants[r];
            mc.vocab_size = vocab.size();
            mc.seed = seed;
            TrainConfig tc = base_train;
            tc.seed = seed;
            tc.checkpoint_dir.clear();

            {
                ModelConfig neutral = mc;
                neutral.variant = Variant::full;
                TrainConfig neutral_train = tc;
                canon[r] += config_to_json(neutral) + "|" + train_config_to_json(neutral_train) +
                            ";";
            }

            try {
                Model model(mc, &vocab);
                const RunArtifacts run = train(model, data, tc);
                row.accuracy.per_seed.push_back(run.test.accuracy);
                row.precision.per_seed.push_back(run.test.positive.precision);
                row.recall.per_seed.push_back(run.test.positive.recall);
                row.f1.per_seed.push_back(run.test.positive.f1);
            } catch (const std::exception& e) {
                if (!row.error.empty()) {
                    row.error += "; ";
                }
                row.error += "seed " + std::to_string(seed) + ": " + e.what();
            }
        }
    }

    for (std::size_t r = 0; r < variants.size(); ++r) {
        AblationRow& row = table.rows[r];
        row.schedule_hash = fnv1a64(canon[r]);
        finish_cell(row.accuracy);
        finish_cell(row.precision);
        finish_cell(row.recall);
        finish_cell(row.f1);
    }
    return table;
}

}  // namespace aifn
