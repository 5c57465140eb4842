#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "aifn/corpus.hpp"
#include "aifn/model.hpp"

namespace aifn {

enum class Optimizer { adam, sgd };

std::string optimizer_name(Optimizer opt);
Optimizer optimizer_from_name(const std::string& name);

// The defaults are the published operating point: learning rate 0.001 and
// minibatches of 64. A zero learning rate is legal and leaves parameters
// bit-identical, which the determinism tests rely on.
struct TrainConfig {
    double lr = 0.001;
    std::size_t max_epochs = 50;
    std::size_t patience = 10;  // epochs without validation-accuracy improvement
    std::size_t batch_size = 64;
    std::uint64_t seed = 0;
    std::string checkpoint_dir;  // empty keeps the best snapshot in memory only
    Optimizer optimizer = Optimizer::adam;
};

std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text, TrainConfig base = TrainConfig());

// "true" for label 0, "false" for label 1; the same strings the corpus uses.
std::string label_name(int label);

// Confusion counts and derived scores with one class treated as positive.
// Zero denominators yield zero, never NaN.
struct ClassMetrics {
    std::string positive_class;
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

// The positive-class choice for P/R/F1 is a convention, not a fact about the
// predictions, so the report carries both directions plus macro averages.
struct MetricsReport {
    ClassMetrics positive;  // the requested positive class (default: false news)
    ClassMetrics negative;  // the other class treated as positive
    double accuracy = 0.0;
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    double macro_f1 = 0.0;
};

MetricsReport compute_metrics(const std::vector<int>& predicted, const std::vector<int>& actual,
                              int positive_label = kLabelFalse);

// Argmax predictions over a split, then compute_metrics against the stored
// labels. The split must be nonempty.
MetricsReport evaluate(const Model& model, const std::vector<TokenizedThread>& split,
                       int positive_label = kLabelFalse);

struct TokenizedSplits {
    std::vector<TokenizedThread> train, val, test;
};

TokenizedSplits tokenize_splits(const SplitResult& split, const Vocabulary& vocab,
                                std::size_t post_len, std::size_t comment_len);

struct EpochRecord {
    std::size_t epoch = 0;  // counted from 1
    double train_loss = 0.0;
    double val_accuracy = 0.0;
};

struct RunArtifacts {
    std::vector<EpochRecord> history;
    std::size_t best_epoch = 0;
    double best_val_accuracy = 0.0;
    std::string best_checkpoint_path;  // empty unless a checkpoint directory was set
    MetricsReport test;
    ModelConfig model_config;
    TrainConfig train_config;
};

// Minibatch gradient descent with shuffled batches, per-epoch validation,
// best-by-validation-accuracy snapshotting, and early stopping once patience
// epochs pass without improvement. The model ends at its best parameters and
// the test report is computed from those. Fully deterministic per seed.
// A non-finite loss raises TrainError naming the epoch and batch.
RunArtifacts train(Model& model, const TokenizedSplits& data, const TrainConfig& cfg);

struct AblationCell {
    std::vector<double> per_seed;
    double mean = 0.0;
    double sd = 0.0;  // sample standard deviation, zero for a single seed
};

struct AblationRow {
    Variant variant = Variant::full;
    std::string display;
    AblationCell accuracy, precision, recall, f1;
    // Hash of everything that must be shared across rows for a fair
    // comparison: base config, schedule, and seed set, with the per-row
    // variant blanked out. Equal hashes across rows certify fairness.
    std::uint64_t schedule_hash = 0;
    std::string error;  // nonempty when this variant failed; others still run
};

struct AblationTable {
    std::vector<AblationRow> rows;
};

// Published row labels: the full model prints as AIFN, gate ablations as
// -All/-Conflicting/-Refining/-Adaptive, channel ablations as SFSN-<channel>,
// and the stack reductions as -GAIN and -GAIN-SFSN.
std::string ablation_display_name(Variant v);

// Named variant sets: "gain" (Table-5 shape), "sfsn" (Table-4 shape),
// "stack" (encoder/attention reductions), "all" (every variant).
std::vector<Variant> ablation_suite(const std::string& name);

// For each seed: split the corpus with class stratification so every row and
// seed sees the same label balance, build the vocabulary from the training
// portion, then train and test every variant on identical data with an
// identical schedule. Row order follows the variants argument.
AblationTable run_ablation_suite(const std::vector<Thread>& corpus,
                                 const std::vector<Variant>& variants,
                                 const ModelConfig& base_model, const TrainConfig& base_train,
                                 const std::vector<std::uint64_t>& seeds);

}  // namespace aifn
