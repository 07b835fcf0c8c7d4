#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "robsal/adversary.hpp"
#include "robsal/data.hpp"
#include "robsal/model.hpp"
#include "robsal/optim.hpp"

namespace robsal {

struct TrainConfig {
    double learning_rate = 1e-3;
    int batch_size = 32;
    int epochs = 10;
    double weight_decay = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    // Optional step decay: divide the rate by `lr_decay_factor` after
    // `lr_decay_epoch` epochs (0 disables).
    double lr_decay_factor = 1.0;
    int lr_decay_epoch = 0;
    std::uint64_t seed = 0;

    void validate() const;

    // The transfer-learning schedule: head-only warmup at 1e-3 with batches
    // of 32 for 10 epochs, then the whole network at 3e-4 with batches of 16
    // for 25 epochs, rate divided by 10 after 15.
    static TrainConfig paper_head();
    static TrainConfig paper_finetune();
};

struct FinetuneConfig {
    GroupMask unfreeze = GroupMask::unfreeze_suffix(3);
    double learning_rate = 1e-5;
    int early_stop_patience = 10;
    int lr_decay_patience = 5;
    double lr_decay_factor = 10.0;
    int max_epochs = 100;
    int batch_size = 16;
    double weight_decay = 5e-4;
    std::uint64_t seed = 0;

    void validate() const;
};

struct EpochMetrics {
    int epoch = 0;
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double val_loss = -1.0;      // -1 when no validation set
    double val_accuracy = -1.0;
    double learning_rate = 0.0;
};

struct MetricTrace {
    std::vector<EpochMetrics> epochs;
    bool diverged = false;
    std::string note;
};

// Standard loop: seeded shuffling, the data-pipeline augmentation stream,
// adaptive-moment updates. Divergence (non-finite loss) aborts the loop and
// flags the trace rather than throwing. All rows of `train` are used;
// callers pass pre-subset datasets.
MetricTrace train_standard(ClassifierModel& model, const Dataset& train,
                           const AugmentPolicy& policy, const TrainConfig& config,
                           const Dataset* val = nullptr);

// Adversarial loop: every minibatch is replaced by its PGD-perturbed version
// before the update (no clean mixing); everything else matches
// train_standard with the same config and seed, so an epsilon = 0 budget
// reproduces the standard trace bit for bit.
MetricTrace train_adversarial(ClassifierModel& model, const Dataset& train,
                              const AugmentPolicy& policy, const TrainConfig& config,
                              const PerturbationBudget& budget, const Dataset* val = nullptr);

// Two-phase transfer schedule: train the head alone, then the entire
// network; with `adversarial`, both phases see PGD-perturbed batches.
struct TransferTraces {
    MetricTrace head_phase;
    MetricTrace full_phase;
};
TransferTraces transfer_schedule(ClassifierModel& model, const Dataset& train,
                                 const AugmentPolicy& policy, const TrainConfig& head_config,
                                 const TrainConfig& full_config, bool adversarial,
                                 const PerturbationBudget* budget = nullptr,
                                 const Dataset* val = nullptr);

// Standard fine-tuning of a suffix of layer groups of a robust model, with
// validation-loss early stopping, plateau lr decay and best-checkpoint
// restoration. Rejects masks that are not a suffix of the group order.
MetricTrace robust_finetune(ClassifierModel& model, const Dataset& train, const Dataset& val,
                            const AugmentPolicy& policy, const FinetuneConfig& config);

double evaluate(const ClassifierModel& model, const Dataset& data, const AugmentPolicy& policy);
std::pair<double, double> evaluate_loss_acc(const ClassifierModel& model, const Dataset& data,
                                            const AugmentPolicy& policy);
double evaluate_robust(const ClassifierModel& model, const Dataset& data,
                       const AugmentPolicy& policy, const PerturbationBudget& budget,
                       std::uint64_t seed);

// Grid-search cross-validation over learning rate x batch size. The cell
// evaluator returns the validation accuracy of (config, fold); the selected
// cell maximizes mean accuracy, ties broken toward lower learning rate then
// smaller batch.
struct GridSearchResult {
    struct Cell {
        double learning_rate = 0.0;
        int batch_size = 0;
        std::vector<double> fold_accuracies;
        double mean_accuracy = 0.0;
    };
    std::vector<Cell> table;
    TrainConfig best;
};

using CellEvaluator = std::function<double(const TrainConfig&, int fold)>;

GridSearchResult grid_search_cv(const std::vector<double>& learning_rates,
                                const std::vector<int>& batch_sizes, int folds,
                                const TrainConfig& base, const CellEvaluator& evaluate_cell);

// Concrete evaluator: trains a fresh model on the out-of-fold rows and
// scores the held-out fold. `pool` must carry fold assignments.
GridSearchResult grid_search_cv_model(const ArchConfig& arch, const Normalization& norm,
                                      std::uint64_t model_seed, const Dataset& pool,
                                      const AugmentPolicy& policy, const TrainConfig& base,
                                      const std::vector<double>& learning_rates,
                                      const std::vector<int>& batch_sizes, int folds);

// Multinomial logistic regression on raw eval-transformed pixels; the
// synthetic-generator acceptance bound uses this as the "linear signal"
// detector. Returns test accuracy.
double fit_linear_probe(const Dataset& train, const Dataset& test, const AugmentPolicy& policy,
                        int epochs, double learning_rate, std::uint64_t seed);

// Full parameter snapshot/restore (used for best-checkpoint restoration).
std::vector<Tensor> snapshot_params(const ClassifierModel& model);
void restore_params(ClassifierModel& model, const std::vector<Tensor>& snapshot);

}  // namespace robsal
