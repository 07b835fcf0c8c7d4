#include "robsal/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "robsal/errors.hpp"
#include "robsal/nn.hpp"

namespace robsal {

void TrainConfig::validate() const {
    if (learning_rate <= 0.0) throw ArgumentError("learning_rate must be positive");
    if (batch_size < 1) throw ArgumentError("batch_size must be positive");
    if (epochs < 0) throw ArgumentError("epochs must be nonnegative");
    if (weight_decay < 0.0) throw ArgumentError("weight_decay must be nonnegative");
    if (lr_decay_epoch > 0 && lr_decay_factor <= 1.0)
        throw ArgumentError("lr_decay_factor must exceed 1 when decay is enabled");
}

TrainConfig TrainConfig::paper_head() {
    TrainConfig c;
    c.learning_rate = 1e-3;
    c.batch_size = 32;
    c.epochs = 10;
    return c;
}

TrainConfig TrainConfig::paper_finetune() {
    TrainConfig c;
    c.learning_rate = 3e-4;
    c.batch_size = 16;
    c.epochs = 25;
    c.lr_decay_factor = 10.0;
    c.lr_decay_epoch = 15;
    return c;
}

void FinetuneConfig::validate() const {
    if (learning_rate <= 0.0) throw ArgumentError("learning_rate must be positive");
    if (early_stop_patience < 1 || lr_decay_patience < 1)
        throw ArgumentError("patience values must be positive");
    if (lr_decay_factor <= 1.0) throw ArgumentError("lr_decay_factor must exceed 1");
    if (max_epochs < 1) throw ArgumentError("max_epochs must be positive");
    if (batch_size < 1) throw ArgumentError("batch_size must be positive");
}

namespace {

std::vector<Tensor*> collect_params(ClassifierModel& model) {
    std::vector<Tensor*> out;
    model.for_each_param([&](int, int, const std::string&, Tensor& t) { out.push_back(&t); });
    return out;
}

std::vector<bool> frozen_flags(const ClassifierModel& model) {
    std::vector<bool> out;
    const GroupMask& mask = model.trainable_mask();
    model.for_each_param([&](int, int group, const std::string&, const Tensor&) {
        out.push_back(!mask.trainable[static_cast<std::size_t>(group - 1)]);
    });
    return out;
}

Adam make_optimizer(const ClassifierModel& model, double lr, const TrainConfig& cfg) {
    std::vector<std::vector<int>> shapes;
    model.for_each_param(
        [&](int, int, const std::string&, const Tensor& t) { shapes.push_back(t.shape()); });
    Adam::Options opts;
    opts.learning_rate = lr;
    opts.beta1 = cfg.beta1;
    opts.beta2 = cfg.beta2;
    opts.weight_decay = cfg.weight_decay;
    return Adam(shapes, opts);
}

// Shared epoch loop for clean and adversarial training.
MetricTrace run_training(ClassifierModel& model, const Dataset& train, const AugmentPolicy& policy,
                         const TrainConfig& cfg, const PerturbationBudget* budget,
                         const Dataset* val) {
    cfg.validate();
    if (budget) budget->validate();
    if (train.size() == 0) throw ArgumentError("empty training set");

    MetricTrace trace;
    if (cfg.epochs == 0) return trace;

    Adam optimizer = make_optimizer(model, cfg.learning_rate, cfg);
    auto params = collect_params(model);
    const auto frozen = frozen_flags(model);

    std::vector<int> order(static_cast<std::size_t>(train.size()));
    for (int i = 0; i < train.size(); ++i) order[static_cast<std::size_t>(i)] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        if (cfg.lr_decay_epoch > 0 && epoch == cfg.lr_decay_epoch)
            optimizer.set_learning_rate(optimizer.learning_rate() / cfg.lr_decay_factor);

        Rng shuffle_rng(Rng::derive(cfg.seed, 0xba7c, static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        int correct = 0;
        bool aborted = false;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<int> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                  order.begin() + static_cast<std::ptrdiff_t>(end));
            ImageBatch batch = make_train_batch(train, rows, policy, epoch, cfg.seed);
            if (budget && budget->epsilon > 0.0) {
                const std::uint64_t attack_seed =
                    Rng::derive(cfg.seed, 0xadf, static_cast<std::uint64_t>(epoch),
                                static_cast<std::uint64_t>(start));
                batch = pgd_attack(model, batch, *budget, attack_seed);
            }

            ParamGrads grads = model.make_param_grads();
            auto [loss, ncorrect] = model.loss_grad_batch(batch, grads);
            if (!std::isfinite(loss)) {
                trace.diverged = true;
                trace.note = "non-finite loss at epoch " + std::to_string(epoch);
                aborted = true;
                break;
            }
            loss_sum += loss * static_cast<double>(rows.size());
            correct += ncorrect;
            optimizer.step(params, grads, frozen);
        }
        if (aborted) break;

        EpochMetrics em;
        em.epoch = epoch;
        em.train_loss = loss_sum / train.size();
        em.train_accuracy = static_cast<double>(correct) / train.size();
        em.learning_rate = optimizer.learning_rate();
        if (val && val->size() > 0) {
            auto [vl, va] = evaluate_loss_acc(model, *val, policy);
            em.val_loss = vl;
            em.val_accuracy = va;
        }
        trace.epochs.push_back(em);
    }
    return trace;
}

}  // namespace

MetricTrace train_standard(ClassifierModel& model, const Dataset& train,
                           const AugmentPolicy& policy, const TrainConfig& config,
                           const Dataset* val) {
    return run_training(model, train, policy, config, nullptr, val);
}

MetricTrace train_adversarial(ClassifierModel& model, const Dataset& train,
                              const AugmentPolicy& policy, const TrainConfig& config,
                              const PerturbationBudget& budget, const Dataset* val) {
    return run_training(model, train, policy, config, &budget, val);
}

TransferTraces transfer_schedule(ClassifierModel& model, const Dataset& train,
                                 const AugmentPolicy& policy, const TrainConfig& head_config,
                                 const TrainConfig& full_config, bool adversarial,
                                 const PerturbationBudget* budget, const Dataset* val) {
    if (adversarial && !budget) throw ArgumentError("adversarial transfer needs a budget");
    TransferTraces traces;

    GroupMask head_only = GroupMask::all(false);
    head_only.trainable[4] = true;
    model.set_trainable(head_only);
    traces.head_phase = adversarial
                            ? train_adversarial(model, train, policy, head_config, *budget, val)
                            : train_standard(model, train, policy, head_config, val);

    model.set_trainable(GroupMask::all(true));
    traces.full_phase = adversarial
                            ? train_adversarial(model, train, policy, full_config, *budget, val)
                            : train_standard(model, train, policy, full_config, val);
    return traces;
}

MetricTrace robust_finetune(ClassifierModel& model, const Dataset& train, const Dataset& val,
                            const AugmentPolicy& policy, const FinetuneConfig& config) {
    config.validate();
    if (!config.unfreeze.is_suffix())
        throw ArgumentError(
            "fine-tuning unfreezes groups starting from the last one; mask must be a suffix");
    MetricTrace trace;
    if (config.unfreeze.count_trainable() == 0) return trace;  // nothing to train
    if (val.size() == 0) throw ArgumentError("fine-tuning needs a validation set");

    model.set_trainable(config.unfreeze);

    TrainConfig step;
    step.learning_rate = config.learning_rate;
    step.batch_size = config.batch_size;
    step.epochs = 1;
    step.weight_decay = config.weight_decay;

    Adam optimizer = make_optimizer(model, config.learning_rate, step);
    auto params = collect_params(model);
    const auto frozen = frozen_flags(model);

    std::vector<int> order(static_cast<std::size_t>(train.size()));
    for (int i = 0; i < train.size(); ++i) order[static_cast<std::size_t>(i)] = i;

    double best_loss = std::numeric_limits<double>::infinity();
    std::vector<Tensor> best_snapshot = snapshot_params(model);
    int since_improve = 0;
    int since_decay = 0;

    for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
        Rng shuffle_rng(Rng::derive(config.seed, 0xf7ba, static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        int correct = 0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t end =
                std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            std::vector<int> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                  order.begin() + static_cast<std::ptrdiff_t>(end));
            ImageBatch batch = make_train_batch(train, rows, policy, epoch, config.seed);
            ParamGrads grads = model.make_param_grads();
            auto [loss, ncorrect] = model.loss_grad_batch(batch, grads);
            if (!std::isfinite(loss)) {
                trace.diverged = true;
                trace.note = "non-finite loss at epoch " + std::to_string(epoch);
                restore_params(model, best_snapshot);
                return trace;
            }
            loss_sum += loss * static_cast<double>(rows.size());
            correct += ncorrect;
            optimizer.step(params, grads, frozen);
        }

        auto [val_loss, val_acc] = evaluate_loss_acc(model, val, policy);
        EpochMetrics em;
        em.epoch = epoch;
        em.train_loss = loss_sum / train.size();
        em.train_accuracy = static_cast<double>(correct) / train.size();
        em.val_loss = val_loss;
        em.val_accuracy = val_acc;
        em.learning_rate = optimizer.learning_rate();
        trace.epochs.push_back(em);

        if (val_loss < best_loss) {
            best_loss = val_loss;
            best_snapshot = snapshot_params(model);
            since_improve = 0;
            since_decay = 0;
        } else {
            ++since_improve;
            ++since_decay;
            if (since_decay >= config.lr_decay_patience) {
                optimizer.set_learning_rate(optimizer.learning_rate() / config.lr_decay_factor);
                since_decay = 0;
            }
            if (since_improve >= config.early_stop_patience) break;
        }
    }

    restore_params(model, best_snapshot);
    return trace;
}

namespace {
constexpr int kEvalBatch = 64;
}

std::pair<double, double> evaluate_loss_acc(const ClassifierModel& model, const Dataset& data,
                                            const AugmentPolicy& policy) {
    if (data.size() == 0) throw ArgumentError("empty evaluation set");
    double loss_sum = 0.0;
    int correct = 0;
    const int k = model.num_classes();
    for (int start = 0; start < data.size(); start += kEvalBatch) {
        const int end = std::min(data.size(), start + kEvalBatch);
        std::vector<int> rows;
        for (int i = start; i < end; ++i) rows.push_back(i);
        ImageBatch batch = make_eval_batch(data, rows, policy);
        Tensor lg = model.logits(batch.images);
        for (int i = 0; i < lg.dim(0); ++i) {
            const double* row = lg.data() + static_cast<std::size_t>(i) * k;
            const int y = batch.labels[static_cast<std::size_t>(i)];
            loss_sum += nn::cross_entropy(row, k, y);
            int arg = 0;
            for (int c = 1; c < k; ++c)
                if (row[c] > row[arg]) arg = c;
            if (arg == y) ++correct;
        }
    }
    return {loss_sum / data.size(), static_cast<double>(correct) / data.size()};
}

double evaluate(const ClassifierModel& model, const Dataset& data, const AugmentPolicy& policy) {
    return evaluate_loss_acc(model, data, policy).second;
}

double evaluate_robust(const ClassifierModel& model, const Dataset& data,
                       const AugmentPolicy& policy, const PerturbationBudget& budget,
                       std::uint64_t seed) {
    if (data.size() == 0) throw ArgumentError("empty evaluation set");
    budget.validate();
    int correct = 0;
    const int k = model.num_classes();
    for (int start = 0; start < data.size(); start += kEvalBatch) {
        const int end = std::min(data.size(), start + kEvalBatch);
        std::vector<int> rows;
        for (int i = start; i < end; ++i) rows.push_back(i);
        ImageBatch batch = make_eval_batch(data, rows, policy);
        ImageBatch adv = pgd_attack(model, batch, budget,
                                    Rng::derive(seed, 0xeb0, static_cast<std::uint64_t>(start)));
        Tensor lg = model.logits(adv.images);
        for (int i = 0; i < lg.dim(0); ++i) {
            const double* row = lg.data() + static_cast<std::size_t>(i) * k;
            int arg = 0;
            for (int c = 1; c < k; ++c)
                if (row[c] > row[arg]) arg = c;
            if (arg == adv.labels[static_cast<std::size_t>(i)]) ++correct;
        }
    }
    return static_cast<double>(correct) / data.size();
}

GridSearchResult grid_search_cv(const std::vector<double>& learning_rates,
                                const std::vector<int>& batch_sizes, int folds,
                                const TrainConfig& base, const CellEvaluator& evaluate_cell) {
    if (learning_rates.empty() || batch_sizes.empty()) throw ArgumentError("empty search grid");
    if (folds < 2) throw ArgumentError("folds must be at least 2");

    GridSearchResult result;
    for (double lr : learning_rates) {
        for (int bs : batch_sizes) {
            GridSearchResult::Cell cell;
            cell.learning_rate = lr;
            cell.batch_size = bs;
            TrainConfig cfg = base;
            cfg.learning_rate = lr;
            cfg.batch_size = bs;
            double sum = 0.0;
            for (int f = 0; f < folds; ++f) {
                const double acc = evaluate_cell(cfg, f);
                cell.fold_accuracies.push_back(acc);
                sum += acc;
            }
            cell.mean_accuracy = sum / folds;
            result.table.push_back(std::move(cell));
        }
    }

    const GridSearchResult::Cell* best = &result.table.front();
    for (const auto& cell : result.table) {
        if (cell.mean_accuracy > best->mean_accuracy ||
            (cell.mean_accuracy == best->mean_accuracy &&
             (cell.learning_rate < best->learning_rate ||
              (cell.learning_rate == best->learning_rate && cell.batch_size < best->batch_size))))
            best = &cell;
    }
    result.best = base;
    result.best.learning_rate = best->learning_rate;
    result.best.batch_size = best->batch_size;
    return result;
}

GridSearchResult grid_search_cv_model(const ArchConfig& arch, const Normalization& norm,
                                      std::uint64_t model_seed, const Dataset& pool,
                                      const AugmentPolicy& policy, const TrainConfig& base,
                                      const std::vector<double>& learning_rates,
                                      const std::vector<int>& batch_sizes, int folds) {
    for (const auto& r : pool.manifest.records)
        if (r.fold < 0) throw ArgumentError("grid search pool is missing fold assignments");

    // Materialize per-fold train/validation datasets once.
    std::vector<Dataset> fold_train(static_cast<std::size_t>(folds));
    std::vector<Dataset> fold_val(static_cast<std::size_t>(folds));
    for (int f = 0; f < folds; ++f) {
        Dataset& tr = fold_train[static_cast<std::size_t>(f)];
        Dataset& va = fold_val[static_cast<std::size_t>(f)];
        tr.manifest.class_names = va.manifest.class_names = pool.manifest.class_names;
        tr.manifest.height = va.manifest.height = pool.manifest.height;
        tr.manifest.width = va.manifest.width = pool.manifest.width;
        tr.manifest.channels = va.manifest.channels = pool.manifest.channels;
        for (int i = 0; i < static_cast<int>(pool.manifest.records.size()); ++i) {
            const auto& r = pool.manifest.records[static_cast<std::size_t>(i)];
            Dataset& dst = (r.fold == f) ? va : tr;
            dst.manifest.records.push_back(r);
            dst.images.push_back(pool.images[static_cast<std::size_t>(i)]);
        }
    }

    auto cell = [&](const TrainConfig& cfg, int f) {
        ClassifierModel model = ClassifierModel::create(arch, norm, model_seed);
        train_standard(model, fold_train[static_cast<std::size_t>(f)], policy, cfg);
        return evaluate(model, fold_val[static_cast<std::size_t>(f)], policy);
    };
    return grid_search_cv(learning_rates, batch_sizes, folds, base, cell);
}

double fit_linear_probe(const Dataset& train, const Dataset& test, const AugmentPolicy& policy,
                        int epochs, double learning_rate, std::uint64_t seed) {
    if (train.size() == 0 || test.size() == 0) throw ArgumentError("probe needs data");
    const int k = static_cast<int>(train.manifest.class_names.size());
    const int c = train.manifest.channels;
    const int side = policy.out_size;
    LinearModel probe({c, side, side}, k);
    const int flat = probe.fc().in_features();

    // Center pixels by the training channel means. An affine shift cannot
    // change what is linearly decodable, but it conditions the problem so
    // the probe actually finds whatever signal exists.
    std::vector<double> mean(static_cast<std::size_t>(c), 0.0);
    {
        std::vector<int> rows(static_cast<std::size_t>(train.size()));
        for (int i = 0; i < train.size(); ++i) rows[static_cast<std::size_t>(i)] = i;
        ImageBatch all = make_eval_batch(train, rows, policy);
        const int area = side * side;
        for (int i = 0; i < all.images.dim(0); ++i)
            for (int ch = 0; ch < c; ++ch) {
                const double* plane = all.images.data() +
                                      (static_cast<std::size_t>(i) * c + ch) * area;
                for (int j = 0; j < area; ++j) mean[static_cast<std::size_t>(ch)] += plane[j];
            }
        for (auto& m : mean) m /= static_cast<double>(train.size()) * area;
    }
    auto center = [&](Tensor& images) {
        const int n = images.dim(0);
        const int area = side * side;
        for (int i = 0; i < n; ++i)
            for (int ch = 0; ch < c; ++ch) {
                double* plane = images.data() + (static_cast<std::size_t>(i) * c + ch) * area;
                for (int j = 0; j < area; ++j) plane[j] -= mean[static_cast<std::size_t>(ch)];
            }
    };

    Adam::Options opts;
    opts.learning_rate = learning_rate;
    Adam optimizer({probe.fc().weight.shape(), probe.fc().bias.shape()}, opts);
    std::vector<Tensor*> params{&probe.fc().weight, &probe.fc().bias};
    std::vector<bool> frozen{false, false};

    std::vector<int> order(static_cast<std::size_t>(train.size()));
    for (int i = 0; i < train.size(); ++i) order[static_cast<std::size_t>(i)] = i;

    const int batch_size = 64;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        Rng rng(Rng::derive(seed, 0x11ea, static_cast<std::uint64_t>(epoch)));
        rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += batch_size) {
            const std::size_t end = std::min(order.size(), start + batch_size);
            std::vector<int> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                  order.begin() + static_cast<std::ptrdiff_t>(end));
            ImageBatch batch = make_eval_batch(train, rows, policy);
            Tensor lg = probe.logits(batch.images);

            std::vector<Tensor> grads{Tensor(probe.fc().weight.shape()),
                                      Tensor(probe.fc().bias.shape())};
            const int n = lg.dim(0);
            for (int i = 0; i < n; ++i) {
                const double* lrow = lg.data() + static_cast<std::size_t>(i) * k;
                auto p = nn::softmax(lrow, k);
                const double* x = batch.images.data() + static_cast<std::size_t>(i) * flat;
                for (int cc = 0; cc < k; ++cc) {
                    const double d =
                        (p[static_cast<std::size_t>(cc)] -
                         (cc == batch.labels[static_cast<std::size_t>(i)] ? 1.0 : 0.0)) /
                        n;
                    grads[1][static_cast<std::size_t>(cc)] += d;
                    double* wrow = grads[0].data() + static_cast<std::size_t>(cc) * flat;
                    for (int j = 0; j < flat; ++j) wrow[j] += d * x[j];
                }
            }
            optimizer.step(params, grads, frozen);
        }
    }

    int correct = 0;
    for (int start = 0; start < test.size(); start += batch_size) {
        const int end = std::min(test.size(), start + batch_size);
        std::vector<int> rows;
        for (int i = start; i < end; ++i) rows.push_back(i);
        ImageBatch batch = make_eval_batch(test, rows, policy);
        Tensor lg = probe.logits(batch.images);
        for (int i = 0; i < lg.dim(0); ++i) {
            const double* row = lg.data() + static_cast<std::size_t>(i) * k;
            int arg = 0;
            for (int cc = 1; cc < k; ++cc)
                if (row[cc] > row[arg]) arg = cc;
            if (arg == batch.labels[static_cast<std::size_t>(i)]) ++correct;
        }
    }
    return static_cast<double>(correct) / test.size();
}

std::vector<Tensor> snapshot_params(const ClassifierModel& model) {
    std::vector<Tensor> out;
    model.for_each_param([&](int, int, const std::string&, const Tensor& t) { out.push_back(t); });
    return out;
}

void restore_params(ClassifierModel& model, const std::vector<Tensor>& snapshot) {
    model.for_each_param([&](int idx, int, const std::string&, Tensor& t) {
        t = snapshot[static_cast<std::size_t>(idx)];
    });
}

}  // namespace robsal
