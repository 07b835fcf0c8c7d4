#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "robsal/errors.hpp"
#include "robsal/optim.hpp"
#include "robsal/train.hpp"

using namespace robsal;

namespace {

struct Fixture {
    Dataset train;
    Dataset val;
    AugmentPolicy policy;

    Fixture() : policy(AugmentPolicy::desk(16).deterministic()) {
        Dataset pool = synth_dataset(24, 16, 3, 55);
        DatasetManifest split =
            balanced_subset(pool.manifest, pool.manifest.class_names, 18, 6, 2);
        Dataset all = apply_manifest(pool, split);
        train = subset(all, "train");
        val = subset(all, "test");
        for (auto& r : val.manifest.records) r.split = "val";
    }

    static ClassifierModel model(std::uint64_t seed = 7) {
        ArchConfig cfg;
        cfg.input_size = 16;
        cfg.num_classes = 3;
        cfg.stem_channels = 4;
        cfg.stem_stride = 2;
        cfg.block_channels = {4, 6, 8, 8};
        cfg.block_strides = {1, 2, 2, 2};
        return ClassifierModel::create(cfg, Normalization::centered(3), seed);
    }
};

std::vector<Tensor> params_of(const ClassifierModel& m) { return snapshot_params(m); }

bool params_equal(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (!bitwise_equal(a[i], b[i])) return false;
    return true;
}

bool traces_equal(const MetricTrace& a, const MetricTrace& b) {
    if (a.epochs.size() != b.epochs.size()) return false;
    for (std::size_t i = 0; i < a.epochs.size(); ++i) {
        const auto& x = a.epochs[i];
        const auto& y = b.epochs[i];
        if (x.train_loss != y.train_loss || x.train_accuracy != y.train_accuracy ||
            x.val_loss != y.val_loss)
            return false;
    }
    return true;
}

}  // namespace

TEST_CASE("adam single step matches the closed-form update") {
    // One parameter, one gradient g: m=(1-b1)g, v=(1-b2)g^2, bias-corrected
    // mhat=g, vhat=g^2, so the step is lr * g / (|g| + eps).
    Adam::Options opts;
    opts.learning_rate = 0.05;
    opts.weight_decay = 0.0;
    Adam adam({{1}}, opts);
    Tensor w({1});
    w[0] = 2.0;
    Tensor g({1});
    g[0] = -6.0;  // d/dw (w-5)^2 at w=2
    std::vector<Tensor*> params{&w};
    adam.step(params, {g}, {false});
    const double expected = 2.0 + 0.05 * 6.0 / (6.0 + 1e-8);
    CHECK(w[0] == doctest::Approx(expected).epsilon(1e-12));

    // With L2 decay the gradient becomes g + wd*w before the moments.
    Adam adam2({{1}}, [] {
        Adam::Options o;
        o.learning_rate = 0.1;
        o.weight_decay = 0.5;
        return o;
    }());
    Tensor w2({1});
    w2[0] = 4.0;
    Tensor g2({1});
    g2[0] = 1.0;
    std::vector<Tensor*> p2{&w2};
    adam2.step(p2, {g2}, {false});
    const double geff = 1.0 + 0.5 * 4.0;
    CHECK(w2[0] == doctest::Approx(4.0 - 0.1 * geff / (geff + 1e-8)).epsilon(1e-12));
}

TEST_CASE("paper schedule constants") {
    const TrainConfig head = TrainConfig::paper_head();
    CHECK(head.learning_rate == 1e-3);
    CHECK(head.batch_size == 32);
    CHECK(head.epochs == 10);
    const TrainConfig fine = TrainConfig::paper_finetune();
    CHECK(fine.learning_rate == 3e-4);
    CHECK(fine.batch_size == 16);
    CHECK(fine.epochs == 25);
    CHECK(fine.lr_decay_factor == 10.0);
    CHECK(fine.lr_decay_epoch == 15);
    CHECK(fine.weight_decay == 5e-4);
    CHECK(fine.beta1 == 0.9);
    CHECK(fine.beta2 == 0.999);
}

TEST_CASE("zero epochs leave the model unchanged") {
    Fixture f;
    ClassifierModel m = Fixture::model();
    const auto before = params_of(m);
    TrainConfig cfg;
    cfg.epochs = 0;
    MetricTrace trace = train_standard(m, f.train, f.policy, cfg);
    CHECK(trace.epochs.empty());
    CHECK(params_equal(before, params_of(m)));
}

TEST_CASE("training is deterministic under the seed") {
    Fixture f;
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 16;
    cfg.seed = 31;

    ClassifierModel a = Fixture::model();
    ClassifierModel b = Fixture::model();
    MetricTrace ta = train_standard(a, f.train, f.policy, cfg, &f.val);
    MetricTrace tb = train_standard(b, f.train, f.policy, cfg, &f.val);
    CHECK(traces_equal(ta, tb));
    CHECK(params_equal(params_of(a), params_of(b)));

    // Different seed: different batch order, different trace.
    ClassifierModel c = Fixture::model();
    TrainConfig cfg2 = cfg;
    cfg2.seed = 32;
    MetricTrace tc = train_standard(c, f.train, f.policy, cfg2);
    CHECK_FALSE(traces_equal(ta, tc));
}

TEST_CASE("adversarial training with epsilon zero equals standard training") {
    Fixture f;
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.seed = 9;

    ClassifierModel a = Fixture::model();
    ClassifierModel b = Fixture::model();
    MetricTrace ta = train_standard(a, f.train, f.policy, cfg);
    MetricTrace tb = train_adversarial(b, f.train, f.policy, cfg, PerturbationBudget(0.0));
    CHECK(traces_equal(ta, tb));
    CHECK(params_equal(params_of(a), params_of(b)));
}

TEST_CASE("adversarial batches change the trace") {
    Fixture f;
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.seed = 9;
    ClassifierModel a = Fixture::model();
    ClassifierModel b = Fixture::model();
    MetricTrace ta = train_standard(a, f.train, f.policy, cfg);
    MetricTrace tb = train_adversarial(b, f.train, f.policy, cfg, PerturbationBudget(0.3));
    CHECK_FALSE(traces_equal(ta, tb));
}

TEST_CASE("freeze isolation under optimizer steps") {
    Fixture f;
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.seed = 13;

    SUBCASE("all frozen: bitwise unchanged") {
        ClassifierModel m = Fixture::model();
        m.set_trainable(GroupMask::all(false));
        const auto before = params_of(m);
        train_standard(m, f.train, f.policy, cfg);
        CHECK(params_equal(before, params_of(m)));
    }

    SUBCASE("suffix mask: frozen prefix untouched, unfrozen groups move") {
        ClassifierModel m = Fixture::model();
        const auto before_cs = std::array<std::uint64_t, 5>{
            m.group_checksum(1), m.group_checksum(2), m.group_checksum(3), m.group_checksum(4),
            m.group_checksum(5)};
        m.set_trainable(GroupMask::unfreeze_suffix(3));
        train_standard(m, f.train, f.policy, cfg);
        CHECK(m.group_checksum(1) == before_cs[0]);
        CHECK(m.group_checksum(2) == before_cs[1]);
        CHECK(m.group_checksum(3) != before_cs[2]);
        CHECK(m.group_checksum(4) != before_cs[3]);
        CHECK(m.group_checksum(5) != before_cs[4]);
    }

    SUBCASE("all-true mask equals default trainability") {
        ClassifierModel a = Fixture::model();
        ClassifierModel b = Fixture::model();
        b.set_trainable(GroupMask::all(true));
        train_standard(a, f.train, f.policy, cfg);
        train_standard(b, f.train, f.policy, cfg);
        CHECK(params_equal(params_of(a), params_of(b)));
    }
}

TEST_CASE("transfer schedule trains the head first") {
    Fixture f;
    ClassifierModel m = Fixture::model();
    m.replace_head(3, 77);

    TrainConfig head_cfg;
    head_cfg.epochs = 2;
    head_cfg.seed = 5;
    TrainConfig full_cfg;
    full_cfg.epochs = 0;  // isolate phase 1
    full_cfg.seed = 6;

    const auto cs_before = std::array<std::uint64_t, 4>{m.group_checksum(1), m.group_checksum(2),
                                                        m.group_checksum(3), m.group_checksum(4)};
    const std::uint64_t head_before = m.group_checksum(5);
    transfer_schedule(m, f.train, f.policy, head_cfg, full_cfg, false);
    for (int g = 1; g <= 4; ++g)
        CHECK(m.group_checksum(g) == cs_before[static_cast<std::size_t>(g - 1)]);
    CHECK(m.group_checksum(5) != head_before);
    // Mask restored to fully trainable afterwards.
    CHECK(m.trainable_mask().count_trainable() == 5);
}

TEST_CASE("robust finetune rejects bad masks and an empty mask is a no-op") {
    Fixture f;
    ClassifierModel m = Fixture::model();

    FinetuneConfig cfg;
    cfg.unfreeze = GroupMask::all(false);
    const auto before = params_of(m);
    MetricTrace t = robust_finetune(m, f.train, f.val, f.policy, cfg);
    CHECK(t.epochs.empty());
    CHECK(params_equal(before, params_of(m)));

    FinetuneConfig bad;
    bad.unfreeze = GroupMask::all(false);
    bad.unfreeze.trainable[1] = true;  // {F,T,F,F,F}
    CHECK_THROWS_AS(robust_finetune(m, f.train, f.val, f.policy, bad), ArgumentError);

    FinetuneConfig invalid;
    invalid.early_stop_patience = 0;
    CHECK_THROWS_AS(robust_finetune(m, f.train, f.val, f.policy, invalid), ArgumentError);
}

TEST_CASE("robust finetune: early stopping, best-checkpoint restore, frozen prefix") {
    Fixture f;
    ClassifierModel m = Fixture::model(3);
    // Give the model a head start so fine-tuning has something to improve.
    TrainConfig warm;
    warm.epochs = 4;
    warm.seed = 2;
    train_standard(m, f.train, f.policy, warm);

    const std::uint64_t cs1 = m.group_checksum(1);
    const std::uint64_t cs2 = m.group_checksum(2);

    FinetuneConfig cfg;
    cfg.unfreeze = GroupMask::unfreeze_suffix(3);
    cfg.learning_rate = 1e-3;  // desk-scale rate so a short test moves
    cfg.early_stop_patience = 3;
    cfg.lr_decay_patience = 2;
    cfg.max_epochs = 20;
    cfg.batch_size = 16;
    cfg.seed = 4;
    MetricTrace trace = robust_finetune(m, f.train, f.val, f.policy, cfg);
    REQUIRE_FALSE(trace.epochs.empty());

    CHECK(m.group_checksum(1) == cs1);
    CHECK(m.group_checksum(2) == cs2);

    // The restored model's validation loss is the minimum of the trace.
    double min_loss = trace.epochs.front().val_loss;
    for (const auto& e : trace.epochs) min_loss = std::min(min_loss, e.val_loss);
    auto [vl, va] = evaluate_loss_acc(m, f.val, f.policy);
    CHECK(vl == doctest::Approx(min_loss).epsilon(1e-12));

    // Plateau decay only lowers the rate.
    for (std::size_t i = 1; i < trace.epochs.size(); ++i)
        CHECK(trace.epochs[i].learning_rate <= trace.epochs[i - 1].learning_rate + 1e-18);
}

TEST_CASE("evaluation") {
    Fixture f;
    ClassifierModel m = Fixture::model(41);

    SUBCASE("perfect memorizer scores 1.0 on its training set") {
        TrainConfig cfg;
        cfg.epochs = 40;
        cfg.seed = 3;
        MetricTrace trace = train_standard(m, f.train, f.policy, cfg);
        REQUIRE(trace.epochs.back().train_accuracy == 1.0);
        CHECK(evaluate(m, f.train, f.policy) == 1.0);
    }

    SUBCASE("robust evaluation with epsilon zero equals clean evaluation") {
        CHECK(evaluate_robust(m, f.val, f.policy, PerturbationBudget(0.0), 5) ==
              evaluate(m, f.val, f.policy));
    }

    SUBCASE("empty dataset raises") {
        Dataset empty;
        CHECK_THROWS_AS(evaluate(m, empty, f.policy), ArgumentError);
        CHECK_THROWS_AS(evaluate_robust(m, empty, f.policy, PerturbationBudget(0.1), 1),
                        ArgumentError);
    }
}

TEST_CASE("grid search: selection, ties, consistency") {
    TrainConfig base;

    SUBCASE("single cell grid selects that cell") {
        auto result = grid_search_cv({3e-4}, {16}, 5, base,
                                     [](const TrainConfig&, int) { return 0.5; });
        CHECK(result.best.learning_rate == 3e-4);
        CHECK(result.best.batch_size == 16);
        CHECK(result.table.size() == 1);
        CHECK(result.table[0].fold_accuracies.size() == 5);
    }

    SUBCASE("paper grid runs 9 cells x 5 folds") {
        int runs = 0;
        auto result = grid_search_cv({1e-3, 3e-4, 1e-4}, {8, 16, 32}, 5, base,
                                     [&](const TrainConfig&, int) {
                                         ++runs;
                                         return 0.5;
                                     });
        CHECK(runs == 45);
        CHECK(result.table.size() == 9);
    }

    SUBCASE("all-equal accuracies break ties toward lower lr then smaller batch") {
        auto result = grid_search_cv({1e-3, 3e-4, 1e-4}, {32, 16, 8}, 5, base,
                                     [](const TrainConfig&, int) { return 0.9; });
        CHECK(result.best.learning_rate == 1e-4);
        CHECK(result.best.batch_size == 8);
    }

    SUBCASE("selection is the argmax of the reported table") {
        auto score = [](const TrainConfig& c, int fold) {
            return (c.learning_rate == 3e-4 && c.batch_size == 16) ? 0.9 : 0.5 + 0.01 * fold;
        };
        auto result = grid_search_cv({1e-3, 3e-4, 1e-4}, {8, 16, 32}, 5, base, score);
        const auto* best_cell = &result.table.front();
        for (const auto& cell : result.table)
            if (cell.mean_accuracy > best_cell->mean_accuracy) best_cell = &cell;
        CHECK(result.best.learning_rate == best_cell->learning_rate);
        CHECK(result.best.batch_size == best_cell->batch_size);
        CHECK(result.best.learning_rate == 3e-4);
    }

    SUBCASE("empty grid raises") {
        CHECK_THROWS_AS(grid_search_cv({}, {8}, 5, base,
                                       [](const TrainConfig&, int) { return 0.0; }),
                        ArgumentError);
    }
}

TEST_CASE("divergence aborts with a diagnostic trace") {
    Fixture f;
    ClassifierModel m = Fixture::model();
    // An absurd learning rate with huge weight decay drives weights to inf.
    TrainConfig cfg;
    cfg.learning_rate = 1e18;
    cfg.weight_decay = 1e18;
    cfg.epochs = 8;
    cfg.seed = 1;
    MetricTrace trace = train_standard(m, f.train, f.policy, cfg);
    CHECK(trace.diverged);
    CHECK_FALSE(trace.note.empty());
}

TEST_CASE("linear probe learns a linearly separable dataset") {
    // Class identity carried by overall brightness: exactly what a linear
    // model can read.
    Dataset data;
    data.manifest.channels = 3;
    data.manifest.height = 8;
    data.manifest.width = 8;
    data.manifest.class_names = {"dark", "bright"};
    Rng rng(6);
    for (int i = 0; i < 80; ++i) {
        const int label = i % 2;
        Tensor im({3, 8, 8});
        for (std::size_t j = 0; j < im.size(); ++j)
            im[j] = (label ? 0.7 : 0.3) + rng.uniform(-0.05, 0.05);
        ManifestRecord r;
        r.id = "b" + std::to_string(i);
        r.label = label;
        r.class_name = data.manifest.class_names[static_cast<std::size_t>(label)];
        r.split = i < 60 ? "train" : "test";
        data.manifest.records.push_back(r);
        data.images.push_back(im);
    }
    Dataset train = subset(data, "train");
    Dataset test = subset(data, "test");
    AugmentPolicy policy = AugmentPolicy::desk(8).deterministic();
    const double acc = fit_linear_probe(train, test, policy, 30, 1e-2, 3);
    CHECK(acc >= 0.95);
}
