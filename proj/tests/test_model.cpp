#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "fd_check.hpp"
#include "ref_forward.hpp"
#include "robsal/errors.hpp"
#include "robsal/model.hpp"

using namespace robsal;

namespace {

Tensor random_batch(int n, const ArchConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    Tensor batch({n, cfg.in_channels, cfg.input_size, cfg.input_size});
    for (std::size_t i = 0; i < batch.size(); ++i) batch[i] = rng.uniform();
    return batch;
}

ClassifierModel desk_model(std::uint64_t seed = 21) {
    const ArchConfig cfg = ArchConfig::desk_scale(3);
    return ClassifierModel::create(cfg, Normalization::centered(3), seed);
}

}  // namespace

TEST_CASE("zero head gives zero logits") {
    ClassifierModel m = desk_model();
    m.for_each_param([&](int, int group, const std::string&, Tensor& t) {
        if (group == 5) t.fill(0.0);
    });
    Tensor lg = m.logits(random_batch(3, m.config(), 1));
    for (std::size_t i = 0; i < lg.size(); ++i) CHECK(lg[i] == 0.0);
}

TEST_CASE("forward matches the independent re-implementation and golden values") {
    ClassifierModel m = desk_model(2024);
    Tensor batch = random_batch(2, m.config(), 77);
    Tensor lg = m.logits(batch);
    REQUIRE(lg.shape() == std::vector<int>{2, 3});
    CHECK(lg.all_finite());

    const auto ref = testutil::RefParams::from(m);
    for (int i = 0; i < 2; ++i) {
        Tensor row = testutil::ref_logits(ref, batch_row(batch, i));
        for (int c = 0; c < 3; ++c) CHECK(lg.at(i, c) == doctest::Approx(row.at(c)).epsilon(1e-12));
    }

    // Frozen golden values, recomputed by the reference implementation above
    // (seeds: model 2024, batch 77).
    const double golden[2][3] = {
        {4.682652603756531, -4.5359796828500727, -2.4880616368856536},
        {4.2174071039464502, -5.516765090133684, -4.015578988846273},
    };
    for (int i = 0; i < 2; ++i)
        for (int c = 0; c < 3; ++c) CHECK(lg.at(i, c) == doctest::Approx(golden[i][c]).epsilon(1e-9));
}

TEST_CASE("duplicated images produce identical logit rows") {
    ClassifierModel m = desk_model();
    Tensor batch = random_batch(3, m.config(), 5);
    // Copy row 0 into row 1.
    set_batch_row(batch, 1, batch_row(batch, 0));
    Tensor lg = m.logits(batch);
    for (int c = 0; c < 3; ++c) CHECK(lg.at(0, c) == lg.at(1, c));
}

TEST_CASE("forward determinism") {
    ClassifierModel m = desk_model();
    Tensor batch = random_batch(4, m.config(), 9);
    CHECK(bitwise_equal(m.logits(batch), m.logits(batch)));
}

TEST_CASE("input gradient matches finite differences") {
    ClassifierModel m = desk_model(31);
    Tensor batch = random_batch(2, m.config(), 13);
    std::vector<int> targets{1, 2};
    Tensor grad = m.input_gradient(batch, targets);
    REQUIRE(grad.same_shape(batch));

    Rng rng(99);
    for (int n = 0; n < 2; ++n) {
        Tensor image = batch_row(batch, n);
        const int target = targets[static_cast<std::size_t>(n)];
        auto f = [&](const Tensor& x) {
            Tensor b = x.reshaped({1, x.dim(0), x.dim(1), x.dim(2)});
            return m.logits(b).at(0, target);
        };
        int checked = 0, attempts = 0;
        while (checked < 10 && attempts < 200) {
            ++attempts;
            const std::size_t coord = rng.below(image.size());
            double fd = 0.0;
            if (!testutil::fd_stable(f, image, coord, 1e-3, &fd)) continue;  // kink in window
            const std::size_t flat = static_cast<std::size_t>(n) * image.size() + coord;
            CHECK(testutil::rel_err(grad[flat], fd) < 1e-3);
            ++checked;
        }
        CHECK(checked == 10);
    }
}

TEST_CASE("input gradient respects the normalization chain rule") {
    const ArchConfig cfg = ArchConfig::desk_scale(3);
    Normalization scaled{{0.4, 0.5, 0.6}, {0.2, 0.25, 0.5}};
    Normalization plain{{0.0, 0.0, 0.0}, {1.0, 1.0, 1.0}};
    ClassifierModel m_scaled = ClassifierModel::create(cfg, scaled, 55);
    ClassifierModel m_plain = ClassifierModel::create(cfg, plain, 55);  // same parameters

    Tensor x = random_batch(1, cfg, 3);
    Tensor x_norm = x;
    const int area = cfg.input_size * cfg.input_size;
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < area; ++i) {
            double& v = x_norm[static_cast<std::size_t>(c) * area + i];
            v = (v - scaled.mean[static_cast<std::size_t>(c)]) / scaled.std[static_cast<std::size_t>(c)];
        }

    Tensor g_raw = m_scaled.input_gradient(x, {0});
    Tensor g_norm = m_plain.input_gradient(x_norm, {0});
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < area; ++i) {
            const std::size_t idx = static_cast<std::size_t>(c) * area + i;
            CHECK(g_raw[idx] ==
                  doctest::Approx(g_norm[idx] / scaled.std[static_cast<std::size_t>(c)]).epsilon(1e-12));
        }
}

TEST_CASE("target class out of range raises") {
    ClassifierModel m = desk_model();
    Tensor batch = random_batch(1, m.config(), 2);
    CHECK_THROWS_AS(m.input_gradient(batch, {3}), ArgumentError);
    CHECK_THROWS_AS(m.input_gradient(batch, {-1}), ArgumentError);
}

TEST_CASE("shape mismatch raises") {
    ClassifierModel m = desk_model();
    Tensor bad({1, 3, 16, 16});
    CHECK_THROWS_AS(m.logits(bad), ShapeError);
}

TEST_CASE("replace_head changes only group 5, deterministically") {
    ClassifierModel m = desk_model(7);
    ClassifierModel m1000 = ClassifierModel::create(ArchConfig::desk_scale(10),
                                                    Normalization::centered(3), 7);
    std::array<std::uint64_t, 4> before{};
    for (int g = 1; g <= 4; ++g) before[static_cast<std::size_t>(g - 1)] = m1000.group_checksum(g);

    m1000.replace_head(3, 99);
    CHECK(m1000.num_classes() == 3);
    Tensor lg = m1000.logits(random_batch(1, m1000.config(), 4));
    CHECK(lg.dim(1) == 3);
    for (int g = 1; g <= 4; ++g)
        CHECK(m1000.group_checksum(g) == before[static_cast<std::size_t>(g - 1)]);

    // Same seed twice -> identical head weights.
    std::vector<Tensor> first;
    m1000.for_each_param([&](int, int g, const std::string&, const Tensor& t) {
        if (g == 5) first.push_back(t);
    });
    m1000.replace_head(3, 99);
    std::size_t i = 0;
    m1000.for_each_param([&](int, int g, const std::string&, const Tensor& t) {
        if (g == 5) CHECK(bitwise_equal(t, first[i++]));
    });
}

TEST_CASE("head uses fan-in-scaled initialization") {
    ClassifierModel m = desk_model(123);
    double sumsq = 0.0;
    std::size_t count = 0;
    m.for_each_param([&](int, int g, const std::string& key, const Tensor& t) {
        if (g == 5 && key.find("weight") != std::string::npos) {
            for (std::size_t i = 0; i < t.size(); ++i) sumsq += t[i] * t[i];
            count += t.size();
        }
    });
    const int fan_in = m.config().block_channels[3];
    const double expected_var = 2.0 / fan_in;
    // Loose statistical bound on the empirical variance.
    CHECK(sumsq / static_cast<double>(count) == doctest::Approx(expected_var).epsilon(0.9));
}

TEST_CASE("capture geometry: 224 input yields 7x7 final volume") {
    const ArchConfig cfg = ArchConfig::full_scale(3);
    CHECK(cfg.total_downsample() == 32);
    ClassifierModel m = ClassifierModel::create(cfg, Normalization::imagenet(), 3);
    const auto shape = m.group_output_shape("group4");
    CHECK(shape[1] == 7);
    CHECK(shape[2] == 7);

    Tensor batch = random_batch(1, cfg, 8);
    auto [acts, grads] = m.capture(batch, "group4", {0});
    CHECK(acts.shape() == std::vector<int>{1, cfg.block_channels[3], 7, 7});
    CHECK(grads.shape() == acts.shape());
}

TEST_CASE("capture: constant head yields zero activation gradients") {
    ClassifierModel m = desk_model();
    m.for_each_param([&](int, int group, const std::string&, Tensor& t) {
        if (group == 5) t.fill(0.0);
    });
    Tensor batch = random_batch(2, m.config(), 6);
    auto [acts, grads] = m.capture(batch, "group3", {1});
    for (std::size_t i = 0; i < grads.size(); ++i) CHECK(grads[i] == 0.0);
    CHECK(acts.max() > 0.0);
}

TEST_CASE("capture gradients match finite differences through the tail") {
    ClassifierModel m = desk_model(17);
    Tensor batch = random_batch(1, m.config(), 23);
    const int target = 2;
    auto [acts, grads] = m.capture(batch, "group2", {target});

    const auto ref = testutil::RefParams::from(m);
    Tensor a0 = batch_row(acts, 0);
    Rng rng(4);
    int checked = 0, attempts = 0;
    auto f = [&](const Tensor& a) { return testutil::ref_tail_logits(ref, 2, a).at(target); };
    while (checked < 5 && attempts < 100) {
        ++attempts;
        const std::size_t coord = rng.below(a0.size());
        double fd = 0.0;
        if (!testutil::fd_stable(f, a0, coord, 1e-4, &fd)) continue;
        CHECK(testutil::rel_err(grads[coord], fd) < 1e-3);
        ++checked;
    }
    CHECK(checked == 5);
}

TEST_CASE("capture rejects bad group names") {
    ClassifierModel m = desk_model();
    Tensor batch = random_batch(1, m.config(), 2);
    CHECK_THROWS_AS(m.capture(batch, "group5", {0}), ArgumentError);
    CHECK_THROWS_AS(m.capture(batch, "stem", {0}), ArgumentError);
}

TEST_CASE("checkpoint round trip is bitwise") {
    namespace fs = std::filesystem;
    ClassifierModel m = desk_model(404);
    const std::string path = (fs::temp_directory_path() / "robsal_ckpt_test.bin").string();
    save_checkpoint(m, path);
    ClassifierModel loaded = load_checkpoint(path);

    CHECK(loaded.num_classes() == m.num_classes());
    CHECK(loaded.creation_seed() == m.creation_seed());
    CHECK(loaded.config().input_size == m.config().input_size);
    for (int g = 1; g <= 5; ++g) CHECK(loaded.group_checksum(g) == m.group_checksum(g));

    Tensor batch = random_batch(2, m.config(), 31);
    CHECK(bitwise_equal(m.logits(batch), loaded.logits(batch)));
    fs::remove(path);
}

TEST_CASE("group mask helpers") {
    CHECK(GroupMask::all(true).is_suffix());
    CHECK(GroupMask::all(false).is_suffix());
    CHECK(GroupMask::unfreeze_suffix(3).is_suffix());
    GroupMask gap = GroupMask::all(false);
    gap.trainable[1] = true;  // {F,T,F,F,F} is not a suffix
    CHECK_FALSE(gap.is_suffix());
    CHECK(GroupMask::unfreeze_suffix(3).count_trainable() == 3);
}
