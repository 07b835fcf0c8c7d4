#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "robsal/adversary.hpp"
#include "robsal/errors.hpp"
#include "robsal/model.hpp"

using namespace robsal;

namespace {

Tensor random_batch(int n, int size, std::uint64_t seed) {
    Rng rng(seed);
    Tensor batch({n, 3, size, size});
    for (std::size_t i = 0; i < batch.size(); ++i) batch[i] = rng.uniform();
    return batch;
}

ClassifierModel desk_model(std::uint64_t seed = 77) {
    return ClassifierModel::create(ArchConfig::desk_scale(3), Normalization::centered(3), seed);
}

// Concave quadratic around a known interior maximizer; used to check the
// optimization quality of the PGD loop against the closed form.
class QuadraticObjective : public BatchObjective {
public:
    explicit QuadraticObjective(Tensor target) : target_(std::move(target)) {}

    std::pair<std::vector<double>, Tensor> value_and_grad(const Tensor& batch) const override {
        const int n = batch.dim(0);
        const std::size_t plane = batch.size() / static_cast<std::size_t>(n);
        std::vector<double> vals(static_cast<std::size_t>(n), 0.0);
        Tensor grad = Tensor::zeros_like(batch);
        for (int i = 0; i < n; ++i) {
            const double* x = batch.data() + static_cast<std::size_t>(i) * plane;
            double* g = grad.data() + static_cast<std::size_t>(i) * plane;
            double v = 0.0;
            for (std::size_t j = 0; j < plane; ++j) {
                const double d = x[j] - target_[j];
                v -= d * d;
                g[j] = -2.0 * d;
            }
            vals[static_cast<std::size_t>(i)] = v;
        }
        return {std::move(vals), std::move(grad)};
    }

private:
    Tensor target_;
};

}  // namespace

TEST_CASE("epsilon scaling rule") {
    CHECK(scale_epsilon(4.0, 50000, 50000) == doctest::Approx(4.0));
    CHECK(scale_epsilon(4.0, 50000, 100000) == doctest::Approx(8.0));
    CHECK(scale_epsilon(4.0, 50000, 1024) == doctest::Approx(0.08192));
    CHECK(scale_epsilon(4.0, 50000, 12500, true) == doctest::Approx(2.0));
    CHECK_THROWS_AS(scale_epsilon(0.0, 50000, 100), ArgumentError);
    CHECK_THROWS_AS(scale_epsilon(4.0, -1, 100), ArgumentError);
}

TEST_CASE("budget defaults follow the training recipe") {
    PerturbationBudget b(4.0);
    CHECK(b.norm == Norm::L2);
    CHECK(b.steps == 7);
    CHECK(b.effective_step() == doctest::Approx(0.8));
    CHECK(b.random_start);
    b.validate();

    PerturbationBudget bad(1.0);
    bad.steps = 0;
    CHECK_THROWS_AS(bad.validate(), ArgumentError);
}

TEST_CASE("projection onto the budget ball") {
    PerturbationBudget l2(4.0);
    Tensor delta({3, 4, 4});
    delta.fill(10.0 / std::sqrt(48.0));  // l2 norm exactly 10
    Tensor projected = project(delta, l2);
    CHECK(projected.l2_norm() == doctest::Approx(4.0));
    CHECK(projected[0] == doctest::Approx(delta[0] * 0.4));

    // Inside the ball: untouched.
    Tensor small({3, 4, 4}, 0.01);
    CHECK(bitwise_equal(project(small, l2), small));

    PerturbationBudget linf(0.1);
    linf.norm = Norm::LINF;
    Tensor d2({2, 2, 2}, 0.3);
    d2[0] = -0.5;
    Tensor p2 = project(d2, linf);
    CHECK(p2[0] == doctest::Approx(-0.1));
    CHECK(p2[1] == doctest::Approx(0.1));
}

TEST_CASE("random start stays inside the ball") {
    PerturbationBudget l2(0.5);
    Rng rng(3);
    for (int i = 0; i < 20; ++i) {
        Tensor d = random_start_delta({3, 8, 8}, l2, rng);
        CHECK(d.l2_norm() <= 0.5 + 1e-12);
    }
    PerturbationBudget linf(0.2);
    linf.norm = Norm::LINF;
    Tensor d = random_start_delta({3, 8, 8}, linf, rng);
    CHECK(d.max() <= 0.2);
    CHECK(d.min() >= -0.2);
}

TEST_CASE("epsilon zero returns the batch unchanged") {
    ClassifierModel m = desk_model();
    Tensor batch = random_batch(3, 32, 5);
    ImageBatch in{batch, {0, 1, 2}};
    ImageBatch out = pgd_attack(m, in, PerturbationBudget(0.0), 42);
    CHECK(bitwise_equal(out.images, batch));
}

TEST_CASE("pgd endpoint matches the closed-form quadratic maximizer") {
    // Interior maximizer at distance 0.05 from the start; small fixed steps
    // so the endpoint oscillation stays well under the tolerance.
    Rng rng(9);
    Tensor base({1, 3, 8, 8}, 0.5);
    Tensor dir({3, 8, 8});
    for (std::size_t i = 0; i < dir.size(); ++i) dir[i] = rng.normal();
    dir *= 0.05 / dir.l2_norm();
    Tensor target = batch_row(base, 0) + dir;

    QuadraticObjective obj(target);
    PerturbationBudget budget(0.2);
    budget.steps = 50;
    budget.step_size = 2e-3;
    budget.random_start = false;

    Tensor adv = pgd_attack(obj, base, budget, 1);
    double dist = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) {
        const double d = adv[i] - target[i];
        dist += d * d;
    }
    CHECK(std::sqrt(dist) < 1e-2);
}

TEST_CASE("feasibility: box and ball constraints hold") {
    ClassifierModel m = desk_model();
    Tensor batch = random_batch(8, 32, 11);
    ImageBatch in{batch, {0, 1, 2, 0, 1, 2, 0, 1}};

    for (const double eps : {0.05, 0.2, 1.0}) {
        for (const Norm norm : {Norm::L2, Norm::LINF}) {
            PerturbationBudget budget(eps);
            budget.norm = norm;
            AttackStats stats;
            ImageBatch out = pgd_attack(m, in, budget, 7, &stats);
            CHECK(out.images.min() >= 0.0);
            CHECK(out.images.max() <= 1.0);
            for (double n : stats.pre_clip_norms) CHECK(n <= eps + 1e-6);
            // Post-clip perturbation can only shrink.
            const std::size_t plane = out.images.size() / 8;
            for (int i = 0; i < 8; ++i) {
                double nsq = 0.0;
                double linf = 0.0;
                for (std::size_t j = 0; j < plane; ++j) {
                    const double d = out.images[static_cast<std::size_t>(i) * plane + j] -
                                     batch[static_cast<std::size_t>(i) * plane + j];
                    nsq += d * d;
                    linf = std::max(linf, std::abs(d));
                }
                if (norm == Norm::L2)
                    CHECK(std::sqrt(nsq) <= eps + 1e-6);
                else
                    CHECK(linf <= eps + 1e-6);
            }
        }
    }
}

TEST_CASE("seeded attacks are bitwise reproducible") {
    ClassifierModel m = desk_model();
    Tensor batch = random_batch(4, 32, 19);
    ImageBatch in{batch, {0, 1, 2, 0}};
    PerturbationBudget budget(0.3);

    ImageBatch a = pgd_attack(m, in, budget, 1234);
    ImageBatch b = pgd_attack(m, in, budget, 1234);
    CHECK(bitwise_equal(a.images, b.images));

    ImageBatch c = pgd_attack(m, in, budget, 999);
    CHECK_FALSE(bitwise_equal(a.images, c.images));
}

TEST_CASE("attack typically increases the loss") {
    ClassifierModel m = desk_model(31);
    Tensor batch = random_batch(6, 32, 23);
    ImageBatch in{batch, {0, 1, 2, 0, 1, 2}};
    PerturbationBudget budget(0.5);
    AttackStats stats;
    pgd_attack(m, in, budget, 5, &stats);
    double before = 0.0, after = 0.0;
    for (double v : stats.loss_before) before += v;
    for (double v : stats.loss_after) after += v;
    CHECK(after > before);
}

TEST_CASE("non-finite objective raises a numeric error") {
    class NanObjective : public BatchObjective {
    public:
        std::pair<std::vector<double>, Tensor> value_and_grad(const Tensor& batch) const override {
            std::vector<double> v(static_cast<std::size_t>(batch.dim(0)),
                                  std::numeric_limits<double>::quiet_NaN());
            return {std::move(v), Tensor::zeros_like(batch)};
        }
    };
    NanObjective obj;
    Tensor batch = random_batch(1, 8, 2);
    CHECK_THROWS_AS(pgd_attack(obj, batch, PerturbationBudget(0.1), 3), NumericError);
}

TEST_CASE("objective rejects bad labels") {
    ClassifierModel m = desk_model();
    CHECK_THROWS_AS(CrossEntropyObjective(m, {5}), ArgumentError);
}
