#include "robsal/adversary.hpp"

#include <cmath>

#include "robsal/errors.hpp"
#include "robsal/nn.hpp"

namespace robsal {

void PerturbationBudget::validate() const {
    if (epsilon < 0.0) throw ArgumentError("epsilon must be nonnegative");
    if (steps < 1) throw ArgumentError("steps must be at least 1");
    if (epsilon > 0.0 && effective_step() <= 0.0)
        throw ArgumentError("step_size must be positive when epsilon > 0");
}

double scale_epsilon(double eps_ref, int pixels_ref, int pixels_target, bool sqrt_scaling) {
    if (eps_ref <= 0.0 || pixels_ref <= 0 || pixels_target <= 0)
        throw ArgumentError("scale_epsilon arguments must be positive");
    const double ratio = static_cast<double>(pixels_target) / pixels_ref;
    return eps_ref * (sqrt_scaling ? std::sqrt(ratio) : ratio);
}

Tensor project(const Tensor& delta, const PerturbationBudget& budget) {
    Tensor out = delta;
    if (budget.norm == Norm::L2) {
        const double n = out.l2_norm();
        if (n > budget.epsilon && n > 0.0) out *= budget.epsilon / n;
    } else {
        for (std::size_t i = 0; i < out.size(); ++i) {
            if (out[i] > budget.epsilon) out[i] = budget.epsilon;
            if (out[i] < -budget.epsilon) out[i] = -budget.epsilon;
        }
    }
    return out;
}

Tensor random_start_delta(const std::vector<int>& shape, const PerturbationBudget& budget,
                          Rng& rng) {
    Tensor delta(shape);
    if (budget.epsilon == 0.0) return delta;
    if (budget.norm == Norm::L2) {
        for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = rng.normal();
        const double n = delta.l2_norm();
        if (n > 0.0) {
            const double d = static_cast<double>(delta.size());
            const double radius = budget.epsilon * std::pow(rng.uniform(), 1.0 / d);
            delta *= radius / n;
        }
    } else {
        for (std::size_t i = 0; i < delta.size(); ++i)
            delta[i] = rng.uniform(-budget.epsilon, budget.epsilon);
    }
    return delta;
}

CrossEntropyObjective::CrossEntropyObjective(const DifferentiableModel& model,
                                             std::vector<int> labels)
    : model_(model), labels_(std::move(labels)) {
    for (int y : labels_)
        if (y < 0 || y >= model_.num_classes()) throw ArgumentError("label out of range");
}

std::pair<std::vector<double>, Tensor> CrossEntropyObjective::value_and_grad(
    const Tensor& batch) const {
    std::vector<double> losses(labels_.size(), 0.0);
    auto seed_fn = [&](const Tensor& lg) {
        const int n = lg.dim(0), k = lg.dim(1);
        Tensor seed({n, k});
        for (int i = 0; i < n; ++i) {
            const double* row = lg.data() + static_cast<std::size_t>(i) * k;
            const int y = labels_[static_cast<std::size_t>(i)];
            losses[static_cast<std::size_t>(i)] = nn::cross_entropy(row, k, y);
            auto p = nn::softmax(row, k);
            for (int c = 0; c < k; ++c)
                seed.at(i, c) = p[static_cast<std::size_t>(c)] - (c == y ? 1.0 : 0.0);
        }
        return seed;
    };
    auto [lg, grad] = model_.logits_and_input_grad(batch, seed_fn);
    (void)lg;
    return {std::move(losses), std::move(grad)};
}

Tensor pgd_attack(const BatchObjective& objective, const Tensor& batch,
                  const PerturbationBudget& budget, std::uint64_t rng_seed, AttackStats* stats) {
    budget.validate();
    if (batch.rank() != 4) throw ShapeError("pgd_attack expects an N x C x H x W batch");
    const int n = batch.dim(0);
    const std::size_t plane = batch.size() / static_cast<std::size_t>(n);
    const std::vector<int> img_shape{batch.dim(1), batch.dim(2), batch.dim(3)};

    if (stats) {
        auto [l0, g0] = objective.value_and_grad(batch);
        (void)g0;
        stats->loss_before = std::move(l0);
    }

    // Degenerate budget: the ball is a point.
    if (budget.epsilon == 0.0) {
        if (stats) {
            stats->pre_clip_norms.assign(static_cast<std::size_t>(n), 0.0);
            stats->loss_after = stats->loss_before;
        }
        return batch;
    }

    Tensor delta = Tensor::zeros_like(batch);
    if (budget.random_start) {
        for (int i = 0; i < n; ++i) {
            Rng rng(Rng::derive(rng_seed, static_cast<std::uint64_t>(i)));
            Tensor d = random_start_delta(img_shape, budget, rng);
            set_batch_row(delta, i, d);
        }
    }

    auto clip_adv = [&](const Tensor& dl) {
        Tensor adv = batch;
        for (std::size_t j = 0; j < adv.size(); ++j) {
            double v = adv[j] + dl[j];
            adv[j] = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
        }
        return adv;
    };

    const double step = budget.effective_step();
    Tensor adv = clip_adv(delta);
    std::vector<double> final_norms(static_cast<std::size_t>(n), 0.0);

    for (int it = 0; it < budget.steps; ++it) {
        auto [losses, grad] = objective.value_and_grad(adv);
        for (double l : losses)
            if (!std::isfinite(l)) throw NumericError("non-finite attack loss");

        for (int i = 0; i < n; ++i) {
            const double* gp = grad.data() + static_cast<std::size_t>(i) * plane;
            const double* xp = batch.data() + static_cast<std::size_t>(i) * plane;
            const double* ap = adv.data() + static_cast<std::size_t>(i) * plane;
            Tensor d(img_shape);
            if (budget.norm == Norm::L2) {
                double gn = 0.0;
                for (std::size_t j = 0; j < plane; ++j) gn += gp[j] * gp[j];
                gn = std::sqrt(gn);
                const double scale = gn > 0.0 ? step / gn : 0.0;
                for (std::size_t j = 0; j < plane; ++j) d[j] = (ap[j] - xp[j]) + scale * gp[j];
            } else {
                for (std::size_t j = 0; j < plane; ++j) {
                    const double s = gp[j] > 0.0 ? 1.0 : (gp[j] < 0.0 ? -1.0 : 0.0);
                    d[j] = (ap[j] - xp[j]) + step * s;
                }
            }
            d = project(d, budget);
            final_norms[static_cast<std::size_t>(i)] = d.l2_norm();
            set_batch_row(delta, i, d);
        }
        adv = clip_adv(delta);
    }

    if (stats) {
        if (budget.norm == Norm::LINF) {
            // Report the max-norm for LINF budgets.
            for (int i = 0; i < n; ++i) {
                const double* dp = delta.data() + static_cast<std::size_t>(i) * plane;
                double m = 0.0;
                for (std::size_t j = 0; j < plane; ++j) m = std::max(m, std::abs(dp[j]));
                final_norms[static_cast<std::size_t>(i)] = m;
            }
        }
        stats->pre_clip_norms = final_norms;
        auto [l1, g1] = objective.value_and_grad(adv);
        (void)g1;
        stats->loss_after = std::move(l1);
    }
    return adv;
}

ImageBatch pgd_attack(const DifferentiableModel& model, const ImageBatch& batch,
                      const PerturbationBudget& budget, std::uint64_t rng_seed,
                      AttackStats* stats) {
    CrossEntropyObjective obj(model, batch.labels);
    Tensor adv = pgd_attack(obj, batch.images, budget, rng_seed, stats);
    return ImageBatch{std::move(adv), batch.labels};
}

}  // namespace robsal
