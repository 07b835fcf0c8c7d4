#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "robsal/nn.hpp"
#include "robsal/rng.hpp"
#include "robsal/tensor.hpp"

namespace robsal {

// A batch of raw images in [0, 1], N x C x H x W, with integer labels.
struct ImageBatch {
    Tensor images;
    std::vector<int> labels;

    int size() const { return images.empty() ? 0 : images.dim(0); }
};

Tensor batch_row(const Tensor& batch, int n);             // copy image n (C x H x W)
void set_batch_row(Tensor& batch, int n, const Tensor&);  // write image n

// Common interface for anything attacks and attribution methods can
// differentiate through. `seed_fn` maps the N x K logit matrix to an N x K
// seed; the returned gradient is d(sum_nk seed_nk * logit_nk)/d(input pixels),
// taken with respect to the raw [0,1] pixels.
class DifferentiableModel {
public:
    using SeedFn = std::function<Tensor(const Tensor& logits)>;

    virtual ~DifferentiableModel() = default;
    virtual int num_classes() const = 0;
    virtual std::vector<int> input_shape() const = 0;  // {C, H, W}
    virtual Tensor logits(const Tensor& batch) const = 0;
    virtual std::pair<Tensor, Tensor> logits_and_input_grad(const Tensor& batch,
                                                            const SeedFn& seed_fn) const = 0;

    // dlogit[target]/dinput for every image; seed is one-hot at the target.
    Tensor input_gradient(const Tensor& batch, const std::vector<int>& targets) const;
};

// Per-channel normalization applied inside the model as a fixed first stage,
// so every public operation works in raw [0,1] pixel space.
struct Normalization {
    std::vector<double> mean;
    std::vector<double> std;

    static Normalization imagenet();
    static Normalization centered(int channels);  // mean .5, std .25
};

struct ArchConfig {
    int input_size = 32;
    int in_channels = 3;
    int num_classes = 3;
    int stem_channels = 8;
    int stem_stride = 2;
    bool stem_pool = false;  // 2x2 max pool after the stem ReLU
    std::array<int, 4> block_channels{8, 16, 24, 32};
    std::array<int, 4> block_strides{1, 2, 2, 2};

    // Geometry analog of the full-size network: stem stride 2 + pool + block
    // strides {1,2,2,2} give 32x total downsampling, so a 224 input ends in a
    // 7x7 volume at the last block.
    static ArchConfig full_scale(int num_classes);
    static ArchConfig desk_scale(int num_classes);

    int total_downsample() const;
};

struct GroupMask {
    std::array<bool, 5> trainable{true, true, true, true, true};

    static GroupMask all(bool v);
    static GroupMask unfreeze_suffix(int first_unfrozen_group);  // 1-based
    bool is_suffix() const;  // unfrozen groups form a suffix of the order
    int count_trainable() const;
};

// Saved activations of one image's forward pass; owned by the caller so the
// model stays const (and concurrently usable) during backward passes.
struct ImageTrace {
    Tensor norm_in;
    Tensor stem_pre;
    Tensor stem_act;
    std::vector<int> pool_argmax;
    Tensor stem_out;
    struct BlockTrace {
        Tensor in;
        Tensor pre1;
        Tensor act1;
        Tensor pre2;
        Tensor sum_pre;
        Tensor out;
    };
    std::array<BlockTrace, 4> blocks;
    Tensor pooled;
    Tensor logit_row;
};

// Flat list of parameter gradients in the model's canonical parameter order.
using ParamGrads = std::vector<Tensor>;

// Miniature residual classifier with the 5-way layer grouping used for
// selective freezing: group 1 = stem + first residual block, groups 2-4 =
// remaining residual blocks, group 5 = fully connected head.
class ClassifierModel : public DifferentiableModel {
public:
    struct Block {
        nn::Conv2d conv1;
        nn::Conv2d conv2;
        std::optional<nn::Conv2d> proj;  // 1x1 when shape changes across the block
    };

    ClassifierModel() = default;
    static ClassifierModel create(const ArchConfig& cfg, const Normalization& norm,
                                  std::uint64_t seed);

    const ArchConfig& config() const { return cfg_; }
    const Normalization& normalization() const { return norm_; }
    std::uint64_t creation_seed() const { return creation_seed_; }

    int num_classes() const override { return head_.out_features(); }
    std::vector<int> input_shape() const override {
        return {cfg_.in_channels, cfg_.input_size, cfg_.input_size};
    }

    // --- forward / gradients (read-only, safe to run concurrently) ---
    Tensor logits(const Tensor& batch) const override;
    std::pair<Tensor, Tensor> logits_and_input_grad(const Tensor& batch,
                                                    const SeedFn& seed_fn) const override;

    Tensor forward_one(const Tensor& image, ImageTrace* trace) const;
    // Backward from d(logits) of one image. Parameter gradients are
    // accumulated into `grads` when non-null; returns the raw-pixel gradient
    // when `want_input_grad`.
    Tensor backward_one(const ImageTrace& trace, const Tensor& dlogits, ParamGrads* grads,
                        bool want_input_grad) const;

    // Activations and d(logit target)/d(activation) at a named group output
    // ("group1".."group4"); both tensors are N x K x h x w.
    std::pair<Tensor, Tensor> capture(const Tensor& batch, const std::string& group_name,
                                      const std::vector<int>& targets) const;

    // Spatial size of a group's output volume, {channels, h, w}.
    std::vector<int> group_output_shape(const std::string& group_name) const;

    // --- training-facing surface (single writer) ---
    // Forward + cross-entropy backward over a batch; accumulates parameter
    // gradients, returns (mean loss, #correct). Deterministic: per-image
    // gradient slabs are reduced in image order regardless of thread count.
    std::pair<double, int> loss_grad_batch(const ImageBatch& batch, ParamGrads& grads) const;

    void set_trainable(const GroupMask& mask) { mask_ = mask; }
    const GroupMask& trainable_mask() const { return mask_; }

    // Replaces the head with a freshly initialized `num_classes`-way layer;
    // groups 1-4 are untouched.
    void replace_head(int num_classes, std::uint64_t seed);

    // --- parameter access ---
    // Visits parameters in canonical order: (flat index, group 1..5,
    // "group{g}/{layer}/{tensor}" key, tensor).
    void for_each_param(
        const std::function<void(int, int, const std::string&, Tensor&)>& fn);
    void for_each_param(
        const std::function<void(int, int, const std::string&, const Tensor&)>& fn) const;
    int param_count() const;
    ParamGrads make_param_grads() const;

    // Checksum over the parameters of one group (bitwise content hash).
    std::uint64_t group_checksum(int group) const;

private:
    ArchConfig cfg_;
    Normalization norm_;
    nn::Conv2d stem_;
    std::array<Block, 4> blocks_;
    nn::Linear head_;
    GroupMask mask_;
    std::uint64_t creation_seed_ = 0;

    void check_batch(const Tensor& batch) const;
    Tensor normalize(const Tensor& image) const;
    static int group_index(const std::string& group_name);  // 1..4 for conv groups

    friend struct CheckpointIO;
};

// Flattened linear classifier (logits = W x + b). Used as a baseline probe
// for the synthetic-data acceptance checks and as the exactness target in
// attribution tests.
class LinearModel : public DifferentiableModel {
public:
    LinearModel() = default;
    LinearModel(std::vector<int> input_shape, int num_classes);

    int num_classes() const override { return fc_.out_features(); }
    std::vector<int> input_shape() const override { return in_shape_; }
    Tensor logits(const Tensor& batch) const override;
    std::pair<Tensor, Tensor> logits_and_input_grad(const Tensor& batch,
                                                    const SeedFn& seed_fn) const override;

    nn::Linear& fc() { return fc_; }
    const nn::Linear& fc() const { return fc_; }

private:
    std::vector<int> in_shape_;
    nn::Linear fc_;
};

// Checkpoint file: magic + JSON header (architecture, num_classes,
// normalization constants, creation seed, tensor index) + raw little-endian
// float64 blobs keyed by "group{1..5}/{layer}/{tensor}".
void save_checkpoint(const ClassifierModel& model, const std::string& path);
ClassifierModel load_checkpoint(const std::string& path);

}  // namespace robsal
