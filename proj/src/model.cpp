#include "robsal/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "robsal/errors.hpp"

namespace robsal {

Tensor batch_row(const Tensor& batch, int n) {
    const int c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
    Tensor out({c, h, w});
    const std::size_t plane = static_cast<std::size_t>(c) * h * w;
    std::memcpy(out.data(), batch.data() + static_cast<std::size_t>(n) * plane,
                plane * sizeof(double));
    return out;
}

void set_batch_row(Tensor& batch, int n, const Tensor& image) {
    const std::size_t plane = image.size();
    std::memcpy(batch.data() + static_cast<std::size_t>(n) * plane, image.data(),
                plane * sizeof(double));
}

Tensor DifferentiableModel::input_gradient(const Tensor& batch,
                                           const std::vector<int>& targets) const {
    const int k = num_classes();
    for (int t : targets)
        if (t < 0 || t >= k) throw ArgumentError("target class out of range");
    auto seed_fn = [&](const Tensor& lg) {
        Tensor seed({lg.dim(0), lg.dim(1)});
        for (int n = 0; n < lg.dim(0); ++n) seed.at(n, targets[static_cast<std::size_t>(n)]) = 1.0;
        return seed;
    };
    return logits_and_input_grad(batch, seed_fn).second;
}

Normalization Normalization::imagenet() {
    return Normalization{{0.485, 0.456, 0.406}, {0.229, 0.224, 0.225}};
}

Normalization Normalization::centered(int channels) {
    return Normalization{std::vector<double>(static_cast<std::size_t>(channels), 0.5),
                         std::vector<double>(static_cast<std::size_t>(channels), 0.25)};
}

ArchConfig ArchConfig::full_scale(int num_classes) {
    ArchConfig cfg;
    cfg.input_size = 224;
    cfg.num_classes = num_classes;
    cfg.stem_channels = 8;
    cfg.stem_stride = 2;
    cfg.stem_pool = true;
    cfg.block_channels = {8, 16, 24, 32};
    cfg.block_strides = {1, 2, 2, 2};
    return cfg;
}

ArchConfig ArchConfig::desk_scale(int num_classes) {
    ArchConfig cfg;
    cfg.input_size = 32;
    cfg.num_classes = num_classes;
    cfg.stem_stride = 2;
    cfg.stem_pool = false;
    return cfg;
}

int ArchConfig::total_downsample() const {
    int d = stem_stride * (stem_pool ? 2 : 1);
    for (int s : block_strides) d *= s;
    return d;
}

GroupMask GroupMask::all(bool v) {
    GroupMask m;
    m.trainable.fill(v);
    return m;
}

GroupMask GroupMask::unfreeze_suffix(int first_unfrozen_group) {
    GroupMask m = GroupMask::all(false);
    for (int g = first_unfrozen_group; g <= 5; ++g) m.trainable[static_cast<std::size_t>(g - 1)] = true;
    return m;
}

bool GroupMask::is_suffix() const {
    bool seen_true = false;
    for (bool t : trainable) {
        if (t) seen_true = true;
        else if (seen_true) return false;
    }
    return true;
}

int GroupMask::count_trainable() const {
    int n = 0;
    for (bool t : trainable) n += t ? 1 : 0;
    return n;
}

ClassifierModel ClassifierModel::create(const ArchConfig& cfg, const Normalization& norm,
                                        std::uint64_t seed) {
    if (static_cast<int>(norm.mean.size()) != cfg.in_channels ||
        static_cast<int>(norm.std.size()) != cfg.in_channels)
        throw ArgumentError("normalization constants must match channel count");
    for (double s : norm.std)
        if (s <= 0.0) throw ArgumentError("normalization std must be positive");

    ClassifierModel m;
    m.cfg_ = cfg;
    m.norm_ = norm;
    m.creation_seed_ = seed;

    m.stem_ = nn::Conv2d(cfg.in_channels, cfg.stem_channels, 3, cfg.stem_stride, 1);
    Rng stem_rng(Rng::derive(seed, 0));
    m.stem_.init_kaiming(stem_rng);

    int in_ch = cfg.stem_channels;
    for (int b = 0; b < 4; ++b) {
        const int out_ch = cfg.block_channels[static_cast<std::size_t>(b)];
        const int stride = cfg.block_strides[static_cast<std::size_t>(b)];
        Block& blk = m.blocks_[static_cast<std::size_t>(b)];
        blk.conv1 = nn::Conv2d(in_ch, out_ch, 3, stride, 1);
        blk.conv2 = nn::Conv2d(out_ch, out_ch, 3, 1, 1);
        Rng r1(Rng::derive(seed, 10 + static_cast<std::uint64_t>(b) * 3));
        Rng r2(Rng::derive(seed, 11 + static_cast<std::uint64_t>(b) * 3));
        blk.conv1.init_kaiming(r1);
        blk.conv2.init_kaiming(r2);
        if (in_ch != out_ch || stride != 1) {
            blk.proj = nn::Conv2d(in_ch, out_ch, 1, stride, 0);
            Rng rp(Rng::derive(seed, 12 + static_cast<std::uint64_t>(b) * 3));
            blk.proj->init_kaiming(rp);
        }
        in_ch = out_ch;
    }

    m.head_ = nn::Linear(in_ch, cfg.num_classes);
    Rng head_rng(Rng::derive(seed, 100));
    m.head_.init_kaiming(head_rng);
    return m;
}

void ClassifierModel::check_batch(const Tensor& batch) const {
    if (batch.rank() != 4 || batch.dim(1) != cfg_.in_channels ||
        batch.dim(2) != cfg_.input_size || batch.dim(3) != cfg_.input_size)
        throw ShapeError("input batch does not match model input shape");
}

Tensor ClassifierModel::normalize(const Tensor& image) const {
    Tensor out = image;
    const int area = image.dim(1) * image.dim(2);
    for (int c = 0; c < image.dim(0); ++c) {
        const double mu = norm_.mean[static_cast<std::size_t>(c)];
        const double inv = 1.0 / norm_.std[static_cast<std::size_t>(c)];
        double* plane = out.data() + static_cast<std::size_t>(c) * area;
        for (int i = 0; i < area; ++i) plane[i] = (plane[i] - mu) * inv;
    }
    return out;
}

Tensor ClassifierModel::forward_one(const Tensor& image, ImageTrace* trace) const {
    ImageTrace local;
    ImageTrace& t = trace ? *trace : local;

    t.norm_in = normalize(image);
    t.stem_pre = stem_.forward(t.norm_in);
    t.stem_act = nn::relu(t.stem_pre);
    if (cfg_.stem_pool) {
        t.stem_out = nn::maxpool2x2(t.stem_act, &t.pool_argmax);
    } else {
        t.stem_out = t.stem_act;
    }

    const Tensor* cur = &t.stem_out;
    for (int b = 0; b < 4; ++b) {
        const Block& blk = blocks_[static_cast<std::size_t>(b)];
        ImageTrace::BlockTrace& bt = t.blocks[static_cast<std::size_t>(b)];
        bt.in = *cur;
        bt.pre1 = blk.conv1.forward(bt.in);
        bt.act1 = nn::relu(bt.pre1);
        bt.pre2 = blk.conv2.forward(bt.act1);
        bt.sum_pre = bt.pre2;
        if (blk.proj)
            bt.sum_pre += blk.proj->forward(bt.in);
        else
            bt.sum_pre += bt.in;
        bt.out = nn::relu(bt.sum_pre);
        cur = &bt.out;
    }

    t.pooled = nn::global_avg_pool(*cur);
    t.logit_row = head_.forward(t.pooled);
    return t.logit_row;
}

namespace {
// Canonical parameter layout. Kept in lockstep with for_each_param.
struct ParamLayout {
    int stem_w = 0, stem_b = 1;
    std::array<int, 4> block_base{};
    std::array<bool, 4> has_proj{};
    int head_w = 0, head_b = 0, total = 0;
};

ParamLayout make_layout(const std::array<ClassifierModel::Block, 4>& blocks) {
    ParamLayout l;
    int idx = 2;
    for (int b = 0; b < 4; ++b) {
        l.block_base[static_cast<std::size_t>(b)] = idx;
        l.has_proj[static_cast<std::size_t>(b)] = blocks[static_cast<std::size_t>(b)].proj.has_value();
        idx += l.has_proj[static_cast<std::size_t>(b)] ? 6 : 4;
    }
    l.head_w = idx;
    l.head_b = idx + 1;
    l.total = idx + 2;
    return l;
}
}  // namespace

Tensor ClassifierModel::backward_one(const ImageTrace& t, const Tensor& dlogits, ParamGrads* grads,
                                     bool want_input_grad) const {
    const ParamLayout layout = make_layout(blocks_);

    Tensor* hw = grads ? &(*grads)[static_cast<std::size_t>(layout.head_w)] : nullptr;
    Tensor* hb = grads ? &(*grads)[static_cast<std::size_t>(layout.head_b)] : nullptr;
    Tensor d_pooled = head_.backward(t.pooled, dlogits, hw, hb);

    const std::vector<int> last_shape = t.blocks[3].out.shape();
    Tensor d = nn::global_avg_pool_backward(last_shape, d_pooled);

    for (int b = 3; b >= 0; --b) {
        const Block& blk = blocks_[static_cast<std::size_t>(b)];
        const ImageTrace::BlockTrace& bt = t.blocks[static_cast<std::size_t>(b)];
        const int base = layout.block_base[static_cast<std::size_t>(b)];
        Tensor* w1 = grads ? &(*grads)[static_cast<std::size_t>(base)] : nullptr;
        Tensor* b1 = grads ? &(*grads)[static_cast<std::size_t>(base + 1)] : nullptr;
        Tensor* w2 = grads ? &(*grads)[static_cast<std::size_t>(base + 2)] : nullptr;
        Tensor* b2 = grads ? &(*grads)[static_cast<std::size_t>(base + 3)] : nullptr;

        Tensor d_sum = nn::relu_backward(bt.sum_pre, d);
        Tensor d_act1 = blk.conv2.backward(bt.act1, d_sum, w2, b2);
        Tensor d_pre1 = nn::relu_backward(bt.pre1, d_act1);
        Tensor d_in = blk.conv1.backward(bt.in, d_pre1, w1, b1);
        if (blk.proj) {
            Tensor* wp = grads ? &(*grads)[static_cast<std::size_t>(base + 4)] : nullptr;
            Tensor* bp = grads ? &(*grads)[static_cast<std::size_t>(base + 5)] : nullptr;
            d_in += blk.proj->backward(bt.in, d_sum, wp, bp);
        } else {
            d_in += d_sum;
        }
        d = std::move(d_in);
    }

    if (cfg_.stem_pool) d = nn::maxpool2x2_backward(t.stem_act.shape(), t.pool_argmax, d);
    d = nn::relu_backward(t.stem_pre, d);

    Tensor* sw = grads ? &(*grads)[static_cast<std::size_t>(layout.stem_w)] : nullptr;
    Tensor* sb = grads ? &(*grads)[static_cast<std::size_t>(layout.stem_b)] : nullptr;
    if (!want_input_grad && !grads) return Tensor();
    Tensor d_norm = stem_.backward(t.norm_in, d, sw, sb);
    if (!want_input_grad) return Tensor();

    // Chain rule through the fixed normalization stage back to raw pixels.
    const int area = d_norm.dim(1) * d_norm.dim(2);
    for (int c = 0; c < d_norm.dim(0); ++c) {
        const double inv = 1.0 / norm_.std[static_cast<std::size_t>(c)];
        double* plane = d_norm.data() + static_cast<std::size_t>(c) * area;
        for (int i = 0; i < area; ++i) plane[i] *= inv;
    }
    return d_norm;
}

Tensor ClassifierModel::logits(const Tensor& batch) const {
    check_batch(batch);
    const int n = batch.dim(0);
    Tensor out({n, num_classes()});
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
        Tensor row = forward_one(batch_row(batch, i), nullptr);
        for (int k = 0; k < num_classes(); ++k) out.at(i, k) = row[static_cast<std::size_t>(k)];
    }
    return out;
}

std::pair<Tensor, Tensor> ClassifierModel::logits_and_input_grad(const Tensor& batch,
                                                                 const SeedFn& seed_fn) const {
    check_batch(batch);
    const int n = batch.dim(0);
    const int k = num_classes();
    std::vector<ImageTrace> traces(static_cast<std::size_t>(n));
    Tensor lg({n, k});
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
        Tensor row = forward_one(batch_row(batch, i), &traces[static_cast<std::size_t>(i)]);
        for (int c = 0; c < k; ++c) lg.at(i, c) = row[static_cast<std::size_t>(c)];
    }

    Tensor seed = seed_fn(lg);
    if (!seed.same_shape(lg)) throw ShapeError("seed shape must match logits");

    Tensor grad = Tensor::zeros_like(batch);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
        Tensor drow({k});
        for (int c = 0; c < k; ++c) drow[static_cast<std::size_t>(c)] = seed.at(i, c);
        Tensor g = backward_one(traces[static_cast<std::size_t>(i)], drow, nullptr, true);
        set_batch_row(grad, i, g);
    }
    return {std::move(lg), std::move(grad)};
}

std::pair<Tensor, Tensor> ClassifierModel::capture(const Tensor& batch,
                                                   const std::string& group_name,
                                                   const std::vector<int>& targets) const {
    check_batch(batch);
    const int g = group_index(group_name);
    const int n = batch.dim(0);
    for (int t : targets)
        if (t < 0 || t >= num_classes()) throw ArgumentError("target class out of range");

    const auto vol = group_output_shape(group_name);
    Tensor acts({n, vol[0], vol[1], vol[2]});
    Tensor grads({n, vol[0], vol[1], vol[2]});

#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
        ImageTrace t;
        forward_one(batch_row(batch, i), &t);

        Tensor drow({num_classes()});
        drow[static_cast<std::size_t>(targets[static_cast<std::size_t>(i)])] = 1.0;
        Tensor d_pooled = head_.backward(t.pooled, drow, nullptr, nullptr);
        Tensor d = nn::global_avg_pool_backward(t.blocks[3].out.shape(), d_pooled);
        // Walk backward through blocks 4..g+1; d then holds the gradient at
        // the output of group g (= residual block g).
        for (int b = 3; b >= g; --b) {
            const Block& blk = blocks_[static_cast<std::size_t>(b)];
            const ImageTrace::BlockTrace& bt = t.blocks[static_cast<std::size_t>(b)];
            Tensor d_sum = nn::relu_backward(bt.sum_pre, d);
            Tensor d_act1 = blk.conv2.backward(bt.act1, d_sum, nullptr, nullptr);
            Tensor d_pre1 = nn::relu_backward(bt.pre1, d_act1);
            Tensor d_in = blk.conv1.backward(bt.in, d_pre1, nullptr, nullptr);
            if (blk.proj)
                d_in += blk.proj->backward(bt.in, d_sum, nullptr, nullptr);
            else
                d_in += d_sum;
            d = std::move(d_in);
        }
        set_batch_row(acts, i, t.blocks[static_cast<std::size_t>(g - 1)].out);
        set_batch_row(grads, i, d);
    }
    return {std::move(acts), std::move(grads)};
}

std::vector<int> ClassifierModel::group_output_shape(const std::string& group_name) const {
    const int g = group_index(group_name);
    int size = cfg_.input_size / cfg_.stem_stride / (cfg_.stem_pool ? 2 : 1);
    for (int b = 0; b < g; ++b) size /= cfg_.block_strides[static_cast<std::size_t>(b)];
    return {cfg_.block_channels[static_cast<std::size_t>(g - 1)], size, size};
}

int ClassifierModel::group_index(const std::string& group_name) {
    if (group_name == "group1") return 1;
    if (group_name == "group2") return 2;
    if (group_name == "group3") return 3;
    if (group_name == "group4") return 4;
    if (group_name == "group5")
        throw ArgumentError("group5 is the fully connected head; it has no convolutional output");
    throw ArgumentError("unknown layer group: " + group_name);
}

std::pair<double, int> ClassifierModel::loss_grad_batch(const ImageBatch& batch,
                                                        ParamGrads& grads) const {
    check_batch(batch.images);
    const int n = batch.size();
    const int k = num_classes();
    if (static_cast<int>(batch.labels.size()) != n)
        throw ArgumentError("label count does not match batch size");
    for (int y : batch.labels)
        if (y < 0 || y >= k) throw ArgumentError("label out of range");

    std::vector<ParamGrads> per_image(static_cast<std::size_t>(n));
    std::vector<double> losses(static_cast<std::size_t>(n), 0.0);
    std::vector<int> correct(static_cast<std::size_t>(n), 0);

#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
        ImageTrace t;
        Tensor row = forward_one(batch_row(batch.images, i), &t);
        const int y = batch.labels[static_cast<std::size_t>(i)];
        losses[static_cast<std::size_t>(i)] = nn::cross_entropy(row.data(), k, y);
        int arg = 0;
        for (int c = 1; c < k; ++c)
            if (row[static_cast<std::size_t>(c)] > row[static_cast<std::size_t>(arg)]) arg = c;
        correct[static_cast<std::size_t>(i)] = (arg == y) ? 1 : 0;

        auto p = nn::softmax(row.data(), k);
        Tensor drow({k});
        for (int c = 0; c < k; ++c)
            drow[static_cast<std::size_t>(c)] = (p[static_cast<std::size_t>(c)] - (c == y ? 1.0 : 0.0)) / n;
        per_image[static_cast<std::size_t>(i)] = make_param_grads();
        backward_one(t, drow, &per_image[static_cast<std::size_t>(i)], false);
    }

    // Fixed-order reduction keeps results identical for any thread count.
    double loss = 0.0;
    int ncorrect = 0;
    for (int i = 0; i < n; ++i) {
        loss += losses[static_cast<std::size_t>(i)];
        ncorrect += correct[static_cast<std::size_t>(i)];
        for (std::size_t p = 0; p < grads.size(); ++p)
            grads[p] += per_image[static_cast<std::size_t>(i)][p];
    }
    return {loss / n, ncorrect};
}

void ClassifierModel::replace_head(int num_classes, std::uint64_t seed) {
    if (num_classes < 2) throw ArgumentError("num_classes must be at least 2");
    head_ = nn::Linear(head_.in_features(), num_classes);
    Rng rng(Rng::derive(seed, 100));
    head_.init_kaiming(rng);
    cfg_.num_classes = num_classes;
}

void ClassifierModel::for_each_param(
    const std::function<void(int, int, const std::string&, Tensor&)>& fn) {
    int idx = 0;
    auto visit = [&](int group, const std::string& layer, const std::string& tensor, Tensor& t) {
        fn(idx++, group, "group" + std::to_string(group) + "/" + layer + "/" + tensor, t);
    };
    visit(1, "stem", "weight", stem_.weight);
    visit(1, "stem", "bias", stem_.bias);
    for (int b = 0; b < 4; ++b) {
        const int group = b + 1;  // block 1 shares group 1 with the stem
        Block& blk = blocks_[static_cast<std::size_t>(b)];
        const std::string base = "block" + std::to_string(b + 1);
        visit(group, base + "_conv1", "weight", blk.conv1.weight);
        visit(group, base + "_conv1", "bias", blk.conv1.bias);
        visit(group, base + "_conv2", "weight", blk.conv2.weight);
        visit(group, base + "_conv2", "bias", blk.conv2.bias);
        if (blk.proj) {
            visit(group, base + "_proj", "weight", blk.proj->weight);
            visit(group, base + "_proj", "bias", blk.proj->bias);
        }
    }
    visit(5, "fc", "weight", head_.weight);
    visit(5, "fc", "bias", head_.bias);
}

void ClassifierModel::for_each_param(
    const std::function<void(int, int, const std::string&, const Tensor&)>& fn) const {
    auto* self = const_cast<ClassifierModel*>(this);
    self->for_each_param([&](int idx, int group, const std::string& key, Tensor& t) {
        fn(idx, group, key, static_cast<const Tensor&>(t));
    });
}

int ClassifierModel::param_count() const {
    int n = 0;
    for_each_param([&](int, int, const std::string&, const Tensor&) { ++n; });
    return n;
}

ParamGrads ClassifierModel::make_param_grads() const {
    ParamGrads grads;
    for_each_param([&](int, int, const std::string&, const Tensor& t) {
        grads.push_back(Tensor(t.shape()));
    });
    return grads;
}

std::uint64_t ClassifierModel::group_checksum(int group) const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for_each_param([&](int, int g, const std::string&, const Tensor& t) {
        if (g != group) return;
        const auto* bytes = reinterpret_cast<const unsigned char*>(t.data());
        for (std::size_t i = 0; i < t.size() * sizeof(double); ++i) {
            h ^= bytes[i];
            h *= 0x100000001b3ULL;
        }
    });
    return h;
}

LinearModel::LinearModel(std::vector<int> input_shape, int num_classes)
    : in_shape_(std::move(input_shape)),
      fc_(static_cast<int>(numel(in_shape_)), num_classes) {}

Tensor LinearModel::logits(const Tensor& batch) const {
    const int n = batch.dim(0);
    const int flat = fc_.in_features();
    Tensor out({n, fc_.out_features()});
    for (int i = 0; i < n; ++i) {
        Tensor x({flat});
        std::memcpy(x.data(), batch.data() + static_cast<std::size_t>(i) * flat,
                    static_cast<std::size_t>(flat) * sizeof(double));
        Tensor row = fc_.forward(x);
        for (int c = 0; c < fc_.out_features(); ++c) out.at(i, c) = row[static_cast<std::size_t>(c)];
    }
    return out;
}

std::pair<Tensor, Tensor> LinearModel::logits_and_input_grad(const Tensor& batch,
                                                             const SeedFn& seed_fn) const {
    Tensor lg = logits(batch);
    Tensor seed = seed_fn(lg);
    const int n = batch.dim(0);
    const int flat = fc_.in_features();
    Tensor grad = Tensor::zeros_like(batch);
    for (int i = 0; i < n; ++i) {
        double* g = grad.data() + static_cast<std::size_t>(i) * flat;
        for (int c = 0; c < fc_.out_features(); ++c) {
            const double s = seed.at(i, c);
            if (s == 0.0) continue;
            const double* w = fc_.weight.data() + static_cast<std::size_t>(c) * flat;
            for (int j = 0; j < flat; ++j) g[j] += s * w[j];
        }
    }
    return {std::move(lg), std::move(grad)};
}

}  // namespace robsal
