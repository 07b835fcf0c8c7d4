#include "robsal/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include <json.hpp>

#include "robsal/errors.hpp"
#include "robsal/imageio.hpp"
#include "robsal/imgops.hpp"

namespace fs = std::filesystem;

namespace robsal {

std::vector<int> DatasetManifest::indices_of(const std::string& split) const {
    std::vector<int> out;
    for (int i = 0; i < static_cast<int>(records.size()); ++i)
        if (records[static_cast<std::size_t>(i)].split == split) out.push_back(i);
    return out;
}

int DatasetManifest::count_of(const std::string& split, int label) const {
    int n = 0;
    for (const auto& r : records)
        if (r.split == split && r.label == label) ++n;
    return n;
}

void save_manifest(const DatasetManifest& m, const std::string& path) {
    nlohmann::ordered_json j;
    j["classes"] = m.class_names;
    j["geometry"] = {{"height", m.height}, {"width", m.width}, {"channels", m.channels}};
    auto records = nlohmann::ordered_json::array();
    for (const auto& r : m.records) {
        records.push_back({{"id", r.id},
                           {"path", r.path},
                           {"class", r.class_name},
                           {"label", r.label},
                           {"split", r.split},
                           {"fold", r.fold}});
    }
    j["records"] = std::move(records);
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write manifest: " + path);
    out << j.dump(2) << "\n";
}

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read manifest: " + path);
    nlohmann::json j;
    in >> j;
    DatasetManifest m;
    m.class_names = j.at("classes").get<std::vector<std::string>>();
    m.height = j.at("geometry").at("height").get<int>();
    m.width = j.at("geometry").at("width").get<int>();
    m.channels = j.at("geometry").at("channels").get<int>();
    for (const auto& rj : j.at("records")) {
        ManifestRecord r;
        r.id = rj.at("id").get<std::string>();
        r.path = rj.at("path").get<std::string>();
        r.class_name = rj.at("class").get<std::string>();
        r.label = rj.at("label").get<int>();
        r.split = rj.at("split").get<std::string>();
        r.fold = rj.at("fold").get<int>();
        m.records.push_back(std::move(r));
    }
    return m;
}

DatasetManifest ingest(const std::string& directory, const std::string& label_file,
                       IngestReport* report) {
    IngestReport local;
    IngestReport& rep = report ? *report : local;

    if (!fs::is_directory(directory)) throw DataError("not a directory: " + directory);
    std::ifstream labels(label_file);
    if (!labels) throw DataError("missing label file: " + label_file);

    // Index directory entries by full file name and by stem.
    std::map<std::string, std::string> by_name;
    for (const auto& e : fs::directory_iterator(directory)) {
        if (!e.is_regular_file()) continue;
        by_name[e.path().filename().string()] = e.path().string();
        by_name.emplace(e.path().stem().string(), e.path().string());
    }
    if (by_name.empty()) rep.warnings.push_back("directory contains no files: " + directory);

    struct Row {
        std::string id, cls, path;
    };
    std::vector<Row> rows;
    std::set<std::string> classes;
    std::set<std::string> used_paths;
    std::string line;
    while (std::getline(labels, line)) {
        if (line.empty()) continue;
        const auto delim = line.find_first_of(",\t ");
        if (delim == std::string::npos) {
            rep.rejects.push_back("malformed label line: " + line);
            continue;
        }
        const std::string id = line.substr(0, delim);
        std::string cls = line.substr(delim + 1);
        while (!cls.empty() && (cls.back() == '\r' || cls.back() == ' ')) cls.pop_back();
        if (id == "image_id") continue;  // header
        auto it = by_name.find(id);
        if (it == by_name.end()) {
            rep.rejects.push_back("no image file for label id: " + id);
            continue;
        }
        rows.push_back({id, cls, it->second});
        classes.insert(cls);
        used_paths.insert(it->second);
    }

    DatasetManifest m;
    m.class_names.assign(classes.begin(), classes.end());
    std::map<std::string, int> label_of;
    for (int i = 0; i < static_cast<int>(m.class_names.size()); ++i)
        label_of[m.class_names[static_cast<std::size_t>(i)]] = i;

    for (const auto& row : rows) {
        auto image = img::load_image(row.path);
        if (!image) {
            rep.rejects.push_back("unreadable image: " + row.path);
            continue;
        }
        if (m.records.empty()) {
            m.channels = image->dim(0);
            m.height = image->dim(1);
            m.width = image->dim(2);
        }
        ManifestRecord r;
        r.id = row.id;
        r.path = row.path;
        r.class_name = row.cls;
        r.label = label_of[row.cls];
        r.split = "train";
        m.records.push_back(std::move(r));
    }

    // Files nobody labeled are reported too.
    for (const auto& [name, path] : by_name) {
        if (name == fs::path(path).stem().string() && name != fs::path(path).filename().string())
            continue;  // stem alias of a listed file
        if (path == label_file) continue;
        if (!used_paths.count(path))
            rep.rejects.push_back("image without label: " + path);
    }
    if (m.records.empty() && rep.rejects.empty())
        rep.warnings.push_back("empty manifest from " + directory);
    return m;
}

DatasetManifest balanced_subset(const DatasetManifest& m, const std::vector<std::string>& classes,
                                int per_class_train, int per_class_test, std::uint64_t seed) {
    if (per_class_train < 0 || per_class_test < 0)
        throw ArgumentError("per-class counts must be nonnegative");
    DatasetManifest out;
    out.class_names = classes;
    out.height = m.height;
    out.width = m.width;
    out.channels = m.channels;

    for (int c = 0; c < static_cast<int>(classes.size()); ++c) {
        const std::string& cls = classes[static_cast<std::size_t>(c)];
        std::vector<int> pool;
        for (int i = 0; i < static_cast<int>(m.records.size()); ++i)
            if (m.records[static_cast<std::size_t>(i)].class_name == cls) pool.push_back(i);
        const int need = per_class_train + per_class_test;
        if (static_cast<int>(pool.size()) < need)
            throw DataError("class " + cls + " has " + std::to_string(pool.size()) +
                            " images, need " + std::to_string(need));
        Rng rng(Rng::derive(seed, static_cast<std::uint64_t>(c)));
        rng.shuffle(pool);
        for (int i = 0; i < need; ++i) {
            ManifestRecord r = m.records[static_cast<std::size_t>(pool[static_cast<std::size_t>(i)])];
            r.label = c;
            r.split = i < per_class_train ? "train" : "test";
            r.fold = -1;
            out.records.push_back(std::move(r));
        }
    }
    return out;
}

DatasetManifest carve_validation(const DatasetManifest& m, int per_class, std::uint64_t seed) {
    DatasetManifest out = m;
    for (int c = 0; c < static_cast<int>(m.class_names.size()); ++c) {
        std::vector<int> pool;
        for (int i = 0; i < static_cast<int>(out.records.size()); ++i) {
            const auto& r = out.records[static_cast<std::size_t>(i)];
            if (r.split == "test" && r.label == c) pool.push_back(i);
        }
        if (static_cast<int>(pool.size()) < per_class)
            throw DataError("not enough test images in class " +
                            m.class_names[static_cast<std::size_t>(c)] + " to carve validation");
        Rng rng(Rng::derive(seed, 0x5a11, static_cast<std::uint64_t>(c)));
        rng.shuffle(pool);
        for (int i = 0; i < per_class; ++i)
            out.records[static_cast<std::size_t>(pool[static_cast<std::size_t>(i)])].split = "val";
    }
    return out;
}

DatasetManifest kfold(const DatasetManifest& m, int k, std::uint64_t seed) {
    if (k < 2) throw ArgumentError("k must be at least 2");
    DatasetManifest out = m;
    for (int c = 0; c < static_cast<int>(m.class_names.size()); ++c) {
        std::vector<int> pool;
        for (int i = 0; i < static_cast<int>(out.records.size()); ++i) {
            const auto& r = out.records[static_cast<std::size_t>(i)];
            if (r.split == "train" && r.label == c) pool.push_back(i);
        }
        Rng rng(Rng::derive(seed, 0xf01d, static_cast<std::uint64_t>(c)));
        rng.shuffle(pool);
        for (int i = 0; i < static_cast<int>(pool.size()); ++i)
            out.records[static_cast<std::size_t>(pool[static_cast<std::size_t>(i)])].fold = i % k;
    }
    return out;
}

AugmentPolicy AugmentPolicy::paper_full() { return AugmentPolicy{}; }

AugmentPolicy AugmentPolicy::desk(int image_size) {
    AugmentPolicy p;
    p.crop = image_size;
    p.out_size = image_size;
    p.normalization = Normalization::centered(3);
    return p;
}

AugmentPolicy AugmentPolicy::deterministic() const {
    AugmentPolicy p = *this;
    p.flip_prob = 0.0;
    p.jitter = 0.0;
    p.shear_deg = 0.0;
    p.rotate_deg = 0.0;
    return p;
}

Tensor transform_eval(const Tensor& image, const AugmentPolicy& policy) {
    Tensor out = img::center_crop(image, policy.crop);
    return img::resize_bilinear(out, policy.out_size, policy.out_size);
}

Tensor transform_train(const Tensor& image, const AugmentPolicy& policy, Rng& rng) {
    Tensor out = transform_eval(image, policy);
    // Zero-amplitude steps are skipped without consuming rng, so the
    // degenerate policy is bit-identical to the evaluation path.
    if (policy.flip_prob > 0.0) {
        if (rng.bernoulli(policy.flip_prob)) out = img::flip_horizontal(out);
        if (rng.bernoulli(policy.flip_prob)) out = img::flip_vertical(out);
    }
    if (policy.rotate_deg > 0.0 || policy.shear_deg > 0.0) {
        const double rot =
            policy.rotate_deg > 0.0 ? rng.uniform(-policy.rotate_deg, policy.rotate_deg) : 0.0;
        const double shear =
            policy.shear_deg > 0.0 ? rng.uniform(-policy.shear_deg, policy.shear_deg) : 0.0;
        out = img::affine(out, rot, shear);
    }
    if (policy.jitter > 0.0) {
        img::adjust_brightness(out, rng.uniform(1.0 - policy.jitter, 1.0 + policy.jitter));
        img::adjust_contrast(out, rng.uniform(1.0 - policy.jitter, 1.0 + policy.jitter));
        img::adjust_saturation(out, rng.uniform(1.0 - policy.jitter, 1.0 + policy.jitter));
        img::clamp01(out);
    }
    return out;
}

std::uint64_t augment_stream_seed(std::uint64_t seed, int epoch, const std::string& image_id) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char ch : image_id) {
        h ^= static_cast<unsigned char>(ch);
        h *= 0x100000001b3ULL;
    }
    return Rng::derive(seed, static_cast<std::uint64_t>(epoch), h);
}

ImageBatch make_train_batch(const Dataset& data, const std::vector<int>& rows,
                            const AugmentPolicy& policy, int epoch, std::uint64_t seed) {
    ImageBatch batch;
    const int n = static_cast<int>(rows.size());
    batch.images = Tensor({n, data.manifest.channels, policy.out_size, policy.out_size});
    batch.labels.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const int row = rows[static_cast<std::size_t>(i)];
        const auto& rec = data.manifest.records[static_cast<std::size_t>(row)];
        Rng rng(augment_stream_seed(seed, epoch, rec.id));
        Tensor t = transform_train(data.images[static_cast<std::size_t>(row)], policy, rng);
        set_batch_row(batch.images, i, t);
        batch.labels[static_cast<std::size_t>(i)] = rec.label;
    }
    return batch;
}

ImageBatch make_eval_batch(const Dataset& data, const std::vector<int>& rows,
                           const AugmentPolicy& policy) {
    ImageBatch batch;
    const int n = static_cast<int>(rows.size());
    batch.images = Tensor({n, data.manifest.channels, policy.out_size, policy.out_size});
    batch.labels.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const int row = rows[static_cast<std::size_t>(i)];
        Tensor t = transform_eval(data.images[static_cast<std::size_t>(row)], policy);
        set_batch_row(batch.images, i, t);
        batch.labels[static_cast<std::size_t>(i)] =
            data.manifest.records[static_cast<std::size_t>(row)].label;
    }
    return batch;
}

std::vector<double> channel_means(const Dataset& data, const std::string& split) {
    const auto rows = data.manifest.indices_of(split);
    if (rows.empty()) throw DataError("no images in split: " + split);
    std::vector<double> sums(static_cast<std::size_t>(data.manifest.channels), 0.0);
    std::size_t count = 0;
    for (int row : rows) {
        const Tensor& im = data.images[static_cast<std::size_t>(row)];
        const int area = im.dim(1) * im.dim(2);
        for (int c = 0; c < im.dim(0); ++c) {
            const double* plane = im.data() + static_cast<std::size_t>(c) * area;
            for (int i = 0; i < area; ++i) sums[static_cast<std::size_t>(c)] += plane[i];
        }
        count += static_cast<std::size_t>(area);
    }
    for (auto& s : sums) s /= static_cast<double>(count);
    return sums;
}

namespace {

// Low-frequency value noise: coarse grid of amplitudes, bilinearly upsampled.
Tensor value_noise(int size, int grid, double amplitude, Rng& rng) {
    Tensor coarse({grid, grid});
    for (std::size_t i = 0; i < coarse.size(); ++i) coarse[i] = rng.uniform(-amplitude, amplitude);
    Tensor out({size, size});
    for (int y = 0; y < size; ++y) {
        const double gy = static_cast<double>(y) / (size - 1) * (grid - 1);
        const int y0 = std::min(grid - 2, static_cast<int>(gy));
        const double fy = gy - y0;
        for (int x = 0; x < size; ++x) {
            const double gx = static_cast<double>(x) / (size - 1) * (grid - 1);
            const int x0 = std::min(grid - 2, static_cast<int>(gx));
            const double fx = gx - x0;
            out.at(y, x) = coarse.at(y0, x0) * (1 - fy) * (1 - fx) +
                           coarse.at(y0, x0 + 1) * (1 - fy) * fx +
                           coarse.at(y0 + 1, x0) * fy * (1 - fx) +
                           coarse.at(y0 + 1, x0 + 1) * fy * fx;
        }
    }
    return out;
}

double smoothstep(double t) {
    t = std::clamp(t, 0.0, 1.0);
    return t * t * (3.0 - 2.0 * t);
}

}  // namespace

Dataset synth_dataset(int n_per_class, int image_size, int n_classes, std::uint64_t seed) {
    if (image_size < 16) throw ArgumentError("image_size must be at least 16");
    if (n_classes < 2 || n_classes > 3)
        throw ArgumentError("synthetic generator defines 2 or 3 texture classes");

    static const char* kClassNames[3] = {"flat", "stripe", "speckle"};
    Dataset data;
    data.manifest.channels = 3;
    data.manifest.height = image_size;
    data.manifest.width = image_size;
    for (int c = 0; c < n_classes; ++c) data.manifest.class_names.push_back(kClassNames[c]);

    const int size = image_size;
    for (int cls = 0; cls < n_classes; ++cls) {
        for (int idx = 0; idx < n_per_class; ++idx) {
            Rng rng(Rng::derive(seed, static_cast<std::uint64_t>(cls),
                                static_cast<std::uint64_t>(idx)));
            Tensor im({3, size, size});

            // Skin background: per-image base color plus low-frequency shading.
            const double skin[3] = {rng.uniform(0.55, 0.80), rng.uniform(0.35, 0.60),
                                    rng.uniform(0.30, 0.55)};
            Tensor shading = value_noise(size, 4, 0.06, rng);

            // Lesion geometry, identically distributed for all classes.
            const double cy = rng.uniform(0.30, 0.70) * size;
            const double cx = rng.uniform(0.30, 0.70) * size;
            const double r0 = rng.uniform(0.18, 0.28) * size;
            const double ry = r0 * rng.uniform(0.80, 1.20);
            const double rx = r0 * rng.uniform(0.80, 1.20);
            const double psi = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
            const double ph1 = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
            const double ph2 = rng.uniform(0.0, 2.0 * 3.14159265358979323846);

            const double lesion[3] = {rng.uniform(0.30, 0.50), rng.uniform(0.20, 0.38),
                                      rng.uniform(0.14, 0.30)};

            // Intra-lesion variation: amplitude distribution shared by the
            // non-flat classes, direction and wavelength drawn per image.
            // Stripes are mid-frequency, speckle is per-pixel; both are
            // zero-mean so class-conditional pixel means carry no signal.
            const double amp = rng.uniform(0.16, 0.22);
            const double stripe_dir = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
            const double stripe_wavelength = rng.uniform(4.5, 7.0);
            const double stripe_phase = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
            static const double kAxis[3] = {0.9, 0.7, 0.5};

            // Per-pixel speckle field is always drawn so the rng stream stays
            // aligned across classes.
            Tensor speckle({size, size});
            for (std::size_t i = 0; i < speckle.size(); ++i) speckle[i] = rng.uniform(-1.0, 1.0);

            const double cpsi = std::cos(psi), spsi = std::sin(psi);
            for (int y = 0; y < size; ++y) {
                for (int x = 0; x < size; ++x) {
                    const double dy = y - cy, dx = x - cx;
                    const double uy = (cpsi * dy - spsi * dx) / ry;
                    const double ux = (spsi * dy + cpsi * dx) / rx;
                    const double rho = std::sqrt(ux * ux + uy * uy);
                    const double theta = std::atan2(uy, ux);
                    const double boundary =
                        1.0 + 0.12 * std::sin(3 * theta + ph1) + 0.08 * std::sin(5 * theta + ph2);
                    const double alpha = smoothstep((boundary - rho) / 0.10);

                    double variation = 0.0;
                    if (cls == 1) {
                        const double proj = std::cos(stripe_dir) * dx + std::sin(stripe_dir) * dy;
                        variation = amp * std::sin(2.0 * 3.14159265358979323846 * proj /
                                                       stripe_wavelength +
                                                   stripe_phase);
                    } else if (cls == 2) {
                        variation = amp * speckle.at(y, x);
                    }

                    const double shade = shading.at(y, x);
                    for (int c = 0; c < 3; ++c) {
                        const double bg = skin[c] + shade;
                        const double fg = lesion[c] + variation * kAxis[c];
                        im.at(c, y, x) = (1.0 - alpha) * bg + alpha * fg;
                    }
                }
            }

            // Mild sensor noise on every class.
            for (std::size_t i = 0; i < im.size(); ++i) im[i] += rng.normal(0.0, 0.008);
            img::clamp01(im);

            ManifestRecord rec;
            rec.id = std::string("synth-") + kClassNames[cls] + "-" + std::to_string(idx);
            rec.class_name = kClassNames[cls];
            rec.label = cls;
            rec.split = "train";
            data.manifest.records.push_back(std::move(rec));
            data.images.push_back(std::move(im));
        }
    }
    return data;
}

Dataset load_dataset(const DatasetManifest& m) {
    Dataset data;
    data.manifest = m;
    for (const auto& r : m.records) {
        if (r.path.empty()) throw DataError("manifest record has no file path: " + r.id);
        auto image = img::load_image(r.path);
        if (!image) throw DataError("unreadable image: " + r.path);
        data.images.push_back(std::move(*image));
    }
    return data;
}

Dataset apply_manifest(const Dataset& pool, const DatasetManifest& selected) {
    std::map<std::string, int> row_of;
    for (int i = 0; i < static_cast<int>(pool.manifest.records.size()); ++i)
        row_of[pool.manifest.records[static_cast<std::size_t>(i)].id] = i;
    Dataset out;
    out.manifest = selected;
    for (const auto& r : selected.records) {
        auto it = row_of.find(r.id);
        if (it == row_of.end()) throw DataError("manifest id not in pool: " + r.id);
        out.images.push_back(pool.images[static_cast<std::size_t>(it->second)]);
    }
    return out;
}

Dataset subset(const Dataset& data, const std::string& split) {
    Dataset out;
    out.manifest.class_names = data.manifest.class_names;
    out.manifest.height = data.manifest.height;
    out.manifest.width = data.manifest.width;
    out.manifest.channels = data.manifest.channels;
    for (int i = 0; i < static_cast<int>(data.manifest.records.size()); ++i) {
        const auto& r = data.manifest.records[static_cast<std::size_t>(i)];
        if (r.split != split) continue;
        out.manifest.records.push_back(r);
        out.images.push_back(data.images[static_cast<std::size_t>(i)]);
    }
    return out;
}

}  // namespace robsal
