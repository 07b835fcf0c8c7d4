#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "robsal/model.hpp"
#include "robsal/tensor.hpp"

namespace robsal {

struct ManifestRecord {
    std::string id;
    std::string path;  // empty for purely in-memory (synthetic) records
    std::string class_name;
    int label = -1;
    std::string split;  // "train" | "val" | "test"
    int fold = -1;      // cross-validation fold for train records, else -1
};

struct DatasetManifest {
    std::vector<ManifestRecord> records;
    std::vector<std::string> class_names;
    int height = 0;
    int width = 0;
    int channels = 3;

    std::vector<int> indices_of(const std::string& split) const;
    int count_of(const std::string& split, int label) const;
};

void save_manifest(const DatasetManifest& m, const std::string& path);
DatasetManifest load_manifest(const std::string& path);

// In-memory dataset aligned with a manifest (images[i] belongs to
// manifest.records[i]); images are C x H x W in [0,1] at source geometry.
struct Dataset {
    DatasetManifest manifest;
    std::vector<Tensor> images;

    int size() const { return static_cast<int>(images.size()); }
};

struct IngestReport {
    std::vector<std::string> rejects;   // unreadable files, ids without images
    std::vector<std::string> warnings;  // e.g. empty directory
};

// Scans `directory` for the images named by the label file (columns
// image_id, class_name; comma/tab/space separated). Every labeled readable
// image becomes a manifest row tagged "train"; problems land in the report
// instead of being dropped silently.
DatasetManifest ingest(const std::string& directory, const std::string& label_file,
                       IngestReport* report = nullptr);

// Draws an exact per-class train/test split from the pool of `classes`.
// Whatever split tags the input rows carried are discarded; unselected rows
// are dropped.
DatasetManifest balanced_subset(const DatasetManifest& m, const std::vector<std::string>& classes,
                                int per_class_train, int per_class_test, std::uint64_t seed);

// Moves `per_class` images per class from the test split into a validation
// split (the fine-tuning protocol needs a held-out early-stopping set).
DatasetManifest carve_validation(const DatasetManifest& m, int per_class, std::uint64_t seed);

// Assigns class-stratified folds 0..k-1 to the training rows; per-class fold
// sizes differ by at most one.
DatasetManifest kfold(const DatasetManifest& m, int k, std::uint64_t seed);

// Augmentation pipeline configuration. Evaluation applies only crop+resize;
// the stochastic steps run on training items with rng derived from
// (seed, epoch, image id), so runs with equal seeds see identical streams.
struct AugmentPolicy {
    int crop = 450;
    int out_size = 224;
    double flip_prob = 0.5;   // horizontal and vertical, drawn independently
    double jitter = 0.2;      // brightness/contrast/saturation amplitude
    double shear_deg = 10.0;
    double rotate_deg = 50.0;
    Normalization normalization = Normalization::imagenet();

    static AugmentPolicy paper_full();
    static AugmentPolicy desk(int image_size);
    AugmentPolicy deterministic() const;  // stochastic steps disabled
};

// Deterministic evaluation path: center crop + bilinear resize.
Tensor transform_eval(const Tensor& image, const AugmentPolicy& policy);

// Training path: crop + resize, then flips, rotation+shear, color jitter.
// Steps whose amplitude is zero are skipped entirely (and consume no rng),
// so a degenerate policy reproduces the evaluation path exactly.
Tensor transform_train(const Tensor& image, const AugmentPolicy& policy, Rng& rng);

std::uint64_t augment_stream_seed(std::uint64_t seed, int epoch, const std::string& image_id);

// Assembles a model-ready batch from dataset rows. Training batches apply
// the stochastic pipeline with per-(epoch, id) streams; eval batches are
// deterministic.
ImageBatch make_train_batch(const Dataset& data, const std::vector<int>& rows,
                            const AugmentPolicy& policy, int epoch, std::uint64_t seed);
ImageBatch make_eval_batch(const Dataset& data, const std::vector<int>& rows,
                           const AugmentPolicy& policy);

// Per-channel mean over a dataset split (occlusion fill default).
std::vector<double> channel_means(const Dataset& data, const std::string& split);

// Synthetic lesion-like benchmark: blob "lesions" over textured "skin".
// Class identity is carried solely by the intra-lesion color-variation
// statistics (0: flat, 1: smooth ramp, 2: high-frequency speckle); base
// colors, shapes and positions are identically distributed across classes,
// which keeps class-conditional pixel means uninformative and defeats
// linear probes.
Dataset synth_dataset(int n_per_class, int image_size, int n_classes, std::uint64_t seed);

// Loads the images referenced by a manifest from disk.
Dataset load_dataset(const DatasetManifest& m);

// Restricted view: records (and images) of one split, as a new dataset.
Dataset subset(const Dataset& data, const std::string& split);

// Re-binds an in-memory pool to a derived manifest (rows joined by id).
// Manifest operations are pure metadata transforms; this carries the pixel
// data along afterwards.
Dataset apply_manifest(const Dataset& pool, const DatasetManifest& selected);

}  // namespace robsal
