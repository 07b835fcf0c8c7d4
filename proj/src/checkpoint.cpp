#include <fstream>
#include <map>

#include <json.hpp>

#include "robsal/errors.hpp"
#include "robsal/model.hpp"

namespace robsal {

namespace {
constexpr char kMagic[] = "RSALCKPT1\n";
constexpr std::size_t kMagicLen = 10;
}  // namespace

struct CheckpointIO {
    static nlohmann::ordered_json header(const ClassifierModel& m) {
        const ArchConfig& c = m.cfg_;
        nlohmann::ordered_json j;
        j["format"] = "robsal-checkpoint-v1";
        j["arch"] = {{"id", "mini_resnet"},
                     {"input_size", c.input_size},
                     {"in_channels", c.in_channels},
                     {"stem_channels", c.stem_channels},
                     {"stem_stride", c.stem_stride},
                     {"stem_pool", c.stem_pool},
                     {"block_channels", c.block_channels},
                     {"block_strides", c.block_strides}};
        j["num_classes"] = c.num_classes;
        j["normalization"] = {{"mean", m.norm_.mean}, {"std", m.norm_.std}};
        j["creation_seed"] = m.creation_seed_;
        nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
        m.for_each_param([&](int, int, const std::string& key, const Tensor& t) {
            tensors.push_back({{"key", key}, {"shape", t.shape()}});
        });
        j["tensors"] = std::move(tensors);
        return j;
    }

    static ClassifierModel from_header(const nlohmann::json& j) {
        ArchConfig c;
        const auto& a = j.at("arch");
        c.input_size = a.at("input_size").get<int>();
        c.in_channels = a.at("in_channels").get<int>();
        c.stem_channels = a.at("stem_channels").get<int>();
        c.stem_stride = a.at("stem_stride").get<int>();
        c.stem_pool = a.at("stem_pool").get<bool>();
        c.block_channels = a.at("block_channels").get<std::array<int, 4>>();
        c.block_strides = a.at("block_strides").get<std::array<int, 4>>();
        c.num_classes = j.at("num_classes").get<int>();
        Normalization norm;
        norm.mean = j.at("normalization").at("mean").get<std::vector<double>>();
        norm.std = j.at("normalization").at("std").get<std::vector<double>>();
        return ClassifierModel::create(c, norm, j.at("creation_seed").get<std::uint64_t>());
    }
};

void save_checkpoint(const ClassifierModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open checkpoint for writing: " + path);

    const std::string header = CheckpointIO::header(model).dump();
    const std::uint64_t len = header.size();
    out.write(kMagic, kMagicLen);
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    model.for_each_param([&](int, int, const std::string&, const Tensor& t) {
        out.write(reinterpret_cast<const char*>(t.data()),
                  static_cast<std::streamsize>(t.size() * sizeof(double)));
    });
    if (!out) throw DataError("failed writing checkpoint: " + path);
}

ClassifierModel load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);

    char magic[kMagicLen];
    in.read(magic, kMagicLen);
    if (!in || std::string(magic, kMagicLen) != std::string(kMagic, kMagicLen))
        throw DataError("not a robsal checkpoint: " + path);

    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string header(len, '\0');
    in.read(header.data(), static_cast<std::streamsize>(len));
    if (!in) throw DataError("truncated checkpoint header: " + path);

    nlohmann::json j = nlohmann::json::parse(header);
    ClassifierModel model = CheckpointIO::from_header(j);

    std::map<std::string, std::vector<int>> expect;
    for (const auto& t : j.at("tensors"))
        expect[t.at("key").get<std::string>()] = t.at("shape").get<std::vector<int>>();

    model.for_each_param([&](int, int, const std::string& key, Tensor& t) {
        auto it = expect.find(key);
        if (it == expect.end() || it->second != t.shape())
            throw DataError("checkpoint tensor mismatch at " + key);
    });
    // Blobs are stored in canonical parameter order, which matches the
    // reconstructed model's order.
    model.for_each_param([&](int, int, const std::string& key, Tensor& t) {
        in.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(t.size() * sizeof(double)));
        if (!in) throw DataError("truncated checkpoint data at " + key);
    });
    return model;
}

}  // namespace robsal
