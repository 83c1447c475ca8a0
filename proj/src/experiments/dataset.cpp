#include "swarm/experiments/dataset.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <memory>

#include "swarm/util/rng.hpp"

namespace swarm::experiments {

IdxFile parse_idx(ByteView bytes) {
    ByteReader r(bytes, Endian::big);
    IdxFile f;
    f.magic = r.u32();
    if (f.magic != kIdxImagesMagic && f.magic != kIdxLabelsMagic) {
        throw ParseError("bad IDX magic " + std::to_string(f.magic), 0);
    }
    const std::size_t rank = f.magic & 0xff;
    std::size_t total = 1;
    for (std::size_t i = 0; i < rank; ++i) {
        f.dims.push_back(r.u32());
        total *= f.dims.back();
    }
    if (r.remaining() < total) {
        throw ParseError("IDX file truncated: expected " + std::to_string(total) + " data bytes, found " +
                             std::to_string(r.remaining()),
                         bytes.size());
    }
    auto raw = r.raw(total);
    f.data.assign(raw.begin(), raw.end());
    if (!r.done()) throw ParseError("trailing bytes after IDX data", r.offset());
    return f;
}

IdxFile read_idx_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + path);
    Bytes bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return parse_idx(bytes);
    } catch (const ParseError& e) {
        throw ParseError(path + ": " + e.what(), e.offset());
    }
}

IdxDataset load_idx(const std::string& images_path, const std::string& labels_path) {
    auto images = read_idx_file(images_path);
    auto labels = read_idx_file(labels_path);
    if (images.magic != kIdxImagesMagic) throw ParseError(images_path + ": not an IDX image file", 0);
    if (labels.magic != kIdxLabelsMagic) throw ParseError(labels_path + ": not an IDX label file", 0);
    if (images.dims[0] != labels.dims[0]) {
        throw ParseError("image count " + std::to_string(images.dims[0]) + " does not match label count " +
                             std::to_string(labels.dims[0]),
                         4);
    }
    IdxDataset d;
    d.count = images.dims[0];
    d.rows = images.dims[1];
    d.cols = images.dims[2];
    d.images = std::move(images.data);
    d.labels = std::move(labels.data);
    return d;
}

Dataset to_dataset(const IdxDataset& idx) {
    Dataset d;
    d.n = idx.count;
    d.features = idx.rows * idx.cols;
    d.x.resize(idx.images.size());
    for (std::size_t i = 0; i < idx.images.size(); ++i) d.x[i] = static_cast<float>(idx.images[i]) / 255.0f;
    int max_label = 0;
    for (auto l : idx.labels) {
        d.y.push_back(l);
        max_label = std::max<int>(max_label, l);
    }
    d.classes = static_cast<std::size_t>(max_label) + 1;
    return d;
}

Dataset synthetic_blobs(std::size_t samples, std::size_t features, std::size_t classes, double noise,
                        std::uint64_t seed) {
    if (samples == 0 || features == 0 || classes < 2) throw ConfigError("bad synthetic dataset shape");
    Rng rng(seed);
    std::vector<double> centres(classes * features);
    for (auto& c : centres) c = rng.normal();
    Dataset d;
    d.n = samples;
    d.features = features;
    d.classes = classes;
    d.x.resize(samples * features);
    d.y.resize(samples);
    for (std::size_t i = 0; i < samples; ++i) {
        const auto c = static_cast<std::size_t>(rng.below(classes));
        d.y[i] = static_cast<int>(c);
        for (std::size_t j = 0; j < features; ++j) {
            d.x[i * features + j] = static_cast<float>(centres[c * features + j] + noise * rng.normal());
        }
    }
    return d;
}

Dataset load_mnist(std::string dir) {
    if (dir.empty()) {
        if (const char* env = std::getenv("DMOE_DATA_DIR")) dir = env;
    }
    namespace fs = std::filesystem;
    const fs::path images = fs::path(dir) / "train-images-idx3-ubyte";
    const fs::path labels = fs::path(dir) / "train-labels-idx1-ubyte";
    if (dir.empty() || !fs::exists(images) || !fs::exists(labels)) {
        throw ConfigError(
            "MNIST not found" + (dir.empty() ? std::string(" (no data_dir and DMOE_DATA_DIR unset)") : " in " + dir) +
            ". Download train-images-idx3-ubyte.gz and train-labels-idx1-ubyte.gz from "
            "http://yann.lecun.com/exdb/mnist/, gunzip them into a directory and point DMOE_DATA_DIR "
            "(or data_dir) at it, or set dataset = synthetic");
    }
    return to_dataset(load_idx(images.string(), labels.string()));
}

template <typename T>
trainer::BatchSource<T> batch_source(const Dataset& data, std::size_t batch_size, std::uint64_t seed) {
    if (batch_size == 0 || batch_size > data.n) throw ConfigError("batch_size must be in [1, dataset size]");
    auto shared = std::make_shared<const Dataset>(data);
    auto perms = std::make_shared<std::map<std::uint64_t, std::vector<std::uint32_t>>>();
    return [shared, perms, batch_size, seed](std::uint64_t step) {
        const Dataset& d = *shared;
        auto perm = [&](std::uint64_t epoch) -> const std::vector<std::uint32_t>& {
            auto it = perms->find(epoch);
            if (it != perms->end()) return it->second;
            std::vector<std::uint32_t> p(d.n);
            for (std::size_t i = 0; i < d.n; ++i) p[i] = static_cast<std::uint32_t>(i);
            Rng rng(seed * 0x9E3779B97F4A7C15ULL + epoch);
            rng.shuffle(p.begin(), p.end());
            if (perms->size() > 4) perms->erase(perms->begin());
            return perms->emplace(epoch, std::move(p)).first->second;
        };
        trainer::Batch<T> b;
        b.index = step;
        b.x = nn::BasicTensor<T>({batch_size, d.features});
        b.labels.resize(batch_size);
        const std::uint64_t first = step * batch_size;
        for (std::size_t r = 0; r < batch_size; ++r) {
            const std::uint64_t flat = first + r;
            const auto row = perm(flat / d.n)[flat % d.n];
            for (std::size_t j = 0; j < d.features; ++j) b.x(r, j) = static_cast<T>(d.x[row * d.features + j]);
            b.labels[r] = d.y[row];
        }
        return b;
    };
}

template trainer::BatchSource<float> batch_source<float>(const Dataset&, std::size_t, std::uint64_t);
template trainer::BatchSource<double> batch_source<double>(const Dataset&, std::size_t, std::uint64_t);

}  // namespace swarm::experiments
