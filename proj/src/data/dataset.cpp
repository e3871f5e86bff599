#include "disro/data/dataset.hpp"

#include "disro/data/ppm.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>

namespace disro::data {

namespace fs = std::filesystem;

const char* to_string(DatasetSource s) {
    switch (s) {
        case DatasetSource::cifar10_binary: return "cifar10_binary";
        case DatasetSource::image_folder: return "image_folder";
        case DatasetSource::synthetic: return "synthetic";
    }
    return "?";
}

const char* to_string(Normalization n) {
    return n == Normalization::none ? "none" : "per_channel_mean_std";
}

DatasetSource source_from_string(const std::string& s) {
    if (s == "cifar10_binary") return DatasetSource::cifar10_binary;
    if (s == "image_folder") return DatasetSource::image_folder;
    if (s == "synthetic") return DatasetSource::synthetic;
    throw DataError("unknown dataset source: " + s);
}

Normalization normalization_from_string(const std::string& s) {
    if (s == "none") return Normalization::none;
    if (s == "per_channel_mean_std") return Normalization::per_channel_mean_std;
    throw DataError("unknown normalization: " + s);
}

void SyntheticSpec::validate() const {
    if (num_classes < 2) throw DataError("SyntheticSpec: num_classes must be >= 2");
    if (samples_per_class < 1) throw DataError("SyntheticSpec: samples_per_class must be >= 1");
    if (channels < 1 || height < 4 || width < 4) throw DataError("SyntheticSpec: image too small");
    if (robust_amplitude < 0 || fragile_amplitude < 0 || noise_sigma < 0)
        throw DataError("SyntheticSpec: amplitudes must be >= 0");
}

void DatasetSpec::validate() const {
    if (std::abs(split_train + split_val + split_test - 1.0) > 1e-9)
        throw DataError("DatasetSpec: split fractions must sum to 1");
    if (split_train < 0 || split_val < 0 || split_test < 0)
        throw DataError("DatasetSpec: split fractions must be >= 0");
    if (per_class_limit < 0) throw DataError("DatasetSpec: per_class_limit must be >= 1 when present");
    if (source == DatasetSource::synthetic) synthetic.validate();
    if (source != DatasetSource::synthetic && root.empty())
        throw DataError("DatasetSpec: root path required for file-backed sources");
}

attacks::ImageBatch Dataset::batch(const std::vector<int64_t>& indices) const {
    const int64_t c = images.dim(1), h = images.dim(2), w = images.dim(3);
    const int64_t per = c * h * w;
    Tensor out({static_cast<int64_t>(indices.size()), c, h, w});
    std::vector<int> lab(indices.size());
    for (size_t k = 0; k < indices.size(); ++k) {
        const int64_t i = indices[k];
        std::copy(images.data() + i * per, images.data() + (i + 1) * per,
                  out.data() + static_cast<int64_t>(k) * per);
        lab[k] = labels[static_cast<size_t>(i)];
    }
    return {std::move(out), std::move(lab)};
}

attacks::ImageBatch Dataset::all() const {
    std::vector<int64_t> idx(static_cast<size_t>(size()));
    std::iota(idx.begin(), idx.end(), 0);
    return batch(idx);
}

Tensor Dataset::image(int64_t i) const {
    const int64_t per = images.dim(1) * images.dim(2) * images.dim(3);
    Tensor out({1, images.dim(1), images.dim(2), images.dim(3)});
    std::copy(images.data() + i * per, images.data() + (i + 1) * per, out.data());
    return out;
}

// -- Synthetic generator ------------------------------------------------------

namespace {

/// Class-dependent fragile sign pattern; checkerboard family so that one small
/// shared conv filter detects it anywhere in the image.
double fragile_sign(int cls, int64_t ch, int64_t y, int64_t x) {
    const int base = ((y + x) % 2 == 0) ? 1 : -1;
    switch (cls % 4) {
        case 0: return base;
        case 1: return -base;
        case 2: return (x % 2 == 0) ? 1 : -1;
        default: return ((y + static_cast<int64_t>(ch)) % 2 == 0) ? 1 : -1;
    }
}

struct BlobCenter {
    double cy, cx;
};

BlobCenter blob_center(const SyntheticSpec& s, int cls) {
    // Centers on a 2x2 (or wider) grid of quadrant midpoints.
    const int grid = std::max<int>(2, static_cast<int>(std::ceil(std::sqrt(double(s.num_classes)))));
    const int gy = cls / grid, gx = cls % grid;
    return {(gy + 0.5) * static_cast<double>(s.height) / grid,
            (gx + 0.5) * static_cast<double>(s.width) / grid};
}

double blob_value(const SyntheticSpec& s, int cls, int64_t y, int64_t x) {
    const auto c = blob_center(s, cls);
    const double sigma = static_cast<double>(std::min(s.height, s.width)) / 6.0;
    const double dy = (static_cast<double>(y) - c.cy) / sigma;
    const double dx = (static_cast<double>(x) - c.cx) / sigma;
    return std::exp(-0.5 * (dy * dy + dx * dx));
}

}  // namespace

Tensor synthetic_class_mean(const SyntheticSpec& spec, int cls) {
    Tensor img({spec.channels, spec.height, spec.width});
    for (int64_t ch = 0; ch < spec.channels; ++ch)
        for (int64_t y = 0; y < spec.height; ++y)
            for (int64_t x = 0; x < spec.width; ++x) {
                double v = 0.5 + spec.robust_strength_mean * spec.robust_amplitude * blob_value(spec, cls, y, x) +
                           spec.fragile_amplitude * fragile_sign(cls, ch, y, x);
                img[(ch * spec.height + y) * spec.width + x] = std::clamp(v, 0.0, 1.0);
            }
    return img;
}

Dataset make_synthetic(const SyntheticSpec& spec, uint64_t seed) {
    spec.validate();
    const int64_t n = spec.num_classes * spec.samples_per_class;
    Dataset ds;
    ds.images = Tensor({n, spec.channels, spec.height, spec.width});
    ds.labels.resize(static_cast<size_t>(n));
    ds.num_classes = spec.num_classes;
    Rng rng(seed, "synthetic");
    int64_t i = 0;
    for (int cls = 0; cls < spec.num_classes; ++cls) {
        for (int64_t k = 0; k < spec.samples_per_class; ++k, ++i) {
            ds.labels[static_cast<size_t>(i)] = cls;
            const double strength =
                std::max(0.0, rng.normal(spec.robust_strength_mean, spec.robust_strength_spread));
            double* img = ds.images.data() + i * spec.channels * spec.height * spec.width;
            for (int64_t ch = 0; ch < spec.channels; ++ch)
                for (int64_t y = 0; y < spec.height; ++y)
                    for (int64_t x = 0; x < spec.width; ++x) {
                        double v = 0.5 + strength * spec.robust_amplitude * blob_value(spec, cls, y, x) +
                                   spec.fragile_amplitude * fragile_sign(cls, ch, y, x);
                        if (spec.noise_sigma > 0.0) v += rng.normal(0.0, spec.noise_sigma);
                        img[(ch * spec.height + y) * spec.width + x] = std::clamp(v, 0.0, 1.0);
                    }
        }
    }
    return ds;
}

// -- CIFAR-10 binary ----------------------------------------------------------

namespace {

constexpr int64_t kCifarDim = 32;
constexpr int64_t kCifarRecord = 1 + 3 * kCifarDim * kCifarDim;

void read_cifar_file(const std::string& path, std::vector<unsigned char>& labels,
                     std::vector<unsigned char>& pixels) {
    std::ifstream is(path, std::ios::binary | std::ios::ate);
    if (!is) throw DataError("cifar10_binary: cannot open " + path);
    const auto sz = static_cast<int64_t>(is.tellg());
    if (sz % kCifarRecord != 0)
        throw DataError("cifar10_binary: corrupt file (size not a record multiple): " + path);
    is.seekg(0);
    const int64_t n = sz / kCifarRecord;
    std::vector<unsigned char> buf(static_cast<size_t>(kCifarRecord));
    for (int64_t i = 0; i < n; ++i) {
        if (!is.read(reinterpret_cast<char*>(buf.data()), kCifarRecord))
            throw DataError("cifar10_binary: corrupt record in " + path + " at offset " +
                            std::to_string(i * kCifarRecord));
        if (buf[0] > 9)
            throw DataError("cifar10_binary: bad label in " + path + " at offset " +
                            std::to_string(i * kCifarRecord));
        labels.push_back(buf[0]);
        pixels.insert(pixels.end(), buf.begin() + 1, buf.end());
    }
}

Dataset from_bytes(const std::vector<unsigned char>& labels, const std::vector<unsigned char>& pixels,
                   int64_t c, int64_t h, int64_t w) {
    Dataset ds;
    const int64_t n = static_cast<int64_t>(labels.size());
    ds.images = Tensor({n, c, h, w});
    ds.labels.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) ds.labels[static_cast<size_t>(i)] = labels[static_cast<size_t>(i)];
    for (int64_t i = 0; i < static_cast<int64_t>(pixels.size()); ++i)
        ds.images[i] = static_cast<double>(pixels[static_cast<size_t>(i)]) / 255.0;
    int mx = 0;
    for (int l : ds.labels) mx = std::max(mx, l);
    ds.num_classes = mx + 1;
    return ds;
}

}  // namespace

// -- Splitting and filtering --------------------------------------------------

namespace {

std::vector<int64_t> shuffled_indices(int64_t n, Rng& rng) {
    std::vector<int64_t> idx(static_cast<size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    for (int64_t i = n - 1; i > 0; --i) {
        const auto j = static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(i + 1)));
        std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
    }
    return idx;
}

Dataset take(const Dataset& src, const std::vector<int64_t>& indices) {
    Dataset out;
    auto b = src.batch(indices);
    out.images = std::move(b.pixels);
    out.labels = std::move(b.labels);
    out.num_classes = src.num_classes;
    return out;
}

/// Apply class_filter (with dense remap) and per_class_limit to one split.
Dataset filter_split(const Dataset& src, const DatasetSpec& spec) {
    std::map<int, int> remap;
    if (!spec.class_filter.empty()) {
        for (size_t i = 0; i < spec.class_filter.size(); ++i)
            remap[spec.class_filter[i]] = static_cast<int>(i);
        for (int cls : spec.class_filter)
            if (cls < 0 || cls >= src.num_classes)
                throw DataError("class_filter names absent class " + std::to_string(cls));
    }
    std::map<int, int64_t> kept;
    std::vector<int64_t> indices;
    std::vector<int> new_labels;
    for (int64_t i = 0; i < src.size(); ++i) {
        int lab = src.labels[static_cast<size_t>(i)];
        if (!remap.empty()) {
            auto it = remap.find(lab);
            if (it == remap.end()) continue;
            lab = it->second;
        }
        if (spec.per_class_limit > 0 && kept[lab] >= spec.per_class_limit) continue;
        ++kept[lab];
        indices.push_back(i);
        new_labels.push_back(lab);
    }
    Dataset out = take(src, indices);
    out.labels = std::move(new_labels);
    out.num_classes = remap.empty() ? src.num_classes : static_cast<int64_t>(remap.size());
    return out;
}

void compute_norm_stats(const Dataset& train, std::vector<double>& mean, std::vector<double>& std) {
    const int64_t c = train.images.dim(1), per = train.images.dim(2) * train.images.dim(3);
    const int64_t n = train.size();
    mean.assign(static_cast<size_t>(c), 0.0);
    std.assign(static_cast<size_t>(c), 0.0);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t ch = 0; ch < c; ++ch) {
            const double* p = train.images.data() + (i * c + ch) * per;
            for (int64_t k = 0; k < per; ++k) mean[static_cast<size_t>(ch)] += p[k];
        }
    for (auto& m : mean) m /= static_cast<double>(n * per);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t ch = 0; ch < c; ++ch) {
            const double* p = train.images.data() + (i * c + ch) * per;
            for (int64_t k = 0; k < per; ++k) {
                const double d = p[k] - mean[static_cast<size_t>(ch)];
                std[static_cast<size_t>(ch)] += d * d;
            }
        }
    for (auto& s : std) s = std::sqrt(std::max(s / static_cast<double>(n * per), 1e-12));
}

}  // namespace

SplitDataset load_dataset(const DatasetSpec& spec) {
    spec.validate();
    SplitDataset out;
    if (spec.source == DatasetSource::cifar10_binary) {
        // File-given test split; train files partitioned into train/val.
        std::vector<unsigned char> lab, pix;
        for (int i = 1; i <= 5; ++i)
            read_cifar_file(spec.root + "/data_batch_" + std::to_string(i) + ".bin", lab, pix);
        Dataset train_pool = from_bytes(lab, pix, 3, kCifarDim, kCifarDim);
        train_pool.num_classes = 10;
        lab.clear();
        pix.clear();
        read_cifar_file(spec.root + "/test_batch.bin", lab, pix);
        Dataset test_pool = from_bytes(lab, pix, 3, kCifarDim, kCifarDim);
        test_pool.num_classes = 10;

        Rng rng(spec.seed, "split");
        auto idx = shuffled_indices(train_pool.size(), rng);
        const double tf = spec.split_train + spec.split_val;
        const auto n_train =
            static_cast<int64_t>(std::llround(static_cast<double>(idx.size()) * (tf > 0 ? spec.split_train / tf : 1.0)));
        out.train = take(train_pool, {idx.begin(), idx.begin() + n_train});
        out.val = take(train_pool, {idx.begin() + n_train, idx.end()});
        out.test = std::move(test_pool);
    } else {
        Dataset pool = spec.source == DatasetSource::synthetic
                           ? make_synthetic(spec.synthetic, spec.seed)
                           : load_image_folder(spec.root);
        Rng rng(spec.seed, "split");
        auto idx = shuffled_indices(pool.size(), rng);
        const auto n = static_cast<int64_t>(idx.size());
        const auto n_train = static_cast<int64_t>(std::llround(n * spec.split_train));
        const auto n_val = static_cast<int64_t>(std::llround(n * spec.split_val));
        out.train = take(pool, {idx.begin(), idx.begin() + n_train});
        out.val = take(pool, {idx.begin() + n_train, idx.begin() + std::min(n, n_train + n_val)});
        out.test = take(pool, {idx.begin() + std::min(n, n_train + n_val), idx.end()});
    }
    out.train = filter_split(out.train, spec);
    out.val = filter_split(out.val, spec);
    out.test = filter_split(out.test, spec);
    out.num_classes = out.train.num_classes;
    if (spec.normalization == Normalization::per_channel_mean_std)
        compute_norm_stats(out.train, out.norm_mean, out.norm_std);
    return out;
}

std::vector<std::vector<int64_t>> epoch_batches(int64_t n, int64_t batch_size, Rng& rng) {
    auto idx = shuffled_indices(n, rng);
    std::vector<std::vector<int64_t>> out;
    for (int64_t start = 0; start + batch_size <= n; start += batch_size)
        out.emplace_back(idx.begin() + start, idx.begin() + start + batch_size);
    return out;
}

}  // namespace disro::data
