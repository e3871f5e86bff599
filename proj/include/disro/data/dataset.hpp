#pragma once

#include "disro/attacks/attacks.hpp"
#include "disro/core/rng.hpp"
#include "disro/core/tensor.hpp"

#include <stdexcept>
#include <string>
#include <vector>

namespace disro::data {

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class DatasetSource { cifar10_binary, image_folder, synthetic };
enum class Normalization { none, per_channel_mean_std };

const char* to_string(DatasetSource s);
const char* to_string(Normalization n);
DatasetSource source_from_string(const std::string& s);
Normalization normalization_from_string(const std::string& s);

/// Synthetic corpus: per class, a localized smooth blob whose amplitude
/// comfortably exceeds the attack budget (the robust signal, with per-sample
/// strength jitter) plus a dense sub-budget checkerboard-family pattern that
/// is highly predictive on clean data but flippable inside the epsilon ball
/// (the fragile signal), on a 0.5 background with Gaussian pixel noise.
struct SyntheticSpec {
    int64_t num_classes = 2;
    int64_t samples_per_class = 500;
    int64_t channels = 3;
    int64_t height = 16;
    int64_t width = 16;
    double robust_amplitude = 30.0 / 255.0;
    double robust_strength_mean = 1.0;
    double robust_strength_spread = 0.45;  // per-sample strength ~ max(0, N(mean, spread))
    double fragile_amplitude = 7.0 / 255.0;
    double noise_sigma = 0.06;

    void validate() const;
};

struct DatasetSpec {
    DatasetSource source = DatasetSource::synthetic;
    std::string root;                // cifar10_binary / image_folder location
    std::vector<int> class_filter;   // original class ids to keep; remapped densely in this order
    int64_t per_class_limit = 0;     // cap per class within each split; 0 = unlimited
    double split_train = 0.8;
    double split_val = 0.1;
    double split_test = 0.1;
    Normalization normalization = Normalization::none;
    uint64_t seed = 0;
    SyntheticSpec synthetic;

    void validate() const;
};

struct Dataset {
    Tensor images;  // [N,C,H,W], values in [0,1]
    std::vector<int> labels;
    int64_t num_classes = 0;

    int64_t size() const { return images.empty() ? 0 : images.dim(0); }
    attacks::ImageBatch batch(const std::vector<int64_t>& indices) const;
    attacks::ImageBatch all() const;
    Tensor image(int64_t i) const;  // [1,C,H,W]
};

struct SplitDataset {
    Dataset train, val, test;
    int64_t num_classes = 0;
    std::vector<double> norm_mean, norm_std;  // train-split statistics when requested
};

/// Deterministic load, split, filter and subset; pixels scaled to [0,1].
SplitDataset load_dataset(const DatasetSpec& spec);

/// Full synthetic pool before splitting. Fully deterministic in seed.
Dataset make_synthetic(const SyntheticSpec& spec, uint64_t seed);

/// Class-mean patterns of the synthetic generator (noise-free, unit strength);
/// the construction target for nearest-mean sanity checks.
Tensor synthetic_class_mean(const SyntheticSpec& spec, int cls);

/// Shuffled drop-last batch index lists for one epoch.
std::vector<std::vector<int64_t>> epoch_batches(int64_t n, int64_t batch_size, Rng& rng);

}  // namespace disro::data
