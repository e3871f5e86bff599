#include "disro/data/config_io.hpp"
#include "disro/data/dataset.hpp"
#include "disro/data/manifest.hpp"
#include "disro/data/ppm.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

using namespace disro;
using namespace disro::data;

namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    auto p = fs::temp_directory_path() / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

void write_cifar_file(const fs::path& path, int64_t records, unsigned char label_base,
                      bool corrupt_label = false) {
    std::ofstream os(path, std::ios::binary);
    for (int64_t r = 0; r < records; ++r) {
        unsigned char label = corrupt_label ? 12 : static_cast<unsigned char>((label_base + r) % 10);
        os.put(static_cast<char>(label));
        for (int i = 0; i < 3072; ++i) os.put(static_cast<char>((r * 31 + i) % 256));
    }
}

}  // namespace

TEST_CASE("synthetic corpus: counts, determinism, nearest-mean separability") {
    SyntheticSpec spec;
    spec.num_classes = 2;
    spec.samples_per_class = 100;
    auto a = make_synthetic(spec, 42);
    CHECK(a.size() == 200);
    CHECK(a.num_classes == 2);
    for (int64_t i = 0; i < a.images.numel(); ++i) {
        CHECK(a.images[i] >= 0.0);
        CHECK(a.images[i] <= 1.0);
    }
    auto b = make_synthetic(spec, 42);
    CHECK(a.images.bit_equal(b.images));
    CHECK(a.labels == b.labels);
    auto c = make_synthetic(spec, 43);
    CHECK(!a.images.bit_equal(c.images));

    // Noiseless variant: nearest class mean classifies perfectly.
    SyntheticSpec clean = spec;
    clean.noise_sigma = 0.0;
    auto d = make_synthetic(clean, 7);
    std::vector<Tensor> means;
    for (int cls = 0; cls < 2; ++cls) means.push_back(synthetic_class_mean(clean, cls));
    int64_t correct = 0;
    const int64_t per = d.images.numel() / d.size();
    for (int64_t i = 0; i < d.size(); ++i) {
        double best = 1e300;
        int best_cls = -1;
        for (int cls = 0; cls < 2; ++cls) {
            double s = 0.0;
            for (int64_t j = 0; j < per; ++j) {
                const double diff = d.images[i * per + j] - means[static_cast<size_t>(cls)][j];
                s += diff * diff;
            }
            if (s < best) {
                best = s;
                best_cls = cls;
            }
        }
        if (best_cls == d.labels[static_cast<size_t>(i)]) ++correct;
    }
    CHECK(correct == d.size());
}

TEST_CASE("load_dataset synthetic: split fractions, filtering, determinism") {
    DatasetSpec spec;
    spec.source = DatasetSource::synthetic;
    spec.synthetic.num_classes = 3;
    spec.synthetic.samples_per_class = 50;
    spec.split_train = 0.6;
    spec.split_val = 0.2;
    spec.split_test = 0.2;
    spec.seed = 5;
    auto s = load_dataset(spec);
    CHECK(s.train.size() == 90);
    CHECK(s.val.size() == 30);
    CHECK(s.test.size() == 30);
    CHECK(s.num_classes == 3);

    DatasetSpec filt = spec;
    filt.class_filter = {2, 0};
    filt.per_class_limit = 10;
    auto f = load_dataset(filt);
    CHECK(f.num_classes == 2);
    CHECK(f.train.size() <= 20);
    for (int lab : f.train.labels) CHECK((lab == 0 || lab == 1));
    CHECK(f.train.size() > 0);

    auto again = load_dataset(filt);
    CHECK(f.train.images.bit_equal(again.train.images));
    CHECK(f.train.labels == again.train.labels);
    CHECK(f.test.images.bit_equal(again.test.images));

    DatasetSpec missing = spec;
    missing.class_filter = {7};
    CHECK_THROWS_AS(load_dataset(missing), DataError);
}

TEST_CASE("load_dataset synthetic: per-channel normalization stats") {
    DatasetSpec spec;
    spec.source = DatasetSource::synthetic;
    spec.synthetic.samples_per_class = 20;
    spec.normalization = Normalization::per_channel_mean_std;
    auto s = load_dataset(spec);
    REQUIRE(s.norm_mean.size() == 3);
    REQUIRE(s.norm_std.size() == 3);
    for (double m : s.norm_mean) {
        CHECK(m > 0.2);
        CHECK(m < 0.8);
    }
    for (double sd : s.norm_std) CHECK(sd > 0.0);
}

TEST_CASE("cifar10_binary loader: fabricated files, scaling, corruption errors") {
    auto dir = fresh_dir("disro_cifar_test");
    for (int i = 1; i <= 5; ++i)
        write_cifar_file(dir / ("data_batch_" + std::to_string(i) + ".bin"), 4,
                         static_cast<unsigned char>(i));
    write_cifar_file(dir / "test_batch.bin", 4, 0);

    DatasetSpec spec;
    spec.source = DatasetSource::cifar10_binary;
    spec.root = dir.string();
    spec.split_train = 0.8;
    spec.split_val = 0.2;
    spec.split_test = 0.0;
    spec.seed = 1;
    auto s = load_dataset(spec);
    CHECK(s.train.size() == 16);
    CHECK(s.val.size() == 4);
    CHECK(s.test.size() == 4);
    CHECK(s.train.images.shape() == Shape{16, 3, 32, 32});
    for (int64_t i = 0; i < s.train.images.numel(); ++i) {
        CHECK(s.train.images[i] >= 0.0);
        CHECK(s.train.images[i] <= 1.0);
    }

    // Truncated file: error names the file.
    {
        std::ofstream os(dir / "data_batch_1.bin", std::ios::binary);
        for (int i = 0; i < 3072; ++i) os.put(0);
    }
    try {
        load_dataset(spec);
        CHECK(false);
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("data_batch_1.bin") != std::string::npos);
    }

    // Bad label: error names file and offset.
    write_cifar_file(dir / "data_batch_1.bin", 2, 0, /*corrupt_label=*/true);
    try {
        load_dataset(spec);
        CHECK(false);
    } catch (const DataError& e) {
        const std::string w = e.what();
        CHECK(w.find("data_batch_1.bin") != std::string::npos);
        CHECK(w.find("offset") != std::string::npos);
    }
    fs::remove_all(dir);
}

TEST_CASE("cifar10_binary full set when available" * doctest::skip(false)) {
    const char* env = std::getenv("CIFAR10_DIR");
    std::string root = env ? env : "data/cifar-10-batches-bin";
    if (!fs::exists(fs::path(root) / "data_batch_1.bin")) {
        MESSAGE("CIFAR-10 binaries not present; skipping full-set check");
        return;
    }
    DatasetSpec spec;
    spec.source = DatasetSource::cifar10_binary;
    spec.root = root;
    spec.split_train = 1.0;
    spec.split_val = 0.0;
    spec.split_test = 0.0;
    auto s = load_dataset(spec);
    CHECK(s.train.size() == 50000);
    CHECK(s.num_classes == 10);
    CHECK(s.train.images.shape() == Shape{50000, 3, 32, 32});
}

TEST_CASE("ppm round trip and image_folder loading") {
    auto dir = fresh_dir("disro_ppm_test");
    Rng rng(3);
    Tensor img({3, 5, 4});
    for (int64_t i = 0; i < img.numel(); ++i) img[i] = rng.uniform();
    write_ppm((dir / "a.ppm").string(), img);
    Tensor back = read_ppm((dir / "a.ppm").string());
    CHECK(back.shape() == Shape{3, 5, 4});
    CHECK(img.max_abs_diff(back) <= 0.5 / 255.0 + 1e-9);

    fs::create_directories(dir / "cats");
    fs::create_directories(dir / "dogs");
    write_ppm((dir / "cats" / "0.ppm").string(), img);
    write_ppm((dir / "cats" / "1.ppm").string(), img);
    write_ppm((dir / "dogs" / "0.ppm").string(), img);
    auto ds = load_image_folder(dir.string());
    CHECK(ds.size() == 3);
    CHECK(ds.num_classes == 2);
    CHECK(ds.labels == std::vector<int>{0, 0, 1});
    fs::remove_all(dir);
}

TEST_CASE("config round trip, unknown keys, pixel-unit budgets") {
    RunConfig cfg;
    cfg.seed = 9;
    cfg.dataset.synthetic.samples_per_class = 33;
    cfg.train.epochs = 5;
    cfg.attack.epsilon = 8.0 / 255.0;
    const auto path = (fs::temp_directory_path() / "disro_config_test.json").string();
    write_config(path, cfg);
    auto rt = read_config(path);
    CHECK(config_to_json(rt).dump() == config_to_json(cfg).dump());
    fs::remove(path);

    nlohmann::json bad = config_to_json(cfg);
    bad["attack"]["epsilonn"] = 8;
    try {
        config_from_json(bad);
        CHECK(false);
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("attack.epsilonn") != std::string::npos);
    }

    nlohmann::json px = {{"attack", {{"epsilon", 8}, {"step_size", 2}, {"num_steps", 20}}}};
    auto c2 = config_from_json(px);
    CHECK(c2.attack.epsilon == doctest::Approx(8.0 / 255.0).epsilon(1e-12));
    CHECK(c2.attack.step_size == doctest::Approx(2.0 / 255.0).epsilon(1e-12));
    CHECK(c2.metadata["original_units"]["attack.epsilon"] == 8);
    // Original units survive a write/read cycle.
    write_config(path, c2);
    auto c3 = read_config(path);
    CHECK(c3.metadata["original_units"]["attack.epsilon"] == 8);
    CHECK(c3.attack.epsilon == doctest::Approx(8.0 / 255.0).epsilon(1e-12));
    fs::remove(path);
}

TEST_CASE("epoch batches: shuffled, disjoint, drop-last, deterministic") {
    Rng r1(5), r2(5);
    auto b1 = epoch_batches(103, 20, r1);
    auto b2 = epoch_batches(103, 20, r2);
    CHECK(b1.size() == 5);  // 103 / 20, remainder dropped
    CHECK(b1 == b2);
    std::vector<bool> seen(103, false);
    for (const auto& batch : b1) {
        CHECK(batch.size() == 20);
        for (int64_t i : batch) {
            CHECK(!seen[static_cast<size_t>(i)]);
            seen[static_cast<size_t>(i)] = true;
        }
    }
}

TEST_CASE("manifest: exactly one appended record per run") {
    auto dir = fresh_dir("disro_manifest_test");
    RunManifest m;
    m.run_id = make_run_id("train", 3);
    m.command = "train";
    m.config_snapshot = {{"seed", 3}};
    m.config_hash = "abc";
    m.build = "test";
    m.seed = 3;
    m.started_at = now_iso8601();
    m.finished_at = now_iso8601();
    m.artifacts = {"best.ckpt"};
    append_manifest(dir.string(), m);
    append_manifest(dir.string(), m);
    std::ifstream is(dir / "manifests.ndjson");
    std::string line;
    int64_t lines = 0;
    while (std::getline(is, line)) {
        ++lines;
        auto j = nlohmann::json::parse(line);
        CHECK(j.at("command") == "train");
        CHECK(j.at("artifacts").size() == 1);
    }
    CHECK(lines == 2);
    fs::remove_all(dir);
}
