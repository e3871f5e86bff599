#include "disro/data/ppm.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

namespace disro::data {

namespace fs = std::filesystem;

namespace {

int read_header_int(std::istream& is, const std::string& path) {
    // Skip whitespace and '#' comments.
    int c = is.peek();
    while (c == '#' || std::isspace(c)) {
        if (c == '#') {
            std::string line;
            std::getline(is, line);
        } else {
            is.get();
        }
        c = is.peek();
    }
    int v = -1;
    if (!(is >> v) || v < 0) throw DataError("ppm: corrupt header in " + path);
    return v;
}

}  // namespace

Tensor read_ppm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("ppm: cannot open " + path);
    std::string magic;
    is >> magic;
    if (magic != "P6") throw DataError("ppm: not a P6 file: " + path);
    const int w = read_header_int(is, path);
    const int h = read_header_int(is, path);
    const int maxval = read_header_int(is, path);
    if (maxval != 255) throw DataError("ppm: only maxval 255 supported: " + path);
    is.get();  // single whitespace after header
    std::vector<unsigned char> buf(static_cast<size_t>(3 * w * h));
    if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
        throw DataError("ppm: truncated pixel data in " + path);
    Tensor img({3, h, w});
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            for (int64_t ch = 0; ch < 3; ++ch)
                img[(ch * h + y) * w + x] =
                    static_cast<double>(buf[static_cast<size_t>((y * w + x) * 3 + ch)]) / 255.0;
    return img;
}

void write_ppm(const std::string& path, const Tensor& image) {
    Tensor img = image;
    if (img.ndim() == 4 && img.dim(0) == 1) img = img.reshaped({img.dim(1), img.dim(2), img.dim(3)});
    if (img.ndim() != 3 || (img.dim(0) != 1 && img.dim(0) != 3))
        throw DataError("ppm: expected [C,H,W] with 1 or 3 channels");
    const int64_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("ppm: cannot write " + path);
    os << "P6\n" << w << " " << h << "\n255\n";
    std::vector<unsigned char> buf(static_cast<size_t>(3 * w * h));
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            for (int64_t ch = 0; ch < 3; ++ch) {
                const int64_t src_ch = c == 3 ? ch : 0;
                const double v = std::clamp(img[(src_ch * h + y) * w + x], 0.0, 1.0);
                buf[static_cast<size_t>((y * w + x) * 3 + ch)] =
                    static_cast<unsigned char>(std::lround(v * 255.0));
            }
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

Dataset load_image_folder(const std::string& root) {
    if (!fs::is_directory(root)) throw DataError("image_folder: not a directory: " + root);
    std::vector<std::string> classes;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory()) classes.push_back(e.path().filename().string());
    std::sort(classes.begin(), classes.end());
    if (classes.empty()) throw DataError("image_folder: no class subdirectories in " + root);

    std::vector<Tensor> images;
    std::vector<int> labels;
    for (size_t cls = 0; cls < classes.size(); ++cls) {
        std::vector<std::string> files;
        for (const auto& e : fs::directory_iterator(fs::path(root) / classes[cls]))
            if (e.is_regular_file() && e.path().extension() == ".ppm")
                files.push_back(e.path().string());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            images.push_back(read_ppm(f));
            labels.push_back(static_cast<int>(cls));
        }
    }
    if (images.empty()) throw DataError("image_folder: no .ppm files under " + root);
    const auto& first = images.front();
    Dataset ds;
    ds.images = Tensor({static_cast<int64_t>(images.size()), first.dim(0), first.dim(1), first.dim(2)});
    const int64_t per = first.numel();
    for (size_t i = 0; i < images.size(); ++i) {
        if (!images[i].same_shape(first)) throw DataError("image_folder: inconsistent image sizes");
        std::copy(images[i].data(), images[i].data() + per,
                  ds.images.data() + static_cast<int64_t>(i) * per);
    }
    ds.labels = std::move(labels);
    ds.num_classes = static_cast<int64_t>(classes.size());
    return ds;
}

}  // namespace disro::data
