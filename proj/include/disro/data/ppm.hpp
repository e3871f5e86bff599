#pragma once

#include "disro/data/dataset.hpp"

#include <string>

namespace disro::data {

/// Binary P6 image, pixels scaled to [0,1]. Returns [3,H,W].
Tensor read_ppm(const std::string& path);

/// Writes a [C,H,W] (C = 1 or 3) or [1,C,H,W] tensor as binary P6.
void write_ppm(const std::string& path, const Tensor& image);

/// root/<class_name>/*.ppm; classes ordered by directory name, images by file name.
Dataset load_image_folder(const std::string& root);

}  // namespace disro::data
