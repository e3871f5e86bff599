#pragma once

#include "disro/core/tensor.hpp"

#include <map>
#include <string>
#include <vector>

namespace disro::eval {

/// First two principal components of the rows of a [N,D] matrix.
Tensor pca_2d(const Tensor& rows);

struct Series {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
};

void write_line_chart(const std::string& path, const std::string& title,
                      const std::vector<Series>& series, const std::string& x_label = "",
                      const std::string& y_label = "");

struct PointGroup {
    std::string name;
    std::vector<std::pair<double, double>> points;
};

void write_scatter(const std::string& path, const std::string& title,
                   const std::vector<PointGroup>& groups);

/// Binned value histogram, one outline per named series.
void write_value_histogram(const std::string& path, const std::string& title,
                           const std::map<std::string, std::vector<double>>& series, int bins = 40);

/// Dispatch on the input file: loss NDJSON -> per-loss curves; embeddings CSV
/// -> per-branch PCA scatters (plus value histograms for the ds branch);
/// report JSON with an iteration sweep -> sweep curve. Returns written paths.
std::vector<std::string> plot_file(const std::string& input_path, const std::string& out_dir);

}  // namespace disro::eval
