#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace disro {

using Shape = std::vector<int64_t>;

using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrixXd>;
using ConstMatMap = Eigen::Map<const RowMatrixXd>;
using VecMap = Eigen::Map<Eigen::ArrayXd>;
using ConstVecMap = Eigen::Map<const Eigen::ArrayXd>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

/// Dense tensor of doubles, row-major (C-contiguous) layout, up to 4 dims.
/// Value semantics: copies copy the data.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape) : shape_(std::move(shape)) {
        data_.setZero(shape_numel(shape_));
    }

    Tensor(Shape shape, Eigen::ArrayXd data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != shape_numel(shape_))
            throw std::invalid_argument("Tensor: data size does not match shape " + shape_str(shape_));
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    static Tensor full(Shape shape, double v) {
        Tensor t(std::move(shape));
        t.data_.setConstant(v);
        return t;
    }

    static Tensor scalar(double v) { return full({1}, v); }

    static Tensor from_vector(Shape shape, const std::vector<double>& v) {
        Tensor t(std::move(shape));
        if (static_cast<int64_t>(v.size()) != t.numel())
            throw std::invalid_argument("Tensor::from_vector: size mismatch");
        for (int64_t i = 0; i < t.numel(); ++i) t.data_[i] = v[static_cast<size_t>(i)];
        return t;
    }

    const Shape& shape() const { return shape_; }
    int64_t ndim() const { return static_cast<int64_t>(shape_.size()); }
    int64_t dim(int64_t i) const { return shape_[static_cast<size_t>(i)]; }
    int64_t numel() const { return data_.size(); }
    bool empty() const { return data_.size() == 0; }

    Eigen::ArrayXd& array() { return data_; }
    const Eigen::ArrayXd& array() const { return data_; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](int64_t i) { return data_[i]; }
    double operator[](int64_t i) const { return data_[i]; }

    double& at(int64_t i, int64_t j) { return data_[i * dim(1) + j]; }
    double at(int64_t i, int64_t j) const { return data_[i * dim(1) + j]; }

    double& at4(int64_t n, int64_t c, int64_t h, int64_t w) {
        return data_[((n * dim(1) + c) * dim(2) + h) * dim(3) + w];
    }
    double at4(int64_t n, int64_t c, int64_t h, int64_t w) const {
        return data_[((n * dim(1) + c) * dim(2) + h) * dim(3) + w];
    }

    /// View as rows x cols row-major matrix. numel must match.
    MatMap mat(int64_t rows, int64_t cols) {
        if (rows * cols != numel()) throw std::invalid_argument("Tensor::mat: size mismatch");
        return MatMap(data_.data(), rows, cols);
    }
    ConstMatMap mat(int64_t rows, int64_t cols) const {
        if (rows * cols != numel()) throw std::invalid_argument("Tensor::mat: size mismatch");
        return ConstMatMap(data_.data(), rows, cols);
    }

    /// 2-D view using the tensor's own shape (ndim must be 2).
    MatMap mat2() { return mat(dim(0), dim(1)); }
    ConstMatMap mat2() const { return mat(dim(0), dim(1)); }

    Tensor reshaped(Shape s) const {
        if (shape_numel(s) != numel()) throw std::invalid_argument("Tensor::reshaped: size mismatch");
        return Tensor(std::move(s), data_);
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const { return data_.isFinite().all(); }

    double max_abs_diff(const Tensor& o) const {
        if (!same_shape(o)) throw std::invalid_argument("max_abs_diff: shape mismatch");
        if (numel() == 0) return 0.0;
        return (data_ - o.data_).abs().maxCoeff();
    }

    bool bit_equal(const Tensor& o) const {
        if (!same_shape(o)) return false;
        for (int64_t i = 0; i < numel(); ++i)
            if (data_[i] != o.data_[i]) return false;
        return true;
    }

private:
    Shape shape_;
    Eigen::ArrayXd data_;
};

}  // namespace disro
