#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <vector>

namespace haht {

// Dense row-major tensor of doubles. Rank 1 (vectors) and rank 2 (matrices)
// cover everything the model needs; the shape is kept general so checkpoints
// can describe any parameter.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape)
        : shape_(std::move(shape)), data_(count(shape_), 0.0) {}

    Tensor(std::size_t rows, std::size_t cols)
        : Tensor(std::vector<std::size_t>{rows, cols}) {}

    static Tensor vector(std::size_t n) {
        return Tensor(std::vector<std::size_t>{n});
    }

    static Tensor row_matrix(const std::vector<double>& values) {
        Tensor t(1, values.size());
        t.data_ = values;
        return t;
    }

    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
        std::size_t r = rows.size();
        std::size_t c = r == 0 ? 0 : rows.begin()->size();
        Tensor t(r, c);
        std::size_t i = 0;
        for (const auto& row : rows) {
            if (row.size() != c) throw std::invalid_argument("Tensor::matrix: ragged rows");
            for (double v : row) t.data_[i++] = v;
        }
        return t;
    }

    static Tensor from_vector(const std::vector<double>& values) {
        Tensor t = Tensor::vector(values.size());
        t.data_ = values;
        return t;
    }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t numel() const { return data_.size(); }

    std::size_t rows() const {
        if (rank() != 2) throw std::logic_error("Tensor::rows: not a matrix");
        return shape_[0];
    }
    std::size_t cols() const {
        if (rank() != 2) throw std::logic_error("Tensor::cols: not a matrix");
        return shape_[1];
    }

    double& operator()(std::size_t i) { return data_[i]; }
    double operator()(std::size_t i) const { return data_[i]; }
    double& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    void fill(double v) { data_.assign(data_.size(), v); }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    double max_abs_diff(const Tensor& other) const {
        if (!same_shape(other)) throw std::invalid_argument("max_abs_diff: shape mismatch");
        double m = 0.0;
        for (std::size_t i = 0; i < data_.size(); ++i)
            m = std::max(m, std::abs(data_[i] - other.data_[i]));
        return m;
    }

    bool operator==(const Tensor& other) const {
        return shape_ == other.shape_ && data_ == other.data_;
    }

private:
    static std::size_t count(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (std::size_t s : shape) n *= s;
        return shape.empty() ? 0 : n;
    }

    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

}  // namespace haht
