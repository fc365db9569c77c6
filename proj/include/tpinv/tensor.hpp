#pragma once

#include <cassert>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

namespace tpinv {

using Scalar = double;

// Dense row-major tensor. Rank is small (<= 4 in practice).
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        data_.assign(count(shape_), Scalar(0));
    }
    Tensor(std::vector<int> shape, std::vector<Scalar> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        assert(data_.size() == count(shape_));
    }

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<int> shape, Scalar v) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), v);
        return t;
    }
    static Tensor scalar(Scalar v) { return Tensor({1}, {v}); }

    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    const std::vector<int>& shape() const { return shape_; }
    size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    Scalar* data() { return data_.data(); }
    const Scalar* data() const { return data_.data(); }

    Scalar& operator[](size_t i) { return data_[i]; }
    Scalar operator[](size_t i) const { return data_[i]; }

    Scalar& at(int i) { return data_[static_cast<size_t>(i)]; }
    Scalar& at(int i, int j) { return data_[static_cast<size_t>(i) * shape_[1] + j]; }
    Scalar& at(int i, int j, int k) {
        return data_[(static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k];
    }
    Scalar& at(int i, int j, int k, int l) {
        return data_[((static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
    }
    Scalar at(int i) const { return data_[static_cast<size_t>(i)]; }
    Scalar at(int i, int j) const { return data_[static_cast<size_t>(i) * shape_[1] + j]; }
    Scalar at(int i, int j, int k) const {
        return data_[(static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k];
    }
    Scalar at(int i, int j, int k, int l) const {
        return data_[((static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    void fill(Scalar v) { std::fill(data_.begin(), data_.end(), v); }

    Tensor reshaped(std::vector<int> shape) const {
        assert(count(shape) == data_.size());
        return Tensor(std::move(shape), data_);
    }

    static size_t count(const std::vector<int>& shape) {
        size_t n = 1;
        for (int d : shape) n *= static_cast<size_t>(d);
        return shape.empty() ? 0 : n;
    }

    std::string shape_str() const {
        std::string s = "[";
        for (size_t i = 0; i < shape_.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape_[i]);
        }
        return s + "]";
    }

private:
    std::vector<int> shape_;
    std::vector<Scalar> data_;
};

}  // namespace tpinv
