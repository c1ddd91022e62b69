#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace dbd {

// Dense 4-D array in NCHW layout, double precision.
// Lower-rank data (per-channel vectors, 2-D maps, scalars) uses singleton dims.
class Tensor {
public:
    Tensor() = default;
    Tensor(int n, int c, int h, int w) : n_(n), c_(c), h_(h), w_(w) {
        if (n < 0 || c < 0 || h < 0 || w < 0)
            throw std::invalid_argument("Tensor: negative dimension");
        data_.assign(static_cast<size_t>(n) * c * h * w, 0.0);
    }

    static Tensor scalar(double v) {
        Tensor t(1, 1, 1, 1);
        t.data_[0] = v;
        return t;
    }
    static Tensor full(int n, int c, int h, int w, double v) {
        Tensor t(n, c, h, w);
        t.fill(v);
        return t;
    }

    int n() const { return n_; }
    int c() const { return c_; }
    int h() const { return h_; }
    int w() const { return w_; }
    size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    bool same_shape(const Tensor& o) const {
        return n_ == o.n_ && c_ == o.c_ && h_ == o.h_ && w_ == o.w_;
    }
    std::string shape_str() const;

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](size_t i) { return data_[i]; }
    double operator[](size_t i) const { return data_[i]; }

    double& at(int n, int c, int h, int w) { return data_[index(n, c, h, w)]; }
    double at(int n, int c, int h, int w) const { return data_[index(n, c, h, w)]; }

    size_t index(int n, int c, int h, int w) const {
        return ((static_cast<size_t>(n) * c_ + c) * h_ + h) * w_ + w;
    }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
    void zero() { fill(0.0); }

    double sum() const;
    double mean() const;
    double min() const;
    double max() const;
    bool all_finite() const;

    bool operator==(const Tensor& o) const {
        return same_shape(o) && data_ == o.data_;
    }

private:
    int n_ = 0, c_ = 0, h_ = 0, w_ = 0;
    std::vector<double> data_;
};

inline Tensor zeros_like(const Tensor& t) { return Tensor(t.n(), t.c(), t.h(), t.w()); }

// Kaiming-style init for conv/linear weights feeding a ReLU.
Tensor randn(int n, int c, int h, int w, std::mt19937_64& rng, double stddev);
Tensor he_normal(int n, int c, int h, int w, std::mt19937_64& rng);

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace dbd
