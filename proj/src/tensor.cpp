#include "dbd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace dbd {

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << n_ << "x" << c_ << "x" << h_ << "x" << w_;
    return os.str();
}

double Tensor::sum() const {
    double s = 0.0;
    for (double v : data_) s += v;
    return s;
}

double Tensor::mean() const {
    if (data_.empty()) throw std::invalid_argument("Tensor::mean on empty tensor");
    return sum() / static_cast<double>(data_.size());
}

double Tensor::min() const {
    if (data_.empty()) throw std::invalid_argument("Tensor::min on empty tensor");
    return *std::min_element(data_.begin(), data_.end());
}

double Tensor::max() const {
    if (data_.empty()) throw std::invalid_argument("Tensor::max on empty tensor");
    return *std::max_element(data_.begin(), data_.end());
}

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

Tensor randn(int n, int c, int h, int w, std::mt19937_64& rng, double stddev) {
    Tensor t(n, c, h, w);
    std::normal_distribution<double> dist(0.0, stddev);
    for (size_t i = 0; i < t.numel(); ++i) t[i] = dist(rng);
    return t;
}

Tensor he_normal(int n, int c, int h, int w, std::mt19937_64& rng) {
    const double fan_in = static_cast<double>(c) * h * w;
    return randn(n, c, h, w, rng, std::sqrt(2.0 / std::max(fan_in, 1.0)));
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) return std::numeric_limits<double>::infinity();
    double m = 0.0;
    for (size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

}  // namespace dbd
