#include "dbd/params.hpp"

#include <cstdint>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace dbd {

ad::Variable ParamStore::add(const std::string& name, Tensor init) {
    if (params_.count(name))
        throw std::invalid_argument("ParamStore: duplicate parameter " + name);
    ad::Variable v(std::move(init), /*requires_grad=*/true);
    params_.emplace(name, v);
    return v;
}

ad::Variable ParamStore::get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end())
        throw std::invalid_argument("ParamStore: unknown parameter " + name);
    return it->second;
}

void ParamStore::zero_grads() {
    for (auto& [name, v] : params_) v.zero_grad();
}

size_t ParamStore::numel() const {
    size_t n = 0;
    for (const auto& [name, v] : params_) n += v.value().numel();
    return n;
}

namespace {
template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error("tensor archive: truncated stream");
    return v;
}
}  // namespace

void write_tensor_archive(std::ostream& os, const std::map<std::string, Tensor>& tensors) {
    write_pod<std::uint64_t>(os, tensors.size());
    for (const auto& [name, t] : tensors) {
        write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        const std::int32_t dims[4] = {t.n(), t.c(), t.h(), t.w()};
        os.write(reinterpret_cast<const char*>(dims), sizeof(dims));
        os.write(reinterpret_cast<const char*>(t.data()),
                 static_cast<std::streamsize>(t.numel() * sizeof(double)));
    }
    if (!os) throw std::runtime_error("tensor archive: write failed");
}

std::map<std::string, Tensor> read_tensor_archive(std::istream& is) {
    std::map<std::string, Tensor> out;
    const auto count = read_pod<std::uint64_t>(is);
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto len = read_pod<std::uint32_t>(is);
        std::string name(len, '\0');
        is.read(name.data(), len);
        std::int32_t dims[4];
        is.read(reinterpret_cast<char*>(dims), sizeof(dims));
        if (!is) throw std::runtime_error("tensor archive: truncated stream");
        Tensor t(dims[0], dims[1], dims[2], dims[3]);
        is.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(t.numel() * sizeof(double)));
        if (!is) throw std::runtime_error("tensor archive: truncated tensor " + name);
        out.emplace(std::move(name), std::move(t));
    }
    return out;
}

std::map<std::string, Tensor> snapshot(const ParamStore& params) {
    std::map<std::string, Tensor> out;
    for (const auto& [name, v] : params.all()) out.emplace(name, v.value());
    return out;
}

void restore(ParamStore& params, const std::map<std::string, Tensor>& values) {
    if (values.size() != params.size())
        throw std::runtime_error("restore: parameter count mismatch (archive " +
                                 std::to_string(values.size()) + ", model " +
                                 std::to_string(params.size()) + ")");
    for (const auto& [name, t] : values) {
        ad::Variable v = params.get(name);
        if (!v.value().same_shape(t))
            throw std::runtime_error("restore: shape mismatch for " + name);
        v.value() = t;
    }
}

}  // namespace dbd
