#pragma once

#include <iosfwd>
#include <map>
#include <string>

#include "dbd/autodiff.hpp"

namespace dbd {

// Named trainable tensors. Registration order is the init-draw order, so a
// fixed seed gives bit-identical parameters run to run.
class ParamStore {
public:
    ad::Variable add(const std::string& name, Tensor init);
    ad::Variable get(const std::string& name) const;
    bool has(const std::string& name) const { return params_.count(name) > 0; }
    size_t size() const { return params_.size(); }

    const std::map<std::string, ad::Variable>& all() const { return params_; }

    void zero_grads();
    size_t numel() const;

private:
    std::map<std::string, ad::Variable> params_;
};

// Binary archive of named tensors: count, then {name, dims, doubles} records.
void write_tensor_archive(std::ostream& os, const std::map<std::string, Tensor>& tensors);
std::map<std::string, Tensor> read_tensor_archive(std::istream& is);

std::map<std::string, Tensor> snapshot(const ParamStore& params);
// Overwrites existing parameter values; unknown or missing names are errors.
void restore(ParamStore& params, const std::map<std::string, Tensor>& values);

}  // namespace dbd
