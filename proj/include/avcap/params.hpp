#pragma once

#include "avcap/tensor.hpp"

#include <map>
#include <random>
#include <string>
#include <vector>

namespace avcap {

// Parameter group a named tensor belongs to, derived from its name prefix.
// Freeze policies and gradient-check reports operate on these groups.
enum class ParamGroup { Encoder, Decoder, Projection, Head };

inline ParamGroup param_group_of(const std::string& name) {
    auto starts = [&](const char* p) { return name.rfind(p, 0) == 0; };
    if (starts("enc_a.") || starts("enc_v.") || starts("joint.")) return ParamGroup::Encoder;
    if (starts("dec.")) return ParamGroup::Decoder;
    if (starts("proj.")) return ParamGroup::Projection;
    if (starts("head.")) return ParamGroup::Head;
    throw TensorError("param_group_of: unknown parameter name '" + name + "'");
}

inline const char* param_group_name(ParamGroup g) {
    switch (g) {
        case ParamGroup::Encoder: return "encoder";
        case ParamGroup::Decoder: return "decoder";
        case ParamGroup::Projection: return "projection";
        case ParamGroup::Head: return "head";
    }
    return "?";
}

// LN scales/offsets and biases are exempt from weight decay.
inline bool decay_exempt(const std::string& name) {
    const auto dot = name.find_last_of('.');
    const std::string leaf = dot == std::string::npos ? name : name.substr(dot + 1);
    if (leaf == "gamma" || leaf == "beta") return true;
    return !leaf.empty() && leaf[0] == 'b';
}

// Named, shaped parameter store. Insertion order is fixed at construction and
// drives deterministic iteration; the trainable flag mirrors requires_grad.
template <typename T>
class ParamStore {
  public:
    void add(const std::string& name, Tensor<T> t) {
        if (index_.count(name)) throw TensorError("ParamStore: duplicate parameter '" + name + "'");
        t.set_requires_grad(true);
        index_[name] = names_.size();
        names_.push_back(name);
        tensors_.push_back(std::move(t));
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    Tensor<T>& get(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw TensorError("ParamStore: unknown parameter '" + name + "'");
        return tensors_[it->second];
    }
    const Tensor<T>& get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw TensorError("ParamStore: unknown parameter '" + name + "'");
        return tensors_[it->second];
    }

    const std::vector<std::string>& names() const { return names_; }
    size_t count() const { return names_.size(); }

    bool trainable(const std::string& name) const { return get(name).requires_grad(); }
    void set_trainable(const std::string& name, bool v) { get(name).set_requires_grad(v); }

    size_t trainable_count() const {
        size_t n = 0;
        for (const auto& t : tensors_)
            if (t.requires_grad()) ++n;
        return n;
    }

    void zero_grad() {
        for (auto& t : tensors_) t.zero_grad();
    }

    template <typename Fn>
    void for_each(Fn&& fn) {
        for (size_t i = 0; i < names_.size(); ++i) fn(names_[i], tensors_[i]);
    }
    template <typename Fn>
    void for_each(Fn&& fn) const {
        for (size_t i = 0; i < names_.size(); ++i) fn(names_[i], tensors_[i]);
    }

  private:
    std::vector<std::string> names_;
    std::vector<Tensor<T>> tensors_;
    std::map<std::string, size_t> index_;
};

// Truncated normal init: N(0, std^2) resampled while |z| > 2*std.
template <typename T>
Tensor<T> trunc_normal(int rows, int cols, T std_dev, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, static_cast<double>(std_dev));
    std::vector<T> data(static_cast<size_t>(rows) * cols);
    const double bound = 2.0 * static_cast<double>(std_dev);
    for (auto& v : data) {
        double z = dist(rng);
        while (std::abs(z) > bound) z = dist(rng);
        v = static_cast<T>(z);
    }
    return Tensor<T>::from_data(std::move(data), rows, cols);
}

}  // namespace avcap
