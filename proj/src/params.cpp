#include "lpq/params.hpp"

#include <random>

#include "lpq/error.hpp"

namespace lpq {

int ParamStore::add(std::string name, diff::Tensor value, bool trainable) {
    require(!contains(name), "duplicate parameter '" + name + "'");
    const int i = static_cast<int>(params_.size());
    index_.emplace(name, i);
    params_.push_back({std::move(name), std::move(value), trainable});
    return i;
}

int ParamStore::index(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) fail("unknown parameter '" + name + "'");
    return it->second;
}

std::int64_t ParamStore::count_values(bool trainable_only) const {
    std::int64_t n = 0;
    for (const auto& p : params_)
        if (!trainable_only || p.trainable) n += p.value.size();
    return n;
}

fixtures::TensorMap ParamStore::to_map() const {
    fixtures::TensorMap m;
    for (const auto& p : params_) m.emplace(p.name, p.value);
    return m;
}

void ParamStore::load_map(const fixtures::TensorMap& m) {
    for (auto& p : params_) {
        auto it = m.find(p.name);
        if (it == m.end()) fail("checkpoint is missing parameter '" + p.name + "'");
        require(it->second.dims() == p.value.dims(), "checkpoint shape mismatch for '" + p.name + "'");
        p.value = it->second;
    }
}

std::uint64_t hash_name(const std::string& name) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : name) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

diff::Tensor init_normal(const diff::Shape& dims, double stddev, std::uint64_t seed, const std::string& name) {
    std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ULL ^ hash_name(name));
    std::normal_distribution<double> n(0.0, stddev);
    diff::Tensor t(dims);
    for (auto& v : t.values()) v = static_cast<float>(n(rng));
    return t;
}

diff::Tensor init_zeros(const diff::Shape& dims) { return diff::Tensor(dims, 0.0f); }

}  // namespace lpq
