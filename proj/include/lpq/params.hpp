#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lpq/diff/tape.hpp"
#include "lpq/fixtures/container.hpp"

namespace lpq {

struct Param {
    std::string name;
    diff::Tensor value;
    bool trainable = true;
};

// Named parameters in insertion order. Frozen entries are bound to tapes as
// constants, so no gradient slot ever exists for them.
class ParamStore {
public:
    int add(std::string name, diff::Tensor value, bool trainable);
    bool contains(const std::string& name) const { return index_.count(name) > 0; }
    int index(const std::string& name) const;
    const Param& at(int i) const { return params_.at(static_cast<std::size_t>(i)); }
    Param& at(int i) { return params_.at(static_cast<std::size_t>(i)); }
    const diff::Tensor& value(const std::string& name) const { return at(index(name)).value; }
    diff::Tensor& value(const std::string& name) { return at(index(name)).value; }
    std::size_t size() const { return params_.size(); }
    const std::vector<Param>& all() const { return params_; }
    std::int64_t count_values(bool trainable_only) const;

    fixtures::TensorMap to_map() const;
    // Overwrites values of existing entries; every stored name must be present.
    void load_map(const fixtures::TensorMap& m);

private:
    std::vector<Param> params_;
    std::map<std::string, int> index_;
};

// Deterministic initializers keyed by (seed, parameter name).
diff::Tensor init_normal(const diff::Shape& dims, double stddev, std::uint64_t seed, const std::string& name);
diff::Tensor init_zeros(const diff::Shape& dims);
std::uint64_t hash_name(const std::string& name);

// Tape variables for every parameter of a store.
template <typename T>
class Binding {
public:
    Binding(diff::Tape<T>& tape, const ParamStore& store) : store_(&store) {
        vars_.reserve(store.size());
        for (const auto& p : store.all()) {
            diff::BasicTensor<T> v = p.value.template cast<T>();
            vars_.push_back(p.trainable ? tape.param(std::move(v)) : tape.constant(std::move(v)));
        }
    }
    // Binds explicit values in place of the store's (used by the FD oracle).
    Binding(diff::Tape<T>& tape, const ParamStore& store, const std::vector<diff::Var<T>>& overrides,
            const std::vector<int>& override_indices)
        : Binding(tape, store) {
        for (std::size_t k = 0; k < override_indices.size(); ++k)
            vars_[static_cast<std::size_t>(override_indices[k])] = overrides[k];
    }

    diff::Var<T> operator()(const std::string& name) const { return vars_[static_cast<std::size_t>(store_->index(name))]; }
    diff::Var<T> operator[](int i) const { return vars_[static_cast<std::size_t>(i)]; }
    const ParamStore& store() const { return *store_; }
    const std::vector<diff::Var<T>>& vars() const { return vars_; }

private:
    const ParamStore* store_;
    std::vector<diff::Var<T>> vars_;
};

}  // namespace lpq
