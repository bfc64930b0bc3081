#include "moef/params.hpp"

#include "moef/errors.hpp"

namespace moef {

Matrix& ParamSet::add(const std::string& name, Matrix value) {
    if (has(name)) throw config_error("ParamSet: duplicate parameter '" + name + "'");
    items_.emplace_back(name, std::move(value));
    return items_.back().second;
}

bool ParamSet::has(const std::string& name) const {
    for (const auto& [n, v] : items_)
        if (n == name) return true;
    return false;
}

Matrix& ParamSet::at(const std::string& name) {
    for (auto& [n, v] : items_)
        if (n == name) return v;
    throw config_error("ParamSet: unknown parameter '" + name + "'");
}

const Matrix& ParamSet::at(const std::string& name) const {
    for (const auto& [n, v] : items_)
        if (n == name) return v;
    throw config_error("ParamSet: unknown parameter '" + name + "'");
}

Matrix uniform_init(const std::string& name, Index rows, Index cols, double limit,
                    std::uint64_t master_seed) {
    Rng rng(mix_seed(master_seed, fnv1a(name)));
    return rng.uniform_matrix(rows, cols, -limit, limit);
}

}  // namespace moef
