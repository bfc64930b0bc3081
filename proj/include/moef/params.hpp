#pragma once

#include "moef/matrix.hpp"

#include <string>
#include <utility>
#include <vector>

namespace moef {

// Named parameter blocks in a stable, deterministic order (insertion order).
// Checkpointing, SGD updates and gradient accumulation all iterate it.
class ParamSet {
public:
    Matrix& add(const std::string& name, Matrix value);
    bool has(const std::string& name) const;
    Matrix& at(const std::string& name);
    const Matrix& at(const std::string& name) const;

    const std::vector<std::pair<std::string, Matrix>>& items() const { return items_; }
    std::vector<std::pair<std::string, Matrix>>& items() { return items_; }
    size_t size() const { return items_.size(); }

private:
    std::vector<std::pair<std::string, Matrix>> items_;
};

// Per-tensor seeding: values depend only on (master_seed, name, shape), never
// on what other tensors exist. Ablation variants that share a tensor name
// therefore share its initial values exactly.
Matrix uniform_init(const std::string& name, Index rows, Index cols, double limit,
                    std::uint64_t master_seed);

}  // namespace moef
