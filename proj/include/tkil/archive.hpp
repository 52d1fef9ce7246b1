#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "tkil/tensor.hpp"

namespace tkil {

// Single-file container of named double arrays plus string and integer
// metadata. Backs model checkpoints and memory snapshots.
struct Archive {
    std::map<std::string, Tensor> arrays;
    std::map<std::string, std::string> strings;
    std::map<std::string, int64_t> ints;

    const Tensor& array(const std::string& name) const;
    const std::string& str(const std::string& name) const;
    int64_t integer(const std::string& name) const;
};

void save_archive(const std::string& path, const Archive& a);
Archive load_archive(const std::string& path);

} // namespace tkil
