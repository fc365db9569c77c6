#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "tpinv/tensor.hpp"

namespace tpinv {

enum class CkptDtype : uint8_t { F32 = 0, F64 = 1, U8 = 2 };

// Named-tensor container, insertion-ordered so save/load/save round-trips
// byte-identically.
class Checkpoint {
  public:
    void put(const std::string& name, Tensor t, CkptDtype dtype = CkptDtype::F64);
    void put_string(const std::string& name, const std::string& text);
    const Tensor& get(const std::string& name) const;
    std::string get_string(const std::string& name) const;
    bool has(const std::string& name) const { return index_.count(name) != 0; }
    std::vector<std::string> names(const std::string& prefix = "") const;
    size_t size() const { return entries_.size(); }
    void merge(const Checkpoint& other);  // other's entries overwrite same names

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);

  private:
    struct Entry {
        std::string name;
        CkptDtype dtype;
        Tensor tensor;
    };
    std::vector<Entry> entries_;
    std::unordered_map<std::string, size_t> index_;
};

}  // namespace tpinv
