#pragma once

#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "separator/tensor.hpp"

namespace separator {

// Single-file tensor container.
//
// Layout: 8-byte magic "SEPCKPT1", u64 little-endian manifest byte length,
// UTF-8 JSON manifest, then a contiguous data section of raw little-endian
// arrays. The manifest maps tensor names to {shape, dtype, offset} where
// offset is relative to the start of the data section. Tensors are laid out
// in sorted name order so that save/load/save is byte-identical.
class Checkpoint {
  public:
    struct Entry {
        ad::Shape shape;
        std::string dtype = "f64";  // "f64" or "f32"
        std::vector<double> data;
    };

    nlohmann::json meta = nlohmann::json::object();

    void put(const std::string& name, ad::Shape shape, std::vector<double> data,
             std::string dtype = "f64");
    void put_tensor(const std::string& name, const ad::Tensor& t);
    bool has(const std::string& name) const;
    const Entry& at(const std::string& name) const;
    // Copies stored values into an existing tensor; shape must match.
    void load_into(const std::string& name, ad::Tensor& t) const;
    const std::map<std::string, Entry>& entries() const { return entries_; }

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);

  private:
    std::map<std::string, Entry> entries_;
};

}  // namespace separator
