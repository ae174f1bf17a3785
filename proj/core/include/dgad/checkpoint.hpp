#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dgad/tensor.hpp"

namespace dgad {

/// On-disk tensor archive:
///   "DGAD" | u32 version | u32 header_len | UTF-8 header | payload
/// The header is key=value lines plus one "tensor ..." line per tensor
/// (name/shape/dtype/offset/size/crc32); payloads are raw little-endian
/// floats in header order, f32 or f64 per the dtype field.
struct Archive {
    std::map<std::string, std::string> meta;

    struct Entry {
        std::string name;
        std::vector<int> shape;
        bool f64 = false;
        std::vector<double> data;  // held widened in memory
    };
    std::vector<Entry> tensors;

    const Entry* find(const std::string& name) const;

    void add(const std::string& name, const std::vector<int>& shape, const std::vector<float>& v);
    void add(const std::string& name, const std::vector<int>& shape, const std::vector<double>& v);

    template <typename T>
    void add_tensor(const std::string& name, const TensorT<T>& t) {
        add(name, t.shape, t.data);
    }
};

void save_archive(const std::string& path, const Archive& archive);

/// Throws std::runtime_error on bad magic, version mismatch, truncation or
/// checksum failure.
Archive load_archive(const std::string& path);

std::uint32_t crc32(const void* data, std::size_t n);

}  // namespace dgad
