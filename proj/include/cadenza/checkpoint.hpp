#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace cadenza {

// On-disk model snapshot. Byte layout (all integers little-endian):
//   magic   8 bytes  "CADENZA\x01"
//   version u32      (currently 1)
//   n_meta  u32, then per entry: u32 key_len, key bytes, u32 val_len, val bytes
//   n_arr   u64, then per array:
//     u32 name_len, name bytes
//     u32 ndim, ndim × u32 dims
//     prod(dims) × f32 (IEEE-754, little-endian)
struct Checkpoint {
    struct Array {
        std::string name;
        std::vector<uint32_t> dims;
        std::vector<float> data;
    };

    std::map<std::string, std::string> meta;
    std::vector<Array> arrays;

    const Array* find(const std::string& name) const;
    std::string meta_or(const std::string& key, const std::string& fallback) const;

    std::vector<uint8_t> serialize() const;
    static Checkpoint deserialize(const std::vector<uint8_t>& bytes);

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);
};

} // namespace cadenza
