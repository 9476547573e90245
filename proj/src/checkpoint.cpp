#include "cadenza/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace cadenza {

namespace {

constexpr char kMagic[8] = {'C', 'A', 'D', 'E', 'N', 'Z', 'A', '\x01'};
constexpr uint32_t kVersion = 1;

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<uint8_t>& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void put_string(std::vector<uint8_t>& out, const std::string& s) {
    put_u32(out, static_cast<uint32_t>(s.size()));
    out.insert(out.end(), s.begin(), s.end());
}

struct Cursor {
    const std::vector<uint8_t>& buf;
    size_t pos = 0;

    void need(size_t n) const {
        if (pos + n > buf.size()) throw std::runtime_error("checkpoint: truncated file");
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(buf[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
    std::string str() {
        uint32_t len = u32();
        need(len);
        std::string s(buf.begin() + pos, buf.begin() + pos + len);
        pos += len;
        return s;
    }
};

} // namespace

const Checkpoint::Array* Checkpoint::find(const std::string& name) const {
    for (const auto& a : arrays)
        if (a.name == name) return &a;
    return nullptr;
}

std::string Checkpoint::meta_or(const std::string& key, const std::string& fallback) const {
    auto it = meta.find(key);
    return it == meta.end() ? fallback : it->second;
}

std::vector<uint8_t> Checkpoint::serialize() const {
    std::vector<uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 8);
    put_u32(out, kVersion);
    put_u32(out, static_cast<uint32_t>(meta.size()));
    for (const auto& [k, v] : meta) {
        put_string(out, k);
        put_string(out, v);
    }
    put_u64(out, arrays.size());
    for (const auto& a : arrays) {
        put_string(out, a.name);
        put_u32(out, static_cast<uint32_t>(a.dims.size()));
        uint64_t count = 1;
        for (uint32_t d : a.dims) {
            put_u32(out, d);
            count *= d;
        }
        if (count != a.data.size())
            throw std::runtime_error("checkpoint: array '" + a.name + "' shape/data mismatch");
        size_t at = out.size();
        out.resize(at + a.data.size() * 4);
        static_assert(sizeof(float) == 4);
        std::memcpy(out.data() + at, a.data.data(), a.data.size() * 4);
    }
    return out;
}

Checkpoint Checkpoint::deserialize(const std::vector<uint8_t>& bytes) {
    Cursor c{bytes};
    c.need(8);
    if (std::memcmp(bytes.data(), kMagic, 8) != 0)
        throw std::runtime_error("checkpoint: bad magic");
    c.pos = 8;
    uint32_t version = c.u32();
    if (version != kVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));

    Checkpoint ckpt;
    uint32_t n_meta = c.u32();
    for (uint32_t i = 0; i < n_meta; ++i) {
        std::string k = c.str();
        ckpt.meta[k] = c.str();
    }
    uint64_t n_arr = c.u64();
    for (uint64_t i = 0; i < n_arr; ++i) {
        Array a;
        a.name = c.str();
        uint32_t ndim = c.u32();
        uint64_t count = 1;
        for (uint32_t d = 0; d < ndim; ++d) {
            a.dims.push_back(c.u32());
            count *= a.dims.back();
        }
        c.need(count * 4);
        a.data.resize(count);
        std::memcpy(a.data.data(), bytes.data() + c.pos, count * 4);
        c.pos += count * 4;
        ckpt.arrays.push_back(std::move(a));
    }
    return ckpt;
}

void Checkpoint::save(const std::string& path) const {
    auto bytes = serialize();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("checkpoint: write failed: " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    return deserialize(bytes);
}

} // namespace cadenza
