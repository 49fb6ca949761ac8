#pragma once

// Named-tensor container and its on-disk format.
//
// Layout (all little-endian):
//   magic "SKW1" | version u32 | tensor count u32
//   per tensor: name length u16 | name bytes | rank u8 | extents u32 each |
//               payload f32 each
//   crc32 u32 over every preceding byte
//
// Payloads are stored as raw 32-bit float bit patterns; a save/load round
// trip is bitwise exact.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <stylekernel/tensor.hpp>

namespace sk {

inline constexpr std::uint32_t kWeightStoreVersion = 1;

class WeightStore {
public:
    void put(const std::string& name, Tensor t);
    bool contains(const std::string& name) const;
    const Tensor& get(const std::string& name) const;
    // Fails with the expected shape in the message when extents differ.
    Tensor get_checked(const std::string& name, const Shape& expect) const;

    std::size_t size() const { return order_.size(); }
    const std::vector<std::string>& names() const { return order_; }
    // Names beginning with `prefix`, in insertion order.
    std::vector<std::string> names_with_prefix(const std::string& prefix) const;

    std::vector<std::uint8_t> serialize() const;
    static WeightStore deserialize(const std::vector<std::uint8_t>& bytes);

    void save(const std::string& path) const;
    static WeightStore load(const std::string& path);

private:
    std::vector<std::string> order_;
    std::map<std::string, Tensor> tensors_;
};

// CRC32 (zlib polynomial) over a byte range.
std::uint32_t crc32_bytes(const std::uint8_t* data, std::size_t n);

}  // namespace sk
