#include <stylekernel/weightstore.hpp>

#include <zlib.h>

#include <cstring>
#include <fstream>

namespace sk {

namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

struct Reader {
    const std::vector<std::uint8_t>& bytes;
    std::size_t pos = 0;

    void need(std::size_t n, const char* what) {
        check(pos + n <= bytes.size(),
              std::string("weight store: truncated ") + what + " (file ends early)");
    }
    std::uint8_t u8(const char* what) {
        need(1, what);
        return bytes[pos++];
    }
    std::uint16_t u16(const char* what) {
        need(2, what);
        std::uint16_t v = static_cast<std::uint16_t>(bytes[pos] | (bytes[pos + 1] << 8));
        pos += 2;
        return v;
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
};

}  // namespace

std::uint32_t crc32_bytes(const std::uint8_t* data, std::size_t n) {
    return static_cast<std::uint32_t>(
        ::crc32(0L, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(n)));
}

void WeightStore::put(const std::string& name, Tensor t) {
    check(!name.empty() && name.size() <= 0xffff, "weight store: bad tensor name");
    check(t.defined(), "weight store: undefined tensor for " + name);
    auto [it, inserted] = tensors_.insert_or_assign(name, std::move(t));
    if (inserted) order_.push_back(name);
}

bool WeightStore::contains(const std::string& name) const { return tensors_.count(name) > 0; }

const Tensor& WeightStore::get(const std::string& name) const {
    auto it = tensors_.find(name);
    check(it != tensors_.end(), "weight store: missing tensor '" + name + "'");
    return it->second;
}

Tensor WeightStore::get_checked(const std::string& name, const Shape& expect) const {
    const Tensor& t = get(name);
    check(t.shape() == expect, "weight store: tensor '" + name + "' has shape " +
                                   shape_str(t.shape()) + ", expected " + shape_str(expect));
    return t;
}

std::vector<std::string> WeightStore::names_with_prefix(const std::string& prefix) const {
    std::vector<std::string> out;
    for (const auto& n : order_)
        if (n.rfind(prefix, 0) == 0) out.push_back(n);
    return out;
}

std::vector<std::uint8_t> WeightStore::serialize() const {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), {'S', 'K', 'W', '1'});
    put_u32(out, kWeightStoreVersion);
    put_u32(out, static_cast<std::uint32_t>(order_.size()));
    for (const auto& name : order_) {
        const Tensor& t = tensors_.at(name);
        put_u16(out, static_cast<std::uint16_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        out.push_back(static_cast<std::uint8_t>(t.rank()));
        for (int d = 0; d < t.rank(); ++d) put_u32(out, static_cast<std::uint32_t>(t.dim(d)));
        const std::size_t payload = t.data().size() * sizeof(float);
        const std::size_t base = out.size();
        out.resize(base + payload);
        std::memcpy(out.data() + base, t.data().data(), payload);
    }
    put_u32(out, crc32_bytes(out.data(), out.size()));
    return out;
}

WeightStore WeightStore::deserialize(const std::vector<std::uint8_t>& bytes) {
    Reader r{bytes};
    r.need(4, "magic");
    check(std::memcmp(bytes.data(), "SKW1", 4) == 0,
          "weight store: bad magic bytes (not an SKW1 file)");
    r.pos = 4;
    const std::uint32_t version = r.u32("version");
    check(version == kWeightStoreVersion,
          "weight store: version " + std::to_string(version) + " not supported (expected " +
              std::to_string(kWeightStoreVersion) + ")");
    const std::uint32_t count = r.u32("tensor count");

    WeightStore ws;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint16_t name_len = r.u16("tensor name length");
        r.need(name_len, "tensor name");
        std::string name(reinterpret_cast<const char*>(bytes.data() + r.pos), name_len);
        r.pos += name_len;
        check(!ws.contains(name), "weight store: duplicate tensor name '" + name + "'");
        const std::uint8_t rank = r.u8("tensor rank");
        Shape shape(rank);
        std::int64_t numel = 1;
        for (int d = 0; d < rank; ++d) {
            shape[d] = static_cast<int>(r.u32("tensor extent"));
            check(shape[d] > 0, "weight store: nonpositive extent in '" + name + "'");
            numel *= shape[d];
        }
        const std::size_t payload = static_cast<std::size_t>(numel) * sizeof(float);
        r.need(payload, "tensor payload");
        std::vector<float> data(static_cast<std::size_t>(numel));
        std::memcpy(data.data(), bytes.data() + r.pos, payload);
        r.pos += payload;
        ws.put(name, Tensor::from(std::move(shape), std::move(data)));
    }
    const std::size_t body = r.pos;
    const std::uint32_t stored = r.u32("crc32");
    check(r.pos == bytes.size(), "weight store: trailing bytes after crc32");
    const std::uint32_t actual = crc32_bytes(bytes.data(), body);
    check(stored == actual, "weight store: crc32 mismatch (file corrupted)");
    return ws;
}

void WeightStore::save(const std::string& path) const {
    const auto bytes = serialize();
    std::ofstream out(path, std::ios::binary);
    check(out.good(), "cannot write weight file " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    check(out.good(), "short write to weight file " + path);
}

WeightStore WeightStore::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    check(in.good(), "cannot open weight file " + path);
    const auto size = in.tellg();
    in.seekg(0);
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(size));
    in.read(reinterpret_cast<char*>(bytes.data()), size);
    check(in.gcount() == size, "short read from weight file " + path);
    return deserialize(bytes);
}

}  // namespace sk
