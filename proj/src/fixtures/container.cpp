#include "lpq/fixtures/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

#include "lpq/error.hpp"

namespace lpq::fixtures {
namespace {

constexpr char kMagic[4] = {'L', 'P', 'Q', '1'};

class Writer {
public:
    void u8(std::uint8_t v) { out_.push_back(v); }
    void u16(std::uint16_t v) {
        for (int i = 0; i < 2; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        out_.insert(out_.end(), b, b + n);
    }
    std::vector<std::uint8_t> take() { return std::move(out_); }

private:
    std::vector<std::uint8_t> out_;
};

class Reader {
public:
    explicit Reader(const std::vector<std::uint8_t>& in) : in_(in) {}
    std::uint8_t u8() {
        need(1);
        return in_[pos_++];
    }
    std::uint16_t u16() {
        need(2);
        std::uint16_t v = static_cast<std::uint16_t>(in_[pos_] | (in_[pos_ + 1] << 8));
        pos_ += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
        pos_ += 4;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    std::size_t remaining() const { return in_.size() - pos_; }

private:
    void need(std::size_t n) const {
        if (in_.size() - pos_ < n) throw ValidationError("LPQ1 container truncated");
    }
    const std::vector<std::uint8_t>& in_;
    std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_container(const TensorMap& tensors) {
    require(tensors.size() <= std::numeric_limits<std::uint32_t>::max(), "too many container entries");
    Writer w;
    w.bytes(kMagic, 4);
    w.u16(kContainerVersion);
    w.u32(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        require(name.size() <= std::numeric_limits<std::uint16_t>::max(), "entry name too long: " + name);
        require(t.rank() <= std::numeric_limits<std::uint8_t>::max(), "tensor rank too large: " + name);
        if (!t.all_finite()) fail("container entry '" + name + "' has non-finite values");
        w.u16(static_cast<std::uint16_t>(name.size()));
        w.bytes(name.data(), name.size());
        w.u8(static_cast<std::uint8_t>(t.rank()));
        for (auto d : t.dims()) {
            require(d > 0 && d <= std::numeric_limits<std::uint32_t>::max(), "extent out of range in " + name);
            w.u32(static_cast<std::uint32_t>(d));
        }
        for (float v : t.values()) w.f32(v);
    }
    return w.take();
}

TensorMap decode_container(const std::vector<std::uint8_t>& bytes) {
    Reader r(bytes);
    if (r.str(4) != std::string(kMagic, 4)) fail("bad LPQ1 magic");
    const auto version = r.u16();
    if (version != kContainerVersion) fail("unsupported LPQ1 version " + std::to_string(version));
    const auto count = r.u32();
    TensorMap out;
    for (std::uint32_t e = 0; e < count; ++e) {
        const auto len = r.u16();
        std::string name = r.str(len);
        const auto rank = r.u8();
        diff::Shape dims;
        std::uint64_t total = 1;
        for (int k = 0; k < rank; ++k) {
            const auto d = r.u32();
            if (d == 0) fail("zero extent in LPQ1 entry '" + name + "'");
            total *= d;
            if (total > r.remaining() / 4 + 1) fail("LPQ1 extent overflow in entry '" + name + "'");
            dims.push_back(static_cast<std::int64_t>(d));
        }
        if (total * 4 > r.remaining()) fail("LPQ1 container truncated in entry '" + name + "'");
        std::vector<float> data(static_cast<std::size_t>(total));
        for (auto& v : data) v = r.f32();
        if (!out.emplace(name, diff::Tensor(std::move(dims), std::move(data))).second)
            fail("duplicate LPQ1 entry '" + name + "'");
    }
    if (r.remaining() != 0) fail("trailing bytes after LPQ1 entries");
    return out;
}

void write_container(const std::filesystem::path& path, const TensorMap& tensors) {
    const auto bytes = encode_container(tensors);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) fail("cannot open " + path.string() + " for writing");
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) fail("write failed: " + path.string());
}

TensorMap read_container(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return decode_container(bytes);
}

}  // namespace lpq::fixtures
