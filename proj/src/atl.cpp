#include "uvsplat/atl.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>

#include "uvsplat/common.hpp"

namespace uvsplat {

namespace {

static_assert(sizeof(float) == 4);

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
           static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

} // namespace

std::size_t AtlTensor::element_count() const {
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                           [](std::size_t a, std::uint32_t d) { return a * d; });
}

std::vector<std::uint8_t> encode_atl(const AtlTensor& t) {
    if (t.dims.size() > 255) throw ValidationError("ATL rank exceeds 255");
    if (t.values.size() != t.element_count()) {
        throw ValidationError("ATL value count does not match dims");
    }
    std::vector<std::uint8_t> out;
    out.reserve(5 + 4 * t.dims.size() + 4 * t.values.size());
    for (char c : {'A', 'T', 'L', '1'}) out.push_back(static_cast<std::uint8_t>(c));
    out.push_back(static_cast<std::uint8_t>(t.dims.size()));
    for (auto d : t.dims) put_u32(out, d);
    for (float v : t.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
    return out;
}

AtlTensor decode_atl(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 5 || std::memcmp(bytes.data(), "ATL1", 4) != 0) {
        throw FormatError("ATL: bad magic");
    }
    AtlTensor t;
    const std::size_t rank = bytes[4];
    if (bytes.size() < 5 + 4 * rank) throw FormatError("ATL: truncated header");
    for (std::size_t i = 0; i < rank; ++i) t.dims.push_back(get_u32(bytes.data() + 5 + 4 * i));
    const std::size_t n = t.element_count();
    const std::size_t expected = 5 + 4 * rank + 4 * n;
    if (bytes.size() != expected) {
        throw FormatError("ATL: expected " + std::to_string(expected) + " bytes, got " +
                          std::to_string(bytes.size()));
    }
    t.values.resize(n);
    const std::uint8_t* p = bytes.data() + 5 + 4 * rank;
    for (std::size_t i = 0; i < n; ++i) t.values[i] = std::bit_cast<float>(get_u32(p + 4 * i));
    return t;
}

void write_atl(const std::string& path, const AtlTensor& t) {
    const auto bytes = encode_atl(t);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot open '" + path + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

AtlTensor read_atl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open '" + path + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return decode_atl(bytes);
    } catch (const FormatError& e) {
        throw FormatError("'" + path + "': " + e.what());
    }
}

AtlTensor to_atl(const Image& img) {
    AtlTensor t;
    t.dims = {static_cast<std::uint32_t>(img.height), static_cast<std::uint32_t>(img.width),
              static_cast<std::uint32_t>(img.channels)};
    t.values.assign(img.data.begin(), img.data.end());
    return t;
}

Image image_from_atl(const AtlTensor& t) {
    if (t.dims.size() != 3) throw FormatError("ATL: expected rank-3 image tensor");
    Image img(static_cast<int>(t.dims[0]), static_cast<int>(t.dims[1]), static_cast<int>(t.dims[2]));
    for (std::size_t i = 0; i < t.values.size(); ++i) img.data[i] = t.values[i];
    return img;
}

AtlTensor to_atl(const std::vector<double>& values, std::vector<std::uint32_t> dims) {
    AtlTensor t;
    t.dims = std::move(dims);
    if (t.element_count() != values.size()) throw ValidationError("ATL value count does not match dims");
    t.values.assign(values.begin(), values.end());
    return t;
}

} // namespace uvsplat
