#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "uvsplat/image.hpp"

namespace uvsplat {

/// In-memory form of the ATL tensor file:
///
///   bytes 0..3   "ATL1"
///   byte  4      rank (u8)
///   then         rank x u32 little-endian dims
///   then         prod(dims) x f32 little-endian values, row-major
///
/// File length is always 5 + 4*rank + 4*prod(dims).
struct AtlTensor {
    std::vector<std::uint32_t> dims;
    std::vector<float> values;

    std::size_t element_count() const;
};

std::vector<std::uint8_t> encode_atl(const AtlTensor& t);
AtlTensor decode_atl(const std::vector<std::uint8_t>& bytes);

void write_atl(const std::string& path, const AtlTensor& t);
AtlTensor read_atl(const std::string& path);

AtlTensor to_atl(const Image& img);
Image image_from_atl(const AtlTensor& t);
AtlTensor to_atl(const std::vector<double>& values, std::vector<std::uint32_t> dims);

} // namespace uvsplat
