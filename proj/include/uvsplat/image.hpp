#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace uvsplat {

/// Dense row-major H x W x C array of doubles. Used for rendered images,
/// UV-space maps (K x K x C), and masks (C = 1).
struct Image {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<double> data;

    Image() = default;
    Image(int h, int w, int c, double fill = 0.0)
        : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, fill) {}

    std::size_t index(int y, int x, int c = 0) const {
        return (static_cast<std::size_t>(y) * width + x) * channels + c;
    }
    double& at(int y, int x, int c = 0) { return data[index(y, x, c)]; }
    double at(int y, int x, int c = 0) const { return data[index(y, x, c)]; }

    int pixels() const { return height * width; }
    bool same_shape(const Image& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }
    bool empty() const { return data.empty(); }
};

/// Binary PPM (P6) of the first three channels, clamped to [0,1] and
/// quantized to 8 bits. One- and two-channel images are zero padded.
void write_ppm(const std::string& path, const Image& img);
/// Binary PGM (P5) of channel 0.
void write_pgm(const std::string& path, const Image& img);
Image read_pnm(const std::string& path);

} // namespace uvsplat
