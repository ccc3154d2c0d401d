#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "uvsplat/geometry.hpp"
#include "uvsplat/image.hpp"

namespace uvsplat {

/// Channel layout of the raw attribute map.
namespace channel {
inline constexpr int color = 0;    // 3, logistic
inline constexpr int rotation = 3; // 4 (w x y z), normalized after +(1,0,0,0)
inline constexpr int scale = 7;    // 3, exp times the relative scale map
inline constexpr int opacity = 10; // 1, logistic
inline constexpr int offset = 11;  // 3, 0.05 * tanh, local tangent frame
inline constexpr int count = 14;
} // namespace channel

inline constexpr double kMinScale = 1e-5;
inline constexpr double kMaxScale = 0.5;
inline constexpr double kOffsetRange = 0.05;

struct AttributeMaps {
    int K = 0;
    Image raw;          // K x K x 14
    Image shape_offset; // K x K x 3, canonical head units

    static AttributeMaps zeros(int K);
    /// Channel count, finiteness, and zero shape offset on invalid texels.
    void validate(const UvAtlas& atlas) const;
};

enum class SampleSource : std::uint8_t { dense, hair, vertex };

struct SamplePoint {
    Vec2 uv;
    SampleSource source;
};

struct SampleGrid {
    std::vector<SamplePoint> points;
};

struct GridSpec {
    int dense_w = 256, dense_h = 256;
    int hair_w = 1024, hair_h = 128;
    bool include_vertices = true;
};

SampleGrid default_sample_grid(const UvAtlas& atlas, const GridSpec& spec);

struct GaussianRig {
    Vec2 uv = Vec2::Zero();
    int triangle = -1;
    int texel = -1;
};

/// Activated 3D Gaussians. Rotations are unit quaternions stored (w, x, y, z).
struct GaussianSet {
    std::vector<Vec3> position;
    std::vector<Vec4> rotation;
    std::vector<Vec3> scale;
    std::vector<double> opacity;
    std::vector<Vec3> color;
    std::vector<GaussianRig> rig;
    std::vector<Vec3> local_offset; // activated tangent-frame offset

    int size() const { return static_cast<int>(position.size()); }
    void reserve(int n);
    void push_back(const GaussianSet& other, int i);
    void validate() const;
};

/// Per-Gaussian record of how it was sampled, for chaining gradients.
struct SampleTrace {
    std::array<int, 4> texel{};
    std::array<double, 4> weight{};
    int taps = 0;
    int rig_texel = -1;
    Mat3 frame = Mat3::Identity();
    Vec4 frame_quat{1, 0, 0, 0};
    std::array<Mat3, 4> transport{}; // per tap, canonical -> deformed offset rotation
    Vec4 raw_rotation{1, 0, 0, 0};   // raw rotation + bias, before normalization
    std::array<bool, 3> scale_clamped{};
};

struct SampleDiagnostics {
    int dropped = 0;       // no valid bilinear tap
    int scale_clamped = 0; // Gaussians with at least one clamped axis
};

struct SampledGaussians {
    GaussianSet gaussians;
    std::vector<SampleTrace> trace;
    SampleDiagnostics diagnostics;
};

/// p_r = p + dp on valid texels (valid texels are where `valid` is set).
Image apply_shape_offset(const Image& p, const Image& shape_offset, const std::vector<std::uint8_t>& valid);

/// Bilinear grid sampling of the attribute maps into rigged Gaussians.
/// `verts` may be deformed; the shape offset is then carried along with the
/// rotation of each texel's tangent frame.
SampledGaussians sample_gaussians(const AttributeMaps& maps, const UvAtlas& atlas, const SampleGrid& grid,
                                  const std::vector<Vec3>& verts);

GaussianSet animate(const AttributeMaps& maps, const UvAtlas& atlas, const SampleGrid& grid, const HeadMesh& mesh,
                    const PoseParams& params);

/// Hamilton product a * b, both (w, x, y, z).
Vec4 quat_multiply(const Vec4& a, const Vec4& b);
Vec4 quat_from_matrix(const Mat3& m);
Mat3 quat_to_matrix(const Vec4& q); // q need not be normalized

/// Text export, one Gaussian per line: x y z qw qx qy qz sx sy sz o r g b
void write_gaussians_text(const std::string& path, const GaussianSet& g);
GaussianSet read_gaussians_text(const std::string& path);

} // namespace uvsplat
