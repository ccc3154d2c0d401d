#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "uvsplat/gsmap.hpp"
#include "uvsplat/image.hpp"

namespace uvsplat {

/// Pinhole camera. Camera space looks down +z, image x right, y down.
/// Pixel (x, y) samples the image-plane point (x, y).
struct Camera {
    double fx = 1, fy = 1, cx = 0, cy = 0;
    Mat3 R = Mat3::Identity(); // world -> camera
    Vec3 t = Vec3::Zero();
    int width = 0, height = 0;

    static Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double fov_y_deg, int width,
                          int height);
    Vec3 to_camera(const Vec3& p) const { return R * p + t; }
    Vec3 center() const { return -R.transpose() * t; }
    void validate() const;
};

inline constexpr double kNearPlane = 0.01;
inline constexpr double kDilation = 0.3;
inline constexpr double kMaxAlpha = 0.999;
inline constexpr double kAlphaThreshold = 1.0 / 255.0;
inline constexpr double kMinTransmittance = 1e-4;
inline constexpr int kTileSize = 16;

struct Splat {
    Vec2 mean = Vec2::Zero();
    Mat2 cov = Mat2::Zero();
    Vec3 conic = Vec3::Zero(); // inverse covariance (a, b, c) = [[a, b], [b, c]]
    double depth = 0;
    double opacity = 0;
    bool visible = false;
    int x0 = 0, x1 = -1, y0 = 0, y1 = -1; // inclusive pixel bounds of the footprint
};

struct Projection {
    std::vector<Splat> splats; // one per Gaussian, in Gaussian order
    int culled = 0;
};

Projection project(const GaussianSet& g, const Camera& cam);

/// Per-pixel compositing weight before transmittance.
///
/// Below kAlphaThreshold the weight is zero; between one and two times the
/// threshold it ramps smoothly to the identity so that the footprint edge
/// does not introduce a jump.
double splat_weight(double raw);
double splat_weight_derivative(double raw);

struct ForwardState;

struct RenderOutput {
    Image color; // H x W x C
    Image alpha; // H x W x 1
    std::vector<int> contributors;
    std::vector<double> background;
    std::shared_ptr<const ForwardState> state;
};

struct RasterOptions {
    bool tiled = true;
};

/// Composites `channels` (N x C, row per Gaussian) front to back.
RenderOutput rasterize(const Projection& proj, const std::vector<double>& channels, int C, const Camera& cam,
                       const std::vector<double>& background, const RasterOptions& opts = {});

enum class RenderMode { color, position_unit, uv };

struct BoundingBox {
    Vec3 lo = Vec3::Zero();
    Vec3 hi = Vec3::Ones();
    void validate() const;
};

BoundingBox bounding_box(const GaussianSet& g, double margin = 0.0);

/// Per-Gaussian channel values for a render mode: color (3), positions mapped
/// into [0,1]^3 by the box (3), or rig UVs (2).
std::vector<double> mode_channels(const GaussianSet& g, RenderMode mode, const std::optional<BoundingBox>& box);
int mode_channel_count(RenderMode mode);
std::vector<double> mode_background(RenderMode mode);

RenderOutput render(const GaussianSet& g, const Camera& cam, const std::vector<double>& background = {0, 0, 0});
RenderOutput render_override(const GaussianSet& g, RenderMode mode, const Camera& cam,
                             const std::optional<BoundingBox>& box = std::nullopt);

struct GaussianGrads {
    std::vector<Vec3> position;
    std::vector<Vec4> rotation;
    std::vector<Vec3> scale;
    std::vector<double> opacity;
    std::vector<double> channels; // N x C

    void resize(int n, int C);
};

/// Exact gradients of a retained render with respect to the Gaussians and
/// their channel values. `d_color` is H x W x C, `d_alpha` H x W x 1; either
/// may be empty.
GaussianGrads backward(const GaussianSet& g, const Camera& cam, const RenderOutput& render, const Image& d_color,
                       const Image& d_alpha);

struct StageTimes {
    double project = 0, sort = 0, composite = 0;
};
const StageTimes& last_stage_times();

} // namespace uvsplat
