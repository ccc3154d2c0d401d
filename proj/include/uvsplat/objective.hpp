#pragma once

#include <string>
#include <vector>

#include "uvsplat/gsmap.hpp"
#include "uvsplat/splat.hpp"

namespace uvsplat {

struct LossWeights {
    double photo = 1.0;
    double alpha = 1.0;
    double l3d = 50.0;
    double uv = 0.0; // UV-coordinate TV baseline, off by default
    double eye = 5.0;
    double pos = 1.0;
    double shape = 1.0;
    double shape_tv = 10.0;
    double epsilon = 0.1;       // shape-offset hinge threshold, head units
    double delta_alpha = 1e-3;  // alpha floor in the normalized render
    double alpha_mask = 0.05;   // pixels below this alpha are left out of the TV

    void validate() const;
};

/// Mean over masked horizontal and vertical neighbor pairs of the channel-summed
/// absolute difference. A pair counts only if both endpoints are masked in.
/// `mask` may be empty (all pixels). `grad` receives dTV/dimage when non-null.
double tv(const Image& img, const std::vector<std::uint8_t>& mask = {}, Image* grad = nullptr);

/// TV of (I - (1 - alpha)) / max(alpha, delta) over pixels with alpha >= threshold.
/// Used for both the position render and the UV render.
double loss_normalized_tv(const Image& render, const Image& alpha, double delta_alpha, double mask_threshold,
                          Image* d_render = nullptr, Image* d_alpha = nullptr);

/// As loss_normalized_tv; checks the render came from a unit-background pass.
double loss_3d(const RenderOutput& i3d, const LossWeights& w, Image* d_render = nullptr, Image* d_alpha = nullptr);
double loss_uv(const RenderOutput& iuv, const LossWeights& w, Image* d_render = nullptr, Image* d_alpha = nullptr);

/// Mean over valid texels of max(|dp| - eps, 0).
double loss_shape(const Image& dp, const std::vector<std::uint8_t>& valid, double eps, Image* grad = nullptr);
double loss_shape_tv(const Image& dp, const std::vector<std::uint8_t>& valid, Image* grad = nullptr);
/// sqrt(sum |o|^2 / N) over activated offsets.
double loss_pos(const std::vector<Vec3>& offsets, std::vector<Vec3>* grad = nullptr);
double loss_region_tv(const Image& raw, const std::vector<std::uint8_t>& mask, Image* grad = nullptr);
/// Mean absolute error.
double loss_l1(const Image& a, const Image& b, Image* grad = nullptr);

struct LossTerm {
    std::string name;
    double value = 0;
    double weight = 0;
};

struct LossReport {
    std::vector<LossTerm> terms; // fixed order
    double total = 0;
    double grad_norm_raw = 0;
    double grad_norm_shape = 0;

    double value(const std::string& name) const;
};

void write_history_csv(const std::string& path, const std::vector<LossReport>& history);

/// Everything the objective needs besides the optimized maps.
struct ObjectiveScene {
    const UvAtlas* atlas = nullptr;
    const SampleGrid* grid = nullptr;
    std::vector<Vec3> verts;
    std::vector<Camera> cameras;
    std::vector<Image> target_rgb;
    std::vector<Image> target_alpha;
    BoundingBox box;                    // fixed box for the position render
    std::vector<std::uint8_t> eye_mask; // union of the eye regions
};

struct ObjectiveResult {
    LossReport report;
    AttributeMaps grad;
    std::vector<RenderOutput> renders; // color + position (+ uv) per camera
    SampleDiagnostics diagnostics;
};

/// Weighted sum of all terms averaged over cameras, with gradients chained
/// through rendering and sampling back to the raw maps and the shape offset.
ObjectiveResult total_objective(const AttributeMaps& maps, const ObjectiveScene& scene, const LossWeights& w,
                                bool want_grad = true);

} // namespace uvsplat
