#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <vector>

#include "uvsplat/geometry.hpp"
#include "uvsplat/gsmap.hpp"
#include "uvsplat/objective.hpp"
#include "uvsplat/procedural.hpp"
#include "uvsplat/splat.hpp"

namespace uvsplat {

struct SynthOptions {
    std::uint64_t seed = 1;
    int resolution = 128;
    int cameras = 8;
    double elevation_deg = 10.0;
    double heldout_elevation_deg = -12.0;
    double heldout_azimuth_offset_deg = 22.5;
    double distance = 2.8;
    double fov_y_deg = 30.0;
    double hair_volume = 0.04; // ground-truth hair sits this far outside the template
    int gt_K = 256;
    GridSpec gt_grid{320, 320, 1024, 128, true};
};

/// Camera on a ring around the head, looking at its center.
Camera ring_camera(double azimuth_deg, double elevation_deg, double distance, double fov_y_deg, int resolution);

struct SyntheticScene {
    SynthOptions options;
    HeadMesh mesh;    // template given to the fit
    HeadMesh gt_mesh; // template plus hair volume
    GaussianSet gt_gaussians;
    std::vector<Camera> cameras, heldout;
    std::vector<double> azimuths_deg;
    std::vector<Image> target_rgb, target_alpha;
    std::vector<Image> heldout_rgb, heldout_alpha;
    Image gt_texture; // gt_K x gt_K albedo, zero outside the island
    BoundingBox box;
};

SyntheticScene make_synthetic(const SynthOptions& options = {});

/// Raw maps for a Gaussian field painted with the procedural albedo.
AttributeMaps ground_truth_maps(const UvAtlas& atlas, const HeadMesh& mesh, std::uint64_t seed, int dense_w);

struct AdamState {
    std::vector<double> m, v;
    long step = 0;
};

struct FitConfig {
    int iterations = 300;
    double lr = 1e-2;
    double lr_shape = 1e-3;
    double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    LossWeights weights;
    int K = 256;
    GridSpec grid;
    std::uint64_t seed = 1;
    double init_scale = 0.7;   // world scale relative to the dense grid spacing
    double init_opacity = 0.6;
    double init_noise = 0.01;  // seeded perturbation of the raw maps
};

struct FitResult {
    AttributeMaps maps;
    std::vector<LossReport> history;
    bool diverged = false;
};

/// Initial raw maps for a fit: neutral color, the given opacity and a scale
/// proportional to the dense grid spacing.
AttributeMaps initial_maps(const UvAtlas& atlas, const FitConfig& config);

ObjectiveScene objective_scene(const SyntheticScene& scene, const UvAtlas& atlas, const SampleGrid& grid);

using FitCallback = std::function<void(int iteration, const LossReport& report, const AttributeMaps& maps)>;

/// Adam on the raw maps and the shape offset against the scene's training
/// views. On a non-finite loss the fit stops and returns the last finite maps
/// with `diverged` set.
FitResult fit(const SyntheticScene& scene, const FitConfig& config, const FitCallback& callback = {});
FitResult fit_from(const AttributeMaps& init, const ObjectiveScene& scene, const FitConfig& config,
                   const FitCallback& callback = {});

/// Small randomized fixture for gradient checks: a K-texel atlas on the
/// procedural head, two views at `res` pixels, random maps and shape offset.
struct GradcheckSetup {
    SyntheticScene scene;
    UvAtlas atlas;
    SampleGrid grid;
    ObjectiveScene objective;
    AttributeMaps maps;
};
std::unique_ptr<GradcheckSetup> make_gradcheck_setup(std::uint64_t seed, int K = 16, int res = 32);

/// Fraction of silhouette pixels (target alpha > 0.5) whose rendered alpha is
/// below 0.5, averaged over cameras.
double hole_metric(const GaussianSet& g, const std::vector<Camera>& cameras, const std::vector<Image>& target_alpha);

inline constexpr double kInfinitePsnr = std::numeric_limits<double>::infinity();
double psnr(const Image& img, const Image& ref);
double silhouette_iou(const Image& alpha, const Image& ref_alpha, double threshold = 0.5);

struct Evaluation {
    double psnr = 0;
    double hole = 0;
    double iou = 0;
};

Evaluation evaluate(const GaussianSet& g, const std::vector<Camera>& cameras, const std::vector<Image>& rgb,
                    const std::vector<Image>& alpha);

} // namespace uvsplat
