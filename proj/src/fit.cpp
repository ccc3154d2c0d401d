#include "uvsplat/fit.hpp"

#include <cmath>
#include <random>

namespace uvsplat {

Camera ring_camera(double azimuth_deg, double elevation_deg, double distance, double fov_y_deg, int resolution) {
    const double az = azimuth_deg * M_PI / 180.0, el = elevation_deg * M_PI / 180.0;
    const Vec3 target(0.0, 0.05, 0.0);
    const Vec3 eye = target + distance * Vec3(std::sin(az) * std::cos(el), std::sin(el), std::cos(az) * std::cos(el));
    return Camera::look_at(eye, target, Vec3(0, 1, 0), fov_y_deg, resolution, resolution);
}

AttributeMaps ground_truth_maps(const UvAtlas& atlas, const HeadMesh& mesh, std::uint64_t seed, int dense_w) {
    AttributeMaps maps = AttributeMaps::zeros(atlas.K);
    const double scale = std::log(0.9 / dense_w);
    auto logit = [](double p) { return std::log(p / (1.0 - p)); };
    for (int t = 0; t < atlas.K * atlas.K; ++t) {
        if (!atlas.valid[t]) continue;
        const Region region = mesh.region_labels[atlas.tri_index[t]];
        const Vec3 albedo = procedural_albedo(atlas.texel_center(t), region, seed);
        double* r = maps.raw.data.data() + static_cast<std::size_t>(t) * channel::count;
        for (int c = 0; c < 3; ++c) r[channel::color + c] = logit(std::clamp(albedo[c], 0.02, 0.98));
        r[channel::scale] = scale;
        r[channel::scale + 1] = scale;
        r[channel::scale + 2] = scale - std::log(3.0);
        r[channel::opacity] = logit(0.98);
    }
    return maps;
}

SyntheticScene make_synthetic(const SynthOptions& options) {
    SyntheticScene s;
    s.options = options;
    s.mesh = make_procedural_head();
    ProceduralHeadOptions gt_opts;
    gt_opts.hair_volume = options.hair_volume;
    s.gt_mesh = make_procedural_head(gt_opts);

    const UvAtlas atlas = build_uv_atlas(s.gt_mesh, options.gt_K);
    const SampleGrid grid = default_sample_grid(atlas, options.gt_grid);
    const AttributeMaps maps = ground_truth_maps(atlas, s.gt_mesh, options.seed, options.gt_grid.dense_w);
    s.gt_gaussians = sample_gaussians(maps, atlas, grid, s.gt_mesh.vertices).gaussians;

    s.gt_texture = Image(options.gt_K, options.gt_K, 3);
    for (int t = 0; t < atlas.K * atlas.K; ++t) {
        if (!atlas.valid[t]) continue;
        const Vec3 a = procedural_albedo(atlas.texel_center(t), s.gt_mesh.region_labels[atlas.tri_index[t]], options.seed);
        for (int c = 0; c < 3; ++c) s.gt_texture.data[3 * t + c] = a[c];
    }

    for (int k = 0; k < options.cameras; ++k) {
        const double az = 360.0 * k / options.cameras;
        s.azimuths_deg.push_back(az);
        s.cameras.push_back(ring_camera(az, options.elevation_deg, options.distance, options.fov_y_deg,
                                        options.resolution));
        s.heldout.push_back(ring_camera(az + options.heldout_azimuth_offset_deg, options.heldout_elevation_deg,
                                        options.distance, options.fov_y_deg, options.resolution));
    }
    for (const auto& cam : s.cameras) {
        RenderOutput r = render(s.gt_gaussians, cam);
        s.target_rgb.push_back(std::move(r.color));
        s.target_alpha.push_back(std::move(r.alpha));
    }
    for (const auto& cam : s.heldout) {
        RenderOutput r = render(s.gt_gaussians, cam);
        s.heldout_rgb.push_back(std::move(r.color));
        s.heldout_alpha.push_back(std::move(r.alpha));
    }
    s.box = bounding_box(s.gt_gaussians, 0.05);
    return s;
}

AttributeMaps initial_maps(const UvAtlas& atlas, const FitConfig& config) {
    AttributeMaps maps = AttributeMaps::zeros(atlas.K);
    std::mt19937_64 rng(config.seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    const double scale = std::log(config.init_scale / config.grid.dense_w);
    const double opacity = std::log(config.init_opacity / (1.0 - config.init_opacity));
    for (int t = 0; t < atlas.K * atlas.K; ++t) {
        double* r = maps.raw.data.data() + static_cast<std::size_t>(t) * channel::count;
        for (int c = 0; c < channel::count; ++c) {
            const double n = config.init_noise * noise(rng);
            if (!atlas.valid[t]) continue;
            r[c] = n;
        }
        if (!atlas.valid[t]) continue;
        for (int c = 0; c < 3; ++c) r[channel::scale + c] += scale;
        r[channel::opacity] += opacity;
    }
    return maps;
}

ObjectiveScene objective_scene(const SyntheticScene& scene, const UvAtlas& atlas, const SampleGrid& grid) {
    ObjectiveScene o;
    o.atlas = &atlas;
    o.grid = &grid;
    o.verts = scene.mesh.vertices;
    o.cameras = scene.cameras;
    o.target_rgb = scene.target_rgb;
    o.target_alpha = scene.target_alpha;
    o.box = scene.box;
    o.eye_mask.assign(atlas.valid.size(), 0);
    for (Region r : {Region::left_eye, Region::right_eye}) {
        const auto it = atlas.region_masks.find(r);
        if (it == atlas.region_masks.end()) continue;
        for (std::size_t t = 0; t < it->second.size(); ++t) o.eye_mask[t] |= it->second[t];
    }
    return o;
}

namespace {

void adam_step(std::vector<double>& x, const std::vector<double>& g, AdamState& st, double lr, const FitConfig& c,
               const std::vector<std::uint8_t>* keep, int stride) {
    if (st.m.empty()) {
        st.m.assign(x.size(), 0.0);
        st.v.assign(x.size(), 0.0);
    }
    ++st.step;
    const double b1t = 1.0 - std::pow(c.beta1, static_cast<double>(st.step));
    const double b2t = 1.0 - std::pow(c.beta2, static_cast<double>(st.step));
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (keep && !(*keep)[i / stride]) continue;
        st.m[i] = c.beta1 * st.m[i] + (1.0 - c.beta1) * g[i];
        st.v[i] = c.beta2 * st.v[i] + (1.0 - c.beta2) * g[i] * g[i];
        x[i] -= lr * (st.m[i] / b1t) / (std::sqrt(st.v[i] / b2t) + c.adam_eps);
    }
}

} // namespace

FitResult fit_from(const AttributeMaps& init, const ObjectiveScene& scene, const FitConfig& config,
                   const FitCallback& callback) {
    if (config.iterations < 0) throw ValidationError("iterations must be non-negative");
    if (!(config.lr > 0.0) || !(config.lr_shape >= 0.0)) throw ValidationError("step size must be positive");
    config.weights.validate();
    FitResult res;
    res.maps = init;
    AdamState raw_state, shape_state;
    for (int it = 0; it < config.iterations; ++it) {
        ObjectiveResult obj;
        try {
            obj = total_objective(res.maps, scene, config.weights);
        } catch (const NumericalError&) {
            res.diverged = true;
            return res;
        }
        res.history.push_back(obj.report);
        if (callback) callback(it, obj.report, res.maps);
        AttributeMaps next = res.maps;
        adam_step(next.raw.data, obj.grad.raw.data, raw_state, config.lr, config, nullptr, 1);
        adam_step(next.shape_offset.data, obj.grad.shape_offset.data, shape_state, config.lr_shape, config,
                  &scene.atlas->valid, 3);
        bool finite = true;
        for (double v : next.raw.data) finite &= std::isfinite(v);
        for (double v : next.shape_offset.data) finite &= std::isfinite(v);
        if (!finite) {
            res.diverged = true;
            return res;
        }
        res.maps = std::move(next);
    }
    return res;
}

FitResult fit(const SyntheticScene& scene, const FitConfig& config, const FitCallback& callback) {
    const UvAtlas atlas = build_uv_atlas(scene.mesh, config.K);
    const SampleGrid grid = default_sample_grid(atlas, config.grid);
    const ObjectiveScene obj = objective_scene(scene, atlas, grid);
    return fit_from(initial_maps(atlas, config), obj, config, callback);
}

std::unique_ptr<GradcheckSetup> make_gradcheck_setup(std::uint64_t seed, int K, int res) {
    auto g = std::make_unique<GradcheckSetup>();
    SynthOptions so;
    so.seed = seed;
    so.resolution = res;
    so.cameras = 2;
    so.gt_K = 64;
    so.gt_grid = GridSpec{64, 64, 128, 32, false};
    g->scene = make_synthetic(so);
    g->atlas = build_uv_atlas(g->scene.mesh, K);
    g->grid = default_sample_grid(g->atlas, GridSpec{K, K, 2 * K, K / 2, false});
    g->objective = objective_scene(g->scene, g->atlas, g->grid);

    std::mt19937_64 rng(seed * 7919 + 1);
    std::normal_distribution<double> n(0.0, 1.0);
    g->maps = AttributeMaps::zeros(K);
    const double scale = std::log(1.2 / K);
    for (int t = 0; t < K * K; ++t) {
        if (!g->atlas.valid[t]) continue;
        double* r = g->maps.raw.data.data() + static_cast<std::size_t>(t) * channel::count;
        for (int c = 0; c < 3; ++c) r[channel::color + c] = n(rng);
        for (int c = 0; c < 4; ++c) r[channel::rotation + c] = 0.4 * n(rng);
        for (int c = 0; c < 3; ++c) r[channel::scale + c] = scale + 0.2 * n(rng);
        r[channel::opacity] = 0.8 * n(rng);
        for (int c = 0; c < 3; ++c) r[channel::offset + c] = 0.5 * n(rng);
        for (int c = 0; c < 3; ++c) g->maps.shape_offset.data[3 * t + c] = 0.06 * n(rng);
    }
    return g;
}

double hole_metric(const GaussianSet& g, const std::vector<Camera>& cameras, const std::vector<Image>& target_alpha) {
    if (cameras.size() != target_alpha.size() || cameras.empty()) throw ValidationError("one target per camera needed");
    double total = 0.0;
    for (std::size_t v = 0; v < cameras.size(); ++v) {
        const Image& ref = target_alpha[v];
        int inside = 0, holes = 0;
        Image alpha;
        if (g.size() > 0) alpha = render(g, cameras[v]).alpha;
        for (int p = 0; p < ref.pixels(); ++p) {
            if (ref.data[p] <= 0.5) continue;
            ++inside;
            if (g.size() == 0 || alpha.data[p] < 0.5) ++holes;
        }
        if (inside == 0) throw ValidationError("ground-truth silhouette is empty");
        total += static_cast<double>(holes) / inside;
    }
    return total / cameras.size();
}

double psnr(const Image& img, const Image& ref) {
    if (!img.same_shape(ref) || img.data.empty()) throw ValidationError("PSNR operands differ in shape");
    double mse = 0.0;
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        const double d = img.data[i] - ref.data[i];
        mse += d * d;
    }
    mse /= img.data.size();
    if (mse == 0.0) return kInfinitePsnr;
    return 10.0 * std::log10(1.0 / mse);
}

double silhouette_iou(const Image& alpha, const Image& ref_alpha, double threshold) {
    if (!alpha.same_shape(ref_alpha)) throw ValidationError("IoU operands differ in shape");
    int inter = 0, uni = 0;
    for (std::size_t i = 0; i < alpha.data.size(); ++i) {
        const bool a = alpha.data[i] > threshold, b = ref_alpha.data[i] > threshold;
        inter += a && b;
        uni += a || b;
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / uni;
}

Evaluation evaluate(const GaussianSet& g, const std::vector<Camera>& cameras, const std::vector<Image>& rgb,
                    const std::vector<Image>& alpha) {
    Evaluation e;
    for (std::size_t v = 0; v < cameras.size(); ++v) {
        const RenderOutput r = render(g, cameras[v]);
        e.psnr += psnr(r.color, rgb[v]) / cameras.size();
        e.iou += silhouette_iou(r.alpha, alpha[v]) / cameras.size();
    }
    e.hole = hole_metric(g, cameras, alpha);
    return e;
}

} // namespace uvsplat
