// uvsplat command-line front end.
#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include "uvsplat/atl.hpp"
#include "uvsplat/config.hpp"
#include "uvsplat/fit.hpp"
#include "uvsplat/fuse.hpp"
#include "uvsplat/mesh_io.hpp"
#include "uvsplat/objective.hpp"
#include "uvsplat/procedural.hpp"
#include "uvsplat/scene_io.hpp"
#include "uvsplat/splat.hpp"

namespace fs = std::filesystem;
using namespace uvsplat;

namespace {

struct ViewOptions {
    std::string camera = "0,10";
    int res = 256;
    double distance = 2.8;
    double fov = 30.0;
};

void add_view_options(CLI::App* cmd, ViewOptions& v) {
    cmd->add_option("--camera", v.camera, "azimuth,elevation in degrees");
    cmd->add_option("--res", v.res, "image size in pixels");
    cmd->add_option("--distance", v.distance, "camera distance from the head center");
    cmd->add_option("--fov", v.fov, "vertical field of view in degrees");
}

Camera view_camera(const ViewOptions& v) {
    double az = 0, el = 0;
    char comma = 0;
    std::istringstream ss(v.camera);
    if (!(ss >> az >> comma >> el) || comma != ',') throw ValidationError("--camera expects 'azimuth,elevation'");
    return ring_camera(az, el, v.distance, v.fov, v.res);
}

HeadMesh mesh_from(const std::string& path) { return path.empty() ? make_procedural_head() : load_mesh(path); }

Config config_from(const std::string& path) { return path.empty() ? Config{} : load_config(path); }

struct Rig {
    HeadMesh mesh;
    AttributeMaps maps;
    UvAtlas atlas;
    SampleGrid grid;
};

Rig load_rig(const std::string& maps_path, const std::string& mesh_path, const Config& cfg) {
    Rig r;
    r.mesh = mesh_from(mesh_path.empty() ? cfg.mesh : mesh_path);
    r.maps = load_maps(maps_path);
    r.atlas = build_uv_atlas(r.mesh, r.maps.K);
    r.maps.validate(r.atlas);
    r.grid = default_sample_grid(r.atlas, cfg.grid());
    return r;
}

RenderMode parse_mode(const std::string& m) {
    if (m == "color") return RenderMode::color;
    if (m == "i3d") return RenderMode::position_unit;
    if (m == "iuv") return RenderMode::uv;
    throw ValidationError("--mode must be color, i3d or iuv");
}

RenderOutput render_mode(const GaussianSet& g, RenderMode mode, const Camera& cam) {
    if (mode == RenderMode::position_unit) return render_override(g, mode, cam, bounding_box(g, 0.05));
    return render_override(g, mode, cam);
}

std::string join_args(int argc, char** argv) {
    std::string s;
    for (int i = 1; i < argc; ++i) s += std::string(i > 1 ? " " : "") + argv[i];
    return s;
}

Image color_texture(const AttributeMaps& maps, const UvAtlas& atlas) {
    Image tex(maps.K, maps.K, 3);
    for (int t = 0; t < maps.K * maps.K; ++t) {
        if (!atlas.valid[t]) continue;
        for (int c = 0; c < 3; ++c) tex.data[3 * t + c] = logistic(maps.raw.data[t * channel::count + channel::color + c]);
    }
    return tex;
}

FeatureMap feature_map_from(const Image& img, const std::vector<std::uint8_t>& valid) {
    FeatureMap f = FeatureMap::zeros(img.height, img.channels);
    for (int t = 0; t < img.pixels(); ++t) {
        if (!valid[t]) continue;
        f.valid[t] = 1;
        for (int c = 0; c < img.channels; ++c) f.at(t)[c] = img.data[t * img.channels + c];
    }
    return f;
}

void write_feature(const fs::path& path, const FeatureMap& f) {
    std::vector<double> v(f.data);
    write_atl(path.string(), to_atl(v, {static_cast<std::uint32_t>(f.K), static_cast<std::uint32_t>(f.K),
                                        static_cast<std::uint32_t>(f.C)}));
}

void write_mask(const fs::path& path, const MaskMap& m) {
    write_atl(path.string(), to_atl(m.values, {static_cast<std::uint32_t>(m.K), static_cast<std::uint32_t>(m.K), 1u}));
}

void dump_fusion(const fs::path& dir, const SyntheticScene& scene, const AttributeMaps& maps, const UvAtlas& atlas,
                 const Config& cfg) {
    fs::create_directories(dir);
    const Camera& cam = scene.cameras.front();
    const Image p_r = apply_shape_offset(position_map(atlas, scene.mesh.vertices), maps.shape_offset, atlas.valid);
    VisibilityDiagnostics diag;
    const MaskMap Mv = visibility_mask(p_r, atlas.valid, scene.mesh.vertices, scene.mesh.triangles, cam,
                                       cfg.visibility_tau, &diag);
    const Image source = lift_features(scene.target_rgb.front(), cfg.fusion_channels, cfg.fusion_seed);
    const FeatureMap Fl = sample_local_features(source, p_r, atlas.valid, cam, Mv);
    const FeatureMap Fg =
        feature_map_from(lift_features(color_texture(maps, atlas), cfg.fusion_channels, cfg.fusion_seed), atlas.valid);
    const auto scales = run_fusion(Fg, Fl, Mv, atlas, cfg.fusion_config());
    for (const auto& s : scales) {
        const std::string k = "_s" + std::to_string(s.Fg.scale_index) + ".atl";
        write_feature(dir / ("F_g" + k), s.Fg);
        write_feature(dir / ("F_l" + k), s.Fl);
        write_mask(dir / ("M_v" + k), s.Mv);
        write_mask(dir / ("M_o" + k), s.Mo);
        write_feature(dir / ("F_c" + k), s.Fc);
        write_feature(dir / ("F_m" + k), s.Fm);
        write_feature(dir / ("F_f" + k), s.Ff);
    }
    if (diag.all_behind) std::cerr << "note: source camera is behind all geometry\n";
}

int cmd_synth(std::uint64_t seed, const std::string& out_dir, int res, int cameras, const std::string& args) {
    SynthOptions o;
    o.seed = seed;
    o.resolution = res;
    o.cameras = cameras;
    const SyntheticScene scene = make_synthetic(o);
    save_scene(out_dir, scene);
    const std::string manifest = (fs::path(out_dir) / "manifest.txt").string();
    auto entries = read_manifest(manifest);
    entries.erase("version");
    entries["args"] = args;
    write_manifest(manifest, entries);
    std::cout << "synthetic scene: " << scene.cameras.size() << " cameras, " << scene.gt_gaussians.size()
              << " ground-truth Gaussians -> " << out_dir << "\n";
    return 0;
}

int cmd_fit(const std::string& config_path, const std::string& scene_dir, const std::string& out_dir,
            bool fusion, int checkpoint_every, const std::string& args) {
    const Config cfg = config_from(config_path);
    set_max_threads(cfg.threads);
    const SyntheticScene scene = load_scene(scene_dir);
    const FitConfig fc = cfg.fit_config();
    const UvAtlas atlas = build_uv_atlas(scene.mesh, fc.K);
    const SampleGrid grid = default_sample_grid(atlas, fc.grid);
    const ObjectiveScene obj = objective_scene(scene, atlas, grid);
    const fs::path out(out_dir);
    fs::create_directories(out);
    std::cout << "fitting " << grid.points.size() << " Gaussians on a " << fc.K << "^2 atlas, " << scene.cameras.size()
              << " views\n";

    const auto t0 = std::chrono::steady_clock::now();
    const FitResult res = fit_from(initial_maps(atlas, fc), obj, fc, [&](int it, const LossReport& r, const AttributeMaps& m) {
        if (it % 50 == 0) {
            const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            std::printf("iter %5d  total %.6f  photo %.6f  l3d %.6f  (%.0f s)\n", it, r.total, r.value("photo"),
                        r.value("l3d"), sec);
            std::fflush(stdout);
        }
        if (checkpoint_every > 0 && it % checkpoint_every == 0) {
            const GaussianSet g = sample_gaussians(m, atlas, grid, scene.mesh.vertices).gaussians;
            const fs::path dir = out / ("checkpoint_" + std::to_string(it));
            fs::create_directories(dir);
            for (int k = 0; k < 4; ++k) {
                const RenderOutput img = render(g, ring_camera(90.0 * k, 10.0, 2.8, 30.0, 128));
                write_ppm((dir / ("turntable_" + std::to_string(k) + ".ppm")).string(), img.color);
            }
        }
    });

    save_maps((out / "maps.atl").string(), res.maps);
    write_history_csv((out / "history.csv").string(), res.history);
    const GaussianSet g = sample_gaussians(res.maps, atlas, grid, scene.mesh.vertices).gaussians;
    write_gaussians_text((out / "gaussians.txt").string(), g);
    std::map<std::string, std::string> manifest = {{"command", "fit"},
                                                   {"args", args},
                                                   {"scene", scene_dir},
                                                   {"seed", std::to_string(fc.seed)},
                                                   {"gaussians", std::to_string(g.size())},
                                                   {"iterations_run", std::to_string(res.history.size())},
                                                   {"diverged", res.diverged ? "true" : "false"}};
    if (!res.diverged) {
        const Evaluation e = evaluate(g, scene.heldout, scene.heldout_rgb, scene.heldout_alpha);
        std::ofstream ev(out / "eval.txt");
        ev << "heldout_psnr = " << e.psnr << "\nheldout_hole_metric = " << e.hole << "\nheldout_silhouette_iou = " << e.iou
           << "\n";
        std::printf("held-out PSNR %.3f dB, hole metric %.5f, silhouette IoU %.4f\n", e.psnr, e.hole, e.iou);
    }
    {
        std::ofstream cf(out / "config.txt");
        cf << serialize_config(cfg);
    }
    write_manifest((out / "manifest.txt").string(), manifest);
    if (fusion) dump_fusion(out / "fusion", scene, res.maps, atlas, cfg);
    if (res.diverged) {
        std::cerr << "fit diverged after " << res.history.size() << " iterations; last finite maps saved\n";
        return 2;
    }
    return 0;
}

int cmd_render(const std::string& maps, const std::string& mesh, const std::string& config, const std::string& pose,
               const ViewOptions& view, const std::string& mode_name, const std::string& out, const std::string& args) {
    const Config cfg = config_from(config);
    set_max_threads(cfg.threads);
    const Rig rig = load_rig(maps, mesh, cfg);
    const RenderMode mode = parse_mode(mode_name);
    PoseParams params = PoseParams::zeros(rig.mesh);
    if (!pose.empty()) {
        if (fs::exists(pose)) {
            const auto seq = load_pose_sequence(pose, rig.mesh);
            if (seq.empty()) throw ValidationError("pose file is empty");
            params = seq.front();
        } else {
            params = parse_pose_row(pose, rig.mesh);
        }
    }
    const GaussianSet g = animate(rig.maps, rig.atlas, rig.grid, rig.mesh, params);
    const RenderOutput r = render_mode(g, mode, view_camera(view));
    write_ppm(out, r.color);
    write_pgm(out + ".alpha.pgm", r.alpha);
    write_atl(out + ".atl", to_atl(r.color));
    double lo = 1e300, hi = -1e300;
    for (double v : r.color.data) lo = std::min(lo, v), hi = std::max(hi, v);
    std::printf("rendered %d Gaussians, channel range [%.6f, %.6f]\n", g.size(), lo, hi);
    write_manifest(out + ".manifest", {{"command", "render"}, {"args", args}, {"mode", mode_name},
                                       {"gaussians", std::to_string(g.size())}});
    return 0;
}

int cmd_turntable(const std::string& maps, const std::string& mesh, const std::string& config, int frames,
                  const std::string& out_dir, const ViewOptions& view, double elevation, const std::string& args) {
    if (frames < 1) throw ValidationError("--frames must be at least 1");
    const Config cfg = config_from(config);
    set_max_threads(cfg.threads);
    const Rig rig = load_rig(maps, mesh, cfg);
    const GaussianSet g = sample_gaussians(rig.maps, rig.atlas, rig.grid, rig.mesh.vertices).gaussians;
    fs::create_directories(out_dir);
    for (int k = 0; k < frames; ++k) {
        const double az = 360.0 * k / frames;
        const RenderOutput r = render(g, ring_camera(az, elevation, view.distance, view.fov, view.res));
        char name[64];
        std::snprintf(name, sizeof name, "frame_%03d.ppm", k);
        write_ppm((fs::path(out_dir) / name).string(), r.color);
    }
    write_manifest((fs::path(out_dir) / "manifest.txt").string(),
                   {{"command", "turntable"}, {"args", args}, {"frames", std::to_string(frames)}});
    std::printf("wrote %d frames to %s\n", frames, out_dir.c_str());
    return 0;
}

int cmd_animate(const std::string& maps, const std::string& mesh, const std::string& config, const std::string& seq_path,
                const ViewOptions& view, const std::string& out_dir, const std::string& args) {
    const Config cfg = config_from(config);
    set_max_threads(cfg.threads);
    const Rig rig = load_rig(maps, mesh, cfg);
    const auto seq = load_pose_sequence(seq_path, rig.mesh);
    const Camera cam = view_camera(view);
    fs::create_directories(out_dir);
    for (std::size_t k = 0; k < seq.size(); ++k) {
        const GaussianSet g = animate(rig.maps, rig.atlas, rig.grid, rig.mesh, seq[k]);
        char name[64];
        std::snprintf(name, sizeof name, "frame_%03zu.ppm", k);
        write_ppm((fs::path(out_dir) / name).string(), render(g, cam).color);
    }
    write_manifest((fs::path(out_dir) / "manifest.txt").string(),
                   {{"command", "animate"}, {"args", args}, {"frames", std::to_string(seq.size())}});
    std::printf("wrote %zu frames to %s\n", seq.size(), out_dir.c_str());
    return 0;
}

int cmd_gradcheck(const std::string& config, int samples, std::uint64_t seed, const std::string& args) {
    const Config cfg = config_from(config);
    set_max_threads(cfg.threads);
    auto setup = make_gradcheck_setup(seed);
    const LossWeights& w = cfg.weights;
    const ObjectiveResult base = total_objective(setup->maps, setup->objective, w);
    const double f0 = base.report.total;
    const int K = setup->atlas.K;
    std::vector<int> valid;
    for (int t = 0; t < K * K; ++t)
        if (setup->atlas.valid[t]) valid.push_back(t);

    std::mt19937_64 rng(seed);
    constexpr double h = 1e-3;
    int tested = 0, skipped = 0, failed = 0;
    double worst = 0.0;
    while (tested < samples) {
        if (skipped > 4 * samples) throw NumericalError("too many non-smooth finite-difference stencils");
        const int t = valid[rng() % valid.size()];
        const bool shape = rng() % 5 == 0;
        const int c = static_cast<int>(shape ? rng() % 3 : rng() % channel::count);
        auto eval = [&](double d) {
            AttributeMaps m = setup->maps;
            (shape ? m.shape_offset.data[3 * t + c] : m.raw.data[t * channel::count + c]) += d;
            return total_objective(m, setup->objective, w, false).report.total;
        };
        const double fp = eval(h), fm = eval(-h), fp2 = eval(h / 2), fm2 = eval(-h / 2);
        const double central = (fp - fm) / (2 * h);
        const double tol = std::max(1e-5, 1e-2 * std::abs(central));
        const double one_sided[4] = {(fp - f0) / h, (f0 - fm) / h, 2 * (fp2 - f0) / h, 2 * (f0 - fm2) / h};
        const auto [lo, hi] = std::minmax_element(one_sided, one_sided + 4);
        if (*hi - *lo > 0.5 * tol) {
            ++skipped;
            continue;
        }
        const double analytic = shape ? base.grad.shape_offset.data[3 * t + c] : base.grad.raw.data[t * channel::count + c];
        const double err = std::abs(analytic - central);
        ++tested;
        if (err > tol) ++failed;
        worst = std::max(worst, err / std::max(std::abs(central), 1e-5));
    }
    std::printf("gradcheck: %d samples, %d non-smooth stencils skipped, %d outside tolerance\n", tested, skipped, failed);
    std::printf("max relative error %.3e (threshold 1e-2 relative or 1e-5 absolute)\n", worst);
    std::printf("%s\n", failed == 0 ? "PASS" : "FAIL");
    write_manifest("gradcheck.manifest", {{"command", "gradcheck"}, {"args", args}, {"seed", std::to_string(seed)},
                                          {"failed", std::to_string(failed)}});
    return failed == 0 ? 0 : 2;
}

GaussianSet perf_gaussians(int n) {
    const HeadMesh mesh = make_procedural_head();
    const UvAtlas atlas = build_uv_atlas(mesh, 256);
    const AttributeMaps maps = ground_truth_maps(atlas, mesh, 1, 256);
    if (n <= 0) return sample_gaussians(maps, atlas, default_sample_grid(atlas, GridSpec{}), mesh.vertices).gaussians;
    int d = std::max(2, static_cast<int>(std::ceil(std::sqrt(n / 0.8))));
    SampleGrid grid;
    for (;; d = d * 5 / 4 + 1) {
        grid = default_sample_grid(atlas, GridSpec{d, d, 0, 0, false});
        if (static_cast<int>(grid.points.size()) >= n) break;
    }
    SampleGrid subset;
    const double stride = static_cast<double>(grid.points.size()) / n;
    for (int i = 0; i < n; ++i) subset.points.push_back(grid.points[static_cast<std::size_t>(i * stride)]);
    return sample_gaussians(maps, atlas, subset, mesh.vertices).gaussians;
}

int cmd_perf(int gaussians, int res, int threads, int frames, const std::string& args) {
    if (gaussians < 0) throw ValidationError("--gaussians must be >= 1 (or 0 for the default grid)");
    set_max_threads(threads);
    const GaussianSet g = perf_gaussians(gaussians);
    const Camera cam = ring_camera(0.0, 10.0, 2.8, 30.0, res);
    StageTimes sum;
    const auto t0 = std::chrono::steady_clock::now();
    for (int f = 0; f < frames; ++f) {
        const RenderOutput r = render(g, cam);
        const StageTimes& st = last_stage_times();
        sum.project += st.project;
        sum.sort += st.sort;
        sum.composite += st.composite;
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const double fps = frames / wall;
    std::printf("gaussians %d  resolution %dx%d  threads %d  frames %d\n", g.size(), res, res, max_threads(), frames);
    std::printf("mean FPS %.2f\n", fps);
    std::printf("per-frame ms: project %.3f  sort+bin %.3f  composite %.3f\n", 1e3 * sum.project / frames,
                1e3 * sum.sort / frames, 1e3 * sum.composite / frames);
    std::printf("not comparable to published GPU frame rates\n");
    write_manifest("perf.manifest", {{"command", "perf"}, {"args", args}, {"fps", std::to_string(fps)}});
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"UV-space rigged Gaussian head avatars"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kVersion));
    const std::string args = join_args(argc, argv);

    std::uint64_t seed = 1;
    std::string out_dir, out, config, scene, maps, mesh, pose, pose_seq, mode = "color";
    int res = 128, cameras = 8, frames = 8, samples = 500, gaussians = 0, threads = 0, checkpoint = 0;
    double elevation = 10.0;
    bool fusion = false;
    ViewOptions view;

    auto* synth = app.add_subcommand("synth", "render a synthetic multi-view scene");
    synth->add_option("--seed", seed);
    synth->add_option("--out-dir", out_dir)->required();
    synth->add_option("--res", res);
    synth->add_option("--cameras", cameras);

    auto* fitc = app.add_subcommand("fit", "fit attribute maps to a synthetic scene");
    fitc->add_option("--config", config);
    fitc->add_option("--scene", scene)->required();
    fitc->add_option("--out-dir", out_dir)->required();
    fitc->add_flag("--dump-fusion", fusion, "write every fusion intermediate for the first view");
    fitc->add_option("--checkpoint-every", checkpoint, "iterations between turntable checkpoints (0: none)");

    auto* renderc = app.add_subcommand("render", "render fitted maps");
    renderc->add_option("--maps", maps)->required();
    renderc->add_option("--mesh", mesh);
    renderc->add_option("--config", config);
    renderc->add_option("--pose", pose, "pose CSV file or inline row");
    renderc->add_option("--mode", mode, "color | i3d | iuv");
    renderc->add_option("--out", out)->required();
    add_view_options(renderc, view);

    auto* turn = app.add_subcommand("turntable", "render a ring of views");
    turn->add_option("--maps", maps)->required();
    turn->add_option("--mesh", mesh);
    turn->add_option("--config", config);
    turn->add_option("--frames", frames);
    turn->add_option("--elevation", elevation);
    turn->add_option("--out-dir", out_dir)->required();
    add_view_options(turn, view);

    auto* anim = app.add_subcommand("animate", "render a pose sequence");
    anim->add_option("--maps", maps)->required();
    anim->add_option("--mesh", mesh);
    anim->add_option("--config", config);
    anim->add_option("--pose-sequence", pose_seq)->required();
    anim->add_option("--out-dir", out_dir)->required();
    add_view_options(anim, view);

    auto* grad = app.add_subcommand("gradcheck", "finite-difference check of the full objective");
    grad->add_option("--config", config);
    grad->add_option("--samples", samples);
    grad->add_option("--seed", seed);

    auto* perf = app.add_subcommand("perf", "rasterizer throughput");
    perf->add_option("--gaussians", gaussians, "Gaussian count (0: default sampling grid)");
    perf->add_option("--res", res);
    perf->add_option("--threads", threads);
    perf->add_option("--frames", frames);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*synth) return cmd_synth(seed, out_dir, res, cameras, args);
        if (*fitc) return cmd_fit(config, scene, out_dir, fusion, checkpoint, args);
        if (*renderc) return cmd_render(maps, mesh, config, pose, view, mode, out, args);
        if (*turn) return cmd_turntable(maps, mesh, config, frames, out_dir, view, elevation, args);
        if (*anim) return cmd_animate(maps, mesh, config, pose_seq, view, out_dir, args);
        if (*grad) return cmd_gradcheck(config, samples, seed, args);
        if (*perf) {
            if (!perf->count("--res")) res = 256;
            if (!perf->count("--frames")) frames = 100;
            return cmd_perf(gaussians, res, threads, frames, args);
        }
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
