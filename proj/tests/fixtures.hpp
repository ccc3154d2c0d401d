#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "uvsplat/geometry.hpp"
#include "uvsplat/gsmap.hpp"
#include "uvsplat/splat.hpp"

namespace fixtures {

using namespace uvsplat;

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = a.size() == b.size() ? 0.0 : INFINITY;
    for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline std::filesystem::path temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("uvsplat_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

// Unit square in z = 0 with uv = (x, y), split along its diagonal.
inline HeadMesh quad_mesh(double z = 0.0, double size = 1.0) {
    HeadMesh m;
    m.vertices = {{0, 0, z}, {size, 0, z}, {size, size, z}, {0, size, z}};
    m.triangles = {{0, 1, 2}, {0, 2, 3}};
    m.uv_corners = {{Vec2(0, 0), Vec2(1, 0), Vec2(1, 1)}, {Vec2(0, 0), Vec2(1, 1), Vec2(0, 1)}};
    m.fill_defaults();
    return m;
}

// Two disjoint UV triangles whose 3D/UV area ratios are r1 and r2.
inline HeadMesh two_triangle_mesh(double r1, double r2) {
    HeadMesh m;
    const std::array<Vec2, 3> a = {Vec2(0.05, 0.05), Vec2(0.45, 0.05), Vec2(0.05, 0.45)};
    const std::array<Vec2, 3> b = {Vec2(0.55, 0.55), Vec2(0.95, 0.55), Vec2(0.55, 0.95)};
    const double ka = std::sqrt(r1), kb = std::sqrt(r2);
    for (const auto& uv : a) m.vertices.push_back(Vec3(ka * uv.x(), ka * uv.y(), 0.0));
    for (const auto& uv : b) m.vertices.push_back(Vec3(kb * uv.x(), kb * uv.y(), 1.0));
    m.triangles = {{0, 1, 2}, {3, 4, 5}};
    m.uv_corners = {a, b};
    m.fill_defaults();
    return m;
}

// Random Gaussians in a slab in front of a camera at the origin looking down +z.
inline GaussianSet random_gaussians(int n, std::mt19937_64& rng, double spread = 0.6, double max_opacity = 0.99,
                                    double min_scale = 0.02) {
    std::uniform_real_distribution<double> u(-1.0, 1.0), z(2.0, 4.0), s(min_scale, 0.15), o(0.05, max_opacity), c(0.0, 1.0);
    std::normal_distribution<double> nq(0.0, 1.0);
    GaussianSet g;
    for (int i = 0; i < n; ++i) {
        g.position.push_back(Vec3(spread * u(rng), spread * u(rng), z(rng)));
        g.rotation.push_back(Vec4(nq(rng), nq(rng), nq(rng), nq(rng)).normalized());
        g.scale.push_back(Vec3(s(rng), s(rng), s(rng)));
        g.opacity.push_back(o(rng));
        g.color.push_back(Vec3(c(rng), c(rng), c(rng)));
        GaussianRig rig;
        rig.uv = Vec2(c(rng), c(rng));
        g.rig.push_back(rig);
        g.local_offset.push_back(Vec3::Zero());
    }
    return g;
}

inline Camera axis_camera(int res, double f) {
    Camera cam;
    cam.fx = cam.fy = f;
    cam.cx = cam.cy = 0.5 * (res - 1);
    cam.width = cam.height = res;
    return cam;
}

// Per-pixel loop over every splat, depth then index order. The weight rule is
// restated here so the oracle does not share code with the renderer.
inline double oracle_weight(double raw) {
    const double tau = 1.0 / 255.0;
    const double d = std::min(raw, 0.999);
    if (d < tau) return 0.0;
    if (d >= 2 * tau) return d;
    const double u = d / tau - 1.0;
    return tau * (5.0 * u * u - 3.0 * u * u * u);
}

struct OracleImage {
    std::vector<double> color, alpha;
};

inline OracleImage naive_composite(const Projection& proj, const std::vector<double>& channels, int C, int W, int H,
                                   const std::vector<double>& bg) {
    std::vector<int> ids;
    for (int i = 0; i < static_cast<int>(proj.splats.size()); ++i)
        if (proj.splats[i].visible) ids.push_back(i);
    std::stable_sort(ids.begin(), ids.end(),
                     [&](int a, int b) { return proj.splats[a].depth < proj.splats[b].depth; });
    OracleImage out;
    out.color.assign(static_cast<std::size_t>(W) * H * C, 0.0);
    out.alpha.assign(static_cast<std::size_t>(W) * H, 0.0);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            double T = 1.0;
            std::vector<double> acc(C, 0.0);
            for (int i : ids) {
                const Splat& s = proj.splats[i];
                const Mat2 inv = s.cov.inverse();
                const Vec2 d(x - s.mean.x(), y - s.mean.y());
                const double w = oracle_weight(s.opacity * std::exp(-0.5 * d.dot(inv * d)));
                if (w == 0.0) continue;
                if (T * (1.0 - w) < 1e-4) break;
                for (int c = 0; c < C; ++c) acc[c] += T * w * channels[static_cast<std::size_t>(i) * C + c];
                T *= 1.0 - w;
            }
            const std::size_t p = static_cast<std::size_t>(y) * W + x;
            for (int c = 0; c < C; ++c) out.color[p * C + c] = acc[c] + T * bg[c];
            out.alpha[p] = 1.0 - T;
        }
    }
    return out;
}

// One small Gaussian on the ray through every pixel center of a
// fronto-parallel plane at depth z, `margin` pixels past the frame on each
// side. Rig uv maps pixel (x, y) affinely to uv0 + uv_step * (x, y).
inline GaussianSet pixel_plane(const Camera& cam, double z, int margin, double opacity, const Vec2& uv0 = Vec2::Zero(),
                               double uv_step = 0.01) {
    GaussianSet g;
    const Mat3 Rt = cam.R.transpose();
    for (int y = -margin; y < cam.height + margin; ++y) {
        for (int x = -margin; x < cam.width + margin; ++x) {
            const Vec3 pc((x - cam.cx) / cam.fx * z, (y - cam.cy) / cam.fy * z, z);
            g.position.push_back(Rt * (pc - cam.t));
            g.rotation.push_back(Vec4(1, 0, 0, 0));
            g.scale.push_back(Vec3::Constant(1e-4));
            g.opacity.push_back(opacity);
            g.color.push_back(Vec3(0.5, 0.5, 0.5));
            GaussianRig rig;
            rig.uv = uv0 + uv_step * Vec2(x, y);
            g.rig.push_back(rig);
            g.local_offset.push_back(Vec3::Zero());
        }
    }
    return g;
}

// Eyelid and eyeball as one continuous hole-free surface: a pixel plane whose
// central disc of `radius` pixels takes its rig uv from a distant UV island.
inline GaussianSet eye_adjacency(const Camera& cam, double z, double radius) {
    GaussianSet lid = pixel_plane(cam, z, 3, 0.999, Vec2(0.25, 0.45), 0.0025);
    const GaussianSet ball = pixel_plane(cam, z, 3, 0.999, Vec2(0.8, 0.1), 0.003);
    int i = 0;
    for (int y = -3; y < cam.height + 3; ++y)
        for (int x = -3; x < cam.width + 3; ++x, ++i)
            if (std::hypot(x - cam.cx, y - cam.cy) < radius) lid.rig[i].uv = ball.rig[i].uv;
    return lid;
}

// Moller-Trumbore first hit along a ray; returns the ray parameter or -1.
inline double ray_triangle(const Vec3& o, const Vec3& dir, const Vec3& a, const Vec3& b, const Vec3& c) {
    const Vec3 e1 = b - a, e2 = c - a;
    const Vec3 p = dir.cross(e2);
    const double det = e1.dot(p);
    if (std::abs(det) < 1e-14) return -1.0;
    const Vec3 s = o - a;
    const double u = s.dot(p) / det;
    if (u < 0.0 || u > 1.0) return -1.0;
    const Vec3 q = s.cross(e1);
    const double v = dir.dot(q) / det;
    if (v < 0.0 || u + v > 1.0) return -1.0;
    const double t = e2.dot(q) / det;
    return t > 1e-9 ? t : -1.0;
}

} // namespace fixtures
