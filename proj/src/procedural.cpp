#include "uvsplat/procedural.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace uvsplat {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kDeg = kPi / 180.0;

// UV island extents and surface proportions.
constexpr double kMarginU = 0.02;
constexpr double kBottomV = 0.02;
constexpr double kTopV = 0.98;
constexpr double kPolarMax = 150.0 * kDeg;
constexpr double kSemiX = 0.40, kSemiY = 0.50, kSemiZ = 0.45;

double smoothstep01(double x) {
    x = std::clamp(x, 0.0, 1.0);
    return x * x * (3.0 - 2.0 * x);
}

double wrap_angle(double a) {
    while (a > kPi) a -= 2 * kPi;
    while (a < -kPi) a += 2 * kPi;
    return a;
}

double bump(double az, double polar, double az0, double polar0, double sigma_deg) {
    const double da = wrap_angle(az - az0) * std::sin(polar);
    const double dp = polar - polar0;
    const double s = sigma_deg * kDeg;
    return std::exp(-(da * da + dp * dp) / (2 * s * s));
}

double angular_distance(double az, double polar, double az0, double polar0) {
    const double da = wrap_angle(az - az0) * std::sin(0.5 * (polar + polar0));
    const double dp = polar - polar0;
    return std::sqrt(da * da + dp * dp);
}

double hairness(double az, double polar) {
    // 1 over the crown and back of the head, fading toward the face.
    const double crown = smoothstep01((40.0 * kDeg - polar) / (20.0 * kDeg));
    const double back = smoothstep01((std::abs(az) - 150.0 * kDeg) / (20.0 * kDeg)) *
                        smoothstep01((130.0 * kDeg - polar) / (20.0 * kDeg));
    return std::max(crown, back);
}

Vec3 direction(double az, double polar) {
    return {std::sin(polar) * std::sin(az), std::cos(polar), std::sin(polar) * std::cos(az)};
}

Vec3 surface_point(double az, double polar, const ProceduralHeadOptions& opts) {
    const Vec3 d = direction(az, polar);
    const Vec3 e(kSemiX * d.x(), kSemiY * d.y(), kSemiZ * d.z());
    double r = 0.07 * bump(az, polar, 0.0, 95 * kDeg, 9.0);                 // nose
    r += 0.035 * bump(az, polar, 0.0, 127 * kDeg, 13.0);                    // chin
    r -= 0.03 * bump(az, polar, 22 * kDeg, 80 * kDeg, 7.0);                 // eye sockets
    r -= 0.03 * bump(az, polar, -22 * kDeg, 80 * kDeg, 7.0);
    r += 0.025 * bump(az, polar, 90 * kDeg, 95 * kDeg, 8.0);                // ears
    r += 0.025 * bump(az, polar, -90 * kDeg, 95 * kDeg, 8.0);
    r += opts.hair_volume * hairness(az, polar);
    return e + r * d;
}

Region classify(double az, double polar) {
    if (angular_distance(az, polar, 22 * kDeg, 80 * kDeg) < 9 * kDeg) return Region::left_eye;
    if (angular_distance(az, polar, -22 * kDeg, 80 * kDeg) < 9 * kDeg) return Region::right_eye;
    if (std::abs(az) < 12 * kDeg && polar > 109 * kDeg && polar < 115 * kDeg) return Region::mouth_interior_cover;
    if (hairness(az, polar) > 0.5) return Region::hair;
    return Region::face;
}

double smile_weight(double az, double polar) {
    const double side = az >= 0 ? 1.0 : -1.0;
    const double d = angular_distance(az, polar, side * 14 * kDeg, 112 * kDeg);
    return smoothstep01(1.0 - d / (12 * kDeg));
}

double jaw_skin_weight(double az, double polar) {
    return smoothstep01((polar / kDeg - 95.0) / 20.0) * smoothstep01((70.0 - std::abs(az) / kDeg) / 20.0);
}

// Cheap deterministic hash noise in [0,1).
double hash01(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    std::uint64_t h = seed * 0x9E3779B97F4A7C15ull ^ (a + 0x632BE59BD9B4E019ull) * 0xBF58476D1CE4E5B9ull ^
                      (b + 0x85EBCA77C2B2AE63ull) * 0x94D049BB133111EBull;
    h ^= h >> 31;
    h *= 0xD6E8FEB86659FD93ull;
    h ^= h >> 32;
    return static_cast<double>(h >> 11) * (1.0 / 9007199254740992.0);
}

} // namespace

double procedural_jaw_weight(double azimuth, double polar) {
    return smoothstep01((polar / kDeg - 100.0) / 15.0) * smoothstep01((60.0 - std::abs(azimuth) / kDeg) / 15.0);
}

std::optional<Vec2> procedural_angles(const Vec2& uv, const ProceduralHeadOptions&) {
    const double uf = (uv.x() - kMarginU) / (1.0 - 2 * kMarginU);
    const double vf = (uv.y() - kBottomV) / (kTopV - kBottomV);
    if (uf < 0 || uf > 1 || vf < 0 || vf > 1) return std::nullopt;
    return Vec2((uf - 0.5) * 2 * kPi, kPolarMax * (1.0 - vf));
}

HeadMesh make_procedural_head(const ProceduralHeadOptions& opts) {
    if (opts.cells_u < 4 || opts.cells_u % 2 != 0 || opts.cells_v < 3) {
        throw ValidationError("procedural head needs an even cells_u >= 4 and cells_v >= 3");
    }
    const int nu = opts.cells_u, nv = opts.cells_v;
    auto u_at = [&](int i) { return kMarginU + (1.0 - 2 * kMarginU) * i / nu; };
    auto v_at = [&](int j) { return kBottomV + (kTopV - kBottomV) * j / nv; };
    auto az_at = [&](int i) { return static_cast<double>(2 * i - nu) / nu * kPi; };
    auto polar_at = [&](int j) { return kPolarMax * (1.0 - static_cast<double>(j) / nv); };

    HeadMesh mesh;
    mesh.mirror_symmetric = true;
    std::vector<Vec2> vert_angles;
    for (int j = 0; j < nv; ++j) {
        for (int i = 0; i < nu; ++i) {
            // Mirror pairs must be exact: build from |az| and reflect x.
            const double az = az_at(i);
            Vec3 p = surface_point(std::abs(az), polar_at(j), opts);
            if (az < 0) p.x() = -p.x();
            mesh.vertices.push_back(p);
            vert_angles.emplace_back(az, polar_at(j));
        }
    }
    const int pole = static_cast<int>(mesh.vertices.size());
    mesh.vertices.push_back(surface_point(0.0, 0.0, opts));
    vert_angles.emplace_back(0.0, 0.0);
    auto vid = [&](int i, int j) { return j * nu + (i % nu); };

    auto add = [&](std::array<int, 3> tri, std::array<Vec2, 3> uv) {
        mesh.triangles.push_back(tri);
        mesh.uv_corners.push_back(uv);
        Vec2 centroid = (uv[0] + uv[1] + uv[2]) / 3.0;
        const Vec2 ang = *procedural_angles(centroid, opts);
        mesh.region_labels.push_back(classify(ang.x(), ang.y()));
    };

    for (int j = 0; j < nv; ++j) {
        for (int i = 0; i < nu; ++i) {
            const Vec2 a(u_at(i), v_at(j)), b(u_at(i + 1), v_at(j));
            const Vec2 c(u_at(i + 1), v_at(j + 1)), d(u_at(i), v_at(j + 1));
            if (j == nv - 1) {
                const Vec2 top(0.5 * (a.x() + b.x()), v_at(nv));
                add({vid(i, j), vid(i + 1, j), pole}, {a, b, top});
            } else if (i < nu / 2) {
                add({vid(i, j), vid(i + 1, j), vid(i + 1, j + 1)}, {a, b, c});
                add({vid(i, j), vid(i + 1, j + 1), vid(i, j + 1)}, {a, c, d});
            } else {
                add({vid(i, j), vid(i + 1, j), vid(i, j + 1)}, {a, b, d});
                add({vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)}, {b, c, d});
            }
        }
    }

    const int V = mesh.num_vertices();
    mesh.joint_parents = {-1, 0, 1};
    mesh.skin_weights = Eigen::MatrixXd::Zero(V, 3);
    mesh.joint_regressor = Eigen::MatrixXd::Zero(3, V);
    for (int i = 0; i < nu; ++i) mesh.joint_regressor(1, vid(i, 0)) = 1.0 / nu;
    // Jaw hinge between the two vertices nearest the ear roots.
    int left = 0, right = 0;
    double best_l = 1e9, best_r = 1e9;
    for (int v = 0; v < pole; ++v) {
        const double dl = angular_distance(vert_angles[v].x(), vert_angles[v].y(), 75 * kDeg, 110 * kDeg);
        const double dr = angular_distance(vert_angles[v].x(), vert_angles[v].y(), -75 * kDeg, 110 * kDeg);
        if (dl < best_l) best_l = dl, left = v;
        if (dr < best_r) best_r = dr, right = v;
    }
    mesh.joint_regressor(2, left) = 0.5;
    mesh.joint_regressor(2, right) = 0.5;

    mesh.shape_basis = Eigen::MatrixXd::Zero(3 * V, 3);
    mesh.expr_basis = Eigen::MatrixXd::Zero(3 * V, 2);
    mesh.pose_basis.resize(3 * V, 0);
    for (int v = 0; v < V; ++v) {
        const Vec3& p = mesh.vertices[v];
        const double az = vert_angles[v].x(), polar = vert_angles[v].y();
        const double wj = v == pole ? 0.0 : jaw_skin_weight(az, polar);
        mesh.skin_weights(v, 1) = 1.0 - wj;
        mesh.skin_weights(v, 2) = wj;
        for (int a = 0; a < 3; ++a) mesh.shape_basis(3 * v + a, a) = 0.1 * p[a];
        if (v == pole) continue;
        const double g = procedural_jaw_weight(az, polar);
        mesh.expr_basis(3 * v + 1, 0) = -0.08 * g;
        mesh.expr_basis(3 * v + 2, 0) = -0.02 * g;
        const double s = smile_weight(az, polar);
        mesh.expr_basis(3 * v + 0, 1) = (az >= 0 ? 0.012 : -0.012) * s;
        mesh.expr_basis(3 * v + 1, 1) = 0.02 * s;
    }
    return mesh;
}

Vec3 procedural_albedo(const Vec2& uv, Region region, std::uint64_t seed, const ProceduralHeadOptions& opts) {
    const auto ang = procedural_angles(uv, opts);
    if (!ang) return Vec3::Zero();
    const double az = ang->x(), polar = ang->y();
    const double p1 = 2 * kPi * hash01(seed, 1, 0), p2 = 2 * kPi * hash01(seed, 2, 0);
    const double tint = 0.06 * (hash01(seed, 3, 0) - 0.5);
    switch (region) {
    case Region::hair: {
        const double streak = 0.5 + 0.5 * std::sin(14 * az + 3 * std::sin(5 * polar + p1));
        return Vec3(0.28 + tint, 0.18, 0.11) + 0.07 * streak * Vec3(1.0, 0.8, 0.6);
    }
    case Region::left_eye:
    case Region::right_eye: {
        const double cx = (region == Region::left_eye ? 22 : -22) * kDeg;
        const double d = angular_distance(az, polar, cx, 80 * kDeg);
        if (d < 3.5 * kDeg) return {0.12, 0.2 + 0.1 * hash01(seed, 4, 0), 0.32};
        return {0.93, 0.92, 0.9};
    }
    case Region::mouth_interior_cover: return {0.45, 0.12, 0.14};
    case Region::face: break;
    }
    Vec3 skin(0.86 + tint, 0.66, 0.55);
    skin += 0.04 * std::sin(3 * az + p1) * std::cos(4 * polar + p2) * Vec3(1.0, 0.7, 0.6);
    // Lips and brows.
    if (std::abs(az) < 20 * kDeg && std::abs(polar - 112 * kDeg) < 4.5 * kDeg) skin = {0.72, 0.3, 0.3};
    for (double side : {1.0, -1.0}) {
        if (std::abs(az - side * 22 * kDeg) < 11 * kDeg && std::abs(polar - 68 * kDeg) < 2.5 * kDeg) {
            skin = {0.3, 0.2, 0.13};
        }
    }
    return skin;
}

} // namespace uvsplat
