#include "uvsplat/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace uvsplat {

std::string_view region_name(Region r) {
    switch (r) {
    case Region::face: return "face";
    case Region::hair: return "hair";
    case Region::left_eye: return "left_eye";
    case Region::right_eye: return "right_eye";
    case Region::mouth_interior_cover: return "mouth_interior_cover";
    }
    return "unknown";
}

std::optional<Region> parse_region(std::string_view name) {
    for (Region r : kAllRegions) {
        if (region_name(r) == name) return r;
    }
    return std::nullopt;
}

double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c) {
    return 0.5 * (b - a).cross(c - a).norm();
}

double triangle_area(const Vec2& a, const Vec2& b, const Vec2& c) {
    const Vec2 e1 = b - a, e2 = c - a;
    return 0.5 * std::abs(e1.x() * e2.y() - e1.y() * e2.x());
}

void HeadMesh::fill_defaults() {
    const int V = num_vertices();
    if (joint_parents.empty()) {
        joint_parents = {-1};
        skin_weights = Eigen::MatrixXd::Ones(V, 1);
        joint_regressor = Eigen::MatrixXd::Zero(1, V);
    }
    const int J = num_joints();
    if (skin_weights.size() == 0) {
        skin_weights = Eigen::MatrixXd::Zero(V, J);
        skin_weights.col(0).setOnes();
    }
    if (joint_regressor.size() == 0) joint_regressor = Eigen::MatrixXd::Zero(J, V);
    if (shape_basis.size() == 0) shape_basis.resize(3 * V, 0);
    if (pose_basis.size() == 0) pose_basis.resize(3 * V, 0);
    if (expr_basis.size() == 0) expr_basis.resize(3 * V, 0);
    if (region_labels.empty()) region_labels.assign(triangles.size(), Region::face);
}

void HeadMesh::validate() const {
    const int V = num_vertices();
    const int F = num_triangles();
    auto fail = [](const std::string& what) { throw ValidationError("mesh invariant violated: " + what); };

    for (int v = 0; v < V; ++v) {
        if (!vertices[v].allFinite()) fail("vertex " + std::to_string(v) + " is not finite");
    }
    for (int f = 0; f < F; ++f) {
        for (int k = 0; k < 3; ++k) {
            if (triangles[f][k] < 0 || triangles[f][k] >= V) {
                fail("triangle index < V (triangle " + std::to_string(f) + ")");
            }
        }
    }
    if (static_cast<int>(uv_corners.size()) != F) fail("one UV triple per triangle");
    for (int f = 0; f < F; ++f) {
        for (const auto& uv : uv_corners[f]) {
            if (!(uv.x() >= 0.0 && uv.x() <= 1.0 && uv.y() >= 0.0 && uv.y() <= 1.0)) {
                fail("UV coordinates in [0,1]^2 (triangle " + std::to_string(f) + ")");
            }
        }
        const auto& c = uv_corners[f];
        if (!(triangle_area(c[0], c[1], c[2]) > 1e-14)) {
            fail("UV triangle area > 0 (triangle " + std::to_string(f) + ")");
        }
    }
    const int J = num_joints();
    if (J < 1) fail("at least one joint");
    for (int j = 0; j < J; ++j) {
        const int p = joint_parents[j];
        if ((j == 0 && p != -1) || (j > 0 && (p < 0 || p >= j))) {
            fail("joint parents precede children (joint " + std::to_string(j) + ")");
        }
    }
    if (skin_weights.rows() != V || skin_weights.cols() != J) fail("skin weights are V x J");
    for (int v = 0; v < V; ++v) {
        const double s = skin_weights.row(v).sum();
        if (!(std::abs(s - 1.0) <= 1e-6)) {
            fail("skin-weight row sums to 1 +- 1e-6 (vertex " + std::to_string(v) + " sums to " +
                 std::to_string(s) + ")");
        }
    }
    if (joint_regressor.rows() != J || joint_regressor.cols() != V) fail("joint regressor is J x V");
    if (shape_basis.rows() != 3 * V) fail("shape basis has 3V rows");
    if (expr_basis.rows() != 3 * V) fail("expression basis has 3V rows");
    if (pose_basis.rows() != 3 * V) fail("pose basis has 3V rows");
    if (pose_basis.cols() != 0 && pose_basis.cols() != 9 * (J - 1)) fail("pose basis has 0 or 9(J-1) columns");
    if (!shape_basis.allFinite() || !expr_basis.allFinite() || !pose_basis.allFinite()) fail("finite bases");
    if (static_cast<int>(region_labels.size()) != F) fail("one region label per triangle");
}

PoseParams PoseParams::zeros(const HeadMesh& mesh) {
    PoseParams p;
    p.beta = Eigen::VectorXd::Zero(mesh.shape_basis.cols());
    p.theta = Eigen::VectorXd::Zero(3 * mesh.num_joints());
    p.psi = Eigen::VectorXd::Zero(mesh.expr_basis.cols());
    return p;
}

Mat3 axis_angle_to_matrix(const Vec3& aa) {
    const double angle = aa.norm();
    if (angle == 0.0) return Mat3::Identity();
    return Eigen::AngleAxisd(angle, aa / angle).toRotationMatrix();
}

std::vector<Vec3> deform(const HeadMesh& mesh, const PoseParams& params) {
    const int V = mesh.num_vertices();
    const int J = mesh.num_joints();
    if (params.beta.size() != mesh.shape_basis.cols() || params.psi.size() != mesh.expr_basis.cols() ||
        params.theta.size() != 3 * J) {
        throw ValidationError("pose parameter dimensions do not match mesh bases");
    }
    if (!params.beta.allFinite() || !params.theta.allFinite() || !params.psi.allFinite()) {
        throw ValidationError("pose parameters must be finite");
    }

    Eigen::VectorXd shaped(3 * V);
    for (int v = 0; v < V; ++v) shaped.segment<3>(3 * v) = mesh.vertices[v];
    if (params.beta.size() > 0) shaped += mesh.shape_basis * params.beta;

    std::vector<Mat3> rot(J);
    for (int j = 0; j < J; ++j) rot[j] = axis_angle_to_matrix(params.theta.segment<3>(3 * j));

    Eigen::VectorXd posed = shaped;
    if (mesh.pose_basis.cols() > 0) {
        Eigen::VectorXd feature(9 * (J - 1));
        for (int j = 1; j < J; ++j) {
            const Mat3 d = rot[j] - Mat3::Identity();
            for (int r = 0; r < 3; ++r)
                for (int c = 0; c < 3; ++c) feature[9 * (j - 1) + 3 * r + c] = d(r, c);
        }
        posed += mesh.pose_basis * feature;
    }
    if (params.psi.size() > 0) posed += mesh.expr_basis * params.psi;

    // Joints regress from the shaped (unposed) surface.
    std::vector<Vec3> joint(J, Vec3::Zero());
    for (int j = 0; j < J; ++j) {
        for (int v = 0; v < V; ++v) {
            const double w = mesh.joint_regressor(j, v);
            if (w != 0.0) joint[j] += w * shaped.segment<3>(3 * v);
        }
    }

    // Skinning transforms relative to the rest pose: x -> M x + t.
    std::vector<Mat3> M(J);
    std::vector<Vec3> t(J);
    for (int j = 0; j < J; ++j) {
        const Vec3 local_t = joint[j] - rot[j] * joint[j];
        const int p = mesh.joint_parents[j];
        if (p < 0) {
            M[j] = rot[j];
            t[j] = local_t;
        } else {
            M[j] = M[p] * rot[j];
            t[j] = M[p] * local_t + t[p];
        }
    }

    std::vector<Vec3> out(V);
    for (int v = 0; v < V; ++v) {
        const Vec3 x = posed.segment<3>(3 * v);
        Vec3 delta = Vec3::Zero();
        for (int j = 0; j < J; ++j) {
            const double w = mesh.skin_weights(v, j);
            if (w != 0.0) delta += w * ((M[j] * x - x) + t[j]);
        }
        out[v] = x + delta;
    }
    return out;
}

namespace {

double cross2(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

// Strict interior overlap of two 2D triangles by separating axes.
bool uv_triangles_overlap(const std::array<Vec2, 3>& a, const std::array<Vec2, 3>& b) {
    constexpr double eps = 1e-12;
    auto separated_on = [&](const std::array<Vec2, 3>& tri) {
        for (int e = 0; e < 3; ++e) {
            const Vec2 edge = tri[(e + 1) % 3] - tri[e];
            const Vec2 axis(-edge.y(), edge.x());
            double amin = 1e300, amax = -1e300, bmin = 1e300, bmax = -1e300;
            for (int k = 0; k < 3; ++k) {
                const double pa = axis.dot(a[k]);
                const double pb = axis.dot(b[k]);
                amin = std::min(amin, pa);
                amax = std::max(amax, pa);
                bmin = std::min(bmin, pb);
                bmax = std::max(bmax, pb);
            }
            const double scale = eps * std::max(1.0, axis.norm());
            if (amax <= bmin + scale || bmax <= amin + scale) return true;
        }
        return false;
    };
    return !separated_on(a) && !separated_on(b);
}

void check_uv_overlaps(const HeadMesh& mesh) {
    const int F = mesh.num_triangles();
    const int G = std::clamp(static_cast<int>(std::sqrt(static_cast<double>(F))), 1, 256);
    std::vector<std::vector<int>> bins(static_cast<std::size_t>(G) * G);
    auto cell = [G](double x) { return std::clamp(static_cast<int>(x * G), 0, G - 1); };
    for (int f = 0; f < F; ++f) {
        const auto& c = mesh.uv_corners[f];
        const double u0 = std::min({c[0].x(), c[1].x(), c[2].x()});
        const double u1 = std::max({c[0].x(), c[1].x(), c[2].x()});
        const double v0 = std::min({c[0].y(), c[1].y(), c[2].y()});
        const double v1 = std::max({c[0].y(), c[1].y(), c[2].y()});
        for (int by = cell(v0); by <= cell(v1); ++by)
            for (int bx = cell(u0); bx <= cell(u1); ++bx) bins[by * G + bx].push_back(f);
    }
    std::set<std::pair<int, int>> tested;
    for (const auto& bin : bins) {
        for (std::size_t i = 0; i < bin.size(); ++i) {
            for (std::size_t j = i + 1; j < bin.size(); ++j) {
                const auto key = std::make_pair(bin[i], bin[j]);
                if (!tested.insert(key).second) continue;
                if (uv_triangles_overlap(mesh.uv_corners[bin[i]], mesh.uv_corners[bin[j]])) {
                    throw ValidationError("UV triangles " + std::to_string(bin[i]) + " and " +
                                          std::to_string(bin[j]) + " overlap");
                }
            }
        }
    }
}

} // namespace

int UvAtlas::valid_count() const {
    return static_cast<int>(std::count(valid.begin(), valid.end(), std::uint8_t{1}));
}

int UvAtlas::texel_at(const Vec2& uv) const {
    const int x = std::clamp(static_cast<int>(std::floor(uv.x() * K)), 0, K - 1);
    const int y = std::clamp(static_cast<int>(std::floor(uv.y() * K)), 0, K - 1);
    return y * K + x;
}

UvAtlas build_uv_atlas(const HeadMesh& mesh, int K) {
    if (K < 4) throw ValidationError("atlas resolution K must be >= 4");
    mesh.validate();
    check_uv_overlaps(mesh);

    UvAtlas atlas;
    atlas.K = K;
    atlas.mirror_symmetric = mesh.mirror_symmetric;
    atlas.triangles = mesh.triangles;
    atlas.uv_corners = mesh.uv_corners;
    const int n = K * K;
    atlas.tri_index.assign(n, -1);
    atlas.bary.assign(n, Vec3::Zero());
    atlas.valid.assign(n, 0);
    atlas.mirror.assign(n, -1);
    atlas.rel_scale.assign(n, 0.0);

    for (int f = 0; f < mesh.num_triangles(); ++f) {
        const auto& c = mesh.uv_corners[f];
        const double det = cross2(c[1] - c[0], c[2] - c[0]);
        const double u0 = std::min({c[0].x(), c[1].x(), c[2].x()});
        const double u1 = std::max({c[0].x(), c[1].x(), c[2].x()});
        const double v0 = std::min({c[0].y(), c[1].y(), c[2].y()});
        const double v1 = std::max({c[0].y(), c[1].y(), c[2].y()});
        const int x0 = std::max(0, static_cast<int>(std::floor(u0 * K - 0.5)));
        const int x1 = std::min(K - 1, static_cast<int>(std::ceil(u1 * K - 0.5)));
        const int y0 = std::max(0, static_cast<int>(std::floor(v0 * K - 0.5)));
        const int y1 = std::min(K - 1, static_cast<int>(std::ceil(v1 * K - 0.5)));
        const auto& tri = mesh.triangles[f];
        const double scale = std::sqrt(triangle_area(mesh.vertices[tri[0]], mesh.vertices[tri[1]],
                                                     mesh.vertices[tri[2]]) /
                                       triangle_area(c[0], c[1], c[2]));
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                const int t = y * K + x;
                if (atlas.valid[t]) continue;
                const Vec2 p((x + 0.5) / K, (y + 0.5) / K);
                Vec3 b(cross2(c[1] - p, c[2] - p) / det, cross2(c[2] - p, c[0] - p) / det,
                       cross2(c[0] - p, c[1] - p) / det);
                constexpr double tol = -1e-12;
                if (b.x() < tol || b.y() < tol || b.z() < tol) continue;
                b = b.cwiseMax(0.0);
                b /= b.sum();
                atlas.valid[t] = 1;
                atlas.tri_index[t] = f;
                atlas.bary[t] = b;
                atlas.rel_scale[t] = scale;
            }
        }
    }

    if (mesh.mirror_symmetric) {
        for (int t = 0; t < n; ++t) {
            if (!atlas.valid[t]) continue;
            const int m = (t / K) * K + (K - 1 - t % K);
            if (atlas.valid[m]) atlas.mirror[t] = m;
        }
    }

    for (int t = 0; t < n; ++t) {
        if (!atlas.valid[t]) continue;
        auto& mask = atlas.region_masks[mesh.region_labels[atlas.tri_index[t]]];
        if (mask.empty()) mask.assign(n, 0);
        mask[t] = 1;
    }

    std::set<std::pair<double, double>> seen;
    for (const auto& c : mesh.uv_corners) {
        for (const auto& uv : c) {
            if (seen.insert({uv.x(), uv.y()}).second) atlas.vertex_uvs.push_back(uv);
        }
    }

    atlas.canonical_tri_frames = triangle_frames(mesh.triangles, mesh.uv_corners, mesh.vertices);
    return atlas;
}

Image position_map(const UvAtlas& atlas, const std::vector<Vec3>& verts) {
    Image p(atlas.K, atlas.K, 3);
    for (int t = 0; t < atlas.texel_count(); ++t) {
        if (!atlas.valid[t]) continue;
        const auto& tri = atlas.triangles[atlas.tri_index[t]];
        const Vec3& b = atlas.bary[t];
        const Vec3 pos = b.x() * verts[tri[0]] + b.y() * verts[tri[1]] + b.z() * verts[tri[2]];
        for (int c = 0; c < 3; ++c) p.data[3 * t + c] = pos[c];
    }
    return p;
}

TexelFrames triangle_frames(const std::vector<std::array<int, 3>>& triangles,
                            const std::vector<std::array<Vec2, 3>>& uv_corners,
                            const std::vector<Vec3>& verts) {
    TexelFrames out;
    out.frame.assign(triangles.size(), Mat3::Identity());
    out.ok.assign(triangles.size(), 0);
    for (std::size_t f = 0; f < triangles.size(); ++f) {
        const auto& tri = triangles[f];
        const Vec3 e1 = verts[tri[1]] - verts[tri[0]];
        const Vec3 e2 = verts[tri[2]] - verts[tri[0]];
        const Vec3 n = e1.cross(e2);
        if (0.5 * n.norm() < 1e-12) continue;
        const Vec3 N = n.normalized();
        const Vec2 d1 = uv_corners[f][1] - uv_corners[f][0];
        const Vec2 d2 = uv_corners[f][2] - uv_corners[f][0];
        const double det = cross2(d1, d2);
        const Vec3 dpdu = (e1 * d2.y() - e2 * d1.y()) / det;
        Vec3 T = dpdu - dpdu.dot(N) * N;
        if (T.norm() < 1e-12) T = e1 - e1.dot(N) * N;
        T.normalize();
        Mat3 frame;
        frame.col(0) = T;
        frame.col(1) = N.cross(T);
        frame.col(2) = N;
        out.frame[f] = frame;
        out.ok[f] = 1;
    }
    return out;
}

TexelFrames tangent_frames(const UvAtlas& atlas, const std::vector<Vec3>& verts) {
    const TexelFrames tri = triangle_frames(atlas.triangles, atlas.uv_corners, verts);
    TexelFrames out;
    out.frame.assign(atlas.texel_count(), Mat3::Identity());
    out.ok.assign(atlas.texel_count(), 0);
    for (int t = 0; t < atlas.texel_count(); ++t) {
        if (!atlas.valid[t]) continue;
        out.frame[t] = tri.frame[atlas.tri_index[t]];
        out.ok[t] = tri.ok[atlas.tri_index[t]];
    }
    return out;
}

const std::vector<std::uint8_t>& region_mask(const UvAtlas& atlas, Region region) {
    const auto it = atlas.region_masks.find(region);
    if (it == atlas.region_masks.end()) {
        throw ValidationError("region '" + std::string(region_name(region)) + "' is absent from the mesh");
    }
    return it->second;
}

const std::vector<std::uint8_t>& region_mask(const UvAtlas& atlas, std::string_view name) {
    const auto r = parse_region(name);
    if (!r) throw ValidationError("unknown region tag '" + std::string(name) + "'");
    return region_mask(atlas, *r);
}

} // namespace uvsplat
