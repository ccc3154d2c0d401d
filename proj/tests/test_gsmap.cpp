#include <doctest.h>

#include <set>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "uvsplat/procedural.hpp"

using namespace uvsplat;
using namespace fixtures;
using namespace oracles;

namespace {

std::vector<std::uint8_t> full_mask(int n) { return std::vector<std::uint8_t>(n, 1); }

} // namespace

TEST_CASE("dense 2x2 grid on a fully valid atlas gives four points") {
    const UvAtlas atlas = build_uv_atlas(quad_mesh(), 8);
    CHECK(atlas.valid_count() == 64);
    const SampleGrid g = default_sample_grid(atlas, GridSpec{2, 2, 0, 0, false});
    CHECK(g.points.size() == 4);
}

TEST_CASE("dense grid count equals valid non-hair texels") {
    const HeadMesh head = make_procedural_head();
    const UvAtlas atlas = build_uv_atlas(head, 64);
    const auto& hair = region_mask(atlas, Region::hair);
    int want = 0;
    for (int t = 0; t < atlas.texel_count(); ++t) want += atlas.valid[t] && !hair[t];
    const SampleGrid g = default_sample_grid(atlas, GridSpec{64, 64, 0, 0, false});
    CHECK(static_cast<int>(g.points.size()) == want);
}

TEST_CASE("default grid on the head gives about 78K unique points") {
    const HeadMesh head = make_procedural_head();
    const UvAtlas atlas = build_uv_atlas(head, 256);
    const SampleGrid g = default_sample_grid(atlas, GridSpec{});
    CHECK(g.points.size() > 74000);
    CHECK(g.points.size() < 82000);
    std::set<std::pair<long, long>> seen;
    int dup = 0, outside = 0;
    for (const auto& p : g.points) {
        dup += !seen.insert({std::lround(p.uv.x() * 1e8), std::lround(p.uv.y() * 1e8)}).second;
        outside += p.uv.x() < 0 || p.uv.x() > 1 || p.uv.y() < 0 || p.uv.y() > 1;
    }
    CHECK(dup == 0);
    CHECK(outside == 0);
}

TEST_CASE("empty grid is rejected") {
    HeadMesh m = quad_mesh();
    const UvAtlas atlas = build_uv_atlas(m, 8);
    CHECK_THROWS_AS(default_sample_grid(atlas, GridSpec{0, 0, 0, 0, false}), ValidationError);
}

TEST_CASE("shape offset is added on valid texels only") {
    const HeadMesh head = make_procedural_head();
    const UvAtlas atlas = build_uv_atlas(head, 32);
    const Image p = position_map(atlas, head.vertices);
    Image zero(32, 32, 3);
    CHECK(apply_shape_offset(p, zero, atlas.valid).data == p.data);

    Image lift(32, 32, 3);
    for (int t = 0; t < 32 * 32; ++t) lift.data[3 * t + 2] = 0.1;
    const Image up = apply_shape_offset(p, lift, atlas.valid);
    for (int t = 0; t < 32 * 32; ++t) {
        CHECK(up.data[3 * t] == p.data[3 * t]);
        CHECK(up.data[3 * t + 2] == (atlas.valid[t] ? p.data[3 * t + 2] + 0.1 : p.data[3 * t + 2]));
    }

    std::mt19937_64 rng(2);
    std::normal_distribution<double> n(0, 1);
    Image dp(32, 32, 3);
    for (auto& v : dp.data) v = n(rng);
    const Image r = apply_shape_offset(p, dp, full_mask(32 * 32));
    double err = 0;
    for (std::size_t i = 0; i < r.data.size(); ++i) err = std::max(err, std::abs(r.data[i] - (p.data[i] + dp.data[i])));
    CHECK(err == 0.0);
}

TEST_CASE("zero raw maps activate to neutral values on the surface frame") {
    const HeadMesh head = make_procedural_head();
    const UvAtlas atlas = build_uv_atlas(head, 32);
    const SampleGrid grid = default_sample_grid(atlas, GridSpec{32, 32, 64, 16, false});
    const AttributeMaps A = AttributeMaps::zeros(32);
    const auto s = sample_gaussians(A, atlas, grid, head.vertices);
    REQUIRE(s.gaussians.size() > 0);
    for (int i = 0; i < s.gaussians.size(); ++i) {
        CHECK(s.gaussians.color[i] == Vec3::Constant(0.5));
        CHECK(s.gaussians.opacity[i] == 0.5);
        CHECK(s.gaussians.local_offset[i] == Vec3::Zero());
        const Mat3 F = oracle_frame(atlas, head.vertices, s.gaussians.rig[i].triangle);
        CHECK((quat_to_matrix(s.gaussians.rotation[i]) - F).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("scale above the clamp is limited and counted") {
    const HeadMesh m = two_triangle_mesh(4.0, 1.0);
    const UvAtlas atlas = build_uv_atlas(m, 16);
    const AttributeMaps A = AttributeMaps::zeros(16);
    const auto s = sample_gaussians(A, atlas, default_sample_grid(atlas, GridSpec{16, 16, 0, 0, false}), m.vertices);
    REQUIRE(s.gaussians.size() > 0);
    for (int i = 0; i < s.gaussians.size(); ++i) CHECK(s.gaussians.scale[i] == Vec3::Constant(0.5));
    CHECK(s.diagnostics.scale_clamped == s.gaussians.size());
}

TEST_CASE("scale rebalancing follows the square root of the area ratios") {
    for (auto [r1, r2] : {std::pair{4.0, 1.0}, std::pair{9.0, 2.0}, std::pair{0.25, 3.0}}) {
        const HeadMesh m = two_triangle_mesh(r1, r2);
        const UvAtlas atlas = build_uv_atlas(m, 16);
        AttributeMaps A = AttributeMaps::zeros(16);
        for (int t = 0; t < 256; ++t)
            for (int c = 0; c < 3; ++c) A.raw.data[t * channel::count + channel::scale + c] = -4.0;
        const auto s = sample_gaussians(A, atlas, default_sample_grid(atlas, GridSpec{16, 16, 0, 0, false}), m.vertices);
        double s1 = 0, s2 = 0;
        for (int i = 0; i < s.gaussians.size(); ++i) (s.gaussians.rig[i].triangle == 0 ? s1 : s2) = s.gaussians.scale[i].x();
        REQUIRE(s1 > 0);
        REQUIRE(s2 > 0);
        CHECK(std::abs(s1 / s2 - std::sqrt(r1) / std::sqrt(r2)) < 1e-6);
    }
}

TEST_CASE("batched sampling matches the single-point oracle") {
    const HeadMesh head = make_procedural_head();
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int K : {8, 16, 32}) {
        const UvAtlas atlas = build_uv_atlas(head, K);
        for (int trial = 0; trial < 4; ++trial) {
            const AttributeMaps A = random_maps(atlas, rng);
            SampleGrid grid;
            for (int i = 0; i < 400; ++i) grid.points.push_back({Vec2(u(rng), u(rng)), SampleSource::dense});
            const auto s = sample_gaussians(A, atlas, grid, head.vertices);
            int j = 0, dropped = 0;
            double err = 0;
            for (const auto& pt : grid.points) {
                const OracleGaussian o = sample_one(A, atlas, head.vertices, pt.uv);
                if (!o.kept) {
                    ++dropped;
                    continue;
                }
                REQUIRE(j < s.gaussians.size());
                err = std::max(err, (s.gaussians.position[j] - o.position).norm());
                err = std::max(err, (s.gaussians.color[j] - o.color).norm());
                err = std::max(err, (s.gaussians.scale[j] - o.scale).norm());
                err = std::max(err, std::abs(s.gaussians.opacity[j] - o.opacity));
                err = std::max(err, quat_distance(s.gaussians.rotation[j], o.rotation));
                ++j;
            }
            CHECK(j == s.gaussians.size());
            CHECK(dropped == s.diagnostics.dropped);
            CHECK(err < 1e-6);
            CHECK_NOTHROW(s.gaussians.validate());
        }
    }
}

TEST_CASE("sampling at texel centers is a nearest-texel lookup") {
    const HeadMesh head = make_procedural_head();
    const UvAtlas atlas = build_uv_atlas(head, 32);
    std::mt19937_64 rng(4);
    const AttributeMaps A = random_maps(atlas, rng);
    SampleGrid grid;
    for (int t = 0; t < atlas.texel_count(); ++t)
        if (atlas.valid[t]) grid.points.push_back({atlas.texel_center(t), SampleSource::dense});
    const auto s = sample_gaussians(A, atlas, grid, head.vertices);
    REQUIRE(s.gaussians.size() == static_cast<int>(grid.points.size()));
    for (int i = 0; i < s.gaussians.size(); ++i) {
        const int t = atlas.texel_at(grid.points[i].uv);
        CHECK(s.trace[i].taps == 1);
        CHECK(s.gaussians.rig[i].texel == t);
        CHECK(s.gaussians.opacity[i] == logistic(A.raw.data[t * channel::count + channel::opacity]));
    }
}

TEST_CASE("random maps always produce valid Gaussian sets") {
    const HeadMesh head = make_procedural_head();
    const UvAtlas atlas = build_uv_atlas(head, 16);
    const SampleGrid grid = default_sample_grid(atlas, GridSpec{16, 16, 32, 8, true});
    std::mt19937_64 rng(8);
    std::normal_distribution<double> wide(0.0, 20.0);
    for (int trial = 0; trial < 30; ++trial) {
        AttributeMaps A = random_maps(atlas, rng);
        for (auto& v : A.raw.data) v = wide(rng);
        const auto s = sample_gaussians(A, atlas, grid, head.vertices);
        CHECK_NOTHROW(s.gaussians.validate());
    }
}

TEST_CASE("animation with identity parameters equals canonical sampling") {
    const HeadMesh head = make_procedural_head();
    const UvAtlas atlas = build_uv_atlas(head, 32);
    const SampleGrid grid = default_sample_grid(atlas, GridSpec{32, 32, 64, 16, true});
    std::mt19937_64 rng(6);
    const AttributeMaps A = random_maps(atlas, rng);
    const GaussianSet a = animate(A, atlas, grid, head, PoseParams::zeros(head));
    const GaussianSet b = sample_gaussians(A, atlas, grid, head.vertices).gaussians;
    CHECK(a.position == b.position);
    CHECK(a.rotation == b.rotation);
    CHECK(a.scale == b.scale);
}

TEST_CASE("global rotation moves Gaussians rigidly") {
    const HeadMesh head = make_procedural_head();
    const UvAtlas atlas = build_uv_atlas(head, 32);
    const SampleGrid grid = default_sample_grid(atlas, GridSpec{32, 32, 64, 16, true});
    std::mt19937_64 rng(9);
    const AttributeMaps A = random_maps(atlas, rng);
    const GaussianSet canon = sample_gaussians(A, atlas, grid, head.vertices).gaussians;
    PoseParams p = PoseParams::zeros(head);
    const Vec3 aa(0.3, -0.8, 0.2);
    p.theta.segment<3>(0) = aa;
    const GaussianSet posed = animate(A, atlas, grid, head, p);
    REQUIRE(posed.size() == canon.size());
    const Eigen::Quaterniond qR(Eigen::AngleAxisd(aa.norm(), aa.normalized()));
    double pos = 0, rot = 0;
    for (int i = 0; i < canon.size(); ++i) {
        pos = std::max(pos, (posed.position[i] - qR * canon.position[i]).norm());
        const Vec4& c = canon.rotation[i];
        rot = std::max(rot, quat_distance(posed.rotation[i], qR * Eigen::Quaterniond(c[0], c[1], c[2], c[3])));
    }
    CHECK(pos < 1e-5);
    CHECK(rot < 1e-5);
}

TEST_CASE("jaw expression only moves Gaussians bound to displaced triangles") {
    const HeadMesh head = make_procedural_head();
    const UvAtlas atlas = build_uv_atlas(head, 64);
    const SampleGrid grid = default_sample_grid(atlas, GridSpec{64, 64, 128, 32, true});
    std::mt19937_64 rng(10);
    const AttributeMaps A = random_maps(atlas, rng, 0.0);
    PoseParams p = PoseParams::zeros(head);
    p.psi[0] = 1.0;
    const auto canon = sample_gaussians(A, atlas, grid, head.vertices);
    const GaussianSet posed = animate(A, atlas, grid, head, p);
    REQUIRE(posed.size() == canon.gaussians.size());

    std::vector<std::uint8_t> vert_moves(head.num_vertices(), 0);
    for (int v = 0; v < head.num_vertices(); ++v)
        for (int a = 0; a < 3; ++a) vert_moves[v] |= head.expr_basis(3 * v + a, 0) != 0.0;
    std::vector<std::uint8_t> tri_moves(head.num_triangles(), 0);
    for (int f = 0; f < head.num_triangles(); ++f)
        for (int k = 0; k < 3; ++k) tri_moves[f] |= vert_moves[head.triangles[f][k]];

    int moved = 0, unexpected = 0;
    for (int i = 0; i < posed.size(); ++i) {
        const auto& tr = canon.trace[i];
        bool touches = false;
        for (int k = 0; k < tr.taps; ++k) touches |= tri_moves[atlas.tri_index[tr.texel[k]]] != 0;
        const bool m = (posed.position[i] - canon.gaussians.position[i]).norm() > 1e-6;
        moved += m;
        unexpected += m && !touches;
    }
    CHECK(moved > 0);
    CHECK(unexpected == 0);
}

TEST_CASE("Gaussian count does not depend on pose") {
    const HeadMesh head = make_procedural_head();
    const UvAtlas atlas = build_uv_atlas(head, 32);
    const SampleGrid grid = default_sample_grid(atlas, GridSpec{32, 32, 64, 16, true});
    std::mt19937_64 rng(12);
    std::normal_distribution<double> n(0.0, 0.5);
    const AttributeMaps A = random_maps(atlas, rng);
    const int base = animate(A, atlas, grid, head, PoseParams::zeros(head)).size();
    for (int trial = 0; trial < 5; ++trial) {
        PoseParams p = PoseParams::zeros(head);
        for (Eigen::Index i = 0; i < p.theta.size(); ++i) p.theta[i] = n(rng);
        for (Eigen::Index i = 0; i < p.psi.size(); ++i) p.psi[i] = n(rng);
        for (Eigen::Index i = 0; i < p.beta.size(); ++i) p.beta[i] = n(rng);
        const GaussianSet g = animate(A, atlas, grid, head, p);
        CHECK(g.size() == base);
        CHECK_NOTHROW(g.validate());
    }
}

TEST_CASE("quaternion helpers agree with Eigen") {
    std::mt19937_64 rng(13);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int i = 0; i < 50; ++i) {
        const Eigen::Quaterniond a(n(rng), n(rng), n(rng), n(rng)), b(n(rng), n(rng), n(rng), n(rng));
        const Eigen::Quaterniond ab = a * b;
        const Vec4 got = quat_multiply(Vec4(a.w(), a.x(), a.y(), a.z()), Vec4(b.w(), b.x(), b.y(), b.z()));
        CHECK((got - Vec4(ab.w(), ab.x(), ab.y(), ab.z())).norm() < 1e-12);
        const Mat3 R = quat_to_matrix(Vec4(a.w(), a.x(), a.y(), a.z()));
        CHECK((R - a.normalized().toRotationMatrix()).cwiseAbs().maxCoeff() < 1e-12);
        CHECK((quat_to_matrix(quat_from_matrix(R)) - R).cwiseAbs().maxCoeff() < 1e-12);
        CHECK(quat_from_matrix(R)[0] >= 0.0);
    }
}

TEST_CASE("attribute map validation") {
    const UvAtlas atlas = build_uv_atlas(quad_mesh(), 8);
    AttributeMaps A = AttributeMaps::zeros(8);
    CHECK_NOTHROW(A.validate(atlas));
    A.raw.data[5] = NAN;
    CHECK_THROWS_AS(A.validate(atlas), ValidationError);
    AttributeMaps B = AttributeMaps::zeros(8);
    B.raw = Image(8, 8, 13);
    CHECK_THROWS_AS(B.validate(atlas), ValidationError);
    HeadMesh half = quad_mesh();
    half.vertices.pop_back();
    half.triangles.pop_back();
    half.uv_corners.pop_back();
    half.region_labels.pop_back();
    half.skin_weights.conservativeResize(3, 1);
    half.joint_regressor.conservativeResize(1, 3);
    half.shape_basis.resize(9, 0);
    half.pose_basis.resize(9, 0);
    half.expr_basis.resize(9, 0);
    const UvAtlas ha = build_uv_atlas(half, 8);
    AttributeMaps C = AttributeMaps::zeros(8);
    int invalid = 0;
    while (ha.valid[invalid]) ++invalid;
    C.shape_offset.data[3 * invalid] = 0.1;
    CHECK_THROWS_AS(C.validate(ha), ValidationError);
}

TEST_CASE("Gaussian text export round-trips") {
    std::mt19937_64 rng(14);
    const GaussianSet g = random_gaussians(30, rng);
    const auto path = (temp_dir("gsmap") / "g.txt").string();
    write_gaussians_text(path, g);
    const GaussianSet back = read_gaussians_text(path);
    REQUIRE(back.size() == g.size());
    for (int i = 0; i < g.size(); ++i) {
        CHECK((back.position[i] - g.position[i]).norm() < 1e-7);
        CHECK((back.rotation[i] - g.rotation[i]).norm() < 1e-7);
        CHECK(std::abs(back.opacity[i] - g.opacity[i]) < 1e-7);
    }
}
