#include <doctest.h>

#include <fstream>

#include "fixtures.hpp"
#include "uvsplat/mesh_io.hpp"
#include "uvsplat/procedural.hpp"

using namespace uvsplat;
using namespace fixtures;

namespace {

// Rig with two joints on a 4-vertex fixture and random bases.
HeadMesh random_rig(std::mt19937_64& rng) {
    HeadMesh m = quad_mesh();
    std::normal_distribution<double> n(0.0, 0.1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const int V = 4;
    m.joint_parents = {-1, 0};
    m.shape_basis = Eigen::MatrixXd(3 * V, 2);
    m.expr_basis = Eigen::MatrixXd(3 * V, 3);
    m.pose_basis = Eigen::MatrixXd(3 * V, 9);
    for (auto* b : {&m.shape_basis, &m.expr_basis, &m.pose_basis})
        for (Eigen::Index i = 0; i < b->size(); ++i) b->data()[i] = n(rng);
    m.skin_weights = Eigen::MatrixXd(V, 2);
    for (int v = 0; v < V; ++v) {
        const double w = u(rng);
        m.skin_weights(v, 0) = w;
        m.skin_weights(v, 1) = 1.0 - w;
    }
    m.joint_regressor = Eigen::MatrixXd::Zero(2, V);
    m.joint_regressor.row(0).setConstant(0.25);
    m.joint_regressor(1, 2) = 0.5;
    m.joint_regressor(1, 3) = 0.5;
    return m;
}

PoseParams random_params(const HeadMesh& m, std::mt19937_64& rng, double s = 0.4) {
    std::normal_distribution<double> n(0.0, s);
    PoseParams p = PoseParams::zeros(m);
    for (auto* v : {&p.beta, &p.theta, &p.psi})
        for (Eigen::Index i = 0; i < v->size(); ++i) (*v)[i] = n(rng);
    return p;
}

// Homogeneous-transform skinning written out per vertex.
std::vector<Vec3> skinning_oracle(const HeadMesh& m, const PoseParams& p) {
    const int V = m.num_vertices(), J = m.num_joints();
    std::vector<Vec3> shaped(V), posed(V), out(V);
    std::vector<Mat3> R(J);
    for (int j = 0; j < J; ++j) {
        const Vec3 aa = p.theta.segment<3>(3 * j);
        R[j] = aa.norm() == 0 ? Mat3::Identity() : Mat3(Eigen::AngleAxisd(aa.norm(), aa.normalized()));
    }
    for (int v = 0; v < V; ++v) {
        Vec3 x = m.vertices[v];
        for (int k = 0; k < p.beta.size(); ++k)
            for (int a = 0; a < 3; ++a) x[a] += m.shape_basis(3 * v + a, k) * p.beta[k];
        shaped[v] = x;
        for (int j = 1; j < J; ++j)
            for (int r = 0; r < 3; ++r)
                for (int c = 0; c < 3; ++c)
                    for (int a = 0; a < 3; ++a)
                        x[a] += m.pose_basis(3 * v + a, 9 * (j - 1) + 3 * r + c) * (R[j](r, c) - (r == c ? 1.0 : 0.0));
        for (int k = 0; k < p.psi.size(); ++k)
            for (int a = 0; a < 3; ++a) x[a] += m.expr_basis(3 * v + a, k) * p.psi[k];
        posed[v] = x;
    }
    std::vector<Vec3> joint(J, Vec3::Zero());
    for (int j = 0; j < J; ++j)
        for (int v = 0; v < V; ++v) joint[j] += m.joint_regressor(j, v) * shaped[v];
    std::vector<Eigen::Matrix4d> G(J);
    for (int j = 0; j < J; ++j) {
        Eigen::Matrix4d local = Eigen::Matrix4d::Identity();
        local.block<3, 3>(0, 0) = R[j];
        const int par = m.joint_parents[j];
        local.block<3, 1>(0, 3) = par < 0 ? joint[j] : Vec3(joint[j] - joint[par]);
        G[j] = par < 0 ? local : Eigen::Matrix4d(G[par] * local);
    }
    for (int j = 0; j < J; ++j) {
        Eigen::Matrix4d rest = Eigen::Matrix4d::Identity();
        rest.block<3, 1>(0, 3) = -joint[j];
        G[j] = G[j] * rest;
    }
    for (int v = 0; v < V; ++v) {
        Eigen::Vector4d acc = Eigen::Vector4d::Zero();
        for (int j = 0; j < J; ++j) acc += m.skin_weights(v, j) * (G[j] * posed[v].homogeneous());
        out[v] = acc.head<3>();
    }
    return out;
}

bool inside_triangle(const Vec2& p, const std::array<Vec2, 3>& c) {
    auto side = [](const Vec2& a, const Vec2& b, const Vec2& q) {
        return (b.x() - a.x()) * (q.y() - a.y()) - (b.y() - a.y()) * (q.x() - a.x());
    };
    const double s0 = side(c[0], c[1], p), s1 = side(c[1], c[2], p), s2 = side(c[2], c[0], p);
    return (s0 >= 0 && s1 >= 0 && s2 >= 0) || (s0 <= 0 && s1 <= 0 && s2 <= 0);
}

} // namespace

TEST_CASE("zero parameters reproduce the template bit for bit") {
    const HeadMesh head = make_procedural_head();
    const auto v = deform(head, PoseParams::zeros(head));
    REQUIRE(v.size() == head.vertices.size());
    bool same = true;
    for (std::size_t i = 0; i < v.size(); ++i) same &= v[i] == head.vertices[i];
    CHECK(same);
}

TEST_CASE("global joint rotation is a rigid motion of every vertex") {
    const HeadMesh head = make_procedural_head();
    PoseParams p = PoseParams::zeros(head);
    p.theta.segment<3>(0) = Vec3(0, M_PI / 2, 0);
    const auto v = deform(head, p);
    const Mat3 Ry = Eigen::AngleAxisd(M_PI / 2, Vec3::UnitY()).toRotationMatrix();
    const Vec3 root = Vec3::Zero();
    double err = 0;
    for (std::size_t i = 0; i < v.size(); ++i) err = std::max(err, (v[i] - (Ry * (head.vertices[i] - root) + root)).norm());
    CHECK(err < 1e-6);
}

TEST_CASE("deform matches the per-vertex homogeneous skinning oracle") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const HeadMesh m = random_rig(rng);
        const PoseParams p = random_params(m, rng);
        const auto got = deform(m, p), want = skinning_oracle(m, p);
        for (int v = 0; v < 4; ++v) CHECK((got[v] - want[v]).norm() < 1e-12);
    }
}

TEST_CASE("deform is affine in shape and expression coefficients") {
    std::mt19937_64 rng(5);
    const HeadMesh m = random_rig(rng);
    PoseParams p1 = random_params(m, rng), p2 = random_params(m, rng);
    p2.theta = p1.theta;
    const double a = 0.7, b = -1.3;
    PoseParams mix = p1;
    mix.beta = a * p1.beta + b * p2.beta;
    mix.psi = a * p1.psi + b * p2.psi;
    PoseParams rest = p1;
    rest.beta.setZero();
    rest.psi.setZero();
    const auto d1 = deform(m, p1), d2 = deform(m, p2), dm = deform(m, mix), d0 = deform(m, rest);
    for (int v = 0; v < 4; ++v) CHECK((dm[v] - (a * d1[v] + b * d2[v] - (a + b - 1) * d0[v])).norm() < 1e-6);
}

TEST_CASE("deform rejects mismatched parameter dimensions") {
    const HeadMesh head = make_procedural_head();
    PoseParams p = PoseParams::zeros(head);
    p.beta.resize(p.beta.size() + 1);
    p.beta.setZero();
    CHECK_THROWS_AS(deform(head, p), ValidationError);
}

TEST_CASE("atlas validity equals a brute-force point-in-triangle count") {
    const HeadMesh head = make_procedural_head();
    const UvAtlas atlas = build_uv_atlas(head, 256);
    int brute = 0, agree = 0;
    for (int t = 0; t < atlas.texel_count(); ++t) {
        const Vec2 p = atlas.texel_center(t);
        bool in = false;
        for (const auto& c : head.uv_corners) {
            if (inside_triangle(p, c)) {
                in = true;
                break;
            }
        }
        brute += in;
        agree += in == static_cast<bool>(atlas.valid[t]);
    }
    CHECK(atlas.valid_count() == brute);
    CHECK(agree == atlas.texel_count());
}

TEST_CASE("atlas barycentrics reproduce texel centers and sum to one") {
    const HeadMesh head = make_procedural_head();
    const UvAtlas atlas = build_uv_atlas(head, 64);
    double worst = 0, sum_err = 0, min_b = 1;
    for (int t = 0; t < atlas.texel_count(); ++t) {
        if (!atlas.valid[t]) continue;
        const auto& c = head.uv_corners[atlas.tri_index[t]];
        const Vec3& b = atlas.bary[t];
        const Vec2 uv = b.x() * c[0] + b.y() * c[1] + b.z() * c[2];
        worst = std::max(worst, (uv - atlas.texel_center(t)).norm());
        sum_err = std::max(sum_err, std::abs(b.sum() - 1));
        min_b = std::min(min_b, b.minCoeff());
    }
    CHECK(worst < 1e-5);
    CHECK(sum_err < 1e-6);
    CHECK(min_b >= 0.0);
}

TEST_CASE("relative scale is the square root of the area ratio") {
    const HeadMesh m = two_triangle_mesh(4.0, 1.0);
    const UvAtlas atlas = build_uv_atlas(m, 32);
    int n0 = 0, n1 = 0;
    for (int t = 0; t < atlas.texel_count(); ++t) {
        if (!atlas.valid[t]) continue;
        if (atlas.tri_index[t] == 0) {
            CHECK(atlas.rel_scale[t] == doctest::Approx(2.0).epsilon(1e-12));
            ++n0;
        } else {
            CHECK(atlas.rel_scale[t] == doctest::Approx(1.0).epsilon(1e-12));
            ++n1;
        }
    }
    CHECK(n0 > 0);
    CHECK(n1 > 0);
}

TEST_CASE("mirror map is an involution on symmetric layouts") {
    HeadMesh m = quad_mesh();
    m.mirror_symmetric = true;
    const UvAtlas atlas = build_uv_atlas(m, 16);
    for (int t = 0; t < atlas.texel_count(); ++t) {
        if (atlas.mirror[t] < 0) continue;
        CHECK(atlas.mirror[atlas.mirror[t]] == t);
    }
    const UvAtlas head = build_uv_atlas(make_procedural_head(), 64);
    int mapped = 0;
    for (int t = 0; t < head.texel_count(); ++t) {
        if (head.mirror[t] < 0) continue;
        ++mapped;
        CHECK(head.mirror[head.mirror[t]] == t);
    }
    CHECK(mapped > 0);
}

TEST_CASE("overlapping UV triangles are rejected") {
    HeadMesh m = quad_mesh();
    m.uv_corners[1] = {Vec2(0.1, 0.0), Vec2(1.0, 0.9), Vec2(0.9, 0.0)};
    CHECK_THROWS_AS(build_uv_atlas(m, 8), ValidationError);
}

TEST_CASE("position map interpolates vertices barycentrically") {
    const HeadMesh quad = quad_mesh();
    const UvAtlas qa = build_uv_atlas(quad, 8);
    const Image qp = position_map(qa, quad.vertices);
    for (int t = 0; t < qa.texel_count(); ++t) {
        if (!qa.valid[t]) continue;
        CHECK(qp.data[3 * t + 2] == 0.0);
        const Vec2 c = qa.texel_center(t);
        CHECK(qp.data[3 * t] == doctest::Approx(c.x()));
        CHECK(qp.data[3 * t + 1] == doctest::Approx(c.y()));
    }

    const HeadMesh head = make_procedural_head();
    const UvAtlas atlas = build_uv_atlas(head, 64);
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0.0, 0.3);
    std::vector<Vec3> verts = head.vertices;
    for (auto& v : verts) v += Vec3(n(rng), n(rng), n(rng));
    const Image p = position_map(atlas, verts);
    double err = 0;
    for (int t = 0; t < atlas.texel_count(); ++t) {
        if (!atlas.valid[t]) {
            err = std::max({err, std::abs(p.data[3 * t]), std::abs(p.data[3 * t + 1]), std::abs(p.data[3 * t + 2])});
            continue;
        }
        const auto& tri = head.triangles[atlas.tri_index[t]];
        const auto& c = head.uv_corners[atlas.tri_index[t]];
        // Solve for barycentrics of the texel center independently of the atlas.
        Mat2 A;
        A.col(0) = c[1] - c[0];
        A.col(1) = c[2] - c[0];
        const Vec2 st = A.inverse() * (atlas.texel_center(t) - c[0]);
        const Vec3 want = (1 - st.x() - st.y()) * verts[tri[0]] + st.x() * verts[tri[1]] + st.y() * verts[tri[2]];
        for (int a = 0; a < 3; ++a) err = std::max(err, std::abs(p.data[3 * t + a] - want[a]));
    }
    CHECK(err < 1e-7);
}

TEST_CASE("tangent frames are orthonormal, right handed and rotate with the mesh") {
    const HeadMesh quad = quad_mesh();
    const UvAtlas qa = build_uv_atlas(quad, 8);
    const TexelFrames qf = tangent_frames(qa, quad.vertices);
    for (int t = 0; t < qa.texel_count(); ++t)
        if (qa.valid[t]) CHECK((qf.frame[t] - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-12);

    const HeadMesh head = make_procedural_head();
    const UvAtlas atlas = build_uv_atlas(head, 64);
    const TexelFrames f = tangent_frames(atlas, head.vertices);
    const Mat3 R = Eigen::AngleAxisd(0.9, Vec3(1, 2, -0.5).normalized()).toRotationMatrix();
    const Vec3 shift(0.3, -0.2, 1.1);
    std::vector<Vec3> moved;
    for (const auto& v : head.vertices) moved.push_back(R * v + shift);
    const TexelFrames g = tangent_frames(atlas, moved);
    const Image p0 = position_map(atlas, head.vertices), p1 = position_map(atlas, moved);
    double ortho = 0, det = 0, equi = 0, pos = 0;
    for (int t = 0; t < atlas.texel_count(); ++t) {
        if (!atlas.valid[t] || !f.ok[t]) continue;
        const Mat3& F = f.frame[t];
        ortho = std::max(ortho, (F.transpose() * F - Mat3::Identity()).cwiseAbs().maxCoeff());
        det = std::max(det, std::abs(F.determinant() - 1.0));
        equi = std::max(equi, (g.frame[t] - R * F).cwiseAbs().maxCoeff());
        const Vec3 a(p0.data[3 * t], p0.data[3 * t + 1], p0.data[3 * t + 2]);
        const Vec3 b(p1.data[3 * t], p1.data[3 * t + 1], p1.data[3 * t + 2]);
        pos = std::max(pos, (b - (R * a + shift)).norm());
    }
    CHECK(ortho < 1e-6);
    CHECK(det < 1e-6);
    CHECK(equi < 1e-6);
    CHECK(pos < 1e-9);
}

TEST_CASE("degenerate triangles get identity frames flagged invalid") {
    HeadMesh m = quad_mesh();
    m.vertices[2] = m.vertices[0];
    const UvAtlas atlas = build_uv_atlas(m, 8);
    const TexelFrames f = tangent_frames(atlas, m.vertices);
    for (int t = 0; t < atlas.texel_count(); ++t) {
        if (!atlas.valid[t]) continue;
        CHECK(f.ok[t] == 0);
        CHECK(f.frame[t] == Mat3::Identity());
    }
}

TEST_CASE("region masks partition the valid texels") {
    const HeadMesh head = make_procedural_head();
    const UvAtlas atlas = build_uv_atlas(head, 128);
    const auto& hair = region_mask(atlas, "hair");
    const auto& eye = region_mask(atlas, "left_eye");
    int hair_n = 0, overlap = 0, mismatch = 0;
    for (int t = 0; t < atlas.texel_count(); ++t) {
        hair_n += hair[t];
        overlap += hair[t] && eye[t];
        int labels = 0;
        for (Region r : kAllRegions) {
            auto it = atlas.region_masks.find(r);
            if (it != atlas.region_masks.end()) labels += it->second[t];
        }
        mismatch += labels != (atlas.valid[t] ? 1 : 0);
    }
    CHECK(hair_n > 0);
    CHECK(overlap == 0);
    CHECK(mismatch == 0);
    CHECK_THROWS_AS(region_mask(atlas, "eyebrow"), ValidationError);
    const UvAtlas quad = build_uv_atlas(quad_mesh(), 8);
    CHECK_THROWS_AS(region_mask(quad, Region::hair), ValidationError);
}

TEST_CASE("load_mesh reads the OBJ subset and enforces invariants") {
    const auto dir = temp_dir("geometry");
    const auto obj = (dir / "quad.obj").string();
    {
        std::ofstream out(obj);
        out << "# quad\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 1 1\nvt 0 1\n"
               "f 1/1 2/2 3/3\nf 1/1 3/3 4/4\n";
    }
    const HeadMesh m = load_mesh(obj);
    CHECK(m.num_vertices() == 4);
    CHECK(m.num_triangles() == 2);
    CHECK(m.num_joints() == 1);
    CHECK(m.shape_basis.cols() == 0);

    const auto bad = (dir / "bad.obj").string();
    {
        std::ofstream out(bad);
        out << "v 0 0 0\nv 1 0 0\nv 1 1\n";
    }
    try {
        load_mesh(bad);
        FAIL("expected a format error");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find(":3:") != std::string::npos);
    }

    HeadMesh weights = quad_mesh();
    weights.skin_weights(2, 0) = 0.8;
    CHECK_THROWS_AS(weights.validate(), ValidationError);
    const auto wobj = (dir / "weights.obj").string();
    save_mesh(weights, wobj);
    CHECK_THROWS_AS(load_mesh(wobj), ValidationError);
}

TEST_CASE("saved procedural head round-trips with its manifest counts") {
    const auto dir = temp_dir("geometry_head");
    const HeadMesh head = make_procedural_head();
    const auto obj = (dir / "head.obj").string();
    save_mesh(head, obj);
    const HeadMesh back = load_mesh(obj);
    std::ifstream in(dir / "head.manifest");
    std::string text((std::istreambuf_iterator<char>(in)), {});
    CHECK(text.find("vertices = " + std::to_string(back.num_vertices())) != std::string::npos);
    CHECK(text.find("triangles = " + std::to_string(back.num_triangles())) != std::string::npos);
    CHECK(back.num_vertices() == head.num_vertices());
    CHECK(back.num_triangles() == head.num_triangles());
    CHECK(back.joint_parents == head.joint_parents);
    CHECK(back.mirror_symmetric == head.mirror_symmetric);
    CHECK(back.region_labels == head.region_labels);

    // Counts that disagree with the manifest are rejected.
    {
        std::ofstream out(dir / "head.manifest", std::ios::app);
        out << "vertices = 5\n";
    }
    CHECK_THROWS_AS(load_mesh(obj), ValidationError);
}

TEST_CASE("procedural jaw expression is confined to the jaw region") {
    const HeadMesh head = make_procedural_head();
    int moved = 0, outside = 0;
    for (int v = 0; v < head.num_vertices(); ++v) {
        const Vec3 d(head.expr_basis(3 * v, 0), head.expr_basis(3 * v + 1, 0), head.expr_basis(3 * v + 2, 0));
        if (d.norm() == 0) continue;
        ++moved;
        const Vec3& p = head.vertices[v];
        outside += p.y() > 0.1;
    }
    CHECK(moved > 0);
    CHECK(moved < head.num_vertices() / 2);
    CHECK(outside == 0);
}
