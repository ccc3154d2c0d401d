#include <doctest.h>

#include <cstring>
#include <fstream>
#include <random>

#include "fixtures.hpp"
#include "uvsplat/atl.hpp"
#include "uvsplat/config.hpp"
#include "uvsplat/mesh_io.hpp"
#include "uvsplat/procedural.hpp"
#include "uvsplat/scene_io.hpp"

using namespace uvsplat;
using namespace fixtures;

namespace {

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

double max_abs(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) return INFINITY;
    return a.size() ? (a - b).cwiseAbs().maxCoeff() : 0.0;
}

} // namespace

TEST_CASE("ATL layout of a small tensor") {
    AtlTensor t;
    t.dims = {2, 1};
    t.values = {1.0f, -2.5f};
    const auto bytes = encode_atl(t);
    REQUIRE(bytes.size() == 5 + 4 * 2 + 4 * 2);
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "ATL1");
    CHECK(bytes[4] == 2);
    CHECK(bytes[5] == 2);
    CHECK(bytes[6] == 0);
    CHECK(bytes[9] == 1);
    // 1.0f is 0x3f800000, stored little-endian.
    CHECK(bytes[13] == 0x00);
    CHECK(bytes[15] == 0x80);
    CHECK(bytes[16] == 0x3f);
}

TEST_CASE("ATL round-trips bit-exactly up to rank 4") {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> dim(1, 5);
    std::uniform_real_distribution<float> val(-1e6f, 1e6f);
    for (int rank = 0; rank <= 4; ++rank) {
        for (int trial = 0; trial < 5; ++trial) {
            AtlTensor t;
            for (int r = 0; r < rank; ++r) t.dims.push_back(dim(rng));
            for (std::size_t i = 0; i < t.element_count(); ++i) t.values.push_back(val(rng));
            if (!t.values.empty()) t.values[0] = -0.0f;
            const auto bytes = encode_atl(t);
            CHECK(bytes.size() == 5 + 4 * t.dims.size() + 4 * t.values.size());
            const AtlTensor back = decode_atl(bytes);
            CHECK(back.dims == t.dims);
            REQUIRE(back.values.size() == t.values.size());
            CHECK(std::memcmp(back.values.data(), t.values.data(), 4 * t.values.size()) == 0);
        }
    }
    const auto dir = temp_dir("atl");
    AtlTensor t;
    t.dims = {3, 2};
    t.values = {1, 2, 3, 4, 5, 6};
    write_atl((dir / "t.atl").string(), t);
    CHECK(std::filesystem::file_size(dir / "t.atl") == 5 + 8 + 24);
    CHECK(read_atl((dir / "t.atl").string()).values == t.values);
}

TEST_CASE("ATL decode rejects malformed input") {
    AtlTensor t;
    t.dims = {2};
    t.values = {1, 2};
    auto bytes = encode_atl(t);
    auto bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(decode_atl(bad), FormatError);
    bad = bytes;
    bad.pop_back();
    CHECK_THROWS_AS(decode_atl(bad), FormatError);
    bad = bytes;
    bad.push_back(0);
    CHECK_THROWS_AS(decode_atl(bad), FormatError);
    CHECK_THROWS_AS(decode_atl({'A', 'T', 'L', '1', 3, 0}), FormatError);
    CHECK_THROWS_AS(decode_atl({}), FormatError);
    t.values = {1};
    CHECK_THROWS_AS(encode_atl(t), ValidationError);
    CHECK_THROWS_AS(read_atl("/nonexistent/x.atl"), FormatError);
}

TEST_CASE("image tensors keep their shape") {
    Image img(3, 4, 2);
    for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = 0.25 * i;
    const AtlTensor t = to_atl(img);
    CHECK(t.dims == std::vector<std::uint32_t>{3, 4, 2});
    const Image back = image_from_atl(t);
    CHECK(back.same_shape(img));
    CHECK(back.data == img.data);
    AtlTensor flat;
    flat.dims = {24};
    flat.values.assign(24, 0.0f);
    CHECK_THROWS_AS(image_from_atl(flat), FormatError);
}

TEST_CASE("config round-trips through text") {
    Config c;
    c.K = 64;
    c.window = 5;
    c.weights.l3d = 12.5;
    c.weights.eye = 0.0;
    c.lr = 3e-3;
    c.seed = 99;
    c.include_vertices = false;
    const Config back = parse_config(serialize_config(c));
    CHECK(serialize_config(back) == serialize_config(c));
    CHECK(back.K == 64);
    CHECK(back.window == 5);
    CHECK(back.weights.l3d == 12.5);
    CHECK(back.lr == 3e-3);
    CHECK(back.seed == 99);
    CHECK_FALSE(back.include_vertices);

    const Config d = parse_config("# comment\n\nK = 32\n  iterations=7  \n");
    CHECK(d.K == 32);
    CHECK(d.iterations == 7);
    CHECK(d.fusion_channels == 8);
    CHECK(d.visibility_tau == 0.02);
}

TEST_CASE("config errors name the key and line") {
    try {
        parse_config("K = 32\nsplat_size = 4\n");
        FAIL("accepted an unknown key");
    } catch (const ValidationError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("splat_size") != std::string::npos);
        CHECK(msg.find('2') != std::string::npos);
    }
    try {
        parse_config("\n\n\nlr = fast\n");
        FAIL("accepted a malformed value");
    } catch (const ValidationError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("lr") != std::string::npos);
        CHECK(msg.find('4') != std::string::npos);
    }
    CHECK_THROWS_AS(parse_config("window = 4\n"), ValidationError);
    CHECK_THROWS_AS(load_config("/nonexistent/cfg.txt"), std::exception);
}

TEST_CASE("maps round-trip at float precision") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n(0.0, 1.0);
    AttributeMaps m = AttributeMaps::zeros(6);
    for (double& v : m.raw.data) v = n(rng);
    for (double& v : m.shape_offset.data) v = 0.01 * n(rng);
    const auto dir = temp_dir("maps");
    save_maps((dir / "m.atl").string(), m);
    CHECK(std::filesystem::file_size(dir / "m.atl") == 5 + 12 + 4 * 6 * 6 * 17);
    const AttributeMaps back = load_maps((dir / "m.atl").string());
    CHECK(back.K == 6);
    for (std::size_t i = 0; i < m.raw.data.size(); ++i)
        CHECK(back.raw.data[i] == static_cast<double>(static_cast<float>(m.raw.data[i])));
    for (std::size_t i = 0; i < m.shape_offset.data.size(); ++i)
        CHECK(back.shape_offset.data[i] == static_cast<double>(static_cast<float>(m.shape_offset.data[i])));
}

TEST_CASE("cameras round-trip") {
    std::vector<Camera> cams;
    for (int k = 0; k < 3; ++k)
        cams.push_back(Camera::look_at(Vec3(std::sin(k + 0.3), 0.2 * k, 2.0), Vec3::Zero(), Vec3(0, 1, 0), 30, 40 + k, 30));
    const auto dir = temp_dir("cams");
    save_cameras((dir / "c.txt").string(), cams);
    const auto back = load_cameras((dir / "c.txt").string());
    REQUIRE(back.size() == cams.size());
    for (std::size_t k = 0; k < cams.size(); ++k) {
        CHECK(back[k].fx == cams[k].fx);
        CHECK(back[k].cx == cams[k].cx);
        CHECK(back[k].width == cams[k].width);
        CHECK(back[k].height == cams[k].height);
        CHECK((back[k].R - cams[k].R).cwiseAbs().maxCoeff() == 0.0);
        CHECK((back[k].t - cams[k].t).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("pose rows fill missing entries with zeros") {
    const HeadMesh mesh = make_procedural_head();
    const PoseParams zero = PoseParams::zeros(mesh);
    const PoseParams p = parse_pose_row("0.5, -1", mesh);
    CHECK(p.beta.size() == zero.beta.size());
    CHECK(p.theta.size() == zero.theta.size());
    CHECK(p.psi.size() == zero.psi.size());
    CHECK(p.beta[0] == 0.5);
    CHECK(p.beta[1] == -1.0);
    CHECK(p.beta.tail(p.beta.size() - 2).isZero(0.0));
    CHECK(p.theta.isZero(0.0));
    CHECK(p.psi.isZero(0.0));

    const int nb = static_cast<int>(zero.beta.size());
    std::string row;
    for (int i = 0; i < nb; ++i) row += "0,";
    row += "0.25";
    const PoseParams q = parse_pose_row(row, mesh);
    CHECK(q.theta[0] == 0.25);

    const auto dir = temp_dir("poses");
    std::ofstream((dir / "p.csv").string()) << "1\n\n0,2\n";
    const auto seq = load_pose_sequence((dir / "p.csv").string(), mesh);
    REQUIRE(seq.size() == 2);
    CHECK(seq[0].beta[0] == 1.0);
    CHECK(seq[1].beta[1] == 2.0);
    CHECK_THROWS(parse_pose_row("1, x", mesh));
}

TEST_CASE("mesh round-trips with its rig") {
    const HeadMesh mesh = make_procedural_head();
    const auto dir = temp_dir("mesh");
    save_mesh(mesh, (dir / "head.obj").string());
    const HeadMesh back = load_mesh((dir / "head.obj").string());
    REQUIRE(back.num_vertices() == mesh.num_vertices());
    REQUIRE(back.num_triangles() == mesh.num_triangles());
    double dv = 0, duv = 0;
    for (int i = 0; i < mesh.num_vertices(); ++i) dv = std::max(dv, (back.vertices[i] - mesh.vertices[i]).norm());
    for (int f = 0; f < mesh.num_triangles(); ++f) {
        CHECK(back.triangles[f] == mesh.triangles[f]);
        for (int k = 0; k < 3; ++k) duv = std::max(duv, (back.uv_corners[f][k] - mesh.uv_corners[f][k]).norm());
    }
    CHECK(dv < 1e-9);
    CHECK(duv < 1e-9);
    CHECK(max_abs(back.shape_basis, mesh.shape_basis) < 1e-6);
    CHECK(max_abs(back.pose_basis, mesh.pose_basis) < 1e-6);
    CHECK(max_abs(back.expr_basis, mesh.expr_basis) < 1e-6);
    CHECK(max_abs(back.skin_weights, mesh.skin_weights) < 1e-6);
    CHECK(max_abs(back.joint_regressor, mesh.joint_regressor) < 1e-6);
    CHECK(back.joint_parents == mesh.joint_parents);
    CHECK(back.region_labels == mesh.region_labels);
    CHECK(back.mirror_symmetric == mesh.mirror_symmetric);
}

TEST_CASE("bare OBJ gets a neutral rig") {
    const auto dir = temp_dir("bare");
    std::ofstream((dir / "q.obj").string()) << "v 0 0 0\nv 1 0 0\nv 1 1 0\nvt 0 0\nvt 1 0\nvt 1 1\nf 1/1 2/2 3/3\n";
    const HeadMesh m = load_mesh((dir / "q.obj").string());
    CHECK(m.num_vertices() == 3);
    CHECK(m.num_joints() == 1);
    CHECK(m.skin_weights.isOnes(0.0));
    CHECK(m.shape_basis.isZero(0.0));
    CHECK_THROWS(load_mesh((dir / "missing.obj").string()));
}

TEST_CASE("synthetic scene directory round-trips") {
    SynthOptions so;
    so.resolution = 16;
    so.cameras = 2;
    so.gt_K = 32;
    so.gt_grid = GridSpec{32, 32, 64, 16, false};
    const SyntheticScene s = make_synthetic(so);
    const auto dir = temp_dir("scene");
    save_scene(dir.string(), s);
    const SyntheticScene back = load_scene(dir.string());
    CHECK(back.options.seed == s.options.seed);
    CHECK(back.options.resolution == 16);
    REQUIRE(back.cameras.size() == 2);
    REQUIRE(back.heldout.size() == s.heldout.size());
    for (std::size_t v = 0; v < 2; ++v) {
        CHECK(max_abs_diff(back.target_rgb[v].data, s.target_rgb[v].data) < 1e-6);
        CHECK(max_abs_diff(back.target_alpha[v].data, s.target_alpha[v].data) < 1e-6);
    }
    CHECK((back.box.lo - s.box.lo).norm() < 1e-6);
    CHECK((back.box.hi - s.box.hi).norm() < 1e-6);
    CHECK(back.mesh.num_vertices() == s.mesh.num_vertices());
    CHECK(std::filesystem::exists(dir / "target_0.ppm"));
    CHECK_THROWS(load_scene((dir / "nowhere").string()));
}

TEST_CASE("manifest carries the version") {
    const auto dir = temp_dir("manifest");
    write_manifest((dir / "m.txt").string(), {{"a", "1 2 3"}, {"name", "x"}});
    const auto m = read_manifest((dir / "m.txt").string());
    CHECK(m.at("version") == kVersion);
    CHECK(m.at("a") == "1 2 3");
    CHECK(m.at("name") == "x");
}

TEST_CASE("PNM images round-trip at 8 bits") {
    Image rgb(2, 3, 3);
    for (std::size_t i = 0; i < rgb.data.size(); ++i) rgb.data[i] = i / 17.0;
    rgb.data[0] = -1.0;
    rgb.data[1] = 2.0;
    const auto dir = temp_dir("pnm");
    write_ppm((dir / "a.ppm").string(), rgb);
    const std::string bytes = slurp(dir / "a.ppm");
    CHECK(bytes.rfind("P6\n3 2\n255\n", 0) == 0);
    CHECK(bytes.size() == 11 + 18);
    const Image back = read_pnm((dir / "a.ppm").string());
    REQUIRE(back.same_shape(rgb));
    CHECK(back.data[0] == 0.0);
    CHECK(back.data[1] == 1.0);
    for (std::size_t i = 2; i < rgb.data.size(); ++i) CHECK(std::abs(back.data[i] - rgb.data[i]) <= 0.5 / 255.0 + 1e-12);

    write_pgm((dir / "a.pgm").string(), rgb);
    const Image g = read_pnm((dir / "a.pgm").string());
    CHECK(g.channels == 1);
    CHECK(g.width == 3);
    CHECK(std::abs(g.data[2] - rgb.data[6]) <= 0.5 / 255.0 + 1e-12);
    CHECK_THROWS(read_pnm((dir / "none.ppm").string()));
}

TEST_CASE("history CSV has one row per term and iteration") {
    LossReport r;
    r.terms = {{"photo", 0.5}, {"alpha", 0.25}};
    r.total = 0.75;
    const auto dir = temp_dir("history");
    write_history_csv((dir / "h.csv").string(), {r, r});
    const std::string text = slurp(dir / "h.csv");
    CHECK(text.rfind("iter,term,value\n", 0) == 0);
    CHECK(text.find("0,photo,0.5\n") != std::string::npos);
    CHECK(text.find("1,total,0.75\n") != std::string::npos);
    CHECK(std::count(text.begin(), text.end(), '\n') == 7);
}
