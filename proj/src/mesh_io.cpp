#include "uvsplat/mesh_io.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "uvsplat/atl.hpp"

namespace uvsplat {

namespace fs = std::filesystem;

namespace {

std::string sidecar(const std::string& obj_path, const std::string& suffix) {
    fs::path p(obj_path);
    return (p.parent_path() / (p.stem().string() + suffix)).string();
}

[[noreturn]] void format_fail(const std::string& path, int line, const std::string& what) {
    throw FormatError(path + ":" + std::to_string(line) + ": " + what);
}

// Parses "a/b" into zero-based vertex and texcoord indices.
std::pair<int, int> parse_corner(const std::string& tok, const std::string& path, int line) {
    const auto slash = tok.find('/');
    if (slash == std::string::npos || tok.find('/', slash + 1) != std::string::npos) {
        format_fail(path, line, "face corner '" + tok + "' is not of the form a/b");
    }
    try {
        std::size_t used = 0;
        const int a = std::stoi(tok.substr(0, slash), &used);
        if (used != slash) throw std::invalid_argument(tok);
        const std::string rest = tok.substr(slash + 1);
        const int b = std::stoi(rest, &used);
        if (used != rest.size()) throw std::invalid_argument(tok);
        if (a < 1 || b < 1) format_fail(path, line, "face indices are 1-based and positive");
        return {a - 1, b - 1};
    } catch (const std::logic_error&) {
        format_fail(path, line, "bad face corner '" + tok + "'");
    }
}

Eigen::MatrixXd basis_from_atl(const AtlTensor& t, int V, const std::string& path) {
    if (t.dims.size() != 3 || t.dims[0] != static_cast<std::uint32_t>(V) || t.dims[1] != 3) {
        throw ValidationError("'" + path + "' must be a V x 3 x n tensor");
    }
    const int n = static_cast<int>(t.dims[2]);
    Eigen::MatrixXd m(3 * V, n);
    for (int v = 0; v < V; ++v)
        for (int a = 0; a < 3; ++a)
            for (int k = 0; k < n; ++k) m(3 * v + a, k) = t.values[(static_cast<std::size_t>(v) * 3 + a) * n + k];
    return m;
}

AtlTensor basis_to_atl(const Eigen::MatrixXd& m) {
    const int V = static_cast<int>(m.rows() / 3);
    const int n = static_cast<int>(m.cols());
    AtlTensor t;
    t.dims = {static_cast<std::uint32_t>(V), 3, static_cast<std::uint32_t>(n)};
    t.values.resize(static_cast<std::size_t>(V) * 3 * n);
    for (int v = 0; v < V; ++v)
        for (int a = 0; a < 3; ++a)
            for (int k = 0; k < n; ++k) t.values[(static_cast<std::size_t>(v) * 3 + a) * n + k] = static_cast<float>(m(3 * v + a, k));
    return t;
}

Eigen::MatrixXd matrix_from_atl(const AtlTensor& t, int rows, int cols, const std::string& path) {
    if (t.dims.size() != 2 || (rows >= 0 && t.dims[0] != static_cast<std::uint32_t>(rows)) ||
        (cols >= 0 && t.dims[1] != static_cast<std::uint32_t>(cols))) {
        throw ValidationError("'" + path + "' has the wrong shape");
    }
    Eigen::MatrixXd m(t.dims[0], t.dims[1]);
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = t.values[r * m.cols() + c];
    return m;
}

AtlTensor matrix_to_atl(const Eigen::MatrixXd& m) {
    AtlTensor t;
    t.dims = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
    t.values.resize(m.size());
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) t.values[r * m.cols() + c] = static_cast<float>(m(r, c));
    return t;
}

std::map<std::string, std::string> read_manifest(const std::string& path) {
    std::map<std::string, std::string> kv;
    std::ifstream in(path);
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
        ++n;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            if (line.find_first_not_of(" \t\r") != std::string::npos) format_fail(path, n, "expected key = value");
            continue;
        }
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

} // namespace

HeadMesh load_mesh(const std::string& obj_path) {
    std::ifstream in(obj_path);
    if (!in) throw FormatError("cannot open '" + obj_path + "'");

    HeadMesh mesh;
    std::vector<Vec2> texcoords;
    std::vector<std::array<std::pair<int, int>, 3>> faces;
    std::vector<int> face_lines;
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream ss(line);
        std::string tag;
        if (!(ss >> tag) || tag[0] == '#') continue;
        if (tag == "v") {
            Vec3 p;
            if (!(ss >> p.x() >> p.y() >> p.z())) format_fail(obj_path, n, "expected 'v x y z'");
            mesh.vertices.push_back(p);
        } else if (tag == "vt") {
            Vec2 uv;
            if (!(ss >> uv.x() >> uv.y())) format_fail(obj_path, n, "expected 'vt u v'");
            texcoords.push_back(uv);
        } else if (tag == "f") {
            std::array<std::pair<int, int>, 3> f;
            std::string tok;
            for (int k = 0; k < 3; ++k) {
                if (!(ss >> tok)) format_fail(obj_path, n, "faces must have exactly 3 corners");
                f[k] = parse_corner(tok, obj_path, n);
            }
            if (ss >> tok) format_fail(obj_path, n, "faces must have exactly 3 corners");
            faces.push_back(f);
            face_lines.push_back(n);
        } else {
            format_fail(obj_path, n, "unsupported directive '" + tag + "'");
        }
        std::string extra;
        if (tag != "f" && (ss >> extra)) format_fail(obj_path, n, "trailing tokens");
    }
    for (std::size_t i = 0; i < faces.size(); ++i) {
        std::array<int, 3> tri;
        std::array<Vec2, 3> uv;
        for (int k = 0; k < 3; ++k) {
            const auto [vi, ti] = faces[i][k];
            if (vi >= static_cast<int>(mesh.vertices.size()) || ti >= static_cast<int>(texcoords.size())) {
                format_fail(obj_path, face_lines[i], "face references an undefined vertex or texcoord");
            }
            tri[k] = vi;
            uv[k] = texcoords[ti];
        }
        mesh.triangles.push_back(tri);
        mesh.uv_corners.push_back(uv);
    }

    const int V = mesh.num_vertices();
    auto load_if = [&](const std::string& suffix) -> std::optional<AtlTensor> {
        const auto p = sidecar(obj_path, suffix);
        if (!fs::exists(p)) return std::nullopt;
        return read_atl(p);
    };
    if (auto t = load_if(".shape.atl")) mesh.shape_basis = basis_from_atl(*t, V, sidecar(obj_path, ".shape.atl"));
    if (auto t = load_if(".pose.atl")) mesh.pose_basis = basis_from_atl(*t, V, sidecar(obj_path, ".pose.atl"));
    if (auto t = load_if(".expr.atl")) mesh.expr_basis = basis_from_atl(*t, V, sidecar(obj_path, ".expr.atl"));

    const auto manifest_path = sidecar(obj_path, ".manifest");
    std::map<std::string, std::string> manifest;
    if (fs::exists(manifest_path)) manifest = read_manifest(manifest_path);
    if (auto it = manifest.find("joint_parents"); it != manifest.end()) {
        std::istringstream ps(it->second);
        int p;
        while (ps >> p) mesh.joint_parents.push_back(p);
    }
    if (auto it = manifest.find("mirror_symmetric"); it != manifest.end()) mesh.mirror_symmetric = it->second == "1";

    if (auto t = load_if(".weights.atl")) {
        mesh.skin_weights = matrix_from_atl(*t, V, -1, sidecar(obj_path, ".weights.atl"));
        if (mesh.joint_parents.empty()) {
            mesh.joint_parents.push_back(-1);
            for (Eigen::Index j = 1; j < mesh.skin_weights.cols(); ++j) mesh.joint_parents.push_back(0);
        }
    }
    if (auto t = load_if(".regressor.atl")) {
        mesh.joint_regressor = matrix_from_atl(*t, mesh.num_joints(), V, sidecar(obj_path, ".regressor.atl"));
    }

    const auto regions_path = sidecar(obj_path, ".regions.txt");
    if (fs::exists(regions_path)) {
        mesh.region_labels.assign(mesh.triangles.size(), Region::face);
        std::ifstream rin(regions_path);
        int ln = 0;
        while (std::getline(rin, line)) {
            ++ln;
            std::istringstream ss(line);
            int tri;
            std::string tag;
            if (!(ss >> tri)) continue;
            if (!(ss >> tag)) format_fail(regions_path, ln, "expected 'triangle_index tag'");
            const auto r = parse_region(tag);
            if (!r) format_fail(regions_path, ln, "unknown region tag '" + tag + "'");
            if (tri < 0 || tri >= mesh.num_triangles()) format_fail(regions_path, ln, "triangle index out of range");
            mesh.region_labels[tri] = *r;
        }
    }

    mesh.fill_defaults();
    if (auto it = manifest.find("vertices"); it != manifest.end() && std::stoi(it->second) != V) {
        throw ValidationError("manifest vertex count " + it->second + " does not match OBJ (" + std::to_string(V) + ")");
    }
    if (auto it = manifest.find("triangles"); it != manifest.end() && std::stoi(it->second) != mesh.num_triangles()) {
        throw ValidationError("manifest triangle count " + it->second + " does not match OBJ");
    }
    mesh.validate();
    return mesh;
}

void save_mesh(const HeadMesh& mesh, const std::string& obj_path) {
    {
        std::ofstream out(obj_path);
        if (!out) throw ValidationError("cannot open '" + obj_path + "' for writing");
        char buf[128];
        for (const auto& v : mesh.vertices) {
            std::snprintf(buf, sizeof buf, "v %.17g %.17g %.17g\n", v.x(), v.y(), v.z());
            out << buf;
        }
        for (const auto& c : mesh.uv_corners) {
            for (const auto& uv : c) {
                std::snprintf(buf, sizeof buf, "vt %.17g %.17g\n", uv.x(), uv.y());
                out << buf;
            }
        }
        for (int f = 0; f < mesh.num_triangles(); ++f) {
            out << "f";
            for (int k = 0; k < 3; ++k) out << ' ' << mesh.triangles[f][k] + 1 << '/' << 3 * f + k + 1;
            out << '\n';
        }
    }
    write_atl(sidecar(obj_path, ".shape.atl"), basis_to_atl(mesh.shape_basis));
    write_atl(sidecar(obj_path, ".pose.atl"), basis_to_atl(mesh.pose_basis));
    write_atl(sidecar(obj_path, ".expr.atl"), basis_to_atl(mesh.expr_basis));
    write_atl(sidecar(obj_path, ".weights.atl"), matrix_to_atl(mesh.skin_weights));
    write_atl(sidecar(obj_path, ".regressor.atl"), matrix_to_atl(mesh.joint_regressor));
    {
        std::ofstream out(sidecar(obj_path, ".regions.txt"));
        for (int f = 0; f < mesh.num_triangles(); ++f) out << f << ' ' << region_name(mesh.region_labels[f]) << '\n';
    }
    {
        std::ofstream out(sidecar(obj_path, ".manifest"));
        out << "# head mesh sidecar manifest\n";
        out << "vertices = " << mesh.num_vertices() << "\n";
        out << "triangles = " << mesh.num_triangles() << "\n";
        out << "joints = " << mesh.num_joints() << "\n";
        out << "joint_parents =";
        for (int p : mesh.joint_parents) out << ' ' << p;
        out << "\nmirror_symmetric = " << (mesh.mirror_symmetric ? 1 : 0) << "\n";
        out << "shape_components = " << mesh.shape_basis.cols() << "\n";
        out << "expression_components = " << mesh.expr_basis.cols() << "\n";
    }
}

} // namespace uvsplat
