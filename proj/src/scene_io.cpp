#include "uvsplat/scene_io.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "uvsplat/atl.hpp"
#include "uvsplat/mesh_io.hpp"

namespace uvsplat {

namespace fs = std::filesystem;

void save_maps(const std::string& path, const AttributeMaps& maps) {
    const int K = maps.K, C = channel::count + 3;
    std::vector<double> v(static_cast<std::size_t>(K) * K * C);
    for (int t = 0; t < K * K; ++t) {
        for (int c = 0; c < channel::count; ++c) v[t * C + c] = maps.raw.data[t * channel::count + c];
        for (int c = 0; c < 3; ++c) v[t * C + channel::count + c] = maps.shape_offset.data[3 * t + c];
    }
    write_atl(path, to_atl(v, {static_cast<std::uint32_t>(K), static_cast<std::uint32_t>(K),
                               static_cast<std::uint32_t>(C)}));
}

AttributeMaps load_maps(const std::string& path) {
    const AtlTensor t = read_atl(path);
    const int C = channel::count + 3;
    if (t.dims.size() != 3 || t.dims[0] != t.dims[1] || t.dims[2] != static_cast<std::uint32_t>(C)) {
        throw FormatError(path + ": expected a K x K x 17 map tensor");
    }
    const int K = static_cast<int>(t.dims[0]);
    AttributeMaps maps = AttributeMaps::zeros(K);
    for (int i = 0; i < K * K; ++i) {
        for (int c = 0; c < channel::count; ++c) maps.raw.data[i * channel::count + c] = t.values[i * C + c];
        for (int c = 0; c < 3; ++c) maps.shape_offset.data[3 * i + c] = t.values[i * C + channel::count + c];
    }
    return maps;
}

void save_cameras(const std::string& path, const std::vector<Camera>& cams) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open '" + path + "' for writing");
    out.precision(17);
    for (const auto& c : cams) {
        out << c.fx << ' ' << c.fy << ' ' << c.cx << ' ' << c.cy << ' ' << c.width << ' ' << c.height;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) out << ' ' << c.R(i, j);
        for (int i = 0; i < 3; ++i) out << ' ' << c.t[i];
        out << '\n';
    }
}

std::vector<Camera> load_cameras(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open '" + path + "'");
    std::vector<Camera> cams;
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        Camera c;
        ss >> c.fx >> c.fy >> c.cx >> c.cy >> c.width >> c.height;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) ss >> c.R(i, j);
        for (int i = 0; i < 3; ++i) ss >> c.t[i];
        if (!ss) throw FormatError(path + ":" + std::to_string(n) + ": expected 18 camera values");
        c.validate();
        cams.push_back(c);
    }
    return cams;
}

PoseParams parse_pose_row(const std::string& row, const HeadMesh& mesh) {
    PoseParams p = PoseParams::zeros(mesh);
    std::vector<double> values;
    std::stringstream ss(row);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        try {
            values.push_back(std::stod(cell));
        } catch (const std::exception&) {
            throw FormatError("pose row: bad number '" + cell + "'");
        }
    }
    const long nb = p.beta.size(), nt = p.theta.size(), ne = p.psi.size();
    if (static_cast<long>(values.size()) > nb + nt + ne) throw ValidationError("pose row has too many values");
    for (long i = 0; i < static_cast<long>(values.size()); ++i) {
        if (i < nb) p.beta[i] = values[i];
        else if (i < nb + nt) p.theta[i - nb] = values[i];
        else p.psi[i - nb - nt] = values[i];
    }
    return p;
}

std::vector<PoseParams> load_pose_sequence(const std::string& path, const HeadMesh& mesh) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open '" + path + "'");
    std::vector<PoseParams> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        out.push_back(parse_pose_row(line, mesh));
    }
    return out;
}

namespace {

void save_image_set(const fs::path& dir, const std::string& prefix, const std::vector<Image>& imgs) {
    for (std::size_t k = 0; k < imgs.size(); ++k) write_atl((dir / (prefix + std::to_string(k) + ".atl")).string(), to_atl(imgs[k]));
}

std::vector<Image> load_image_set(const fs::path& dir, const std::string& prefix, std::size_t n) {
    std::vector<Image> out;
    for (std::size_t k = 0; k < n; ++k) out.push_back(image_from_atl(read_atl((dir / (prefix + std::to_string(k) + ".atl")).string())));
    return out;
}

std::string vec_string(const Vec3& v) {
    std::ostringstream ss;
    ss.precision(17);
    ss << v.x() << ' ' << v.y() << ' ' << v.z();
    return ss.str();
}

Vec3 parse_vec(const std::string& s) {
    std::istringstream ss(s);
    Vec3 v;
    if (!(ss >> v.x() >> v.y() >> v.z())) throw FormatError("bad vector '" + s + "'");
    return v;
}

} // namespace

void save_scene(const std::string& dir, const SyntheticScene& scene) {
    const fs::path d(dir);
    fs::create_directories(d);
    save_mesh(scene.mesh, (d / "template.obj").string());
    save_cameras((d / "cameras.txt").string(), scene.cameras);
    save_cameras((d / "heldout_cameras.txt").string(), scene.heldout);
    save_image_set(d, "target_rgb_", scene.target_rgb);
    save_image_set(d, "target_alpha_", scene.target_alpha);
    save_image_set(d, "heldout_rgb_", scene.heldout_rgb);
    save_image_set(d, "heldout_alpha_", scene.heldout_alpha);
    write_atl((d / "gt_texture.atl").string(), to_atl(scene.gt_texture));
    for (std::size_t k = 0; k < scene.target_rgb.size(); ++k) {
        write_ppm((d / ("target_" + std::to_string(k) + ".ppm")).string(), scene.target_rgb[k]);
        write_pgm((d / ("target_alpha_" + std::to_string(k) + ".pgm")).string(), scene.target_alpha[k]);
    }
    write_manifest((d / "manifest.txt").string(),
                   {{"command", "synth"},
                    {"seed", std::to_string(scene.options.seed)},
                    {"resolution", std::to_string(scene.options.resolution)},
                    {"cameras", std::to_string(scene.cameras.size())},
                    {"hair_volume", std::to_string(scene.options.hair_volume)},
                    {"gt_gaussians", std::to_string(scene.gt_gaussians.size())},
                    {"box_lo", vec_string(scene.box.lo)},
                    {"box_hi", vec_string(scene.box.hi)}});
}

SyntheticScene load_scene(const std::string& dir) {
    const fs::path d(dir);
    const auto m = read_manifest((d / "manifest.txt").string());
    auto get = [&](const std::string& k) {
        const auto it = m.find(k);
        if (it == m.end()) throw FormatError("scene manifest lacks '" + k + "'");
        return it->second;
    };
    SyntheticScene s;
    s.options.seed = std::stoull(get("seed"));
    s.options.resolution = std::stoi(get("resolution"));
    s.mesh = load_mesh((d / "template.obj").string());
    s.cameras = load_cameras((d / "cameras.txt").string());
    s.heldout = load_cameras((d / "heldout_cameras.txt").string());
    s.target_rgb = load_image_set(d, "target_rgb_", s.cameras.size());
    s.target_alpha = load_image_set(d, "target_alpha_", s.cameras.size());
    s.heldout_rgb = load_image_set(d, "heldout_rgb_", s.heldout.size());
    s.heldout_alpha = load_image_set(d, "heldout_alpha_", s.heldout.size());
    s.gt_texture = image_from_atl(read_atl((d / "gt_texture.atl").string()));
    s.box.lo = parse_vec(get("box_lo"));
    s.box.hi = parse_vec(get("box_hi"));
    return s;
}

void write_manifest(const std::string& path, const std::map<std::string, std::string>& entries) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open '" + path + "' for writing");
    out << "version = " << kVersion << '\n';
    for (const auto& [k, v] : entries) out << k << " = " << v << '\n';
}

std::map<std::string, std::string> read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open '" + path + "'");
    std::map<std::string, std::string> m;
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            if (b == std::string::npos) return std::string();
            return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
        };
        m[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return m;
}

} // namespace uvsplat
