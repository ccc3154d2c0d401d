#include "uvsplat/gsmap.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_map>

namespace uvsplat {

AttributeMaps AttributeMaps::zeros(int K) {
    AttributeMaps m;
    m.K = K;
    m.raw = Image(K, K, channel::count);
    m.shape_offset = Image(K, K, 3);
    return m;
}

void AttributeMaps::validate(const UvAtlas& atlas) const {
    if (raw.channels != channel::count) throw ValidationError("attribute map must have exactly 14 channels");
    if (raw.height != K || raw.width != K || shape_offset.height != K || shape_offset.width != K ||
        shape_offset.channels != 3) {
        throw ValidationError("attribute map shapes do not match K");
    }
    if (atlas.K != K) throw ValidationError("attribute map K does not match atlas K");
    for (double v : raw.data)
        if (!std::isfinite(v)) throw ValidationError("attribute map contains non-finite values");
    for (int t = 0; t < K * K; ++t) {
        for (int c = 0; c < 3; ++c) {
            const double v = shape_offset.data[3 * t + c];
            if (!std::isfinite(v)) throw ValidationError("shape offset contains non-finite values");
            if (!atlas.valid[t] && v != 0.0) throw ValidationError("shape offset must be zero on invalid texels");
        }
    }
}

void GaussianSet::reserve(int n) {
    position.reserve(n);
    rotation.reserve(n);
    scale.reserve(n);
    opacity.reserve(n);
    color.reserve(n);
    rig.reserve(n);
    local_offset.reserve(n);
}

void GaussianSet::push_back(const GaussianSet& o, int i) {
    position.push_back(o.position[i]);
    rotation.push_back(o.rotation[i]);
    scale.push_back(o.scale[i]);
    opacity.push_back(o.opacity[i]);
    color.push_back(o.color[i]);
    rig.push_back(i < static_cast<int>(o.rig.size()) ? o.rig[i] : GaussianRig{});
    local_offset.push_back(i < static_cast<int>(o.local_offset.size()) ? o.local_offset[i] : Vec3::Zero());
}

void GaussianSet::validate() const {
    const std::size_t n = position.size();
    if (rotation.size() != n || scale.size() != n || opacity.size() != n || color.size() != n) {
        throw ValidationError("GaussianSet arrays have mismatched lengths");
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (!position[i].allFinite()) throw ValidationError("Gaussian position is not finite");
        if (std::abs(rotation[i].norm() - 1.0) > 1e-6) throw ValidationError("Gaussian rotation is not a unit quaternion");
        if ((scale[i].array() < kMinScale).any() || (scale[i].array() > kMaxScale).any()) {
            throw ValidationError("Gaussian scale outside [1e-5, 0.5]");
        }
        if (!(opacity[i] >= 0.0 && opacity[i] <= 1.0)) throw ValidationError("Gaussian opacity outside [0,1]");
        if ((color[i].array() < 0.0).any() || (color[i].array() > 1.0).any()) {
            throw ValidationError("Gaussian color outside [0,1]");
        }
    }
}

SampleGrid default_sample_grid(const UvAtlas& atlas, const GridSpec& spec) {
    static const std::vector<std::uint8_t> no_hair;
    const auto hair_it = atlas.region_masks.find(Region::hair);
    const auto& hair = hair_it == atlas.region_masks.end() ? no_hair : hair_it->second;
    auto is_hair = [&](int t) { return !hair.empty() && hair[t]; };

    std::vector<SamplePoint> candidates;
    for (int j = 0; j < spec.dense_h; ++j) {
        for (int i = 0; i < spec.dense_w; ++i) {
            const Vec2 uv((i + 0.5) / spec.dense_w, (j + 0.5) / spec.dense_h);
            const int t = atlas.texel_at(uv);
            if (atlas.valid[t] && !is_hair(t)) candidates.push_back({uv, SampleSource::dense});
        }
    }
    if (!hair.empty()) {
        for (int j = 0; j < spec.hair_h; ++j) {
            for (int i = 0; i < spec.hair_w; ++i) {
                const Vec2 uv((i + 0.5) / spec.hair_w, (j + 0.5) / spec.hair_h);
                if (hair[atlas.texel_at(uv)]) candidates.push_back({uv, SampleSource::hair});
            }
        }
    }
    if (spec.include_vertices) {
        for (const Vec2& uv : atlas.vertex_uvs) {
            if (uv.x() >= 0 && uv.x() <= 1 && uv.y() >= 0 && uv.y() <= 1) candidates.push_back({uv, SampleSource::vertex});
        }
    }

    constexpr double kDedup = 1e-7;
    std::unordered_map<std::int64_t, std::vector<int>> cells;
    auto key = [](std::int64_t cx, std::int64_t cy) { return cx * 40000003 + cy; };
    SampleGrid grid;
    for (const auto& c : candidates) {
        const auto cx = static_cast<std::int64_t>(std::floor(c.uv.x() / kDedup));
        const auto cy = static_cast<std::int64_t>(std::floor(c.uv.y() / kDedup));
        bool duplicate = false;
        for (std::int64_t dy = -1; dy <= 1 && !duplicate; ++dy) {
            for (std::int64_t dx = -1; dx <= 1 && !duplicate; ++dx) {
                const auto it = cells.find(key(cx + dx, cy + dy));
                if (it == cells.end()) continue;
                for (int idx : it->second) {
                    if ((grid.points[idx].uv - c.uv).norm() <= kDedup) {
                        duplicate = true;
                        break;
                    }
                }
            }
        }
        if (duplicate) continue;
        cells[key(cx, cy)].push_back(static_cast<int>(grid.points.size()));
        grid.points.push_back(c);
    }
    if (grid.points.empty()) throw ValidationError("sample grid is empty");
    return grid;
}

Image apply_shape_offset(const Image& p, const Image& dp, const std::vector<std::uint8_t>& valid) {
    if (!p.same_shape(dp) || p.channels != 3) throw ValidationError("position map and shape offset shapes differ");
    Image out = p;
    for (int t = 0; t < p.pixels(); ++t) {
        if (!valid[t]) continue;
        for (int c = 0; c < 3; ++c) out.data[3 * t + c] += dp.data[3 * t + c];
    }
    return out;
}

Vec4 quat_multiply(const Vec4& a, const Vec4& b) {
    return {a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
            a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
            a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
            a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]};
}

Vec4 quat_from_matrix(const Mat3& m) {
    const Eigen::Quaterniond q(m);
    Vec4 out(q.w(), q.x(), q.y(), q.z());
    if (out[0] < 0) out = -out;
    return out;
}

Mat3 quat_to_matrix(const Vec4& qin) {
    const Vec4 q = qin.normalized();
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3 r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
         2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
         2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

namespace {

struct Taps {
    std::array<int, 4> texel{};
    std::array<double, 4> weight{};
    int count = 0;
};

// Snaps fractional coordinates that are within rounding of a texel center.
void snap(int& i0, double& f) {
    constexpr double eps = 1e-9;
    if (f < eps) {
        f = 0.0;
    } else if (f > 1.0 - eps) {
        ++i0;
        f = 0.0;
    }
}

Taps bilinear_taps(const UvAtlas& atlas, const Vec2& uv) {
    const int K = atlas.K;
    const double x = uv.x() * K - 0.5;
    const double y = uv.y() * K - 0.5;
    int x0 = static_cast<int>(std::floor(x));
    int y0 = static_cast<int>(std::floor(y));
    double fx = x - x0, fy = y - y0;
    snap(x0, fx);
    snap(y0, fy);
    Taps taps;
    double total = 0.0;
    const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
    const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
    const double ws[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
    for (int k = 0; k < 4; ++k) {
        if (ws[k] <= 0.0 || xs[k] < 0 || ys[k] < 0 || xs[k] >= K || ys[k] >= K) continue;
        const int t = ys[k] * K + xs[k];
        if (!atlas.valid[t]) continue;
        taps.texel[taps.count] = t;
        taps.weight[taps.count] = ws[k];
        ++taps.count;
        total += ws[k];
    }
    for (int k = 0; k < taps.count; ++k) taps.weight[k] /= total;
    return taps;
}

} // namespace

SampledGaussians sample_gaussians(const AttributeMaps& maps, const UvAtlas& atlas, const SampleGrid& grid,
                                  const std::vector<Vec3>& verts) {
    if (maps.K != atlas.K || maps.raw.height != atlas.K || maps.raw.channels != channel::count ||
        maps.shape_offset.height != atlas.K) {
        throw ValidationError("attribute maps and atlas disagree on K or channel layout");
    }
    const TexelFrames frames = triangle_frames(atlas.triangles, atlas.uv_corners, verts);
    const auto& canon = atlas.canonical_tri_frames;
    const int F = static_cast<int>(atlas.triangles.size());
    std::vector<Mat3> transport(F);
    std::vector<std::uint8_t> moved(F, 0);
    for (int f = 0; f < F; ++f) {
        if (frames.frame[f] == canon.frame[f]) {
            transport[f] = Mat3::Identity();
        } else {
            transport[f] = frames.frame[f] * canon.frame[f].transpose();
            moved[f] = 1;
        }
    }
    const Image p = position_map(atlas, verts);

    const int n = static_cast<int>(grid.points.size());
    std::vector<std::uint8_t> keep(n, 0);
    GaussianSet all;
    all.position.resize(n);
    all.rotation.resize(n);
    all.scale.resize(n);
    all.opacity.resize(n);
    all.color.resize(n);
    all.rig.resize(n);
    all.local_offset.resize(n);
    std::vector<SampleTrace> traces(n);

    parallel_for(0, n, [&](int i) {
        const Vec2 uv = grid.points[i].uv;
        const Taps taps = bilinear_taps(atlas, uv);
        if (taps.count == 0) return;
        keep[i] = 1;
        SampleTrace& tr = traces[i];
        tr.taps = taps.count;
        int best = 0;
        for (int k = 0; k < taps.count; ++k) {
            tr.texel[k] = taps.texel[k];
            tr.weight[k] = taps.weight[k];
            if (taps.weight[k] > taps.weight[best]) best = k;
        }
        tr.rig_texel = taps.texel[best];
        const int tri = atlas.tri_index[tr.rig_texel];
        tr.frame = frames.ok[tri] ? frames.frame[tri] : Mat3::Identity();
        tr.frame_quat = quat_from_matrix(tr.frame);

        double raw[channel::count] = {};
        Vec3 base = Vec3::Zero();
        for (int k = 0; k < taps.count; ++k) {
            const int t = taps.texel[k];
            const double w = taps.weight[k];
            for (int c = 0; c < channel::count; ++c) raw[c] += w * maps.raw.data[channel::count * t + c];
            const Vec3 pt(p.data[3 * t], p.data[3 * t + 1], p.data[3 * t + 2]);
            const Vec3 dp(maps.shape_offset.data[3 * t], maps.shape_offset.data[3 * t + 1],
                          maps.shape_offset.data[3 * t + 2]);
            const int f = atlas.tri_index[t];
            tr.transport[k] = transport[f];
            base += w * (pt + (moved[f] ? Vec3(transport[f] * dp) : dp));
        }

        Vec3 color, offset, scale;
        for (int c = 0; c < 3; ++c) {
            color[c] = logistic(raw[channel::color + c]);
            offset[c] = kOffsetRange * std::tanh(raw[channel::offset + c]);
            const double s = atlas.rel_scale[tr.rig_texel] * std::exp(raw[channel::scale + c]);
            tr.scale_clamped[c] = !(s >= kMinScale && s <= kMaxScale);
            scale[c] = std::clamp(s, kMinScale, kMaxScale);
        }
        Vec4 q(raw[channel::rotation] + 1.0, raw[channel::rotation + 1], raw[channel::rotation + 2],
               raw[channel::rotation + 3]);
        tr.raw_rotation = q;
        const double qn = q.norm();
        const Vec4 local = qn > 1e-12 ? Vec4(q / qn) : Vec4(1, 0, 0, 0);

        all.color[i] = color;
        all.opacity[i] = logistic(raw[channel::opacity]);
        all.scale[i] = scale;
        all.local_offset[i] = offset;
        all.position[i] = base + tr.frame * offset;
        Vec4 world = quat_multiply(tr.frame_quat, local);
        all.rotation[i] = world / world.norm();
        all.rig[i] = {uv, tri, tr.rig_texel};
    });

    SampledGaussians out;
    out.gaussians.reserve(n);
    out.trace.reserve(n);
    for (int i = 0; i < n; ++i) {
        if (!keep[i]) {
            ++out.diagnostics.dropped;
            continue;
        }
        out.gaussians.push_back(all, i);
        out.trace.push_back(traces[i]);
        const auto& cl = traces[i].scale_clamped;
        if (cl[0] || cl[1] || cl[2]) ++out.diagnostics.scale_clamped;
    }
    return out;
}

GaussianSet animate(const AttributeMaps& maps, const UvAtlas& atlas, const SampleGrid& grid, const HeadMesh& mesh,
                    const PoseParams& params) {
    return sample_gaussians(maps, atlas, grid, deform(mesh, params)).gaussians;
}

void write_gaussians_text(const std::string& path, const GaussianSet& g) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open '" + path + "' for writing");
    out << "# x y z qw qx qy qz sx sy sz o r g b\n";
    char buf[512];
    for (int i = 0; i < g.size(); ++i) {
        const auto& p = g.position[i];
        const auto& q = g.rotation[i];
        const auto& s = g.scale[i];
        const auto& c = g.color[i];
        std::snprintf(buf, sizeof buf, "%.9g %.9g %.9g %.9g %.9g %.9g %.9g %.9g %.9g %.9g %.9g %.9g %.9g %.9g\n",
                      p.x(), p.y(), p.z(), q[0], q[1], q[2], q[3], s.x(), s.y(), s.z(), g.opacity[i], c.x(), c.y(),
                      c.z());
        out << buf;
    }
}

GaussianSet read_gaussians_text(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open '" + path + "'");
    GaussianSet g;
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        Vec3 p, s, c;
        Vec4 q;
        double o;
        if (!(ss >> p.x() >> p.y() >> p.z() >> q[0] >> q[1] >> q[2] >> q[3] >> s.x() >> s.y() >> s.z() >> o >>
              c.x() >> c.y() >> c.z())) {
            throw FormatError(path + ":" + std::to_string(n) + ": expected 14 numbers");
        }
        g.position.push_back(p);
        g.rotation.push_back(q.normalized());
        g.scale.push_back(s);
        g.opacity.push_back(o);
        g.color.push_back(c);
        g.rig.push_back({});
        g.local_offset.push_back(Vec3::Zero());
    }
    return g;
}

} // namespace uvsplat
