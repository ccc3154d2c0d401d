#include "uvsplat/splat.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace uvsplat {

namespace {

thread_local StageTimes g_times;

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Entry of the depth-sorted splat array, packed for the compositing loop.
struct Packed {
    double mx, my, a, b, c, o, qmax;
    int gaussian;
};

// d R(q) / d q for a unit quaternion (w, x, y, z), contracted with G = dL/dR.
Vec4 rotation_matrix_grad(const Vec4& q, const Mat3& G) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Vec4 g;
    g[0] = 2 * (-z * G(0, 1) + y * G(0, 2) + z * G(1, 0) - x * G(1, 2) - y * G(2, 0) + x * G(2, 1));
    g[1] = 2 * (y * G(0, 1) + z * G(0, 2) + y * G(1, 0) - 2 * x * G(1, 1) - w * G(1, 2) + z * G(2, 0) +
                w * G(2, 1) - 2 * x * G(2, 2));
    g[2] = 2 * (-2 * y * G(0, 0) + x * G(0, 1) + w * G(0, 2) + x * G(1, 0) + z * G(1, 2) - w * G(2, 0) +
                z * G(2, 1) - 2 * y * G(2, 2));
    g[3] = 2 * (-2 * z * G(0, 0) - w * G(0, 1) + x * G(0, 2) + w * G(1, 0) - 2 * z * G(1, 1) + y * G(1, 2) +
                x * G(2, 0) + y * G(2, 1));
    return g;
}

struct ProjectionTerms {
    Vec3 pc;
    Mat3 rot;     // R(q)
    Mat3 sigma;   // 3D covariance
    Eigen::Matrix<double, 2, 3> J, T;
};

ProjectionTerms projection_terms(const GaussianSet& g, int i, const Camera& cam) {
    ProjectionTerms p;
    p.pc = cam.to_camera(g.position[i]);
    p.rot = quat_to_matrix(g.rotation[i]);
    const Vec3 s2 = g.scale[i].cwiseProduct(g.scale[i]);
    p.sigma = p.rot * s2.asDiagonal() * p.rot.transpose();
    const double z = p.pc.z(), iz = 1.0 / z, iz2 = iz * iz;
    p.J << cam.fx * iz, 0, -cam.fx * p.pc.x() * iz2, 0, cam.fy * iz, -cam.fy * p.pc.y() * iz2;
    p.T = p.J * cam.R;
    return p;
}

} // namespace

Camera Camera::look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double fov_y_deg, int width,
                       int height) {
    const Vec3 f = (target - eye).normalized();
    const Vec3 d = -(up - up.dot(f) * f).normalized();
    const Vec3 r = d.cross(f);
    Camera cam;
    cam.R.row(0) = r;
    cam.R.row(1) = d;
    cam.R.row(2) = f;
    cam.t = -cam.R * eye;
    cam.width = width;
    cam.height = height;
    cam.fy = 0.5 * height / std::tan(0.5 * fov_y_deg * M_PI / 180.0);
    cam.fx = cam.fy;
    cam.cx = 0.5 * (width - 1);
    cam.cy = 0.5 * (height - 1);
    return cam;
}

void Camera::validate() const {
    if (!(fx > 0 && fy > 0)) throw ValidationError("camera focal lengths must be positive");
    if (width <= 0 || height <= 0) throw ValidationError("camera resolution must be positive");
    if (!R.allFinite() || !t.allFinite()) throw ValidationError("camera pose is not finite");
    if ((R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6) {
        throw ValidationError("camera rotation is not orthonormal");
    }
}

double splat_weight(double raw) {
    const double d = std::min(raw, kMaxAlpha);
    if (d < kAlphaThreshold) return 0.0;
    if (d >= 2 * kAlphaThreshold) return d;
    const double u = (d - kAlphaThreshold) / kAlphaThreshold;
    return kAlphaThreshold * u * u * (5.0 - 3.0 * u);
}

double splat_weight_derivative(double raw) {
    if (raw > kMaxAlpha || raw < kAlphaThreshold) return 0.0;
    if (raw >= 2 * kAlphaThreshold) return 1.0;
    const double u = (raw - kAlphaThreshold) / kAlphaThreshold;
    return u * (10.0 - 9.0 * u);
}

Projection project(const GaussianSet& g, const Camera& cam) {
    const auto t0 = std::chrono::steady_clock::now();
    cam.validate();
    Projection out;
    const int n = g.size();
    out.splats.resize(n);
    parallel_for(0, n, [&](int i) {
        Splat& s = out.splats[i];
        const Vec3 pc = cam.to_camera(g.position[i]);
        if (!(pc.z() >= kNearPlane)) return;
        const ProjectionTerms p = projection_terms(g, i, cam);
        Mat2 cov = p.T * p.sigma * p.T.transpose();
        cov(0, 1) = cov(1, 0) = 0.5 * (cov(0, 1) + cov(1, 0));
        cov(0, 0) += kDilation;
        cov(1, 1) += kDilation;
        const double det = cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(0, 1);
        s.visible = true;
        s.mean = {cam.fx * pc.x() / pc.z() + cam.cx, cam.fy * pc.y() / pc.z() + cam.cy};
        s.cov = cov;
        s.conic = {cov(1, 1) / det, -cov(0, 1) / det, cov(0, 0) / det};
        s.depth = pc.z();
        s.opacity = g.opacity[i];
        if (s.opacity > kAlphaThreshold) {
            const double qmax = 2.0 * std::log(s.opacity / kAlphaThreshold);
            const double ex = std::sqrt(qmax * cov(0, 0)), ey = std::sqrt(qmax * cov(1, 1));
            constexpr double pad = 1e-9;
            s.x0 = std::max(0, static_cast<int>(std::ceil(s.mean.x() - ex - pad)));
            s.x1 = std::min(cam.width - 1, static_cast<int>(std::floor(s.mean.x() + ex + pad)));
            s.y0 = std::max(0, static_cast<int>(std::ceil(s.mean.y() - ey - pad)));
            s.y1 = std::min(cam.height - 1, static_cast<int>(std::floor(s.mean.y() + ey + pad)));
        }
    });
    for (const auto& s : out.splats) out.culled += !s.visible;
    g_times.project = seconds_since(t0);
    return out;
}

struct ForwardState {
    int width = 0, height = 0, C = 0;
    int tile_w = 0, tile_h = 0, tiles_x = 0, tiles_y = 0;
    std::vector<double> channels;
    std::vector<double> background;
    std::vector<Packed> packed;       // depth order
    std::vector<int> tile_offsets;    // tiles + 1
    std::vector<int> tile_entries;    // indices into packed
    std::vector<int> pixel_end;       // exclusive end within the tile list
    std::vector<double> pixel_T;      // final transmittance
};

RenderOutput rasterize(const Projection& proj, const std::vector<double>& channels, int C, const Camera& cam,
                       const std::vector<double>& background, const RasterOptions& opts) {
    const int n = static_cast<int>(proj.splats.size());
    if (C <= 0 || static_cast<int>(channels.size()) != n * C) throw ValidationError("channel array has wrong size");
    if (static_cast<int>(background.size()) != C) throw ValidationError("background has wrong channel count");
    for (double v : channels)
        if (!std::isfinite(v)) throw ValidationError("channel values must be finite");

    auto t0 = std::chrono::steady_clock::now();
    auto st = std::make_shared<ForwardState>();
    const int W = cam.width, H = cam.height;
    st->width = W;
    st->height = H;
    st->C = C;
    st->channels = channels;
    st->background = background;
    st->tile_w = opts.tiled ? kTileSize : W;
    st->tile_h = opts.tiled ? kTileSize : H;
    st->tiles_x = (W + st->tile_w - 1) / st->tile_w;
    st->tiles_y = (H + st->tile_h - 1) / st->tile_h;
    const int ntiles = st->tiles_x * st->tiles_y;

    std::vector<int> order;
    order.reserve(n);
    for (int i = 0; i < n; ++i)
        if (proj.splats[i].visible) order.push_back(i);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        const double da = proj.splats[a].depth, db = proj.splats[b].depth;
        return da < db || (da == db && a < b);
    });
    st->packed.resize(order.size());
    for (std::size_t k = 0; k < order.size(); ++k) {
        const Splat& s = proj.splats[order[k]];
        const double qmax = s.opacity > kAlphaThreshold ? 2.0 * std::log(s.opacity / kAlphaThreshold) : -1.0;
        st->packed[k] = {s.mean.x(), s.mean.y(), s.conic[0], s.conic[1], s.conic[2], s.opacity, qmax, order[k]};
    }

    st->tile_offsets.assign(ntiles + 1, 0);
    auto tile_range = [&](const Splat& s, int& tx0, int& tx1, int& ty0, int& ty1) {
        if (!opts.tiled) {
            tx0 = ty0 = 0;
            tx1 = ty1 = 0;
            return true;
        }
        if (s.x1 < s.x0 || s.y1 < s.y0) return false;
        tx0 = s.x0 / kTileSize;
        tx1 = s.x1 / kTileSize;
        ty0 = s.y0 / kTileSize;
        ty1 = s.y1 / kTileSize;
        return true;
    };
    for (int idx : order) {
        int tx0, tx1, ty0, ty1;
        if (!tile_range(proj.splats[idx], tx0, tx1, ty0, ty1)) continue;
        for (int ty = ty0; ty <= ty1; ++ty)
            for (int tx = tx0; tx <= tx1; ++tx) ++st->tile_offsets[ty * st->tiles_x + tx + 1];
    }
    for (int t = 0; t < ntiles; ++t) st->tile_offsets[t + 1] += st->tile_offsets[t];
    st->tile_entries.resize(st->tile_offsets[ntiles]);
    {
        std::vector<int> fill(st->tile_offsets.begin(), st->tile_offsets.end() - 1);
        for (std::size_t k = 0; k < order.size(); ++k) {
            int tx0, tx1, ty0, ty1;
            if (!tile_range(proj.splats[order[k]], tx0, tx1, ty0, ty1)) continue;
            for (int ty = ty0; ty <= ty1; ++ty)
                for (int tx = tx0; tx <= tx1; ++tx) st->tile_entries[fill[ty * st->tiles_x + tx]++] = static_cast<int>(k);
        }
    }
    g_times.sort = seconds_since(t0);
    t0 = std::chrono::steady_clock::now();

    RenderOutput out;
    out.color = Image(H, W, C);
    out.alpha = Image(H, W, 1);
    out.contributors.assign(static_cast<std::size_t>(W) * H, 0);
    out.background = background;
    st->pixel_end.assign(static_cast<std::size_t>(W) * H, 0);
    st->pixel_T.assign(static_cast<std::size_t>(W) * H, 1.0);

    const Packed* packed = st->packed.data();
    const double* ch = st->channels.data();
    parallel_for(0, ntiles, [&](int tile) {
        const int tx = tile % st->tiles_x, ty = tile / st->tiles_x;
        const int begin = st->tile_offsets[tile], end = st->tile_offsets[tile + 1];
        const int* list = st->tile_entries.data();
        std::vector<double> acc(C);
        for (int y = ty * st->tile_h; y < std::min(H, (ty + 1) * st->tile_h); ++y) {
            for (int x = tx * st->tile_w; x < std::min(W, (tx + 1) * st->tile_w); ++x) {
                std::fill(acc.begin(), acc.end(), 0.0);
                double T = 1.0;
                int count = 0;
                int k = begin;
                for (; k < end; ++k) {
                    const Packed& s = packed[list[k]];
                    const double dx = x - s.mx, dy = y - s.my;
                    const double q = s.a * dx * dx + 2.0 * s.b * dx * dy + s.c * dy * dy;
                    if (q > s.qmax) continue;
                    const double delta = splat_weight(s.o * std::exp(-0.5 * q));
                    if (delta == 0.0) continue;
                    const double Tn = T * (1.0 - delta);
                    if (Tn < kMinTransmittance) break;
                    const double w = delta * T;
                    const double* c = ch + static_cast<std::size_t>(s.gaussian) * C;
                    for (int j = 0; j < C; ++j) acc[j] += w * c[j];
                    T = Tn;
                    ++count;
                }
                const std::size_t p = static_cast<std::size_t>(y) * W + x;
                for (int j = 0; j < C; ++j) out.color.data[p * C + j] = acc[j] + T * background[j];
                out.alpha.data[p] = 1.0 - T;
                out.contributors[p] = count;
                st->pixel_end[p] = k;
                st->pixel_T[p] = T;
            }
        }
    });
    g_times.composite = seconds_since(t0);
    out.state = std::move(st);
    return out;
}

void BoundingBox::validate() const {
    if (!lo.allFinite() || !hi.allFinite() || ((hi - lo).array() < 1e-9).any()) {
        throw ValidationError("bounding box is degenerate");
    }
}

BoundingBox bounding_box(const GaussianSet& g, double margin) {
    BoundingBox b;
    if (g.size() == 0) return b;
    b.lo = b.hi = g.position[0];
    for (const auto& p : g.position) {
        b.lo = b.lo.cwiseMin(p);
        b.hi = b.hi.cwiseMax(p);
    }
    b.lo.array() -= margin;
    b.hi.array() += margin;
    return b;
}

int mode_channel_count(RenderMode mode) { return mode == RenderMode::uv ? 2 : 3; }

std::vector<double> mode_background(RenderMode mode) {
    return std::vector<double>(mode_channel_count(mode), mode == RenderMode::color ? 0.0 : 1.0);
}

std::vector<double> mode_channels(const GaussianSet& g, RenderMode mode, const std::optional<BoundingBox>& box) {
    const int n = g.size(), C = mode_channel_count(mode);
    std::vector<double> ch(static_cast<std::size_t>(n) * C);
    if (mode == RenderMode::color) {
        for (int i = 0; i < n; ++i)
            for (int c = 0; c < 3; ++c) ch[3 * i + c] = g.color[i][c];
    } else if (mode == RenderMode::position_unit) {
        const BoundingBox b = box ? *box : bounding_box(g);
        b.validate();
        const Vec3 ext = b.hi - b.lo;
        for (int i = 0; i < n; ++i)
            for (int c = 0; c < 3; ++c) ch[3 * i + c] = (g.position[i][c] - b.lo[c]) / ext[c];
    } else {
        if (static_cast<int>(g.rig.size()) != n) throw ValidationError("uv mode requires rig metadata");
        for (int i = 0; i < n; ++i)
            for (int c = 0; c < 2; ++c) ch[2 * i + c] = g.rig[i].uv[c];
    }
    return ch;
}

RenderOutput render(const GaussianSet& g, const Camera& cam, const std::vector<double>& background) {
    return rasterize(project(g, cam), mode_channels(g, RenderMode::color, std::nullopt), 3, cam, background);
}

RenderOutput render_override(const GaussianSet& g, RenderMode mode, const Camera& cam,
                             const std::optional<BoundingBox>& box) {
    return rasterize(project(g, cam), mode_channels(g, mode, box), mode_channel_count(mode), cam,
                     mode_background(mode));
}

void GaussianGrads::resize(int n, int C) {
    position.assign(n, Vec3::Zero());
    rotation.assign(n, Vec4::Zero());
    scale.assign(n, Vec3::Zero());
    opacity.assign(n, 0.0);
    channels.assign(static_cast<std::size_t>(n) * C, 0.0);
}

GaussianGrads backward(const GaussianSet& g, const Camera& cam, const RenderOutput& render, const Image& d_color,
                       const Image& d_alpha) {
    if (!render.state) throw ContractError("backward requires the forward state of a render");
    const ForwardState& st = *render.state;
    const int W = st.width, H = st.height, C = st.C, n = g.size();
    if (W != cam.width || H != cam.height) throw ContractError("camera does not match the retained render");
    if (static_cast<int>(st.channels.size()) != n * C) throw ContractError("Gaussian set does not match the render");
    const bool has_color = !d_color.empty(), has_alpha = !d_alpha.empty();
    if (has_color && (d_color.height != H || d_color.width != W || d_color.channels != C)) {
        throw ValidationError("color gradient has wrong shape");
    }
    if (has_alpha && (d_alpha.height != H || d_alpha.width != W || d_alpha.channels != 1)) {
        throw ValidationError("alpha gradient has wrong shape");
    }

    // Per list entry: mean (2), conic (3), opacity (1), channels (C).
    const int stride = 6 + C;
    std::vector<double> entry(st.tile_entries.size() * static_cast<std::size_t>(stride), 0.0);
    const int ntiles = st.tiles_x * st.tiles_y;
    const Packed* packed = st.packed.data();
    const double* ch = st.channels.data();
    parallel_for(0, ntiles, [&](int tile) {
        const int tx = tile % st.tiles_x, ty = tile / st.tiles_x;
        const int begin = st.tile_offsets[tile];
        const int* list = st.tile_entries.data();
        std::vector<double> S(C), G(C);
        for (int y = ty * st.tile_h; y < std::min(H, (ty + 1) * st.tile_h); ++y) {
            for (int x = tx * st.tile_w; x < std::min(W, (tx + 1) * st.tile_w); ++x) {
                const std::size_t p = static_cast<std::size_t>(y) * W + x;
                bool any = false;
                for (int j = 0; j < C; ++j) {
                    G[j] = has_color ? d_color.data[p * C + j] : 0.0;
                    any |= G[j] != 0.0;
                }
                const double ga = has_alpha ? d_alpha.data[p] : 0.0;
                if (!any && ga == 0.0) continue;
                const double T_final = st.pixel_T[p];
                double T = T_final;
                for (int j = 0; j < C; ++j) S[j] = st.background[j];
                for (int k = st.pixel_end[p] - 1; k >= begin; --k) {
                    const Packed& s = packed[list[k]];
                    const double dx = x - s.mx, dy = y - s.my;
                    const double q = s.a * dx * dx + 2.0 * s.b * dx * dy + s.c * dy * dy;
                    if (q > s.qmax) continue;
                    const double e = std::exp(-0.5 * q);
                    const double raw = s.o * e;
                    const double delta = splat_weight(raw);
                    if (delta == 0.0) continue;
                    const double Ti = T / (1.0 - delta);
                    const double* c = ch + static_cast<std::size_t>(s.gaussian) * C;
                    double* out = entry.data() + static_cast<std::size_t>(k) * stride;
                    double dd = ga * T_final / (1.0 - delta);
                    for (int j = 0; j < C; ++j) {
                        dd += G[j] * Ti * (c[j] - S[j]);
                        out[6 + j] += G[j] * delta * Ti;
                        S[j] = delta * c[j] + (1.0 - delta) * S[j];
                    }
                    T = Ti;
                    const double draw = dd * splat_weight_derivative(raw);
                    if (draw == 0.0) continue;
                    const double dq = -0.5 * raw * draw;
                    out[0] += -2.0 * dq * (s.a * dx + s.b * dy);
                    out[1] += -2.0 * dq * (s.b * dx + s.c * dy);
                    out[2] += dq * dx * dx;
                    out[3] += dq * 2.0 * dx * dy;
                    out[4] += dq * dy * dy;
                    out[5] += draw * e;
                }
            }
        }
    });

    // Fixed-order reduction into per-Gaussian screen-space gradients.
    std::vector<double> screen(static_cast<std::size_t>(n) * 6, 0.0);
    GaussianGrads grads;
    grads.resize(n, C);
    for (std::size_t k = 0; k < st.tile_entries.size(); ++k) {
        const int gi = packed[st.tile_entries[k]].gaussian;
        const double* e = entry.data() + k * stride;
        for (int j = 0; j < 6; ++j) screen[gi * 6 + j] += e[j];
        for (int j = 0; j < C; ++j) grads.channels[static_cast<std::size_t>(gi) * C + j] += e[6 + j];
    }

    parallel_for(0, n, [&](int i) {
        const double* sg = screen.data() + static_cast<std::size_t>(i) * 6;
        if (sg[0] == 0 && sg[1] == 0 && sg[2] == 0 && sg[3] == 0 && sg[4] == 0 && sg[5] == 0) return;
        grads.opacity[i] = sg[5];
        const ProjectionTerms p = projection_terms(g, i, cam);
        const double x = p.pc.x(), y = p.pc.y(), z = p.pc.z();
        const double iz = 1.0 / z, iz2 = iz * iz, iz3 = iz2 * iz;

        Mat2 cov = p.T * p.sigma * p.T.transpose();
        cov(0, 1) = cov(1, 0) = 0.5 * (cov(0, 1) + cov(1, 0));
        cov(0, 0) += kDilation;
        cov(1, 1) += kDilation;
        const Mat2 M = cov.inverse();
        Mat2 GM;
        GM << sg[2], 0.5 * sg[3], 0.5 * sg[3], sg[4];
        const Mat2 Gcov = -M * GM * M;

        const Eigen::Matrix<double, 2, 3> GT = 2.0 * Gcov * p.T * p.sigma;
        const Mat3 Gsigma = p.T.transpose() * Gcov * p.T;
        const Eigen::Matrix<double, 2, 3> GJ = GT * cam.R.transpose();

        Vec3 gpc;
        gpc.x() = cam.fx * iz * sg[0] + GJ(0, 2) * (-cam.fx * iz2);
        gpc.y() = cam.fy * iz * sg[1] + GJ(1, 2) * (-cam.fy * iz2);
        gpc.z() = -cam.fx * x * iz2 * sg[0] - cam.fy * y * iz2 * sg[1] + GJ(0, 0) * (-cam.fx * iz2) +
                  GJ(0, 2) * (2.0 * cam.fx * x * iz3) + GJ(1, 1) * (-cam.fy * iz2) +
                  GJ(1, 2) * (2.0 * cam.fy * y * iz3);
        grads.position[i] = cam.R.transpose() * gpc;

        const Vec3& s = g.scale[i];
        const Mat3 Ms = p.rot * s.asDiagonal();
        const Mat3 GMs = 2.0 * Gsigma * Ms;
        Mat3 GR;
        for (int k = 0; k < 3; ++k) {
            grads.scale[i][k] = GMs.col(k).dot(p.rot.col(k));
            GR.col(k) = GMs.col(k) * s[k];
        }
        const Vec4 qn = g.rotation[i].normalized();
        const Vec4 gq = rotation_matrix_grad(qn, GR);
        grads.rotation[i] = (gq - qn * qn.dot(gq)) / g.rotation[i].norm();
    });
    return grads;
}

const StageTimes& last_stage_times() { return g_times; }

} // namespace uvsplat
