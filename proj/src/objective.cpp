#include "uvsplat/objective.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace uvsplat {

void LossWeights::validate() const {
    for (double v : {photo, alpha, l3d, uv, eye, pos, shape, shape_tv, epsilon}) {
        if (!(v >= 0.0) || !std::isfinite(v)) throw ValidationError("loss weights must be finite and non-negative");
    }
    if (!(delta_alpha > 0.0 && delta_alpha <= 0.1)) throw ValidationError("delta_alpha must lie in (0, 0.1]");
    if (!(alpha_mask >= 0.0 && alpha_mask < 1.0)) throw ValidationError("alpha mask threshold must lie in [0, 1)");
}

namespace {

inline double sign(double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); }

} // namespace

double tv(const Image& img, const std::vector<std::uint8_t>& mask, Image* grad) {
    const int H = img.height, W = img.width, C = img.channels;
    if (!mask.empty() && static_cast<int>(mask.size()) != H * W) throw ValidationError("TV mask has wrong size");
    auto in = [&](int y, int x) { return mask.empty() || mask[static_cast<std::size_t>(y) * W + x]; };
    if (grad) *grad = Image(H, W, C);
    double sum = 0.0;
    long pairs = 0;
    auto pair = [&](int y0, int x0, int y1, int x1) {
        if (!in(y0, x0) || !in(y1, x1)) return;
        ++pairs;
        for (int c = 0; c < C; ++c) sum += std::abs(img.at(y1, x1, c) - img.at(y0, x0, c));
    };
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            if (x + 1 < W) pair(y, x, y, x + 1);
            if (y + 1 < H) pair(y, x, y + 1, x);
        }
    if (pairs == 0) return 0.0;
    if (grad) {
        const double inv = 1.0 / pairs;
        auto back = [&](int y0, int x0, int y1, int x1) {
            if (!in(y0, x0) || !in(y1, x1)) return;
            for (int c = 0; c < C; ++c) {
                const double s = sign(img.at(y1, x1, c) - img.at(y0, x0, c)) * inv;
                grad->at(y1, x1, c) += s;
                grad->at(y0, x0, c) -= s;
            }
        };
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                if (x + 1 < W) back(y, x, y, x + 1);
                if (y + 1 < H) back(y, x, y + 1, x);
            }
    }
    return sum / pairs;
}

double loss_normalized_tv(const Image& render, const Image& alpha, double delta_alpha, double mask_threshold,
                          Image* d_render, Image* d_alpha) {
    const int H = render.height, W = render.width, C = render.channels;
    if (alpha.height != H || alpha.width != W || alpha.channels != 1) throw ValidationError("alpha shape mismatch");
    Image J(H, W, C);
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(H) * W);
    for (int p = 0; p < H * W; ++p) {
        const double a = alpha.data[p];
        mask[p] = a >= mask_threshold;
        const double den = std::max(a, delta_alpha);
        for (int c = 0; c < C; ++c) J.data[p * C + c] = (render.data[p * C + c] - (1.0 - a)) / den;
    }
    const bool want = d_render || d_alpha;
    Image gJ;
    const double value = tv(J, mask, want ? &gJ : nullptr);
    if (d_render) *d_render = Image(H, W, C);
    if (d_alpha) *d_alpha = Image(H, W, 1);
    if (want) {
        for (int p = 0; p < H * W; ++p) {
            const double a = alpha.data[p];
            const bool floor = a <= delta_alpha;
            const double den = floor ? delta_alpha : a;
            for (int c = 0; c < C; ++c) {
                const double g = gJ.data[p * C + c];
                if (g == 0.0) continue;
                if (d_render) d_render->data[p * C + c] = g / den;
                if (d_alpha) {
                    const double dJ = floor ? 1.0 / den : (1.0 - render.data[p * C + c]) / (a * a);
                    d_alpha->data[p] += g * dJ;
                }
            }
        }
    }
    return value;
}

namespace {

void require_unit_background(const RenderOutput& r) {
    if (r.background.empty() ||
        std::any_of(r.background.begin(), r.background.end(), [](double b) { return b != 1.0; })) {
        throw ContractError("normalized TV needs a render with unit background");
    }
}

} // namespace

double loss_3d(const RenderOutput& i3d, const LossWeights& w, Image* d_render, Image* d_alpha) {
    require_unit_background(i3d);
    return loss_normalized_tv(i3d.color, i3d.alpha, w.delta_alpha, w.alpha_mask, d_render, d_alpha);
}

double loss_uv(const RenderOutput& iuv, const LossWeights& w, Image* d_render, Image* d_alpha) {
    require_unit_background(iuv);
    return loss_normalized_tv(iuv.color, iuv.alpha, w.delta_alpha, w.alpha_mask, d_render, d_alpha);
}

double loss_shape(const Image& dp, const std::vector<std::uint8_t>& valid, double eps, Image* grad) {
    if (dp.channels != 3 || static_cast<int>(valid.size()) != dp.pixels()) throw ValidationError("shape offset mismatch");
    if (grad) *grad = Image(dp.height, dp.width, 3);
    int count = 0;
    for (auto v : valid) count += v != 0;
    if (count == 0) return 0.0;
    double sum = 0.0;
    for (int t = 0; t < dp.pixels(); ++t) {
        if (!valid[t]) continue;
        const Vec3 d(dp.data[3 * t], dp.data[3 * t + 1], dp.data[3 * t + 2]);
        const double n = d.norm();
        if (n <= eps) continue;
        sum += n - eps;
        if (grad)
            for (int c = 0; c < 3; ++c) grad->data[3 * t + c] = d[c] / (n * count);
    }
    return sum / count;
}

double loss_shape_tv(const Image& dp, const std::vector<std::uint8_t>& valid, Image* grad) {
    return tv(dp, valid, grad);
}

double loss_pos(const std::vector<Vec3>& offsets, std::vector<Vec3>* grad) {
    const std::size_t n = offsets.size();
    if (grad) grad->assign(n, Vec3::Zero());
    if (n == 0) return 0.0;
    double sq = 0.0;
    for (const auto& o : offsets) sq += o.squaredNorm();
    const double value = std::sqrt(sq / n);
    if (grad && value > 0.0)
        for (std::size_t i = 0; i < n; ++i) (*grad)[i] = offsets[i] / (n * value);
    return value;
}

double loss_region_tv(const Image& raw, const std::vector<std::uint8_t>& mask, Image* grad) {
    if (static_cast<int>(mask.size()) != raw.pixels()) throw ValidationError("region mask has wrong size");
    return tv(raw, mask, grad);
}

double loss_l1(const Image& a, const Image& b, Image* grad) {
    if (!a.same_shape(b)) throw ValidationError("L1 operands differ in shape");
    if (grad) *grad = Image(a.height, a.width, a.channels);
    if (a.data.empty()) return 0.0;
    const double inv = 1.0 / static_cast<double>(a.data.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        sum += std::abs(d);
        if (grad) grad->data[i] = sign(d) * inv;
    }
    return sum * inv;
}

double LossReport::value(const std::string& name) const {
    for (const auto& t : terms)
        if (t.name == name) return t.value;
    throw ValidationError("no loss term named '" + name + "'");
}

void write_history_csv(const std::string& path, const std::vector<LossReport>& history) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open '" + path + "' for writing");
    out.precision(17);
    out << "iter,term,value\n";
    for (std::size_t i = 0; i < history.size(); ++i) {
        for (const auto& t : history[i].terms) out << i << ',' << t.name << ',' << t.value << '\n';
        out << i << ",total," << history[i].total << '\n';
    }
}

namespace {

// Splits channels [c0, c0 + n) out of an image.
Image slice_channels(const Image& img, int c0, int n) {
    Image out(img.height, img.width, n);
    for (int p = 0; p < img.pixels(); ++p)
        for (int c = 0; c < n; ++c) out.data[p * n + c] = img.data[p * img.channels + c0 + c];
    return out;
}

void add_channels(Image& dst, const Image& src, int c0, double scale) {
    for (int p = 0; p < src.pixels(); ++p)
        for (int c = 0; c < src.channels; ++c) dst.data[p * dst.channels + c0 + c] += scale * src.data[p * src.channels + c];
}

void add_scaled(Image& dst, const Image& src, double scale) {
    for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += scale * src.data[i];
}

} // namespace

ObjectiveResult total_objective(const AttributeMaps& maps, const ObjectiveScene& scene, const LossWeights& w,
                                bool want_grad) {
    w.validate();
    if (!scene.atlas || !scene.grid) throw ContractError("objective scene is missing atlas or grid");
    const UvAtlas& atlas = *scene.atlas;
    const std::size_t nc = scene.cameras.size();
    if (nc == 0 || scene.target_rgb.size() != nc || scene.target_alpha.size() != nc) {
        throw ValidationError("objective needs one target per camera");
    }
    scene.box.validate();

    SampledGaussians sg = sample_gaussians(maps, atlas, *scene.grid, scene.verts);
    const GaussianSet& g = sg.gaussians;
    const int n = g.size();
    const bool with_uv = w.uv > 0.0;
    const int C = with_uv ? 8 : 6;

    std::vector<double> channels(static_cast<std::size_t>(n) * C);
    const Vec3 ext = scene.box.hi - scene.box.lo;
    for (int i = 0; i < n; ++i) {
        double* c = channels.data() + static_cast<std::size_t>(i) * C;
        for (int k = 0; k < 3; ++k) {
            c[k] = g.color[i][k];
            c[3 + k] = (g.position[i][k] - scene.box.lo[k]) / ext[k];
        }
        if (with_uv) {
            c[6] = g.rig[i].uv.x();
            c[7] = g.rig[i].uv.y();
        }
    }
    std::vector<double> background(C, 1.0);
    background[0] = background[1] = background[2] = 0.0;

    ObjectiveResult res;
    res.diagnostics = sg.diagnostics;
    double l_photo = 0, l_alpha = 0, l_3d = 0, l_uv = 0;
    GaussianGrads acc;
    if (want_grad) acc.resize(n, C);
    const double inv_nc = 1.0 / static_cast<double>(nc);
    for (std::size_t v = 0; v < nc; ++v) {
        const Camera& cam = scene.cameras[v];
        RenderOutput r = rasterize(project(g, cam), channels, C, cam, background);
        const Image rgb = slice_channels(r.color, 0, 3);
        const Image pos = slice_channels(r.color, 3, 3);
        Image g_rgb, g_a1, g_pos, g_a3;
        l_photo += inv_nc * loss_l1(rgb, scene.target_rgb[v], want_grad ? &g_rgb : nullptr);
        l_alpha += inv_nc * loss_l1(r.alpha, scene.target_alpha[v], want_grad ? &g_a1 : nullptr);
        l_3d += inv_nc * loss_normalized_tv(pos, r.alpha, w.delta_alpha, w.alpha_mask, want_grad ? &g_pos : nullptr,
                                            want_grad ? &g_a3 : nullptr);
        Image g_uv, g_a4;
        if (with_uv) {
            const Image uv = slice_channels(r.color, 6, 2);
            l_uv += inv_nc * loss_normalized_tv(uv, r.alpha, w.delta_alpha, w.alpha_mask, want_grad ? &g_uv : nullptr,
                                                want_grad ? &g_a4 : nullptr);
        }
        if (want_grad) {
            Image d_color(r.color.height, r.color.width, C);
            Image d_alpha(r.alpha.height, r.alpha.width, 1);
            add_channels(d_color, g_rgb, 0, w.photo * inv_nc);
            add_channels(d_color, g_pos, 3, w.l3d * inv_nc);
            add_scaled(d_alpha, g_a1, w.alpha * inv_nc);
            add_scaled(d_alpha, g_a3, w.l3d * inv_nc);
            if (with_uv) {
                add_channels(d_color, g_uv, 6, w.uv * inv_nc);
                add_scaled(d_alpha, g_a4, w.uv * inv_nc);
            }
            const GaussianGrads gr = backward(g, cam, r, d_color, d_alpha);
            for (int i = 0; i < n; ++i) {
                acc.position[i] += gr.position[i];
                acc.rotation[i] += gr.rotation[i];
                acc.scale[i] += gr.scale[i];
                acc.opacity[i] += gr.opacity[i];
            }
            for (std::size_t k = 0; k < acc.channels.size(); ++k) acc.channels[k] += gr.channels[k];
        }
        res.renders.push_back(std::move(r));
    }

    std::vector<Vec3> g_off;
    const double l_pos = loss_pos(g.local_offset, want_grad ? &g_off : nullptr);
    Image g_shape, g_shape_tv, g_eye;
    const double l_shape = loss_shape(maps.shape_offset, atlas.valid, w.epsilon, want_grad ? &g_shape : nullptr);
    const double l_shape_tv = loss_shape_tv(maps.shape_offset, atlas.valid, want_grad ? &g_shape_tv : nullptr);
    double l_eye = 0.0;
    const bool has_eye = !scene.eye_mask.empty();
    if (has_eye) l_eye = loss_region_tv(maps.raw, scene.eye_mask, want_grad ? &g_eye : nullptr);

    LossReport& rep = res.report;
    rep.terms = {{"photo", l_photo, w.photo},   {"alpha", l_alpha, w.alpha}, {"l3d", l_3d, w.l3d},
                 {"uv", l_uv, w.uv},            {"eye", l_eye, w.eye},       {"pos", l_pos, w.pos},
                 {"shape", l_shape, w.shape},   {"shape_tv", l_shape_tv, w.shape_tv}};
    rep.total = 0.0;
    for (const auto& t : rep.terms) {
        if (!std::isfinite(t.value)) throw NumericalError("loss term '" + t.name + "' is not finite");
        rep.total += t.weight * t.value;
    }
    if (!want_grad) return res;

    AttributeMaps& grad = res.grad;
    grad = AttributeMaps::zeros(maps.K);
    const int NC = channel::count;
    for (int i = 0; i < n; ++i) {
        const SampleTrace& tr = sg.trace[i];
        const double* gc = acc.channels.data() + static_cast<std::size_t>(i) * C;
        Vec3 dpos = acc.position[i];
        for (int k = 0; k < 3; ++k) dpos[k] += gc[3 + k] / ext[k];

        double draw[channel::count] = {};
        for (int k = 0; k < 3; ++k) {
            const double c = g.color[i][k];
            draw[channel::color + k] = gc[k] * c * (1.0 - c);
            if (!tr.scale_clamped[k]) draw[channel::scale + k] = acc.scale[i][k] * g.scale[i][k];
        }
        const double o = g.opacity[i];
        draw[channel::opacity] = acc.opacity[i] * o * (1.0 - o);

        Vec3 doff = tr.frame.transpose() * dpos;
        if (w.pos > 0.0) doff += w.pos * g_off[i];
        for (int k = 0; k < 3; ++k) {
            const double th = g.local_offset[i][k] / kOffsetRange;
            draw[channel::offset + k] = doff[k] * kOffsetRange * (1.0 - th * th);
        }

        const double qn = tr.raw_rotation.norm();
        if (qn > 1e-12) {
            const Vec4 ql = tr.raw_rotation / qn;
            const Vec4 world = quat_multiply(tr.frame_quat, ql);
            Vec4 dworld = acc.rotation[i];
            dworld -= world * world.dot(dworld);
            // world = L(frame_quat) ql with L the left-multiplication matrix.
            const Vec4& a = tr.frame_quat;
            Eigen::Matrix4d L;
            L << a[0], -a[1], -a[2], -a[3], a[1], a[0], -a[3], a[2], a[2], a[3], a[0], -a[1], a[3], -a[2], a[1], a[0];
            const Vec4 dql = L.transpose() * dworld;
            const Vec4 dq = (dql - ql * ql.dot(dql)) / qn;
            for (int k = 0; k < 4; ++k) draw[channel::rotation + k] = dq[k];
        }

        for (int k = 0; k < tr.taps; ++k) {
            const int t = tr.texel[k];
            const double wk = tr.weight[k];
            double* gr = grad.raw.data.data() + static_cast<std::size_t>(t) * NC;
            for (int c = 0; c < NC; ++c) gr[c] += wk * draw[c];
            const Vec3 ddp = wk * (tr.transport[k].transpose() * dpos);
            for (int c = 0; c < 3; ++c) grad.shape_offset.data[3 * t + c] += ddp[c];
        }
    }
    add_scaled(grad.shape_offset, g_shape, w.shape);
    add_scaled(grad.shape_offset, g_shape_tv, w.shape_tv);
    if (has_eye) add_scaled(grad.raw, g_eye, w.eye);
    for (int t = 0; t < maps.K * maps.K; ++t)
        if (!atlas.valid[t])
            for (int c = 0; c < 3; ++c) grad.shape_offset.data[3 * t + c] = 0.0;

    double nr = 0, ns = 0;
    for (double v : grad.raw.data) nr += v * v;
    for (double v : grad.shape_offset.data) ns += v * v;
    rep.grad_norm_raw = std::sqrt(nr);
    rep.grad_norm_shape = std::sqrt(ns);
    return res;
}

} // namespace uvsplat
