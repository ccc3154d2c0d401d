#include "uvsplat/fuse.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace uvsplat {

FeatureMap FeatureMap::zeros(int K, int C) {
    FeatureMap f;
    f.K = K;
    f.C = C;
    f.data.assign(static_cast<std::size_t>(K) * K * C, 0.0);
    f.valid.assign(static_cast<std::size_t>(K) * K, 0);
    return f;
}

void FeatureMap::validate() const {
    if (static_cast<int>(data.size()) != K * K * C || static_cast<int>(valid.size()) != K * K) {
        throw ValidationError("feature map has inconsistent shape");
    }
    for (int t = 0; t < K * K; ++t) {
        for (int c = 0; c < C; ++c) {
            const double v = data[static_cast<std::size_t>(t) * C + c];
            if (!std::isfinite(v)) throw ValidationError("feature map contains non-finite values");
            if (!valid[t] && v != 0.0) throw ValidationError("feature map must be zero on invalid texels");
        }
    }
}

namespace {

// Camera depth where the ray through camera-space point P crosses triangle
// f, or infinity when it misses.
double ray_depth(const Camera& cam, const std::vector<Vec3>& verts, const std::array<int, 3>& f, const Vec3& P) {
    const Vec3 A = cam.to_camera(verts[f[0]]), B = cam.to_camera(verts[f[1]]), C = cam.to_camera(verts[f[2]]);
    const Vec3 n = (B - A).cross(C - A);
    const double denom = n.dot(P);
    if (std::abs(denom) <= 1e-12 * n.norm() * P.norm()) return INFINITY;
    const double s = n.dot(A) / denom;
    if (s <= 0) return INFINITY;
    const Vec3 X = s * P;
    const double nn = n.squaredNorm();
    const double b0 = (C - B).cross(X - B).dot(n) / nn, b1 = (A - C).cross(X - C).dot(n) / nn;
    if (b0 < -1e-9 || b1 < -1e-9 || 1.0 - b0 - b1 < -1e-9) return INFINITY;
    return X.z();
}

} // namespace

MaskMap visibility_mask(const Image& p_r, const std::vector<std::uint8_t>& valid, const std::vector<Vec3>& verts,
                        const std::vector<std::array<int, 3>>& triangles, const Camera& cam, double tau,
                        VisibilityDiagnostics* diag) {
    cam.validate();
    const int K = p_r.height, W = cam.width, H = cam.height;
    MaskMap m;
    m.K = K;
    m.values.assign(static_cast<std::size_t>(K) * K, 0.0);

    // Bin every triangle into the pixel cells its screen bounding box touches.
    // Any triangle the ray through a point crosses is then in that point's cell.
    std::vector<int> bin_start(static_cast<std::size_t>(W) * H + 1, 0), bins;
    std::vector<std::array<int, 4>> boxes(triangles.size(), {0, -1, 0, -1});
    int skipped = 0;
    for (std::size_t f = 0; f < triangles.size(); ++f) {
        double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
        bool behind = false;
        for (int k = 0; k < 3; ++k) {
            const Vec3 pc = cam.to_camera(verts[triangles[f][k]]);
            if (pc.z() < kNearPlane) behind = true;
            const double u = cam.fx * pc.x() / pc.z() + cam.cx, v = cam.fy * pc.y() / pc.z() + cam.cy;
            x0 = std::min(x0, u), x1 = std::max(x1, u), y0 = std::min(y0, v), y1 = std::max(y1, v);
        }
        if (behind) {
            ++skipped;
            continue;
        }
        auto cell = [](double c, int n) { return static_cast<int>(std::clamp(std::floor(c), -1.0, static_cast<double>(n))); };
        auto& box = boxes[f];
        box = {std::max(0, cell(x0, W)), std::min(W - 1, cell(x1, W)), std::max(0, cell(y0, H)), std::min(H - 1, cell(y1, H))};
        for (int y = box[2]; y <= box[3]; ++y)
            for (int x = box[0]; x <= box[1]; ++x) ++bin_start[static_cast<std::size_t>(y) * W + x + 1];
    }
    for (std::size_t i = 0; i + 1 < bin_start.size(); ++i) bin_start[i + 1] += bin_start[i];
    bins.resize(bin_start.back());
    {
        std::vector<int> fill(bin_start.begin(), bin_start.end() - 1);
        for (int f = 0; f < static_cast<int>(triangles.size()); ++f)
            for (int y = boxes[f][2]; y <= boxes[f][3]; ++y)
                for (int x = boxes[f][0]; x <= boxes[f][1]; ++x) bins[fill[static_cast<std::size_t>(y) * W + x]++] = f;
    }
    if (diag) {
        diag->skipped_triangles = skipped;
        diag->all_behind = skipped == static_cast<int>(triangles.size());
    }

    parallel_for(0, K * K, [&](int t) {
        if (!valid[t]) return;
        const Vec3 P = cam.to_camera(Vec3(p_r.data[3 * t], p_r.data[3 * t + 1], p_r.data[3 * t + 2]));
        if (P.z() < kNearPlane) return;
        const double u = cam.fx * P.x() / P.z() + cam.cx, v = cam.fy * P.y() / P.z() + cam.cy;
        if (std::lround(u) < 0 || std::lround(v) < 0 || std::lround(u) >= W || std::lround(v) >= H) return;
        const int cx = std::clamp(static_cast<int>(std::floor(u)), 0, W - 1);
        const int cy = std::clamp(static_cast<int>(std::floor(v)), 0, H - 1);
        const std::size_t c = static_cast<std::size_t>(cy) * W + cx;
        double surface = INFINITY;
        for (int i = bin_start[c]; i < bin_start[c + 1]; ++i)
            surface = std::min(surface, ray_depth(cam, verts, triangles[bins[i]], P));
        m.values[t] = P.z() <= surface + tau ? 1.0 : 0.0;
    });
    return m;
}

FeatureMap sample_local_features(const Image& source, const Image& p_r, const std::vector<std::uint8_t>& valid,
                                 const Camera& cam, const MaskMap& visibility) {
    const int K = p_r.height, C = source.channels;
    FeatureMap F = FeatureMap::zeros(K, C);
    parallel_for(0, K * K, [&](int t) {
        if (!valid[t] || visibility.values[t] <= 0.0) return;
        const Vec3 P = cam.to_camera(Vec3(p_r.data[3 * t], p_r.data[3 * t + 1], p_r.data[3 * t + 2]));
        if (P.z() < kNearPlane) return;
        const double u = cam.fx * P.x() / P.z() + cam.cx, v = cam.fy * P.y() / P.z() + cam.cy;
        if (!(u >= 0 && v >= 0 && u <= source.width - 1 && v <= source.height - 1)) return;
        const int x0 = std::min(static_cast<int>(std::floor(u)), source.width - 1);
        const int y0 = std::min(static_cast<int>(std::floor(v)), source.height - 1);
        const int x1 = std::min(x0 + 1, source.width - 1), y1 = std::min(y0 + 1, source.height - 1);
        const double fx = u - x0, fy = v - y0;
        double* out = F.at(t);
        for (int c = 0; c < C; ++c) {
            out[c] = (1 - fx) * (1 - fy) * source.at(y0, x0, c) + fx * (1 - fy) * source.at(y0, x1, c) +
                     (1 - fx) * fy * source.at(y1, x0, c) + fx * fy * source.at(y1, x1, c);
        }
        F.valid[t] = 1;
    });
    return F;
}

std::vector<FeatureMap> build_pyramid(const FeatureMap& finest, int scales) {
    if (scales < 1) throw ValidationError("pyramid needs at least one scale");
    if (finest.K % (1 << (scales - 1)) != 0) throw ValidationError("K must be divisible by 2^(N-1)");
    std::vector<FeatureMap> out{finest};
    out[0].scale_index = 0;
    for (int s = 1; s < scales; ++s) {
        const FeatureMap& src = out.back();
        const int K = src.K / 2, C = src.C;
        FeatureMap dst = FeatureMap::zeros(K, C);
        dst.scale_index = s;
        for (int y = 0; y < K; ++y) {
            for (int x = 0; x < K; ++x) {
                int count = 0;
                double* o = dst.at(y * K + x);
                for (int dy = 0; dy < 2; ++dy) {
                    for (int dx = 0; dx < 2; ++dx) {
                        const int t = (2 * y + dy) * src.K + 2 * x + dx;
                        if (!src.valid[t]) continue;
                        ++count;
                        for (int c = 0; c < C; ++c) o[c] += src.at(t)[c];
                    }
                }
                if (count == 0) continue;
                for (int c = 0; c < C; ++c) o[c] /= count;
                dst.valid[y * K + x] = 1;
            }
        }
        out.push_back(std::move(dst));
    }
    return out;
}

std::vector<int> mirror_at_scale(const std::vector<std::uint8_t>& valid, int K, bool symmetric) {
    std::vector<int> m(static_cast<std::size_t>(K) * K, -1);
    if (!symmetric) return m;
    for (int y = 0; y < K; ++y) {
        for (int x = 0; x < K; ++x) {
            const int t = y * K + x, u = y * K + (K - 1 - x);
            if (valid[t] && valid[u]) m[t] = u;
        }
    }
    return m;
}

namespace {

Eigen::MatrixXd seeded_orthonormal(int rows, int cols, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    const int d = std::max(rows, cols);
    Eigen::MatrixXd a(d, d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) a(i, j) = n(rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    const Eigen::MatrixXd q = qr.householderQ();
    return q.topLeftCorner(rows, cols);
}

} // namespace

FusionWeights FusionWeights::seeded(int C, std::uint64_t seed, bool identity_value) {
    if (C <= 0) throw ValidationError("feature channel count must be positive");
    std::mt19937_64 rng(seed);
    FusionWeights w;
    w.C = C;
    w.Wq = seeded_orthonormal(C, C, rng);
    w.Wk = seeded_orthonormal(C, C, rng);
    w.Wv = identity_value ? Eigen::MatrixXd::Identity(C, C) : seeded_orthonormal(C, C, rng);
    w.W1 = 0.5 * seeded_orthonormal(C, C, rng);
    w.W2 = 0.5 * seeded_orthonormal(C, C, rng);
    w.b1 = Eigen::VectorXd::Zero(C);
    w.Wc = seeded_orthonormal(C, 2 * C, rng) / std::sqrt(2.0);
    return w;
}

FeatureMap symmetric_window_attention(const FeatureMap& Fg, const FeatureMap& Fl, const std::vector<int>& mirror,
                                      int w, int layers, const FusionWeights& weights, AttentionStats* stats) {
    if (w < 1 || w % 2 == 0) throw ValidationError("attention window must be odd");
    if (Fg.K != Fl.K || Fg.C != Fl.C || Fg.C != weights.C) throw ValidationError("attention inputs disagree in shape");
    const int K = Fg.K, C = Fg.C, r = w / 2;
    const double inv_sqrt_c = 1.0 / std::sqrt(static_cast<double>(C));

    // Keys and values depend only on F_l.
    Eigen::MatrixXd keys(C, K * K), values(C, K * K);
    for (int t = 0; t < K * K; ++t) {
        if (!Fl.valid[t]) continue;
        const Eigen::Map<const Eigen::VectorXd> f(Fl.at(t), C);
        keys.col(t) = weights.Wk * f;
        values.col(t) = weights.Wv * f;
    }

    std::vector<int> empty(static_cast<std::size_t>(K) * K, 0);
    std::vector<double> row_err(static_cast<std::size_t>(K) * K, 0.0);
    FeatureMap cur = Fg;
    for (int layer = 0; layer < layers; ++layer) {
        FeatureMap next = cur;
        parallel_for(0, K * K, [&](int t) {
            if (!cur.valid[t]) return;
            std::vector<int> keyset;
            auto gather = [&](int centre) {
                const int cx = centre % K, cy = centre / K;
                for (int y = std::max(0, cy - r); y <= std::min(K - 1, cy + r); ++y)
                    for (int x = std::max(0, cx - r); x <= std::min(K - 1, cx + r); ++x)
                        if (Fl.valid[y * K + x]) keyset.push_back(y * K + x);
            };
            gather(t);
            if (mirror[t] >= 0) gather(mirror[t]);
            std::sort(keyset.begin(), keyset.end());
            keyset.erase(std::unique(keyset.begin(), keyset.end()), keyset.end());
            if (keyset.empty()) {
                if (layer == 0) empty[t] = 1;
                return;
            }
            const Eigen::Map<const Eigen::VectorXd> x(cur.at(t), C);
            const Eigen::VectorXd q = weights.Wq * x;
            std::vector<double> logits(keyset.size());
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < keyset.size(); ++k) {
                logits[k] = q.dot(keys.col(keyset[k])) * inv_sqrt_c;
                mx = std::max(mx, logits[k]);
            }
            double sum = 0.0;
            for (double& l : logits) sum += (l = std::exp(l - mx));
            Eigen::VectorXd attended = Eigen::VectorXd::Zero(C);
            double row = 0.0;
            for (std::size_t k = 0; k < keyset.size(); ++k) {
                const double a = logits[k] / sum;
                row += a;
                attended += a * values.col(keyset[k]);
            }
            row_err[t] = std::max(row_err[t], std::abs(row - 1.0));
            const Eigen::VectorXd h = x + attended;
            const Eigen::VectorXd y = h + weights.W2 * (weights.W1 * h + weights.b1).cwiseMax(0.0);
            Eigen::Map<Eigen::VectorXd>(next.at(t), C) = y;
        });
        cur = std::move(next);
    }
    if (stats) {
        stats->empty_queries = 0;
        stats->max_row_sum_error = 0.0;
        for (int t = 0; t < K * K; ++t) {
            stats->empty_queries += empty[t];
            stats->max_row_sum_error = std::max(stats->max_row_sum_error, row_err[t]);
        }
    }
    return cur;
}

MaskMap occlusion_mask(const FeatureMap& Fc, const FeatureMap& Fl, double theta) {
    if (Fc.K != Fl.K || Fc.C != Fl.C) throw ValidationError("occlusion mask inputs disagree in shape");
    const int K = Fc.K, C = Fc.C;
    MaskMap m;
    m.K = K;
    m.values.assign(static_cast<std::size_t>(K) * K, 0.0);
    for (int t = 0; t < K * K; ++t) {
        if (!Fl.valid[t]) continue;
        double dot = 0, na = 0, nb = 0;
        for (int c = 0; c < C; ++c) {
            dot += Fc.at(t)[c] * Fl.at(t)[c];
            na += Fc.at(t)[c] * Fc.at(t)[c];
            nb += Fl.at(t)[c] * Fl.at(t)[c];
        }
        const double cosine = na > 0 && nb > 0 ? dot / std::sqrt(na * nb) : 0.0;
        m.values[t] = cosine >= theta ? 1.0 : 0.0;
    }
    return m;
}

FeatureMap symmetric_completion(const FeatureMap& Fl, const MaskMap& Mv, const MaskMap& Mo,
                                const std::vector<int>& mirror) {
    const int K = Fl.K, C = Fl.C;
    if (Mv.K != K || Mo.K != K || static_cast<int>(mirror.size()) != K * K) {
        throw ValidationError("completion inputs disagree in shape");
    }
    FeatureMap out = FeatureMap::zeros(K, C);
    for (int t = 0; t < K * K; ++t) {
        const double keep = 1.0 - Mv.values[t] * Mo.values[t];
        const int m = mirror[t];
        bool any = false;
        for (int c = 0; c < C; ++c) {
            double v = Mo.values[t] * Fl.at(t)[c];
            if (m >= 0) v += Mo.values[m] * Fl.at(m)[c] * keep;
            out.at(t)[c] = v;
            any |= v != 0.0;
        }
        out.valid[t] = Fl.valid[t] || (m >= 0 && Fl.valid[m]) || any;
    }
    return out;
}

FeatureMap fuse_conv(const FeatureMap& Fc, const FeatureMap& Fm, const FusionWeights& weights) {
    if (Fc.K != Fm.K || Fc.C != Fm.C || Fc.C != weights.C) throw ValidationError("fusion inputs disagree in shape");
    const int K = Fc.K, C = Fc.C;
    FeatureMap out = FeatureMap::zeros(K, C);
    out.scale_index = Fc.scale_index;
    Eigen::VectorXd cat(2 * C);
    for (int t = 0; t < K * K; ++t) {
        if (!Fc.valid[t]) continue;
        for (int c = 0; c < C; ++c) {
            cat[c] = Fc.at(t)[c];
            cat[C + c] = Fm.at(t)[c];
        }
        const Eigen::VectorXd y = cat.head(C) + weights.Wc * cat;
        for (int c = 0; c < C; ++c) out.at(t)[c] = y[c];
        out.valid[t] = 1;
    }
    return out;
}

FeatureMap mirror_features(const FeatureMap& F, const std::vector<int>& mirror) {
    FeatureMap out = FeatureMap::zeros(F.K, F.C);
    out.scale_index = F.scale_index;
    for (int t = 0; t < F.K * F.K; ++t) {
        const int m = mirror[t];
        if (m < 0) continue;
        for (int c = 0; c < F.C; ++c) out.at(t)[c] = F.at(m)[c];
        out.valid[t] = F.valid[m];
    }
    return out;
}

std::vector<FusionScale> run_fusion(const FeatureMap& Fg, const FeatureMap& Fl, const MaskMap& Mv,
                                    const UvAtlas& atlas, const FusionConfig& config) {
    if (Fg.K != atlas.K || Fl.K != atlas.K || Mv.K != atlas.K) throw ValidationError("fusion inputs must be at atlas K");
    const FusionWeights weights = FusionWeights::seeded(Fg.C, config.seed);
    const auto g_pyr = build_pyramid(Fg, config.scales);
    const auto l_pyr = build_pyramid(Fl, config.scales);

    FeatureMap valid_map = FeatureMap::zeros(atlas.K, 1);
    FeatureMap vis_map = FeatureMap::zeros(atlas.K, 1);
    for (int t = 0; t < atlas.K * atlas.K; ++t) {
        valid_map.valid[t] = atlas.valid[t];
        valid_map.data[t] = atlas.valid[t] ? 1.0 : 0.0;
        vis_map.valid[t] = atlas.valid[t];
        vis_map.data[t] = atlas.valid[t] ? Mv.values[t] : 0.0;
    }
    const auto valid_pyr = build_pyramid(valid_map, config.scales);
    const auto vis_pyr = build_pyramid(vis_map, config.scales);

    std::vector<FusionScale> out;
    for (int s = 0; s < config.scales; ++s) {
        FusionScale fs;
        fs.Fg = g_pyr[s];
        fs.Fl = l_pyr[s];
        const int K = fs.Fg.K;
        fs.mirror = s == 0 ? atlas.mirror : mirror_at_scale(valid_pyr[s].valid, K, atlas.mirror_symmetric);
        fs.Mv.K = K;
        fs.Mv.values.assign(static_cast<std::size_t>(K) * K, 0.0);
        for (int t = 0; t < K * K; ++t) fs.Mv.values[t] = fs.Fl.valid[t] && vis_pyr[s].data[t] > 0 ? 1.0 : 0.0;
        fs.Fc = symmetric_window_attention(fs.Fg, fs.Fl, fs.mirror, config.window, config.layers, weights);
        fs.Mo = occlusion_mask(fs.Fc, fs.Fl, config.theta_occ);
        fs.Fm = symmetric_completion(fs.Fl, fs.Mv, fs.Mo, fs.mirror);
        fs.Ff = fuse_conv(fs.Fc, fs.Fm, weights);
        out.push_back(std::move(fs));
    }
    return out;
}

Image lift_features(const Image& img, int C, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const Eigen::MatrixXd E = seeded_orthonormal(C, img.channels, rng);
    Image out(img.height, img.width, C);
    for (int p = 0; p < img.pixels(); ++p) {
        const Eigen::Map<const Eigen::VectorXd> x(img.data.data() + static_cast<std::size_t>(p) * img.channels,
                                                  img.channels);
        Eigen::Map<Eigen::VectorXd>(out.data.data() + static_cast<std::size_t>(p) * C, C) = E * x;
    }
    return out;
}

} // namespace uvsplat
