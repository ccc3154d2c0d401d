#pragma once

#include <cstdint>
#include <vector>

#include "uvsplat/geometry.hpp"
#include "uvsplat/splat.hpp"

namespace uvsplat {

/// K x K x C texel features. Invalid texels hold zeros.
struct FeatureMap {
    int K = 0;
    int C = 0;
    std::vector<double> data;
    std::vector<std::uint8_t> valid;
    int scale_index = 0; // 0 is the finest scale

    static FeatureMap zeros(int K, int C);
    double* at(int t) { return data.data() + static_cast<std::size_t>(t) * C; }
    const double* at(int t) const { return data.data() + static_cast<std::size_t>(t) * C; }
    void validate() const;
};

struct MaskMap {
    int K = 0;
    std::vector<double> values;
};

struct VisibilityDiagnostics {
    int skipped_triangles = 0; // behind the near plane
    bool all_behind = false;
};

/// A texel is visible when its projection falls in frame and its camera depth
/// does not exceed the depth of the nearest surface along the same ray by
/// more than tau. Triangles are binned per pixel cell by their screen bounds
/// and the nearest crossing is found exactly within the texel's cell.
MaskMap visibility_mask(const Image& p_r, const std::vector<std::uint8_t>& valid, const std::vector<Vec3>& verts,
                        const std::vector<std::array<int, 3>>& triangles, const Camera& cam, double tau,
                        VisibilityDiagnostics* diag = nullptr);

/// Bilinear lookup of the source image at each visible texel's projection.
FeatureMap sample_local_features(const Image& source, const Image& p_r, const std::vector<std::uint8_t>& valid,
                                 const Camera& cam, const MaskMap& visibility);

/// Scale 0 is the input; each further scale halves K with validity-weighted
/// 2x2 average pooling.
std::vector<FeatureMap> build_pyramid(const FeatureMap& finest, int scales);

/// Mirror map at a pooled scale: index reflection restricted to texels that
/// are valid on both sides.
std::vector<int> mirror_at_scale(const std::vector<std::uint8_t>& valid, int K, bool symmetric);

/// Fixed projection weights shared by all texels. Matrices are C x C except
/// the fusion convolution (C x 2C).
struct FusionWeights {
    int C = 0;
    Eigen::MatrixXd Wq, Wk, Wv, W1, W2, Wc;
    Eigen::VectorXd b1;

    static FusionWeights seeded(int C, std::uint64_t seed, bool identity_value = false);
};

struct AttentionStats {
    int empty_queries = 0;
    double max_row_sum_error = 0.0;
};

/// Cross-attention of F_g queries over F_l keys in the w x w window at each
/// texel and at its mirror, followed by a residual feedforward. Repeated for
/// `layers` layers with the same weights.
FeatureMap symmetric_window_attention(const FeatureMap& Fg, const FeatureMap& Fl, const std::vector<int>& mirror,
                                      int w, int layers, const FusionWeights& weights,
                                      AttentionStats* stats = nullptr);

/// 1 where F_l is valid and cos(F_c, F_l) >= theta, else 0.
MaskMap occlusion_mask(const FeatureMap& Fc, const FeatureMap& Fl, double theta);

/// F_m = M_o F_l + mirror(M_o F_l) (1 - M_v M_o).
FeatureMap symmetric_completion(const FeatureMap& Fl, const MaskMap& Mv, const MaskMap& Mo,
                                const std::vector<int>& mirror);

/// F_f = F_c + Wc [F_c; F_m] on valid texels.
FeatureMap fuse_conv(const FeatureMap& Fc, const FeatureMap& Fm, const FusionWeights& weights);

struct FusionConfig {
    int window = 7;
    int scales = 4;
    int layers = 2;
    double theta_occ = 0.5;
    std::uint64_t seed = 7;
};

struct FusionScale {
    FeatureMap Fg, Fl, Fc, Fm, Ff;
    MaskMap Mv, Mo;
    std::vector<int> mirror;
};

/// Runs the multi-scale stack from global features, local features and the
/// finest-scale visibility mask.
std::vector<FusionScale> run_fusion(const FeatureMap& Fg, const FeatureMap& Fl, const MaskMap& Mv,
                                    const UvAtlas& atlas, const FusionConfig& config);

/// Lifts an image (H x W x c) to C feature channels with a fixed seeded map.
Image lift_features(const Image& img, int C, std::uint64_t seed);

/// Mirror image of a feature map through a mirror map; texels without a
/// mirror become zero.
FeatureMap mirror_features(const FeatureMap& F, const std::vector<int>& mirror);

} // namespace uvsplat
