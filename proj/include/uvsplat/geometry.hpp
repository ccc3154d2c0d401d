#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "uvsplat/common.hpp"
#include "uvsplat/image.hpp"

namespace uvsplat {

enum class Region : std::uint8_t { face, hair, left_eye, right_eye, mouth_interior_cover };

inline constexpr std::array<Region, 5> kAllRegions = {Region::face, Region::hair, Region::left_eye,
                                                      Region::right_eye, Region::mouth_interior_cover};

std::string_view region_name(Region r);
std::optional<Region> parse_region(std::string_view name);

/// Template head geometry with blendshape bases, skinning rig, UV layout and
/// per-triangle semantic labels.
///
/// Basis matrices are (3V x n) with row 3*v + axis. Joint 0 is the root; the
/// pose basis is driven by the flattened (R_j - I) of joints 1..J-1, so its
/// column count is either 0 or 9*(J-1).
struct HeadMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> triangles;
    std::vector<std::array<Vec2, 3>> uv_corners;
    Eigen::MatrixXd shape_basis;
    Eigen::MatrixXd pose_basis;
    Eigen::MatrixXd expr_basis;
    Eigen::MatrixXd skin_weights;    // V x J
    Eigen::MatrixXd joint_regressor; // J x V
    std::vector<int> joint_parents;  // -1 for the root
    std::vector<Region> region_labels;
    bool mirror_symmetric = false;

    int num_vertices() const { return static_cast<int>(vertices.size()); }
    int num_triangles() const { return static_cast<int>(triangles.size()); }
    int num_joints() const { return static_cast<int>(joint_parents.size()); }

    /// Gives every missing rig component its neutral default: zero bases and
    /// a single root joint at the origin that owns every vertex.
    void fill_defaults();

    /// Throws ValidationError naming the first violated invariant. UV
    /// overlap is checked by build_uv_atlas, not here.
    void validate() const;
};

struct PoseParams {
    Eigen::VectorXd beta;
    Eigen::VectorXd theta; // axis-angle, 3 per joint
    Eigen::VectorXd psi;

    static PoseParams zeros(const HeadMesh& mesh);
};

/// Rodrigues rotation of an axis-angle vector. Returns identity exactly for
/// a zero vector.
Mat3 axis_angle_to_matrix(const Vec3& aa);

/// Blendshapes followed by linear blend skinning.
std::vector<Vec3> deform(const HeadMesh& mesh, const PoseParams& params);

/// Orthonormal (T, B, N) frame stored column-wise.
struct TexelFrames {
    std::vector<Mat3> frame;     // per texel (or per triangle, see triangle_frames)
    std::vector<std::uint8_t> ok; // 0 where the 3D triangle is degenerate
};

/// Texel-to-surface correspondence at K x K.
///
/// Texel t = y*K + x has its center at uv = ((x+0.5)/K, (y+0.5)/K).
struct UvAtlas {
    int K = 0;
    std::vector<int> tri_index;     // -1 on invalid texels
    std::vector<Vec3> bary;
    std::vector<std::uint8_t> valid;
    std::vector<int> mirror;         // -1 when unmapped
    std::vector<double> rel_scale;   // 0 on invalid texels
    std::map<Region, std::vector<std::uint8_t>> region_masks;
    bool mirror_symmetric = false;

    // Copies of the mesh data needed to evaluate maps against new vertices.
    std::vector<std::array<int, 3>> triangles;
    std::vector<std::array<Vec2, 3>> uv_corners;
    std::vector<Vec2> vertex_uvs;      // distinct UV corners, first-seen order
    TexelFrames canonical_tri_frames;  // per triangle, from template vertices

    int texel_count() const { return K * K; }
    int valid_count() const;
    Vec2 texel_center(int t) const { return {((t % K) + 0.5) / K, ((t / K) + 0.5) / K}; }
    /// Texel containing uv, clamped into the grid.
    int texel_at(const Vec2& uv) const;
};

UvAtlas build_uv_atlas(const HeadMesh& mesh, int K);

/// K x K x 3; zero on invalid texels.
Image position_map(const UvAtlas& atlas, const std::vector<Vec3>& verts);

/// Per-triangle frames: N is the unit normal of the winding, T the unit
/// projection of dP/du onto the triangle plane, B = N x T. Degenerate
/// triangles (area < 1e-12) get identity and ok = 0.
TexelFrames triangle_frames(const std::vector<std::array<int, 3>>& triangles,
                            const std::vector<std::array<Vec2, 3>>& uv_corners,
                            const std::vector<Vec3>& verts);

/// Per-texel frames; identity with ok = 0 on invalid texels.
TexelFrames tangent_frames(const UvAtlas& atlas, const std::vector<Vec3>& verts);

const std::vector<std::uint8_t>& region_mask(const UvAtlas& atlas, Region region);
const std::vector<std::uint8_t>& region_mask(const UvAtlas& atlas, std::string_view name);

double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c);
double triangle_area(const Vec2& a, const Vec2& b, const Vec2& c);

} // namespace uvsplat
