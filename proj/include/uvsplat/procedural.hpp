#pragma once

#include <cstdint>

#include "uvsplat/geometry.hpp"

namespace uvsplat {

struct ProceduralHeadOptions {
    int cells_u = 64; // must be even for a mirror-symmetric layout
    int cells_v = 48;
    // Outward displacement of the hair region (head units). Zero gives the
    // bare template; the synthetic scene uses a positive value for its
    // ground-truth surface.
    double hair_volume = 0.0;
};

/// Ellipsoidal cranium with nose, jaw and eye-socket bulges on a
/// mirror-symmetric lat-long UV layout. Three joints (root at the origin,
/// neck, jaw), three shape components and two expression components
/// (0: jaw open, 1: smile), both with compact support.
HeadMesh make_procedural_head(const ProceduralHeadOptions& opts = {});

/// Angular coordinates (azimuth, polar from the crown, both radians) of a UV
/// point on the procedural layout, or nullopt outside the head island.
std::optional<Vec2> procedural_angles(const Vec2& uv, const ProceduralHeadOptions& opts = {});

/// Expression-0 displacement weight; zero outside the jaw region.
double procedural_jaw_weight(double azimuth, double polar);

/// Ground-truth albedo of the procedural head at a UV point.
Vec3 procedural_albedo(const Vec2& uv, Region region, std::uint64_t seed, const ProceduralHeadOptions& opts = {});

} // namespace uvsplat
