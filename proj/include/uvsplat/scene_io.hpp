#pragma once

#include <map>
#include <string>
#include <vector>

#include "uvsplat/fit.hpp"
#include "uvsplat/gsmap.hpp"
#include "uvsplat/splat.hpp"

namespace uvsplat {

/// K x K x 17 ATL tensor: the 14 raw channels followed by the shape offset.
void save_maps(const std::string& path, const AttributeMaps& maps);
AttributeMaps load_maps(const std::string& path);

/// One camera per line: `fx fy cx cy width height r00 .. r22 t0 t1 t2`.
void save_cameras(const std::string& path, const std::vector<Camera>& cams);
std::vector<Camera> load_cameras(const std::string& path);

/// Comma-separated rows of beta, theta, psi values in that order. A row may
/// be shorter than the full parameter vector; missing entries are zero.
std::vector<PoseParams> load_pose_sequence(const std::string& path, const HeadMesh& mesh);
PoseParams parse_pose_row(const std::string& row, const HeadMesh& mesh);

/// Scene directory written by `synth` and read by `fit`.
void save_scene(const std::string& dir, const SyntheticScene& scene);
SyntheticScene load_scene(const std::string& dir);

/// `key = value` manifest with the library version prepended.
void write_manifest(const std::string& path, const std::map<std::string, std::string>& entries);
std::map<std::string, std::string> read_manifest(const std::string& path);

} // namespace uvsplat
