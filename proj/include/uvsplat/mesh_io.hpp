#pragma once

#include <string>

#include "uvsplat/geometry.hpp"

namespace uvsplat {

/// Loads `<stem>.obj` plus optional sidecars next to it:
///
///   <stem>.shape.atl  (V x 3 x n_beta)   <stem>.pose.atl  (V x 3 x n_pose)
///   <stem>.expr.atl   (V x 3 x n_psi)    <stem>.weights.atl (V x J)
///   <stem>.regressor.atl (J x V)         <stem>.regions.txt ("triangle tag" lines)
///   <stem>.manifest   (key = value; joint_parents, mirror_symmetric, counts)
///
/// Missing sidecars give zero bases and single-joint rigid skinning.
HeadMesh load_mesh(const std::string& obj_path);

/// Writes the OBJ and every sidecar. Returns the stem used.
void save_mesh(const HeadMesh& mesh, const std::string& obj_path);

} // namespace uvsplat
