#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace uvsplat {

inline constexpr const char* kVersion = "0.3.1";

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;

// Input violates a documented invariant or precondition.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A file could not be parsed.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// An API was called without the state it depends on.
class ContractError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A computation produced a non-finite value.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Upper bound on worker threads used by parallel regions. 0 means
/// hardware concurrency.
void set_max_threads(int n);
int max_threads();

/// Runs fn(i) for i in [begin, end) over up to max_threads() workers.
/// Items are claimed dynamically, so fn must only write state owned by i.
void parallel_for(int begin, int end, const std::function<void(int)>& fn);

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

} // namespace uvsplat
