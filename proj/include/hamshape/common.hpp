#pragma once

#include <Eigen/Core>
#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace hamshape {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

/// n x 3 row-major point array. Flattened storage is point-major then coordinate,
/// which is the stacking order used for every 3n-vector in the library.
using Points = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

using Triangle = std::array<int, 3>;

inline Eigen::Map<VecX> flat(Points& p) { return {p.data(), p.size()}; }
inline Eigen::Map<const VecX> flat(const Points& p) { return {p.data(), p.size()}; }

inline constexpr double kPi = 3.14159265358979323846;

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

class UnsupportedInput : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    ParseError(const std::string& path, std::size_t line, const std::string& what)
        : Error(path + ":" + std::to_string(line) + ": " + what), path_(path), line_(line)
    {
    }
    const std::string& path() const noexcept { return path_; }
    std::size_t line() const noexcept { return line_; }

private:
    std::string path_;
    std::size_t line_;
};

class IntegrationDiverged : public Error {
public:
    IntegrationDiverged(int step, const std::string& what)
        : Error("integration diverged at step " + std::to_string(step) + ": " + what), step_(step)
    {
    }
    int step() const noexcept { return step_; }

private:
    int step_;
};

/// Raised for command-line misuse (missing files, bad flags). Maps to exit code 2.
class UsageError : public Error {
public:
    using Error::Error;
};

inline Mat3 skew(const Vec3& w)
{
    Mat3 m;
    m << 0.0, -w.z(), w.y(), w.z(), 0.0, -w.x(), -w.y(), w.x(), 0.0;
    return m;
}

/// Rodrigues formula for exp([w]x).
inline Mat3 so3_exp(const Vec3& w)
{
    const double theta = w.norm();
    const Mat3 k = skew(w);
    if (theta < 1e-8) {
        return Mat3::Identity() + k + 0.5 * k * k;
    }
    return Mat3::Identity() + (std::sin(theta) / theta) * k
        + ((1.0 - std::cos(theta)) / (theta * theta)) * k * k;
}

inline bool all_finite(const Points& p) { return p.allFinite(); }

} // namespace hamshape
