#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace owd {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Thrown when a type invariant is violated at construction or load time.
class InvariantError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Pinhole camera: world -> camera via x_c = R x_w + t, then pixel = K x_c / z.
///
/// Pixel (i, j) has its center at continuous coordinate (i, j), so an image of
/// width W covers u in [0, W). Construction validates fx, fy > 0, an upper
/// triangular K with unit last row, and an orthonormal R with det +1 (1e-9).
class CameraModel {
public:
    CameraModel() = default;
    CameraModel(const Mat3& intrinsics, const Mat3& rotation, const Vec3& translation, int width,
                int height);

    /// Camera with K = diag(1, 1, 1) and identity pose.
    static CameraModel identity(int width, int height);
    static CameraModel from_pinhole(double fx, double fy, double cx, double cy, const Mat3& rotation,
                                    const Vec3& translation, int width, int height);
    /// Pose looking from `eye` towards `target`, with world `up` mapped to -y in the image.
    static CameraModel look_at(double fx, double fy, double cx, double cy, const Vec3& eye,
                               const Vec3& target, const Vec3& up, int width, int height);

    const Mat3& intrinsics() const { return intrinsics_; }
    const Mat3& rotation() const { return rotation_; }
    const Vec3& translation() const { return translation_; }
    int width() const { return width_; }
    int height() const { return height_; }

    Vec3 to_camera(const Vec3& world) const { return rotation_ * world + translation_; }
    Vec3 to_world(const Vec3& camera) const { return rotation_.transpose() * (camera - translation_); }
    /// Camera center in world coordinates.
    Vec3 center() const { return -(rotation_.transpose() * translation_); }

    /// Inverse of projection: pixel (u, v) at camera-frame depth z back to world.
    Vec3 back_project(double u, double v, double depth) const;
    /// World-frame direction of the ray through pixel (u, v), not normalized.
    Vec3 ray_direction(double u, double v) const;

    bool in_image(double u, double v) const { return u >= 0.0 && v >= 0.0 && u < width_ && v < height_; }

    friend bool operator==(const CameraModel&, const CameraModel&) = default;

private:
    Mat3 intrinsics_ = Mat3::Identity();
    Mat3 rotation_ = Mat3::Identity();
    Vec3 translation_ = Vec3::Zero();
    int width_ = 1;
    int height_ = 1;
};

struct PointCloud {
    std::vector<Vec3> points;

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }

    /// Throws InvariantError on any non-finite coordinate.
    void validate() const;

    friend bool operator==(const PointCloud&, const PointCloud&) = default;
};

struct Projection {
    double u = 0.0;
    double v = 0.0;
    double depth = 0.0;
    bool visible = false;
};

/// Points with camera depth at or below this are culled.
inline constexpr double kMinDepth = 1e-9;
inline constexpr double kDefaultSearchRadiusPx = 1.5;

Projection project_point(const Vec3& world, const CameraModel& cam);
std::vector<Projection> project_points(const PointCloud& cloud, const CameraModel& cam);

struct Pixel {
    int x = 0;
    int y = 0;
    friend bool operator==(const Pixel&, const Pixel&) = default;
};

/// Per-pixel owning point and its camera depth; -1 marks an unassigned pixel.
class PixelPointIndex {
public:
    PixelPointIndex() = default;
    PixelPointIndex(int width, int height);

    int width() const { return width_; }
    int height() const { return height_; }
    std::size_t pixel_count() const { return owner_.size(); }
    std::size_t linear(Pixel p) const { return static_cast<std::size_t>(p.y) * width_ + p.x; }
    bool contains(Pixel p) const { return p.x >= 0 && p.y >= 0 && p.x < width_ && p.y < height_; }

    std::optional<std::uint32_t> owner(Pixel p) const;
    std::optional<double> depth(Pixel p) const;
    std::optional<std::uint32_t> owner_at(std::size_t linear) const;

    void assign(Pixel p, std::uint32_t point, double depth);

    std::size_t assigned_count() const;
    std::span<const std::int64_t> owners() const { return owner_; }

    friend bool operator==(const PixelPointIndex&, const PixelPointIndex&) = default;

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<std::int64_t> owner_;
    std::vector<double> depth_;
};

/// Assigns each pixel the visible point whose projection is nearest to the pixel
/// center within `search_radius_px` (closed disc). Ties: smaller depth, then
/// smaller point index.
PixelPointIndex build_pixel_point_index(const PointCloud& cloud, const CameraModel& cam,
                                        double search_radius_px = kDefaultSearchRadiusPx);

double distance_3d(const Vec3& a, const Vec3& b);

/// Distance between the points owning pixels a and b; nullopt when either is unassigned.
std::optional<double> pixel_distance_3d(Pixel a, Pixel b, const PixelPointIndex& index,
                                        const PointCloud& cloud);

} // namespace owd
