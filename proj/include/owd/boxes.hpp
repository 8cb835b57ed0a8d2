#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "owd/geometry.hpp"

namespace owd {

/// Axis-aligned image box in continuous pixel coordinates.
struct Box2D {
    double x_min = 0.0;
    double y_min = 0.0;
    double x_max = 0.0;
    double y_max = 0.0;
    double score = 0.0;

    double area() const { return (x_max - x_min) * (y_max - y_min); }
    bool contains(double u, double v) const { return u >= x_min && u <= x_max && v >= y_min && v <= y_max; }
    void validate() const;

    friend bool operator==(const Box2D&, const Box2D&) = default;
};

/// Axis-aligned world box. Yaw is not modelled.
struct Box3D {
    Vec3 center = Vec3::Zero();
    Vec3 size = Vec3::Ones();
    double score = 0.0;

    Vec3 min_corner() const { return center - 0.5 * size; }
    Vec3 max_corner() const { return center + 0.5 * size; }
    double volume() const { return size.x() * size.y() * size.z(); }
    /// Closed containment.
    bool contains(const Vec3& p) const;
    void validate() const;

    static Box3D from_corners(const Vec3& lo, const Vec3& hi, double score = 0.0);

    friend bool operator==(const Box3D&, const Box3D&) = default;
};

double iou_2d(const Box2D& a, const Box2D& b);
double iou_3d(const Box3D& a, const Box3D& b);

/// Greedy NMS. Boxes are visited by descending score (ties: lower input index);
/// a box is kept iff its IoU with every kept box is below `iou_threshold`.
/// Returns input indices in kept order.
std::vector<std::size_t> nms_indices(std::span<const Box2D> boxes, double iou_threshold);
std::vector<std::size_t> nms_indices(std::span<const Box3D> boxes, double iou_threshold);

template <typename Box>
std::vector<Box> nms(std::span<const Box> boxes, double iou_threshold)
{
    std::vector<Box> out;
    for (std::size_t i : nms_indices(boxes, iou_threshold))
        out.push_back(boxes[i]);
    return out;
}

/// Indices of visible points whose projection lies inside the closed box.
std::vector<std::size_t> points_in_box_2d(const PointCloud& cloud, const CameraModel& cam,
                                          const Box2D& box);

} // namespace owd
