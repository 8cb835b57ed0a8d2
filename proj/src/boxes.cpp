#include "owd/boxes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace owd {

void Box2D::validate() const
{
    if (!std::isfinite(x_min) || !std::isfinite(y_min) || !std::isfinite(x_max) || !std::isfinite(y_max))
        throw InvariantError("box2d: non-finite coordinate");
    if (x_min > x_max || y_min > y_max)
        throw InvariantError("box2d: min corner exceeds max corner");
    if (!(score >= 0.0 && score <= 1.0))
        throw InvariantError("box2d: score outside [0,1]");
}

bool Box3D::contains(const Vec3& p) const
{
    const Vec3 lo = min_corner();
    const Vec3 hi = max_corner();
    return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
}

void Box3D::validate() const
{
    if (!center.allFinite() || !size.allFinite() || !std::isfinite(score))
        throw InvariantError("box3d: non-finite field");
    if ((size.array() <= 0.0).any())
        throw InvariantError("box3d: sizes must be strictly positive");
    if (!(score >= 0.0 && score <= 1.0))
        throw InvariantError("box3d: score outside [0,1]");
}

Box3D Box3D::from_corners(const Vec3& lo, const Vec3& hi, double score)
{
    Box3D b;
    b.center = 0.5 * (lo + hi);
    b.size = hi - lo;
    b.score = score;
    return b;
}

double iou_2d(const Box2D& a, const Box2D& b)
{
    const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
    const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
    const double inter = (iw > 0.0 && ih > 0.0) ? iw * ih : 0.0;
    const double uni = a.area() + b.area() - inter;
    if (uni <= 0.0) {
        // Both boxes degenerate.
        const bool same = a.x_min == b.x_min && a.y_min == b.y_min && a.x_max == b.x_max && a.y_max == b.y_max;
        return same ? 1.0 : 0.0;
    }
    return std::clamp(inter / uni, 0.0, 1.0);
}

double iou_3d(const Box3D& a, const Box3D& b)
{
    const Vec3 alo = a.min_corner(), ahi = a.max_corner();
    const Vec3 blo = b.min_corner(), bhi = b.max_corner();
    double inter = 1.0;
    for (int k = 0; k < 3; ++k) {
        const double overlap = std::min(ahi[k], bhi[k]) - std::max(alo[k], blo[k]);
        if (overlap <= 0.0)
            return 0.0;
        inter *= overlap;
    }
    if (a.center == b.center && a.size == b.size)
        return 1.0;
    const double uni = a.volume() + b.volume() - inter;
    return std::clamp(inter / uni, 0.0, 1.0);
}

namespace {

template <typename Box, typename IoU>
std::vector<std::size_t> greedy_nms(std::span<const Box> boxes, double threshold, IoU iou)
{
    std::vector<std::size_t> order(boxes.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t l, std::size_t r) { return boxes[l].score > boxes[r].score; });
    std::vector<std::size_t> kept;
    for (std::size_t i : order) {
        const bool keep = std::all_of(kept.begin(), kept.end(),
                                      [&](std::size_t k) { return iou(boxes[i], boxes[k]) < threshold; });
        if (keep)
            kept.push_back(i);
    }
    return kept;
}

} // namespace

std::vector<std::size_t> nms_indices(std::span<const Box2D> boxes, double iou_threshold)
{
    return greedy_nms(boxes, iou_threshold, iou_2d);
}

std::vector<std::size_t> nms_indices(std::span<const Box3D> boxes, double iou_threshold)
{
    return greedy_nms(boxes, iou_threshold, iou_3d);
}

std::vector<std::size_t> points_in_box_2d(const PointCloud& cloud, const CameraModel& cam,
                                          const Box2D& box)
{
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Projection p = project_point(cloud.points[i], cam);
        if (p.visible && box.contains(p.u, p.v))
            out.push_back(i);
    }
    return out;
}

} // namespace owd
