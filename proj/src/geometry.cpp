#include "owd/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace owd {

CameraModel::CameraModel(const Mat3& intrinsics, const Mat3& rotation, const Vec3& translation,
                         int width, int height)
    : intrinsics_(intrinsics), rotation_(rotation), translation_(translation), width_(width),
      height_(height)
{
    if (width < 1 || height < 1)
        throw InvariantError("camera: image dimensions must be positive");
    if (!intrinsics.allFinite() || !rotation.allFinite() || !translation.allFinite())
        throw InvariantError("camera: non-finite parameter");
    if (!(intrinsics(0, 0) > 0.0) || !(intrinsics(1, 1) > 0.0))
        throw InvariantError("camera: intrinsics fx and fy must be positive");
    if (intrinsics(1, 0) != 0.0 || intrinsics(2, 0) != 0.0 || intrinsics(2, 1) != 0.0 ||
        intrinsics(2, 2) != 1.0)
        throw InvariantError("camera: intrinsics must be upper triangular with K[2][2] = 1");
    const Mat3 gram = rotation * rotation.transpose();
    if ((gram - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-9)
        throw InvariantError("camera: rotation is not orthonormal");
    if (std::abs(rotation.determinant() - 1.0) > 1e-9)
        throw InvariantError("camera: rotation determinant must be +1");
}

CameraModel CameraModel::identity(int width, int height)
{
    return CameraModel(Mat3::Identity(), Mat3::Identity(), Vec3::Zero(), width, height);
}

CameraModel CameraModel::from_pinhole(double fx, double fy, double cx, double cy,
                                      const Mat3& rotation, const Vec3& translation, int width,
                                      int height)
{
    Mat3 k = Mat3::Identity();
    k(0, 0) = fx;
    k(1, 1) = fy;
    k(0, 2) = cx;
    k(1, 2) = cy;
    return CameraModel(k, rotation, translation, width, height);
}

CameraModel CameraModel::look_at(double fx, double fy, double cx, double cy, const Vec3& eye,
                                 const Vec3& target, const Vec3& up, int width, int height)
{
    const Vec3 forward = (target - eye).normalized();
    const Vec3 right = forward.cross(up).normalized();
    const Vec3 down = forward.cross(right);
    Mat3 r;
    r.row(0) = right.transpose();
    r.row(1) = down.transpose();
    r.row(2) = forward.transpose();
    return from_pinhole(fx, fy, cx, cy, r, -(r * eye), width, height);
}

Vec3 CameraModel::back_project(double u, double v, double depth) const
{
    // K is upper triangular: solve for normalized coordinates directly.
    const double fx = intrinsics_(0, 0), skew = intrinsics_(0, 1), cx = intrinsics_(0, 2);
    const double fy = intrinsics_(1, 1), cy = intrinsics_(1, 2);
    const double yn = (v - cy) / fy;
    const double xn = (u - cx - skew * yn) / fx;
    return to_world(Vec3(xn * depth, yn * depth, depth));
}

Vec3 CameraModel::ray_direction(double u, double v) const
{
    const double yn = (v - intrinsics_(1, 2)) / intrinsics_(1, 1);
    const double xn = (u - intrinsics_(0, 2) - intrinsics_(0, 1) * yn) / intrinsics_(0, 0);
    return rotation_.transpose() * Vec3(xn, yn, 1.0);
}

void PointCloud::validate() const
{
    for (std::size_t i = 0; i < points.size(); ++i)
        if (!points[i].allFinite())
            throw InvariantError("point cloud: non-finite coordinate at point " + std::to_string(i));
}

Projection project_point(const Vec3& world, const CameraModel& cam)
{
    const Vec3 c = cam.to_camera(world);
    Projection p;
    p.depth = c.z();
    if (!(c.z() > kMinDepth))
        return p;
    const Mat3& k = cam.intrinsics();
    const double xn = c.x() / c.z();
    const double yn = c.y() / c.z();
    p.u = k(0, 0) * xn + k(0, 1) * yn + k(0, 2);
    p.v = k(1, 1) * yn + k(1, 2);
    p.visible = cam.in_image(p.u, p.v);
    return p;
}

std::vector<Projection> project_points(const PointCloud& cloud, const CameraModel& cam)
{
    std::vector<Projection> out;
    out.reserve(cloud.size());
    for (const Vec3& p : cloud.points)
        out.push_back(project_point(p, cam));
    return out;
}

PixelPointIndex::PixelPointIndex(int width, int height)
    : width_(width), height_(height),
      owner_(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), -1),
      depth_(owner_.size(), 0.0)
{
}

std::optional<std::uint32_t> PixelPointIndex::owner(Pixel p) const
{
    return owner_at(linear(p));
}

std::optional<std::uint32_t> PixelPointIndex::owner_at(std::size_t linear) const
{
    const std::int64_t o = owner_[linear];
    if (o < 0)
        return std::nullopt;
    return static_cast<std::uint32_t>(o);
}

std::optional<double> PixelPointIndex::depth(Pixel p) const
{
    const std::size_t i = linear(p);
    if (owner_[i] < 0)
        return std::nullopt;
    return depth_[i];
}

void PixelPointIndex::assign(Pixel p, std::uint32_t point, double depth)
{
    const std::size_t i = linear(p);
    owner_[i] = point;
    depth_[i] = depth;
}

std::size_t PixelPointIndex::assigned_count() const
{
    std::size_t n = 0;
    for (std::int64_t o : owner_)
        n += o >= 0 ? 1 : 0;
    return n;
}

PixelPointIndex build_pixel_point_index(const PointCloud& cloud, const CameraModel& cam,
                                        double search_radius_px)
{
    PixelPointIndex index(cam.width(), cam.height());
    std::vector<double> best_d2(index.pixel_count(), 0.0);
    const double r = search_radius_px;
    const double r2 = r * r;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Projection pr = project_point(cloud.points[i], cam);
        if (!pr.visible)
            continue;
        const int x0 = std::max(0, static_cast<int>(std::ceil(pr.u - r)));
        const int x1 = std::min(cam.width() - 1, static_cast<int>(std::floor(pr.u + r)));
        const int y0 = std::max(0, static_cast<int>(std::ceil(pr.v - r)));
        const int y1 = std::min(cam.height() - 1, static_cast<int>(std::floor(pr.v + r)));
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                const double du = pr.u - x;
                const double dv = pr.v - y;
                const double d2 = du * du + dv * dv;
                if (d2 > r2)
                    continue;
                const Pixel px{x, y};
                const std::size_t li = index.linear(px);
                const auto cur = index.owner_at(li);
                // Points are visited in index order, so an equal (d2, depth) keeps the earlier one.
                if (cur && (best_d2[li] < d2 || (best_d2[li] == d2 && *index.depth(px) <= pr.depth)))
                    continue;
                best_d2[li] = d2;
                index.assign(px, static_cast<std::uint32_t>(i), pr.depth);
            }
        }
    }
    return index;
}

double distance_3d(const Vec3& a, const Vec3& b)
{
    const double dx = a.x() - b.x();
    const double dy = a.y() - b.y();
    const double dz = a.z() - b.z();
    return std::sqrt(dx * dx + dy * dy + dz * dz);
}

std::optional<double> pixel_distance_3d(Pixel a, Pixel b, const PixelPointIndex& index,
                                        const PointCloud& cloud)
{
    const auto oa = index.owner(a);
    const auto ob = index.owner(b);
    if (!oa || !ob)
        return std::nullopt;
    return distance_3d(cloud.points[*oa], cloud.points[*ob]);
}

} // namespace owd
