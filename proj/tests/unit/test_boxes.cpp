#include <doctest.h>

#include <algorithm>

#include "owd/boxes.hpp"
#include "../reference/ref_boxes.hpp"
#include "../support/instances.hpp"

using namespace owd;

namespace {

Box3D cube(double x, double y, double z, double side = 1.0, double score = 0.5)
{
    Box3D b;
    b.center = {x, y, z};
    b.size = Vec3::Constant(side);
    b.score = score;
    return b;
}

Box2D random_box2d(SplitMix64& rng)
{
    const double x = rng.uniform(0, 50), y = rng.uniform(0, 50);
    return {x, y, x + rng.uniform(1, 20), y + rng.uniform(1, 20), static_cast<double>(rng.integer(0, 20)) / 20};
}

} // namespace

TEST_CASE("3D IoU: identity and offset unit cubes")
{
    SplitMix64 rng(1);
    for (int i = 0; i < 100; ++i) {
        const Box3D b = inst::random_box(rng);
        CHECK(iou_3d(b, b) == 1.0);
    }
    CHECK(iou_3d(cube(0, 0, 0), cube(0.5, 0, 0)) == doctest::Approx(1.0 / 3).epsilon(1e-15));
    CHECK(iou_3d(cube(0, 0, 0), cube(2, 0, 0)) == 0.0);
    CHECK(iou_3d(cube(0, 0, 0), cube(1, 0, 0)) == 0.0); // touching faces
}

TEST_CASE("IoU symmetry, bounds and agreement with the scalar oracle")
{
    SplitMix64 rng(2);
    for (int i = 0; i < 10000; ++i) {
        const Box3D a = inst::random_box(rng, 2.0), b = inst::random_box(rng, 2.0);
        const double v = iou_3d(a, b);
        CHECK(v == iou_3d(b, a));
        CHECK(v >= 0.0);
        CHECK(v < 1.0);
        CHECK(std::abs(v - ref::iou_3d(a, b)) < 1e-15);
        const Box2D p = random_box2d(rng), q = random_box2d(rng);
        CHECK(iou_2d(p, q) == iou_2d(q, p));
        CHECK(std::abs(iou_2d(p, q) - ref::iou_2d(p, q)) < 1e-15);
    }
}

TEST_CASE("3D IoU agrees with Monte-Carlo volume integration")
{
    SplitMix64 rng(3);
    int compared = 0;
    while (compared < 40) {
        const Box3D a = inst::random_box(rng, 1.0), b = inst::random_box(rng, 1.0);
        const double exact = iou_3d(a, b);
        if (exact < 0.02)
            continue;
        const auto [est, se] = ref::monte_carlo_iou_3d(a, b, 1000000, rng.next());
        CHECK(std::abs(est - exact) <= 3 * se + 1e-12);
        ++compared;
    }
}

TEST_CASE("2D IoU of degenerate boxes")
{
    const Box2D line{1, 1, 1, 5, 0};
    CHECK(iou_2d(line, line) == 1.0);
    CHECK(iou_2d(line, {1, 1, 1, 4, 0}) == 0.0);
    CHECK(iou_2d(line, {0, 0, 4, 4, 0}) == 0.0);
}

TEST_CASE("NMS basics")
{
    CHECK(nms_indices(std::span<const Box3D>{}, 0.5).empty());
    const std::vector<Box3D> one{cube(0, 0, 0)};
    CHECK(nms_indices(std::span<const Box3D>(one), 0.5) == std::vector<std::size_t>{0});
    const std::vector<Box3D> twins{cube(0, 0, 0, 1, 0.4), cube(0, 0, 0, 1, 0.9)};
    CHECK(nms_indices(std::span<const Box3D>(twins), 0.5) == std::vector<std::size_t>{1});
    // Equal scores keep the earlier input.
    const std::vector<Box3D> tied{cube(0, 0, 0, 1, 0.5), cube(0, 0, 0, 1, 0.5)};
    CHECK(nms_indices(std::span<const Box3D>(tied), 0.5) == std::vector<std::size_t>{0});
    const auto kept = nms(std::span<const Box3D>(twins), 0.5);
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].score == 0.9);
}

TEST_CASE("NMS matches the literal reference and its output properties")
{
    SplitMix64 rng(4);
    for (int trial = 0; trial < 200; ++trial) {
        const double t = rng.uniform(0.05, 0.95);
        std::vector<Box3D> b3;
        std::vector<Box2D> b2;
        for (int i = 0; i < 50; ++i) {
            Box3D b = inst::random_box(rng, 2.0);
            b.score = static_cast<double>(rng.integer(0, 10)) / 10;
            b3.push_back(b);
            b2.push_back(random_box2d(rng));
        }
        const auto k3 = nms_indices(std::span<const Box3D>(b3), t);
        const auto k2 = nms_indices(std::span<const Box2D>(b2), t);
        CHECK(k3 == ref::nms(b3, t, ref::iou_3d));
        CHECK(k2 == ref::nms(b2, t, ref::iou_2d));
        for (std::size_t i = 0; i < k3.size(); ++i) {
            for (std::size_t j = 0; j < i; ++j)
                CHECK(iou_3d(b3[k3[i]], b3[k3[j]]) < t);
            // Subsequence of the score-sorted input (ties by index).
            if (i > 0) {
                const auto& prev = b3[k3[i - 1]];
                const auto& cur = b3[k3[i]];
                CHECK((prev.score > cur.score || (prev.score == cur.score && k3[i - 1] < k3[i])));
            }
        }
    }
}

TEST_CASE("NMS kept sets are not nested across thresholds")
{
    // A and C sit inside B without touching: IoU(A,B) = 0.4, IoU(B,C) = 0.45.
    // At 0.35 A removes B and C survives; at 0.42 B survives and removes C.
    // Greedy NMS is therefore not monotone in the threshold as a set; only the
    // extreme thresholds behave predictably.
    const Box2D A{0.0, 0, 0.4, 1, 0.9};
    const Box2D B{0.0, 0, 1.0, 1, 0.8};
    const Box2D C{0.55, 0, 1.0, 1, 0.7};
    REQUIRE(iou_2d(A, B) == doctest::Approx(0.4));
    REQUIRE(iou_2d(B, C) == doctest::Approx(0.45));
    REQUIRE(iou_2d(A, C) == 0.0);
    const std::vector<Box2D> boxes{A, B, C};
    CHECK(nms_indices(std::span<const Box2D>(boxes), 0.35) == std::vector<std::size_t>{0, 2});
    CHECK(nms_indices(std::span<const Box2D>(boxes), 0.42) == std::vector<std::size_t>{0, 1});

    SplitMix64 rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<Box2D> r;
        for (int i = 0; i < 20; ++i)
            r.push_back(random_box2d(rng));
        CHECK(nms_indices(std::span<const Box2D>(r), 1.01).size() == r.size());
        CHECK(nms_indices(std::span<const Box2D>(r), 0.0).size() == 1);
    }
}

TEST_CASE("points inside a 2D box")
{
    const auto cam = CameraModel::from_pinhole(10, 10, 0, 0, Mat3::Identity(), Vec3::Zero(), 40, 40);
    PointCloud cloud;
    cloud.points = {{1, 1, 1}, {2, 2, 1}, {1, 2, 1}, {0, 0, -1}, {10, 10, 1}};
    const auto all = points_in_box_2d(cloud, cam, {0, 0, 40, 40, 0});
    CHECK(all == std::vector<std::size_t>{0, 1, 2}); // behind-camera and out-of-image points excluded
    const auto line = points_in_box_2d(cloud, cam, {20, 20, 20, 30, 0});
    CHECK(line == std::vector<std::size_t>{1});

    SplitMix64 rng(6);
    const auto rcam = inst::random_camera(rng, 64, 48);
    PointCloud rc;
    for (int i = 0; i < 2000; ++i)
        rc.points.push_back(rcam.back_project(rng.uniform(-5, 70), rng.uniform(-5, 55), rng.uniform(-1, 5)));
    for (int t = 0; t < 20; ++t) {
        const double x = rng.uniform(0, 60), y = rng.uniform(0, 40);
        const Box2D b{x, y, x + rng.uniform(0, 20), y + rng.uniform(0, 20), 0};
        std::vector<std::size_t> scan;
        for (std::size_t i = 0; i < rc.size(); ++i) {
            const auto p = project_point(rc.points[i], rcam);
            if (p.visible && p.u >= b.x_min && p.u <= b.x_max && p.v >= b.y_min && p.v <= b.y_max)
                scan.push_back(i);
        }
        CHECK(points_in_box_2d(rc, rcam, b) == scan);
    }
}

TEST_CASE("box validation")
{
    Box3D b = cube(0, 0, 0);
    CHECK_NOTHROW(b.validate());
    b.size.x() = 0;
    CHECK_THROWS_AS(b.validate(), InvariantError);
    b = cube(0, 0, 0, 1, 1.5);
    CHECK_THROWS_AS(b.validate(), InvariantError);
    CHECK_THROWS_AS((Box2D{2, 0, 1, 1, 0}.validate()), InvariantError);
    CHECK(cube(0, 0, 0).contains({0.5, 0.5, 0.5})); // closed faces
    CHECK_FALSE(cube(0, 0, 0).contains({0.5, 0.5, 0.51}));
}
