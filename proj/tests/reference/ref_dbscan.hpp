#pragma once
// Quadratic DBSCAN with breadth-first expansion in ascending neighbor order.

#include <deque>
#include <vector>

#include "ref_geometry.hpp"

namespace ref {

inline std::vector<int> dbscan(const std::vector<owd::Vec3>& pts, double eps, std::size_t min_pts)
{
    const int unvisited = -2, noise = -1;
    std::vector<int> label(pts.size(), unvisited);
    auto region = [&](std::size_t i) {
        std::vector<std::size_t> r;
        for (std::size_t j = 0; j < pts.size(); ++j)
            if (dist(pts[i], pts[j]) <= eps)
                r.push_back(j);
        return r;
    };
    int cluster = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        if (label[i] != unvisited)
            continue;
        const auto n = region(i);
        if (n.size() < min_pts) {
            label[i] = noise;
            continue;
        }
        label[i] = cluster;
        std::deque<std::size_t> queue(n.begin(), n.end());
        while (!queue.empty()) {
            const std::size_t q = queue.front();
            queue.pop_front();
            if (label[q] == noise)
                label[q] = cluster; // border point
            if (label[q] != unvisited)
                continue;
            label[q] = cluster;
            const auto m = region(q);
            if (m.size() >= min_pts)
                queue.insert(queue.end(), m.begin(), m.end());
        }
        ++cluster;
    }
    return label;
}

} // namespace ref
