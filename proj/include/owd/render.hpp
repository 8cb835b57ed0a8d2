#pragma once

#include <filesystem>
#include <span>
#include <string>

#include "owd/boxes.hpp"
#include "owd/geometry.hpp"

namespace owd {

struct RenderOptions {
    int canvas = 600;          ///< square plot size in SVG units, axes included
    std::size_t max_points = 20000; ///< points beyond this are subsampled with a fixed stride
};

/// Top-down (x-y) orthographic SVG of a point cloud, ground-truth boxes and
/// scored predictions. Elements are emitted in input order, so equal inputs
/// give byte-identical files.
std::string render_top_down(const PointCloud& cloud, std::span<const Box3D> gts, std::span<const Box3D> preds,
                            const RenderOptions& options = {});

void write_render(const std::filesystem::path& path, const PointCloud& cloud, std::span<const Box3D> gts,
                  std::span<const Box3D> preds, const RenderOptions& options = {});

} // namespace owd
