#include "owd/render.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "owd/records.hpp"

namespace owd {

namespace {

std::string fmt(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

struct Frame {
    double x0 = 0.0, y0 = 0.0, span = 1.0;
    double margin = 40.0, plot = 520.0;

    double sx(double x) const { return margin + (x - x0) / span * plot; }
    // SVG y grows downwards.
    double sy(double y) const { return margin + plot - (y - y0) / span * plot; }
};

void extend(Vec3& lo, Vec3& hi, const Vec3& p)
{
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
}

} // namespace

std::string render_top_down(const PointCloud& cloud, std::span<const Box3D> gts, std::span<const Box3D> preds,
                            const RenderOptions& options)
{
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 hi = -lo;
    for (const Vec3& p : cloud.points)
        extend(lo, hi, p);
    for (const auto* list : {&gts, &preds})
        for (const Box3D& b : *list) {
            extend(lo, hi, b.min_corner());
            extend(lo, hi, b.max_corner());
        }
    Frame f;
    f.margin = 40.0;
    f.plot = options.canvas - 2.0 * f.margin;
    if (std::isfinite(lo.x())) {
        const double span = std::max({hi.x() - lo.x(), hi.y() - lo.y(), 1e-6});
        f.x0 = lo.x() - 0.05 * span;
        f.y0 = lo.y() - 0.05 * span;
        f.span = 1.1 * span;
    }

    std::string svg;
    const std::string size = std::to_string(options.canvas);
    svg += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + size + "\" height=\"" + size +
           "\" viewBox=\"0 0 " + size + " " + size + "\">\n";
    svg += "<rect x=\"0\" y=\"0\" width=\"" + size + "\" height=\"" + size + "\" fill=\"white\"/>\n";

    // Axes with end ticks labelled in meters.
    const double left = f.margin, bottom = f.margin + f.plot, right = f.margin + f.plot, top = f.margin;
    svg += "<g id=\"axes\" stroke=\"black\" stroke-width=\"1\">\n";
    svg += "<line x1=\"" + fmt(left) + "\" y1=\"" + fmt(bottom) + "\" x2=\"" + fmt(right) + "\" y2=\"" +
           fmt(bottom) + "\"/>\n";
    svg += "<line x1=\"" + fmt(left) + "\" y1=\"" + fmt(bottom) + "\" x2=\"" + fmt(left) + "\" y2=\"" + fmt(top) +
           "\"/>\n";
    svg += "</g>\n";
    svg += "<g id=\"axis-labels\" font-family=\"monospace\" font-size=\"11\">\n";
    svg += "<text x=\"" + fmt(left) + "\" y=\"" + fmt(bottom + 16) + "\">" + fmt(f.x0) + "</text>\n";
    svg += "<text x=\"" + fmt(right - 30) + "\" y=\"" + fmt(bottom + 16) + "\">" + fmt(f.x0 + f.span) + "</text>\n";
    svg += "<text x=\"" + fmt(right + 4) + "\" y=\"" + fmt(bottom + 4) + "\">x</text>\n";
    svg += "<text x=\"2\" y=\"" + fmt(bottom) + "\">" + fmt(f.y0) + "</text>\n";
    svg += "<text x=\"2\" y=\"" + fmt(top + 10) + "\">" + fmt(f.y0 + f.span) + "</text>\n";
    svg += "<text x=\"" + fmt(left - 4) + "\" y=\"" + fmt(top - 6) + "\">y</text>\n";
    svg += "</g>\n";

    svg += "<g id=\"points\" fill=\"#888888\">\n";
    const std::size_t stride =
        cloud.size() > options.max_points && options.max_points > 0 ? (cloud.size() + options.max_points - 1) / options.max_points : 1;
    for (std::size_t i = 0; i < cloud.size(); i += stride)
        svg += "<circle cx=\"" + fmt(f.sx(cloud.points[i].x())) + "\" cy=\"" + fmt(f.sy(cloud.points[i].y())) +
               "\" r=\"0.8\"/>\n";
    svg += "</g>\n";

    auto rect = [&](const Box3D& b, const char* cls, const char* color) {
        const Vec3 a = b.min_corner(), c = b.max_corner();
        return "<rect class=\"" + std::string(cls) + "\" x=\"" + fmt(f.sx(a.x())) + "\" y=\"" + fmt(f.sy(c.y())) +
               "\" width=\"" + fmt(f.sx(c.x()) - f.sx(a.x())) + "\" height=\"" + fmt(f.sy(a.y()) - f.sy(c.y())) +
               "\" fill=\"none\" stroke=\"" + color + "\" stroke-width=\"1.5\"/>\n";
    };
    svg += "<g id=\"gt\">\n";
    for (const Box3D& b : gts)
        svg += rect(b, "gt", "#1a9850");
    svg += "</g>\n<g id=\"pred\">\n";
    for (const Box3D& b : preds) {
        svg += rect(b, "pred", "#d73027");
        svg += "<text x=\"" + fmt(f.sx(b.min_corner().x()) + 2) + "\" y=\"" + fmt(f.sy(b.max_corner().y()) + 11) +
               "\" font-family=\"monospace\" font-size=\"10\" fill=\"#d73027\">" + fmt(b.score) + "</text>\n";
    }
    svg += "</g>\n";

    svg += "<g id=\"legend\" font-family=\"monospace\" font-size=\"12\">\n";
    svg += "<rect x=\"" + fmt(right - 70) + "\" y=\"8\" width=\"12\" height=\"8\" fill=\"none\" stroke=\"#1a9850\"/>\n";
    svg += "<text x=\"" + fmt(right - 54) + "\" y=\"16\">gt</text>\n";
    svg += "<rect x=\"" + fmt(right - 30) + "\" y=\"8\" width=\"12\" height=\"8\" fill=\"none\" stroke=\"#d73027\"/>\n";
    svg += "<text x=\"" + fmt(right - 14) + "\" y=\"16\">pred</text>\n";
    svg += "</g>\n</svg>\n";
    return svg;
}

void write_render(const std::filesystem::path& path, const PointCloud& cloud, std::span<const Box3D> gts,
                  std::span<const Box3D> preds, const RenderOptions& options)
{
    write_file(path, render_top_down(cloud, gts, preds, options));
}

} // namespace owd
