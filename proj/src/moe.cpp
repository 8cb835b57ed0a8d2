#include "owd/moe.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "owd/random.hpp"

namespace owd::moe {

void VoxelTensor::validate() const
{
    if (channels < 1 || nx < 1 || ny < 1 || nz < 1)
        throw InvariantError("voxel tensor: dimensions must be >= 1");
    if (values.size() != static_cast<std::size_t>(channels) * spatial())
        throw InvariantError("voxel tensor: payload size mismatch");
    for (double v : values)
        if (!std::isfinite(v))
            throw InvariantError("voxel tensor: non-finite value");
}

Conv3d::Conv3d(int in_channels, int out_channels, int kernel_size)
    : in(in_channels), out(out_channels), kernel(kernel_size),
      weight(static_cast<std::size_t>(out_channels) * in_channels * kernel_size * kernel_size * kernel_size, 0.0),
      bias(out_channels, 0.0)
{
}

AttentionParams::AttentionParams(int c)
    : channels(c), wq(static_cast<std::size_t>(c) * c, 0.0), wk(wq.size(), 0.0), wv(wq.size(), 0.0)
{
}

RouterParams::RouterParams(int in_channels, int hidden)
    : conv(in_channels, hidden, 3), fc_weight(static_cast<std::size_t>(3) * hidden, 0.0), fc_bias(3, 0.0)
{
}

ExpertParams::ExpertParams(int in_channels, int hidden, int out_channels)
    : conv_in(in_channels, hidden, 1), conv_mid(hidden, hidden, 3), conv_out(hidden, out_channels, 1)
{
}

MoEBlock MoEBlock::create(int channels, int router_hidden, bool shared_unimodal_attention)
{
    if (channels < 1 || router_hidden < 1)
        throw InvariantError("moe block: channel counts must be positive");
    MoEBlock b;
    b.channels = channels;
    b.attn_p = AttentionParams(channels);
    b.attn_i = AttentionParams(channels);
    b.attn_m = AttentionParams(2 * channels);
    b.shared_unimodal_attention = shared_unimodal_attention;
    b.router = RouterParams(2 * channels, router_hidden);
    b.expert_p = ExpertParams(channels, channels, channels);
    b.expert_i = ExpertParams(channels, channels, channels);
    b.expert_m = ExpertParams(2 * channels, channels, channels);
    return b;
}

std::vector<ParamGroup> MoEBlock::parameter_groups()
{
    std::vector<ParamGroup> g;
    auto attention = [&](const std::string& prefix, AttentionParams& a) {
        g.push_back({prefix + ".wq", a.wq});
        g.push_back({prefix + ".wk", a.wk});
        g.push_back({prefix + ".wv", a.wv});
    };
    auto conv = [&](const std::string& prefix, Conv3d& c) {
        g.push_back({prefix + ".weight", c.weight});
        g.push_back({prefix + ".bias", c.bias});
    };
    auto expert = [&](const std::string& prefix, ExpertParams& e) {
        conv(prefix + ".conv_in", e.conv_in);
        conv(prefix + ".conv_mid", e.conv_mid);
        conv(prefix + ".conv_out", e.conv_out);
    };
    attention("attn_p", attn_p);
    if (!shared_unimodal_attention)
        attention("attn_i", attn_i);
    attention("attn_m", attn_m);
    conv("router.conv", router.conv);
    g.push_back({"router.fc_weight", router.fc_weight});
    g.push_back({"router.fc_bias", router.fc_bias});
    expert("expert_p", expert_p);
    expert("expert_i", expert_i);
    expert("expert_m", expert_m);
    return g;
}

void MoEBlock::init_uniform(std::uint64_t seed, double scale)
{
    SplitMix64 rng(seed);
    for (ParamGroup& g : parameter_groups())
        for (double& v : g.values)
            v = rng.uniform(-scale, scale);
}

void MoEBlock::fill(double value)
{
    for (ParamGroup& g : parameter_groups())
        std::fill(g.values.begin(), g.values.end(), value);
    if (shared_unimodal_attention) {
        std::fill(attn_i.wq.begin(), attn_i.wq.end(), value);
        std::fill(attn_i.wk.begin(), attn_i.wk.end(), value);
        std::fill(attn_i.wv.begin(), attn_i.wv.end(), value);
    }
}

VoxelTensor concat_modalities(const VoxelTensor& f_p, const VoxelTensor& f_i)
{
    if (!f_p.same_spatial(f_i))
        throw InvariantError("concat_modalities: spatial dimensions differ");
    VoxelTensor out(f_p.channels + f_i.channels, f_p.nx, f_p.ny, f_p.nz);
    std::copy(f_p.values.begin(), f_p.values.end(), out.values.begin());
    std::copy(f_i.values.begin(), f_i.values.end(), out.values.begin() + static_cast<std::ptrdiff_t>(f_p.values.size()));
    return out;
}

Vec3 GridSpec::voxel_center(int i, int j, int k) const
{
    return origin + voxel_size * Vec3(i + 0.5, j + 0.5, k + 0.5);
}

double bilinear_sample(const FloatRaster& raster, std::uint32_t channel, double u, double v)
{
    const auto x0 = static_cast<std::uint32_t>(std::floor(u));
    const auto y0 = static_cast<std::uint32_t>(std::floor(v));
    const std::uint32_t x1 = std::min(x0 + 1, raster.width - 1);
    const std::uint32_t y1 = std::min(y0 + 1, raster.height - 1);
    const double fx = u - x0;
    const double fy = v - y0;
    return (1 - fx) * (1 - fy) * raster.at(x0, y0, channel) + fx * (1 - fy) * raster.at(x1, y0, channel) +
           (1 - fx) * fy * raster.at(x0, y1, channel) + fx * fy * raster.at(x1, y1, channel);
}

VoxelTensor project_image_features(const FloatRaster& raster, const CameraModel& cam, const GridSpec& grid)
{
    if (raster.width != static_cast<std::uint32_t>(cam.width()) ||
        raster.height != static_cast<std::uint32_t>(cam.height()))
        throw InvariantError("project_image_features: raster and camera dimensions differ");
    VoxelTensor out(static_cast<int>(raster.channels), grid.nx, grid.ny, grid.nz);
    for (int i = 0; i < grid.nx; ++i)
        for (int j = 0; j < grid.ny; ++j)
            for (int k = 0; k < grid.nz; ++k) {
                const Projection p = project_point(grid.voxel_center(i, j, k), cam);
                if (!p.visible)
                    continue;
                for (std::uint32_t c = 0; c < raster.channels; ++c)
                    out.at(static_cast<int>(c), i, j, k) = bilinear_sample(raster, c, p.u, p.v);
            }
    return out;
}

namespace {

struct Range {
    int lo, hi; // output coordinates whose shifted input stays in bounds
};

Range valid_range(int n, int shift)
{
    return {std::max(0, -shift), std::min(n, n - shift)};
}

double dot(std::span<const double> a, std::span<const double> b)
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        s += a[i] * b[i];
    return s;
}

VoxelTensor relu(const VoxelTensor& x)
{
    VoxelTensor y = x;
    for (double& v : y.values)
        v = v > 0.0 ? v : 0.0;
    return y;
}

VoxelTensor relu_backward(const VoxelTensor& pre, const VoxelTensor& dout)
{
    VoxelTensor d = dout;
    for (std::size_t i = 0; i < d.values.size(); ++i)
        if (!(pre.values[i] > 0.0))
            d.values[i] = 0.0;
    return d;
}

void check_channels(const VoxelTensor& x, int expected, const char* what)
{
    if (x.channels != expected)
        throw InvariantError(std::string(what) + ": channel count mismatch");
}

} // namespace

VoxelTensor conv3d_forward(const VoxelTensor& x, const Conv3d& conv)
{
    check_channels(x, conv.in, "conv3d");
    VoxelTensor y(conv.out, x.nx, x.ny, x.nz);
    const int pad = conv.kernel / 2;
    const std::size_t n = x.spatial();
    for (int o = 0; o < conv.out; ++o)
        std::fill(y.values.begin() + static_cast<std::ptrdiff_t>(o * n),
                  y.values.begin() + static_cast<std::ptrdiff_t>((o + 1) * n), conv.bias[o]);
    for (int o = 0; o < conv.out; ++o)
        for (int i = 0; i < conv.in; ++i)
            for (int kx = 0; kx < conv.kernel; ++kx)
                for (int ky = 0; ky < conv.kernel; ++ky)
                    for (int kz = 0; kz < conv.kernel; ++kz) {
                        const double w = conv.weight[conv.widx(o, i, kx, ky, kz)];
                        const int sx = kx - pad, sy = ky - pad, sz = kz - pad;
                        const Range rx = valid_range(x.nx, sx), ry = valid_range(x.ny, sy), rz = valid_range(x.nz, sz);
                        for (int a = rx.lo; a < rx.hi; ++a)
                            for (int b = ry.lo; b < ry.hi; ++b) {
                                double* out = &y.values[y.index(o, a, b, 0)];
                                const double* in = &x.values[x.index(i, a + sx, b + sy, 0)];
                                for (int c = rz.lo; c < rz.hi; ++c)
                                    out[c] += w * in[c + sz];
                            }
                    }
    return y;
}

VoxelTensor conv3d_backward(const VoxelTensor& x, const Conv3d& conv, const VoxelTensor& dout, Conv3d& grad)
{
    VoxelTensor dx(conv.in, x.nx, x.ny, x.nz);
    const int pad = conv.kernel / 2;
    const std::size_t n = x.spatial();
    for (int o = 0; o < conv.out; ++o) {
        double s = 0.0;
        for (std::size_t k = 0; k < n; ++k)
            s += dout.values[o * n + k];
        grad.bias[o] += s;
    }
    for (int o = 0; o < conv.out; ++o)
        for (int i = 0; i < conv.in; ++i)
            for (int kx = 0; kx < conv.kernel; ++kx)
                for (int ky = 0; ky < conv.kernel; ++ky)
                    for (int kz = 0; kz < conv.kernel; ++kz) {
                        const std::size_t wi = conv.widx(o, i, kx, ky, kz);
                        const double w = conv.weight[wi];
                        const int sx = kx - pad, sy = ky - pad, sz = kz - pad;
                        const Range rx = valid_range(x.nx, sx), ry = valid_range(x.ny, sy), rz = valid_range(x.nz, sz);
                        double gw = 0.0;
                        for (int a = rx.lo; a < rx.hi; ++a)
                            for (int b = ry.lo; b < ry.hi; ++b) {
                                const double* g = &dout.values[dout.index(o, a, b, 0)];
                                const double* in = &x.values[x.index(i, a + sx, b + sy, 0)];
                                double* din = &dx.values[dx.index(i, a + sx, b + sy, 0)];
                                for (int c = rz.lo; c < rz.hi; ++c) {
                                    gw += g[c] * in[c + sz];
                                    din[c + sz] += w * g[c];
                                }
                            }
                        grad.weight[wi] += gw;
                    }
    return dx;
}

VoxelTensor self_attention(const VoxelTensor& f, const AttentionParams& params, AttentionCache* cache)
{
    check_channels(f, params.channels, "self_attention");
    const int c = f.channels;
    const std::size_t n = f.spatial();
    const double scale = 1.0 / std::sqrt(static_cast<double>(c));

    auto project = [&](const std::vector<double>& w) {
        std::vector<double> out(static_cast<std::size_t>(c) * n, 0.0);
        for (int o = 0; o < c; ++o)
            for (int i = 0; i < c; ++i) {
                const double wi = w[static_cast<std::size_t>(o) * c + i];
                for (std::size_t t = 0; t < n; ++t)
                    out[o * n + t] += wi * f.values[i * n + t];
            }
        return out;
    };
    std::vector<double> q = project(params.wq), k = project(params.wk), v = project(params.wv);

    std::vector<double> attn(n * n);
    for (std::size_t a = 0; a < n; ++a) {
        double row_max = -std::numeric_limits<double>::infinity();
        for (std::size_t b = 0; b < n; ++b) {
            double s = 0.0;
            for (int ch = 0; ch < c; ++ch)
                s += q[ch * n + a] * k[ch * n + b];
            attn[a * n + b] = s * scale;
            row_max = std::max(row_max, attn[a * n + b]);
        }
        double total = 0.0;
        for (std::size_t b = 0; b < n; ++b) {
            attn[a * n + b] = std::exp(attn[a * n + b] - row_max);
            total += attn[a * n + b];
        }
        for (std::size_t b = 0; b < n; ++b)
            attn[a * n + b] /= total;
    }

    VoxelTensor out(c, f.nx, f.ny, f.nz);
    for (int ch = 0; ch < c; ++ch)
        for (std::size_t a = 0; a < n; ++a) {
            double s = 0.0;
            for (std::size_t b = 0; b < n; ++b)
                s += attn[a * n + b] * v[ch * n + b];
            out.values[ch * n + a] = s;
        }
    if (cache) {
        cache->input = f;
        cache->q = std::move(q);
        cache->k = std::move(k);
        cache->v = std::move(v);
        cache->attn = std::move(attn);
    }
    return out;
}

VoxelTensor self_attention_backward(const AttentionCache& cache, const AttentionParams& params,
                                    const VoxelTensor& dout, AttentionParams& grad)
{
    const VoxelTensor& x = cache.input;
    const int c = x.channels;
    const std::size_t n = x.spatial();
    const double scale = 1.0 / std::sqrt(static_cast<double>(c));
    const auto& attn = cache.attn;

    // out[:,a] = sum_b attn[a][b] v[:,b]
    std::vector<double> dv(static_cast<std::size_t>(c) * n, 0.0);
    std::vector<double> dattn(n * n, 0.0);
    for (int ch = 0; ch < c; ++ch)
        for (std::size_t a = 0; a < n; ++a) {
            const double g = dout.values[ch * n + a];
            for (std::size_t b = 0; b < n; ++b) {
                dv[ch * n + b] += attn[a * n + b] * g;
                dattn[a * n + b] += g * cache.v[ch * n + b];
            }
        }
    // Row softmax Jacobian, then the 1/sqrt(C) scaling.
    std::vector<double> ds(n * n);
    for (std::size_t a = 0; a < n; ++a) {
        double inner = 0.0;
        for (std::size_t b = 0; b < n; ++b)
            inner += attn[a * n + b] * dattn[a * n + b];
        for (std::size_t b = 0; b < n; ++b)
            ds[a * n + b] = attn[a * n + b] * (dattn[a * n + b] - inner) * scale;
    }
    std::vector<double> dq(static_cast<std::size_t>(c) * n, 0.0), dk(dq.size(), 0.0);
    for (int ch = 0; ch < c; ++ch)
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t b = 0; b < n; ++b) {
                dq[ch * n + a] += ds[a * n + b] * cache.k[ch * n + b];
                dk[ch * n + b] += ds[a * n + b] * cache.q[ch * n + a];
            }

    VoxelTensor dx(c, x.nx, x.ny, x.nz);
    auto back = [&](const std::vector<double>& w, const std::vector<double>& dproj, std::vector<double>& gw) {
        for (int o = 0; o < c; ++o)
            for (int i = 0; i < c; ++i) {
                const std::size_t wi = static_cast<std::size_t>(o) * c + i;
                double s = 0.0;
                for (std::size_t t = 0; t < n; ++t) {
                    s += dproj[o * n + t] * x.values[i * n + t];
                    dx.values[i * n + t] += w[wi] * dproj[o * n + t];
                }
                gw[wi] += s;
            }
    };
    back(params.wq, dq, grad.wq);
    back(params.wk, dk, grad.wk);
    back(params.wv, dv, grad.wv);
    return dx;
}

std::array<double, 3> softmax3(const std::array<double, 3>& logits)
{
    const double m = std::max({logits[0], logits[1], logits[2]});
    std::array<double, 3> e{std::exp(logits[0] - m), std::exp(logits[1] - m), std::exp(logits[2] - m)};
    const double total = e[0] + e[1] + e[2];
    return {e[0] / total, e[1] / total, e[2] / total};
}

RouterGate route(const VoxelTensor& f_m, const RouterParams& params, RouterCache* cache)
{
    const VoxelTensor pre = conv3d_forward(f_m, params.conv);
    const int hidden = params.conv.out;
    const std::size_t n = f_m.spatial();
    std::vector<double> pooled(hidden, 0.0);
    for (int h = 0; h < hidden; ++h) {
        double s = 0.0;
        for (std::size_t t = 0; t < n; ++t)
            s += std::max(pre.values[h * n + t], 0.0);
        pooled[h] = s / static_cast<double>(n);
    }
    std::array<double, 3> logits{};
    for (int r = 0; r < 3; ++r) {
        double s = params.fc_bias[r];
        for (int h = 0; h < hidden; ++h)
            s += params.fc_weight[static_cast<std::size_t>(r) * hidden + h] * pooled[h];
        logits[r] = s;
    }
    RouterGate gate{softmax3(logits)};
    if (cache) {
        cache->input = f_m;
        cache->pre = pre;
        cache->pooled = pooled;
        cache->logits = logits;
        cache->gate = gate;
    }
    return gate;
}

VoxelTensor route_backward(const RouterCache& cache, const RouterParams& params, const std::array<double, 3>& dgate,
                           RouterParams& grad)
{
    const auto& p = cache.gate.p;
    const double inner = p[0] * dgate[0] + p[1] * dgate[1] + p[2] * dgate[2];
    std::array<double, 3> dlogit{};
    for (int r = 0; r < 3; ++r)
        dlogit[r] = p[r] * (dgate[r] - inner);

    const int hidden = params.conv.out;
    std::vector<double> dpooled(hidden, 0.0);
    for (int r = 0; r < 3; ++r) {
        grad.fc_bias[r] += dlogit[r];
        for (int h = 0; h < hidden; ++h) {
            const std::size_t wi = static_cast<std::size_t>(r) * hidden + h;
            grad.fc_weight[wi] += dlogit[r] * cache.pooled[h];
            dpooled[h] += params.fc_weight[wi] * dlogit[r];
        }
    }
    const std::size_t n = cache.input.spatial();
    VoxelTensor dpre(hidden, cache.input.nx, cache.input.ny, cache.input.nz);
    for (int h = 0; h < hidden; ++h)
        for (std::size_t t = 0; t < n; ++t)
            dpre.values[h * n + t] = cache.pre.values[h * n + t] > 0.0 ? dpooled[h] / static_cast<double>(n) : 0.0;
    return conv3d_backward(cache.input, params.conv, dpre, grad.conv);
}

VoxelTensor expert_forward(const VoxelTensor& x, const ExpertParams& params, ExpertCache* cache)
{
    VoxelTensor pre1 = conv3d_forward(x, params.conv_in);
    VoxelTensor act1 = relu(pre1);
    VoxelTensor pre2 = conv3d_forward(act1, params.conv_mid);
    VoxelTensor act2 = relu(pre2);
    VoxelTensor out = conv3d_forward(act2, params.conv_out);
    if (cache) {
        cache->input = x;
        cache->pre1 = std::move(pre1);
        cache->act1 = std::move(act1);
        cache->pre2 = std::move(pre2);
        cache->act2 = std::move(act2);
    }
    return out;
}

VoxelTensor expert_backward(const ExpertCache& cache, const ExpertParams& params, const VoxelTensor& dout,
                            ExpertParams& grad)
{
    const VoxelTensor d_act2 = conv3d_backward(cache.act2, params.conv_out, dout, grad.conv_out);
    const VoxelTensor d_act1 = conv3d_backward(cache.act1, params.conv_mid, relu_backward(cache.pre2, d_act2), grad.conv_mid);
    return conv3d_backward(cache.input, params.conv_in, relu_backward(cache.pre1, d_act1), grad.conv_in);
}

VoxelTensor fuse_outputs(const RouterGate& gate, const VoxelTensor& e_p, const VoxelTensor& e_i,
                         const VoxelTensor& e_m)
{
    if (!e_p.same_shape(e_i) || !e_p.same_shape(e_m))
        throw InvariantError("fuse: expert output dimensions differ");
    VoxelTensor out(e_p.channels, e_p.nx, e_p.ny, e_p.nz);
    for (std::size_t k = 0; k < out.values.size(); ++k)
        out.values[k] = gate.p[0] * e_p.values[k] + gate.p[1] * e_i.values[k] + gate.p[2] * e_m.values[k];
    return out;
}

VoxelTensor fuse(const RouterGate& gate, const VoxelTensor& f_p, const VoxelTensor& f_i, const VoxelTensor& f_m,
                 const ExpertParams& expert_p, const ExpertParams& expert_i, const ExpertParams& expert_m)
{
    return fuse_outputs(gate, expert_forward(f_p, expert_p), expert_forward(f_i, expert_i),
                        expert_forward(f_m, expert_m));
}

VoxelTensor moe_forward(const VoxelTensor& f_p, const VoxelTensor& f_i, const MoEBlock& block, MoECache* cache)
{
    check_channels(f_p, block.channels, "moe_forward (point features)");
    check_channels(f_i, block.channels, "moe_forward (image features)");
    MoECache local;
    MoECache& c = cache ? *cache : local;
    c.f_m = concat_modalities(f_p, f_i);
    const AttentionParams& attn_i = block.shared_unimodal_attention ? block.attn_p : block.attn_i;
    const VoxelTensor a_p = self_attention(f_p, block.attn_p, &c.attn_p);
    const VoxelTensor a_i = self_attention(f_i, attn_i, &c.attn_i);
    const VoxelTensor a_m = self_attention(c.f_m, block.attn_m, &c.attn_m);
    const RouterGate gate = route(a_m, block.router, &c.router);
    c.out_p = expert_forward(a_p, block.expert_p, &c.expert_p);
    c.out_i = expert_forward(a_i, block.expert_i, &c.expert_i);
    c.out_m = expert_forward(a_m, block.expert_m, &c.expert_m);
    return fuse_outputs(gate, c.out_p, c.out_i, c.out_m);
}

MoEGradients moe_backward(const MoECache& cache, const MoEBlock& block, const VoxelTensor& upstream)
{
    if (!upstream.same_shape(cache.out_p))
        throw InvariantError("moe_backward: upstream gradient shape mismatch");
    MoEGradients g;
    g.params = block;
    g.params.fill(0.0);

    const auto& gate = cache.router.gate.p;
    const std::array<double, 3> dgate{dot(upstream.values, cache.out_p.values), dot(upstream.values, cache.out_i.values),
                                      dot(upstream.values, cache.out_m.values)};
    auto scaled = [&](double s) {
        VoxelTensor t = upstream;
        for (double& v : t.values)
            v *= s;
        return t;
    };

    const VoxelTensor da_p = expert_backward(cache.expert_p, block.expert_p, scaled(gate[0]), g.params.expert_p);
    const VoxelTensor da_i = expert_backward(cache.expert_i, block.expert_i, scaled(gate[1]), g.params.expert_i);
    VoxelTensor da_m = expert_backward(cache.expert_m, block.expert_m, scaled(gate[2]), g.params.expert_m);
    const VoxelTensor da_m_router = route_backward(cache.router, block.router, dgate, g.params.router);
    for (std::size_t k = 0; k < da_m.values.size(); ++k)
        da_m.values[k] += da_m_router.values[k];

    g.d_fp = self_attention_backward(cache.attn_p, block.attn_p, da_p, g.params.attn_p);
    if (block.shared_unimodal_attention)
        g.d_fi = self_attention_backward(cache.attn_i, block.attn_p, da_i, g.params.attn_p);
    else
        g.d_fi = self_attention_backward(cache.attn_i, block.attn_i, da_i, g.params.attn_i);
    const VoxelTensor d_fm = self_attention_backward(cache.attn_m, block.attn_m, da_m, g.params.attn_m);
    const std::size_t split = g.d_fp.values.size();
    for (std::size_t k = 0; k < split; ++k)
        g.d_fp.values[k] += d_fm.values[k];
    for (std::size_t k = 0; k < g.d_fi.values.size(); ++k)
        g.d_fi.values[k] += d_fm.values[split + k];
    return g;
}

double relu_margin(const MoECache& cache)
{
    double m = std::numeric_limits<double>::infinity();
    auto scan = [&](const VoxelTensor& t) {
        for (double v : t.values)
            m = std::min(m, std::abs(v));
    };
    scan(cache.router.pre);
    for (const ExpertCache* e : {&cache.expert_p, &cache.expert_i, &cache.expert_m}) {
        scan(e->pre1);
        scan(e->pre2);
    }
    return m;
}

GradCheckResult grad_check(const std::function<double()>& loss, std::span<double> x,
                           std::span<const double> analytic, double step)
{
    if (x.size() != analytic.size())
        throw std::invalid_argument("grad_check: analytic gradient size mismatch");
    GradCheckResult r;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double saved = x[i];
        x[i] = saved + step;
        const double up = loss();
        x[i] = saved - step;
        const double down = loss();
        x[i] = saved;
        const double numeric = (up - down) / (2.0 * step);
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-12});
        const double err = std::abs(analytic[i] - numeric) / denom;
        if (err > r.max_rel_error) {
            r.max_rel_error = err;
            r.worst_index = i;
        }
    }
    return r;
}

std::vector<GroupCheck> check_moe_gradients(VoxelTensor f_p, VoxelTensor f_i, MoEBlock block,
                                            const VoxelTensor& upstream, double step)
{
    MoECache cache;
    moe_forward(f_p, f_i, block, &cache);
    MoEGradients grads = moe_backward(cache, block, upstream);
    auto loss = [&] { return dot(upstream.values, moe_forward(f_p, f_i, block).values); };

    std::vector<GroupCheck> out;
    auto params = block.parameter_groups();
    auto analytic = grads.params.parameter_groups();
    for (std::size_t k = 0; k < params.size(); ++k) {
        const auto r = grad_check(loss, params[k].values, analytic[k].values, step);
        out.push_back({params[k].name, r.max_rel_error, params[k].values.size()});
    }
    const auto rp = grad_check(loss, f_p.values, grads.d_fp.values, step);
    out.push_back({"input.f_p", rp.max_rel_error, f_p.values.size()});
    const auto ri = grad_check(loss, f_i.values, grads.d_fi.values, step);
    out.push_back({"input.f_i", ri.max_rel_error, f_i.values.size()});
    return out;
}

CheckInstance make_check_instance(std::uint64_t seed, int channels, int nx, int ny, int nz, double min_margin)
{
    CheckInstance inst;
    for (int attempt = 0; attempt < 64; ++attempt) {
        SplitMix64 rng(derive_seed(seed, static_cast<std::uint64_t>(attempt)));
        inst.f_p = VoxelTensor(channels, nx, ny, nz);
        inst.f_i = VoxelTensor(channels, nx, ny, nz);
        inst.upstream = VoxelTensor(channels, nx, ny, nz);
        for (double& v : inst.f_p.values)
            v = rng.uniform(-1.0, 1.0);
        for (double& v : inst.f_i.values)
            v = rng.uniform(-1.0, 1.0);
        for (double& v : inst.upstream.values)
            v = rng.uniform(-1.0, 1.0);
        inst.block = MoEBlock::create(channels);
        inst.block.init_uniform(rng.next(), 0.5);
        inst.redraws = attempt;
        MoECache cache;
        moe_forward(inst.f_p, inst.f_i, inst.block, &cache);
        if (relu_margin(cache) >= min_margin)
            return inst;
    }
    throw std::runtime_error("make_check_instance: no instance with a sufficient ReLU margin");
}

std::vector<double> train_objectness_demo(std::uint64_t seed, int channels, int grid, int epochs,
                                          double learning_rate)
{
    SplitMix64 rng(seed);
    VoxelTensor f_p(channels, grid, grid, grid), f_i(channels, grid, grid, grid);
    for (double& v : f_p.values)
        v = rng.uniform(-1.0, 1.0);
    for (double& v : f_i.values)
        v = rng.uniform(-1.0, 1.0);
    const std::size_t n = f_p.spatial();
    std::vector<double> target(n);
    for (std::size_t t = 0; t < n; ++t)
        target[t] = f_p.values[t] + f_i.values[t] > 0.0 ? 1.0 : 0.0;

    MoEBlock block = MoEBlock::create(channels);
    block.init_uniform(rng.next(), 0.1);
    std::vector<double> losses;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        MoECache cache;
        const VoxelTensor out = moe_forward(f_p, f_i, block, &cache);
        VoxelTensor upstream(out.channels, out.nx, out.ny, out.nz);
        double loss = 0.0;
        for (std::size_t t = 0; t < n; ++t) {
            const double z = out.values[t];
            // log(1 + e^z) - y z, written stably
            loss += std::max(z, 0.0) - z * target[t] + std::log1p(std::exp(-std::abs(z)));
            upstream.values[t] = (1.0 / (1.0 + std::exp(-z)) - target[t]) / static_cast<double>(n);
        }
        losses.push_back(loss / static_cast<double>(n));
        MoEGradients g = moe_backward(cache, block, upstream);
        auto params = block.parameter_groups();
        auto grads = g.params.parameter_groups();
        for (std::size_t k = 0; k < params.size(); ++k)
            for (std::size_t j = 0; j < params[k].values.size(); ++j)
                params[k].values[j] -= learning_rate * grads[k].values[j];
    }
    return losses;
}

} // namespace owd::moe
