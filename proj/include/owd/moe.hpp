#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "owd/formats.hpp"
#include "owd/geometry.hpp"

namespace owd::moe {

/// Dense C x X x Y x Z grid, channel-major then x-major.
struct VoxelTensor {
    int channels = 1;
    int nx = 1, ny = 1, nz = 1;
    std::vector<double> values;

    VoxelTensor() = default;
    VoxelTensor(int c, int x, int y, int z, double fill = 0.0)
        : channels(c), nx(x), ny(y), nz(z), values(static_cast<std::size_t>(c) * x * y * z, fill)
    {
    }

    std::size_t spatial() const { return static_cast<std::size_t>(nx) * ny * nz; }
    std::size_t index(int c, int x, int y, int z) const
    {
        return ((static_cast<std::size_t>(c) * nx + x) * ny + y) * nz + z;
    }
    double& at(int c, int x, int y, int z) { return values[index(c, x, y, z)]; }
    double at(int c, int x, int y, int z) const { return values[index(c, x, y, z)]; }
    bool same_spatial(const VoxelTensor& o) const { return nx == o.nx && ny == o.ny && nz == o.nz; }
    bool same_shape(const VoxelTensor& o) const { return channels == o.channels && same_spatial(o); }

    /// Throws InvariantError when a dimension is < 1, the payload size is off, or a value is non-finite.
    void validate() const;

    friend bool operator==(const VoxelTensor&, const VoxelTensor&) = default;
};

/// Stride-1 3D convolution with zero padding kernel/2. Weights are laid out
/// [out][in][kx][ky][kz].
struct Conv3d {
    int in = 0, out = 0, kernel = 1;
    std::vector<double> weight;
    std::vector<double> bias;

    Conv3d() = default;
    Conv3d(int in_channels, int out_channels, int kernel_size);
    std::size_t widx(int o, int i, int kx, int ky, int kz) const
    {
        return (((static_cast<std::size_t>(o) * in + i) * kernel + kx) * kernel + ky) * kernel + kz;
    }
};

/// Single-head attention over spatial tokens, no positional encoding.
/// Projections are C x C, row-major [out][in].
struct AttentionParams {
    int channels = 0;
    std::vector<double> wq, wk, wv;

    AttentionParams() = default;
    explicit AttentionParams(int c);
};

/// conv3d (k=3) -> ReLU -> global average pool -> fully connected (3 outputs) -> softmax.
struct RouterParams {
    Conv3d conv;
    std::vector<double> fc_weight; ///< [3][hidden]
    std::vector<double> fc_bias;   ///< [3]

    RouterParams() = default;
    RouterParams(int in_channels, int hidden);
};

/// Gate over the point, image and multi-modal pathways.
struct RouterGate {
    std::array<double, 3> p{1.0 / 3, 1.0 / 3, 1.0 / 3};
};

/// conv k=1 -> ReLU -> conv k=3 -> ReLU -> conv k=1.
struct ExpertParams {
    Conv3d conv_in, conv_mid, conv_out;

    ExpertParams() = default;
    ExpertParams(int in_channels, int hidden, int out_channels);
};

struct ParamGroup {
    std::string name;
    std::span<double> values;
};

/// Parameters of the whole cross-modal block. With `shared_unimodal_attention`
/// the point and image pathways both use `attn_p` and `attn_i` is unused.
struct MoEBlock {
    int channels = 0;
    AttentionParams attn_p, attn_i, attn_m;
    bool shared_unimodal_attention = false;
    RouterParams router;
    ExpertParams expert_p, expert_i, expert_m;

    /// Point and image inputs have `channels`; the fused input has twice that.
    /// Every expert maps to `channels` outputs with hidden width `channels`.
    static MoEBlock create(int channels, int router_hidden = 16, bool shared_unimodal_attention = false);

    /// Deterministic uniform initialization in [-scale, scale].
    void init_uniform(std::uint64_t seed, double scale = 0.1);
    void fill(double value);

    std::vector<ParamGroup> parameter_groups();
};

VoxelTensor concat_modalities(const VoxelTensor& f_p, const VoxelTensor& f_i);

/// Axis-aligned voxel grid in world coordinates; voxel (i,j,k) has its center
/// at origin + (index + 0.5) * voxel_size.
struct GridSpec {
    Vec3 origin = Vec3::Zero();
    double voxel_size = 1.0;
    int nx = 1, ny = 1, nz = 1;

    Vec3 voxel_center(int i, int j, int k) const;
};

/// Bilinear sample at continuous pixel (u, v) with clamp-to-edge neighbors.
double bilinear_sample(const FloatRaster& raster, std::uint32_t channel, double u, double v);

/// Lifts a multichannel image raster into the voxel grid: each voxel center is
/// projected and, when visible, takes the bilinear sample; otherwise zero.
VoxelTensor project_image_features(const FloatRaster& raster, const CameraModel& cam, const GridSpec& grid);

VoxelTensor conv3d_forward(const VoxelTensor& x, const Conv3d& conv);
/// Accumulates weight/bias gradients into `grad`; returns the input gradient.
VoxelTensor conv3d_backward(const VoxelTensor& x, const Conv3d& conv, const VoxelTensor& dout, Conv3d& grad);

struct AttentionCache {
    VoxelTensor input;
    std::vector<double> q, k, v; ///< [C][N]
    std::vector<double> attn;    ///< [N][N], rows sum to 1
};

VoxelTensor self_attention(const VoxelTensor& f, const AttentionParams& params, AttentionCache* cache = nullptr);
VoxelTensor self_attention_backward(const AttentionCache& cache, const AttentionParams& params,
                                    const VoxelTensor& dout, AttentionParams& grad);

struct RouterCache {
    VoxelTensor input;
    VoxelTensor pre; ///< conv output before ReLU
    std::vector<double> pooled;
    std::array<double, 3> logits{};
    RouterGate gate;
};

std::array<double, 3> softmax3(const std::array<double, 3>& logits);
RouterGate route(const VoxelTensor& f_m, const RouterParams& params, RouterCache* cache = nullptr);
/// Backward from d(loss)/d(gate); returns the input gradient.
VoxelTensor route_backward(const RouterCache& cache, const RouterParams& params, const std::array<double, 3>& dgate,
                           RouterParams& grad);

struct ExpertCache {
    VoxelTensor input, pre1, act1, pre2, act2;
};

VoxelTensor expert_forward(const VoxelTensor& x, const ExpertParams& params, ExpertCache* cache = nullptr);
VoxelTensor expert_backward(const ExpertCache& cache, const ExpertParams& params, const VoxelTensor& dout,
                            ExpertParams& grad);

/// Gate-weighted sum of precomputed expert outputs.
VoxelTensor fuse_outputs(const RouterGate& gate, const VoxelTensor& e_p, const VoxelTensor& e_i,
                         const VoxelTensor& e_m);
/// Applies each expert to its pathway input, then the gate-weighted sum.
VoxelTensor fuse(const RouterGate& gate, const VoxelTensor& f_p, const VoxelTensor& f_i, const VoxelTensor& f_m,
                 const ExpertParams& expert_p, const ExpertParams& expert_i, const ExpertParams& expert_m);

struct MoECache {
    VoxelTensor f_m;
    AttentionCache attn_p, attn_i, attn_m;
    RouterCache router;
    ExpertCache expert_p, expert_i, expert_m;
    VoxelTensor out_p, out_i, out_m;
};

/// concat -> self-attention per pathway -> route on the fused pathway -> fuse.
VoxelTensor moe_forward(const VoxelTensor& f_p, const VoxelTensor& f_i, const MoEBlock& block,
                        MoECache* cache = nullptr);

struct MoEGradients {
    MoEBlock params; ///< same shapes as the block
    VoxelTensor d_fp, d_fi;
};

MoEGradients moe_backward(const MoECache& cache, const MoEBlock& block, const VoxelTensor& upstream);

/// Smallest |pre-activation| over every ReLU in the block; finite-difference
/// checks are only meaningful when this exceeds the step by a wide margin.
double relu_margin(const MoECache& cache);

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
};

/// Central differences on every coordinate of `x` (restored afterwards).
/// Relative error uses max(|analytic|, |numeric|, 1e-12) as denominator.
GradCheckResult grad_check(const std::function<double()>& loss, std::span<double> x,
                           std::span<const double> analytic, double step);

struct GroupCheck {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t size = 0;
};

/// Checks every parameter group and both inputs of moe_backward against
/// central differences of loss = <upstream, moe_forward(...)>.
std::vector<GroupCheck> check_moe_gradients(VoxelTensor f_p, VoxelTensor f_i, MoEBlock block,
                                            const VoxelTensor& upstream, double step);

/// Random instance used by the gradient checks: inputs in [-1,1], parameters
/// in [-0.5,0.5], upstream in [-1,1]. Redraws (up to 64 times) until every ReLU
/// pre-activation is at least `min_margin` away from zero.
struct CheckInstance {
    VoxelTensor f_p, f_i, upstream;
    MoEBlock block;
    int redraws = 0;
};
CheckInstance make_check_instance(std::uint64_t seed, int channels, int nx, int ny, int nz, double min_margin = 1e-5);

/// Toy objectness fit: gradient descent on mean logistic loss of output
/// channel 0 against a binary occupancy target. Returns the loss per epoch.
std::vector<double> train_objectness_demo(std::uint64_t seed, int channels, int grid, int epochs,
                                          double learning_rate);

} // namespace owd::moe
