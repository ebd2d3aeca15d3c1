#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <vector>

#include "uvl/geometry.hpp"
#include "uvl/params.hpp"
#include "uvl/tensor.hpp"

namespace uvl {

// Coordinate with a batch index so a whole batch lives in one sparse tensor.
using BCoord = std::array<std::int64_t, 4>;  // (batch, x, y, z)

struct SparseVoxelTensor {
  int stride = 1;                // in units of the base voxel size
  std::vector<BCoord> coords;    // N x (b,x,y,z), unique
  Tensor features;               // N x C

  int size() const { return static_cast<int>(coords.size()); }
};

// One entry per (input voxel, output voxel, kernel offset) with
// in_xyz == stride * out_xyz + offset[k] and matching batch index.
struct KernelMap {
  struct Triple {
    int in, out, k;
  };
  std::vector<Triple> triples;
  int num_offsets = 0;
  int num_out = 0;
};

// Kernel offset grids in lexicographic order: cube window 3 -> {-1,0,1}^3,
// window 2 -> {0,1}^3.
std::vector<IVec3> kernel_offsets(int window);

KernelMap build_kernel_map(const std::vector<BCoord>& in_coords,
                           const std::vector<BCoord>& out_coords,
                           const std::vector<IVec3>& offsets, int stride);

// Transposed relation: out_xyz == stride * in_xyz + offset[k].
KernelMap build_transposed_kernel_map(const std::vector<BCoord>& in_coords,
                                      const std::vector<BCoord>& out_coords,
                                      const std::vector<IVec3>& offsets, int stride);

// out[o] = sum over triples (i,o,k) of x[i] . W_k, where W is (K*C_in) x C_out
// with kernel block k occupying rows [k*C_in, (k+1)*C_in). Differentiable in
// both features and weights.
Tensor sparse_conv(const Tensor& features, const Tensor& weights, const KernelMap& map);

// Unique coords at half resolution, sorted (batch-major lexicographic).
std::vector<BCoord> downsample_coords(const std::vector<BCoord>& coords);

// ---------------------------------------------------------------------------
// Sparse U-Net encoder
// ---------------------------------------------------------------------------

struct UNetConfig {
  int in_channels = 3;
  std::vector<int> channels = {16, 32, 64, 128};  // encoder widths, coarsest last
  int hidden_dim = 64;                            // common projection width C
  int residual_blocks = 1;
};

struct SparseConvParams {
  Tensor w;  // (K*C_in) x C_out
  Tensor b;  // 1 x C_out
  SparseConvParams() = default;
  SparseConvParams(ParamStore& ps, const std::string& name, int window, int c_in,
                   int c_out, std::mt19937_64& rng);
};

struct ResBlockParams {
  SparseConvParams conv1, conv2;
  LayerNorm ln1, ln2;
  ResBlockParams() = default;
  ResBlockParams(ParamStore& ps, const std::string& name, int ch, std::mt19937_64& rng);
};

struct UNetParams {
  UNetConfig cfg;
  SparseConvParams stem;
  std::vector<ResBlockParams> enc_blocks;    // one per level
  std::vector<SparseConvParams> down;        // level d-1 -> d
  std::vector<SparseConvParams> up;          // level d -> d-1 (transposed)
  std::vector<SparseConvParams> fuse;        // after skip concat
  std::vector<ResBlockParams> dec_blocks;    // one per decoder level below top
  std::vector<Linear> proj;                  // stage s -> hidden_dim, s = 1..S

  UNetParams() = default;
  UNetParams(ParamStore& ps, const UNetConfig& cfg, std::mt19937_64& rng);
};

// Stage s in [1..S]: stages[s-1]; stage 1 is the coarsest decoder map and
// stage S sits on the input voxel coordinates (the mask-head feature map).
struct EncoderOutputs {
  std::vector<SparseVoxelTensor> stages;

  const SparseVoxelTensor& full_resolution() const { return stages.back(); }
  int num_stages() const { return static_cast<int>(stages.size()); }
};

// Assemble a batch input tensor from voxel grids (batch index = position in list).
SparseVoxelTensor sparse_input(const std::vector<const VoxelGrid*>& grids);

EncoderOutputs unet_encode(const SparseVoxelTensor& input, const UNetParams& params);

}  // namespace uvl
