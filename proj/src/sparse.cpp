#include "uvl/sparse.hpp"

#include <algorithm>
#include <unordered_map>

namespace uvl {

namespace {

struct BCoordHash {
  size_t operator()(const BCoord& c) const {
    std::uint64_t h = 1469598103934665603ull;
    for (std::int64_t v : c) {
      h ^= static_cast<std::uint64_t>(v);
      h *= 1099511628211ull;
    }
    return static_cast<size_t>(h);
  }
};

using CoordIndex = std::unordered_map<BCoord, int, BCoordHash>;

CoordIndex index_coords(const std::vector<BCoord>& coords) {
  CoordIndex idx;
  idx.reserve(coords.size());
  for (size_t i = 0; i < coords.size(); ++i) {
    if (!idx.emplace(coords[i], static_cast<int>(i)).second)
      throw InputError("sparse tensor coordinates are not unique");
  }
  return idx;
}

}  // namespace

std::vector<IVec3> kernel_offsets(int window) {
  if (window < 1) throw InputError("kernel window must be >= 1");
  int lo = window % 2 == 1 ? -(window / 2) : 0;
  int hi = window % 2 == 1 ? window / 2 : window - 1;
  std::vector<IVec3> offsets;
  for (int x = lo; x <= hi; ++x)
    for (int y = lo; y <= hi; ++y)
      for (int z = lo; z <= hi; ++z) offsets.push_back({x, y, z});
  return offsets;
}

KernelMap build_kernel_map(const std::vector<BCoord>& in_coords,
                           const std::vector<BCoord>& out_coords,
                           const std::vector<IVec3>& offsets, int stride) {
  CoordIndex idx = index_coords(in_coords);
  index_coords(out_coords);  // uniqueness check
  KernelMap map;
  map.num_offsets = static_cast<int>(offsets.size());
  map.num_out = static_cast<int>(out_coords.size());
  for (size_t o = 0; o < out_coords.size(); ++o) {
    const BCoord& oc = out_coords[o];
    for (size_t k = 0; k < offsets.size(); ++k) {
      BCoord probe = {oc[0], stride * oc[1] + offsets[k][0],
                      stride * oc[2] + offsets[k][1], stride * oc[3] + offsets[k][2]};
      auto it = idx.find(probe);
      if (it != idx.end())
        map.triples.push_back({it->second, static_cast<int>(o), static_cast<int>(k)});
    }
  }
  return map;
}

KernelMap build_transposed_kernel_map(const std::vector<BCoord>& in_coords,
                                      const std::vector<BCoord>& out_coords,
                                      const std::vector<IVec3>& offsets, int stride) {
  CoordIndex idx = index_coords(out_coords);
  index_coords(in_coords);
  KernelMap map;
  map.num_offsets = static_cast<int>(offsets.size());
  map.num_out = static_cast<int>(out_coords.size());
  for (size_t i = 0; i < in_coords.size(); ++i) {
    const BCoord& ic = in_coords[i];
    for (size_t k = 0; k < offsets.size(); ++k) {
      BCoord probe = {ic[0], stride * ic[1] + offsets[k][0],
                      stride * ic[2] + offsets[k][1], stride * ic[3] + offsets[k][2]};
      auto it = idx.find(probe);
      if (it != idx.end())
        map.triples.push_back({static_cast<int>(i), it->second, static_cast<int>(k)});
    }
  }
  return map;
}

Tensor sparse_conv(const Tensor& features, const Tensor& weights, const KernelMap& map) {
  int c_in = features.cols();
  if (weights.rows() % map.num_offsets != 0 || weights.rows() / map.num_offsets != c_in)
    throw ShapeError("sparse_conv: weight rows must be num_offsets * c_in");
  int c_out = weights.cols();
  int n_out = map.num_out;

  std::vector<double> out(static_cast<size_t>(n_out) * c_out, 0.0);
  const auto& x = features.data();
  const auto& w = weights.data();
  for (const auto& t : map.triples) {
    const double* xi = &x[static_cast<size_t>(t.in) * c_in];
    double* oo = &out[static_cast<size_t>(t.out) * c_out];
    const double* wk = &w[static_cast<size_t>(t.k) * c_in * c_out];
    for (int c = 0; c < c_in; ++c) {
      double xv = xi[c];
      if (xv == 0.0) continue;
      const double* wrow = &wk[static_cast<size_t>(c) * c_out];
      for (int j = 0; j < c_out; ++j) oo[j] += xv * wrow[j];
    }
  }

  auto fn = features.node();
  auto wn = weights.node();
  auto triples = map.triples;
  return make_custom_op(
      "sparse_conv", {n_out, c_out}, std::move(out), {features, weights},
      [fn, wn, triples, c_in, c_out](TensorNode& self) {
        const auto& g = self.grad;
        bool gx = fn->requires_grad, gw = wn->requires_grad;
        if (gx) fn->ensure_grad();
        if (gw) wn->ensure_grad();
        for (const auto& t : triples) {
          const double* go = &g[static_cast<size_t>(t.out) * c_out];
          const double* wk = &wn->value[static_cast<size_t>(t.k) * c_in * c_out];
          const double* xi = &fn->value[static_cast<size_t>(t.in) * c_in];
          if (gx) {
            double* dxi = &fn->grad[static_cast<size_t>(t.in) * c_in];
            for (int c = 0; c < c_in; ++c) {
              const double* wrow = &wk[static_cast<size_t>(c) * c_out];
              double s = 0.0;
              for (int j = 0; j < c_out; ++j) s += go[j] * wrow[j];
              dxi[c] += s;
            }
          }
          if (gw) {
            double* dwk = &wn->grad[static_cast<size_t>(t.k) * c_in * c_out];
            for (int c = 0; c < c_in; ++c) {
              double xv = xi[c];
              if (xv == 0.0) continue;
              double* dwrow = &dwk[static_cast<size_t>(c) * c_out];
              for (int j = 0; j < c_out; ++j) dwrow[j] += xv * go[j];
            }
          }
        }
      });
}

std::vector<BCoord> downsample_coords(const std::vector<BCoord>& coords) {
  std::vector<BCoord> out;
  out.reserve(coords.size());
  for (const auto& c : coords) {
    auto half = [](std::int64_t v) {
      // floor division by 2 for negatives as well
      return v >= 0 ? v / 2 : (v - 1) / 2;
    };
    out.push_back({c[0], half(c[1]), half(c[2]), half(c[3])});
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

SparseConvParams::SparseConvParams(ParamStore& ps, const std::string& name, int window,
                                   int c_in, int c_out, std::mt19937_64& rng) {
  int k = static_cast<int>(kernel_offsets(window).size());
  w = ps.add(name + ".w", Tensor::kaiming({k * c_in, c_out}, k * c_in, rng));
  b = ps.add(name + ".b", Tensor::zeros({1, c_out}, true));
}

ResBlockParams::ResBlockParams(ParamStore& ps, const std::string& name, int ch,
                               std::mt19937_64& rng)
    : conv1(ps, name + ".conv1", 3, ch, ch, rng),
      conv2(ps, name + ".conv2", 3, ch, ch, rng),
      ln1(ps, name + ".ln1", ch),
      ln2(ps, name + ".ln2", ch) {}

UNetParams::UNetParams(ParamStore& ps, const UNetConfig& config, std::mt19937_64& rng)
    : cfg(config) {
  int S = static_cast<int>(cfg.channels.size());
  if (S < 2) throw InputError("unet: at least two stages required");
  stem = SparseConvParams(ps, "unet.stem", 3, cfg.in_channels, cfg.channels[0], rng);
  for (int d = 0; d < S; ++d)
    for (int r = 0; r < cfg.residual_blocks; ++r)
      enc_blocks.emplace_back(ps, "unet.enc" + std::to_string(d) + ".res" +
                                      std::to_string(r),
                              cfg.channels[d], rng);
  for (int d = 1; d < S; ++d)
    down.emplace_back(ps, "unet.down" + std::to_string(d), 2, cfg.channels[d - 1],
                      cfg.channels[d], rng);
  for (int d = S - 2; d >= 0; --d) {
    up.emplace_back(ps, "unet.up" + std::to_string(d), 2, cfg.channels[d + 1],
                    cfg.channels[d], rng);
    fuse.emplace_back(ps, "unet.fuse" + std::to_string(d), 3, 2 * cfg.channels[d],
                      cfg.channels[d], rng);
    for (int r = 0; r < cfg.residual_blocks; ++r)
      dec_blocks.emplace_back(ps, "unet.dec" + std::to_string(d) + ".res" +
                                      std::to_string(r),
                              cfg.channels[d], rng);
  }
  for (int s = 0; s < S; ++s) {
    int level = S - 1 - s;  // stage 1 = coarsest level
    proj.emplace_back(ps, "unet.proj" + std::to_string(s + 1), cfg.channels[level],
                      cfg.hidden_dim, rng);
  }
}

namespace {

Tensor apply_conv(const Tensor& feats, const SparseConvParams& p, const KernelMap& map) {
  return add_rowvec(sparse_conv(feats, p.w, map), p.b);
}

Tensor apply_res_blocks(Tensor x, const std::vector<BCoord>& coords,
                        const ResBlockParams* blocks, int count) {
  auto offsets = kernel_offsets(3);
  KernelMap map = build_kernel_map(coords, coords, offsets, 1);
  for (int r = 0; r < count; ++r) {
    const ResBlockParams& blk = blocks[r];
    Tensor h = relu(blk.ln1(apply_conv(x, blk.conv1, map)));
    x = relu(blk.ln2(add(x, apply_conv(h, blk.conv2, map))));
  }
  return x;
}

}  // namespace

SparseVoxelTensor sparse_input(const std::vector<const VoxelGrid*>& grids) {
  if (grids.empty()) throw InputError("sparse_input: no grids");
  SparseVoxelTensor out;
  std::vector<double> feats;
  for (size_t b = 0; b < grids.size(); ++b) {
    const VoxelGrid& g = *grids[b];
    if (g.size() == 0) throw InputError("sparse_input: empty voxel grid");
    for (int v = 0; v < g.size(); ++v) {
      out.coords.push_back({static_cast<std::int64_t>(b), g.coords[v][0],
                            g.coords[v][1], g.coords[v][2]});
      feats.insert(feats.end(), g.features[v].begin(), g.features[v].end());
    }
  }
  out.features = Tensor::from({static_cast<int>(out.coords.size()), 3}, std::move(feats));
  return out;
}

EncoderOutputs unet_encode(const SparseVoxelTensor& input, const UNetParams& params) {
  const UNetConfig& cfg = params.cfg;
  int S = static_cast<int>(cfg.channels.size());
  int R = cfg.residual_blocks;
  if (input.size() == 0) throw InputError("unet_encode: empty input");

  auto off3 = kernel_offsets(3);
  auto off2 = kernel_offsets(2);

  // encoder path
  std::vector<std::vector<BCoord>> coords(S);
  std::vector<Tensor> enc(S);
  coords[0] = input.coords;
  {
    KernelMap stem_map = build_kernel_map(coords[0], coords[0], off3, 1);
    Tensor x = relu(apply_conv(input.features, params.stem, stem_map));
    enc[0] = apply_res_blocks(x, coords[0], &params.enc_blocks[0], R);
  }
  for (int d = 1; d < S; ++d) {
    coords[d] = downsample_coords(coords[d - 1]);
    KernelMap down_map = build_kernel_map(coords[d - 1], coords[d], off2, 2);
    Tensor x = relu(apply_conv(enc[d - 1], params.down[d - 1], down_map));
    enc[d] = apply_res_blocks(x, coords[d], &params.enc_blocks[static_cast<size_t>(d) * R], R);
  }

  // decoder path with skip connections; stage 1 = coarsest
  EncoderOutputs out;
  out.stages.resize(S);
  Tensor u = enc[S - 1];
  out.stages[0] = {1 << (S - 1), coords[S - 1], params.proj[0](u)};
  int step = 0;
  for (int d = S - 2; d >= 0; --d, ++step) {
    KernelMap up_map = build_transposed_kernel_map(coords[d + 1], coords[d], off2, 2);
    Tensor upsampled = relu(apply_conv(u, params.up[step], up_map));
    KernelMap fuse_map = build_kernel_map(coords[d], coords[d], off3, 1);
    Tensor fused = relu(apply_conv(concat_cols({upsampled, enc[d]}), params.fuse[step],
                                   fuse_map));
    u = apply_res_blocks(fused, coords[d],
                         &params.dec_blocks[static_cast<size_t>(step) * R], R);
    int s = S - 1 - d;  // stage index - 1
    out.stages[s] = {1 << d, coords[d], params.proj[s](u)};
  }
  return out;
}

}  // namespace uvl
