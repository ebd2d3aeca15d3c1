#include <cmath>
#include <random>

#include "doctest.h"
#include "grad_check.hpp"
#include "uvl/decoder.hpp"

using namespace uvl;

namespace {

EncoderOutputs toy_encoder_outputs(int dim, std::mt19937_64& rng, int n1 = 4, int n2 = 7,
                                   bool requires_grad = false) {
  EncoderOutputs enc;
  SparseVoxelTensor coarse;
  coarse.stride = 2;
  for (int i = 0; i < n1; ++i) coarse.coords.push_back({0, i, 0, 0});
  coarse.features = Tensor::randn({n1, dim}, 1.0, rng, requires_grad);
  SparseVoxelTensor fine;
  fine.stride = 1;
  for (int i = 0; i < n2; ++i) fine.coords.push_back({0, i, 1, 0});
  fine.features = Tensor::randn({n2, dim}, 1.0, rng, requires_grad);
  enc.stages = {coarse, fine};
  return enc;
}

}  // namespace

TEST_CASE("voxel sampling") {
  std::mt19937_64 rng(1);
  // exact fit keeps order
  CHECK(sample_voxel_indices(5, 5, rng) == std::vector<int>{0, 1, 2, 3, 4});
  // padding by repetition covers every index
  CHECK(sample_voxel_indices(2, 5, rng) == std::vector<int>{0, 1, 0, 1, 0});
  // subsample: fixed seed reproduces the index list
  std::mt19937_64 a(9), b(9);
  auto ia = sample_voxel_indices(100, 10, a);
  auto ib = sample_voxel_indices(100, 10, b);
  CHECK(ia == ib);
  CHECK(ia.size() == 10);
  for (size_t i = 1; i < ia.size(); ++i) CHECK(ia[i] > ia[i - 1]);
  CHECK_THROWS_AS(sample_voxel_indices(0, 4, rng), InputError);
}

TEST_CASE("masked attention") {
  ParamStore ps;
  std::mt19937_64 rng(3);
  int dim = 16;
  AttentionParams attn(ps, "attn", dim, 4, rng);
  Tensor queries = Tensor::randn({3, dim}, 1.0, rng);
  Tensor kv = Tensor::randn({6, dim}, 1.0, rng);

  SUBCASE("single admitted key returns that key's value projection") {
    std::vector<std::uint8_t> admit(3 * 6, 0);
    admit[0 * 6 + 4] = 1;  // query 0 -> key 4 only
    for (int j = 0; j < 6; ++j) admit[1 * 6 + j] = admit[2 * 6 + j] = 1;
    Tensor out = multi_head_attention(attn, queries, kv, attn_bias_from_admit(admit, 3, 6));
    Tensor expected = attn.o(attn.v(kv));  // row 4
    for (int c = 0; c < dim; ++c)
      CHECK(out.at(0, c) == doctest::Approx(expected.at(4, c)).epsilon(1e-12));
  }

  SUBCASE("all-admit bias equals vanilla attention bit-exactly") {
    std::vector<std::uint8_t> admit(3 * 6, 1);
    Tensor masked = multi_head_attention(attn, queries, kv, attn_bias_from_admit(admit, 3, 6));
    Tensor vanilla = multi_head_attention(attn, queries, kv);
    CHECK(masked.data() == vanilla.data());
  }

  SUBCASE("all-false row falls back to full attention") {
    std::vector<std::uint8_t> admit(3 * 6, 1);
    for (int j = 0; j < 6; ++j) admit[1 * 6 + j] = 0;
    Tensor out = multi_head_attention(attn, queries, kv, attn_bias_from_admit(admit, 3, 6));
    Tensor vanilla = multi_head_attention(attn, queries, kv);
    for (int c = 0; c < dim; ++c) CHECK(out.at(1, c) == vanilla.at(1, c));
  }

  SUBCASE("occlusion: masked-out voxel features cannot influence the query") {
    std::vector<std::uint8_t> admit(3 * 6, 1);
    admit[0 * 6 + 5] = 0;  // query 0 never sees key 5
    Tensor bias = attn_bias_from_admit(admit, 3, 6);
    Tensor out1 = multi_head_attention(attn, queries, kv, bias);
    Tensor kv2 = Tensor::from(kv.shape(), kv.data());
    for (int c = 0; c < dim; ++c) kv2.data()[5 * dim + c] += 3.0;
    Tensor out2 = multi_head_attention(attn, queries, kv2, bias);
    for (int c = 0; c < dim; ++c) CHECK(std::abs(out1.at(0, c) - out2.at(0, c)) < 1e-12);
  }
}

TEST_CASE("decoder output shapes follow the config") {
  DecoderConfig cfg;
  cfg.dim = 32;
  cfg.heads = 4;
  cfg.layers = 2;
  cfg.object_queries = 8;
  cfg.sample_budget = 8;
  ParamStore ps;
  std::mt19937_64 rng(5);
  DecoderParams params(ps, cfg, 1, rng);
  EncoderOutputs enc = toy_encoder_outputs(32, rng);
  Tensor text = Tensor::randn({6, 32}, 1.0, rng);
  std::mt19937_64 frng(7);
  DecoderOutputs out = decoder_forward(params, enc, text, frng);
  CHECK(out.mask_embed.shape() == Shape{9, 32});
  CHECK(out.semantic.shape() == Shape{15, 32});
  CHECK(out.aux_mask_embed.size() == 1);  // deep supervision, L-1 aux copies

  // single layer, single level runs the schedule base case
  cfg.layers = 1;
  ParamStore ps2;
  std::mt19937_64 rng2(6);
  DecoderParams p2(ps2, cfg, 1, rng2);
  std::mt19937_64 frng2(7);
  DecoderOutputs out2 = decoder_forward(p2, enc, Tensor{}, frng2);
  CHECK(out2.mask_embed.shape() == Shape{9, 32});
  CHECK(out2.semantic.shape() == Shape{9, 32});
}

TEST_CASE("causal decoding: later text cannot influence earlier positions") {
  DecoderConfig cfg;
  cfg.dim = 16;
  cfg.heads = 4;
  cfg.layers = 2;
  cfg.object_queries = 4;
  cfg.sample_budget = 6;
  ParamStore ps;
  std::mt19937_64 rng(11);
  DecoderParams params(ps, cfg, 1, rng);
  EncoderOutputs enc = toy_encoder_outputs(16, rng);

  Tensor text = Tensor::randn({5, 16}, 1.0, rng);
  std::mt19937_64 f1(13);
  DecoderOutputs o1 = decoder_forward(params, enc, text, f1, true);

  int j = 3;  // perturb text position 3
  Tensor text2 = Tensor::from(text.shape(), text.data());
  for (int c = 0; c < 16; ++c) text2.data()[j * 16 + c] += 1.0;
  std::mt19937_64 f2(13);
  DecoderOutputs o2 = decoder_forward(params, enc, text2, f2, true);

  int base = cfg.object_queries + 1;
  for (int i = 0; i < j; ++i)
    for (int c = 0; c < 16; ++c)
      CHECK(std::abs(o1.semantic.at(base + i, c) - o2.semantic.at(base + i, c)) < 1e-12);
  // object/scene rows are also text-independent under causal masking
  for (int i = 0; i < base; ++i)
    for (int c = 0; c < 16; ++c)
      CHECK(std::abs(o1.semantic.at(i, c) - o2.semantic.at(i, c)) < 1e-12);
}

TEST_CASE("decoder parameter gradients vs finite differences") {
  DecoderConfig cfg;
  cfg.dim = 8;
  cfg.heads = 2;
  cfg.layers = 2;
  cfg.object_queries = 3;
  cfg.sample_budget = 4;
  cfg.deep_supervision = false;
  ParamStore ps;
  std::mt19937_64 rng(17);
  DecoderParams params(ps, cfg, 1, rng);
  EncoderOutputs enc = toy_encoder_outputs(8, rng, 3, 5, true);

  auto loss = [&] {
    std::mt19937_64 frng(23);
    DecoderOutputs out = decoder_forward(params, enc, Tensor{}, frng);
    return add(reduce_sum(sigmoid(out.semantic)), reduce_mean(out.mask_embed));
  };
  std::vector<Tensor> checked = {params.latent_queries,
                                 params.layers[0].cross.q.w,
                                 params.layers[1].self_attn.v.w,
                                 params.layers[0].ffn.fc1.b,
                                 params.level_proj[0].w,
                                 params.mask_proj.w,
                                 params.semantic_proj.b,
                                 enc.stages[0].features};
  CHECK(gradcheck::max_grad_error(loss, checked) < 1e-4);
}
