#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "grad_check.hpp"
#include "uvl/text.hpp"

using namespace uvl;

namespace {

TextEncoderParams tiny_encoder(ParamStore& ps, int vocab_size, int dim = 16,
                               int layers = 2, int max_len = 8, unsigned seed = 5) {
  TextEncoderConfig cfg;
  cfg.dim = dim;
  cfg.layers = layers;
  cfg.heads = 4;
  cfg.max_len = max_len;
  cfg.vocab_size = vocab_size;
  std::mt19937_64 rng(seed);
  return TextEncoderParams(ps, cfg, rng);
}

}  // namespace

TEST_CASE("vocabulary build") {
  Vocabulary v = Vocabulary::build({"a red car"}, 100);
  CHECK(v.size() == 7);
  CHECK(v.id("a") >= 4);
  CHECK(v.id("red") >= 4);
  CHECK(v.id("car") >= 4);
  CHECK(v.id("banana") == Vocabulary::kUnk);

  // determinism across rebuilds
  std::vector<std::string> corpus = {"the blue box sits", "the red box"};
  Vocabulary v1 = Vocabulary::build(corpus, 50);
  Vocabulary v2 = Vocabulary::build(corpus, 50);
  for (const auto& w : {"the", "box", "blue", "red", "sits"})
    CHECK(v1.id(w) == v2.id(w));
  // frequency desc then lexicographic: box/the tie at 2, box first
  CHECK(v1.id("box") == 4);
  CHECK(v1.id("the") == 5);

  CHECK_THROWS_AS(Vocabulary::build({}, 10), InputError);
}

TEST_CASE("encode pads and truncates") {
  Vocabulary v = Vocabulary::build({"a red car drives far away"}, 100);
  std::vector<int> ids = v.encode("a red car", 8);
  CHECK(ids.size() == 8);
  CHECK(ids[0] == Vocabulary::kBos);
  CHECK(ids[4] == Vocabulary::kEos);
  CHECK(ids[5] == Vocabulary::kPad);
  CHECK(v.decode(ids) == "a red car");

  std::vector<int> t = v.encode("a red car drives far away", 4);
  CHECK(t.size() == 4);
  CHECK(t[3] == Vocabulary::kEos);
}

TEST_CASE("vocabulary file round trip") {
  Vocabulary v = Vocabulary::build({"one two three"}, 100);
  std::stringstream ss;
  v.save(ss);
  Vocabulary back = Vocabulary::load(ss, "<mem>");
  CHECK(back.size() == v.size());
  for (int i = 0; i < v.size(); ++i) CHECK(back.token(i) == v.token(i));
}

TEST_CASE("PAD invariance: tail length does not affect real tokens") {
  ParamStore ps;
  TextEncoderParams enc = tiny_encoder(ps, 20);
  std::vector<int> a = {1, 7, 9, 2, 0, 0, 0, 0};
  std::vector<int> b = {1, 7, 9, 2};
  Tensor fa = encode_text(enc, a);
  Tensor fb = encode_text(enc, b);
  for (int i = 0; i < 4; ++i)
    for (int c = 0; c < 16; ++c)
      CHECK(std::abs(fa.at(i, c) - fb.at(i, c)) < 1e-9);
}

TEST_CASE("encode_text rejects out-of-range ids") {
  ParamStore ps;
  TextEncoderParams enc = tiny_encoder(ps, 20);
  CHECK_THROWS_AS(encode_text(enc, {1, 25, 2}), InputError);
}

TEST_CASE("single-token sequence deterministic") {
  ParamStore ps;
  TextEncoderParams enc = tiny_encoder(ps, 20);
  Tensor f1 = encode_text(enc, {5});
  Tensor f2 = encode_text(enc, {5});
  CHECK(f1.shape() == Shape{1, 16});
  CHECK(f1.data() == f2.data());
}

TEST_CASE("embedding table gradient vs finite differences") {
  ParamStore ps;
  TextEncoderParams enc = tiny_encoder(ps, 12, 8, 1, 6);
  std::vector<int> ids = {1, 5, 7, 2, 0, 0};
  auto loss = [&] { return reduce_sum(encode_text(enc, ids)); };
  CHECK(gradcheck::max_grad_error(loss, {enc.token_embedding}) < 1e-4);
}

TEST_CASE("pooled embeddings") {
  ParamStore ps;
  Vocabulary v = Vocabulary::build({"chair table sofa lamp"}, 100);
  TextEncoderParams enc = tiny_encoder(ps, v.size());

  Tensor e = embed_texts(enc, v, {"chair", "chair", "table"});
  CHECK(e.shape() == Shape{3, 16});
  // identical names give identical rows
  for (int c = 0; c < 16; ++c) CHECK(e.at(0, c) == e.at(1, c));

  // K=2 class names plus background entry -> 3 x C
  Tensor cls = embed_texts(enc, v, {"chair", "table", "background"});
  CHECK(cls.rows() == 3);

  // nonzero norm
  double n = 0;
  for (int c = 0; c < 16; ++c) n += e.at(2, c) * e.at(2, c);
  CHECK(n > 0);

  // permutation of inputs permutes rows
  Tensor p1 = embed_texts(enc, v, {"chair", "table"});
  Tensor p2 = embed_texts(enc, v, {"table", "chair"});
  for (int c = 0; c < 16; ++c) {
    CHECK(p1.at(0, c) == p2.at(1, c));
    CHECK(p1.at(1, c) == p2.at(0, c));
  }

  CHECK_THROWS_AS(embed_texts(enc, v, {""}), InputError);
}

TEST_CASE("causal text encoding blocks future tokens") {
  ParamStore ps;
  TextEncoderParams enc = tiny_encoder(ps, 20);
  std::vector<int> a = {1, 5, 6, 7, 2};
  std::vector<int> b = {1, 5, 6, 9, 2};  // differs at position 3
  Tensor fa = encode_text(enc, a, true);
  Tensor fb = encode_text(enc, b, true);
  for (int i = 0; i < 3; ++i)
    for (int c = 0; c < 16; ++c) CHECK(fa.at(i, c) == fb.at(i, c));
}
