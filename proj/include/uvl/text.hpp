#pragma once

#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include "uvl/attention.hpp"
#include "uvl/params.hpp"
#include "uvl/tensor.hpp"

namespace uvl {

// Word-level vocabulary with dense ids; the four specials occupy ids 0..3.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;

  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> tokens);  // includes specials

  // Lowercase word tokens ranked by frequency (desc), ties lexicographic,
  // capped at max_size (specials included in the budget).
  static Vocabulary build(const std::vector<std::string>& corpus, int max_size);

  int size() const { return static_cast<int>(tokens_.size()); }
  int id(const std::string& token) const;  // kUnk when absent
  const std::string& token(int id) const;

  // [BOS, w1..wn, EOS], then padded or truncated to len (EOS always kept).
  std::vector<int> encode(const std::string& text, int len) const;
  std::string decode(const std::vector<int>& ids) const;  // skips specials

  void save(std::ostream& out) const;
  static Vocabulary load(std::istream& in, const std::string& origin);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

std::vector<std::string> word_tokens(const std::string& text);

struct TextEncoderConfig {
  int dim = 64;
  int layers = 2;
  int heads = 4;
  int max_len = 16;  // L_T
  int vocab_size = 0;
};

struct TextEncoderParams {
  TextEncoderConfig cfg;
  Tensor token_embedding;  // V x C
  Tensor pos_embedding;    // L_T x C
  std::vector<TransformerBlockParams> blocks;
  LayerNorm final_ln;

  TextEncoderParams() = default;
  TextEncoderParams(ParamStore& ps, const TextEncoderConfig& cfg, std::mt19937_64& rng);
};

// Per-token features (L_T x C). PAD positions are masked out of attention;
// causal additionally restricts every position to itself and earlier ones.
Tensor encode_text(const TextEncoderParams& params, const std::vector<int>& ids,
                   bool causal = false);

// Mean over non-PAD token features; one pooled row per input string.
Tensor embed_texts(const TextEncoderParams& params, const Vocabulary& vocab,
                   const std::vector<std::string>& texts);

}  // namespace uvl
