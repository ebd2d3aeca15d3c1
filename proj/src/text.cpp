#include "uvl/text.hpp"

#include <algorithm>
#include <cctype>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

namespace uvl {

namespace {

const char* kSpecialNames[4] = {"<pad>", "<bos>", "<eos>", "<unk>"};

}  // namespace

std::vector<std::string> word_tokens(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    if (std::isalnum(static_cast<unsigned char>(ch))) {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    } else if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < 4) throw InputError("vocabulary must contain the four specials");
  for (int i = 0; i < 4; ++i)
    if (tokens_[i] != kSpecialNames[i])
      throw InputError("vocabulary specials malformed at id " + std::to_string(i));
  for (size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<int>(i)).second)
      throw InputError("duplicate vocabulary token: " + tokens_[i]);
  }
}

Vocabulary Vocabulary::build(const std::vector<std::string>& corpus, int max_size) {
  if (corpus.empty()) throw InputError("build_vocab: empty corpus");
  std::map<std::string, long long> freq;
  for (const auto& doc : corpus)
    for (const auto& w : word_tokens(doc)) freq[w]++;
  if (freq.empty()) throw InputError("build_vocab: corpus contains no tokens");

  std::vector<std::pair<std::string, long long>> ranked(freq.begin(), freq.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  std::vector<std::string> tokens(kSpecialNames, kSpecialNames + 4);
  int budget = max_size > 4 ? max_size - 4 : static_cast<int>(ranked.size());
  for (int i = 0; i < static_cast<int>(ranked.size()) && i < budget; ++i)
    tokens.push_back(ranked[i].first);
  return Vocabulary(std::move(tokens));
}

int Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int tid) const {
  if (tid < 0 || tid >= size()) throw InputError("token id out of range");
  return tokens_[tid];
}

std::vector<int> Vocabulary::encode(const std::string& text, int len) const {
  if (len < 2) throw InputError("encode: sequence length must be >= 2");
  std::vector<int> ids = {kBos};
  for (const auto& w : word_tokens(text)) {
    if (static_cast<int>(ids.size()) >= len - 1) break;
    ids.push_back(id(w));
  }
  ids.push_back(kEos);
  ids.resize(len, kPad);
  return ids;
}

std::string Vocabulary::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int tid : ids) {
    if (tid == kPad || tid == kBos) continue;
    if (tid == kEos) break;
    if (!out.empty()) out.push_back(' ');
    out += token(tid);
  }
  return out;
}

void Vocabulary::save(std::ostream& out) const {
  for (const auto& t : tokens_) out << t << "\n";
}

Vocabulary Vocabulary::load(std::istream& in, const std::string& origin) {
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) tokens.push_back(line);
  if (tokens.size() < 4)
    throw ParseError(origin + ": vocabulary file must hold at least the specials");
  return Vocabulary(std::move(tokens));
}

TextEncoderParams::TextEncoderParams(ParamStore& ps, const TextEncoderConfig& config,
                                     std::mt19937_64& rng)
    : cfg(config) {
  if (cfg.vocab_size < 4) throw InputError("text encoder: vocab_size not set");
  token_embedding = ps.add("text.token_embedding",
                           Tensor::randn({cfg.vocab_size, cfg.dim}, 0.02, rng, true));
  pos_embedding = ps.add("text.pos_embedding",
                         Tensor::randn({cfg.max_len, cfg.dim}, 0.02, rng, true));
  for (int l = 0; l < cfg.layers; ++l)
    blocks.emplace_back(ps, "text.block" + std::to_string(l), cfg.dim, cfg.heads, rng);
  final_ln = LayerNorm(ps, "text.final_ln", cfg.dim);
}

Tensor encode_text(const TextEncoderParams& params, const std::vector<int>& ids,
                   bool causal) {
  const int len = static_cast<int>(ids.size());
  if (len < 1 || len > params.cfg.max_len)
    throw InputError("encode_text: sequence length out of range");
  for (int tid : ids)
    if (tid < 0 || tid >= params.cfg.vocab_size)
      throw InputError("encode_text: token id out of range");

  Tensor x = gather_rows(params.token_embedding, ids);
  if (len == params.cfg.max_len) {
    x = add(x, params.pos_embedding);
  } else {
    x = add(x, slice_rows(params.pos_embedding, 0, len));
  }

  std::vector<double> bias(static_cast<size_t>(len) * len, 0.0);
  for (int i = 0; i < len; ++i)
    for (int j = 0; j < len; ++j)
      if (ids[j] == Vocabulary::kPad || (causal && j > i))
        bias[static_cast<size_t>(i) * len + j] = kAttnMaskBias;
  Tensor bias_t = Tensor::from({len, len}, std::move(bias));

  for (const auto& blk : params.blocks) x = blk(x, bias_t);
  return params.final_ln(x);
}

Tensor embed_texts(const TextEncoderParams& params, const Vocabulary& vocab,
                   const std::vector<std::string>& texts) {
  if (texts.empty()) throw InputError("embed_texts: no inputs");
  std::vector<Tensor> rows;
  rows.reserve(texts.size());
  for (const auto& text : texts) {
    if (word_tokens(text).empty()) throw InputError("embed_texts: empty text");
    std::vector<int> ids = vocab.encode(text, params.cfg.max_len);
    Tensor feats = encode_text(params, ids, /*causal=*/false);
    int live = 0;
    for (int tid : ids)
      if (tid != Vocabulary::kPad) ++live;
    std::vector<double> w(ids.size(), 0.0);
    for (size_t i = 0; i < ids.size(); ++i)
      if (ids[i] != Vocabulary::kPad) w[i] = 1.0 / live;
    rows.push_back(matmul(Tensor::from({1, static_cast<int>(ids.size())}, std::move(w)),
                          feats));
  }
  return concat_rows(rows);
}

}  // namespace uvl
