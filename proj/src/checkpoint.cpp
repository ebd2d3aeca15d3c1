#include "uvl/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

namespace uvl {

namespace {

constexpr char kMagic[4] = {'U', '3', 'D', 'L'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t get_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw ParseError(path + ": truncated checkpoint");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::istream& in, const std::string& path) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8))
    throw ParseError(path + ": truncated checkpoint");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void put_blob(std::ostream& out, const std::string& s) {
  put_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_blob(std::istream& in, const std::string& path) {
  std::uint64_t n = get_u64(in, path);
  std::string s(n, '\0');
  if (n && !in.read(s.data(), static_cast<std::streamsize>(n)))
    throw ParseError(path + ": truncated checkpoint blob");
  return s;
}

void put_doubles(std::ostream& out, const std::vector<double>& v) {
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

struct DirEntry {
  std::string name;
  Shape shape;
  std::uint64_t offset = 0;  // into the data segment, in doubles
  std::uint64_t count = 0;
};

void write_meta(std::ostream& out, const Model& model, const AdamW* opt,
                const std::mt19937_64* rng) {
  out.write(kMagic, 4);
  put_u32(out, kVersion);
  put_blob(out, config_to_text(model.cfg));
  std::ostringstream vs;
  model.vocab.save(vs);
  put_blob(out, vs.str());
  std::string classes;
  for (const auto& c : model.class_names) classes += c + "\n";
  put_blob(out, classes);
  std::string rng_text;
  if (rng) {
    std::ostringstream rs;
    rs << *rng;
    rng_text = rs.str();
  }
  put_blob(out, rng_text);
  put_u64(out, opt ? opt->steps() : 0);
  out.put(opt ? 1 : 0);
}

}  // namespace

CheckpointMeta read_checkpoint_meta(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint: " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw ParseError(path + ": not a checkpoint file");
  CheckpointMeta meta;
  meta.version = get_u32(in, path);
  if (meta.version != kVersion)
    throw ParseError(path + ": unsupported checkpoint version");
  meta.config_text = get_blob(in, path);
  meta.vocab_text = get_blob(in, path);
  meta.class_names_text = get_blob(in, path);
  meta.rng_text = get_blob(in, path);
  meta.adam_steps = get_u64(in, path);
  int flag = in.get();
  if (flag == EOF) throw ParseError(path + ": truncated checkpoint");
  meta.has_optimizer = flag != 0;
  return meta;
}

void save_checkpoint(const std::string& path, const Model& model, const AdamW* opt,
                     const std::mt19937_64* rng) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write checkpoint: " + path);
  write_meta(out, model, opt, rng);

  const auto& items = model.store.items();
  // moment accessors are non-const only; saving does not modify the state
  AdamW* o = const_cast<AdamW*>(opt);
  if (o && !o->m().empty() && o->m().size() != items.size())
    throw InputError("save_checkpoint: optimizer state size mismatch");

  std::vector<DirEntry> dir;
  std::uint64_t offset = 0;
  auto add_entry = [&](const std::string& name, const Shape& shape, size_t count) {
    dir.push_back({name, shape, offset, count});
    offset += count;
  };
  for (const auto& [name, t] : items) add_entry("param:" + name, t.shape(), t.size());
  if (o && !o->m().empty()) {
    for (size_t i = 0; i < items.size(); ++i)
      add_entry("adam.m:" + items[i].first, items[i].second.shape(), o->m()[i].size());
    for (size_t i = 0; i < items.size(); ++i)
      add_entry("adam.v:" + items[i].first, items[i].second.shape(), o->v()[i].size());
  }

  put_u32(out, static_cast<std::uint32_t>(dir.size()));
  for (const auto& e : dir) {
    put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    out.put(0);  // dtype: float64
    put_u32(out, static_cast<std::uint32_t>(e.shape.size()));
    for (int d : e.shape) put_u32(out, static_cast<std::uint32_t>(d));
    put_u64(out, e.offset * sizeof(double));
  }
  put_u64(out, offset * sizeof(double));

  for (const auto& [name, t] : items) put_doubles(out, t.data());
  if (o && !o->m().empty()) {
    for (const auto& m : o->m()) put_doubles(out, m);
    for (const auto& v : o->v()) put_doubles(out, v);
  }
  if (!out) throw InputError("failed writing checkpoint: " + path);
}

void load_checkpoint(const std::string& path, Model& model, AdamW* opt,
                     std::mt19937_64* rng) {
  CheckpointMeta meta = read_checkpoint_meta(path);

  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint: " + path);
  // skip past the metadata section
  in.seekg(4 + 4, std::ios::beg);
  for (int i = 0; i < 4; ++i) get_blob(in, path);
  get_u64(in, path);
  in.get();

  std::uint32_t count = get_u32(in, path);
  std::vector<DirEntry> dir(count);
  for (auto& e : dir) {
    std::uint32_t nlen = get_u32(in, path);
    e.name.resize(nlen);
    if (!in.read(e.name.data(), nlen)) throw ParseError(path + ": truncated directory");
    int dtype = in.get();
    if (dtype != 0) throw ParseError(path + ": unsupported tensor dtype");
    std::uint32_t ndim = get_u32(in, path);
    e.shape.resize(ndim);
    e.count = 1;
    for (auto& d : e.shape) {
      d = static_cast<int>(get_u32(in, path));
      e.count *= static_cast<std::uint64_t>(d);
    }
    e.offset = get_u64(in, path) / sizeof(double);
  }
  get_u64(in, path);  // data segment size
  std::streampos data_start = in.tellg();

  auto read_into = [&](const DirEntry& e, std::vector<double>& dst) {
    dst.resize(e.count);
    in.seekg(data_start + static_cast<std::streamoff>(e.offset * sizeof(double)));
    if (!in.read(reinterpret_cast<char*>(dst.data()),
                 static_cast<std::streamsize>(e.count * sizeof(double))))
      throw ParseError(path + ": truncated tensor data for " + e.name);
  };
  auto find = [&](const std::string& name) -> const DirEntry& {
    for (const auto& e : dir)
      if (e.name == name) return e;
    throw ParseError(path + ": checkpoint is missing tensor " + name);
  };

  for (const auto& [name, t] : model.store.items()) {
    const DirEntry& e = find("param:" + name);
    if (e.shape != t.shape())
      throw InputError(path + ": shape mismatch for parameter " + name);
    Tensor tt = t;
    read_into(e, tt.data());
  }

  if (opt) {
    if (!meta.has_optimizer)
      throw InputError(path + ": checkpoint holds no optimizer state");
    bool has_moments = false;
    for (const auto& e : dir)
      if (e.name.rfind("adam.m:", 0) == 0) {
        has_moments = true;
        break;
      }
    const auto& items = model.store.items();
    if (has_moments) {
      opt->m().resize(items.size());
      opt->v().resize(items.size());
      for (size_t i = 0; i < items.size(); ++i) {
        read_into(find("adam.m:" + items[i].first), opt->m()[i]);
        read_into(find("adam.v:" + items[i].first), opt->v()[i]);
      }
    } else {  // saved before the first optimizer step
      opt->m().clear();
      opt->v().clear();
    }
    opt->set_steps(meta.adam_steps);
  }
  if (rng) {
    if (meta.rng_text.empty()) throw InputError(path + ": checkpoint holds no RNG state");
    std::istringstream rs(meta.rng_text);
    rs >> *rng;
    if (rs.fail()) throw ParseError(path + ": bad RNG state");
  }
}

std::unique_ptr<Model> load_model(const std::string& path, AdamW* opt,
                                  std::mt19937_64* rng) {
  CheckpointMeta meta = read_checkpoint_meta(path);
  TrainConfig cfg = config_from_text(meta.config_text, path + "#config");
  std::istringstream vs(meta.vocab_text);
  Vocabulary vocab = Vocabulary::load(vs, path + "#vocab");
  std::vector<std::string> classes;
  std::istringstream cs(meta.class_names_text);
  std::string line;
  while (std::getline(cs, line))
    if (!line.empty()) classes.push_back(line);
  auto model = std::make_unique<Model>(cfg, std::move(vocab), std::move(classes));
  load_checkpoint(path, *model, opt, rng);
  return model;
}

}  // namespace uvl
