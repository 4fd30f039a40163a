#include "pvc/model/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "pvc/hash.hpp"

namespace fs = std::filesystem;

namespace pvc::model {
namespace {

constexpr char kMagic[8] = {'P', 'V', 'C', 'C', 'K', 'P', 'T', '1'};

void put_u64(std::ostream& out, u64 v) { out.write(reinterpret_cast<const char*>(&v), sizeof(v)); }

u64 get_u64(std::istream& in, const std::string& path) {
  u64 v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(v))) fail("checkpoint truncated: " + path);
  return v;
}

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : blobs)
    if (n == name) return &t;
  return nullptr;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) fail("cannot write checkpoint: " + path);
    out.write(kMagic, sizeof(kMagic));
    put_u64(out, ckpt.config_hash);
    put_u64(out, ckpt.step);
    for (u64 w : ckpt.rng_state) put_u64(out, w);
    put_u64(out, (u64)ckpt.blobs.size());
    for (const auto& [name, t] : ckpt.blobs) {
      put_u64(out, (u64)name.size());
      out.write(name.data(), (std::streamsize)name.size());
      put_u64(out, (u64)t.shape.size());
      for (i64 d : t.shape) put_u64(out, (u64)d);
      put_u64(out, (u64)t.numel());
      out.write(reinterpret_cast<const char*>(t.data.data()),
                (std::streamsize)(t.data.size() * sizeof(double)));
    }
    if (!out) fail("short write for checkpoint: " + path);
  }
  fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open checkpoint: " + path);
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    fail("not a checkpoint file (bad magic): " + path);
  Checkpoint ckpt;
  ckpt.config_hash = get_u64(in, path);
  ckpt.step = get_u64(in, path);
  for (auto& w : ckpt.rng_state) w = get_u64(in, path);
  const u64 n_blobs = get_u64(in, path);
  for (u64 i = 0; i < n_blobs; ++i) {
    const u64 name_len = get_u64(in, path);
    if (name_len > 4096) fail("checkpoint blob name too long: " + path);
    std::string name(name_len, '\0');
    if (!in.read(name.data(), (std::streamsize)name_len)) fail("checkpoint truncated: " + path);
    const u64 rank = get_u64(in, path);
    if (rank > 8) fail("checkpoint blob rank too large: " + path);
    std::vector<i64> shape;
    i64 expect = 1;
    for (u64 r = 0; r < rank; ++r) {
      shape.push_back((i64)get_u64(in, path));
      expect *= shape.back();
    }
    const u64 numel = get_u64(in, path);
    if ((i64)numel != expect) fail("checkpoint blob shape/size mismatch: " + path);
    Tensor t(shape);
    if (!in.read(reinterpret_cast<char*>(t.data.data()),
                 (std::streamsize)(numel * sizeof(double))))
      fail("checkpoint truncated: " + path);
    ckpt.blobs.emplace_back(std::move(name), std::move(t));
  }
  return ckpt;
}

void store_params(Checkpoint& ckpt, const std::string& prefix,
                  const std::vector<std::pair<std::string, nn::Var>>& params) {
  for (const auto& [name, var] : params) ckpt.blobs.emplace_back(prefix + name, var.value());
}

void load_params(const Checkpoint& ckpt, const std::string& prefix,
                 const std::vector<std::pair<std::string, nn::Var>>& params) {
  for (const auto& [name, var] : params) {
    const Tensor* t = ckpt.find(prefix + name);
    if (!t) fail("checkpoint is missing parameter '" + prefix + name + "'");
    if (t->shape != var.value().shape)
      fail("checkpoint parameter '" + prefix + name + "' has shape " + t->shape_str() +
           ", model expects " + var.value().shape_str());
    const_cast<nn::Var&>(var).value() = *t;
  }
}

u64 params_fingerprint(const std::vector<std::pair<std::string, nn::Var>>& params, u64 step) {
  u64 h = fnv1a64("pvc-params");
  for (const auto& [name, var] : params) {
    h = hash_combine(h, fnv1a64(name));
    const auto& data = var.value().data;
    u64 b = 1469598103934665603ull;
    for (double v : data) {
      u64 bits;
      std::memcpy(&bits, &v, sizeof(bits));
      b = (b ^ bits) * 1099511628211ull;
    }
    h = hash_combine(h, b);
  }
  return hash_combine(h, mix64(step));
}

}  // namespace pvc::model
