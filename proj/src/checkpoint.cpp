#include "slack/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace slack {

namespace {

constexpr char kMagic[4] = {'S', 'L', 'K', 'C'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& b, std::uint32_t v) { b.append(reinterpret_cast<const char*>(&v), 4); }

void put_str(std::string& b, const std::string& s) {
  put_u32(b, static_cast<std::uint32_t>(s.size()));
  b += s;
}

class Reader {
 public:
  Reader(const std::string& b, std::string where) : b_(b), where_(std::move(where)) {}

  void need(std::size_t n) {
    if (off_ + n > b_.size()) fail(ErrorCode::kTruncated, where_ + ": truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v;
    std::memcpy(&v, b_.data() + off_, 4);
    off_ += 4;
    return v;
  }
  std::string str() {
    const auto n = u32();
    need(n);
    std::string s = b_.substr(off_, n);
    off_ += n;
    return s;
  }
  void doubles(double* dst, std::size_t n) {
    need(n * 8);
    std::memcpy(dst, b_.data() + off_, n * 8);
    off_ += n * 8;
  }
  bool done() const { return off_ == b_.size(); }

 private:
  const std::string& b_;
  std::string where_;
  std::size_t off_ = 0;
};

}  // namespace

std::string kv_get(const KeyValues& kv, const std::string& key) {
  for (const auto& [k, v] : kv) {
    if (k == key) return v;
  }
  fail(ErrorCode::kFormat, "missing config key '" + key + "'");
}

std::string kv_get(const KeyValues& kv, const std::string& key, const std::string& fallback) {
  for (const auto& [k, v] : kv) {
    if (k == key) return v;
  }
  return fallback;
}

void kv_set(KeyValues& kv, const std::string& key, const std::string& value) {
  for (auto& [k, v] : kv) {
    if (k == key) {
      v = value;
      return;
    }
  }
  kv.emplace_back(key, value);
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string b(kMagic, 4);
  put_u32(b, kVersion);
  put_str(b, ckpt.kind);
  put_u32(b, static_cast<std::uint32_t>(ckpt.config.size()));
  for (const auto& [k, v] : ckpt.config) {
    put_str(b, k);
    put_str(b, v);
  }
  put_u32(b, static_cast<std::uint32_t>(ckpt.params.count()));
  for (std::size_t i = 0; i < ckpt.params.count(); ++i) {
    const nn::Tensor& t = ckpt.params.value(i);
    put_str(b, ckpt.params.name(i));
    put_u32(b, static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) put_u32(b, static_cast<std::uint32_t>(d));
    b.append(reinterpret_cast<const char*>(t.data.data()), t.data.size() * 8);
  }
  return b;
}

Checkpoint deserialize_checkpoint(const std::string& bytes, const std::string& where) {
  if (bytes.size() < 4) fail(ErrorCode::kTruncated, where + ": truncated");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) fail(ErrorCode::kFormat, where + ": bad magic");
  Reader r(bytes, where);
  r.need(4);
  r.u32();  // magic
  const auto version = r.u32();
  require(version == kVersion, ErrorCode::kFormat, where + ": unsupported checkpoint version");
  Checkpoint c;
  c.kind = r.str();
  const auto nkv = r.u32();
  for (std::uint32_t i = 0; i < nkv; ++i) {
    std::string k = r.str();
    c.config.emplace_back(std::move(k), r.str());
  }
  const auto narr = r.u32();
  for (std::uint32_t i = 0; i < narr; ++i) {
    std::string name = r.str();
    const auto ndim = r.u32();
    require(ndim <= 8, ErrorCode::kFormat, where + ": implausible tensor rank");
    std::vector<int> shape;
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      shape.push_back(static_cast<int>(r.u32()));
      n *= static_cast<std::size_t>(shape.back());
    }
    require(n < (std::size_t{1} << 32), ErrorCode::kFormat, where + ": implausible tensor size");
    nn::Tensor t(shape);
    r.doubles(t.data.data(), n);
    c.params.add(name, std::move(t));
  }
  require(r.done(), ErrorCode::kFormat, where + ": trailing bytes");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::string b = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + path.string());
  out.write(b.data(), static_cast<std::streamsize>(b.size()));
  require(static_cast<bool>(out), ErrorCode::kIo, "write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str(), path.string());
}

}  // namespace slack
