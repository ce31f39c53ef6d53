// Copyright 2026 The ssladd Authors
// SPDX-License-Identifier: Apache-2.0

#include "ssladd/checkpoint.hpp"

#include <bit>
#include <boost/crc.hpp>
#include <charconv>
#include <cstring>
#include <fstream>

namespace ssladd {

namespace {

constexpr char kMagic[8] = {'S', 'S', 'L', 'A', 'D', 'D', 'C', 'K'};
constexpr std::uint8_t kDtypeF64 = 1;
constexpr std::uint8_t kKindParam = 0;
constexpr std::uint8_t kKindBuffer = 1;
constexpr const char* kExtraPrefix = "extra.";

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class Writer {
 public:
  template <class T>
  void Put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  void PutString(const std::string& s) {
    Put(static_cast<std::uint32_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  void PutRaw(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size, const std::string& origin)
      : data_(data), size_(size), origin_(origin) {}

  void Need(std::size_t n, const char* what) const {
    if (size_ - pos_ < n)
      Fail(ErrorCategory::kFormat, origin_ + ": truncated checkpoint at offset " + std::to_string(pos_) + " (reading " +
                                       what + ", need " + std::to_string(n) + " bytes, " +
                                       std::to_string(size_ - pos_) + " left)");
  }
  template <class T>
  T Get(const char* what) {
    Need(sizeof(T), what);
    T v;
    std::memcpy(&v, data_ + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string GetString(const char* what) {
    const auto n = Get<std::uint32_t>(what);
    Need(n, what);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }
  void GetRaw(void* out, std::size_t n, const char* what) {
    Need(n, what);
    std::memcpy(out, data_ + pos_, n);
    pos_ += n;
  }
  std::size_t pos() const { return pos_; }
  [[noreturn]] void Error(const std::string& msg) const {
    Fail(ErrorCategory::kFormat, origin_ + ": " + msg + " at offset " + std::to_string(pos_));
  }

 private:
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
  const std::string& origin_;
};

std::uint32_t Crc32(const std::uint8_t* data, std::size_t n) {
  boost::crc_32_type crc;
  crc.process_bytes(data, n);
  return crc.checksum();
}

std::string FormatReal(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

void PutTensor(Writer& w, const std::string& name, std::uint8_t kind, std::uint8_t group, bool frozen,
               const Tensor& t) {
  w.PutString(name);
  w.Put(kind);
  w.Put(group);
  w.Put(static_cast<std::uint8_t>(frozen ? 1 : 0));
  w.Put(kDtypeF64);
  w.Put(static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) w.Put(static_cast<std::uint64_t>(d));
  w.Put(static_cast<std::uint64_t>(t.size() * sizeof(double)));
  w.PutRaw(t.data(), t.size() * sizeof(double));
}

}  // namespace

std::vector<std::uint8_t> SerializeCheckpoint(const Checkpoint& ckpt) {
  std::map<std::string, std::string> meta;
  meta["config"] = FormatRunConfig(ckpt.config);
  meta["stage"] = ckpt.stage;
  meta["epoch"] = std::to_string(ckpt.epoch);
  meta["best_metric"] = FormatReal(ckpt.best_metric);
  for (const auto& [k, v] : ckpt.extra) meta[kExtraPrefix + k] = v;

  Writer w;
  w.PutRaw(kMagic, sizeof kMagic);
  w.Put(kCheckpointVersion);
  w.Put(static_cast<std::uint32_t>(meta.size()));
  for (const auto& [k, v] : meta) {
    w.PutString(k);
    w.PutString(v);
  }
  const ParameterStore& store = ckpt.model.store();
  w.Put(static_cast<std::uint32_t>(store.size() + store.buffers().size()));
  for (const Parameter& p : store.params())
    PutTensor(w, p.name, kKindParam, static_cast<std::uint8_t>(p.group), p.frozen, p.value);
  for (const Buffer& b : store.buffers()) PutTensor(w, b.name, kKindBuffer, 0, true, b.value);
  w.Put(Crc32(w.bytes().data(), w.bytes().size()));
  return std::move(w.bytes());
}

Checkpoint DeserializeCheckpoint(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
  Reader r(bytes.data(), bytes.size(), origin);
  char magic[8];
  r.GetRaw(magic, sizeof magic, "magic");
  if (std::memcmp(magic, kMagic, sizeof magic) != 0)
    Fail(ErrorCategory::kFormat, origin + ": not a checkpoint file (bad magic at offset 0)");
  const auto version = r.Get<std::uint32_t>("version");
  if (version != kCheckpointVersion)
    Fail(ErrorCategory::kFormat, origin + ": unsupported checkpoint version " + std::to_string(version) +
                                     " (this build reads version " + std::to_string(kCheckpointVersion) + ")");
  // Parse the body against everything except the trailing checksum.
  Reader body(bytes.data(), bytes.size() - 4, origin);
  body.GetRaw(magic, sizeof magic, "magic");
  body.Get<std::uint32_t>("version");

  std::map<std::string, std::string> meta;
  const auto n_meta = body.Get<std::uint32_t>("metadata count");
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string k = body.GetString("metadata key");
    meta[k] = body.GetString("metadata value");
  }
  ParameterStore store;
  const auto n_entries = body.Get<std::uint32_t>("parameter count");
  for (std::uint32_t i = 0; i < n_entries; ++i) {
    std::string name = body.GetString("parameter name");
    const auto kind = body.Get<std::uint8_t>("parameter kind");
    const auto group = body.Get<std::uint8_t>("parameter group");
    const auto frozen = body.Get<std::uint8_t>("frozen flag");
    const auto dtype = body.Get<std::uint8_t>("dtype");
    if (dtype != kDtypeF64) body.Error("unsupported dtype " + std::to_string(dtype) + " for '" + name + "'");
    if (kind > kKindBuffer || group > static_cast<std::uint8_t>(ParamGroup::kHead) || frozen > 1)
      body.Error("invalid entry header for '" + name + "'");
    const auto rank = body.Get<std::uint32_t>("rank");
    if (rank == 0 || rank > 8) body.Error("invalid rank " + std::to_string(rank) + " for '" + name + "'");
    Shape shape(rank);
    std::uint64_t count = 1;
    for (auto& d : shape) {
      const auto e = body.Get<std::uint64_t>("extent");
      if (e == 0 || e > (std::uint64_t{1} << 32)) body.Error("invalid extent for '" + name + "'");
      d = static_cast<std::size_t>(e);
      count *= e;
      if (count > (std::uint64_t{1} << 34)) body.Error("tensor too large for '" + name + "'");
    }
    const auto nbytes = body.Get<std::uint64_t>("byte count");
    if (nbytes != count * sizeof(double)) body.Error("byte count does not match shape for '" + name + "'");
    body.Need(static_cast<std::size_t>(nbytes), "tensor data");
    std::vector<double> data(static_cast<std::size_t>(count));
    body.GetRaw(data.data(), static_cast<std::size_t>(nbytes), "tensor data");
    Tensor t(std::move(shape), std::move(data));
    if (kind == kKindParam) {
      const std::size_t id = store.Add(std::move(name), std::move(t), static_cast<ParamGroup>(group));
      store.at(id).frozen = frozen != 0;
    } else {
      store.AddBuffer(std::move(name), std::move(t));
    }
  }
  if (body.pos() != bytes.size() - 4) body.Error("unexpected trailing data");
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, bytes.data() + bytes.size() - 4, 4);
  if (stored_crc != Crc32(bytes.data(), bytes.size() - 4))
    Fail(ErrorCategory::kFormat, origin + ": checksum mismatch (file corrupt) at offset " +
                                     std::to_string(bytes.size() - 4));

  auto need = [&](const char* key) -> const std::string& {
    auto it = meta.find(key);
    if (it == meta.end()) Fail(ErrorCategory::kFormat, origin + ": checkpoint metadata lacks '" + key + "'");
    return it->second;
  };
  Checkpoint ck;
  ck.config = ParseRunConfig(need("config"), origin + " [embedded config]");
  ck.stage = need("stage");
  {
    const std::string& e = need("epoch");
    auto [p, ec] = std::from_chars(e.data(), e.data() + e.size(), ck.epoch);
    if (ec != std::errc() || p != e.data() + e.size()) Fail(ErrorCategory::kFormat, origin + ": bad epoch '" + e + "'");
    const std::string& b = need("best_metric");
    auto [p2, ec2] = std::from_chars(b.data(), b.data() + b.size(), ck.best_metric);
    if (ec2 != std::errc() || p2 != b.data() + b.size())
      Fail(ErrorCategory::kFormat, origin + ": bad best_metric '" + b + "'");
  }
  for (const auto& [k, v] : meta)
    if (k.starts_with(kExtraPrefix)) ck.extra[k.substr(std::strlen(kExtraPrefix))] = v;
  try {
    ck.model = Model::FromStore(ck.config.model, std::move(store));
  } catch (const Error& e) {
    Fail(e.category(), origin + ": " + e.what());
  }
  return ck;
}

void SaveCheckpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::vector<std::uint8_t> bytes = SerializeCheckpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) Fail(ErrorCategory::kIo, "cannot write checkpoint '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) Fail(ErrorCategory::kIo, "error writing checkpoint '" + path.string() + "'");
}

Checkpoint LoadCheckpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) Fail(ErrorCategory::kIo, "cannot open checkpoint '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return DeserializeCheckpoint(bytes, path.string());
}

}  // namespace ssladd
