#include "maeface/vitmae/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <zlib.h>

#include "maeface/error.hpp"

namespace maeface {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

const ArchiveEntry* Archive::find(const std::string& name) const {
  for (const auto& e : entries) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

namespace {

class Writer {
 public:
  template <typename U>
  void put(U v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(U));
  }
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  std::vector<char>& buffer() { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(const std::vector<char>& buf, std::size_t end, std::string path) : buf_(buf), end_(end), path_(std::move(path)) {}

  template <typename U>
  U get() {
    U v;
    bytes(&v, sizeof(U));
    return v;
  }
  void bytes(void* out, std::size_t n) {
    if (n > end_ - pos_) throw CheckpointError(path_ + ": truncated archive");
    std::memcpy(out, buf_.data() + pos_, n);
    pos_ += n;
  }
  std::string str(std::size_t n) {
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  std::size_t remaining() const { return end_ - pos_; }

 private:
  const std::vector<char>& buf_;
  std::size_t end_;
  std::size_t pos_ = 0;
  std::string path_;
};

std::uint32_t crc_of(const char* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks for large archives.
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

void write_archive(const std::string& path, const Magic& magic, const Archive& archive) {
  Writer w;
  w.bytes(magic.data(), magic.size());
  w.put<std::uint32_t>(kArchiveVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(archive.header.size()));
  w.bytes(archive.header.data(), archive.header.size());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(archive.entries.size()));
  std::uint64_t offset = 0;
  for (const auto& e : archive.entries) {
    if (shape_numel(e.shape) != e.data.size()) throw CheckpointError("archive entry '" + e.name + "' has inconsistent size");
    w.put<std::uint16_t>(static_cast<std::uint16_t>(e.name.size()));
    w.bytes(e.name.data(), e.name.size());
    w.put<std::uint8_t>(e.kind);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(e.shape.size()));
    for (std::size_t d : e.shape) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    w.put<std::uint64_t>(offset);
    offset += e.data.size();
  }
  w.put<std::uint64_t>(offset);
  for (const auto& e : archive.entries) w.bytes(e.data.data(), e.data.size() * sizeof(float));
  w.put<std::uint32_t>(crc_of(w.buffer().data(), w.buffer().size()));

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot open '" + tmp + "' for writing");
    out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
    if (!out) throw CheckpointError("write to '" + tmp + "' failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw CheckpointError("cannot move '" + tmp + "' to '" + path + "': " + ec.message());
}

Archive read_archive(const std::string& path, const Magic& magic) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < 12) throw CheckpointError(path + ": truncated archive (" + std::to_string(buf.size()) + " bytes)");
  if (std::memcmp(buf.data(), magic.data(), 4) != 0) {
    throw CheckpointError(path + ": bad magic, expected '" + std::string(magic.data(), 4) + "'");
  }
  std::uint32_t stored;
  std::memcpy(&stored, buf.data() + buf.size() - 4, 4);
  if (stored != crc_of(buf.data(), buf.size() - 4)) throw CheckpointError(path + ": checksum mismatch (corrupt or truncated)");

  Reader r(buf, buf.size() - 4, path);
  r.str(4);
  const auto version = r.get<std::uint32_t>();
  if (version != kArchiveVersion) {
    throw CheckpointError(path + ": unsupported version " + std::to_string(version) + ", expected " +
                          std::to_string(kArchiveVersion));
  }
  Archive a;
  a.header = r.str(r.get<std::uint32_t>());
  const auto count = r.get<std::uint32_t>();
  std::vector<std::uint64_t> offsets;
  for (std::uint32_t i = 0; i < count; ++i) {
    ArchiveEntry e;
    e.name = r.str(r.get<std::uint16_t>());
    e.kind = r.get<std::uint8_t>();
    const auto rank = r.get<std::uint8_t>();
    for (std::uint8_t k = 0; k < rank; ++k) e.shape.push_back(r.get<std::uint32_t>());
    offsets.push_back(r.get<std::uint64_t>());
    a.entries.push_back(std::move(e));
  }
  const auto total = r.get<std::uint64_t>();
  if (total * sizeof(float) != r.remaining()) throw CheckpointError(path + ": payload size does not match table");
  std::vector<float> data(total);
  r.bytes(data.data(), total * sizeof(float));
  for (std::size_t i = 0; i < a.entries.size(); ++i) {
    auto& e = a.entries[i];
    const std::size_t n = shape_numel(e.shape);
    if (offsets[i] + n > total) throw CheckpointError(path + ": entry '" + e.name + "' exceeds payload");
    e.data.assign(data.begin() + static_cast<std::ptrdiff_t>(offsets[i]),
                  data.begin() + static_cast<std::ptrdiff_t>(offsets[i] + n));
  }
  return a;
}

std::string LoadReport::describe() const {
  std::ostringstream os;
  os << loaded.size() << " loaded";
  auto list = [&os](const char* label, const std::vector<std::string>& v) {
    if (v.empty()) return;
    os << "; " << label << ":";
    for (const auto& s : v) os << ' ' << s;
  };
  list("missing", missing);
  list("unexpected", unexpected);
  list("shape mismatch", mismatched);
  return os.str();
}

template <typename T>
void save_weights(const ModelWeights<T>& weights, const std::string& path) {
  Archive a;
  a.header = weights.config.to_text();
  for (const auto& p : weights.params) {
    ArchiveEntry e{p.name, static_cast<std::uint8_t>(p.kind), p.value.shape(), {}};
    e.data.reserve(p.value.numel());
    for (T v : p.value.data()) e.data.push_back(static_cast<float>(v));
    a.entries.push_back(std::move(e));
  }
  write_archive(path, kWeightsMagic, a);
}

namespace {

template <typename T>
LoadReport match(const std::vector<ParamSpec>& specs, const Archive& a, bool encoder_only) {
  LoadReport rep;
  std::map<std::string, const ParamSpec*> wanted;
  for (const auto& s : specs) {
    if (!encoder_only || is_encoder_param(s.name)) wanted[s.name] = &s;
  }
  for (const auto& e : a.entries) {
    auto it = wanted.find(e.name);
    if (it == wanted.end()) {
      if (!encoder_only || is_encoder_param(e.name)) rep.unexpected.push_back(e.name);
      continue;
    }
    if (it->second->shape != e.shape) {
      rep.mismatched.push_back(e.name + " (file " + shape_str(e.shape) + ", model " + shape_str(it->second->shape) + ")");
    } else {
      rep.loaded.push_back(e.name);
    }
    wanted.erase(it);
  }
  for (const auto& [name, spec] : wanted) rep.missing.push_back(name);
  return rep;
}

template <typename T>
Tensor<T> to_tensor(const ArchiveEntry& e) {
  Tensor<T> t(e.shape);
  for (std::size_t i = 0; i < e.data.size(); ++i) t[i] = static_cast<T>(e.data[i]);
  return t;
}

}  // namespace

template <typename T>
ModelWeights<T> load_weights(const std::string& path) {
  const Archive a = read_archive(path, kWeightsMagic);
  ModelConfig config;
  try {
    config = ModelConfig::from_text(a.header);
  } catch (const ConfigError& e) {
    throw CheckpointError(path + ": invalid embedded config: " + e.what());
  }
  const auto specs = param_specs(config);
  const LoadReport rep = match<T>(specs, a, false);
  if (!rep.clean()) throw CheckpointError(path + ": incompatible checkpoint: " + rep.describe());
  ModelWeights<T> w;
  w.config = config;
  for (const auto& s : specs) w.params.push_back({s.name, s.kind, to_tensor<T>(*a.find(s.name))});
  return w;
}

template <typename T>
LoadReport load_encoder_subset(ModelWeights<T>& target, const std::string& path) {
  const Archive a = read_archive(path, kWeightsMagic);
  LoadReport rep = match<T>(param_specs(target.config), a, true);
  if (!rep.clean()) throw CheckpointError(path + ": encoder subset does not fit this model: " + rep.describe());
  for (const auto& name : rep.loaded) target.at(name) = to_tensor<T>(*a.find(name));
  return rep;
}

template void save_weights<float>(const ModelWeights<float>&, const std::string&);
template void save_weights<double>(const ModelWeights<double>&, const std::string&);
template ModelWeights<float> load_weights<float>(const std::string&);
template ModelWeights<double> load_weights<double>(const std::string&);
template LoadReport load_encoder_subset<float>(ModelWeights<float>&, const std::string&);
template LoadReport load_encoder_subset<double>(ModelWeights<double>&, const std::string&);

}  // namespace maeface
