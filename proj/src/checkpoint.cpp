#include "g2sqg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <zlib.h>

#include "g2sqg/errors.hpp"

namespace g2s {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

TensorRecord TensorRecord::from_matrix(std::string name, const Matrix<float>& m) {
  TensorRecord rec{std::move(name), {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())}, {}};
  rec.data.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) rec.data.push_back(m(r, c));
  return rec;
}

Matrix<float> TensorRecord::to_matrix() const {
  if (dims.size() > 2) throw FormatError("tensor '" + name + "' has rank " + std::to_string(dims.size()));
  const Eigen::Index rows = dims.empty() ? 1 : dims[0];
  const Eigen::Index cols = dims.size() == 2 ? dims[1] : 1;
  Matrix<float> m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[k++];
  return m;
}

namespace {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  const std::string& buffer() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}
  void bytes(void* p, std::size_t n) {
    if (pos_ + n > data_.size()) throw IntegrityError("container is truncated");
    std::memcpy(p, data_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    bytes(&v, 4);
    return v;
  }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(const char* p, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large buffers in pieces.
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(p), chunk);
    p += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

void write_container(std::ostream& out, std::span<const TensorRecord> tensors) {
  Writer w;
  w.bytes(kContainerMagic, sizeof kContainerMagic);
  w.u32(kContainerVersion);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    std::size_t count = 1;
    for (auto d : t.dims) count *= d;
    if (count != t.data.size()) throw ShapeError("tensor '" + t.name + "' data does not match its dims");
    w.u32(static_cast<std::uint32_t>(t.name.size()));
    w.bytes(t.name.data(), t.name.size());
    w.u32(static_cast<std::uint32_t>(t.dims.size()));
    for (auto d : t.dims) w.u32(d);
    w.bytes(t.data.data(), t.data.size() * sizeof(float));
  }
  const std::uint32_t crc = crc_of(w.buffer().data(), w.buffer().size());
  out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
  out.write(reinterpret_cast<const char*>(&crc), 4);
  if (!out) throw Error("failed to write container");
}

std::vector<TensorRecord> read_container(std::istream& in) {
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string blob = std::move(ss).str();
  if (blob.size() < sizeof kContainerMagic + 12) throw IntegrityError("container is truncated");
  if (std::memcmp(blob.data(), kContainerMagic, sizeof kContainerMagic) != 0)
    throw IntegrityError("not a checkpoint container (bad magic)");
  std::uint32_t stored_crc = 0;
  std::memcpy(&stored_crc, blob.data() + blob.size() - 4, 4);
  const std::uint32_t actual = crc_of(blob.data(), blob.size() - 4);

  Reader r(std::string_view(blob).substr(0, blob.size() - 4));
  char magic[sizeof kContainerMagic];
  r.bytes(magic, sizeof magic);
  const std::uint32_t version = r.u32();
  if (version != kContainerVersion)
    throw FormatError("unsupported container version " + std::to_string(version) + " (expected " +
                      std::to_string(kContainerVersion) + ")");
  if (stored_crc != actual) throw IntegrityError("container checksum mismatch");

  const std::uint32_t count = r.u32();
  std::vector<TensorRecord> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorRecord t;
    const std::uint32_t len = r.u32();
    if (len > r.remaining()) throw IntegrityError("container is truncated");
    t.name.resize(len);
    r.bytes(t.name.data(), len);
    const std::uint32_t rank = r.u32();
    std::size_t n = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      t.dims.push_back(r.u32());
      n *= t.dims.back();
    }
    if (n * sizeof(float) > r.remaining()) throw IntegrityError("container is truncated");
    t.data.resize(n);
    r.bytes(t.data.data(), n * sizeof(float));
    out.push_back(std::move(t));
  }
  if (r.remaining() != 0) throw IntegrityError("trailing bytes in container");
  return out;
}

void save_container(const std::filesystem::path& path, std::span<const TensorRecord> tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  write_container(out, tensors);
}

std::vector<TensorRecord> load_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  return read_container(in);
}

namespace {

// 64-bit counters are split into 16-bit pieces so every piece is exact in f32.
TensorRecord encode_u64(std::string name, std::uint64_t v) {
  TensorRecord rec{std::move(name), {4}, {}};
  for (int k = 0; k < 4; ++k) rec.data.push_back(static_cast<float>((v >> (16 * k)) & 0xffff));
  return rec;
}

std::uint64_t decode_u64(const TensorRecord& rec) {
  if (rec.data.size() != 4) throw FormatError("tensor '" + rec.name + "' is not a packed counter");
  std::uint64_t v = 0;
  for (int k = 0; k < 4; ++k) v |= static_cast<std::uint64_t>(rec.data[static_cast<std::size_t>(k)]) << (16 * k);
  return v;
}

constexpr std::string_view kParamPrefix = "param/";
constexpr std::string_view kFirstPrefix = "adam.m/";
constexpr std::string_view kSecondPrefix = "adam.v/";

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  std::vector<TensorRecord> recs;
  recs.push_back(encode_u64("meta/config_hash", ck.config_hash));
  recs.push_back(encode_u64("meta/step", ck.optimizer.step));
  if (ck.glove.size() > 0) recs.push_back(TensorRecord::from_matrix("glove", ck.glove));
  for (const auto& [name, m] : ck.params) recs.push_back(TensorRecord::from_matrix(std::string(kParamPrefix) + name, m));
  for (const auto& [name, m] : ck.optimizer.first_moment)
    recs.push_back(TensorRecord::from_matrix(std::string(kFirstPrefix) + name, m));
  for (const auto& [name, m] : ck.optimizer.second_moment)
    recs.push_back(TensorRecord::from_matrix(std::string(kSecondPrefix) + name, m));
  save_container(path, recs);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, std::optional<std::uint64_t> expected_hash,
                           std::vector<std::string>* warnings) {
  Checkpoint ck;
  bool have_hash = false;
  for (const auto& rec : load_container(path)) {
    const std::string_view name = rec.name;
    if (name == "meta/config_hash") {
      ck.config_hash = decode_u64(rec);
      have_hash = true;
    } else if (name == "meta/step") {
      ck.optimizer.step = decode_u64(rec);
    } else if (name == "glove") {
      ck.glove = rec.to_matrix();
    } else if (name.starts_with(kParamPrefix)) {
      ck.params.set(std::string(name.substr(kParamPrefix.size())), rec.to_matrix());
    } else if (name.starts_with(kFirstPrefix)) {
      ck.optimizer.first_moment.set(std::string(name.substr(kFirstPrefix.size())), rec.to_matrix());
    } else if (name.starts_with(kSecondPrefix)) {
      ck.optimizer.second_moment.set(std::string(name.substr(kSecondPrefix.size())), rec.to_matrix());
    } else {
      throw FormatError("checkpoint has unexpected tensor '" + rec.name + "'");
    }
  }
  if (!have_hash) throw FormatError("checkpoint lacks a config hash");
  if (expected_hash && *expected_hash != ck.config_hash && warnings)
    warnings->push_back("checkpoint was trained with a different configuration");
  return ck;
}

}  // namespace g2s
