#include "sed/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "sed/errors.hpp"
#include "sed/hashing.hpp"

namespace sed {

namespace {

constexpr char kMagic[8] = {'S', 'E', 'D', 'C', 'K', 'P', 'T', '\0'};

class Writer {
 public:
  void raw(const void* data, std::size_t n) {
    buf_.append(static_cast<const char*>(data), n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(std::string_view s) {
    u64(s.size());
    raw(s.data(), s.size());
  }
  std::string& buffer() { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw FormatError("checkpoint truncated", pos_);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint64_t n = u64();
    need(n);
    std::string s(bytes_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void Checkpoint::put_parameters(const nn::ParameterStore& params, const std::string& prefix) {
  for (const auto& p : params) tensors.emplace_back(prefix + p.name, p.value);
}

void Checkpoint::get_parameters(nn::ParameterStore& params, const std::string& prefix) const {
  for (auto& p : params) {
    const nn::Matrix& t = tensor(prefix + p.name);
    if (t.rows() != p.value.rows() || t.cols() != p.value.cols()) {
      throw CompatibilityError("checkpoint tensor '" + prefix + p.name + "' has wrong shape");
    }
    p.value = t;
  }
}

const nn::Matrix& Checkpoint::tensor(std::string_view name) const {
  for (const auto& [n, m] : tensors) {
    if (n == name) return m;
  }
  throw CompatibilityError("checkpoint has no tensor '" + std::string(name) + "'");
}

bool Checkpoint::has_tensor(std::string_view name) const {
  for (const auto& [n, m] : tensors) {
    if (n == name) return true;
  }
  return false;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.raw(kMagic, sizeof(kMagic));
  w.u32(Checkpoint::kFormatVersion);
  w.str(ckpt.model_kind);
  w.str(ckpt.config.dump());
  w.u64(static_cast<std::uint64_t>(ckpt.step));
  w.str(ckpt.metadata.dump());
  w.u64(ckpt.tensors.size());
  for (const auto& [name, m] : ckpt.tensors) {
    w.str(name);
    w.u64(static_cast<std::uint64_t>(m.rows()));
    w.u64(static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.size(); ++i) w.f64(m.data()[i]);
  }
  w.u64(content_hash(w.buffer()));
  return std::move(w.buffer());
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw FormatError("not a checkpoint file (bad magic)", 0);
  }
  if (bytes.size() < sizeof(kMagic) + 8) throw FormatError("checkpoint truncated", bytes.size());
  const std::string_view body = bytes.substr(0, bytes.size() - 8);
  Reader trailer(bytes.substr(bytes.size() - 8));
  if (trailer.u64() != content_hash(body)) {
    throw FormatError("checkpoint content hash mismatch", bytes.size() - 8);
  }
  Reader body_reader(body.substr(sizeof(kMagic)));
  Checkpoint ckpt;
  const std::uint32_t version = body_reader.u32();
  if (version != Checkpoint::kFormatVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version), sizeof(kMagic));
  }
  try {
    ckpt.model_kind = body_reader.str();
    ckpt.config = nlohmann::json::parse(body_reader.str());
    ckpt.step = static_cast<std::int64_t>(body_reader.u64());
    ckpt.metadata = nlohmann::json::parse(body_reader.str());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint JSON section: ") + e.what(),
                      sizeof(kMagic) + body_reader.pos());
  }
  const std::uint64_t count = body_reader.u64();
  for (std::uint64_t t = 0; t < count; ++t) {
    std::string name = body_reader.str();
    const auto rows = static_cast<Eigen::Index>(body_reader.u64());
    const auto cols = static_cast<Eigen::Index>(body_reader.u64());
    body_reader.need(static_cast<std::size_t>(rows * cols) * 8);
    nn::Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = body_reader.f64();
    ckpt.tensors.emplace_back(std::move(name), std::move(m));
  }
  if (sizeof(kMagic) + body_reader.pos() != body.size()) {
    throw FormatError("trailing bytes in checkpoint", sizeof(kMagic) + body_reader.pos());
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::string bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

std::string checkpoint_hash(const Checkpoint& ckpt) {
  const std::string bytes = serialize_checkpoint(ckpt);
  return to_hex(content_hash(std::string_view(bytes).substr(0, bytes.size() - 8)));
}

}  // namespace sed
