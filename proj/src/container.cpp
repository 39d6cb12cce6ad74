#include "vafuse/container.hpp"

#include "vafuse/error.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace vafuse {
namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put_f64(std::string& out, double d) {
  const auto bits = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  double f64() {
    need(8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(bits);
  }

  std::string text(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw DataError("tensor container truncated at byte " + std::to_string(pos_));
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_container(const std::vector<NamedArray>& entries) {
  std::string out(kContainerMagic, 4);
  put_u32(out, kContainerVersion);
  put_u32(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    if (numel(e.shape) != e.values.size()) {
      throw DimensionError("container entry '" + e.name + "': shape " + to_string(e.shape) + " vs " +
                           std::to_string(e.values.size()) + " values");
    }
    put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    put_u32(out, static_cast<std::uint32_t>(e.shape.size()));
    for (auto extent : e.shape) put_u32(out, static_cast<std::uint32_t>(extent));
    for (double v : e.values) put_f64(out, v);
  }
  return out;
}

std::vector<NamedArray> decode_container(const std::string& bytes) {
  Reader in(bytes);
  if (in.text(4) != std::string(kContainerMagic, 4)) throw DataError("not a VAFC tensor container");
  const auto version = in.u32();
  if (version != kContainerVersion) throw DataError("unsupported container version " + std::to_string(version));
  const auto count = in.u32();
  std::vector<NamedArray> entries;
  entries.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    NamedArray e;
    e.name = in.text(in.u32());
    const auto rank = in.u32();
    for (std::uint32_t d = 0; d < rank; ++d) e.shape.push_back(in.u32());
    const auto n = numel(e.shape);
    e.values.resize(n);
    for (auto& v : e.values) v = in.f64();
    entries.push_back(std::move(e));
  }
  if (!in.done()) throw DataError("trailing bytes after tensor container");
  return entries;
}

void write_container(const std::filesystem::path& path, const std::vector<NamedArray>& entries) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  const auto bytes = encode_container(entries);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw DataError("write failed: " + path.string());
}

std::vector<NamedArray> read_container(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  try {
    return decode_container(ss.str());
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

NamedArray to_named(const std::string& name, const Tensor& t) { return {name, t.shape(), t.to_vector()}; }

Tensor to_tensor(const NamedArray& entry, bool requires_grad) {
  return Tensor(entry.shape, entry.values, requires_grad);
}

}  // namespace vafuse
