#include "ove6d/nn/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include "ove6d/error.hpp"
#include "ove6d/nn/tensor.hpp"

namespace ove6d::nn {

namespace {

constexpr char kMagic[4] = {'O', 'V', 'C', 'K'};

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string take(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw TruncatedError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  std::string data_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointRecord>& records) {
  std::string out(kMagic, 4);
  put<std::uint16_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    if (r.name.size() > std::numeric_limits<std::uint16_t>::max()) throw InvalidArgument("record name too long");
    put<std::uint16_t>(out, static_cast<std::uint16_t>(r.name.size()));
    out += r.name;
    put<std::uint8_t>(out, static_cast<std::uint8_t>(r.kind));
    if (r.kind == CheckpointRecord::Kind::Bytes) {
      put<std::uint8_t>(out, 1);
      put<std::uint32_t>(out, static_cast<std::uint32_t>(r.bytes.size()));
      out += r.bytes;
      continue;
    }
    if (Tensor<float>::count(r.shape) != r.values.size())
      throw InvalidArgument("record '" + r.name + "' shape does not match its data");
    put<std::uint8_t>(out, static_cast<std::uint8_t>(r.shape.size()));
    for (int d : r.shape) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    out.append(reinterpret_cast<const char*>(r.values.data()), r.values.size() * sizeof(float));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw DataError("write failed for " + path.string());
}

std::vector<CheckpointRecord> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path.string());
  Reader rd(std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>()));
  if (rd.take(4) != std::string(kMagic, 4)) throw FormatError("not an OVCK checkpoint: " + path.string());
  const auto version = rd.get<std::uint16_t>();
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto count = rd.get<std::uint32_t>();
  std::vector<CheckpointRecord> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointRecord r;
    r.name = rd.take(rd.get<std::uint16_t>());
    const auto kind = rd.get<std::uint8_t>();
    const auto rank = rd.get<std::uint8_t>();
    for (int k = 0; k < rank; ++k) r.shape.push_back(static_cast<int>(rd.get<std::uint32_t>()));
    if (kind == static_cast<std::uint8_t>(CheckpointRecord::Kind::Bytes)) {
      if (rank != 1) throw FormatError("byte record '" + r.name + "' must have rank 1");
      r.kind = CheckpointRecord::Kind::Bytes;
      r.bytes = rd.take(static_cast<std::size_t>(r.shape[0]));
      r.shape.clear();
    } else if (kind == static_cast<std::uint8_t>(CheckpointRecord::Kind::F32)) {
      const std::string raw = rd.take(Tensor<float>::count(r.shape) * sizeof(float));
      r.values.resize(raw.size() / sizeof(float));
      std::memcpy(r.values.data(), raw.data(), raw.size());
    } else {
      throw FormatError("unknown dtype tag " + std::to_string(kind) + " in record '" + r.name + "'");
    }
    out.push_back(std::move(r));
  }
  if (!rd.done()) throw FormatError("trailing bytes after checkpoint records");
  return out;
}

}  // namespace ove6d::nn
