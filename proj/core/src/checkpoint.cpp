#include "hybridnet/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "hybridnet/error.hpp"

namespace hybridnet {

namespace {

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

constexpr char kMagic[4] = {'H', 'Y', 'B', 'R'};

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string_view take(std::size_t n) {
    need(n);
    std::string_view s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw DataError("archive truncated at byte " + std::to_string(pos_));
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::uint32_t crc32_of(std::string_view bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::string encode_archive(const TensorArchive& archive, DType dtype) {
  std::string out(kMagic, 4);
  put<std::uint32_t>(out, kArchiveVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(archive.records.size()));
  for (const auto& rec : archive.records) {
    if (rec.name.size() > std::numeric_limits<std::uint16_t>::max()) throw DataError("tensor name too long");
    if (rec.tensor.rank() > std::numeric_limits<std::uint8_t>::max()) throw DataError("tensor rank too large");
    put<std::uint16_t>(out, static_cast<std::uint16_t>(rec.name.size()));
    out += rec.name;
    put<std::uint8_t>(out, static_cast<std::uint8_t>(dtype));
    put<std::uint8_t>(out, static_cast<std::uint8_t>(rec.tensor.rank()));
    for (std::size_t e : rec.tensor.shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(e));
    for (double v : rec.tensor.data()) {
      if (dtype == DType::kF64) {
        put<double>(out, v);
      } else {
        put<float>(out, static_cast<float>(v));
      }
    }
  }
  put<std::uint32_t>(out, static_cast<std::uint32_t>(archive.text.size()));
  out += archive.text;
  put<std::uint32_t>(out, crc32_of(out));
  return out;
}

TensorArchive decode_archive(std::string_view bytes) {
  if (bytes.size() < 4 + 4 + 4 + 4 + 4 || bytes.substr(0, 4) != std::string_view(kMagic, 4)) {
    throw DataError("not a HYBR archive");
  }
  const std::string_view payload = bytes.substr(0, bytes.size() - 4);
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + payload.size(), 4);
  if (stored != crc32_of(payload)) throw DataError("archive CRC mismatch");

  Reader r(payload);
  r.take(4);
  const auto version = r.get<std::uint32_t>();
  if (version != kArchiveVersion) throw DataError("unsupported archive version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>();
  TensorArchive archive;
  archive.records.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor rec;
    rec.name = std::string(r.take(r.get<std::uint16_t>()));
    const auto dtype = r.get<std::uint8_t>();
    if (dtype > 1) throw DataError("record '" + rec.name + "': unknown dtype " + std::to_string(dtype));
    const auto rank = r.get<std::uint8_t>();
    Shape shape(rank);
    for (auto& e : shape) e = r.get<std::uint32_t>();
    Tensor t(shape);
    for (double& v : t.data()) v = dtype == 1 ? r.get<double>() : static_cast<double>(r.get<float>());
    rec.tensor = std::move(t);
    archive.records.push_back(std::move(rec));
  }
  archive.text = std::string(r.take(r.get<std::uint32_t>()));
  if (r.pos() != payload.size()) throw DataError("trailing bytes after archive text block");
  return archive;
}

void write_archive(const std::filesystem::path& path, const TensorArchive& archive, DType dtype) {
  const std::string bytes = encode_archive(archive, dtype);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

TensorArchive read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return decode_archive(ss.str());
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const ParamStore& store, const std::string& config_text,
                     DType dtype) {
  TensorArchive archive;
  archive.text = config_text;
  archive.records.reserve(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) archive.records.push_back({store.name(i), store.value(i)});
  const std::filesystem::path tmp = path.string() + ".tmp";
  write_archive(tmp, archive, dtype);
  std::filesystem::rename(tmp, path);
}

void restore_params(const TensorArchive& archive, ParamStore& store) {
  if (archive.records.size() != store.size()) {
    throw DataError("checkpoint holds " + std::to_string(archive.records.size()) + " tensors, model expects " +
                    std::to_string(store.size()));
  }
  std::unordered_set<std::string> seen;
  for (const auto& rec : archive.records) {
    const auto id = store.find(rec.name);
    if (!id) throw DataError("checkpoint tensor '" + rec.name + "' is not a model parameter");
    if (!seen.insert(rec.name).second) throw DataError("checkpoint repeats tensor '" + rec.name + "'");
    Tensor& dst = store.value(*id);
    if (dst.shape() != rec.tensor.shape()) {
      throw DataError("checkpoint tensor '" + rec.name + "' has shape " + shape_str(rec.tensor.shape()) +
                      ", model expects " + shape_str(dst.shape()));
    }
    dst = rec.tensor;
  }
}

}  // namespace hybridnet
