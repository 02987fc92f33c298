#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "hybridnet/param_store.hpp"
#include "hybridnet/tensor.hpp"

namespace hybridnet {

enum class DType : std::uint8_t { kF32 = 0, kF64 = 1 };

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Binary tensor-record container shared by checkpoints and feature files:
/// "HYBR", u32 version, u32 count, records (u16 name length, name, u8 dtype,
/// u8 rank, u32 extents, little-endian data), u32 text length + text, u32 CRC32
/// of every preceding byte.
struct TensorArchive {
  std::vector<NamedTensor> records;
  std::string text;
};

inline constexpr std::uint32_t kArchiveVersion = 1;

std::string encode_archive(const TensorArchive& archive, DType dtype = DType::kF64);
/// Throws DataError on bad magic, version, truncation or CRC mismatch.
TensorArchive decode_archive(std::string_view bytes);

void write_archive(const std::filesystem::path& path, const TensorArchive& archive, DType dtype = DType::kF64);
TensorArchive read_archive(const std::filesystem::path& path);

/// Writes every parameter in store order plus `config_text`.
void save_checkpoint(const std::filesystem::path& path, const ParamStore& store, const std::string& config_text,
                     DType dtype = DType::kF64);

/// Copies tensors from `archive` into an already-built `store`. Names and
/// shapes must match exactly; throws DataError otherwise.
void restore_params(const TensorArchive& archive, ParamStore& store);

}  // namespace hybridnet
