#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace hybridnet {

/// Splits on ASCII whitespace.
std::vector<std::string> split_tokens(std::string_view sentence);

/// One manifest line: id, caption, attribute, effect, intention.
struct ManifestRow {
  std::string id;
  std::string caption;
  std::string attribute;
  std::string effect;
  std::string intention;
};

/// Reads a tab-separated manifest. Blank lines are skipped; a line without
/// exactly five fields raises DataError naming the line number.
std::vector<ManifestRow> read_manifest(const std::filesystem::path& path);
std::vector<ManifestRow> parse_manifest(std::string_view text);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRow>& rows);

/// Token table. Ids 0..3 are <pad>, <bos>, <eos>, <unk>; the remaining tokens
/// follow in lexicographic order.
class Vocab {
 public:
  Vocab();

  /// Collects every token of every sentence field in `rows`.
  static Vocab build(const std::vector<ManifestRow>& rows);
  static Vocab load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::size_t size() const noexcept { return tokens_.size(); }
  /// Id of `token`, or <unk>.
  int id(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token(int id) const;
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  std::vector<int> encode(std::string_view sentence) const;
  std::string decode(std::span<const int> ids) const;

  /// FNV-1a 64 over the newline-joined token list.
  std::uint64_t hash() const;

 private:
  explicit Vocab(std::vector<std::string> tokens);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

std::string hash_hex(std::uint64_t h);

}  // namespace hybridnet
