#include "hybridnet/vocab.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "hybridnet/error.hpp"

namespace hybridnet {

namespace {

const std::vector<std::string>& reserved_tokens() {
  static const std::vector<std::string> kReserved = {"<pad>", "<bos>", "<eos>", "<unk>"};
  return kReserved;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::vector<std::string> split_tokens(std::string_view sentence) {
  std::vector<std::string> out;
  std::size_t i = 0;
  auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; };
  while (i < sentence.size()) {
    while (i < sentence.size() && is_space(sentence[i])) ++i;
    std::size_t j = i;
    while (j < sentence.size() && !is_space(sentence[j])) ++j;
    if (j > i) out.emplace_back(sentence.substr(i, j - i));
    i = j;
  }
  return out;
}

std::vector<ManifestRow> parse_manifest(std::string_view text) {
  std::vector<ManifestRow> rows;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    ++line_no;
    pos = end + 1;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) {
      if (end == text.size()) break;
      continue;
    }
    std::vector<std::string> fields;
    std::size_t s = 0;
    while (true) {
      const std::size_t t = line.find('\t', s);
      fields.emplace_back(line.substr(s, t == std::string_view::npos ? std::string_view::npos : t - s));
      if (t == std::string_view::npos) break;
      s = t + 1;
    }
    if (fields.size() != 5 || fields[0].empty()) {
      throw DataError("manifest line " + std::to_string(line_no) + ": expected 5 tab-separated fields, got " +
                      std::to_string(fields.size()));
    }
    rows.push_back(ManifestRow{fields[0], fields[1], fields[2], fields[3], fields[4]});
    if (end == text.size()) break;
  }
  return rows;
}

std::vector<ManifestRow> read_manifest(const std::filesystem::path& path) { return parse_manifest(read_text(path)); }

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& r : rows) {
    out << r.id << '\t' << r.caption << '\t' << r.attribute << '\t' << r.effect << '\t' << r.intention << '\n';
  }
}

Vocab::Vocab() : Vocab(reserved_tokens()) {}

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<int>(i)).second) {
      throw DataError("duplicate vocabulary token '" + tokens_[i] + "'");
    }
  }
}

Vocab Vocab::build(const std::vector<ManifestRow>& rows) {
  const auto& reserved = reserved_tokens();
  std::set<std::string> seen;
  for (const auto& r : rows) {
    for (const std::string* field : {&r.caption, &r.attribute, &r.effect, &r.intention}) {
      for (auto& tok : split_tokens(*field)) {
        if (std::find(reserved.begin(), reserved.end(), tok) == reserved.end()) seen.insert(std::move(tok));
      }
    }
  }
  std::vector<std::string> tokens = reserved;
  tokens.insert(tokens.end(), seen.begin(), seen.end());
  return Vocab(std::move(tokens));
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::vector<std::string> tokens;
  std::istringstream in(read_text(path));
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  const auto& reserved = reserved_tokens();
  if (tokens.size() < reserved.size() || !std::equal(reserved.begin(), reserved.end(), tokens.begin())) {
    throw DataError(path.string() + ": vocabulary must start with <pad>, <bos>, <eos>, <unk>");
  }
  return Vocab(std::move(tokens));
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

int Vocab::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? 3 : it->second;
}

bool Vocab::contains(std::string_view token) const { return index_.count(std::string(token)) > 0; }

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw DataError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocab::encode(std::string_view sentence) const {
  std::vector<int> ids;
  for (const auto& tok : split_tokens(sentence)) ids.push_back(id(tok));
  return ids;
}

std::string Vocab::decode(std::span<const int> ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += token(ids[i]);
  }
  return out;
}

std::uint64_t Vocab::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& t : tokens_) {
    for (unsigned char c : t) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    h ^= static_cast<unsigned char>('\n');
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace hybridnet
