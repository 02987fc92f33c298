#include "hybridnet/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <map>

#include "hybridnet/error.hpp"
#include "hybridnet/vocab.hpp"

namespace hybridnet {

namespace {

using NgramCounts = std::map<std::vector<std::string>, int>;

NgramCounts ngrams(const Tokens& toks, int n) {
  NgramCounts out;
  const auto un = static_cast<std::size_t>(n);
  for (std::size_t i = 0; i + un <= toks.size(); ++i) {
    ++out[std::vector<std::string>(toks.begin() + static_cast<std::ptrdiff_t>(i),
                                   toks.begin() + static_cast<std::ptrdiff_t>(i + un))];
  }
  return out;
}

std::size_t lcs(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

void check_pair(const EvalPair& p) {
  if (p.references.empty()) throw DataError("evaluation pair has no references");
}

double meteor_single(const Tokens& hyp, const Tokens& ref) {
  // Greedy alignment: each hypothesis token takes the first unused equal
  // reference token.
  std::vector<bool> used(ref.size(), false);
  std::vector<long> align(hyp.size(), -1);
  std::size_t m = 0;
  for (std::size_t i = 0; i < hyp.size(); ++i) {
    for (std::size_t j = 0; j < ref.size(); ++j) {
      if (!used[j] && hyp[i] == ref[j]) {
        used[j] = true;
        align[i] = static_cast<long>(j);
        ++m;
        break;
      }
    }
  }
  if (m == 0) return 0.0;
  std::size_t chunks = 0;
  long prev = -2;
  bool in_chunk = false;
  for (std::size_t i = 0; i < hyp.size(); ++i) {
    if (align[i] < 0) {
      in_chunk = false;
      continue;
    }
    if (!in_chunk || align[i] != prev + 1) ++chunks;
    in_chunk = true;
    prev = align[i];
  }
  const double md = static_cast<double>(m);
  const double p = md / static_cast<double>(hyp.size());
  const double r = md / static_cast<double>(ref.size());
  const double f = p * r / (0.9 * p + 0.1 * r);
  const double frag = static_cast<double>(chunks) / md;
  return f * (1.0 - 0.5 * frag * frag * frag);
}

}  // namespace

Tokens normalize_tokens(std::string_view sentence) {
  Tokens out;
  for (auto& t : split_tokens(sentence)) {
    std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (t == "<bos>" || t == "<eos>" || t == "<pad>") continue;
    out.push_back(std::move(t));
  }
  return out;
}

double bleu(std::span<const EvalPair> corpus, int n_max) {
  if (n_max < 1 || n_max > 4) throw ConfigError("BLEU order must be in 1..4, got " + std::to_string(n_max));
  std::vector<double> matched(static_cast<std::size_t>(n_max), 0.0), total(static_cast<std::size_t>(n_max), 0.0);
  double c = 0.0, r = 0.0;
  for (const auto& p : corpus) {
    check_pair(p);
    const auto hl = p.hypothesis.size();
    c += static_cast<double>(hl);
    std::size_t best = p.references.front().size();
    for (const auto& ref : p.references) {
      const auto diff = [&](std::size_t len) { return len > hl ? len - hl : hl - len; };
      if (diff(ref.size()) < diff(best) || (diff(ref.size()) == diff(best) && ref.size() < best)) best = ref.size();
    }
    r += static_cast<double>(best);
    for (int n = 1; n <= n_max; ++n) {
      const NgramCounts hyp = ngrams(p.hypothesis, n);
      NgramCounts max_ref;
      for (const auto& ref : p.references) {
        for (const auto& [g, cnt] : ngrams(ref, n)) max_ref[g] = std::max(max_ref[g], cnt);
      }
      const auto idx = static_cast<std::size_t>(n - 1);
      for (const auto& [g, cnt] : hyp) {
        auto it = max_ref.find(g);
        matched[idx] += std::min(cnt, it == max_ref.end() ? 0 : it->second);
        total[idx] += cnt;
      }
    }
  }
  if (c == 0.0) return 0.0;
  double log_sum = 0.0;
  for (std::size_t i = 0; i < matched.size(); ++i) {
    if (matched[i] == 0.0) return 0.0;
    log_sum += std::log(matched[i] / total[i]);
  }
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum / n_max);
}

double rouge_l(const EvalPair& pair) {
  check_pair(pair);
  constexpr double kBeta2 = 1.2 * 1.2;
  double best = 0.0;
  for (const auto& ref : pair.references) {
    const auto l = static_cast<double>(lcs(pair.hypothesis, ref));
    if (l == 0.0) continue;
    const double rec = l / static_cast<double>(ref.size());
    const double prec = l / static_cast<double>(pair.hypothesis.size());
    best = std::max(best, (1.0 + kBeta2) * rec * prec / (rec + kBeta2 * prec));
  }
  return best;
}

double rouge_l(std::span<const EvalPair> corpus) {
  if (corpus.empty()) return 0.0;
  double s = 0.0;
  for (const auto& p : corpus) s += rouge_l(p);
  return s / static_cast<double>(corpus.size());
}

std::vector<double> cider_scores(std::span<const EvalPair> corpus) {
  const double n_docs = static_cast<double>(corpus.size());
  std::vector<double> scores(corpus.size(), 0.0);
  for (int n = 1; n <= 4; ++n) {
    // Document frequency: number of records whose references contain the n-gram.
    std::map<std::vector<std::string>, int> df;
    std::vector<std::vector<NgramCounts>> ref_counts(corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      check_pair(corpus[i]);
      std::map<std::vector<std::string>, bool> present;
      for (const auto& ref : corpus[i].references) {
        ref_counts[i].push_back(ngrams(ref, n));
        for (const auto& kv : ref_counts[i].back()) present[kv.first] = true;
      }
      for (const auto& kv : present) ++df[kv.first];
    }
    auto vectorize = [&](const NgramCounts& counts) {
      std::map<std::vector<std::string>, double> v;
      int len = 0;
      for (const auto& kv : counts) len += kv.second;
      if (len == 0) return v;
      for (const auto& [g, cnt] : counts) {
        auto it = df.find(g);
        const double d = it == df.end() ? 0.0 : it->second;
        v[g] = (static_cast<double>(cnt) / len) * std::log(n_docs / std::max(1.0, d));
      }
      return v;
    };
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      const auto hv = vectorize(ngrams(corpus[i].hypothesis, n));
      double hn = 0.0;
      for (const auto& kv : hv) hn += kv.second * kv.second;
      double acc = 0.0;
      for (const auto& rc : ref_counts[i]) {
        const auto rv = vectorize(rc);
        double rn = 0.0, dot = 0.0;
        for (const auto& kv : rv) {
          rn += kv.second * kv.second;
          auto it = hv.find(kv.first);
          if (it != hv.end()) dot += it->second * kv.second;
        }
        if (hn > 0.0 && rn > 0.0) acc += dot / (std::sqrt(hn) * std::sqrt(rn));
      }
      scores[i] += acc / static_cast<double>(ref_counts[i].size()) / 4.0;
    }
  }
  return scores;
}

double cider(std::span<const EvalPair> corpus) {
  if (corpus.empty()) return 0.0;
  double s = 0.0;
  for (double v : cider_scores(corpus)) s += v;
  return s / static_cast<double>(corpus.size());
}

double meteor_lite(const EvalPair& pair) {
  check_pair(pair);
  double best = 0.0;
  for (const auto& ref : pair.references) best = std::max(best, meteor_single(pair.hypothesis, ref));
  return best;
}

double meteor_lite(std::span<const EvalPair> corpus) {
  if (corpus.empty()) return 0.0;
  double s = 0.0;
  for (const auto& p : corpus) s += meteor_lite(p);
  return s / static_cast<double>(corpus.size());
}

std::string_view to_string(Metric m) {
  switch (m) {
    case Metric::kBleu1: return "BLEU-1";
    case Metric::kBleu2: return "BLEU-2";
    case Metric::kBleu3: return "BLEU-3";
    case Metric::kBleu4: return "BLEU-4";
    case Metric::kRougeL: return "ROUGE-L";
    case Metric::kCider: return "CIDEr";
    case Metric::kMeteor: return "METEOR";
  }
  return "?";
}

Metric parse_metric(std::string_view s) {
  std::string lower(s);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  for (Metric m : all_metrics()) {
    std::string name(to_string(m));
    std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (name == lower) return m;
  }
  if (lower == "bleu1") return Metric::kBleu1;
  if (lower == "bleu2") return Metric::kBleu2;
  if (lower == "bleu3") return Metric::kBleu3;
  if (lower == "bleu4") return Metric::kBleu4;
  if (lower == "rouge" || lower == "rougel") return Metric::kRougeL;
  throw ConfigError("unknown metric '" + std::string(s) + "'");
}

const std::vector<Metric>& all_metrics() {
  static const std::vector<Metric> kAll = {Metric::kBleu1,  Metric::kBleu2, Metric::kBleu3, Metric::kBleu4,
                                           Metric::kRougeL, Metric::kCider, Metric::kMeteor};
  return kAll;
}

double score(Metric m, std::span<const EvalPair> corpus) {
  switch (m) {
    case Metric::kBleu1: return bleu(corpus, 1);
    case Metric::kBleu2: return bleu(corpus, 2);
    case Metric::kBleu3: return bleu(corpus, 3);
    case Metric::kBleu4: return bleu(corpus, 4);
    case Metric::kRougeL: return rouge_l(corpus);
    case Metric::kCider: return cider(corpus);
    case Metric::kMeteor: return meteor_lite(corpus);
  }
  return 0.0;
}

}  // namespace hybridnet
