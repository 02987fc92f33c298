#include "support/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>

namespace oracle {

Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor c({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < k; ++t) s += a.at(i, t) * b.at(t, j);
      c.at(i, j) = s;
    }
  return c;
}

Tensor triangle_conv(const Tensor& maps, const Tensor& kernel, const Tensor& bias) {
  const std::size_t ch = maps.dim(0), n = maps.dim(1);
  const long N = static_cast<long>(n);
  Tensor conv({ch, n, n});
  for (std::size_t o = 0; o < ch; ++o)
    for (long r = 0; r < N; ++r)
      for (long c = 0; c < N; ++c) {
        double s = bias[o];
        for (std::size_t i = 0; i < ch; ++i)
          for (long dr = -1; dr <= 1; ++dr)
            for (long dc = -1; dc <= 1; ++dc) {
              if (dc > dr) continue;
              const long rr = r + dr, cc = c + dc;
              if (rr < 0 || rr >= N || cc < 0 || cc >= N) continue;
              const double w = kernel[((o * ch + i) * 3 + static_cast<std::size_t>(dr + 1)) * 3 +
                                      static_cast<std::size_t>(dc + 1)];
              s += w * maps.at(i, static_cast<std::size_t>(rr), static_cast<std::size_t>(cc));
            }
        conv.at(o, static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = s;
      }
  Tensor out({ch, n, n});
  for (std::size_t o = 0; o < ch; ++o)
    for (std::size_t r = 1; r < n; ++r)
      for (std::size_t c = 1; c < n; ++c) out.at(o, r, c) = conv.at(o, r - 1, c - 1);
  return out;
}

Tensor attention_logits(const Tensor& q, const Tensor& k, std::size_t heads, double scale) {
  const std::size_t n = q.dim(0), m = k.dim(0), dh = q.dim(1) / heads;
  Tensor out({heads, n, m});
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        double s = 0.0;
        for (std::size_t t = 0; t < dh; ++t) s += q.at(i, h * dh + t) * k.at(j, h * dh + t);
        out.at(h, i, j) = s * scale;
      }
  return out;
}

Tensor softmax_rows(const Tensor& a) {
  Tensor out(a.shape());
  const std::size_t cols = a.cols(), rows = a.rows();
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cols; ++c) mx = std::max(mx, a[r * cols + c]);
    if (std::isinf(mx) && mx < 0) continue;
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += std::exp(a[r * cols + c] - mx);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = std::exp(a[r * cols + c] - mx) / s;
  }
  return out;
}

std::pair<std::vector<double>, std::vector<double>> lstm_step(const std::vector<double>& gates,
                                                             const std::vector<double>& c_prev) {
  const std::size_t d = c_prev.size();
  auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  std::vector<double> h(d), c(d);
  for (std::size_t j = 0; j < d; ++j) {
    const double i = sig(gates[j]);
    const double f = sig(gates[d + j]);
    const double g = std::tanh(gates[2 * d + j]);
    const double o = sig(gates[3 * d + j]);
    c[j] = f * c_prev[j] + i * g;
    h[j] = o * std::tanh(c[j]);
  }
  return {h, c};
}

namespace {

std::map<std::string, int> grams(const Sentence& s, int n) {
  std::map<std::string, int> out;
  for (int i = 0; i + n <= static_cast<int>(s.size()); ++i) {
    std::string key;
    for (int j = i; j < i + n; ++j) key += s[static_cast<std::size_t>(j)] + "\x1f";
    ++out[key];
  }
  return out;
}

}  // namespace

double bleu(const std::vector<Sentence>& hyps, const std::vector<std::vector<Sentence>>& refs, int n_max) {
  double c = 0, r = 0;
  std::vector<double> num(static_cast<std::size_t>(n_max) + 1, 0), den(static_cast<std::size_t>(n_max) + 1, 0);
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    c += static_cast<double>(hyps[i].size());
    // closest reference length, shorter wins ties
    long best = -1;
    for (const auto& ref : refs[i]) {
      const long len = static_cast<long>(ref.size());
      const long hl = static_cast<long>(hyps[i].size());
      if (best < 0 || std::labs(len - hl) < std::labs(best - hl) || (std::labs(len - hl) == std::labs(best - hl) && len < best))
        best = len;
    }
    r += static_cast<double>(best);
    for (int n = 1; n <= n_max; ++n) {
      for (const auto& [g, cnt] : grams(hyps[i], n)) {
        int mx = 0;
        for (const auto& ref : refs[i]) {
          const auto rg = grams(ref, n);
          auto it = rg.find(g);
          if (it != rg.end()) mx = std::max(mx, it->second);
        }
        num[static_cast<std::size_t>(n)] += std::min(cnt, mx);
        den[static_cast<std::size_t>(n)] += cnt;
      }
    }
  }
  if (c == 0) return 0.0;
  double prod = 1.0;
  for (int n = 1; n <= n_max; ++n) {
    if (num[static_cast<std::size_t>(n)] == 0) return 0.0;
    prod *= num[static_cast<std::size_t>(n)] / den[static_cast<std::size_t>(n)];
  }
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::pow(prod, 1.0 / n_max);
}

std::size_t lcs_bruteforce(const Sentence& a, const Sentence& b) {
  const std::size_t n = a.size();
  std::size_t best = 0;
  for (unsigned long mask = 0; mask < (1UL << n); ++mask) {
    const auto bits = static_cast<std::size_t>(__builtin_popcountl(mask));
    if (bits <= best) continue;
    std::size_t j = 0;
    bool ok = true;
    for (std::size_t i = 0; i < n && ok; ++i) {
      if (!(mask >> i & 1UL)) continue;
      while (j < b.size() && b[j] != a[i]) ++j;
      if (j == b.size()) ok = false;
      else ++j;
    }
    if (ok) best = bits;
  }
  return best;
}

double rouge_l(const Sentence& hyp, const std::vector<Sentence>& refs) {
  double best = 0.0;
  for (const auto& ref : refs) {
    const double l = static_cast<double>(lcs_bruteforce(hyp, ref));
    if (l == 0) continue;
    const double R = l / static_cast<double>(ref.size());
    const double P = l / static_cast<double>(hyp.size());
    const double b2 = 1.44;
    best = std::max(best, (1 + b2) * R * P / (R + b2 * P));
  }
  return best;
}

double cider(const std::vector<Sentence>& hyps, const std::vector<std::vector<Sentence>>& refs) {
  const double N = static_cast<double>(hyps.size());
  double total = 0.0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    double per = 0.0;
    for (int n = 1; n <= 4; ++n) {
      auto df = [&](const std::string& g) {
        int d = 0;
        for (const auto& rs : refs) {
          bool found = false;
          for (const auto& r : rs) found = found || grams(r, n).count(g) > 0;
          d += found ? 1 : 0;
        }
        return d;
      };
      auto vec = [&](const Sentence& s) {
        std::map<std::string, double> v;
        const auto g = grams(s, n);
        double len = 0;
        for (const auto& kv : g) len += kv.second;
        for (const auto& [k, cnt] : g) v[k] = cnt / len * std::log(N / std::max(1, df(k)));
        return v;
      };
      const auto hv = vec(hyps[i]);
      double sim = 0.0;
      for (const auto& r : refs[i]) {
        const auto rv = vec(r);
        double dot = 0, a = 0, b = 0;
        for (const auto& [k, x] : hv) {
          a += x * x;
          auto it = rv.find(k);
          if (it != rv.end()) dot += x * it->second;
        }
        for (const auto& kv : rv) b += kv.second * kv.second;
        if (a > 0 && b > 0) sim += dot / std::sqrt(a * b);
      }
      per += sim / static_cast<double>(refs[i].size());
    }
    total += per / 4.0;
  }
  return total / N;
}

double meteor(const Sentence& hyp, const std::vector<Sentence>& refs) {
  double best = 0.0;
  for (const auto& ref : refs) {
    std::set<std::size_t> taken;
    std::vector<std::pair<std::size_t, std::size_t>> links;  // (hyp pos, ref pos)
    for (std::size_t i = 0; i < hyp.size(); ++i)
      for (std::size_t j = 0; j < ref.size(); ++j)
        if (!taken.count(j) && hyp[i] == ref[j]) {
          taken.insert(j);
          links.emplace_back(i, j);
          break;
        }
    const double m = static_cast<double>(links.size());
    if (m == 0) continue;
    // A chunk is a maximal run of links adjacent in both sequences.
    double chunks = 1;
    for (std::size_t k = 1; k < links.size(); ++k) {
      if (!(links[k].first == links[k - 1].first + 1 && links[k].second == links[k - 1].second + 1)) chunks += 1;
    }
    const double P = m / static_cast<double>(hyp.size()), R = m / static_cast<double>(ref.size());
    const double F = P * R / (0.9 * P + 0.1 * R);
    best = std::max(best, F * (1 - 0.5 * std::pow(chunks / m, 3)));
  }
  return best;
}

}  // namespace oracle
