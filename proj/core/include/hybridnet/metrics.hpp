#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace hybridnet {

using Tokens = std::vector<std::string>;

struct EvalPair {
  Tokens hypothesis;
  std::vector<Tokens> references;
};

/// Lowercases, splits on whitespace and drops <bos>, <eos> and <pad>.
Tokens normalize_tokens(std::string_view sentence);

/// Corpus BLEU up to order n_max (1..4) with closest-reference brevity penalty.
double bleu(std::span<const EvalPair> corpus, int n_max);

/// ROUGE-L F (β = 1.2) of one pair, max over references.
double rouge_l(const EvalPair& pair);
/// Mean of rouge_l over the corpus.
double rouge_l(std::span<const EvalPair> corpus);

/// Plain CIDEr: per order n = 1..4, TF-IDF cosine between the hypothesis and
/// each reference (averaged over references), mean over n, mean over the
/// corpus. Document frequencies come from the references.
double cider(std::span<const EvalPair> corpus);
/// Per-pair CIDEr scores under the corpus IDF.
std::vector<double> cider_scores(std::span<const EvalPair> corpus);

/// Exact-match METEOR: greedy left-to-right unigram alignment, F with recall
/// weight 0.9, fragmentation penalty 0.5·(chunks/m)³; max over references.
double meteor_lite(const EvalPair& pair);
double meteor_lite(std::span<const EvalPair> corpus);

enum class Metric { kBleu1, kBleu2, kBleu3, kBleu4, kRougeL, kCider, kMeteor };

std::string_view to_string(Metric m);
Metric parse_metric(std::string_view s);
const std::vector<Metric>& all_metrics();

double score(Metric m, std::span<const EvalPair> corpus);

}  // namespace hybridnet
