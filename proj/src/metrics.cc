#include "iterchat/metrics.h"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "iterchat/text.h"

namespace iterchat {

int exact_match(const PreferenceState& pred, const PreferenceState& gold) {
  return states_equal(pred, gold) ? 1 : 0;
}

F1Counts f1_from_counts(std::size_t tp, std::size_t fp, std::size_t fn) {
  F1Counts c{tp, fp, fn, 0.0, 0.0, 0.0};
  const auto ratio = [](std::size_t num, std::size_t den, std::size_t other) {
    if (den == 0) return other == 0 ? 1.0 : 0.0;
    return static_cast<double>(num) / static_cast<double>(den);
  };
  c.precision = ratio(tp, tp + fp, fn);
  c.recall = ratio(tp, tp + fn, fp);
  const double sum = c.precision + c.recall;
  c.f1 = sum > 0.0 ? 2.0 * c.precision * c.recall / sum : 0.0;
  return c;
}

namespace {

std::set<std::pair<std::string, std::string>> pairs_of(const PreferenceState& state) {
  std::set<std::pair<std::string, std::string>> out;
  for (const auto& [key, slot] : state.slots()) {
    for (const auto& v : slot.values) out.emplace(key, normalize(v));
  }
  return out;
}

}  // namespace

F1Counts slot_f1(const PreferenceState& pred, const PreferenceState& gold) {
  const auto p = pairs_of(pred);
  const auto g = pairs_of(gold);
  std::size_t tp = 0;
  for (const auto& pair : p) tp += g.count(pair);
  return f1_from_counts(tp, p.size() - tp, g.size() - tp);
}

std::vector<std::string> fed_tokens(std::string_view text) {
  const std::string folded = case_fold(text);
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) tokens.push_back(std::move(current));
    current.clear();
  };
  for (unsigned char c : folded) {
    if (c == '=' || c == ';' || c == ',') {
      flush();
      tokens.emplace_back(1, static_cast<char>(c));
    } else if (c == '[' || c == ']' || c == ' ' || c == '\t' || c == '\n' || c == '\r' ||
               c == '\f' || c == '\v') {
      flush();
    } else if (c < 0x80 && std::ispunct(c)) {
      continue;
    } else {
      current.push_back(static_cast<char>(c));
    }
  }
  flush();
  return tokens;
}

std::size_t token_edit_distance(const std::vector<std::string>& a,
                                const std::vector<std::string>& b) {
  // Two-row Wagner-Fischer.
  std::vector<std::size_t> prev(b.size() + 1);
  std::vector<std::size_t> cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::size_t fed(std::string_view pred_text, std::string_view gold_text) {
  return token_edit_distance(fed_tokens(pred_text), fed_tokens(gold_text));
}

double bleu1(const std::vector<std::string>& candidate,
             const std::vector<std::string>& reference) {
  if (reference.empty()) throw Error("bleu1: empty reference");
  if (candidate.empty()) return 0.0;
  std::unordered_map<std::string, std::size_t> ref_counts;
  for (const auto& w : reference) ++ref_counts[w];
  std::unordered_map<std::string, std::size_t> cand_counts;
  for (const auto& w : candidate) ++cand_counts[w];
  std::size_t clipped = 0;
  for (const auto& [w, n] : cand_counts) {
    auto it = ref_counts.find(w);
    if (it != ref_counts.end()) clipped += std::min(n, it->second);
  }
  const double c = static_cast<double>(candidate.size());
  const double r = static_cast<double>(reference.size());
  const double p1 = static_cast<double>(clipped) / c;
  const double bp = c >= r ? 1.0 : std::exp(1.0 - r / c);
  return p1 * bp;
}

// ---------------------------------------------------------------------------

EvalReport evaluate_corpus(const std::vector<Prediction>& preds,
                           const std::vector<GoldLabel>& golds) {
  std::unordered_map<std::string, const Prediction*> by_id;
  for (const auto& p : preds) {
    if (!by_id.emplace(p.record_id, &p).second) {
      throw Error("duplicate prediction record_id '" + p.record_id + "'");
    }
  }
  std::unordered_set<std::string> seen;
  EvalReport report;
  report.per_record.reserve(golds.size());
  CorpusScore& corpus = report.corpus;
  double em_sum = 0.0;
  double fed_sum = 0.0;
  double bleu_sum = 0.0;
  const PreferenceState empty;
  for (const auto& g : golds) {
    if (!seen.insert(g.record_id).second) {
      throw Error("duplicate gold record_id '" + g.record_id + "'");
    }
    auto it = by_id.find(g.record_id);
    const PreferenceState& pred = it == by_id.end() ? empty : it->second->state;
    RecordScore s;
    s.record_id = g.record_id;
    s.failed_parse = it == by_id.end() || it->second->parse_status == ParseStatus::kFailed;
    s.em = exact_match(pred, g.state);
    const F1Counts f = slot_f1(pred, g.state);
    s.precision = f.precision;
    s.recall = f.recall;
    s.f1 = f.f1;
    const std::string pred_text = canonicalize(pred);
    const std::string gold_text = canonicalize(g.state);
    const auto pred_tokens = fed_tokens(pred_text);
    const auto gold_tokens = fed_tokens(gold_text);
    s.fed = token_edit_distance(pred_tokens, gold_tokens);
    // An empty gold state has no reference tokens; score it like F1 does.
    s.bleu1 = gold_tokens.empty() ? (pred_tokens.empty() ? 1.0 : 0.0)
                                  : bleu1(pred_tokens, gold_tokens);

    corpus.tp += f.tp;
    corpus.fp += f.fp;
    corpus.fn += f.fn;
    corpus.failed_parse_count += s.failed_parse ? 1 : 0;
    em_sum += s.em;
    fed_sum += static_cast<double>(s.fed);
    bleu_sum += s.bleu1;
    report.per_record.push_back(std::move(s));
  }
  corpus.records = golds.size();
  if (!golds.empty()) {
    const double n = static_cast<double>(golds.size());
    corpus.em_rate = em_sum / n;
    corpus.mean_fed = fed_sum / n;
    corpus.mean_bleu1 = bleu_sum / n;
  }
  corpus.micro_f1 = f1_from_counts(corpus.tp, corpus.fp, corpus.fn).f1;
  return report;
}

Json EvalReport::to_json() const {
  Json records = Json::array();
  for (const auto& r : per_record) {
    records.push_back(Json{{"record_id", r.record_id},
                           {"em", r.em},
                           {"precision", r.precision},
                           {"recall", r.recall},
                           {"f1", r.f1},
                           {"fed", r.fed},
                           {"bleu1", r.bleu1},
                           {"failed_parse", r.failed_parse}});
  }
  return Json{{"per_record", std::move(records)},
              {"corpus",
               {{"records", corpus.records},
                {"em_rate", corpus.em_rate},
                {"micro_f1", corpus.micro_f1},
                {"mean_fed", corpus.mean_fed},
                {"mean_bleu1", corpus.mean_bleu1},
                {"failed_parse_count", corpus.failed_parse_count},
                {"tp", corpus.tp},
                {"fp", corpus.fp},
                {"fn", corpus.fn}}}};
}

std::string EvalReport::to_table() const {
  std::vector<std::array<std::string, 8>> rows;
  rows.push_back({"record_id", "em", "precision", "recall", "f1", "fed", "bleu1", "parse"});
  char buf[32];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return std::string(buf);
  };
  for (const auto& r : per_record) {
    rows.push_back({r.record_id, std::to_string(r.em), num(r.precision), num(r.recall), num(r.f1),
                    std::to_string(r.fed), num(r.bleu1), r.failed_parse ? "failed" : "ok"});
  }
  std::array<std::size_t, 8> width{};
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::string out;
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      // Left-align the id column, right-align numbers.
      const std::string pad(width[c] - row[c].size(), ' ');
      out += c == 0 ? row[c] + pad : pad + row[c];
      out += c + 1 < row.size() ? "  " : "\n";
    }
  }
  out += "\n";
  out += "records             " + std::to_string(corpus.records) + "\n";
  out += "em_rate             " + num(corpus.em_rate) + "\n";
  out += "micro_f1            " + num(corpus.micro_f1) + "\n";
  out += "mean_fed            " + num(corpus.mean_fed) + "\n";
  out += "mean_bleu1          " + num(corpus.mean_bleu1) + "\n";
  out += "failed_parse_count  " + std::to_string(corpus.failed_parse_count) + "\n";
  return out;
}

}  // namespace iterchat
