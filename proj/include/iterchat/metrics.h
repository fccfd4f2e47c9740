#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "iterchat/error.h"
#include "iterchat/extractor.h"
#include "iterchat/json.h"
#include "iterchat/state.h"

namespace iterchat {

// 1 iff the states are equal under canonicalize().
int exact_match(const PreferenceState& pred, const PreferenceState& gold);

struct F1Counts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Precision/recall/F1 from raw counts. An empty denominator scores 1 when
// the other side is empty too (nothing predicted, nothing to find) and 0
// otherwise.
F1Counts f1_from_counts(std::size_t tp, std::size_t fp, std::size_t fn);

// Over normalized (slot, value) pairs.
F1Counts slot_f1(const PreferenceState& pred, const PreferenceState& gold);

// FED filter step: case-fold, delete ASCII punctuation other than the
// structure characters = ; , [ ], then split on whitespace and structure
// characters. `=`, `;` and `,` become tokens of their own; brackets only
// delimit.
std::vector<std::string> fed_tokens(std::string_view text);

// Unit-cost Levenshtein distance over tokens.
std::size_t token_edit_distance(const std::vector<std::string>& a,
                                const std::vector<std::string>& b);

// Filter edit distance between two canonical serializations.
std::size_t fed(std::string_view pred_text, std::string_view gold_text);

// Clipped unigram precision times the brevity penalty. Empty candidate
// scores 0; empty reference throws Error.
double bleu1(const std::vector<std::string>& candidate,
             const std::vector<std::string>& reference);

struct RecordScore {
  std::string record_id;
  int em = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t fed = 0;
  double bleu1 = 0.0;
  bool failed_parse = false;
};

struct CorpusScore {
  std::size_t records = 0;
  double em_rate = 0.0;
  double micro_f1 = 0.0;
  double mean_fed = 0.0;
  double mean_bleu1 = 0.0;
  std::size_t failed_parse_count = 0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
};

struct EvalReport {
  std::vector<RecordScore> per_record;
  CorpusScore corpus;

  Json to_json() const;
  std::string to_table() const;
};

struct Prediction {
  std::string record_id;
  PreferenceState state;
  ParseStatus parse_status = ParseStatus::kOk;
};

struct GoldLabel {
  std::string record_id;
  PreferenceState state;
};

// Scores every gold record (in gold order). A gold id without a prediction
// is scored against the empty state and counted as a failed parse.
// Predictions whose id is not in the gold set are ignored. Duplicate ids
// on either side throw Error.
EvalReport evaluate_corpus(const std::vector<Prediction>& preds,
                           const std::vector<GoldLabel>& golds);

}  // namespace iterchat
