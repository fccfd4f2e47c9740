#include "oracles.h"

#include <cmath>

namespace oracle {

std::string norm(const std::string& s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\n' || s[b] == '\r')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\n' || s[e - 1] == '\r')) --e;
  std::string out;
  for (std::size_t i = b; i < e; ++i) {
    char c = s[i];
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    out += c;
  }
  return out;
}

SetState apply(SetState state, const std::vector<Op>& ops) {
  for (const Op& op : ops) {
    const std::string slot = norm(op.slot);
    std::set<std::string> values;
    for (const auto& v : op.values) values.insert(norm(v));
    if (op.kind == "add") {
      state[slot].insert(values.begin(), values.end());
    } else if (op.kind == "remove") {
      if (state.count(slot)) {
        for (const auto& v : values) state[slot].erase(v);
      }
    } else if (op.kind == "set") {
      state[slot] = values;
    } else if (op.kind == "clear") {
      state.erase(slot);
    }
    if (state.count(slot) && state[slot].empty()) state.erase(slot);
  }
  return state;
}

bool strict_violation(const SetState& state, const std::vector<Op>& ops) {
  SetState s = state;
  for (const Op& op : ops) {
    const std::string slot = norm(op.slot);
    if (op.kind == "remove") {
      if (!s.count(slot)) return true;
      for (const auto& v : op.values) {
        if (!s.at(slot).count(norm(v))) return true;
      }
    } else if (op.kind == "clear") {
      if (!s.count(slot)) return true;
    }
    s = apply(s, {op});
  }
  return false;
}

namespace {

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '\\' || c == '=' || c == ';' || c == ',' || c == '[' || c == ']') out += '\\';
    out += c;
  }
  return out;
}

}  // namespace

std::string format(const SetState& state) {
  std::string out;
  bool first = true;
  for (const auto& [slot, values] : state) {
    if (values.empty()) continue;
    if (!first) out += "; ";
    first = false;
    out += escape(slot) + "=[";
    bool first_value = true;
    for (const auto& v : values) {
      if (!first_value) out += ",";
      first_value = false;
      out += escape(v);
    }
    out += "]";
  }
  return out;
}

namespace {

std::size_t ed(const std::vector<std::string>& a, std::size_t i, const std::vector<std::string>& b,
               std::size_t j) {
  if (i == a.size()) return b.size() - j;
  if (j == b.size()) return a.size() - i;
  if (a[i] == b[j]) return ed(a, i + 1, b, j + 1);
  const std::size_t del = ed(a, i + 1, b, j);
  const std::size_t ins = ed(a, i, b, j + 1);
  const std::size_t sub = ed(a, i + 1, b, j + 1);
  return 1 + std::min(del, std::min(ins, sub));
}

}  // namespace

std::size_t edit_distance(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  return ed(a, 0, b, 0);
}

double bleu1(const std::vector<std::string>& cand, const std::vector<std::string>& ref) {
  if (cand.empty()) return 0.0;
  double matched = 0.0;
  std::set<std::string> words(cand.begin(), cand.end());
  for (const auto& w : words) {
    double in_cand = 0.0;
    double in_ref = 0.0;
    for (const auto& x : cand) in_cand += x == w ? 1.0 : 0.0;
    for (const auto& x : ref) in_ref += x == w ? 1.0 : 0.0;
    matched += std::min(in_cand, in_ref);
  }
  const double c = static_cast<double>(cand.size());
  const double r = static_cast<double>(ref.size());
  const double bp = c > r || c == r ? 1.0 : std::exp(1.0 - r / c);
  return bp * (matched / c);
}

PairCounts pair_counts(const SetState& pred, const SetState& gold) {
  std::vector<std::pair<std::string, std::string>> p;
  std::vector<std::pair<std::string, std::string>> g;
  for (const auto& [s, vs] : pred) {
    for (const auto& v : vs) p.emplace_back(s, v);
  }
  for (const auto& [s, vs] : gold) {
    for (const auto& v : vs) g.emplace_back(s, v);
  }
  PairCounts c;
  for (const auto& x : p) {
    bool found = false;
    for (const auto& y : g) found = found || x == y;
    if (found) ++c.tp; else ++c.fp;
  }
  for (const auto& y : g) {
    bool found = false;
    for (const auto& x : p) found = found || x == y;
    if (!found) ++c.fn;
  }
  return c;
}

double f1(const PairCounts& c) {
  const double precision = c.tp + c.fp == 0 ? (c.fn == 0 ? 1.0 : 0.0)
                                             : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  const double recall = c.tp + c.fn == 0 ? (c.fp == 0 ? 1.0 : 0.0)
                                          : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  return precision + recall == 0.0 ? 0.0 : 2.0 * precision * recall / (precision + recall);
}

}  // namespace oracle
