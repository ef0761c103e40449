#include "opera/answer_metrics.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "opera/decimal.hpp"

namespace opera::metrics {

namespace {

bool is_punct(char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; }
bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool is_article(const std::string& t) { return t == "a" || t == "an" || t == "the"; }

std::optional<std::string> canonical_number(const std::string& t) {
  auto d = Decimal::parse(t);
  if (!d) return std::nullopt;
  return d->to_string();
}

std::string normalize_token(const std::string& raw) {
  std::string t = lower(raw);
  if (auto num = canonical_number(t)) return *num;
  // Trim edge punctuation, then retry the numeric reading ("73," -> "73").
  std::size_t b = 0, e = t.size();
  while (b < e && is_punct(t[b])) ++b;
  while (e > b && is_punct(t[e - 1])) --e;
  t = t.substr(b, e - b);
  if (auto num = canonical_number(t)) return *num;
  std::string kept;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!is_punct(t[i])) {
      kept.push_back(t[i]);
    } else if (t[i] == '-' && i > 0 && i + 1 < t.size() && is_alnum(t[i - 1]) &&
               is_alnum(t[i + 1])) {
      kept.push_back('-');  // hyphen inside a token is meaningful
    }
  }
  if (is_article(kept)) return {};
  return kept;
}

bool is_numeric_token(const std::string& t) { return Decimal::parse(t).has_value(); }

std::vector<std::string> numeric_only(const std::vector<std::string>& bag) {
  std::vector<std::string> out;
  for (const std::string& t : bag)
    if (is_numeric_token(t)) out.push_back(t);
  return out;
}

double bag_f1(std::vector<std::string> a, std::vector<std::string> b) {
  // Single-token numeric answers compare on numeric content only.
  if (a.size() == 1 && is_numeric_token(a.front())) b = numeric_only(b);
  if (b.size() == 1 && is_numeric_token(b.front())) a = numeric_only(a);
  if (a.empty() && b.empty()) return 1.0;
  if (a.empty() || b.empty()) return 0.0;
  std::map<std::string, std::size_t> counts;
  for (const std::string& t : a) ++counts[t];
  std::size_t common = 0;
  for (const std::string& t : b) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return 0.0;
  double precision = static_cast<double>(common) / static_cast<double>(b.size());
  double recall = static_cast<double>(common) / static_cast<double>(a.size());
  return 2.0 * precision * recall / (precision + recall);
}

bool spans_equal(const std::string& a, const std::string& b) {
  if (a == b) return true;
  std::vector<std::string> ba = normalize_bag(a), bb = normalize_bag(b);
  if (ba.size() == 1 && is_numeric_token(ba.front())) return numeric_only(bb) == ba;
  if (bb.size() == 1 && is_numeric_token(bb.front())) return numeric_only(ba) == bb;
  return false;
}

// Best-sum one-to-one assignment by bitmask DP over the smaller side.
double best_assignment(const std::vector<std::vector<double>>& score) {
  std::size_t rows = score.size();
  std::size_t cols = rows == 0 ? 0 : score.front().size();
  if (rows == 0 || cols == 0) return 0.0;
  if (cols > 20) throw std::runtime_error("em_f1: too many answer spans");
  std::vector<double> dp(static_cast<std::size_t>(1) << cols, -1.0);
  dp[0] = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    std::vector<double> next(dp.size(), -1.0);
    for (std::size_t mask = 0; mask < dp.size(); ++mask) {
      if (dp[mask] < 0.0) continue;
      next[mask] = std::max(next[mask], dp[mask]);  // row left unassigned
      for (std::size_t c = 0; c < cols; ++c) {
        if (mask & (static_cast<std::size_t>(1) << c)) continue;
        std::size_t m2 = mask | (static_cast<std::size_t>(1) << c);
        next[m2] = std::max(next[m2], dp[mask] + score[r][c]);
      }
    }
    dp = std::move(next);
  }
  return *std::max_element(dp.begin(), dp.end());
}

}  // namespace

std::string normalize(std::string_view answer) {
  std::istringstream in{std::string(answer)};
  std::string word, out;
  while (in >> word) {
    std::string t = normalize_token(word);
    if (t.empty()) continue;
    if (!out.empty()) out.push_back(' ');
    out += t;
  }
  return out;
}

std::vector<std::string> normalize_bag(std::string_view answer) {
  std::istringstream in{normalize(answer)};
  std::vector<std::string> out;
  std::string t;
  while (in >> t) out.push_back(t);
  return out;
}

EmF1 em_f1(const std::vector<std::string>& pred, const std::vector<std::string>& gold) {
  std::vector<std::string> p, g;
  for (const std::string& s : pred) p.push_back(normalize(s));
  for (const std::string& s : gold) g.push_back(normalize(s));

  EmF1 out;
  if (p.size() == g.size() && !p.empty()) {
    std::vector<std::vector<double>> eq(p.size(), std::vector<double>(g.size(), 0.0));
    for (std::size_t i = 0; i < p.size(); ++i)
      for (std::size_t j = 0; j < g.size(); ++j)
        if (spans_equal(p[i], g[j])) eq[i][j] = 1.0;
    if (best_assignment(eq) == static_cast<double>(p.size())) out.em = 1.0;
  } else if (p.empty() && g.empty()) {
    out.em = 1.0;
  }

  if (p.empty() && g.empty()) {
    out.f1 = 1.0;
    return out;
  }
  if (p.empty() || g.empty()) return out;
  std::vector<std::vector<double>> score(p.size(), std::vector<double>(g.size(), 0.0));
  for (std::size_t i = 0; i < p.size(); ++i)
    for (std::size_t j = 0; j < g.size(); ++j)
      score[i][j] = bag_f1(normalize_bag(p[i]), normalize_bag(g[j]));
  out.f1 = best_assignment(score) / static_cast<double>(std::max(p.size(), g.size()));
  return out;
}

EmF1 best_em_f1(const std::vector<std::string>& pred,
                const std::vector<std::vector<std::string>>& gold_alternates) {
  EmF1 best;
  for (const auto& gold : gold_alternates) {
    EmF1 cur = em_f1(pred, gold);
    best.em = std::max(best.em, cur.em);
    best.f1 = std::max(best.f1, cur.f1);
  }
  return best;
}

bool answers_match(const std::vector<std::string>& produced,
                   const std::vector<std::string>& gold) {
  std::set<std::string> p, g;
  for (const std::string& s : produced) p.insert(normalize(s));
  for (const std::string& s : gold) g.insert(normalize(s));
  return !g.empty() && p == g;
}

}  // namespace opera::metrics
