#include "opera/derivations.hpp"

#include <algorithm>
#include <stdexcept>

#include <json.hpp>

#include "opera/answer_metrics.hpp"

namespace opera::derivations {

namespace {

using corpus::Context;
using corpus::ContextNumbers;
using corpus::GoldAnswer;
using corpus::Span;

constexpr std::size_t kMaxWindowSlack = 4;

struct Occurrence {
  std::size_t start = 0;  // joint indices, inclusive
  std::size_t end = 0;
};

// Token-aligned occurrences of `target` in one segment: windows whose surface
// text normalizes to the normalized target. Edge tokens that normalize to
// nothing (articles, bare punctuation) are not allowed to pad a window, so
// "an 80" does not count as an occurrence of "80".
std::vector<Occurrence> find_occurrences(const Context& ctx, const Span& segment,
                                         const std::string& target) {
  std::vector<Occurrence> out;
  std::string want = metrics::normalize(target);
  if (want.empty() || segment.empty()) return out;
  std::size_t max_window = metrics::normalize_bag(target).size() * 3 + kMaxWindowSlack;
  for (std::size_t start = segment.begin; start < segment.end; ++start) {
    if (metrics::normalize(corpus::surface_text(ctx, start, start)).empty()) continue;
    std::size_t limit = std::min(segment.end, start + max_window);
    for (std::size_t end = start; end < limit; ++end) {
      if (metrics::normalize(corpus::surface_text(ctx, end, end)).empty()) continue;
      if (metrics::normalize(corpus::surface_text(ctx, start, end)) == want)
        out.push_back(Occurrence{start, end});
    }
  }
  return out;
}

// Golds a span search can target: one span, a number, or a flattened date.
std::vector<std::string> single_span_targets(const GoldAnswer& gold) {
  switch (gold.kind) {
    case corpus::AnswerKind::number: return {gold.number_text};
    case corpus::AnswerKind::spans:
      if (gold.spans.size() == 1) return {gold.spans.front()};
      return {};
    case corpus::AnswerKind::date: return gold.answer_texts();
  }
  return {};
}

void append_unique(std::vector<Derivation>& all, std::vector<Derivation> extra) {
  for (Derivation& d : extra)
    if (std::find(all.begin(), all.end(), d) == all.end()) all.push_back(std::move(d));
}

}  // namespace

std::string_view answer_type_name(AnswerType t) {
  switch (t) {
    case AnswerType::question_span: return "question_span";
    case AnswerType::passage_span: return "passage_span";
    case AnswerType::count: return "count";
    case AnswerType::arithmetic: return "arithmetic_expression";
    case AnswerType::multi_spans: return "multi_spans";
  }
  return "?";
}

std::vector<std::string> execute(const Derivation& d, const Context& ctx,
                                 const ContextNumbers& numbers) {
  switch (d.type) {
    case AnswerType::question_span:
    case AnswerType::passage_span: {
      const auto& label = std::get<SpanLabel>(d.label);
      const Span& segment =
          d.type == AnswerType::question_span ? ctx.q_range : ctx.p_range;
      if (label.start > label.end || !segment.contains(label.start) ||
          !segment.contains(label.end))
        throw std::runtime_error("span label outside its segment");
      return {corpus::surface_text(ctx, label.start, label.end)};
    }
    case AnswerType::count: {
      const auto& label = std::get<CountLabel>(d.label);
      if (label.k < 0 || label.k > 9) throw std::runtime_error("count label outside 0..9");
      return {std::to_string(label.k)};
    }
    case AnswerType::arithmetic: {
      const auto& label = std::get<SignVector>(d.label);
      if (label.signs.size() != numbers.count())
        throw std::runtime_error("sign vector length " + std::to_string(label.signs.size()) +
                                 " vs " + std::to_string(numbers.count()) + " numbers");
      Decimal sum = Decimal::from_int(0);
      for (std::size_t i = 0; i < label.signs.size(); ++i) {
        switch (label.signs[i]) {
          case Sign::plus: sum = sum + numbers.mentions[i].value; break;
          case Sign::minus: sum = sum - numbers.mentions[i].value; break;
          case Sign::zero: break;
        }
      }
      return {sum.to_string()};
    }
    case AnswerType::multi_spans: {
      const auto& label = std::get<BioLabel>(d.label);
      if (label.tags.size() != ctx.length())
        throw std::runtime_error("BIO label length mismatch");
      std::vector<std::string> out;
      std::size_t i = 0;
      while (i < label.tags.size()) {
        if (label.tags[i] == BioTag::inside)
          throw std::runtime_error("BIO label has I without a preceding B");
        if (label.tags[i] != BioTag::begin) {
          ++i;
          continue;
        }
        std::size_t start = i;
        ++i;
        while (i < label.tags.size() && label.tags[i] == BioTag::inside) ++i;
        out.push_back(corpus::surface_text(ctx, start, i - 1));
      }
      return out;
    }
  }
  throw std::runtime_error("unknown answer type");
}

std::vector<Derivation> search_spans(const Context& ctx, const GoldAnswer& gold) {
  std::vector<Derivation> out;
  for (const std::string& target : single_span_targets(gold)) {
    for (const Occurrence& occ : find_occurrences(ctx, ctx.q_range, target))
      out.push_back(Derivation{AnswerType::question_span, SpanLabel{occ.start, occ.end}});
    for (const Occurrence& occ : find_occurrences(ctx, ctx.p_range, target))
      out.push_back(Derivation{AnswerType::passage_span, SpanLabel{occ.start, occ.end}});
  }
  return out;
}

std::vector<Derivation> search_arithmetic(const ContextNumbers& numbers, const GoldAnswer& gold,
                                          int max_terms, Decimal tol) {
  std::vector<Derivation> out;
  if (gold.kind != corpus::AnswerKind::number) return out;
  auto target = Decimal::parse(gold.number_text);
  if (!target || numbers.count() == 0) return out;

  const std::size_t n = numbers.count();
  std::vector<std::size_t> subset;
  std::vector<Sign> signs(n, Sign::zero);

  // Every subset of up to max_terms mentions, every +/- pattern on it.
  auto try_patterns = [&]() {
    const std::size_t k = subset.size();
    for (std::size_t bits = 0; bits < (static_cast<std::size_t>(1) << k); ++bits) {
      Decimal sum = Decimal::from_int(0);
      bool in_range = true;
      for (std::size_t j = 0; j < k && in_range; ++j) {
        const Decimal& v = numbers.mentions[subset[j]].value;
        try {
          sum = bits & (static_cast<std::size_t>(1) << j) ? sum - v : sum + v;
        } catch (const std::overflow_error&) {
          in_range = false;
        }
      }
      if (!in_range || tol < (sum - *target).abs()) continue;
      for (std::size_t j = 0; j < k; ++j)
        signs[subset[j]] =
            (bits & (static_cast<std::size_t>(1) << j)) ? Sign::minus : Sign::plus;
      out.push_back(Derivation{AnswerType::arithmetic, SignVector{signs}});
      for (std::size_t j = 0; j < k; ++j) signs[subset[j]] = Sign::zero;
    }
  };

  auto recurse = [&](auto&& self, std::size_t from) -> void {
    if (!subset.empty()) try_patterns();
    if (subset.size() == static_cast<std::size_t>(max_terms)) return;
    for (std::size_t i = from; i < n; ++i) {
      subset.push_back(i);
      self(self, i + 1);
      subset.pop_back();
    }
  };
  recurse(recurse, 0);

  std::sort(out.begin(), out.end(), [](const Derivation& a, const Derivation& b) {
    return std::get<SignVector>(a.label).signs < std::get<SignVector>(b.label).signs;
  });
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<Derivation> search_count(const GoldAnswer& gold) {
  if (gold.kind != corpus::AnswerKind::number) return {};
  auto value = Decimal::parse(gold.number_text);
  if (!value || !value->is_integer()) return {};
  std::int64_t k = value->mantissa();
  if (k < 0 || k > 9) return {};
  return {Derivation{AnswerType::count, CountLabel{static_cast<int>(k)}}};
}

std::vector<Derivation> search_multispan(const Context& ctx, const GoldAnswer& gold) {
  if (gold.kind != corpus::AnswerKind::spans || gold.spans.empty()) return {};

  struct Candidate {
    Occurrence occ;
    std::size_t span_idx;
  };
  std::vector<Candidate> candidates;
  for (std::size_t s = 0; s < gold.spans.size(); ++s) {
    std::vector<Occurrence> occs = find_occurrences(ctx, ctx.q_range, gold.spans[s]);
    std::vector<Occurrence> p_occs = find_occurrences(ctx, ctx.p_range, gold.spans[s]);
    occs.insert(occs.end(), p_occs.begin(), p_occs.end());
    if (occs.empty()) return {};  // every gold span must occur somewhere
    for (const Occurrence& occ : occs) candidates.push_back(Candidate{occ, s});
  }

  // Longest-first, left-to-right; later candidates may not overlap tagged
  // positions.
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    std::size_t la = a.occ.end - a.occ.start, lb = b.occ.end - b.occ.start;
    if (la != lb) return la > lb;
    if (a.occ.start != b.occ.start) return a.occ.start < b.occ.start;
    return a.span_idx < b.span_idx;
  });

  BioLabel label;
  label.tags.assign(ctx.length(), BioTag::outside);
  for (const Candidate& c : candidates) {
    bool free = true;
    for (std::size_t i = c.occ.start; i <= c.occ.end; ++i)
      if (label.tags[i] != BioTag::outside) free = false;
    if (!free) continue;
    label.tags[c.occ.start] = BioTag::begin;
    for (std::size_t i = c.occ.start + 1; i <= c.occ.end; ++i) label.tags[i] = BioTag::inside;
  }
  return {Derivation{AnswerType::multi_spans, std::move(label)}};
}

DerivationSet search_all(const Context& ctx, const ContextNumbers& numbers,
                         const GoldAnswer& gold, SearchStats* stats) {
  std::vector<Derivation> all;
  append_unique(all, search_spans(ctx, gold));
  append_unique(all, search_arithmetic(numbers, gold));
  append_unique(all, search_count(gold));
  append_unique(all, search_multispan(ctx, gold));

  DerivationSet out;
  out.gold = gold;
  std::vector<std::string> gold_texts = gold.answer_texts();
  for (Derivation& d : all) {
    bool sound = false;
    try {
      sound = metrics::answers_match(execute(d, ctx, numbers), gold_texts);
    } catch (const std::exception&) {
      sound = false;
    }
    if (sound)
      out.derivations.push_back(std::move(d));
    else if (stats)
      ++stats->dropped_unsound;
  }
  return out;
}

LabeledInstance label_instance(const corpus::RawInstance& raw, const corpus::Vocab& vocab,
                               const rules::RuleSet& rules, std::size_t max_seq_len,
                               SearchStats* stats) {
  LabeledInstance out;
  out.raw = raw;
  std::vector<corpus::Token> q_tokens = corpus::tokenize(raw.question_text);
  std::vector<corpus::Token> p_tokens = corpus::tokenize(raw.passage_text);
  out.ctx = corpus::build_context(q_tokens, p_tokens, vocab, max_seq_len, raw.question_text,
                                  raw.passage_text);
  out.numbers = corpus::context_numbers(out.ctx);
  out.operations = rules::match_operations(q_tokens, rules);
  out.derivations = search_all(out.ctx, out.numbers, raw.answers.front(), stats);
  out.usable = !out.derivations.derivations.empty();
  return out;
}

std::vector<LabeledInstance> label_all(const std::vector<corpus::RawInstance>& raw,
                                       const corpus::Vocab& vocab, const rules::RuleSet& rules,
                                       std::size_t max_seq_len, SearchStats* stats) {
  std::vector<LabeledInstance> out;
  out.reserve(raw.size());
  for (const corpus::RawInstance& inst : raw)
    out.push_back(label_instance(inst, vocab, rules, max_seq_len, stats));
  return out;
}

std::string labeled_dump_jsonl(const std::vector<LabeledInstance>& instances) {
  using nlohmann::json;
  std::string out;
  for (const LabeledInstance& inst : instances) {
    json line;
    line["id"] = inst.raw.id;
    json ops = json::array();
    for (rules::Op op : inst.operations) ops.push_back(std::string(rules::op_name(op)));
    line["operations"] = ops;
    json derivs = json::array();
    for (const Derivation& d : inst.derivations.derivations) {
      json jd;
      jd["type"] = std::string(answer_type_name(d.type));
      switch (d.type) {
        case AnswerType::question_span:
        case AnswerType::passage_span: {
          const auto& label = std::get<SpanLabel>(d.label);
          jd["start"] = label.start;
          jd["end"] = label.end;
          break;
        }
        case AnswerType::count:
          jd["k"] = std::get<CountLabel>(d.label).k;
          break;
        case AnswerType::arithmetic: {
          std::string signs;
          for (Sign s : std::get<SignVector>(d.label).signs)
            signs += s == Sign::plus ? '+' : (s == Sign::minus ? '-' : '0');
          jd["signs"] = signs;
          break;
        }
        case AnswerType::multi_spans: {
          std::string tags;
          for (BioTag t : std::get<BioLabel>(d.label).tags)
            tags += t == BioTag::begin ? 'B' : (t == BioTag::inside ? 'I' : 'O');
          jd["tags"] = tags;
          break;
        }
      }
      derivs.push_back(jd);
    }
    line["derivations"] = derivs;
    line["usable"] = inst.usable;
    out += line.dump();
    out += '\n';
  }
  return out;
}

}  // namespace opera::derivations
