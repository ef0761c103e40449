#include "opera/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "opera/answer_metrics.hpp"

namespace opera::evalcli {

using derivations::AnswerType;
using derivations::BioTag;
using derivations::Sign;

namespace {

struct DecodedLabel {
  bool ok = false;
  std::vector<std::string> texts;
  std::string debug;
};

DecodedLabel decode_span(const model::ForwardOutput& out, const corpus::Context& ctx,
                         bool question, std::size_t max_span_len) {
  const std::vector<double>& starts = question ? out.q_start_log : out.p_start_log;
  const std::vector<double>& ends = question ? out.q_end_log : out.p_end_log;
  const corpus::Span& seg = question ? ctx.q_range : ctx.p_range;
  DecodedLabel result;
  if (starts.empty() || seg.empty()) return result;
  double best = -std::numeric_limits<double>::infinity();
  std::size_t best_s = 0, best_e = 0;
  for (std::size_t s = 0; s < starts.size(); ++s) {
    std::size_t last = std::min(ends.size(), s + max_span_len + 1);
    for (std::size_t e = s; e < last; ++e) {
      double score = starts[s] + ends[e];
      if (score > best) {
        best = score;
        best_s = s;
        best_e = e;
      }
    }
  }
  result.ok = true;
  result.texts = {corpus::surface_text(ctx, seg.begin + best_s, seg.begin + best_e)};
  result.debug = std::string(question ? "qspan" : "pspan") + "[" + std::to_string(best_s) + "," +
                 std::to_string(best_e) + "]";
  return result;
}

DecodedLabel decode_count(const model::ForwardOutput& out) {
  DecodedLabel result;
  if (out.count_log.empty()) return result;
  std::size_t best = 0;
  for (std::size_t k = 1; k < out.count_log.size(); ++k)
    if (out.count_log[k] > out.count_log[best]) best = k;
  result.ok = true;
  result.texts = {std::to_string(best)};
  result.debug = "count=" + std::to_string(best);
  return result;
}

DecodedLabel decode_signs(const model::ForwardOutput& out, const corpus::ContextNumbers& numbers) {
  DecodedLabel result;
  if (out.n_numbers == 0 || out.sign_log.size() != out.n_numbers * 3) return result;
  Decimal sum = Decimal::from_int(0);
  bool any = false;
  std::string debug = "signs(";
  for (std::size_t i = 0; i < out.n_numbers; ++i) {
    const double* row = out.sign_log.data() + i * 3;
    std::size_t cls = 0;
    for (std::size_t c = 1; c < 3; ++c)
      if (row[c] > row[cls]) cls = c;
    if (cls == static_cast<std::size_t>(Sign::plus)) {
      sum = sum + numbers.mentions[i].value;
      any = true;
      debug += '+';
    } else if (cls == static_cast<std::size_t>(Sign::minus)) {
      sum = sum - numbers.mentions[i].value;
      any = true;
      debug += '-';
    } else {
      debug += '0';
    }
  }
  if (!any) return result;  // the all-zero expression is not an answer
  result.ok = true;
  result.texts = {sum.to_string()};
  result.debug = debug + ")";
  return result;
}

DecodedLabel decode_bio(const model::ForwardOutput& out, const corpus::Context& ctx) {
  DecodedLabel result;
  const std::size_t l = out.seq_len;
  if (out.bio_log.size() != l * 3) return result;
  std::vector<BioTag> tags(l, BioTag::outside);
  for (std::size_t t = 0; t < l; ++t) {
    bool in_segment = ctx.q_range.contains(t) || ctx.p_range.contains(t);
    if (!in_segment) continue;  // separators stay outside any span
    const double* row = out.bio_log.data() + t * 3;
    std::size_t cls = 0;
    for (std::size_t c = 1; c < 3; ++c)
      if (row[c] > row[cls]) cls = c;
    tags[t] = static_cast<BioTag>(cls);
  }
  // Repair a leading I into a B so every run is well formed.
  for (std::size_t t = 0; t < l; ++t)
    if (tags[t] == BioTag::inside && (t == 0 || tags[t - 1] == BioTag::outside))
      tags[t] = BioTag::begin;

  std::vector<std::string> texts;
  std::set<std::string> seen;
  std::size_t runs = 0;
  std::size_t t = 0;
  while (t < l) {
    if (tags[t] != BioTag::begin) {
      ++t;
      continue;
    }
    std::size_t start = t;
    ++t;
    while (t < l && tags[t] == BioTag::inside) ++t;
    std::string text = corpus::surface_text(ctx, start, t - 1);
    ++runs;
    std::string key = metrics::normalize(text);
    if (seen.insert(key).second) texts.push_back(std::move(text));
  }
  if (texts.empty()) return result;
  result.ok = true;
  result.texts = std::move(texts);
  result.debug = "bio runs=" + std::to_string(runs);
  return result;
}

std::vector<std::size_t> order_by_desc(const std::vector<double>& values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return values[a] > values[b];
  });
  return order;
}

}  // namespace

Prediction decode(const model::ForwardOutput& out, const corpus::Context& ctx,
                  const corpus::ContextNumbers& numbers, std::size_t max_span_len) {
  Prediction pred;
  pred.p_op = out.p_op;
  pred.p_type = out.p_type;

  std::vector<std::size_t> type_order = order_by_desc(out.p_type);
  for (std::size_t type_idx : type_order) {
    DecodedLabel label;
    switch (static_cast<AnswerType>(type_idx)) {
      case AnswerType::question_span: label = decode_span(out, ctx, true, max_span_len); break;
      case AnswerType::passage_span: label = decode_span(out, ctx, false, max_span_len); break;
      case AnswerType::count: label = decode_count(out); break;
      case AnswerType::arithmetic: label = decode_signs(out, numbers); break;
      case AnswerType::multi_spans: label = decode_bio(out, ctx); break;
    }
    if (!label.ok) continue;
    pred.answer_type = static_cast<AnswerType>(type_idx);
    pred.answer_texts = std::move(label.texts);
    pred.label_debug = std::move(label.debug);
    return pred;
  }

  pred.answer_type = static_cast<AnswerType>(type_order.front());
  pred.answer_texts = {""};
  pred.label_debug = "degenerate";
  pred.degenerate = true;
  return pred;
}

std::vector<Prediction> predict_all(model::Model& m,
                                    const std::vector<derivations::LabeledInstance>& data) {
  std::vector<Prediction> out;
  out.reserve(data.size());
  for (const derivations::LabeledInstance& inst : data) {
    tensor::Tape tape;
    model::ForwardOutput fwd = m.forward(tape, inst.ctx, inst.numbers);
    Prediction pred = decode(fwd, inst.ctx, inst.numbers, m.config().max_span_len);
    pred.id = inst.raw.id;
    out.push_back(std::move(pred));
  }
  return out;
}

MetricsReport evaluate(model::Model& m, const std::vector<derivations::LabeledInstance>& data) {
  if (data.empty()) throw std::runtime_error("evaluate: empty dataset");
  MetricsReport report;
  for (const derivations::LabeledInstance& inst : data) {
    tensor::Tape tape;
    model::ForwardOutput fwd = m.forward(tape, inst.ctx, inst.numbers);
    Prediction pred = decode(fwd, inst.ctx, inst.numbers, m.config().max_span_len);
    std::vector<std::vector<std::string>> golds;
    for (const corpus::GoldAnswer& g : inst.raw.answers) golds.push_back(g.answer_texts());
    metrics::EmF1 score = metrics::best_em_f1(pred.answer_texts, golds);
    report.em += score.em;
    report.f1 += score.f1;
    ++report.n;
    KindMetrics* bucket = nullptr;
    switch (inst.raw.answers.front().kind) {
      case corpus::AnswerKind::number: bucket = &report.number; break;
      case corpus::AnswerKind::spans: bucket = &report.spans; break;
      case corpus::AnswerKind::date: bucket = &report.date; break;
    }
    bucket->em += score.em;
    bucket->f1 += score.f1;
    ++bucket->n;
  }
  report.em /= static_cast<double>(report.n);
  report.f1 /= static_cast<double>(report.n);
  for (KindMetrics* k : {&report.number, &report.spans, &report.date}) {
    if (k->n > 0) {
      k->em /= static_cast<double>(k->n);
      k->f1 /= static_cast<double>(k->n);
    }
  }
  return report;
}

std::string MetricsReport::json() const {
  nlohmann::json j;
  j["em"] = em;
  j["f1"] = f1;
  j["n"] = n;
  auto kind = [](const KindMetrics& k) {
    nlohmann::json out;
    out["em"] = k.em;
    out["f1"] = k.f1;
    out["n"] = k.n;
    return out;
  };
  j["by_kind"]["number"] = kind(number);
  j["by_kind"]["spans"] = kind(spans);
  j["by_kind"]["date"] = kind(date);
  return j.dump(2);
}

std::string MetricsReport::per_kind_csv() const {
  std::ostringstream out;
  out << "kind,em,f1,n\n";
  out << "number," << number.em << ',' << number.f1 << ',' << number.n << '\n';
  out << "spans," << spans.em << ',' << spans.f1 << ',' << spans.n << '\n';
  out << "date," << date.em << ',' << date.f1 << ',' << date.n << '\n';
  out << "overall," << em << ',' << f1 << ',' << n << '\n';
  return out.str();
}

double operation_p_at_n(const std::vector<Prediction>& predictions,
                        const std::vector<std::set<rules::Op>>& gold_ops, std::size_t n) {
  if (predictions.size() != gold_ops.size())
    throw std::runtime_error("operation_p_at_n: size mismatch");
  std::size_t eligible = 0, hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (gold_ops[i].empty()) continue;
    ++eligible;
    std::vector<std::size_t> order = order_by_desc(predictions[i].p_op);
    std::size_t top = std::min(n, order.size());
    for (std::size_t k = 0; k < top; ++k) {
      if (gold_ops[i].count(static_cast<rules::Op>(order[k]))) {
        ++hits;
        break;
      }
    }
  }
  if (eligible == 0) throw std::runtime_error("operation_p_at_n: no instance has gold operations");
  return static_cast<double>(hits) / static_cast<double>(eligible);
}

std::string p_at_n_csv(const std::vector<Prediction>& predictions,
                       const std::vector<std::set<rules::Op>>& gold_ops) {
  std::ostringstream out;
  out << "n,p_at_n\n";
  for (std::size_t n = 1; n <= rules::kNumOps; ++n)
    out << n << ',' << operation_p_at_n(predictions, gold_ops, n) << '\n';
  return out.str();
}

CorrelationMatrix correlation_matrix(const std::vector<Prediction>& predictions) {
  CorrelationMatrix out;
  for (const Prediction& p : predictions) {
    std::size_t col = static_cast<std::size_t>(p.answer_type);
    for (std::size_t op = 0; op < rules::kNumOps; ++op) out.m[op][col] += p.p_op[op];
  }
  for (std::size_t op = 0; op < rules::kNumOps; ++op) {
    double total = std::accumulate(out.m[op].begin(), out.m[op].end(), 0.0);
    out.has_mass[op] = total > 0.0;
    if (out.has_mass[op])
      for (double& v : out.m[op]) v /= total;
  }
  return out;
}

std::string CorrelationMatrix::csv() const {
  std::ostringstream out;
  out << "operation";
  for (std::size_t t = 0; t < derivations::kNumTypes; ++t)
    out << ',' << derivations::answer_type_name(static_cast<AnswerType>(t));
  out << '\n';
  for (std::size_t op = 0; op < rules::kNumOps; ++op) {
    out << rules::op_name(static_cast<rules::Op>(op));
    for (double v : m[op]) out << ',' << v;
    out << '\n';
  }
  return out.str();
}

std::string predictions_jsonl(const std::vector<Prediction>& predictions) {
  std::string out;
  for (const Prediction& p : predictions) {
    nlohmann::json j;
    j["id"] = p.id;
    j["answers"] = p.answer_texts;
    j["type"] = std::string(derivations::answer_type_name(p.answer_type));
    j["p_op"] = p.p_op;
    j["p_type"] = p.p_type;
    out += j.dump();
    out += '\n';
  }
  return out;
}

VariantScore score_variant(const std::string& name, model::Model& m,
                           const std::vector<derivations::LabeledInstance>& data) {
  VariantScore score;
  score.name = name;
  MetricsReport report = evaluate(m, data);
  score.em = report.em;
  score.f1 = report.f1;
  std::vector<Prediction> preds = predict_all(m, data);
  std::vector<std::set<rules::Op>> gold_ops;
  for (const derivations::LabeledInstance& inst : data) gold_ops.push_back(inst.operations);
  score.p_at_1 = operation_p_at_n(preds, gold_ops, 1);
  score.p_at_2 = operation_p_at_n(preds, gold_ops, 2);
  return score;
}

std::string ablation_csv(const std::vector<VariantScore>& rows) {
  std::ostringstream out;
  out << "variant,em,f1,p_at_1,p_at_2\n";
  for (const VariantScore& r : rows)
    out << r.name << ',' << r.em << ',' << r.f1 << ',' << r.p_at_1 << ',' << r.p_at_2 << '\n';
  return out.str();
}

}  // namespace opera::evalcli
