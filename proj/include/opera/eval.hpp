#pragma once

#include <array>
#include <set>
#include <string>
#include <vector>

#include "opera/derivations.hpp"
#include "opera/model.hpp"
#include "opera/rules.hpp"

namespace opera::evalcli {

struct Prediction {
  std::string id;
  std::vector<std::string> answer_texts;  // never empty; [""] when degenerate
  derivations::AnswerType answer_type = derivations::AnswerType::passage_span;
  std::vector<double> p_op;    // 11
  std::vector<double> p_type;  // 5
  std::string label_debug;     // chosen label, for audits
  bool degenerate = false;     // every answer type failed to decode
};

// Greedy type-then-label decoding: answer types in descending p_type order,
// skipping degenerate decodes (empty BIO set, all-zero signs, no numbers for
// an arithmetic answer, empty segment). Never throws on valid tables.
Prediction decode(const model::ForwardOutput& out, const corpus::Context& ctx,
                  const corpus::ContextNumbers& numbers, std::size_t max_span_len);

std::vector<Prediction> predict_all(model::Model& m,
                                    const std::vector<derivations::LabeledInstance>& data);

struct KindMetrics {
  double em = 0.0, f1 = 0.0;
  std::size_t n = 0;
};

struct MetricsReport {
  double em = 0.0, f1 = 0.0;
  std::size_t n = 0;
  KindMetrics number, spans, date;  // keyed by the primary gold answer kind

  std::string json() const;
  std::string per_kind_csv() const;
};

MetricsReport evaluate(model::Model& m, const std::vector<derivations::LabeledInstance>& data);

// Fraction of instances with a non-empty gold operation set whose top-n
// predicted operations intersect it. Errors when nothing is eligible.
double operation_p_at_n(const std::vector<Prediction>& predictions,
                        const std::vector<std::set<rules::Op>>& gold_ops, std::size_t n);

std::string p_at_n_csv(const std::vector<Prediction>& predictions,
                       const std::vector<std::set<rules::Op>>& gold_ops);

// 11x5 operation/answer-type matrix: per predicted answer type, the summed
// p_op mass, then each operation row normalized to 1.
struct CorrelationMatrix {
  std::array<std::array<double, derivations::kNumTypes>, rules::kNumOps> m{};
  std::array<bool, rules::kNumOps> has_mass{};

  std::string csv() const;
};

CorrelationMatrix correlation_matrix(const std::vector<Prediction>& predictions);

std::string predictions_jsonl(const std::vector<Prediction>& predictions);

struct VariantScore {
  std::string name;
  double em = 0.0, f1 = 0.0, p_at_1 = 0.0, p_at_2 = 0.0;
};

VariantScore score_variant(const std::string& name, model::Model& m,
                           const std::vector<derivations::LabeledInstance>& data);

std::string ablation_csv(const std::vector<VariantScore>& rows);

}  // namespace opera::evalcli
