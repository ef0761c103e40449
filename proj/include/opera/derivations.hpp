#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include <set>

#include "opera/corpus.hpp"
#include "opera/decimal.hpp"
#include "opera/rules.hpp"

namespace opera::derivations {

// Answer types the prediction module can decode. Index order is part of the
// checkpoint format; do not reorder.
enum class AnswerType : int {
  question_span = 0,
  passage_span,
  count,
  arithmetic,
  multi_spans,
};

inline constexpr std::size_t kNumTypes = 5;

std::string_view answer_type_name(AnswerType t);

// Inclusive token indices into the joint sequence; both ends must lie in the
// same segment.
struct SpanLabel {
  std::size_t start = 0;
  std::size_t end = 0;
  bool operator==(const SpanLabel&) const = default;
};

// Class order is fixed: zero, plus, minus.
enum class Sign : std::int8_t { zero = 0, plus = 1, minus = 2 };

struct SignVector {
  std::vector<Sign> signs;  // one per number mention, in mention order
  bool operator==(const SignVector&) const = default;
};

struct CountLabel {
  int k = 0;  // 0..9
  bool operator==(const CountLabel&) const = default;
};

enum class BioTag : std::int8_t { begin = 0, inside = 1, outside = 2 };

struct BioLabel {
  std::vector<BioTag> tags;  // one per joint-sequence token
  bool operator==(const BioLabel&) const = default;
};

struct Derivation {
  AnswerType type = AnswerType::passage_span;
  std::variant<SpanLabel, SignVector, CountLabel, BioLabel> label;
  bool operator==(const Derivation&) const = default;
};

struct DerivationSet {
  std::vector<Derivation> derivations;
  corpus::GoldAnswer gold;
};

// Runs a derivation back to answer text(s). Label invariants are enforced;
// a violated invariant is an error, never a silently wrong answer.
std::vector<std::string> execute(const Derivation& d, const corpus::Context& ctx,
                                 const corpus::ContextNumbers& numbers);

// One question/passage span derivation per token-aligned occurrence of the
// answer. Eligible golds: a single span, a number whose text occurs
// verbatim, or a flattened date.
std::vector<Derivation> search_spans(const corpus::Context& ctx, const corpus::GoldAnswer& gold);

// Every sign assignment with at most max_terms non-zero signs whose exact
// decimal sum lands within tol of the gold number. The all-zero vector is
// excluded even for a gold of 0.
std::vector<Derivation> search_arithmetic(const corpus::ContextNumbers& numbers,
                                          const corpus::GoldAnswer& gold, int max_terms = 3,
                                          Decimal tol = Decimal::from_parts(1, 5));

// A count label iff the gold is an integer 0..9.
std::vector<Derivation> search_count(const corpus::GoldAnswer& gold);

// A single BIO labeling that marks every occurrence of every gold span,
// provided each span occurs at least once. Overlaps resolve longest-first,
// left-to-right.
std::vector<Derivation> search_multispan(const corpus::Context& ctx,
                                         const corpus::GoldAnswer& gold);

struct SearchStats {
  std::size_t dropped_unsound = 0;  // candidates that failed the execute check
};

// Union of all searches, each member verified to execute back to the
// normalized gold answer; failures are dropped and counted.
DerivationSet search_all(const corpus::Context& ctx, const corpus::ContextNumbers& numbers,
                         const corpus::GoldAnswer& gold, SearchStats* stats = nullptr);

// A fully prepared training instance: context, numbers, rule-derived
// operations, and the searched derivation set. Instances without any
// derivation are kept but flagged unusable for the answer loss.
struct LabeledInstance {
  corpus::RawInstance raw;
  corpus::Context ctx;
  corpus::ContextNumbers numbers;
  std::set<rules::Op> operations;
  DerivationSet derivations;
  bool usable = false;
};

LabeledInstance label_instance(const corpus::RawInstance& raw, const corpus::Vocab& vocab,
                               const rules::RuleSet& rules, std::size_t max_seq_len,
                               SearchStats* stats = nullptr);

std::vector<LabeledInstance> label_all(const std::vector<corpus::RawInstance>& raw,
                                       const corpus::Vocab& vocab, const rules::RuleSet& rules,
                                       std::size_t max_seq_len, SearchStats* stats = nullptr);

// Line-delimited JSON: {id, operations:[tags], derivations:[...], usable}.
std::string labeled_dump_jsonl(const std::vector<LabeledInstance>& instances);

}  // namespace opera::derivations
