#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "opera/corpus.hpp"

namespace opera::rules {

// The eleven symbolic reasoning units. Index order is part of the checkpoint
// format; do not reorder.
enum class Op : int {
  addition = 0,
  diff,
  max,
  min,
  argmax,
  argmin,
  argmore,
  argless,
  count,
  key_value,
  span,
};

inline constexpr std::size_t kNumOps = 11;

std::string_view op_name(Op op);
std::optional<Op> op_from_name(std::string_view name);

// One pattern element: a slot (any token gap) or a literal word with one or
// more alternatives. A multi-alternative element binds each alternative to
// the template operation at the same position.
struct PatternElem {
  bool is_slot = false;
  std::vector<std::string> alternatives;  // lowercased literal words
};

struct Template {
  std::vector<PatternElem> elems;
  std::vector<Op> ops;  // one entry, or one per alternative of the alt group
  int alt_group = -1;   // element index carrying the alternatives, -1 if none
  std::string source;   // original rule line, for diagnostics
};

struct RuleSet {
  std::vector<Template> templates;
  std::string version;
};

// Rule file: UTF-8, '#' comments, one rule per line in the form
//   OPERATION[/OPERATION...] ::= pattern
// where [Slot] marks a wildcard gap and a/b marks literal alternatives.
RuleSet compile_ruleset(const std::filesystem::path& path);
RuleSet compile_ruleset_text(std::string_view text, std::string_view version);

// The bundled default rules (identical to data/default.rules).
const std::string& default_rules_text();
RuleSet builtin_rules();

// Union of operations over all templates that match: literals must appear in
// order, gaps (possibly empty) are allowed only at slot positions, and the
// whole question must be covered. Matching is case-insensitive.
std::set<Op> match_operations(const std::vector<corpus::Token>& question, const RuleSet& rules);

struct OpDistribution {
  std::array<double, kNumOps> fraction{};
  bool empty = false;  // set when no instance carried any label
};

// Per-operation share of all emitted labels; fractions sum to 1 unless empty.
OpDistribution operation_distribution(const std::vector<std::set<Op>>& matched);

std::string distribution_csv(const OpDistribution& dist);

}  // namespace opera::rules
