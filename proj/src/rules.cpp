#include "opera/rules.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace opera::rules {

namespace {

constexpr std::array<std::string_view, kNumOps> kOpNames = {
    "ADDITION", "DIFF",    "MAX",   "MIN",       "ARGMAX", "ARGMIN",
    "ARGMORE",  "ARGLESS", "COUNT", "KEY_VALUE", "SPAN"};

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::vector<std::string> split_ws(std::string_view s) {
  std::vector<std::string> out;
  std::istringstream in{std::string(s)};
  std::string word;
  while (in >> word) out.push_back(word);
  return out;
}

[[noreturn]] void fail(std::size_t line_no, const std::string& msg) {
  throw std::runtime_error("rule file line " + std::to_string(line_no) + ": " + msg);
}

// True when the question tokens[from..] can be consumed by elems[elem..] with
// the given alternative choice for the alt group (-1 when the template has
// none or the element should try every alternative).
bool match_from(const std::vector<std::string>& tokens, std::size_t from,
                const Template& tmpl, std::size_t elem, int alt_choice) {
  if (elem == tmpl.elems.size()) return from == tokens.size();
  const PatternElem& pe = tmpl.elems[elem];
  if (pe.is_slot) {
    for (std::size_t skip = 0; from + skip <= tokens.size(); ++skip)
      if (match_from(tokens, from + skip, tmpl, elem + 1, alt_choice)) return true;
    return false;
  }
  if (from >= tokens.size()) return false;
  if (static_cast<int>(elem) == tmpl.alt_group) {
    const std::string& want = pe.alternatives[static_cast<std::size_t>(alt_choice)];
    if (tokens[from] != want) return false;
  } else {
    if (tokens[from] != pe.alternatives.front()) return false;
  }
  return match_from(tokens, from + 1, tmpl, elem + 1, alt_choice);
}

}  // namespace

std::string_view op_name(Op op) { return kOpNames[static_cast<std::size_t>(op)]; }

std::optional<Op> op_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kNumOps; ++i)
    if (kOpNames[i] == name) return static_cast<Op>(i);
  return std::nullopt;
}

RuleSet compile_ruleset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open rule file: " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return compile_ruleset_text(buf.str(), path.filename().string());
}

RuleSet compile_ruleset_text(std::string_view text, std::string_view version) {
  RuleSet out;
  out.version = std::string(version);
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (split_ws(line).empty()) continue;

    auto sep = line.find("::=");
    if (sep == std::string::npos) fail(line_no, "expected 'OPERATION ::= pattern'");
    std::vector<std::string> op_words = split_ws(line.substr(0, sep));
    if (op_words.size() != 1) fail(line_no, "expected a single operation group before '::='");

    Template tmpl;
    tmpl.source = line;
    std::istringstream ops_in(op_words.front());
    std::string op_token;
    while (std::getline(ops_in, op_token, '/')) {
      auto op = op_from_name(op_token);
      if (!op) fail(line_no, "unknown operation tag '" + op_token + "'");
      tmpl.ops.push_back(*op);
    }

    for (const std::string& word : split_ws(line.substr(sep + 3))) {
      PatternElem elem;
      if (lower(word) == "[slot]") {
        elem.is_slot = true;
      } else if (word.find('/') != std::string::npos) {
        std::istringstream alts(word);
        std::string alt;
        while (std::getline(alts, alt, '/')) {
          if (alt.empty()) fail(line_no, "empty alternative in '" + word + "'");
          elem.alternatives.push_back(lower(alt));
        }
        if (tmpl.alt_group != -1) fail(line_no, "more than one alternative group");
        tmpl.alt_group = static_cast<int>(tmpl.elems.size());
      } else {
        elem.alternatives.push_back(lower(word));
      }
      tmpl.elems.push_back(std::move(elem));
    }

    if (tmpl.elems.empty()) fail(line_no, "empty pattern");
    bool has_literal = std::any_of(tmpl.elems.begin(), tmpl.elems.end(),
                                   [](const PatternElem& e) { return !e.is_slot; });
    if (!has_literal) fail(line_no, "pattern needs at least one literal word");
    if (tmpl.alt_group == -1) {
      if (tmpl.ops.size() != 1)
        fail(line_no, "several operations but no a/b alternative group in the pattern");
    } else {
      std::size_t n_alts = tmpl.elems[static_cast<std::size_t>(tmpl.alt_group)].alternatives.size();
      if (n_alts != tmpl.ops.size())
        fail(line_no, std::to_string(tmpl.ops.size()) + " operations vs " +
                          std::to_string(n_alts) + " alternatives");
    }
    out.templates.push_back(std::move(tmpl));
  }
  return out;
}

const std::string& default_rules_text() {
  static const std::string text = R"(# Question -> operation templates.
# One rule per line:  OPERATION[/OPERATION] ::= pattern
# [Slot] matches any run of tokens (possibly empty); a/b alternatives bind
# one-to-one to the operations listed on the left.

ADDITION/DIFF   ::= how many [Slot] more/less [Slot] over [Slot]
MAX/MIN         ::= how many yards [Slot] longest/shortest [Slot]
ARGMAX/ARGMIN   ::= which player [Slot] longest/shortest [Slot]
ARGMORE/ARGLESS ::= who [Slot] more/less [Slot] , [Slot] or [Slot]
COUNT           ::= how many field goals [Slot]
KEY_VALUE       ::= how many percent of [Slot]
SPAN            ::= which team [Slot]

# Extensions beyond the core templates.
ADDITION        ::= how many [Slot] total [Slot]
)";
  return text;
}

RuleSet builtin_rules() { return compile_ruleset_text(default_rules_text(), "builtin-1"); }

std::set<Op> match_operations(const std::vector<corpus::Token>& question, const RuleSet& rules) {
  std::vector<std::string> tokens;
  tokens.reserve(question.size());
  for (const corpus::Token& t : question) tokens.push_back(lower(t.text));

  std::set<Op> out;
  for (const Template& tmpl : rules.templates) {
    if (tmpl.alt_group == -1) {
      if (match_from(tokens, 0, tmpl, 0, -1)) out.insert(tmpl.ops.front());
    } else {
      for (std::size_t a = 0; a < tmpl.ops.size(); ++a)
        if (match_from(tokens, 0, tmpl, 0, static_cast<int>(a))) out.insert(tmpl.ops[a]);
    }
  }
  return out;
}

OpDistribution operation_distribution(const std::vector<std::set<Op>>& matched) {
  OpDistribution out;
  std::size_t total = 0;
  for (const std::set<Op>& ops : matched) {
    for (Op op : ops) {
      out.fraction[static_cast<std::size_t>(op)] += 1.0;
      ++total;
    }
  }
  if (total == 0) {
    out.empty = true;
    return out;
  }
  for (double& f : out.fraction) f /= static_cast<double>(total);
  return out;
}

std::string distribution_csv(const OpDistribution& dist) {
  std::ostringstream out;
  out << "operation,fraction\n";
  for (std::size_t i = 0; i < kNumOps; ++i)
    out << kOpNames[i] << ',' << dist.fraction[i] << '\n';
  return out.str();
}

}  // namespace opera::rules
