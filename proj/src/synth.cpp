#include "opera/synth.hpp"

#include <iomanip>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "opera/rules.hpp"
#include "opera/training.hpp"

namespace opera::synth {

using derivations::AnswerType;
using nlohmann::json;
using rules::Op;

namespace {

const std::vector<std::string> kNames = {"Akers",  "Brown",  "Potter", "Russell", "Higgins",
                                         "Dawson", "Keller", "Monroe", "Foster",  "Bryant"};
const std::vector<std::string> kTeams = {"Raiders", "Texans", "Falcons",
                                         "Bears",   "Jets",   "Eagles"};
const std::vector<std::string> kPlaces = {"downtown", "uptown", "riverside", "lakeside"};
const std::vector<std::string> kColors = {"crimson", "golden", "silver", "navy"};
const std::vector<std::string> kCountLeads = {
    "In the first quarter", "In the second quarter", "In the third quarter",
    "In the fourth quarter", "Late in the game"};

struct Draft {
  std::string question;
  std::string passage;
  json answer;
  std::set<Op> expect_ops;
  std::multiset<AnswerType> expect_types;  // exact derivation-type multiset
  bool exact_types = true;
};

class Sampler {
 public:
  explicit Sampler(std::uint64_t seed) : rng_(seed) {}

  int range(int lo, int hi) {  // inclusive
    std::uniform_int_distribution<int> d(lo, hi);
    return d(rng_);
  }
  const std::string& pick(const std::vector<std::string>& pool) {
    return pool[static_cast<std::size_t>(range(0, static_cast<int>(pool.size()) - 1))];
  }
  std::pair<std::string, std::string> pick_two(const std::vector<std::string>& pool) {
    std::string a = pick(pool);
    std::string b = pick(pool);
    while (b == a) b = pick(pool);
    return {a, b};
  }

 private:
  std::mt19937_64 rng_;
};

json number_answer(long long v) {
  json a;
  a["number"] = std::to_string(v);
  a["spans"] = json::array();
  return a;
}

json spans_answer(const std::vector<std::string>& spans) {
  json a;
  a["number"] = "";
  a["spans"] = spans;
  return a;
}

Draft make_draft(std::size_t family, Sampler& s) {
  Draft d;
  switch (family) {
    case 0: {  // three-term sum
      auto [n1, n2] = s.pick_two(kNames);
      std::string n3 = s.pick(kNames);
      int a = s.range(11, 48), b = s.range(11, 48), c = s.range(11, 48);
      d.question = "How many total yards of touchdown passes were there?";
      d.passage = n1 + " threw a " + std::to_string(a) + "-yard touchdown pass in the " +
                  s.pick({"first", "second"}) + " quarter. " + n2 + " added a " +
                  std::to_string(b) + "-yard touchdown pass after the break. " + n3 +
                  " caught a " + std::to_string(c) + "-yard touchdown pass late in the game.";
      d.answer = number_answer(a + b + c);
      d.expect_ops = {Op::addition};
      d.expect_types = {AnswerType::arithmetic};
      break;
    }
    case 1: {  // difference of two kicks
      std::string n = s.pick(kNames);
      int x = s.range(40, 98), y = s.range(11, x - 10);
      d.question = "How many less yards was " + n + "'s second field goal over his first?";
      d.passage = n + " kicked a " + std::to_string(x) + "-yard field goal in the " +
                  s.pick({"first", "second", "third"}) + " quarter. Later " + n + " kicked a " +
                  std::to_string(y) + "-yard field goal.";
      d.answer = number_answer(x - y);
      d.expect_ops = {Op::diff};
      d.expect_types = {AnswerType::arithmetic};
      break;
    }
    case 2:
    case 3: {  // longest / shortest kick; the asked-for value is listed first
      bool longest = family == 2;
      auto [n1, n2] = s.pick_two(kNames);
      int hi = s.range(40, 98), lo = s.range(11, hi - 1);
      int first = longest ? hi : lo, second = longest ? lo : hi;
      d.question = std::string("How many yards was the ") + (longest ? "longest" : "shortest") +
                   " field goal in the game?";
      d.passage = n1 + " hit a " + std::to_string(first) + "-yard field goal early. " + n2 +
                  " added a " + std::to_string(second) + "-yard field goal later.";
      d.answer = number_answer(first);
      d.expect_ops = {longest ? Op::max : Op::min};
      d.expect_types = {AnswerType::passage_span, AnswerType::arithmetic};
      break;
    }
    case 4:
    case 5: {  // player with the longest / shortest reception; answer listed first
      bool longest = family == 4;
      auto [n1, n2] = s.pick_two(kNames);
      int hi = s.range(40, 98), lo = s.range(11, hi - 1);
      int first = longest ? hi : lo, second = longest ? lo : hi;
      d.question = std::string("Which player had the ") + (longest ? "longest" : "shortest") +
                   " touchdown reception?";
      d.passage = n1 + " had a " + std::to_string(first) + "-yard reception, while " + n2 +
                  " had a " + std::to_string(second) + "-yard reception.";
      d.answer = spans_answer({n1});
      d.expect_ops = {longest ? Op::argmax : Op::argmin};
      d.expect_types = {AnswerType::passage_span, AnswerType::multi_spans};
      break;
    }
    case 6:
    case 7: {  // who kicked more / less; the asked-for kicker is listed first
      bool more = family == 6;
      auto [n1, n2] = s.pick_two(kNames);
      int x = s.range(5, 9), y = s.range(2, x - 1);
      int first = more ? x : y, second = more ? y : x;
      d.question = std::string("Who kicked ") + (more ? "more" : "less") + " field goals, " + n1 +
                   " or " + n2 + "?";
      d.passage = n1 + " converted " + std::to_string(first) +
                  " field goals on the afternoon, while " + n2 + " managed " +
                  std::to_string(second) + " field goals.";
      d.answer = spans_answer({n1});
      d.expect_ops = {more ? Op::argmore : Op::argless};
      d.expect_types = {AnswerType::question_span, AnswerType::passage_span,
                        AnswerType::multi_spans};
      break;
    }
    case 8:
    case 9: {  // who ran for more / less; names appear only in the question
      bool more = family == 8;
      auto [n1, n2] = s.pick_two(kNames);
      int x = s.range(40, 98), y = s.range(11, x - 1);
      d.question = std::string("Who ran for ") + (more ? "more" : "less") + " yards, " + n1 +
                   " or " + n2 + "?";
      d.passage = more ? ("The runner mentioned first piled up " + std::to_string(x) +
                          " rushing yards, well clear of the " + std::to_string(y) +
                          " managed by the other back.")
                       : ("The runner mentioned first was held to " + std::to_string(y) +
                          " rushing yards, well behind the " + std::to_string(x) +
                          " piled up by the other back.");
      d.answer = spans_answer({n1});
      d.expect_ops = {more ? Op::argmore : Op::argless};
      d.expect_types = {AnswerType::question_span, AnswerType::multi_spans};
      break;
    }
    case 10: {  // count of repeated events; answer only reachable by counting
      std::string n = s.pick(kNames);
      int k = s.range(2, 4);
      d.question = "How many field goals did " + n + " kick?";
      std::string passage;
      for (int i = 0; i < k; ++i) {
        if (i) passage += ' ';
        passage += kCountLeads[static_cast<std::size_t>(i)] + " " + n + " kicked a " +
                   std::to_string(s.range(11, 98)) + "-yard field goal.";
      }
      d.passage = passage;
      d.answer = number_answer(k);
      d.expect_ops = {Op::count};
      d.expect_types = {AnswerType::count};
      break;
    }
    case 11: {  // key-value percent lookup
      std::string place = s.pick(kPlaces);
      int v = s.range(11, 98);
      d.question = "How many percent of " + place + " households owned a car?";
      d.passage = "A city survey found that " + std::to_string(v) + " percent of " + place +
                  " households owned a car, a figure that surprised local officials.";
      d.answer = number_answer(v);
      d.expect_ops = {Op::key_value};
      d.expect_types = {AnswerType::passage_span, AnswerType::arithmetic};
      break;
    }
    case 12: {  // plain passage span
      std::string team = s.pick(kTeams);
      d.question = "Which team scored the final TD of the game?";
      d.passage = "Late in the fourth, the " + team +
                  " scored the final TD to seal a win for the home crowd.";
      d.answer = spans_answer({team});
      d.expect_ops = {Op::span};
      d.expect_types = {AnswerType::passage_span, AnswerType::multi_spans};
      break;
    }
    case 13: {  // two-team multi-span
      auto [t1, t2] = s.pick_two(kTeams);
      d.question = "Which team scored in the opening half?";
      d.passage = "The " + t1 + " scored in the opening half, and the " + t2 +
                  " scored in the opening half as well.";
      d.answer = spans_answer({t1, t2});
      d.expect_ops = {Op::span};
      d.expect_types = {AnswerType::multi_spans};
      break;
    }
    case 14: {  // no template matches; answer loss only
      std::string color = s.pick(kColors);
      d.question = "What color was the home banner?";
      d.passage = "The home banner was " + color + ", waving over the crowd all afternoon.";
      d.answer = spans_answer({color});
      d.expect_ops = {};
      d.expect_types = {AnswerType::passage_span, AnswerType::multi_spans};
      break;
    }
    case 15: {  // two operations fire; count and sum agree on the answer
      auto [n1, n2] = s.pick_two(kNames);
      int x = s.range(2, 4), y = s.range(2, 4);
      d.question = "How many field goals did " + n1 + " and " + n2 + " total over the game?";
      d.passage = n1 + " made " + std::to_string(x) + " field goals in regulation, and " + n2 +
                  " made " + std::to_string(y) + " field goals in the same stretch.";
      d.answer = number_answer(x + y);
      d.expect_ops = {Op::count, Op::addition};
      d.expect_types = {AnswerType::count, AnswerType::arithmetic};
      break;
    }
    default: throw std::runtime_error("unknown family");
  }
  return d;
}

constexpr std::size_t kFamilies = 16;

// Generation wheel. Families whose answers need number reasoning or tight
// span boundaries get extra weight so their heads see enough examples.
const std::vector<std::size_t> kFamilyWheel = {0, 1, 2,  3,  4,  5,  6,  7, 8, 9, 10, 11, 12,
                                               13, 14, 15, 0,  1,  2,  3, 2, 3, 10, 15, 4, 5};

corpus::GoldAnswer draft_gold(const Draft& d) {
  corpus::GoldAnswer gold;
  std::string number = d.answer["number"].get<std::string>();
  if (!number.empty()) {
    gold.kind = corpus::AnswerKind::number;
    gold.number_text = number;
  } else {
    gold.kind = corpus::AnswerKind::spans;
    for (const auto& s : d.answer["spans"]) gold.spans.push_back(s.get<std::string>());
  }
  return gold;
}

bool verify_draft(const Draft& d, const rules::RuleSet& rules, const corpus::Vocab& vocab) {
  std::vector<corpus::Token> q_tokens = corpus::tokenize(d.question);
  if (rules::match_operations(q_tokens, rules) != d.expect_ops) return false;
  corpus::Context ctx =
      corpus::build_context(q_tokens, corpus::tokenize(d.passage), vocab, 512, d.question,
                            d.passage);
  corpus::ContextNumbers numbers = corpus::context_numbers(ctx);
  derivations::DerivationSet set = derivations::search_all(ctx, numbers, draft_gold(d));
  if (set.derivations.empty()) return false;
  if (d.exact_types) {
    std::multiset<AnswerType> got;
    for (const derivations::Derivation& deriv : set.derivations) got.insert(deriv.type);
    if (got != d.expect_types) return false;
  }
  return true;
}

}  // namespace

std::string generate_drop_json(const SynthOptions& options) {
  Sampler sampler(options.seed);
  rules::RuleSet ruleset = rules::builtin_rules();
  corpus::Vocab stub_vocab = corpus::build_vocab({}, 1);  // ids are irrelevant here

  json doc = json::object();
  for (std::size_t i = 0; i < options.instances; ++i) {
    std::size_t family = kFamilyWheel[i % kFamilyWheel.size()];
    Draft draft;
    bool ok = false;
    for (int attempt = 0; attempt < 200 && !ok; ++attempt) {
      draft = make_draft(family, sampler);
      ok = verify_draft(draft, ruleset, stub_vocab);
    }
    if (!ok)
      throw std::runtime_error("synth: family " + std::to_string(family) +
                               " failed to produce a verified instance");
    std::ostringstream key;
    key << "synth-" << std::setw(4) << std::setfill('0') << i;
    json entry;
    entry["passage"] = draft.passage;
    json qa;
    qa["query_id"] = key.str() + "-q0";
    qa["question"] = draft.question;
    qa["answer"] = draft.answer;
    entry["qa_pairs"] = json::array({qa});
    doc[key.str()] = entry;
  }
  return doc.dump(1);
}

GradcheckFixture make_gradcheck_fixture() {
  GradcheckFixture fx;
  corpus::RawInstance raw;
  raw.id = "gradcheck-0";
  raw.question_text = "How many yards was the longest of 3 plays?";
  raw.passage_text = "Keller ran for 45 yards and later added 12 more.";
  corpus::GoldAnswer gold;
  gold.kind = corpus::AnswerKind::number;
  gold.number_text = "45";
  raw.answers.push_back(gold);

  fx.vocab = corpus::build_vocab({raw}, 1);
  derivations::LabeledInstance& inst = fx.instance;
  inst.raw = raw;
  inst.ctx = corpus::build_context(corpus::tokenize(raw.question_text),
                                   corpus::tokenize(raw.passage_text), fx.vocab, 64,
                                   raw.question_text, raw.passage_text);
  inst.numbers = corpus::context_numbers(inst.ctx);
  if (inst.numbers.count() != 3)
    throw std::runtime_error("gradcheck fixture expects three number mentions");

  using derivations::AnswerType;
  using derivations::BioTag;
  using derivations::Derivation;
  using derivations::Sign;
  const std::size_t l = inst.ctx.length();
  // "3" in the question, "45" and "12" in the passage.
  const std::size_t q3 = inst.numbers.joint_index[0];
  const std::size_t p45 = inst.numbers.joint_index[1];
  inst.derivations.gold = gold;
  inst.derivations.derivations.push_back(
      Derivation{AnswerType::question_span, derivations::SpanLabel{q3, q3}});
  inst.derivations.derivations.push_back(
      Derivation{AnswerType::passage_span, derivations::SpanLabel{p45, p45}});
  inst.derivations.derivations.push_back(Derivation{AnswerType::count, derivations::CountLabel{3}});
  inst.derivations.derivations.push_back(Derivation{
      AnswerType::arithmetic, derivations::SignVector{{Sign::zero, Sign::plus, Sign::minus}}});
  derivations::BioLabel bio;
  bio.tags.assign(l, BioTag::outside);
  bio.tags[inst.ctx.p_range.begin] = BioTag::begin;  // "Keller"
  bio.tags[p45] = BioTag::begin;                     // "45 yards"
  bio.tags[p45 + 1] = BioTag::inside;
  inst.derivations.derivations.push_back(Derivation{AnswerType::multi_spans, std::move(bio)});
  inst.operations = {rules::Op::max, rules::Op::count};
  inst.usable = true;
  return fx;
}

model::ModelConfig gradcheck_config(const GradcheckFixture& fixture, std::size_t d_h,
                                    std::uint64_t seed) {
  model::ModelConfig cfg;
  cfg.d_h = d_h;
  cfg.n_h = 4;
  cfg.encoder_layers = 1;
  cfg.max_seq_len = fixture.instance.ctx.length();
  cfg.vocab_size = fixture.vocab.size();
  cfg.seed = seed;
  return cfg;
}

double gradcheck_loss(model::Model& m, const GradcheckFixture& fixture) {
  tensor::Tape tape;
  model::ForwardOutput out = m.forward(tape, fixture.instance.ctx, fixture.instance.numbers);
  training::LossRefs refs = training::compute_loss(tape, out, fixture.instance, 0.3);
  tape.backward(refs.total);
  return tape.value(refs.total).item();
}

}  // namespace opera::synth
