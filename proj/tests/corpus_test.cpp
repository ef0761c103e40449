#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>
#include <regex>

#include "opera/corpus.hpp"
#include "opera/decimal.hpp"

using namespace opera;
using corpus::Source;
using corpus::Token;

TEST_CASE("decimal parse and format") {
  CHECK(Decimal::parse("73")->to_string() == "73");
  CHECK(Decimal::parse("73.0")->to_string() == "73");
  CHECK(Decimal::parse("1,000")->to_string() == "1000");
  CHECK(Decimal::parse("1,234,567")->to_string() == "1234567");
  CHECK(Decimal::parse("3.50")->to_string() == "3.5");
  CHECK(Decimal::parse("-12.25")->to_string() == "-12.25");
  CHECK(Decimal::parse("0.5")->to_string() == "0.5");
  CHECK_FALSE(Decimal::parse("1,00").has_value());
  CHECK_FALSE(Decimal::parse("12,34").has_value());
  CHECK_FALSE(Decimal::parse("").has_value());
  CHECK_FALSE(Decimal::parse("abc").has_value());
  CHECK_FALSE(Decimal::parse("1.2.3").has_value());
}

TEST_CASE("decimal arithmetic is exact") {
  Decimal a = *Decimal::parse("0.1");
  Decimal b = *Decimal::parse("0.2");
  CHECK((a + b) == *Decimal::parse("0.3"));
  CHECK((a + b).to_string() == "0.3");
  Decimal sum = *Decimal::parse("23") + *Decimal::parse("40") + *Decimal::parse("10");
  CHECK(sum.to_string() == "73");
  CHECK((*Decimal::parse("5") - *Decimal::parse("3")).to_string() == "2");
  CHECK((-*Decimal::parse("4")).to_string() == "-4");
  CHECK(Decimal::parse("2.5")->abs() == *Decimal::parse("2.5"));
  CHECK((*Decimal::parse("1") - *Decimal::parse("3")).abs().to_string() == "2");
}

TEST_CASE("tokenize splits hyphenated number compounds") {
  auto tokens = corpus::tokenize("a 53-yard and a 24-yard field goal");
  std::vector<std::string> texts;
  for (const Token& t : tokens) texts.push_back(t.text);
  CHECK(std::count(texts.begin(), texts.end(), "53") == 1);
  CHECK(std::count(texts.begin(), texts.end(), "24") == 1);
  CHECK(std::count(texts.begin(), texts.end(), "-") == 2);
}

TEST_CASE("tokenize basics") {
  CHECK(corpus::tokenize("").empty());
  auto tokens = corpus::tokenize("Who threw the longest pass?");
  std::vector<std::string> texts;
  for (const Token& t : tokens) texts.push_back(t.text);
  CHECK(texts == std::vector<std::string>{"Who", "threw", "the", "longest", "pass", "?"});
  CHECK(corpus::tokenize("1,000")[0].text == "1,000");
  CHECK(corpus::tokenize("3.5 yards")[0].text == "3.5");
}

namespace {

std::string random_text(std::mt19937_64& rng) {
  static const std::vector<std::string> words = {"alpha", "bravo", "kick", "yard", "united"};
  static const std::vector<std::string> word_numbers = {"three", "ten", "zero"};
  std::uniform_int_distribution<int> kind(0, 7);
  std::uniform_int_distribution<int> pieces(1, 12);
  std::uniform_int_distribution<int> plain(1, 99999);
  std::uniform_int_distribution<int> small(1, 999);
  std::uniform_int_distribution<int> frac(1, 99);
  std::string out;
  int n = pieces(rng);
  for (int i = 0; i < n; ++i) {
    if (!out.empty()) out += ' ';
    switch (kind(rng)) {
      case 0: out += words[static_cast<std::size_t>(plain(rng)) % words.size()]; break;
      case 1: out += std::to_string(plain(rng)); break;
      case 2: {  // comma-grouped
        int head = small(rng);
        out += std::to_string(head) + ",";
        char buf[8];
        std::snprintf(buf, sizeof buf, "%03d", small(rng) % 1000);
        out += buf;
        break;
      }
      case 3: out += std::to_string(small(rng)) + "." + std::to_string(frac(rng)); break;
      case 4: {  // ordinal
        int v = small(rng);
        const char* suffix[] = {"st", "nd", "rd", "th"};
        out += std::to_string(v) + suffix[v % 4];
        break;
      }
      case 5: out += word_numbers[static_cast<std::size_t>(plain(rng)) % word_numbers.size()]; break;
      case 6: out += std::to_string(small(rng)) + "-yard"; break;
      default: out += (plain(rng) % 2) ? "(" : ","; break;
    }
  }
  return out;
}

}  // namespace

TEST_CASE("token offsets round-trip through the source string") {
  std::mt19937_64 rng(11);
  for (int iter = 0; iter < 300; ++iter) {
    std::string text = random_text(rng);
    auto tokens = corpus::tokenize(text);
    std::size_t prev_end = 0;
    for (const Token& t : tokens) {
      CHECK(t.char_start < t.char_end);
      CHECK(t.char_end <= text.size());
      CHECK(t.char_start >= prev_end);
      prev_end = t.char_end;
      CHECK(text.substr(t.char_start, t.char_end - t.char_start) == t.text);
    }
  }
}

TEST_CASE("number extraction matches a regex oracle on random text") {
  const std::regex number_re(R"((\d{1,3}(,\d{3})+|\d+)(\.\d+)?)");
  const std::regex word_re(R"(\b(zero|three|ten)\b)", std::regex::icase);
  std::mt19937_64 rng(29);
  for (int iter = 0; iter < 300; ++iter) {
    std::string text = random_text(rng);

    // Oracle: scan the raw string, collecting digit patterns and the word
    // numbers the generator can emit, in order of appearance.
    std::vector<std::pair<std::size_t, std::string>> expected;
    for (auto it = std::sregex_iterator(text.begin(), text.end(), number_re);
         it != std::sregex_iterator(); ++it) {
      std::string m = it->str();
      std::string digits;
      for (char c : m)
        if (c != ',') digits.push_back(c);
      expected.emplace_back(static_cast<std::size_t>(it->position()),
                            Decimal::parse(digits)->to_string());
    }
    for (auto it = std::sregex_iterator(text.begin(), text.end(), word_re);
         it != std::sregex_iterator(); ++it) {
      std::string w = it->str();
      std::string value = w == "zero" ? "0" : (w == "three" ? "3" : "10");
      expected.emplace_back(static_cast<std::size_t>(it->position()), value);
    }
    std::sort(expected.begin(), expected.end());

    auto tokens = corpus::tokenize(text);
    auto mentions = corpus::extract_numbers(tokens, Source::passage);
    REQUIRE(mentions.size() == expected.size());
    for (std::size_t i = 0; i < mentions.size(); ++i)
      CHECK(mentions[i].value.to_string() == expected[i].second);
  }
}

TEST_CASE("number extraction examples") {
  auto values = [](const std::string& text) {
    std::vector<std::string> out;
    for (const auto& m : corpus::extract_numbers(corpus::tokenize(text), Source::passage))
      out.push_back(m.value.to_string());
    return out;
  };
  CHECK(values("a 29-yard touchdown and an 80-yard punt") ==
        std::vector<std::string>{"29", "80"});
  CHECK(values("1,000") == std::vector<std::string>{"1000"});
  CHECK(values("no numbers here") == std::vector<std::string>{});
  CHECK(values("the 3rd quarter") == std::vector<std::string>{"3"});
  CHECK(values("three field goals") == std::vector<std::string>{"3"});
  auto mentions = corpus::extract_numbers(corpus::tokenize("29 then 80"), Source::question);
  REQUIRE(mentions.size() == 2);
  CHECK(mentions[0].token_index == 0);
  CHECK(mentions[1].token_index == 2);
  CHECK(mentions[0].source == Source::question);
}

TEST_CASE("load_drop_json maps qa_pairs and answer precedence") {
  std::string json = R"({
    "p1": {
      "passage": "Kris Brown kicked a 53-yard field goal.",
      "qa_pairs": [
        {"query_id": "q1", "question": "How many yards?",
         "answer": {"number": "73", "spans": []}},
        {"query_id": "q2", "question": "Which period?",
         "answer": {"number": "", "spans": ["1963-1974"]},
         "validated_answers": [{"number": "", "spans": ["1963-1974", "extra"]}]}
      ]
    }
  })";
  corpus::LoadReport report;
  auto instances = corpus::load_drop_json_text(json, "test", &report);
  REQUIRE(instances.size() == 2);
  CHECK(report.passages == 1);
  CHECK(report.instances == 2);
  CHECK(instances[0].id == "q1");
  CHECK(instances[0].answers.front().kind == corpus::AnswerKind::number);
  CHECK(instances[0].answers.front().number_text == "73");
  CHECK(instances[1].answers.front().kind == corpus::AnswerKind::spans);
  CHECK(instances[1].answers.front().spans == std::vector<std::string>{"1963-1974"});
  CHECK(instances[1].answers.size() == 2);  // validated alternate kept
}

TEST_CASE("load_drop_json skips empty answers and reports malformed input") {
  std::string json = R"({
    "p1": {"passage": "x", "qa_pairs": [
      {"query_id": "q1", "question": "?", "answer": {"number": "", "spans": []}},
      {"query_id": "q2", "question": "?", "answer": {"number": "4", "spans": []}}
    ]}
  })";
  corpus::LoadReport report;
  auto instances = corpus::load_drop_json_text(json, "test", &report);
  CHECK(instances.size() == 1);
  CHECK(report.skipped_empty_answer == 1);
  CHECK_THROWS_WITH_AS(corpus::load_drop_json_text("{not json", "bad", nullptr),
                       doctest::Contains("malformed JSON"), std::runtime_error);
  CHECK_THROWS_AS(corpus::load_drop_json_text(R"({"p": {"qa_pairs": []}})", "t", nullptr),
                  std::runtime_error);
}

TEST_CASE("date answers load when number and spans are empty") {
  std::string json = R"({
    "p1": {"passage": "x", "qa_pairs": [
      {"query_id": "q1", "question": "When?",
       "answer": {"number": "", "spans": [], "date": {"day": "6", "month": "June", "year": ""}}}
    ]}
  })";
  auto instances = corpus::load_drop_json_text(json, "test", nullptr);
  REQUIRE(instances.size() == 1);
  CHECK(instances[0].answers.front().kind == corpus::AnswerKind::date);
  CHECK(instances[0].answers.front().answer_texts() == std::vector<std::string>{"6 June"});
}

TEST_CASE("date answers flatten to a single span text") {
  corpus::GoldAnswer date;
  date.kind = corpus::AnswerKind::date;
  date.day = "6";
  date.month = "June";
  date.year = "1967";
  CHECK(date.answer_texts() == std::vector<std::string>{"6 June 1967"});
  date.day.clear();
  CHECK(date.answer_texts() == std::vector<std::string>{"June 1967"});
}

namespace {

std::vector<Token> dummy_tokens(std::size_t n) {
  std::vector<Token> out;
  std::string text;
  for (std::size_t i = 0; i < n; ++i) {
    std::string w = "w" + std::to_string(i);
    out.push_back(Token{w, text.size(), text.size() + w.size()});
    text += w + " ";
  }
  return out;
}

}  // namespace

TEST_CASE("build_context lengths and truncation") {
  corpus::Vocab vocab = corpus::build_vocab({}, 1);
  SUBCASE("no truncation") {
    auto ctx = corpus::build_context(dummy_tokens(6), dummy_tokens(100), vocab, 512, "", "");
    CHECK(ctx.length() == 109);
    CHECK(ctx.q_range.size() == 6);
    CHECK(ctx.p_range.size() == 100);
  }
  SUBCASE("passage truncated from the right") {
    auto ctx = corpus::build_context(dummy_tokens(6), dummy_tokens(600), vocab, 512, "", "");
    CHECK(ctx.length() == 512);
    CHECK(ctx.p_range.size() == 503);
    CHECK(ctx.passage_tokens.size() == 503);
    CHECK(ctx.passage_tokens.front().text == "w0");  // head preserved
  }
  SUBCASE("empty passage") {
    auto ctx = corpus::build_context(dummy_tokens(6), {}, vocab, 512, "", "");
    CHECK(ctx.length() == 9);
    CHECK(ctx.p_range.empty());
  }
  SUBCASE("oversized question is a hard error") {
    CHECK_THROWS_AS(corpus::build_context(dummy_tokens(515), {}, vocab, 512, "", ""),
                    std::runtime_error);
  }
  SUBCASE("partition covers the sequence") {
    auto ctx = corpus::build_context(dummy_tokens(4), dummy_tokens(9), vocab, 512, "", "");
    CHECK(ctx.q_range.size() + ctx.p_range.size() + 3 == ctx.length());
    CHECK(ctx.joint_ids.front() == corpus::Vocab::cls_id);
    CHECK(ctx.joint_ids[ctx.q_range.end] == corpus::Vocab::sep_id);
    CHECK(ctx.joint_ids.back() == corpus::Vocab::sep_id);
  }
}

TEST_CASE("vocab building respects the frequency cutoff") {
  corpus::RawInstance a;
  a.id = "a";
  a.question_text = "alpha alpha bravo";
  a.passage_text = "alpha charlie charlie";
  corpus::Vocab vocab = corpus::build_vocab({a}, 2);
  CHECK(vocab.id_of("alpha") != corpus::Vocab::unk_id);
  CHECK(vocab.id_of("charlie") != corpus::Vocab::unk_id);
  CHECK(vocab.id_of("bravo") == corpus::Vocab::unk_id);
  CHECK(vocab.id_of("ALPHA") == vocab.id_of("alpha"));  // lowercased lookup
  // 4 specials + alpha + charlie
  CHECK(vocab.size() == 6);
}

TEST_CASE("surface text recovers the original span") {
  std::string passage = "Wolf directed personnel (1963-1974, 1979-1989), then retired.";
  corpus::Vocab vocab = corpus::build_vocab({}, 1);
  auto q = corpus::tokenize("Which period?");
  auto p = corpus::tokenize(passage);
  auto ctx = corpus::build_context(q, p, vocab, 128, "Which period?", passage);
  // locate the tokens "1963", "-", "1974"
  std::size_t first = 0;
  for (std::size_t i = 0; i < ctx.passage_tokens.size(); ++i)
    if (ctx.passage_tokens[i].text == "1963") first = ctx.p_range.begin + i;
  CHECK(corpus::surface_text(ctx, first, first + 2) == "1963-1974");
  CHECK_THROWS_AS(corpus::surface_text(ctx, 0, first), std::runtime_error);  // crosses segments
}

TEST_CASE("context numbers carry joint indices in order") {
  corpus::Vocab vocab = corpus::build_vocab({}, 1);
  std::string q_text = "Is 7 bigger?";
  std::string p_text = "It saw 29 then 80 yards.";
  auto ctx = corpus::build_context(corpus::tokenize(q_text), corpus::tokenize(p_text), vocab, 64,
                                   q_text, p_text);
  auto numbers = corpus::context_numbers(ctx);
  REQUIRE(numbers.count() == 3);
  CHECK(numbers.mentions[0].value.to_string() == "7");
  CHECK(numbers.mentions[0].source == Source::question);
  CHECK(numbers.mentions[1].value.to_string() == "29");
  CHECK(numbers.mentions[2].value.to_string() == "80");
  for (std::size_t i = 0; i < numbers.count(); ++i) {
    std::size_t j = numbers.joint_index[i];
    bool in_seg = ctx.q_range.contains(j) || ctx.p_range.contains(j);
    CHECK(in_seg);
  }
}

TEST_CASE("dataset dump is one JSON object per line") {
  corpus::RawInstance inst;
  inst.id = "q1";
  inst.question_text = "How many yards?";
  inst.passage_text = "a 29-yard pass";
  corpus::GoldAnswer g;
  g.kind = corpus::AnswerKind::number;
  g.number_text = "29";
  inst.answers.push_back(g);
  std::string dump = corpus::dataset_dump_jsonl({inst});
  CHECK(dump.find("\"id\":\"q1\"") != std::string::npos);
  CHECK(dump.find("\"token_index\":1") != std::string::npos);
  CHECK(std::count(dump.begin(), dump.end(), '\n') == 1);
}
