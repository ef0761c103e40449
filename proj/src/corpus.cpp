#include "opera/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace opera::corpus {

namespace {

using nlohmann::json;

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }
bool is_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

const std::unordered_map<std::string, int>& word_numbers() {
  static const std::unordered_map<std::string, int> map = {
      {"zero", 0}, {"one", 1}, {"two", 2},   {"three", 3}, {"four", 4}, {"five", 5},
      {"six", 6},  {"seven", 7}, {"eight", 8}, {"nine", 9},  {"ten", 10},
  };
  return map;
}

// Number surface inside a token: digits, optional comma grouping, optional
// single decimal point.
std::optional<Decimal> parse_number_token(const std::string& text) {
  if (text.empty() || !is_digit(text.front())) return std::nullopt;
  return Decimal::parse(text);
}

// Ordinals contribute their digit prefix ("3rd" -> 3).
std::optional<Decimal> parse_ordinal_token(const std::string& text) {
  std::size_t i = 0;
  while (i < text.size() && is_digit(text[i])) ++i;
  if (i == 0 || i == text.size()) return std::nullopt;
  std::string suffix = lower(std::string_view(text).substr(i));
  if (suffix != "st" && suffix != "nd" && suffix != "rd" && suffix != "th") return std::nullopt;
  return Decimal::parse(text.substr(0, i));
}

GoldAnswer parse_answer(const json& ans) {
  GoldAnswer out;
  std::string number = ans.contains("number") && ans["number"].is_string()
                           ? ans["number"].get<std::string>()
                           : std::string();
  std::vector<std::string> spans;
  if (ans.contains("spans") && ans["spans"].is_array())
    for (const auto& s : ans["spans"])
      if (s.is_string() && !s.get<std::string>().empty()) spans.push_back(s.get<std::string>());
  std::string day, month, year;
  if (ans.contains("date") && ans["date"].is_object()) {
    const auto& d = ans["date"];
    if (d.contains("day") && d["day"].is_string()) day = d["day"].get<std::string>();
    if (d.contains("month") && d["month"].is_string()) month = d["month"].get<std::string>();
    if (d.contains("year") && d["year"].is_string()) year = d["year"].get<std::string>();
  }
  if (!number.empty()) {
    out.kind = AnswerKind::number;
    out.number_text = number;
  } else if (!spans.empty()) {
    out.kind = AnswerKind::spans;
    out.spans = std::move(spans);
  } else if (!day.empty() || !month.empty() || !year.empty()) {
    out.kind = AnswerKind::date;
    out.day = day;
    out.month = month;
    out.year = year;
  } else {
    out.spans.clear();  // caller detects the empty answer and skips
    out.kind = AnswerKind::spans;
  }
  return out;
}

bool answer_is_empty(const GoldAnswer& a) {
  switch (a.kind) {
    case AnswerKind::number: return a.number_text.empty();
    case AnswerKind::spans: return a.spans.empty();
    case AnswerKind::date: return a.day.empty() && a.month.empty() && a.year.empty();
  }
  return true;
}

}  // namespace

std::vector<std::string> GoldAnswer::answer_texts() const {
  switch (kind) {
    case AnswerKind::number: return {number_text};
    case AnswerKind::spans: return spans;
    case AnswerKind::date: {
      std::string joined;
      for (const std::string* part : {&day, &month, &year}) {
        if (part->empty()) continue;
        if (!joined.empty()) joined += ' ';
        joined += *part;
      }
      return {joined};
    }
  }
  return {};
}

std::vector<RawInstance> load_drop_json(const std::filesystem::path& path, LoadReport* report) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset file: " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return load_drop_json_text(buf.str(), path.string(), report);
}

std::vector<RawInstance> load_drop_json_text(std::string_view json_text, std::string_view origin,
                                             LoadReport* report) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw std::runtime_error("malformed JSON in " + std::string(origin) + ": " + e.what());
  }
  if (!doc.is_object())
    throw std::runtime_error("dataset root must be a passage-id map: " + std::string(origin));

  LoadReport local;
  std::vector<RawInstance> out;
  for (const auto& [passage_id, entry] : doc.items()) {
    if (!entry.is_object() || !entry.contains("passage") || !entry.contains("qa_pairs"))
      throw std::runtime_error("passage '" + passage_id + "': expected {passage, qa_pairs}");
    ++local.passages;
    std::string passage = entry["passage"].get<std::string>();
    for (const auto& qa : entry["qa_pairs"]) {
      if (!qa.is_object() || !qa.contains("question") || !qa.contains("answer"))
        throw std::runtime_error("passage '" + passage_id + "': qa_pair missing question/answer");
      RawInstance inst;
      inst.id = qa.contains("query_id") ? qa["query_id"].get<std::string>()
                                        : passage_id + "#" + std::to_string(local.instances);
      inst.passage_text = passage;
      inst.question_text = qa["question"].get<std::string>();
      GoldAnswer primary = parse_answer(qa["answer"]);
      if (answer_is_empty(primary)) {
        ++local.skipped_empty_answer;
        continue;
      }
      inst.answers.push_back(std::move(primary));
      if (qa.contains("validated_answers") && qa["validated_answers"].is_array()) {
        for (const auto& va : qa["validated_answers"]) {
          GoldAnswer alt = parse_answer(va);
          if (!answer_is_empty(alt)) inst.answers.push_back(std::move(alt));
        }
      }
      ++local.instances;
      out.push_back(std::move(inst));
    }
  }
  if (report) *report = local;
  return out;
}

std::vector<Token> tokenize(std::string_view text) {
  std::vector<Token> out;
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    char c = text[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    std::size_t start = i;
    if (is_word_char(c)) {
      ++i;
      while (i < n) {
        if (is_word_char(text[i])) {
          ++i;
        } else if ((text[i] == ',' || text[i] == '.') && i + 1 < n && is_digit(text[i - 1]) &&
                   is_digit(text[i + 1])) {
          i += 2;  // grouping comma / decimal point stays inside the number
        } else {
          break;
        }
      }
    } else {
      ++i;  // punctuation: one char per token
    }
    out.push_back(Token{std::string(text.substr(start, i - start)), start, i});
  }
  return out;
}

std::vector<NumberMention> extract_numbers(const std::vector<Token>& tokens, Source source) {
  std::vector<NumberMention> out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::string& text = tokens[i].text;
    std::optional<Decimal> value = parse_number_token(text);
    if (!value) value = parse_ordinal_token(text);
    if (!value) {
      auto it = word_numbers().find(lower(text));
      if (it != word_numbers().end()) value = Decimal::from_int(it->second);
    }
    if (value) out.push_back(NumberMention{*value, i, source});
  }
  return out;
}

int Vocab::id_of(std::string_view token) const {
  auto it = token_to_id.find(lower(token));
  return it == token_to_id.end() ? unk_id : it->second;
}

Vocab build_vocab(const std::vector<RawInstance>& instances, std::size_t min_count) {
  std::unordered_map<std::string, std::size_t> counts;
  for (const RawInstance& inst : instances) {
    for (const Token& t : tokenize(inst.question_text)) ++counts[lower(t.text)];
    for (const Token& t : tokenize(inst.passage_text)) ++counts[lower(t.text)];
  }
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (const auto& [token, count] : counts)
    if (count >= min_count) kept.emplace_back(token, count);
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  Vocab vocab;
  vocab.id_to_token = {"[PAD]", "[UNK]", "[CLS]", "[SEP]"};
  for (auto& [token, count] : kept) vocab.id_to_token.push_back(token);
  for (std::size_t i = 0; i < vocab.id_to_token.size(); ++i)
    vocab.token_to_id[vocab.id_to_token[i]] = static_cast<int>(i);
  return vocab;
}

Context build_context(const std::vector<Token>& q_tokens, const std::vector<Token>& p_tokens,
                      const Vocab& vocab, std::size_t max_seq_len, std::string question_text,
                      std::string passage_text) {
  const std::size_t overhead = 3;  // CLS + 2 separators
  if (q_tokens.size() + overhead > max_seq_len)
    throw std::runtime_error("question of " + std::to_string(q_tokens.size()) +
                             " tokens cannot fit max_seq_len " + std::to_string(max_seq_len));
  std::size_t p_budget = max_seq_len - overhead - q_tokens.size();
  std::size_t p_len = std::min(p_tokens.size(), p_budget);

  Context ctx;
  ctx.question_tokens = q_tokens;
  ctx.passage_tokens.assign(p_tokens.begin(), p_tokens.begin() + static_cast<long>(p_len));
  ctx.question_text = std::move(question_text);
  ctx.passage_text = std::move(passage_text);

  ctx.joint_ids.reserve(q_tokens.size() + p_len + overhead);
  ctx.joint_ids.push_back(Vocab::cls_id);
  ctx.q_range.begin = ctx.joint_ids.size();
  for (const Token& t : q_tokens) ctx.joint_ids.push_back(vocab.id_of(t.text));
  ctx.q_range.end = ctx.joint_ids.size();
  ctx.joint_ids.push_back(Vocab::sep_id);
  ctx.p_range.begin = ctx.joint_ids.size();
  for (const Token& t : ctx.passage_tokens) ctx.joint_ids.push_back(vocab.id_of(t.text));
  ctx.p_range.end = ctx.joint_ids.size();
  ctx.joint_ids.push_back(Vocab::sep_id);
  return ctx;
}

ContextNumbers context_numbers(const Context& ctx) {
  ContextNumbers out;
  for (const NumberMention& m : extract_numbers(ctx.question_tokens, Source::question)) {
    out.joint_index.push_back(ctx.q_range.begin + m.token_index);
    out.mentions.push_back(m);
  }
  for (const NumberMention& m : extract_numbers(ctx.passage_tokens, Source::passage)) {
    out.joint_index.push_back(ctx.p_range.begin + m.token_index);
    out.mentions.push_back(m);
  }
  return out;
}

std::string surface_text(const Context& ctx, std::size_t joint_start, std::size_t joint_end) {
  if (joint_start > joint_end)
    throw std::runtime_error("surface_text: start after end");
  const std::vector<Token>* tokens = nullptr;
  const std::string* source = nullptr;
  std::size_t base = 0;
  if (ctx.q_range.contains(joint_start) && ctx.q_range.contains(joint_end)) {
    tokens = &ctx.question_tokens;
    source = &ctx.question_text;
    base = ctx.q_range.begin;
  } else if (ctx.p_range.contains(joint_start) && ctx.p_range.contains(joint_end)) {
    tokens = &ctx.passage_tokens;
    source = &ctx.passage_text;
    base = ctx.p_range.begin;
  } else {
    throw std::runtime_error("surface_text: span [" + std::to_string(joint_start) + "," +
                             std::to_string(joint_end) + "] does not lie in one segment");
  }
  const Token& first = (*tokens)[joint_start - base];
  const Token& last = (*tokens)[joint_end - base];
  return source->substr(first.char_start, last.char_end - first.char_start);
}

std::string dataset_dump_jsonl(const std::vector<RawInstance>& instances) {
  std::string out;
  for (const RawInstance& inst : instances) {
    json line;
    line["id"] = inst.id;
    line["question"] = inst.question_text;
    line["passage"] = inst.passage_text;
    const GoldAnswer& a = inst.answers.front();
    json ans;
    switch (a.kind) {
      case AnswerKind::number:
        ans["kind"] = "number";
        ans["number"] = a.number_text;
        break;
      case AnswerKind::spans:
        ans["kind"] = "spans";
        ans["spans"] = a.spans;
        break;
      case AnswerKind::date:
        ans["kind"] = "date";
        ans["day"] = a.day;
        ans["month"] = a.month;
        ans["year"] = a.year;
        break;
    }
    line["answer"] = ans;
    json numbers = json::array();
    auto add = [&](const std::vector<Token>& tokens, Source source, const char* name) {
      for (const NumberMention& m : extract_numbers(tokens, source)) {
        json jm;
        jm["value"] = m.value.to_string();
        jm["token_index"] = m.token_index;
        jm["source"] = name;
        numbers.push_back(jm);
      }
    };
    add(tokenize(inst.question_text), Source::question, "question");
    add(tokenize(inst.passage_text), Source::passage, "passage");
    line["numbers"] = numbers;
    out += line.dump();
    out += '\n';
  }
  return out;
}

}  // namespace opera::corpus
