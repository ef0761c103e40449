#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "opera/decimal.hpp"

namespace opera::corpus {

struct Token {
  std::string text;
  std::size_t char_start = 0;  // byte offsets into the source string
  std::size_t char_end = 0;    // exclusive
};

enum class Source { question, passage };

struct NumberMention {
  Decimal value;
  std::size_t token_index = 0;  // index into the owning token sequence
  Source source = Source::passage;
};

enum class AnswerKind { number, spans, date };

struct GoldAnswer {
  AnswerKind kind = AnswerKind::spans;
  std::string number_text;          // kind == number
  std::vector<std::string> spans;   // kind == spans
  std::string day, month, year;     // kind == date

  // Date answers are flattened to a single span of their non-empty fields.
  std::vector<std::string> answer_texts() const;
};

struct RawInstance {
  std::string id;
  std::string passage_text;
  std::string question_text;
  std::vector<GoldAnswer> answers;  // first is primary, rest are alternates
};

struct LoadReport {
  std::size_t passages = 0;
  std::size_t instances = 0;
  std::size_t skipped_empty_answer = 0;
};

// Reads a DROP-layout JSON file: top-level map passage-id -> {passage,
// qa_pairs:[{query_id, question, answer, validated_answers?}]}. Answer kind
// precedence when several fields are populated: number > spans > date.
// qa_pairs with every answer field empty are skipped and counted.
std::vector<RawInstance> load_drop_json(const std::filesystem::path& path,
                                        LoadReport* report = nullptr);
std::vector<RawInstance> load_drop_json_text(std::string_view json_text,
                                             std::string_view origin,
                                             LoadReport* report = nullptr);

// Whitespace- and punctuation-delimited tokens. Digit grouping commas and a
// single decimal point stay inside a token ("1,000", "3.5"); every other
// punctuation character becomes its own token, so "53-yard" splits into
// "53", "-", "yard".
std::vector<Token> tokenize(std::string_view text);

// One mention per token that reads as a number: digit sequences with
// optional comma grouping and one decimal point, ordinal digit prefixes
// ("3rd" -> 3), and the words zero..ten.
std::vector<NumberMention> extract_numbers(const std::vector<Token>& tokens, Source source);

struct Vocab {
  std::vector<std::string> id_to_token;
  std::unordered_map<std::string, int> token_to_id;

  static constexpr int pad_id = 0;
  static constexpr int unk_id = 1;
  static constexpr int cls_id = 2;
  static constexpr int sep_id = 3;

  int id_of(std::string_view token) const;  // unk_id when absent
  std::size_t size() const { return id_to_token.size(); }
};

// Frequency vocabulary over lowercased tokens of questions and passages.
Vocab build_vocab(const std::vector<RawInstance>& instances, std::size_t min_count = 2);

struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive
  std::size_t size() const { return end - begin; }
  bool empty() const { return begin == end; }
  bool contains(std::size_t i) const { return begin <= i && i < end; }
};

struct Context {
  std::vector<Token> question_tokens;
  std::vector<Token> passage_tokens;  // truncated to what fits the budget
  std::vector<int> joint_ids;         // [CLS] question [SEP] passage [SEP]
  Span q_range, p_range;              // index intervals into joint_ids
  std::string question_text;
  std::string passage_text;

  std::size_t length() const { return joint_ids.size(); }
};

// Joint sequence [CLS] q [SEP] p [SEP]; the passage tail is dropped when the
// total exceeds max_seq_len. A question that cannot fit on its own is a hard
// error.
Context build_context(const std::vector<Token>& q_tokens, const std::vector<Token>& p_tokens,
                      const Vocab& vocab, std::size_t max_seq_len, std::string question_text,
                      std::string passage_text);

// Mentions visible to the model, question first then passage, with the
// joint-sequence index of each mention's token.
struct ContextNumbers {
  std::vector<NumberMention> mentions;
  std::vector<std::size_t> joint_index;

  std::size_t count() const { return mentions.size(); }
};

ContextNumbers context_numbers(const Context& ctx);

// Original surface text covered by joint positions [start, end] (inclusive).
// Both ends must fall in the same segment.
std::string surface_text(const Context& ctx, std::size_t joint_start, std::size_t joint_end);

// Line-delimited JSON dump of a split for inspection, one instance per line.
std::string dataset_dump_jsonl(const std::vector<RawInstance>& instances);

}  // namespace opera::corpus
