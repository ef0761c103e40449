#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace opera::metrics {

// DROP-style answer normalization: lowercase, strip punctuation (a hyphen
// between alphanumerics stays, so "1963-1974" survives), drop the articles
// a/an/the, collapse whitespace, and canonicalize numeric tokens so that
// "73.0" and "73" compare equal.
std::string normalize(std::string_view answer);

// Whitespace tokens of the normalized string.
std::vector<std::string> normalize_bag(std::string_view answer);

struct EmF1 {
  double em = 0.0;
  double f1 = 0.0;
};

// EM: the two span multisets match one-to-one after normalization. F1: the
// optimal one-to-one assignment between pred and gold spans, scoring each
// pair by bag-of-words F1 and dividing the total by max(|pred|, |gold|).
// A single-token numeric answer on one side is compared against the other
// side's numeric tokens only, so "80" matches "80 yards".
EmF1 em_f1(const std::vector<std::string>& pred, const std::vector<std::string>& gold);

// Max EM and max F1 (independently) over the gold alternates.
EmF1 best_em_f1(const std::vector<std::string>& pred,
                const std::vector<std::vector<std::string>>& gold_alternates);

// True when the two answers normalize to the same set of distinct span
// strings. Used by the derivation soundness check, where labels marking
// every occurrence of a span must still count as the gold answer.
bool answers_match(const std::vector<std::string>& produced,
                   const std::vector<std::string>& gold);

}  // namespace opera::metrics
