#pragma once

#include <cstdint>
#include <deque>
#include <string>
#include <unordered_map>
#include <vector>

#include "opera/corpus.hpp"
#include "opera/derivations.hpp"
#include "opera/rules.hpp"
#include "opera/tensor.hpp"

namespace opera::model {

struct ModelConfig {
  std::size_t d_h = 64;
  std::size_t n_h = 4;
  std::size_t encoder_layers = 2;
  std::size_t max_seq_len = 512;
  std::size_t vocab_size = 0;
  std::size_t max_span_len = 20;  // span decoding window
  double lambda_op = 0.3;
  bool ablate_op = false;  // removes the whole operation path
  std::uint64_t seed = 13;

  static constexpr std::size_t n_ops = rules::kNumOps;
  static constexpr std::size_t n_types = derivations::kNumTypes;
  static constexpr std::size_t count_classes = 10;

  void validate() const;
};

// Everything the prediction module emits for one instance. Graph refs stay
// valid for the tape the forward pass ran on; the flat vectors are copies
// for decoding and analysis. Log tables are natural logs.
struct ForwardOutput {
  tensor::Ref h_op, lp_op, p_op_node, lp_type;
  tensor::Ref lp_q_start, lp_q_end, lp_p_start, lp_p_end;  // invalid on empty segment
  tensor::Ref lp_count;
  tensor::Ref lp_sign;  // {N,3}; invalid when no numbers
  tensor::Ref lp_bio;   // {l,3}

  std::vector<double> p_op;    // 11
  std::vector<double> p_type;  // 5
  std::vector<double> q_start_log, q_end_log, p_start_log, p_end_log;
  std::vector<double> count_log;  // 10
  std::vector<double> sign_log;   // N*3 row-major, class order (zero, plus, minus)
  std::vector<double> bio_log;    // l*3 row-major, class order (B, I, O)
  std::size_t seq_len = 0;
  std::size_t n_numbers = 0;
};

// The network: toy context encoder, bilinear operation selector, one
// cross-attention executor per operation, soft mixture, and the five answer
// predictors with the answer-type head.
class Model {
 public:
  explicit Model(ModelConfig cfg);

  // Params are pointed into from the name index; moving keeps the deque
  // nodes alive, copying would not.
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return cfg_; }
  ModelConfig& config() { return cfg_; }

  std::vector<tensor::Param*> params();  // stable creation order
  tensor::Param& param(const std::string& name);
  bool has_param(const std::string& name) const;

  ForwardOutput forward(tensor::Tape& tape, const corpus::Context& ctx,
                        const corpus::ContextNumbers& numbers);

  // Individual stages, exposed with the same contracts the forward pass uses.
  tensor::Ref encode(tensor::Tape& tape, const corpus::Context& ctx);
  tensor::Ref selector_logits(tensor::Tape& tape, tensor::Ref h_question);
  tensor::Ref select_operations(tensor::Tape& tape, tensor::Ref h_question);  // p_op
  tensor::Ref execute_operation(tensor::Tape& tape, std::size_t op_index, tensor::Ref h_joint);
  tensor::Ref mix(tensor::Tape& tape, tensor::Ref p_op, const std::vector<tensor::Ref>& results,
                  bool ablate_op);
  tensor::Ref pool(tensor::Tape& tape, tensor::Ref h_segment, tensor::Param& scorer);

 private:
  struct FfnParams {
    tensor::Param *w1, *b1, *ln_gain, *ln_bias, *w2, *b2;
  };

  tensor::Param& add_param(const std::string& name, tensor::Tensor init);
  tensor::Ref ffn(tensor::Tape& tape, tensor::Ref x, const FfnParams& p);
  tensor::Ref linear(tensor::Tape& tape, tensor::Ref x, tensor::Param& w, tensor::Param& b);
  tensor::Ref cols(tensor::Tape& tape, tensor::Ref x, std::size_t begin, std::size_t end);
  tensor::Ref attention_block(tensor::Tape& tape, tensor::Ref x, std::size_t layer);

  ModelConfig cfg_;
  std::deque<tensor::Param> storage_;
  std::vector<tensor::Param*> order_;
  std::unordered_map<std::string, tensor::Param*> by_name_;
  std::unordered_map<std::string, FfnParams> ffns_;
};

// log p(A|Q,P): log-sum-exp over the derivations of log p_type(T) plus the
// label log-probability under the matching head. The derivation set must be
// non-empty.
tensor::Ref marginal_log_likelihood(tensor::Tape& tape, const ForwardOutput& out,
                                    const derivations::DerivationSet& derivs,
                                    const corpus::Context& ctx);

}  // namespace opera::model
