#include "opera/model.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace opera::model {

using tensor::Param;
using tensor::Ref;
using tensor::Tape;
using tensor::Tensor;

namespace {

std::string layer_name(std::size_t i, const char* rest) {
  return "encoder.layer" + std::to_string(i) + "." + rest;
}

}  // namespace

void ModelConfig::validate() const {
  if (d_h == 0 || n_h == 0 || d_h % n_h != 0)
    throw std::runtime_error("model config: n_h must divide d_h");
  if (lambda_op < 0.0) throw std::runtime_error("model config: lambda_op must be >= 0");
  if (vocab_size < 5) throw std::runtime_error("model config: vocab_size not set");
  if (max_seq_len < 4) throw std::runtime_error("model config: max_seq_len too small");
}

Model::Model(ModelConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(cfg_.seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(cfg_.d_h));
  std::uniform_real_distribution<double> uniform(-bound, bound);
  std::normal_distribution<double> embed(0.0, 0.02);

  auto matrix = [&](std::size_t r, std::size_t c) {
    Tensor t({r, c});
    for (double& v : t.data()) v = uniform(rng);
    return t;
  };
  auto embedding = [&](std::size_t r, std::size_t c) {
    Tensor t({r, c});
    for (double& v : t.data()) v = embed(rng);
    return t;
  };
  const std::size_t d = cfg_.d_h;

  add_param("encoder.token_emb", embedding(cfg_.vocab_size, d));
  add_param("encoder.pos_emb", embedding(cfg_.max_seq_len, d));
  for (std::size_t i = 0; i < cfg_.encoder_layers; ++i) {
    for (const char* w : {"attn.Wq", "attn.Wk", "attn.Wv", "attn.Wo"})
      add_param(layer_name(i, w), matrix(d, d));
    for (const char* b : {"attn.bq", "attn.bk", "attn.bv", "attn.bo"})
      add_param(layer_name(i, b), Tensor::zeros({1, d}));
    add_param(layer_name(i, "ln1.gain"), Tensor::full({1, d}, 1.0));
    add_param(layer_name(i, "ln1.bias"), Tensor::zeros({1, d}));
    add_param(layer_name(i, "ffn.W1"), matrix(d, 2 * d));
    add_param(layer_name(i, "ffn.b1"), Tensor::zeros({1, 2 * d}));
    add_param(layer_name(i, "ffn.W2"), matrix(2 * d, d));
    add_param(layer_name(i, "ffn.b2"), Tensor::zeros({1, d}));
    add_param(layer_name(i, "ln2.gain"), Tensor::full({1, d}, 1.0));
    add_param(layer_name(i, "ln2.bias"), Tensor::zeros({1, d}));
  }

  add_param("bank.E_op", embedding(ModelConfig::n_ops, d));
  for (std::size_t i = 0; i < ModelConfig::n_ops; ++i) {
    std::string prefix = "bank.op" + std::to_string(i) + ".";
    add_param(prefix + "Wq", matrix(d, d));
    add_param(prefix + "Wk", matrix(d, d));
    add_param(prefix + "Wv", matrix(d, d));
  }
  add_param("selector.W", matrix(d, d));
  add_param("selector.pool.w", matrix(d, 1));

  add_param("heads.pool_hq.w", matrix(d, 1));
  add_param("heads.pool_hp.w", matrix(d, 1));
  add_param("heads.pool_gq.w", matrix(d, 1));
  add_param("heads.W_U", matrix(d, 1));

  auto make_ffn = [&](const std::string& prefix, std::size_t in, std::size_t out) {
    FfnParams p;
    p.w1 = &add_param(prefix + ".fc1.W", matrix(in, d));
    p.b1 = &add_param(prefix + ".fc1.b", Tensor::zeros({1, d}));
    p.ln_gain = &add_param(prefix + ".ln.gain", Tensor::full({1, d}, 1.0));
    p.ln_bias = &add_param(prefix + ".ln.bias", Tensor::zeros({1, d}));
    p.w2 = &add_param(prefix + ".fc2.W", matrix(d, out));
    p.b2 = &add_param(prefix + ".fc2.b", Tensor::zeros({1, out}));
    ffns_[prefix] = p;
    return p;
  };
  make_ffn("heads.type", 3 * d, ModelConfig::n_types);
  make_ffn("heads.span", 3 * d, 2);
  make_ffn("heads.count", 4 * d, ModelConfig::count_classes);
  make_ffn("heads.sign", 4 * d, 3);
  make_ffn("heads.bio", 2 * d, 3);
}

Param& Model::add_param(const std::string& name, Tensor init) {
  if (by_name_.count(name)) throw std::runtime_error("duplicate param name " + name);
  storage_.emplace_back(name, std::move(init));
  Param& p = storage_.back();
  order_.push_back(&p);
  by_name_[name] = &p;
  return p;
}

std::vector<Param*> Model::params() { return order_; }

Param& Model::param(const std::string& name) {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw std::runtime_error("no param named " + name);
  return *it->second;
}

bool Model::has_param(const std::string& name) const { return by_name_.count(name) > 0; }

Ref Model::linear(Tape& tape, Ref x, Param& w, Param& b) {
  Ref y = tape.matmul(x, tape.leaf(w));
  return tape.add(y, tape.broadcast_rows(tape.leaf(b), tape.value(y).rows()));
}

Ref Model::cols(Tape& tape, Ref x, std::size_t begin, std::size_t end) {
  return tape.transpose(tape.slice_rows(tape.transpose(x), begin, end));
}

// Two projections around a GeLU, with layer normalization on the hidden
// activation so the output logits stay unconstrained.
Ref Model::ffn(Tape& tape, Ref x, const FfnParams& p) {
  Ref hidden = tape.gelu(linear(tape, x, *p.w1, *p.b1));
  Ref normed = tape.layer_norm(hidden, tape.leaf(*p.ln_gain), tape.leaf(*p.ln_bias));
  return linear(tape, normed, *p.w2, *p.b2);
}

Ref Model::attention_block(Tape& tape, Ref x, std::size_t layer) {
  const std::size_t d = cfg_.d_h, heads = cfg_.n_h, dk = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  Ref q = linear(tape, x, param(layer_name(layer, "attn.Wq")), param(layer_name(layer, "attn.bq")));
  Ref k = linear(tape, x, param(layer_name(layer, "attn.Wk")), param(layer_name(layer, "attn.bk")));
  Ref v = linear(tape, x, param(layer_name(layer, "attn.Wv")), param(layer_name(layer, "attn.bv")));
  std::vector<Ref> head_outputs;
  for (std::size_t h = 0; h < heads; ++h) {
    Ref qh = cols(tape, q, h * dk, (h + 1) * dk);
    Ref kh = cols(tape, k, h * dk, (h + 1) * dk);
    Ref vh = cols(tape, v, h * dk, (h + 1) * dk);
    Ref att = tape.softmax(tape.scale(tape.matmul(qh, tape.transpose(kh)), scale));
    head_outputs.push_back(tape.matmul(att, vh));
  }
  Ref merged = tape.concat_cols(head_outputs);
  Ref projected = linear(tape, merged, param(layer_name(layer, "attn.Wo")),
                         param(layer_name(layer, "attn.bo")));
  Ref res1 = tape.layer_norm(tape.add(x, projected), tape.leaf(param(layer_name(layer, "ln1.gain"))),
                             tape.leaf(param(layer_name(layer, "ln1.bias"))));
  Ref inner = linear(tape, res1, param(layer_name(layer, "ffn.W1")),
                     param(layer_name(layer, "ffn.b1")));
  Ref ffn_out = linear(tape, tape.gelu(inner), param(layer_name(layer, "ffn.W2")),
                       param(layer_name(layer, "ffn.b2")));
  return tape.layer_norm(tape.add(res1, ffn_out), tape.leaf(param(layer_name(layer, "ln2.gain"))),
                         tape.leaf(param(layer_name(layer, "ln2.bias"))));
}

Ref Model::encode(Tape& tape, const corpus::Context& ctx) {
  if (ctx.length() > cfg_.max_seq_len)
    throw std::runtime_error("context longer than max_seq_len");
  std::vector<std::size_t> ids, positions;
  ids.reserve(ctx.length());
  for (int id : ctx.joint_ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= cfg_.vocab_size)
      throw std::runtime_error("token id " + std::to_string(id) + " outside vocab of " +
                               std::to_string(cfg_.vocab_size));
    ids.push_back(static_cast<std::size_t>(id));
  }
  for (std::size_t i = 0; i < ctx.length(); ++i) positions.push_back(i);
  Ref h = tape.add(tape.gather_rows(tape.leaf(param("encoder.token_emb")), ids),
                   tape.gather_rows(tape.leaf(param("encoder.pos_emb")), positions));
  for (std::size_t layer = 0; layer < cfg_.encoder_layers; ++layer)
    h = attention_block(tape, h, layer);
  return h;
}

Ref Model::pool(Tape& tape, Ref h_segment, Param& scorer) {
  if (tape.value(h_segment).rows() == 0)
    throw std::runtime_error("pool: empty segment");
  Ref scores = tape.transpose(tape.matmul(h_segment, tape.leaf(scorer)));
  return tape.matmul(tape.softmax(scores), h_segment);
}

Ref Model::selector_logits(Tape& tape, Ref h_question) {
  Ref scored = tape.matmul(tape.leaf(param("bank.E_op")), tape.leaf(param("selector.W")));
  return tape.transpose(tape.matmul(scored, tape.transpose(h_question)));  // {1,11}
}

Ref Model::select_operations(Tape& tape, Ref h_question) {
  return tape.softmax(selector_logits(tape, h_question));
}

Ref Model::execute_operation(Tape& tape, std::size_t op_index, Ref h_joint) {
  const std::size_t d = cfg_.d_h, heads = cfg_.n_h, dk = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  std::string prefix = "bank.op" + std::to_string(op_index) + ".";
  Ref e_op = tape.gather_rows(tape.leaf(param("bank.E_op")), {op_index});  // {1,d}
  Ref q = tape.matmul(e_op, tape.leaf(param(prefix + "Wq")));
  Ref k = tape.matmul(h_joint, tape.leaf(param(prefix + "Wk")));
  Ref v = tape.matmul(h_joint, tape.leaf(param(prefix + "Wv")));
  std::vector<Ref> head_outputs;
  for (std::size_t h = 0; h < heads; ++h) {
    Ref qh = cols(tape, q, h * dk, (h + 1) * dk);
    Ref kh = cols(tape, k, h * dk, (h + 1) * dk);
    Ref vh = cols(tape, v, h * dk, (h + 1) * dk);
    Ref att = tape.softmax(tape.scale(tape.matmul(qh, tape.transpose(kh)), scale));
    head_outputs.push_back(tape.matmul(att, vh));
  }
  return tape.concat_cols(head_outputs);  // {1,d}
}

Ref Model::mix(Tape& tape, Ref p_op, const std::vector<Ref>& results, bool ablate_op) {
  if (ablate_op) return tape.constant(Tensor::zeros({1, cfg_.d_h}));
  if (results.size() != ModelConfig::n_ops)
    throw std::runtime_error("mix: expected one result per operation");
  std::vector<Ref> columns;
  columns.reserve(results.size());
  for (Ref m : results) columns.push_back(tape.transpose(m));  // {d,1} each
  Ref stacked = tape.transpose(tape.concat_cols(columns));     // {11,d}
  return tape.matmul(p_op, stacked);                           // convex combination
}

ForwardOutput Model::forward(Tape& tape, const corpus::Context& ctx,
                             const corpus::ContextNumbers& numbers) {
  const std::size_t d = cfg_.d_h;
  const std::size_t l = ctx.length();
  if (ctx.q_range.empty()) throw std::runtime_error("forward: empty question segment");

  ForwardOutput out;
  out.seq_len = l;
  out.n_numbers = numbers.count();

  Ref H = encode(tape, ctx);
  Ref Hq = tape.slice_rows(H, ctx.q_range.begin, ctx.q_range.end);
  bool has_passage = !ctx.p_range.empty();
  Ref Hp = has_passage ? tape.slice_rows(H, ctx.p_range.begin, ctx.p_range.end) : Ref{};

  Ref h_E;
  if (cfg_.ablate_op) {
    out.lp_op = tape.constant(
        Tensor::full({1, ModelConfig::n_ops}, -std::log(static_cast<double>(ModelConfig::n_ops))));
    out.p_op_node = tape.constant(
        Tensor::full({1, ModelConfig::n_ops}, 1.0 / static_cast<double>(ModelConfig::n_ops)));
    out.h_op = tape.constant(Tensor::zeros({1, d}));
    h_E = tape.constant(Tensor::zeros({1, d}));
  } else {
    Ref h_q_sel = pool(tape, Hq, param("selector.pool.w"));
    Ref logits = selector_logits(tape, h_q_sel);
    out.lp_op = tape.log_softmax(logits);
    out.p_op_node = tape.softmax(logits);
    std::vector<Ref> results;
    for (std::size_t i = 0; i < ModelConfig::n_ops; ++i)
      results.push_back(execute_operation(tape, i, H));
    out.h_op = mix(tape, out.p_op_node, results, false);
    h_E = tape.matmul(out.p_op_node, tape.leaf(param("bank.E_op")));
  }

  Ref h_q = pool(tape, Hq, param("heads.pool_hq.w"));
  Ref h_p = has_passage ? pool(tape, Hp, param("heads.pool_hp.w"))
                        : tape.constant(Tensor::zeros({1, d}));

  // Answer type over [h_E; h_q; h_p].
  out.lp_type = tape.log_softmax(ffn(tape, tape.concat_cols({h_E, h_q, h_p}), ffns_.at("heads.type")));

  // Span head over M = [h_op; H; H * g_q].
  Ref g_q = pool(tape, Hq, param("heads.pool_gq.w"));
  Ref M = tape.concat_cols({tape.broadcast_rows(out.h_op, l), H,
                            tape.mul(H, tape.broadcast_rows(g_q, l))});
  Ref span_logits = ffn(tape, M, ffns_.at("heads.span"));  // {l,2}
  auto segment_tables = [&](const corpus::Span& seg, Ref& start_out, Ref& end_out) {
    if (seg.empty()) return;
    Ref block = tape.transpose(tape.slice_rows(span_logits, seg.begin, seg.end));  // {2,len}
    start_out = tape.log_softmax(tape.slice_rows(block, 0, 1));
    end_out = tape.log_softmax(tape.slice_rows(block, 1, 2));
  };
  segment_tables(ctx.q_range, out.lp_q_start, out.lp_q_end);
  segment_tables(ctx.p_range, out.lp_p_start, out.lp_p_end);

  // Count head over [h_op; h_U; h_q; h_p] with h_U pooled from the number rows.
  Ref U;
  Ref h_U;
  if (numbers.count() > 0) {
    U = tape.gather_rows(H, numbers.joint_index);
    h_U = pool(tape, U, param("heads.W_U"));
  } else {
    h_U = tape.constant(Tensor::zeros({1, d}));
  }
  out.lp_count =
      tape.log_softmax(ffn(tape, tape.concat_cols({out.h_op, h_U, h_q, h_p}), ffns_.at("heads.count")));

  // Sign head, one 3-way row per number.
  if (numbers.count() > 0) {
    const std::size_t n = numbers.count();
    Ref x = tape.concat_cols({tape.broadcast_rows(out.h_op, n), U, tape.broadcast_rows(h_q, n),
                              tape.broadcast_rows(h_p, n)});
    out.lp_sign = tape.log_softmax(ffn(tape, x, ffns_.at("heads.sign")));
  }

  // BIO head over [H; h_op].
  out.lp_bio = tape.log_softmax(
      ffn(tape, tape.concat_cols({H, tape.broadcast_rows(out.h_op, l)}), ffns_.at("heads.bio")));

  out.p_op = tape.value(out.p_op_node).data();
  out.p_type.clear();
  for (double v : tape.value(out.lp_type).data()) out.p_type.push_back(std::exp(v));
  if (out.lp_q_start.valid()) {
    out.q_start_log = tape.value(out.lp_q_start).data();
    out.q_end_log = tape.value(out.lp_q_end).data();
  }
  if (out.lp_p_start.valid()) {
    out.p_start_log = tape.value(out.lp_p_start).data();
    out.p_end_log = tape.value(out.lp_p_end).data();
  }
  out.count_log = tape.value(out.lp_count).data();
  if (out.lp_sign.valid()) out.sign_log = tape.value(out.lp_sign).data();
  out.bio_log = tape.value(out.lp_bio).data();
  return out;
}

Ref marginal_log_likelihood(Tape& tape, const ForwardOutput& out,
                            const derivations::DerivationSet& derivs,
                            const corpus::Context& ctx) {
  using derivations::AnswerType;
  if (derivs.derivations.empty())
    throw std::runtime_error("marginal_log_likelihood: empty derivation set");

  std::vector<Ref> scores;
  for (const derivations::Derivation& d : derivs.derivations) {
    Ref score = tape.pick(out.lp_type, 0, static_cast<std::size_t>(d.type));
    switch (d.type) {
      case AnswerType::question_span:
      case AnswerType::passage_span: {
        const auto& label = std::get<derivations::SpanLabel>(d.label);
        const corpus::Span& seg =
            d.type == AnswerType::question_span ? ctx.q_range : ctx.p_range;
        Ref starts = d.type == AnswerType::question_span ? out.lp_q_start : out.lp_p_start;
        Ref ends = d.type == AnswerType::question_span ? out.lp_q_end : out.lp_p_end;
        if (!starts.valid() || !seg.contains(label.start) || !seg.contains(label.end))
          throw std::runtime_error("span derivation outside its segment");
        score = tape.add(score, tape.pick(starts, 0, label.start - seg.begin));
        score = tape.add(score, tape.pick(ends, 0, label.end - seg.begin));
        break;
      }
      case AnswerType::count: {
        const auto& label = std::get<derivations::CountLabel>(d.label);
        score = tape.add(score, tape.pick(out.lp_count, 0, static_cast<std::size_t>(label.k)));
        break;
      }
      case AnswerType::arithmetic: {
        const auto& label = std::get<derivations::SignVector>(d.label);
        if (!out.lp_sign.valid() || label.signs.size() != out.n_numbers)
          throw std::runtime_error("sign derivation does not match the number table");
        for (std::size_t i = 0; i < label.signs.size(); ++i)
          score = tape.add(
              score, tape.pick(out.lp_sign, i, static_cast<std::size_t>(label.signs[i])));
        break;
      }
      case AnswerType::multi_spans: {
        const auto& label = std::get<derivations::BioLabel>(d.label);
        if (label.tags.size() != out.seq_len)
          throw std::runtime_error("BIO derivation does not match the sequence length");
        for (std::size_t t = 0; t < label.tags.size(); ++t)
          score =
              tape.add(score, tape.pick(out.lp_bio, t, static_cast<std::size_t>(label.tags[t])));
        break;
      }
    }
    scores.push_back(score);
  }
  return tape.logsumexp(tape.concat_cols(scores));
}

}  // namespace opera::model
