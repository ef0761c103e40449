#include "opera/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "opera/answer_metrics.hpp"
#include "opera/eval.hpp"

namespace opera::training {

using tensor::Param;
using tensor::Ref;
using tensor::Tape;
using tensor::Tensor;

namespace {

bool is_encoder_param(const Param& p) { return p.name.rfind("encoder.", 0) == 0; }

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

}  // namespace

void TrainConfig::validate() const {
  if (encoder_lr <= 0 || head_lr <= 0) throw std::runtime_error("learning rates must be > 0");
  if (encoder_wd < 0 || head_wd < 0) throw std::runtime_error("weight decay must be >= 0");
  if (warmup_fraction < 0 || warmup_fraction >= 1)
    throw std::runtime_error("warmup_fraction must lie in [0,1)");
  if (batch_size == 0) throw std::runtime_error("batch_size must be > 0");
  if (lambda_op < 0) throw std::runtime_error("lambda_op must be >= 0");
}

TrainConfig parse_config_text(std::string_view text, std::string_view origin,
                              const TrainConfig& base) {
  TrainConfig cfg = base;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(std::string(origin) + ":" + std::to_string(line_no) +
                               ": expected 'key = value'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    try {
      if (key == "lambda_op") cfg.lambda_op = std::stod(value);
      else if (key == "encoder_lr") cfg.encoder_lr = std::stod(value);
      else if (key == "head_lr") cfg.head_lr = std::stod(value);
      else if (key == "encoder_wd") cfg.encoder_wd = std::stod(value);
      else if (key == "head_wd") cfg.head_wd = std::stod(value);
      else if (key == "epochs") cfg.epochs = std::stoul(value);
      else if (key == "batch_size") cfg.batch_size = std::stoul(value);
      else if (key == "warmup_fraction") cfg.warmup_fraction = std::stod(value);
      else if (key == "seed") cfg.seed = std::stoull(value);
      else if (key == "d_h") cfg.model.d_h = std::stoul(value);
      else if (key == "n_h") cfg.model.n_h = std::stoul(value);
      else if (key == "encoder_layers") cfg.model.encoder_layers = std::stoul(value);
      else if (key == "max_seq_len") cfg.model.max_seq_len = std::stoul(value);
      else if (key == "max_span_len") cfg.model.max_span_len = std::stoul(value);
      else if (key == "ablate_op") cfg.model.ablate_op = (value == "1" || value == "true");
      else
        throw std::runtime_error("unknown key '" + key + "'");
    } catch (const std::invalid_argument&) {
      throw std::runtime_error(std::string(origin) + ":" + std::to_string(line_no) +
                               ": bad value for '" + key + "'");
    }
  }
  cfg.model.lambda_op = cfg.lambda_op;
  cfg.model.seed = cfg.seed;
  return cfg;
}

TrainConfig parse_config_file(const std::filesystem::path& path, const TrainConfig& base) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), path.string(), base);
}

void apply_profile(TrainConfig& cfg, std::string_view profile) {
  if (profile == "desk" || profile.empty()) return;  // the built-in defaults
  if (profile == "paper") {
    // Published full-scale setup (encoder hyperparameters of the largest
    // configuration we replace); impractical on CPU but kept selectable.
    cfg.encoder_lr = 1.5e-5;
    cfg.head_lr = 5e-4;
    cfg.encoder_wd = 0.01;
    cfg.head_wd = 5e-5;
    cfg.epochs = 12;
    cfg.batch_size = 16;
    cfg.model.n_h = 16;
    cfg.model.d_h = 1024;
    return;
  }
  throw std::runtime_error("unknown profile '" + std::string(profile) + "'");
}

LossRefs compute_loss(Tape& tape, const model::ForwardOutput& out,
                      const derivations::LabeledInstance& inst, double lambda_op) {
  if (!inst.usable)
    throw std::runtime_error("compute_loss: instance " + inst.raw.id +
                             " has no derivations; filter it upstream");
  LossRefs refs;
  Ref mll = model::marginal_log_likelihood(tape, out, inst.derivations, inst.ctx);
  refs.answer = tape.scale(mll, -1.0);
  if (inst.operations.empty()) {
    refs.op = tape.constant(Tensor::scalar(0.0));
  } else {
    Ref acc;
    for (rules::Op op : inst.operations) {
      Ref term = tape.pick(out.lp_op, 0, static_cast<std::size_t>(op));
      acc = acc.valid() ? tape.add(acc, term) : term;
    }
    refs.op = tape.scale(acc, -1.0);
  }
  refs.total = tape.add(refs.answer, tape.scale(refs.op, lambda_op));
  return refs;
}

double lr_at(std::size_t step, std::size_t total_steps, double base_lr, double warmup_fraction) {
  if (total_steps == 0 || step >= total_steps) return 0.0;
  std::size_t warmup_steps =
      static_cast<std::size_t>(warmup_fraction * static_cast<double>(total_steps));
  if (warmup_steps > 0 && step < warmup_steps)
    return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  double progress = static_cast<double>(step - warmup_steps) /
                    static_cast<double>(total_steps - warmup_steps);
  return base_lr * 0.5 * (1.0 + std::cos(M_PI * progress));
}

AdamState::AdamState(const std::vector<Param*>& params) {
  m.reserve(params.size());
  v.reserve(params.size());
  for (const Param* p : params) {
    m.push_back(Tensor::zeros(p->value.shape()));
    v.push_back(Tensor::zeros(p->value.shape()));
  }
}

bool adam_step(const std::vector<Param*>& params, AdamState& state, double encoder_rate,
               double head_rate, double encoder_wd, double head_wd) {
  for (const Param* p : params)
    if (!p->grad.all_finite()) {
      for (Param* q : params) q->zero_grad();
      return false;
    }

  state.step += 1;
  double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Param& p = *params[pi];
    double rate = is_encoder_param(p) ? encoder_rate : head_rate;
    double wd = is_encoder_param(p) ? encoder_wd : head_wd;
    double* value = p.value.data().data();
    double* grad = p.grad.data().data();
    double* mm = state.m[pi].data().data();
    double* vv = state.v[pi].data().data();
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      mm[i] = state.beta1 * mm[i] + (1.0 - state.beta1) * grad[i];
      vv[i] = state.beta2 * vv[i] + (1.0 - state.beta2) * grad[i] * grad[i];
      double m_hat = mm[i] / bc1;
      double v_hat = vv[i] / bc2;
      value[i] -= rate * m_hat / (std::sqrt(v_hat) + state.eps);
      value[i] -= rate * wd * value[i];  // decoupled decay
    }
    p.zero_grad();
  }
  return true;
}

std::string TrainResult::metrics_csv() const {
  std::ostringstream out;
  out << "epoch,loss,loss_a,loss_op,train_em\n";
  out.precision(12);
  for (const EpochMetrics& e : history)
    out << e.epoch << ',' << e.loss << ',' << e.loss_a << ',' << e.loss_op << ',' << e.train_em
        << '\n';
  return out.str();
}

TrainResult train(model::Model& m, const std::vector<derivations::LabeledInstance>& data,
                  const TrainConfig& config) {
  config.validate();
  std::vector<const derivations::LabeledInstance*> usable;
  for (const derivations::LabeledInstance& inst : data)
    if (inst.usable) usable.push_back(&inst);
  if (usable.empty()) throw std::runtime_error("train: no usable instances after filtering");

  // The ablation removes the selector supervision along with the module.
  double lambda = m.config().ablate_op ? 0.0 : config.lambda_op;

  std::vector<Param*> params = m.params();
  AdamState state(params);
  for (Param* p : params) p->zero_grad();

  std::size_t batches_per_epoch = (usable.size() + config.batch_size - 1) / config.batch_size;
  std::size_t total_steps = config.epochs * batches_per_epoch;
  std::mt19937_64 rng(config.seed);

  TrainResult result;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<std::size_t> order(usable.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    double sum_loss = 0.0, sum_a = 0.0, sum_op = 0.0;
    for (std::size_t batch_start = 0; batch_start < order.size();
         batch_start += config.batch_size) {
      std::size_t batch_end = std::min(order.size(), batch_start + config.batch_size);
      double inv = 1.0 / static_cast<double>(batch_end - batch_start);
      for (std::size_t bi = batch_start; bi < batch_end; ++bi) {
        const derivations::LabeledInstance& inst = *usable[order[bi]];
        Tape tape;
        model::ForwardOutput out = m.forward(tape, inst.ctx, inst.numbers);
        LossRefs refs = compute_loss(tape, out, inst, lambda);
        sum_loss += tape.value(refs.total).item();
        sum_a += tape.value(refs.answer).item();
        sum_op += tape.value(refs.op).item();
        tape.backward(tape.scale(refs.total, inv));
      }
      double enc_rate = lr_at(state.step, total_steps, config.encoder_lr, config.warmup_fraction);
      double head_rate = lr_at(state.step, total_steps, config.head_lr, config.warmup_fraction);
      if (!adam_step(params, state, enc_rate, head_rate, config.encoder_wd, config.head_wd)) {
        ++result.skipped_batches;
        std::cerr << "epoch " << epoch << ": skipped a batch with non-finite gradients\n";
      }
    }

    EpochMetrics em;
    em.epoch = epoch;
    em.loss = sum_loss / static_cast<double>(usable.size());
    em.loss_a = sum_a / static_cast<double>(usable.size());
    em.loss_op = sum_op / static_cast<double>(usable.size());
    double em_sum = 0.0;
    for (const derivations::LabeledInstance* inst : usable) {
      Tape tape;
      model::ForwardOutput out = m.forward(tape, inst->ctx, inst->numbers);
      evalcli::Prediction pred =
          evalcli::decode(out, inst->ctx, inst->numbers, m.config().max_span_len);
      std::vector<std::vector<std::string>> golds;
      for (const corpus::GoldAnswer& g : inst->raw.answers) golds.push_back(g.answer_texts());
      em_sum += metrics::best_em_f1(pred.answer_texts, golds).em;
    }
    em.train_em = em_sum / static_cast<double>(usable.size());
    result.history.push_back(em);
  }
  return result;
}

namespace {

void write_bytes(std::ostream& out, const void* data, std::size_t n) {
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

void write_u32(std::ostream& out, std::uint32_t v) { write_bytes(out, &v, sizeof v); }
void write_u64(std::ostream& out, std::uint64_t v) { write_bytes(out, &v, sizeof v); }
void write_f64(std::ostream& out, double v) { write_bytes(out, &v, sizeof v); }
void write_u8(std::ostream& out, std::uint8_t v) { write_bytes(out, &v, sizeof v); }

void write_string(std::ostream& out, const std::string& s) {
  write_u32(out, static_cast<std::uint32_t>(s.size()));
  write_bytes(out, s.data(), s.size());
}

void write_tensor(std::ostream& out, const Tensor& t) {
  write_u64(out, t.rows());
  write_u64(out, t.cols());
  write_bytes(out, t.data().data(), t.size() * sizeof(double));
}

void read_bytes(std::istream& in, void* data, std::size_t n) {
  in.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
  if (!in) throw std::runtime_error("checkpoint truncated");
}

std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v;
  read_bytes(in, &v, sizeof v);
  return v;
}
std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v;
  read_bytes(in, &v, sizeof v);
  return v;
}
double read_f64(std::istream& in) {
  double v;
  read_bytes(in, &v, sizeof v);
  return v;
}
std::uint8_t read_u8(std::istream& in) {
  std::uint8_t v;
  read_bytes(in, &v, sizeof v);
  return v;
}

std::string read_string(std::istream& in) {
  std::uint32_t n = read_u32(in);
  std::string s(n, '\0');
  if (n) read_bytes(in, s.data(), n);
  return s;
}

Tensor read_tensor(std::istream& in) {
  std::uint64_t r = read_u64(in);
  std::uint64_t c = read_u64(in);
  Tensor t({static_cast<std::size_t>(r), static_cast<std::size_t>(c)});
  read_bytes(in, t.data().data(), t.size() * sizeof(double));
  return t;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, model::Model& m,
                     const corpus::Vocab& vocab, const AdamState* optimizer,
                     const std::string& rng_state) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path.string());
  write_bytes(out, kCheckpointMagic, sizeof kCheckpointMagic);
  write_u32(out, kCheckpointVersion);

  const model::ModelConfig& cfg = m.config();
  write_u64(out, cfg.d_h);
  write_u64(out, cfg.n_h);
  write_u64(out, cfg.encoder_layers);
  write_u64(out, cfg.max_seq_len);
  write_u64(out, cfg.vocab_size);
  write_u64(out, cfg.max_span_len);
  write_f64(out, cfg.lambda_op);
  write_u8(out, cfg.ablate_op ? 1 : 0);
  write_u64(out, cfg.seed);

  write_u64(out, vocab.id_to_token.size());
  for (const std::string& token : vocab.id_to_token) write_string(out, token);

  std::vector<Param*> params = m.params();
  write_u64(out, params.size());
  for (const Param* p : params) {
    write_string(out, p->name);
    write_tensor(out, p->value);
  }

  write_u8(out, optimizer ? 1 : 0);
  if (optimizer) {
    write_u64(out, optimizer->step);
    write_f64(out, optimizer->beta1);
    write_f64(out, optimizer->beta2);
    write_f64(out, optimizer->eps);
    for (std::size_t i = 0; i < params.size(); ++i) {
      write_tensor(out, optimizer->m[i]);
      write_tensor(out, optimizer->v[i]);
    }
  }
  write_string(out, rng_state);
  if (!out) throw std::runtime_error("checkpoint write failed: " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
  char magic[4];
  read_bytes(in, magic, sizeof magic);
  if (std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw std::runtime_error("not a checkpoint file: " + path.string());
  std::uint32_t version = read_u32(in);
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint version " + std::to_string(version) +
                             " is incompatible with " + std::to_string(kCheckpointVersion));

  LoadedCheckpoint out;
  out.config.d_h = static_cast<std::size_t>(read_u64(in));
  out.config.n_h = static_cast<std::size_t>(read_u64(in));
  out.config.encoder_layers = static_cast<std::size_t>(read_u64(in));
  out.config.max_seq_len = static_cast<std::size_t>(read_u64(in));
  out.config.vocab_size = static_cast<std::size_t>(read_u64(in));
  out.config.max_span_len = static_cast<std::size_t>(read_u64(in));
  out.config.lambda_op = read_f64(in);
  out.config.ablate_op = read_u8(in) != 0;
  out.config.seed = read_u64(in);

  std::uint64_t vocab_size = read_u64(in);
  for (std::uint64_t i = 0; i < vocab_size; ++i) out.vocab.id_to_token.push_back(read_string(in));
  for (std::size_t i = 0; i < out.vocab.id_to_token.size(); ++i)
    out.vocab.token_to_id[out.vocab.id_to_token[i]] = static_cast<int>(i);

  out.model = std::make_unique<model::Model>(out.config);
  std::vector<Param*> params = out.model->params();
  std::uint64_t n_params = read_u64(in);
  if (n_params != params.size())
    throw std::runtime_error("checkpoint param count mismatch: file has " +
                             std::to_string(n_params) + ", model wants " +
                             std::to_string(params.size()));
  for (Param* p : params) {
    std::string name = read_string(in);
    if (name != p->name)
      throw std::runtime_error("checkpoint param order mismatch at '" + name + "' vs '" +
                               p->name + "'");
    Tensor value = read_tensor(in);
    if (!value.same_shape(p->value))
      throw std::runtime_error("checkpoint shape mismatch for '" + name + "'");
    p->value = std::move(value);
  }

  if (read_u8(in)) {
    AdamState state(params);
    state.step = static_cast<std::size_t>(read_u64(in));
    state.beta1 = read_f64(in);
    state.beta2 = read_f64(in);
    state.eps = read_f64(in);
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i] = read_tensor(in);
      state.v[i] = read_tensor(in);
    }
    out.optimizer = std::move(state);
  }
  out.rng_state = read_string(in);
  return out;
}

}  // namespace opera::training
