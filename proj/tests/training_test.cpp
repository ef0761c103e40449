#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "opera/synth.hpp"
#include "opera/training.hpp"

using namespace opera;
using tensor::Param;
using tensor::Ref;
using tensor::Tape;
using tensor::Tensor;

namespace {

std::vector<derivations::LabeledInstance> labeled_corpus(std::size_t n, std::uint64_t seed,
                                                         corpus::Vocab* vocab_out = nullptr) {
  std::string json = synth::generate_drop_json({n, seed});
  std::vector<corpus::RawInstance> raw = corpus::load_drop_json_text(json, "synth", nullptr);
  corpus::Vocab vocab = corpus::build_vocab(raw);
  if (vocab_out) *vocab_out = vocab;
  return derivations::label_all(raw, vocab, rules::builtin_rules(), 512);
}

training::TrainConfig tiny_config(std::size_t vocab_size, std::size_t epochs = 2) {
  training::TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.model.d_h = 16;
  cfg.model.n_h = 4;
  cfg.model.encoder_layers = 1;
  cfg.model.vocab_size = vocab_size;
  cfg.model.max_seq_len = 128;
  return cfg;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("compute_loss composes the answer and operation terms") {
  synth::GradcheckFixture fx = synth::make_gradcheck_fixture();
  model::Model m(synth::gradcheck_config(fx, 16));
  SUBCASE("an empty operation set contributes nothing") {
    derivations::LabeledInstance inst = fx.instance;
    inst.operations.clear();
    Tape tape;
    model::ForwardOutput out = m.forward(tape, inst.ctx, inst.numbers);
    training::LossRefs refs = training::compute_loss(tape, out, inst, 0.3);
    CHECK(tape.value(refs.op).item() == 0.0);
    CHECK(tape.value(refs.total).item() == tape.value(refs.answer).item());
  }
  SUBCASE("lambda zero reproduces the answer-only objective") {
    Tape tape;
    model::ForwardOutput out = m.forward(tape, fx.instance.ctx, fx.instance.numbers);
    training::LossRefs refs = training::compute_loss(tape, out, fx.instance, 0.0);
    CHECK(tape.value(refs.op).item() > 0.0);
    CHECK(tape.value(refs.total).item() == tape.value(refs.answer).item());
  }
  SUBCASE("a half-probability operation costs ln 2") {
    Tape tape;
    model::ForwardOutput out = m.forward(tape, fx.instance.ctx, fx.instance.numbers);
    Tensor lp_op = Tensor::full({1, 11}, std::log(0.05));
    lp_op.at(0, static_cast<std::size_t>(rules::Op::max)) = std::log(0.5);
    out.lp_op = tape.constant(lp_op);
    derivations::LabeledInstance inst = fx.instance;
    inst.operations = {rules::Op::max};
    training::LossRefs refs = training::compute_loss(tape, out, inst, 1.0);
    CHECK(tape.value(refs.op).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("losses are non-negative") {
    Tape tape;
    model::ForwardOutput out = m.forward(tape, fx.instance.ctx, fx.instance.numbers);
    training::LossRefs refs = training::compute_loss(tape, out, fx.instance, 0.3);
    CHECK(tape.value(refs.answer).item() >= 0.0);
    CHECK(tape.value(refs.op).item() >= 0.0);
    CHECK(std::isfinite(tape.value(refs.total).item()));
  }
  SUBCASE("unusable instances are rejected") {
    derivations::LabeledInstance inst = fx.instance;
    inst.usable = false;
    inst.derivations.derivations.clear();
    Tape tape;
    model::ForwardOutput out = m.forward(tape, inst.ctx, inst.numbers);
    CHECK_THROWS_AS(training::compute_loss(tape, out, inst, 0.3), std::runtime_error);
  }
}

TEST_CASE("learning-rate schedule endpoints and continuity") {
  const std::size_t total = 1000;
  const double base = 1e-3, warmup = 0.06;
  CHECK(training::lr_at(0, total, base, warmup) == 0.0);
  std::size_t warmup_steps = static_cast<std::size_t>(warmup * total);
  CHECK(training::lr_at(warmup_steps, total, base, warmup) == doctest::Approx(base));
  CHECK(training::lr_at(total, total, base, warmup) == doctest::Approx(0.0).epsilon(1e-12));
  // |lr(s+1) - lr(s)| stays under the ramp/decay slope bound
  double bound = base * std::max(1.0 / static_cast<double>(warmup_steps),
                                 M_PI / (2.0 * static_cast<double>(total - warmup_steps)));
  for (std::size_t s = 0; s < total; ++s) {
    double delta = std::abs(training::lr_at(s + 1, total, base, warmup) -
                            training::lr_at(s, total, base, warmup));
    CHECK(delta <= bound + 1e-15);
  }
}

TEST_CASE("adam first step magnitude is the learning rate") {
  Param p("heads.w", Tensor::scalar(0.0));
  std::vector<Param*> params = {&p};
  training::AdamState state(params);
  p.grad.data()[0] = 1.0;
  CHECK(training::adam_step(params, state, 0.1, 1e-3, 0.0, 0.0));
  // m_hat = 1, v_hat = 1 after bias correction, so the step is rate/(1+eps)
  CHECK(p.value.item() == doctest::Approx(-1e-3).epsilon(1e-6));
  CHECK(state.step == 1);
  for (double g : p.grad.data()) CHECK(g == 0.0);
}

TEST_CASE("adam distinguishes encoder and head groups") {
  Param enc("encoder.w", Tensor::scalar(0.0));
  Param head("heads.w", Tensor::scalar(0.0));
  std::vector<Param*> params = {&enc, &head};
  training::AdamState state(params);
  enc.grad.data()[0] = 1.0;
  head.grad.data()[0] = 1.0;
  training::adam_step(params, state, 1e-2, 1e-4, 0.0, 0.0);
  CHECK(enc.value.item() == doctest::Approx(-1e-2).epsilon(1e-6));
  CHECK(head.value.item() == doctest::Approx(-1e-4).epsilon(1e-6));
}

TEST_CASE("zero gradients leave only weight-decay shrinkage") {
  Param p("heads.w", Tensor::scalar(2.0));
  std::vector<Param*> params = {&p};
  training::AdamState state(params);
  SUBCASE("with decay") {
    training::adam_step(params, state, 0.0, 0.1, 0.0, 0.5);
    CHECK(p.value.item() == doctest::Approx(2.0 * (1.0 - 0.1 * 0.5)));
  }
  SUBCASE("without decay the value is bit-identical") {
    training::adam_step(params, state, 0.0, 0.1, 0.0, 0.0);
    CHECK(p.value.item() == 2.0);
  }
}

TEST_CASE("non-finite gradients skip the update") {
  Param p("heads.w", Tensor::scalar(1.0));
  std::vector<Param*> params = {&p};
  training::AdamState state(params);
  p.grad.data()[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_FALSE(training::adam_step(params, state, 0.1, 0.1, 0.0, 0.0));
  CHECK(p.value.item() == 1.0);
  CHECK(state.step == 0);
  CHECK(p.grad.data()[0] == 0.0);  // cleared so the next batch starts clean
}

TEST_CASE("training runs deterministically for a fixed seed") {
  corpus::Vocab vocab;
  auto data = labeled_corpus(24, 3, &vocab);
  training::TrainConfig cfg = tiny_config(vocab.size());
  model::Model a(cfg.model);
  training::TrainResult ra = training::train(a, data, cfg);
  model::Model b(cfg.model);
  training::TrainResult rb = training::train(b, data, cfg);
  CHECK(ra.metrics_csv() == rb.metrics_csv());
  REQUIRE(ra.history.size() == cfg.epochs);
  for (const training::EpochMetrics& e : ra.history) {
    CHECK(std::isfinite(e.loss));
    CHECK(e.loss_a >= 0.0);
    CHECK(e.loss_op >= 0.0);
  }
}

TEST_CASE("identical seeds give identical first forward passes across lambda settings") {
  corpus::Vocab vocab;
  auto data = labeled_corpus(8, 5, &vocab);
  training::TrainConfig cfg = tiny_config(vocab.size());
  model::Model a(cfg.model);
  model::Model b(cfg.model);
  const derivations::LabeledInstance& inst = data.front();
  Tape ta, tb;
  model::ForwardOutput oa = a.forward(ta, inst.ctx, inst.numbers);
  model::ForwardOutput ob = b.forward(tb, inst.ctx, inst.numbers);
  CHECK(oa.p_op == ob.p_op);
  CHECK(oa.p_type == ob.p_type);
  training::LossRefs la = training::compute_loss(ta, oa, inst, 0.3);
  training::LossRefs lb = training::compute_loss(tb, ob, inst, 0.0);
  CHECK(ta.value(la.answer).item() == tb.value(lb.answer).item());
}

TEST_CASE("zero epochs keep the initialization") {
  corpus::Vocab vocab;
  auto data = labeled_corpus(8, 7, &vocab);
  training::TrainConfig cfg = tiny_config(vocab.size(), 0);
  model::Model trained(cfg.model);
  training::train(trained, data, cfg);
  model::Model fresh(cfg.model);
  auto tp = trained.params();
  auto fp = fresh.params();
  REQUIRE(tp.size() == fp.size());
  for (std::size_t i = 0; i < tp.size(); ++i) CHECK(tp[i]->value.data() == fp[i]->value.data());
}

TEST_CASE("training requires usable instances") {
  corpus::Vocab vocab;
  auto data = labeled_corpus(8, 9, &vocab);
  for (auto& inst : data) {
    inst.usable = false;
    inst.derivations.derivations.clear();
  }
  training::TrainConfig cfg = tiny_config(vocab.size());
  model::Model m(cfg.model);
  CHECK_THROWS_AS(training::train(m, data, cfg), std::runtime_error);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  corpus::Vocab vocab;
  auto data = labeled_corpus(12, 11, &vocab);
  training::TrainConfig cfg = tiny_config(vocab.size(), 1);
  model::Model m(cfg.model);
  training::train(m, data, cfg);
  std::filesystem::path path = temp_path("opera_test_ckpt.bin");
  training::save_checkpoint(path, m, vocab);
  training::LoadedCheckpoint loaded = training::load_checkpoint(path);
  CHECK(loaded.vocab.id_to_token == vocab.id_to_token);
  CHECK(loaded.config.d_h == cfg.model.d_h);
  const derivations::LabeledInstance& inst = data.front();
  Tape ta, tb;
  model::ForwardOutput oa = m.forward(ta, inst.ctx, inst.numbers);
  model::ForwardOutput ob = loaded.model->forward(tb, inst.ctx, inst.numbers);
  CHECK(oa.p_op == ob.p_op);
  CHECK(oa.p_type == ob.p_type);
  CHECK(oa.bio_log == ob.bio_log);
  CHECK(oa.count_log == ob.count_log);
  std::filesystem::remove(path);
}

TEST_CASE("checkpoints carry optimizer and rng state when asked") {
  corpus::Vocab vocab;
  auto data = labeled_corpus(8, 15, &vocab);
  training::TrainConfig cfg = tiny_config(vocab.size(), 0);
  model::Model m(cfg.model);
  training::AdamState state(m.params());
  state.step = 17;
  state.m[3].data()[0] = 0.25;
  state.v[3].data()[0] = 0.75;
  std::filesystem::path path = temp_path("opera_test_ckpt3.bin");
  training::save_checkpoint(path, m, vocab, &state, "rng-blob");
  training::LoadedCheckpoint loaded = training::load_checkpoint(path);
  REQUIRE(loaded.optimizer.has_value());
  CHECK(loaded.optimizer->step == 17);
  CHECK(loaded.optimizer->m[3].data()[0] == 0.25);
  CHECK(loaded.optimizer->v[3].data()[0] == 0.75);
  CHECK(loaded.rng_state == "rng-blob");
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint loading rejects damaged files") {
  corpus::Vocab vocab;
  auto data = labeled_corpus(8, 13, &vocab);
  training::TrainConfig cfg = tiny_config(vocab.size(), 0);
  model::Model m(cfg.model);
  std::filesystem::path path = temp_path("opera_test_ckpt2.bin");
  training::save_checkpoint(path, m, vocab);

  SUBCASE("truncation") {
    auto size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, size / 2);
    CHECK_THROWS_WITH_AS(training::load_checkpoint(path), doctest::Contains("truncated"),
                         std::runtime_error);
  }
  SUBCASE("wrong magic") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.write("NOPE", 4);
    f.close();
    CHECK_THROWS_WITH_AS(training::load_checkpoint(path), doctest::Contains("not a checkpoint"),
                         std::runtime_error);
  }
  SUBCASE("future version") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(4);
    std::uint32_t v = 99;
    f.write(reinterpret_cast<const char*>(&v), sizeof v);
    f.close();
    CHECK_THROWS_WITH_AS(training::load_checkpoint(path), doctest::Contains("version"),
                         std::runtime_error);
  }
  std::filesystem::remove(path);
}

TEST_CASE("config files parse and validate") {
  training::TrainConfig cfg = training::parse_config_text(
      "lambda_op = 0.5\nepochs = 3\nd_h = 24\n# comment\nseed = 99\n", "inline");
  CHECK(cfg.lambda_op == 0.5);
  CHECK(cfg.epochs == 3);
  CHECK(cfg.model.d_h == 24);
  CHECK(cfg.seed == 99);
  CHECK(cfg.model.seed == 99);
  CHECK_THROWS_WITH_AS(training::parse_config_text("nope = 1\n", "inline"),
                       doctest::Contains("unknown key"), std::runtime_error);
  CHECK_THROWS_AS(training::parse_config_text("lambda_op\n", "inline"), std::runtime_error);
}

TEST_CASE("profiles select hyperparameter presets") {
  training::TrainConfig desk;
  training::apply_profile(desk, "desk");
  CHECK(desk.model.d_h == 64);
  CHECK(desk.epochs == 30);
  CHECK(desk.encoder_lr == 1e-3);
  training::TrainConfig paper;
  training::apply_profile(paper, "paper");
  CHECK(paper.model.d_h == 1024);
  CHECK(paper.model.n_h == 16);
  CHECK(paper.epochs == 12);
  CHECK(paper.encoder_lr == 1.5e-5);
  CHECK(paper.head_lr == 5e-4);
  CHECK_THROWS_AS(training::apply_profile(paper, "huge"), std::runtime_error);
}
