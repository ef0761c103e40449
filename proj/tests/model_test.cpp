#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "opera/model.hpp"
#include "opera/synth.hpp"
#include "opera/training.hpp"

using namespace opera;
using derivations::AnswerType;
using derivations::CountLabel;
using derivations::Derivation;
using derivations::Sign;
using derivations::SignVector;
using derivations::SpanLabel;
using tensor::Ref;
using tensor::Tape;
using tensor::Tensor;

namespace {

struct Fixture {
  corpus::Vocab vocab;
  corpus::Context ctx;
  corpus::ContextNumbers numbers;
};

Fixture make_fixture(const std::string& question, const std::string& passage) {
  Fixture fx;
  corpus::RawInstance raw;
  raw.question_text = question;
  raw.passage_text = passage;
  fx.vocab = corpus::build_vocab({raw}, 1);
  fx.ctx = corpus::build_context(corpus::tokenize(question), corpus::tokenize(passage), fx.vocab,
                                 64, question, passage);
  fx.numbers = corpus::context_numbers(fx.ctx);
  return fx;
}

model::ModelConfig small_config(const Fixture& fx, std::size_t d_h = 32,
                                std::size_t layers = 1) {
  model::ModelConfig cfg;
  cfg.d_h = d_h;
  cfg.n_h = 4;
  cfg.encoder_layers = layers;
  cfg.max_seq_len = 64;
  cfg.vocab_size = fx.vocab.size();
  cfg.seed = 5;
  return cfg;
}

void randomize(tensor::Param& p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-0.5, 0.5);
  for (double& v : p.value.data()) v = d(rng);
}

}  // namespace

TEST_CASE("encode produces one row per joint token") {
  Fixture fx = make_fixture("How many yards was it?", "He ran 12 yards.");
  model::Model m(small_config(fx));
  Tape tape;
  const Tensor& h = tape.value(m.encode(tape, fx.ctx));
  CHECK(h.rows() == fx.ctx.length());
  CHECK(h.cols() == 32);
}

TEST_CASE("position embeddings make token order matter") {
  Fixture fx = make_fixture("Did he run?", "alpha bravo alpha bravo");
  model::Model m(small_config(fx));
  Tape tape;
  const Tensor h1 = tape.value(m.encode(tape, fx.ctx));
  corpus::Context swapped = fx.ctx;
  std::swap(swapped.joint_ids[swapped.p_range.begin],
            swapped.joint_ids[swapped.p_range.begin + 1]);
  Tape tape2;
  const Tensor h2 = tape2.value(m.encode(tape2, swapped));
  bool differs = false;
  for (std::size_t i = 0; i < h1.size(); ++i)
    if (h1.data()[i] != h2.data()[i]) differs = true;
  CHECK(differs);
}

TEST_CASE("zero encoder layers reduce to embeddings plus positions") {
  Fixture fx = make_fixture("Run?", "He did run far.");
  model::Model m(small_config(fx, 32, 0));
  Tape tape;
  const Tensor& h = tape.value(m.encode(tape, fx.ctx));
  const Tensor& tok = m.param("encoder.token_emb").value;
  const Tensor& pos = m.param("encoder.pos_emb").value;
  for (std::size_t t = 0; t < fx.ctx.length(); ++t) {
    std::size_t id = static_cast<std::size_t>(fx.ctx.joint_ids[t]);
    for (std::size_t j = 0; j < 32; ++j)
      CHECK(h.at(t, j) == tok.at(id, j) + pos.at(t, j));
  }
}

TEST_CASE("unknown ids are an error") {
  Fixture fx = make_fixture("Run?", "He did.");
  model::Model m(small_config(fx));
  corpus::Context broken = fx.ctx;
  broken.joint_ids[2] = static_cast<int>(fx.vocab.size()) + 7;
  Tape tape;
  CHECK_THROWS_AS(m.encode(tape, broken), std::runtime_error);
}

TEST_CASE("selector produces a distribution over the eleven operations") {
  Fixture fx = make_fixture("How many yards was the longest pass?", "a 29-yard pass");
  model::Model m(small_config(fx));
  Tape tape;
  Ref H = m.encode(tape, fx.ctx);
  Ref Hq = tape.slice_rows(H, fx.ctx.q_range.begin, fx.ctx.q_range.end);
  Ref hq = m.pool(tape, Hq, m.param("selector.pool.w"));
  const Tensor& p_op = tape.value(m.select_operations(tape, hq));
  REQUIRE(p_op.shape() == tensor::Shape{1, 11});
  double total = 0;
  for (std::size_t i = 0; i < 11; ++i) {
    CHECK(p_op.at(0, i) >= 0.0);
    total += p_op.at(0, i);
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("zero selector weight gives the uniform distribution") {
  Fixture fx = make_fixture("How many?", "12 yards");
  model::Model m(small_config(fx));
  tensor::Param& W = m.param("selector.W");
  std::fill(W.value.data().begin(), W.value.data().end(), 0.0);
  Tape tape;
  Ref H = m.encode(tape, fx.ctx);
  Ref Hq = tape.slice_rows(H, fx.ctx.q_range.begin, fx.ctx.q_range.end);
  Ref hq = m.pool(tape, Hq, m.param("selector.pool.w"));
  const Tensor& p_op = tape.value(m.select_operations(tape, hq));
  for (std::size_t i = 0; i < 11; ++i) CHECK(p_op.at(0, i) == 1.0 / 11.0);
}

TEST_CASE("scaling the selector bilinear form preserves the argmax") {
  Fixture fx = make_fixture("How many yards was the longest pass?", "a 29-yard pass");
  model::Model m(small_config(fx));
  auto argmax_op = [&]() {
    Tape tape;
    Ref H = m.encode(tape, fx.ctx);
    Ref Hq = tape.slice_rows(H, fx.ctx.q_range.begin, fx.ctx.q_range.end);
    Ref hq = m.pool(tape, Hq, m.param("selector.pool.w"));
    const Tensor& p = tape.value(m.select_operations(tape, hq));
    std::size_t best = 0;
    for (std::size_t i = 1; i < 11; ++i)
      if (p.at(0, i) > p.at(0, best)) best = i;
    return best;
  };
  std::size_t before = argmax_op();
  for (double& v : m.param("selector.W").value.data()) v *= 3.5;
  CHECK(argmax_op() == before);
}

TEST_CASE("executor attention on a single key returns that value row") {
  Fixture fx = make_fixture("Q?", "");
  // context [CLS] q? [SEP] [SEP]; use a slice with one row as H
  model::Model m(small_config(fx, 32, 0));
  Tape tape;
  Ref H = m.encode(tape, fx.ctx);
  Ref single = tape.slice_rows(H, 0, 1);
  const Tensor& m0 = tape.value(m.execute_operation(tape, 0, single));
  // with one key, attention weights are 1 and the output is V = H W_v
  Ref v = tape.matmul(single, tape.leaf(m.param("bank.op0.Wv")));
  const Tensor& want = tape.value(v);
  REQUIRE(m0.shape() == tensor::Shape{1, 32});
  for (std::size_t j = 0; j < 32; ++j)
    CHECK(m0.at(0, j) == doctest::Approx(want.at(0, j)).epsilon(1e-12));
}

TEST_CASE("executor splits identical keys evenly") {
  Fixture fx = make_fixture("Q?", "same same");
  model::Model m(small_config(fx, 8, 0));
  Tape tape;
  // two identical rows as keys/values
  Tensor h({2, 8});
  for (std::size_t j = 0; j < 8; ++j) {
    h.at(0, j) = 0.3 * static_cast<double>(j + 1);
    h.at(1, j) = 0.3 * static_cast<double>(j + 1);
  }
  Ref H = tape.constant(h);
  const Tensor& out = tape.value(m.execute_operation(tape, 2, H));
  Ref v = tape.matmul(H, tape.leaf(m.param("bank.op2.Wv")));
  const Tensor& values = tape.value(v);
  for (std::size_t j = 0; j < 8; ++j)
    CHECK(out.at(0, j) == doctest::Approx(0.5 * (values.at(0, j) + values.at(1, j))));
}

TEST_CASE("single-head executor matches a hand computation") {
  Fixture fx = make_fixture("Q?", "x y");
  model::ModelConfig cfg = small_config(fx, 2, 0);
  cfg.n_h = 1;
  model::Model m(cfg);
  // fixed tiny parameters
  m.param("bank.E_op").value = Tensor::from({11, 2}, [] {
    std::vector<double> v(22, 0.0);
    v[0] = 1.0;  // E_op[0] = (1, 0.5)
    v[1] = 0.5;
    return v;
  }());
  m.param("bank.op0.Wq").value = Tensor::from({2, 2}, {1, 0, 0, 1});
  m.param("bank.op0.Wk").value = Tensor::from({2, 2}, {1, 0, 0, 1});
  m.param("bank.op0.Wv").value = Tensor::from({2, 2}, {2, 0, 0, 2});
  Tensor h = Tensor::from({2, 2}, {1.0, 0.0, 0.0, 1.0});
  Tape tape;
  const Tensor& out = tape.value(m.execute_operation(tape, 0, tape.constant(h)));
  // scores = q K^T / sqrt(2) with q=(1,0.5): (1,0.5)/sqrt(2)
  double s0 = 1.0 / std::sqrt(2.0), s1 = 0.5 / std::sqrt(2.0);
  double a0 = std::exp(s0) / (std::exp(s0) + std::exp(s1));
  double a1 = 1.0 - a0;
  // V = 2*I rows: (2,0) and (0,2)
  CHECK(out.at(0, 0) == doctest::Approx(2.0 * a0).epsilon(1e-12));
  CHECK(out.at(0, 1) == doctest::Approx(2.0 * a1).epsilon(1e-12));
}

TEST_CASE("mix is an exact convex combination") {
  Fixture fx = make_fixture("Q?", "a b");
  model::Model m(small_config(fx, 8, 0));
  Tape tape;
  std::vector<Ref> results;
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> d(-1, 1);
  for (std::size_t i = 0; i < 11; ++i) {
    Tensor t({1, 8});
    for (double& v : t.data()) v = d(rng);
    results.push_back(tape.constant(t));
  }
  SUBCASE("one-hot picks the matching result bit-exactly") {
    for (std::size_t hot : {0ul, 4ul, 10ul}) {
      Tensor p = Tensor::zeros({1, 11});
      p.at(0, hot) = 1.0;
      const Tensor& mixed = tape.value(m.mix(tape, tape.constant(p), results, false));
      const Tensor& want = tape.value(results[hot]);
      for (std::size_t j = 0; j < 8; ++j) CHECK(mixed.at(0, j) == want.at(0, j));
    }
  }
  SUBCASE("identical results are a fixed point") {
    std::vector<Ref> same(11, results[3]);
    Tensor p = Tensor::full({1, 11}, 1.0 / 11.0);
    const Tensor& mixed = tape.value(m.mix(tape, tape.constant(p), same, false));
    const Tensor& want = tape.value(results[3]);
    for (std::size_t j = 0; j < 8; ++j)
      CHECK(mixed.at(0, j) == doctest::Approx(want.at(0, j)).epsilon(1e-12));
  }
  SUBCASE("ablation yields the zero vector") {
    Tensor p = Tensor::full({1, 11}, 1.0 / 11.0);
    const Tensor& mixed = tape.value(m.mix(tape, tape.constant(p), results, true));
    for (std::size_t j = 0; j < 8; ++j) CHECK(mixed.at(0, j) == 0.0);
  }
}

TEST_CASE("forward output tables are valid distributions") {
  Fixture fx = make_fixture("How many yards was the longest field goal?",
                            "Akers hit a 43-yard field goal. Brown hit a 20-yard field goal.");
  model::Model m(small_config(fx));
  Tape tape;
  model::ForwardOutput out = m.forward(tape, fx.ctx, fx.numbers);

  auto check_log_table = [](const std::vector<double>& log_probs, std::size_t rows,
                            std::size_t cols) {
    REQUIRE(log_probs.size() == rows * cols);
    for (std::size_t r = 0; r < rows; ++r) {
      double total = 0;
      for (std::size_t c = 0; c < cols; ++c) total += std::exp(log_probs[r * cols + c]);
      CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
    }
  };
  double p_op_sum = 0, p_type_sum = 0;
  for (double v : out.p_op) p_op_sum += v;
  for (double v : out.p_type) p_type_sum += v;
  CHECK(p_op_sum == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(p_type_sum == doctest::Approx(1.0).epsilon(1e-9));
  check_log_table(out.q_start_log, 1, fx.ctx.q_range.size());
  check_log_table(out.q_end_log, 1, fx.ctx.q_range.size());
  check_log_table(out.p_start_log, 1, fx.ctx.p_range.size());
  check_log_table(out.count_log, 1, 10);
  check_log_table(out.sign_log, fx.numbers.count(), 3);
  check_log_table(out.bio_log, fx.ctx.length(), 3);
}

TEST_CASE("no numbers still yields a valid count table and no sign table") {
  Fixture fx = make_fixture("Which team won the game?", "The Raiders won the game.");
  REQUIRE(fx.numbers.count() == 0);
  model::Model m(small_config(fx));
  Tape tape;
  model::ForwardOutput out = m.forward(tape, fx.ctx, fx.numbers);
  CHECK(out.sign_log.empty());
  CHECK_FALSE(out.lp_sign.valid());
  double total = 0;
  for (double v : out.count_log) total += std::exp(v);
  CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("empty question segment is an error") {
  Fixture fx = make_fixture("x", "some passage here");
  fx.ctx.q_range.end = fx.ctx.q_range.begin;
  model::Model m(small_config(fx));
  Tape tape;
  CHECK_THROWS_WITH_AS(m.forward(tape, fx.ctx, fx.numbers), doctest::Contains("question"),
                       std::runtime_error);
}

TEST_CASE("ablation outputs are independent of the operation bank") {
  Fixture fx = make_fixture("How many yards was the longest field goal?",
                            "Akers hit a 43-yard field goal and a 20-yard field goal.");
  model::ModelConfig cfg = small_config(fx);
  cfg.ablate_op = true;
  model::Model m(cfg);
  Tape tape;
  model::ForwardOutput base = m.forward(tape, fx.ctx, fx.numbers);
  for (std::uint64_t trial = 1; trial <= 3; ++trial) {
    randomize(m.param("bank.E_op"), trial);
    for (std::size_t i = 0; i < 11; ++i) {
      std::string prefix = "bank.op" + std::to_string(i) + ".";
      randomize(m.param(prefix + "Wq"), trial * 31 + i);
      randomize(m.param(prefix + "Wk"), trial * 37 + i);
      randomize(m.param(prefix + "Wv"), trial * 41 + i);
    }
    randomize(m.param("selector.W"), trial * 43);
    randomize(m.param("selector.pool.w"), trial * 47);
    Tape tape2;
    model::ForwardOutput out = m.forward(tape2, fx.ctx, fx.numbers);
    CHECK(out.p_type == base.p_type);
    CHECK(out.p_op == base.p_op);
    CHECK(out.bio_log == base.bio_log);
    CHECK(out.count_log == base.count_log);
    CHECK(out.p_start_log == base.p_start_log);
    CHECK(out.sign_log == base.sign_log);
  }
}

TEST_CASE("marginal likelihood basics") {
  Fixture fx = make_fixture("How many?", "He kicked 3 goals.");
  Tape tape;
  model::ForwardOutput out;
  out.seq_len = fx.ctx.length();
  out.n_numbers = 0;
  const double low = -1e9;
  SUBCASE("certain derivation has log-likelihood zero") {
    Tensor lp_type = Tensor::full({1, 5}, low);
    lp_type.at(0, static_cast<std::size_t>(AnswerType::count)) = 0.0;
    Tensor lp_count = Tensor::full({1, 10}, low);
    lp_count.at(0, 3) = 0.0;
    out.lp_type = tape.constant(lp_type);
    out.lp_count = tape.constant(lp_count);
    derivations::DerivationSet set;
    set.derivations.push_back(Derivation{AnswerType::count, CountLabel{3}});
    Ref mll = model::marginal_log_likelihood(tape, out, set, fx.ctx);
    CHECK(tape.value(mll).item() == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("two derivations with joint probability 0.25 each give log 0.5") {
    const double half = std::log(0.5);
    Tensor lp_type = Tensor::full({1, 5}, low);
    lp_type.at(0, static_cast<std::size_t>(AnswerType::count)) = half;
    Tensor lp_count = Tensor::full({1, 10}, low);
    lp_count.at(0, 2) = half;
    lp_count.at(0, 3) = half;
    out.lp_type = tape.constant(lp_type);
    out.lp_count = tape.constant(lp_count);
    derivations::DerivationSet set;
    set.derivations.push_back(Derivation{AnswerType::count, CountLabel{2}});
    set.derivations.push_back(Derivation{AnswerType::count, CountLabel{3}});
    Ref mll = model::marginal_log_likelihood(tape, out, set, fx.ctx);
    CHECK(tape.value(mll).item() == doctest::Approx(std::log(0.5)).epsilon(1e-12));
  }
  SUBCASE("empty derivation sets are rejected") {
    derivations::DerivationSet set;
    CHECK_THROWS_AS(model::marginal_log_likelihood(tape, out, set, fx.ctx), std::runtime_error);
  }
}

TEST_CASE("adding a derivation never lowers the marginal likelihood") {
  Fixture fx = make_fixture("How many yards was the longest field goals",
                            "a 29-yard touchdown pass, then an 80-yard punt return");
  model::Model m(small_config(fx));
  derivations::DerivationSet both =
      derivations::search_all(fx.ctx, fx.numbers, [] {
        corpus::GoldAnswer g;
        g.kind = corpus::AnswerKind::number;
        g.number_text = "80";
        return g;
      }());
  REQUIRE(both.derivations.size() == 2);
  auto mll_of = [&](const derivations::DerivationSet& set) {
    Tape tape;
    model::ForwardOutput out = m.forward(tape, fx.ctx, fx.numbers);
    return tape.value(model::marginal_log_likelihood(tape, out, set, fx.ctx)).item();
  };
  derivations::DerivationSet first, second;
  first.derivations = {both.derivations[0]};
  second.derivations = {both.derivations[1]};
  double l_both = mll_of(both);
  CHECK(l_both > mll_of(first));
  CHECK(l_both > mll_of(second));
}

TEST_CASE("full joint loss passes a sampled gradient check at d_h=16") {
  synth::GradcheckFixture fixture = synth::make_gradcheck_fixture();
  model::Model m(synth::gradcheck_config(fixture, 16));
  // sample fewer coordinates here; the acceptance suite runs the full check
  tensor::GradCheckReport report = tensor::gradcheck(
      [&] { return synth::gradcheck_loss(m, fixture); }, m.params(), 1e-5, 1e-4, 3, 8);
  CHECK(report.pass);
  CHECK(report.max_rel_err <= 1e-4);
}
