#include <catch_amalgamated.hpp>

#include <cmath>
#include <limits>

#include "bskim/data/synthetic.hpp"
#include "bskim/training/trainer.hpp"

using namespace bskim;
using Catch::Approx;

namespace {

ModelConfig tiny_model() {
  ModelConfig c;
  c.num_layers = 2;
  c.num_heads = 2;
  c.hidden_dim = 16;
  c.ffn_dim = 32;
  c.vocab_size = 64;
  c.max_seq_len = 32;
  return c;
}

PredictorConfig tiny_pred() {
  PredictorConfig p;
  p.block_size = 4;
  p.conv1_channels = 2;
  p.conv2_channels = 2;
  p.conv3_channels = 2;
  return p;
}

std::vector<QAExample> tiny_data(std::size_t n, std::uint64_t seed = 42) {
  SynthConfig s;
  s.vocab_size = 64;
  s.seq_len = 32;
  s.question_len = 1;
  s.answer_len = 2;
  s.num_distractors = 1;
  s.seed = seed;
  return gen_synthetic(s, n);
}

TrainConfig tiny_train(TrainMode mode) {
  TrainConfig c;
  c.mode = mode;
  c.alpha = mode == TrainMode::vanilla ? 0.0 : 0.1;
  c.block_size = 4;
  c.batch_size = 4;
  c.epochs = 2;
  c.lr = 1e-3;
  return c;
}

std::vector<std::vector<double>> snapshot(const std::vector<Tensor*>& ts) {
  std::vector<std::vector<double>> s;
  for (const Tensor* t : ts) s.emplace_back(t->values().begin(), t->values().end());
  return s;
}

}  // namespace

TEST_CASE("linear learning-rate schedule") {
  CHECK(lr_schedule(0, 100, 3e-4) == 3e-4);
  CHECK(lr_schedule(100, 100, 3e-4) == 0.0);
  CHECK(lr_schedule(50, 100, 3e-4) == Approx(1.5e-4).margin(1e-18));
  CHECK(lr_schedule(0, 0, 1e-3) == 1e-3);
  CHECK_THROWS_AS(lr_schedule(101, 100, 1e-3), DomainError);
  for (std::size_t s = 1; s <= 100; ++s) CHECK(lr_schedule(s, 100, 1.0) < lr_schedule(s - 1, 100, 1.0));
}

TEST_CASE("alpha grid search") {
  CHECK(grid_search_alpha({0.3}, [](double) { return 1.0; }) == 0.3);
  CHECK(grid_search_alpha({10.0, 1.0, 0.01}, [](double) { return 5.0; }) == 0.01);
  CHECK(grid_search_alpha(default_alpha_grid(), [](double a) { return -std::abs(std::log10(a) + 1.0); }) == 0.1);
  CHECK(default_alpha_grid() == std::vector<double>{1e-3, 1e-2, 1e-1, 1.0, 10.0});
  CHECK_THROWS_AS(grid_search_alpha({}, [](double) { return 0.0; }), ConfigError);
}

TEST_CASE("train config validation and mode names") {
  TrainConfig c;
  c.mode = TrainMode::joint;
  c.alpha = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.mode = TrainMode::vanilla;
  c.alpha = 0.1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.alpha = 0.0;
  CHECK_NOTHROW(c.validate());
  c.beta = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  for (TrainMode m : {TrainMode::joint, TrainMode::vanilla, TrainMode::freeze_transformer, TrainMode::skim_training})
    CHECK(parse_train_mode(to_string(m)) == m);
  CHECK(parse_train_mode("freeze_transformer") == TrainMode::freeze_transformer);
  CHECK_THROWS_AS(parse_train_mode("fast"), ConfigError);
}

TEST_CASE("span metrics") {
  CHECK(span_f1({3, 6}, {3, 6}) == 1.0);
  CHECK(span_f1({0, 3}, {2, 5}) == Approx(0.5));
  CHECK(span_f1({0, 1}, {2, 5}) == 0.0);
  SpanScorer s;
  s.add(Span{1, 2}, {1, 2});
  s.add(Span{4, 4}, {4, 4});
  CHECK(s.result().em == 100.0);
  CHECK(s.result().f1 == 100.0);
  s.add(std::nullopt, {1, 1});
  CHECK(s.result().em == Approx(200.0 / 3.0));
  BinaryMetrics b;
  for (auto [p, a] : std::vector<std::pair<bool, bool>>{{true, true}, {true, false}, {false, true}, {false, false}})
    b.add(p, a);
  b.add(true, true);
  CHECK(b.accuracy() == Approx(0.6));
  CHECK(b.precision() == Approx(2.0 / 3.0));
  CHECK(b.recall() == Approx(2.0 / 3.0));
  CHECK(b.f1() == Approx(2.0 / 3.0));
}

TEST_CASE("vanilla training equals a joint objective with alpha zero") {
  const auto data = tiny_data(24);
  BlockSkimModel a(tiny_model(), tiny_pred(), 7), b(tiny_model(), tiny_pred(), 7);
  train(a, data, tiny_train(TrainMode::vanilla));

  TrainConfig cfg = tiny_train(TrainMode::joint);
  cfg.alpha = 0.0;
  TrainReport rep;
  rep.num_layers = 2;
  std::mt19937_64 rng(cfg.seed);
  // Predictors run (and see gradients of nothing); the QA trajectory must not move.
  detail::run_phase(b, data, cfg, detail::PhaseSpec{"joint", cfg.epochs, 0.0, true, true, nullptr}, 1.0, rng, rep, {});
  const auto pa = a.backbone_parameters(), pb = b.backbone_parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) REQUIRE(pa[i]->values() == pb[i]->values());
}

TEST_CASE("joint training is reproducible and lowers the loss") {
  const auto data = tiny_data(64);
  BlockSkimModel a(tiny_model(), tiny_pred(), 3), b(tiny_model(), tiny_pred(), 3);
  TrainConfig cfg = tiny_train(TrainMode::joint);
  cfg.epochs = 4;
  cfg.lr = 2e-3;
  const TrainReport ra = train(a, data, cfg), rb = train(b, data, cfg);
  REQUIRE(ra.steps.size() == 64);
  for (std::size_t i = 0; i < ra.steps.size(); ++i) {
    CHECK(ra.steps[i].total == rb.steps[i].total);
    CHECK(std::isfinite(ra.steps[i].total));
  }
  for (std::size_t i = 0; i < a.store().entries().size(); ++i)
    REQUIRE(a.store().entries()[i].tensor.values() == b.store().entries()[i].tensor.values());
  for (std::size_t e = 1; e < ra.epochs.size(); ++e) CHECK(ra.epochs[e].mean_total < ra.epochs[e - 1].mean_total);
  // Each step's total is the QA term plus alpha times the per-layer skim terms.
  for (const auto& s : ra.steps) {
    double skim = 0.0;
    for (double v : s.skim) skim += v;
    CHECK(s.total == Approx(s.qa + cfg.alpha * skim).epsilon(1e-12));
  }
  CHECK(ra.steps_csv().rfind("step,total,qa,skim_0,skim_1\n", 0) == 0);
  CHECK(ra.summary()["mode"] == "joint");
}

TEST_CASE("freeze mode trains predictors only in its second phase") {
  const auto data = tiny_data(16);
  BlockSkimModel m(tiny_model(), tiny_pred(), 5);
  TrainConfig cfg = tiny_train(TrainMode::freeze_transformer);
  cfg.epochs = 1;
  cfg.freeze_epochs = 2;
  std::vector<std::vector<double>> backbone_after_qa, predictors_after_qa;
  TrainHooks hooks;
  hooks.on_epoch = [&](std::size_t epoch, const BlockSkimModel& mm) {
    if (epoch == 0) {
      backbone_after_qa = snapshot(mm.backbone_parameters());
      predictors_after_qa = snapshot(mm.predictor_parameters());
    }
  };
  const auto before = snapshot(m.predictor_parameters());
  const TrainReport rep = train(m, data, cfg, hooks);
  REQUIRE(rep.epochs.size() == 3);
  CHECK(rep.epochs[0].phase == "qa");
  CHECK(rep.epochs[2].phase == "predictors");
  CHECK(snapshot(m.backbone_parameters()) == backbone_after_qa);
  CHECK(predictors_after_qa == before);
  CHECK(snapshot(m.predictor_parameters()) != predictors_after_qa);
  CHECK(m.trainable_parameters().size() == m.backbone_parameters().size() + m.predictor_parameters().size());
  for (Tensor* t : m.backbone_parameters()) CHECK(t->requires_grad());
}

TEST_CASE("skim-train drops blocks and keeps finite losses") {
  const auto data = tiny_data(16);
  BlockSkimModel m(tiny_model(), tiny_pred(), 6);
  TrainConfig cfg = tiny_train(TrainMode::skim_training);
  cfg.train_skim_policy.top_fraction = 0.3;
  const TrainReport rep = train(m, data, cfg);
  for (const auto& s : rep.steps) CHECK(std::isfinite(s.total));
  CHECK(rep.epochs.front().phase == "skim-train");
}

TEST_CASE("divergence aborts with the step index") {
  const auto data = tiny_data(8);
  BlockSkimModel m(tiny_model(), tiny_pred(), 1);
  m.store().at("qa.weight")[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    train(m, data, tiny_train(TrainMode::vanilla));
    FAIL("expected DivergenceError");
  } catch (const DivergenceError& e) {
    CHECK(e.step() == 0);
    CHECK(std::string(e.what()).find("step 0") != std::string::npos);
  }

  // A failing predictor phase still restores the backbone's trainability.
  BlockSkimModel f(tiny_model(), tiny_pred(), 1);
  f.store().at("skim.layer1.fc.bias")[0] = std::numeric_limits<double>::infinity();
  TrainConfig cfg = tiny_train(TrainMode::freeze_transformer);
  cfg.epochs = 1;
  CHECK_THROWS_AS(train(f, data, cfg), DivergenceError);
  for (Tensor* t : f.backbone_parameters()) CHECK(t->requires_grad());
}

TEST_CASE("training input guards") {
  BlockSkimModel m(tiny_model(), tiny_pred(), 1);
  CHECK_THROWS_AS(train(m, {}, tiny_train(TrainMode::joint)), DataError);
  TrainConfig cfg = tiny_train(TrainMode::joint);
  cfg.block_size = 8;
  CHECK_THROWS_AS(train(m, tiny_data(4), cfg), ConfigError);
}

TEST_CASE("auto beta follows the block label ratio") {
  const auto data = tiny_data(50);
  std::size_t pos = 0, neg = 0;
  for (const auto& ex : data) {
    const auto it = make_item(ex, round_up(ex.tokens.size(), 4), 4, false);
    pos += it.labels.positives();
    neg += it.labels.negatives();
  }
  CHECK(auto_beta(data, 4, false) == std::max(1.0, std::round(static_cast<double>(neg) / static_cast<double>(pos))));
}
