// Trains a small joint model on synthetic QA, then compares plain and
// skimmed inference on a held-out set.

#include <cstdio>

#include "bskim/bskim.hpp"

using namespace bskim;

int main() {
  ModelConfig mc;
  mc.num_layers = 3;
  mc.hidden_dim = 32;
  mc.ffn_dim = 64;
  mc.vocab_size = 128;
  mc.max_seq_len = 64;
  PredictorConfig pc;
  pc.block_size = 8;

  SynthConfig sc;
  sc.vocab_size = mc.vocab_size;
  sc.seq_len = mc.max_seq_len;
  sc.num_distractors = 2;
  const auto train_set = gen_synthetic(sc, 600);
  sc.seed = 43;
  const auto dev = gen_synthetic(sc, 100);

  BlockSkimModel model(mc, pc, 42);
  TrainConfig tc;
  tc.lr = 1e-3;
  tc.batch_size = 4;
  tc.epochs = 3;
  tc.block_size = pc.block_size;
  const TrainReport rep = train(model, train_set, tc);
  for (const auto& e : rep.epochs) std::printf("epoch %zu  loss %.4f\n", e.epoch, e.mean_total);

  const EvalResult plain = evaluate(model, dev);
  std::printf("no skimming   EM %.1f  F1 %.2f\n", plain.em, plain.f1);
  for (double th : {0.3, 0.5, 0.7}) {
    SkimPolicy p;
    p.threshold = th;
    const SkimEvalResult r = skim_evaluate(model, dev, p);
    const auto ret = r.retentions();
    std::printf("threshold %.1f EM %.1f  F1 %.2f  FLOPs ratio %.2f  analytical %.2f\n", th, r.quality.em, r.quality.f1,
                r.flops_ratio(), analytical_speedup(ret, ret.size()));
  }
  const auto pm = evaluate_predictors(model, dev);
  for (std::size_t l = 0; l < pm.size(); ++l) std::printf("layer %zu predictor F1 %.3f\n", l, pm[l].f1());
}
