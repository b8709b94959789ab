#pragma once

#include "bskim/errors.hpp"
#include "bskim/numerics/adam.hpp"
#include "bskim/numerics/grad_check.hpp"
#include "bskim/numerics/graph.hpp"
#include "bskim/numerics/ops.hpp"
#include "bskim/numerics/parameters.hpp"
#include "bskim/numerics/tensor.hpp"
#include "bskim/model/checkpoint.hpp"
#include "bskim/model/config.hpp"
#include "bskim/model/encoder.hpp"
#include "bskim/model/model.hpp"
#include "bskim/skim/blocks.hpp"
#include "bskim/skim/loss.hpp"
#include "bskim/skim/predictor.hpp"
#include "bskim/data/batch.hpp"
#include "bskim/data/dataset_io.hpp"
#include "bskim/data/example.hpp"
#include "bskim/data/squad.hpp"
#include "bskim/data/synthetic.hpp"
#include "bskim/data/vocab.hpp"
#include "bskim/inference/decode.hpp"
#include "bskim/inference/flops.hpp"
#include "bskim/inference/pass.hpp"
#include "bskim/inference/policy.hpp"
#include "bskim/inference/skim_eval.hpp"
#include "bskim/inference/skim_forward.hpp"
#include "bskim/inference/speedup.hpp"
#include "bskim/training/config.hpp"
#include "bskim/training/metrics.hpp"
#include "bskim/training/trainer.hpp"
#include "bskim/analysis/block_attention.hpp"
#include "bskim/analysis/probe.hpp"
#include "bskim/analysis/profile.hpp"
#include "bskim/analysis/trace.hpp"
