// bskim: data generation, training, evaluation, skimming, profiling and
// probing from the command line. Machine outputs go to stdout (JSON or
// CSV), logs and the resolved config to stderr. Failures print one JSON
// error record on stderr and exit with a code per error category.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "bskim/bskim.hpp"
#include "bskim/cli/run_config.hpp"

using namespace bskim;
using nlohmann::ordered_json;

namespace {

enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kUsage = 2,
  kConfig = 3,
  kIo = 4,
  kParse = 5,
  kFormat = 6,
  kDimension = 7,
  kData = 8,
  kDomain = 9,
  kIndex = 10,
  kNumeric = 11,
  kDivergence = 12,
};

int exit_code_for(const std::string& category) {
  static const std::map<std::string, int> codes = {
      {"config", kConfig}, {"io", kIo},         {"parse", kParse},   {"format", kFormat},
      {"dimension", kDimension}, {"data", kData}, {"domain", kDomain}, {"index", kIndex},
      {"numeric", kNumeric}, {"divergence", kDivergence}};
  auto it = codes.find(category);
  return it == codes.end() ? kInternal : it->second;
}

int report_error(const std::string& category, const std::string& message, int code) {
  ordered_json j;
  j["error"] = {{"category", category}, {"message", message}, {"exit_code", code}};
  std::cerr << j.dump() << std::endl;
  return code;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << text;
  if (!os) throw IoError("write to '" + path + "' failed");
}

std::string fmt(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// Shared by every command that reads a RunConfig.
struct ConfigArgs {
  std::string path;
  std::vector<std::string> overrides;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", path, "key=value run configuration file")->check(CLI::ExistingFile);
    cmd->add_option("--set", overrides, "Override one config entry, key=value (repeatable)");
  }

  RunConfig load() const {
    RunConfig c = path.empty() ? RunConfig{} : load_run_config(path);
    std::string text;
    for (const auto& o : overrides) text += o + "\n";
    return parse_run_config(text, c, "--set");
  }
};

void log_config(const RunConfig& c) {
  std::cerr << "# resolved config\n";
  std::istringstream is(c.dump());
  for (std::string line; std::getline(is, line);) std::cerr << "#   " << line << "\n";
}

void check_compatible(const BlockSkimModel& m, const std::vector<QAExample>& data, const std::string& what) {
  const auto& mc = m.model_config();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& ex = data[i];
    if (ex.tokens.size() > mc.max_seq_len)
      throw DimensionError(what + " example " + std::to_string(i) + " has " + std::to_string(ex.tokens.size()) +
                           " tokens; the model accepts at most " + std::to_string(mc.max_seq_len));
    for (std::size_t t : ex.tokens)
      if (t >= mc.vocab_size)
        throw DimensionError(what + " example " + std::to_string(i) + " uses token id " + std::to_string(t) +
                             " outside the model vocabulary of " + std::to_string(mc.vocab_size));
  }
}

std::vector<double> parse_double_list(const std::string& s, const std::string& what) {
  // Items are comma separated; "vxN" repeats v N times.
  std::vector<double> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    std::size_t reps = 1;
    if (auto x = item.find_first_of("x*"); x != std::string::npos) {
      reps = detail::parse_number<std::size_t>(what, item.substr(x + 1));
      item.resize(x);
    }
    const double v = detail::parse_number<double>(what, item);
    out.insert(out.end(), reps, v);
  }
  if (out.empty()) throw ConfigError(what + ": empty list");
  return out;
}

int cmd_gen_data(const ConfigArgs& ca, const std::string& out, std::size_t n, const std::string& squad) {
  RunConfig c = ca.load();
  log_config(c);
  std::vector<QAExample> data;
  if (squad.empty()) {
    data = gen_synthetic(c.synth, n);
  } else {
    Vocab vocab(c.model.vocab_size);
    SquadLoadStats st;
    SquadOptions opt;
    opt.max_seq_len = c.model.max_seq_len;
    data = load_squad_json(squad, vocab, opt, &st);
    std::cerr << "# squad: " << st.questions << " questions, " << st.loaded << " loaded, " << st.unmappable
              << " unmappable, " << st.truncated_away << " truncated away, vocab " << vocab.size() << "\n";
    if (n > 0 && data.size() > n) data.resize(n);
  }
  write_dataset(data, out);
  std::cout << ordered_json{{"examples", data.size()}, {"out", out}}.dump() << std::endl;
  return kOk;
}

struct TrainArgs {
  std::string data, dev, mode, ckpt, report, steps_csv;
};

int cmd_train(const ConfigArgs& ca, const TrainArgs& a, std::size_t threads) {
  RunConfig c = ca.load();
  if (!a.mode.empty()) c.train.mode = parse_train_mode(a.mode);
  if (c.train.mode == TrainMode::vanilla) c.train.alpha = 0.0;
  c.resolve();
  log_config(c);
  const auto data = read_dataset(a.data);
  std::vector<QAExample> dev;
  if (!a.dev.empty()) dev = read_dataset(a.dev);
  BlockSkimModel model(c.model, c.predictor, c.train.seed);
  check_compatible(model, data, "training");
  check_compatible(model, dev, "dev");
  TrainHooks hooks;
  if (!dev.empty()) hooks.dev = &dev;
  hooks.eval_threads = threads;
  hooks.on_epoch = [](std::size_t epoch, const BlockSkimModel&) { std::cerr << "# epoch " << epoch << " done\n"; };
  const TrainReport rep = train(model, data, c.train, hooks);
  save_checkpoint(model, a.ckpt);
  ordered_json summary = rep.summary();
  summary["config"] = c.dump();
  if (!a.report.empty()) write_text(a.report, summary.dump(2) + "\n");
  if (!a.steps_csv.empty()) write_text(a.steps_csv, rep.steps_csv());
  ordered_json out = summary;
  out.erase("config");
  std::cout << out.dump() << std::endl;
  return kOk;
}

int cmd_eval(const std::string& ckpt, const std::string& data_path, std::size_t threads) {
  auto model = load_checkpoint(ckpt);
  const auto data = read_dataset(data_path);
  check_compatible(*model, data, "eval");
  const EvalResult r = evaluate(*model, data, threads);
  std::cout << ordered_json{{"em", r.em}, {"f1", r.f1}, {"count", r.count}}.dump() << std::endl;
  return kOk;
}

struct SkimArgs {
  std::string ckpt, data, thresholds = "0.5", layers = "default", states_out;
  double top_fraction = -1.0;
  bool json = false;
};

int cmd_skim_eval(const ConfigArgs& ca, const SkimArgs& a, std::size_t threads) {
  RunConfig c = ca.load();
  auto model = load_checkpoint(a.ckpt);
  const auto data = read_dataset(a.data);
  check_compatible(*model, data, "skim-eval");
  SkimPolicy base = c.skim;
  if (a.layers != "default") base.active_layers = parse_layer_list(a.layers);
  if (a.top_fraction >= 0.0) base.top_fraction = a.top_fraction;
  const auto thresholds = parse_double_list(a.thresholds, "--threshold");
  if (!a.states_out.empty() && thresholds.size() != 1)
    throw ConfigError("--states-out needs exactly one threshold");
  const std::size_t L = model->num_layers();
  ordered_json rows = ordered_json::array();
  std::ostringstream csv;
  csv << "threshold,em,f1,flops_ratio,analytic_speedup";
  for (std::size_t l = 0; l < L; ++l) csv << ",tokens_l" << l;
  csv << ",all_passage_skimmed\n";
  for (double th : thresholds) {
    SkimPolicy p = base;
    p.threshold = th;
    const SkimEvalResult r = skim_evaluate(*model, data, p, threads);
    const double analytic = data.empty() ? 1.0 : analytical_speedup(r.retentions(), L);
    ordered_json j = to_json(r);
    j["threshold"] = th;
    j["analytic_speedup"] = analytic;
    rows.push_back(j);
    csv << fmt(th, 4) << ',' << fmt(r.quality.em, 4) << ',' << fmt(r.quality.f1, 4) << ',' << fmt(r.flops_ratio(), 4)
        << ',' << fmt(analytic, 4);
    for (double v : r.mean_layer_length) csv << ',' << fmt(v, 2);
    csv << ',' << r.all_passage_skimmed << '\n';
    if (!a.states_out.empty()) {
      std::ofstream os(a.states_out, std::ios::trunc);
      if (!os) throw IoError("cannot open '" + a.states_out + "' for writing");
      const std::size_t k = model->predictor_config().block_size;
      for (const auto& ex : data) {
        const BatchItem item = make_item(ex, round_up(ex.tokens.size(), k), k, false);
        os << to_json(skim_forward(*model, item, p).state).dump() << '\n';
      }
    }
  }
  if (a.json) std::cout << rows.dump() << std::endl;
  else std::cout << csv.str();
  return kOk;
}

int cmd_profile(const std::string& ckpt, const std::string& data_path, const std::string& trace_out,
                const std::string& hist_out, std::size_t bins, std::size_t threads) {
  auto model = load_checkpoint(ckpt);
  const auto data = read_dataset(data_path);
  check_compatible(*model, data, "profile-attn");
  TraceFile t;
  t.num_layers = static_cast<std::uint32_t>(model->num_layers());
  t.num_heads = static_cast<std::uint32_t>(model->model_config().num_heads);
  t.max_len = static_cast<std::uint32_t>(model->model_config().max_seq_len);
  t.records.resize(data.size());
  parallel_for(data.size(), threads, [&](std::size_t i) { t.records[i] = capture_trace(*model, data[i]); });
  if (!trace_out.empty()) write_trace(t, trace_out);
  const AttnDistribution d = profile_distribution(t, data, bins);
  if (!hist_out.empty()) write_text(hist_out, d.histograms_json().dump() + "\n");
  std::cout << d.to_csv();
  return kOk;
}

int cmd_probe(const std::string& trace_path, const std::string& data_path, std::size_t k, bool evidence,
              const ProbeFitOptions& opt) {
  const TraceFile t = read_trace(trace_path);
  const auto data = read_dataset(data_path);
  std::vector<ProbeResult> per_layer;
  for (std::size_t l = 0; l < t.num_layers; ++l)
    per_layer.push_back(probe_fit(probe_features(t, l, data, k, evidence), opt));
  std::cout << probe_csv(per_layer);
  return kOk;
}

int cmd_speedup(const std::string& retention, const std::string& states_path, bool json) {
  if (retention.empty() == states_path.empty()) throw ConfigError("speedup: give exactly one of --retention, --from-skimstate");
  std::vector<double> r;
  if (!retention.empty()) {
    r = parse_double_list(retention, "--retention");
  } else {
    std::ifstream is(states_path);
    if (!is) throw IoError("cannot open skim states '" + states_path + "'");
    std::vector<std::size_t> total;
    std::size_t n = 0;
    for (std::string line; std::getline(is, line);) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      ++n;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(states_path + ":" + std::to_string(n) + ": " + e.what());
      }
      const SkimState s = skim_state_from_json(j);
      if (total.empty()) total.assign(s.layer_lengths.size(), 0);
      if (s.layer_lengths.size() != total.size())
        throw DimensionError(states_path + ":" + std::to_string(n) + ": layer count differs from earlier records");
      for (std::size_t l = 0; l < total.size(); ++l) total[l] += s.layer_lengths[l];
    }
    if (total.empty()) throw DataError("speedup: no skim states in '" + states_path + "'");
    r = retentions_from_lengths(total);
  }
  const double s = analytical_speedup(r, r.size());
  if (json) std::cout << ordered_json{{"speedup", s}, {"layers", r.size()}, {"retentions", r}}.dump() << std::endl;
  else std::cout << fmt(s, 2) << std::endl;
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Block-relevance skimming for transformer QA"};
  app.require_subcommand(1);
  std::size_t threads = 1;
  app.add_option("--threads", threads, "Evaluation threads")->check(CLI::PositiveNumber);

  ConfigArgs gen_cfg, train_cfg, skim_cfg;

  auto* gen = app.add_subcommand("gen-data", "Write a synthetic (or converted SQuAD) LDJSON dataset");
  gen_cfg.attach(gen);
  std::string gen_out, gen_squad;
  std::size_t gen_n = 0;
  gen->add_option("--out", gen_out, "Output LDJSON path")->required();
  gen->add_option("--n", gen_n, "Number of examples (cap when converting SQuAD)");
  gen->add_option("--squad", gen_squad, "Convert this SQuAD v1.1 JSON file instead of synthesizing");

  auto* tr = app.add_subcommand("train", "Train a model and write a checkpoint");
  train_cfg.attach(tr);
  TrainArgs ta;
  tr->add_option("--data", ta.data, "Training LDJSON")->required();
  tr->add_option("--dev", ta.dev, "Dev LDJSON evaluated after each epoch");
  tr->add_option("--mode", ta.mode, "joint | vanilla | freeze | skim-train");
  tr->add_option("--out-ckpt", ta.ckpt, "Checkpoint output path")->required();
  tr->add_option("--report", ta.report, "JSON training report path");
  tr->add_option("--steps-csv", ta.steps_csv, "Per-step loss CSV path");

  auto* ev = app.add_subcommand("eval", "EM/F1 of a checkpoint without skimming");
  std::string ev_ckpt, ev_data;
  ev->add_option("--ckpt", ev_ckpt)->required();
  ev->add_option("--data", ev_data)->required();

  auto* se = app.add_subcommand("skim-eval", "EM/F1 and FLOPs ratio under a skim policy");
  skim_cfg.attach(se);
  SkimArgs sa;
  se->add_option("--ckpt", sa.ckpt)->required();
  se->add_option("--data", sa.data)->required();
  se->add_option("--threshold", sa.thresholds, "Threshold or comma list of thresholds (one row each)");
  se->add_option("--layers", sa.layers, "Comma list of skimming layers, or 'default'");
  se->add_option("--top-fraction", sa.top_fraction, "Keep this fraction of scored blocks instead of thresholding");
  se->add_option("--states-out", sa.states_out, "Per-example skim state LDJSON path");
  se->add_flag("--json", sa.json, "JSON instead of CSV");

  auto* pa = app.add_subcommand("profile-attn", "Capture attention traces and profile answer vs other tokens");
  std::string pa_ckpt, pa_data, pa_trace, pa_hist;
  std::size_t pa_bins = 20;
  pa->add_option("--ckpt", pa_ckpt)->required();
  pa->add_option("--data", pa_data)->required();
  pa->add_option("--trace-out", pa_trace, "Trace file output path");
  pa->add_option("--histograms", pa_hist, "Histogram JSON output path");
  pa->add_option("--bins", pa_bins)->check(CLI::PositiveNumber);

  auto* pr = app.add_subcommand("probe", "Per-layer logistic probe on block attention features");
  std::string pr_trace, pr_data;
  std::size_t pr_k = 16;
  bool pr_evidence = false;
  ProbeFitOptions pr_opt;
  pr->add_option("--trace", pr_trace)->required();
  pr->add_option("--data", pr_data)->required();
  pr->add_option("--block-size", pr_k)->check(CLI::PositiveNumber);
  pr->add_option("--l2", pr_opt.l2);
  pr->add_flag("--evidence-labels", pr_evidence, "Label blocks by evidence spans as well as the answer");

  auto* sp = app.add_subcommand("speedup", "Analytical speedup of a retention schedule");
  std::string sp_ret, sp_states;
  bool sp_json = false;
  sp->add_option("--retention", sp_ret, "Per-layer retentions, e.g. 0.9x12 or 1,1,0.5,0.5");
  sp->add_option("--from-skimstate", sp_states, "Skim state LDJSON written by skim-eval --states-out");
  sp->add_flag("--json", sp_json);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("usage", e.what(), kUsage);
  }

  try {
    if (*gen) return cmd_gen_data(gen_cfg, gen_out, gen_n, gen_squad);
    if (*tr) return cmd_train(train_cfg, ta, threads);
    if (*ev) return cmd_eval(ev_ckpt, ev_data, threads);
    if (*se) return cmd_skim_eval(skim_cfg, sa, threads);
    if (*pa) return cmd_profile(pa_ckpt, pa_data, pa_trace, pa_hist, pa_bins, threads);
    if (*pr) return cmd_probe(pr_trace, pr_data, pr_k, pr_evidence, pr_opt);
    if (*sp) return cmd_speedup(sp_ret, sp_states, sp_json);
  } catch (const Error& e) {
    return report_error(e.category(), e.what(), exit_code_for(e.category()));
  } catch (const std::exception& e) {
    return report_error("internal", e.what(), kInternal);
  }
  return kInternal;
}
