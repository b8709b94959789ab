#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <sys/wait.h>
#include <unistd.h>

#include "json.hpp"

#include "bskim/cli/run_config.hpp"

using namespace bskim;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

class Workdir {
 public:
  Workdir() {
    dir_ = fs::temp_directory_path() / ("bskim_cli_" + std::to_string(::getpid()));
    fs::create_directories(dir_);
  }
  ~Workdir() {
    std::error_code ec;
    fs::remove_all(dir_, ec);
  }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  Run run(const std::string& args) const {
    const std::string out = path("stdout.txt"), err = path("stderr.txt");
    const std::string cmd = std::string(BSKIM_CLI_PATH) + " " + args + " >" + out + " 2>" + err;
    const int status = std::system(cmd.c_str());
    Run r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
  }

 private:
  fs::path dir_;
};

const std::string kTinyCfg = std::string(BSKIM_FIXTURE_DIR) + "/tiny.cfg";

nlohmann::json last_json_line(const std::string& text) {
  std::istringstream is(text);
  std::string line, last;
  while (std::getline(is, line))
    if (!line.empty() && line[0] == '{') last = line;
  return nlohmann::json::parse(last);
}

// Trains the tiny vanilla model used by several cases.
struct TinyRun {
  Workdir w;
  std::string train = w.path("train.jsonl"), dev = w.path("dev.jsonl"), ckpt = w.path("v.ckpt");
  Run train_run;

  TinyRun() {
    REQUIRE(w.run("gen-data --config " + kTinyCfg + " --out " + train + " --n 64").code == 0);
    REQUIRE(w.run("gen-data --config " + kTinyCfg + " --set synth.seed=7 --out " + dev + " --n 16").code == 0);
    train_run = w.run("train --config " + kTinyCfg + " --data " + train + " --mode vanilla --out-ckpt " + ckpt);
    REQUIRE(train_run.code == 0);
  }
};

}  // namespace

TEST_CASE("run config parses, rejects unknown keys and round-trips") {
  RunConfig c = parse_run_config("# comment\nmodel.num_layers = 6\n\ntrain.lr=0.002  # inline\nskim.active_layers = 1,3\n"
                                 "train.beta = 4.5\nsynth.evidence_mode = true\n");
  CHECK(c.model.num_layers == 6);
  CHECK(c.train.lr == 0.002);
  CHECK(c.skim.active_layers == std::vector<std::size_t>{1, 3});
  CHECK(c.train.beta == 4.5);
  CHECK(c.synth.evidence_mode);
  CHECK(parse_run_config(c.dump()).dump() == c.dump());

  RunConfig odd;
  odd.train.lr = 0.1 + 0.2;
  odd.skim.top_fraction = 1.0 / 3.0;
  odd.skim.active_layers = std::vector<std::size_t>{};
  const RunConfig back = parse_run_config(odd.dump());
  CHECK(back.train.lr == odd.train.lr);
  CHECK(back.skim.top_fraction == odd.skim.top_fraction);
  CHECK(back.skim.active_layers == std::vector<std::size_t>{});
  CHECK(back.dump() == odd.dump());

  CHECK_THROWS_AS(parse_run_config("model.layers = 3\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("model.num_layers = three\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("model.num_layers = 3x\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("train.evidence_labels = yes\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("train.mode = sideways\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("just words\n"), ConfigError);
  CHECK_THROWS_AS(load_run_config("/nonexistent/run.cfg"), IoError);
  RunConfig bad;
  bad.model.hidden_dim = 30;
  CHECK_THROWS_AS(bad.resolve(), ConfigError);
}

TEST_CASE("speedup command") {
  Workdir w;
  auto r = w.run("speedup --retention 0.9x12");
  CHECK(r.code == 0);
  CHECK(r.out == "1.86\n");
  r = w.run("speedup --retention 0.9,0.9,0.9,0.9,0.9,0.9,0.9,0.9,0.9,0.9,0.9,0.9");
  CHECK(r.out == "1.86\n");
  r = w.run("speedup --retention 1x4 --json");
  CHECK(nlohmann::json::parse(r.out)["speedup"].get<double>() == 1.0);
  r = w.run("speedup --retention 0.5,1.5");
  CHECK(r.code == 9);
  CHECK(last_json_line(r.err)["error"]["category"] == "domain");
  r = w.run("speedup");
  CHECK(r.code == 3);
}

TEST_CASE("vanilla training reproduces the committed baseline") {
  TinyRun t;
  std::ifstream is(std::string(BSKIM_FIXTURE_DIR) + "/cli_vanilla_baseline.json");
  const auto base = nlohmann::json::parse(is);
  const auto rep = last_json_line(t.train_run.out);
  REQUIRE(rep["epochs"].size() == base["epoch_mean_total"].size());
  for (std::size_t e = 0; e < rep["epochs"].size(); ++e)
    CHECK(rep["epochs"][e]["mean_total"].get<double>() == base["epoch_mean_total"][e].get<double>());
  const auto ev = t.w.run("eval --ckpt " + t.ckpt + " --data " + t.dev);
  REQUIRE(ev.code == 0);
  const auto j = nlohmann::json::parse(ev.out);
  CHECK(j["em"].get<double>() == base["eval"]["em"].get<double>());
  CHECK(j["f1"].get<double>() == base["eval"]["f1"].get<double>());
  CHECK(j["count"] == base["eval"]["count"]);
}

TEST_CASE("resolved config re-ingests to an identical run") {
  TinyRun t;
  std::string resolved;
  std::istringstream is(t.train_run.err);
  for (std::string line; std::getline(is, line);)
    if (line.rfind("#   ", 0) == 0) resolved += line.substr(4) + "\n";
  REQUIRE(!resolved.empty());
  const std::string cfg = t.w.path("resolved.cfg");
  std::ofstream(cfg) << resolved;
  const std::string ckpt2 = t.w.path("again.ckpt");
  const auto r = t.w.run("train --config " + cfg + " --data " + t.train + " --out-ckpt " + ckpt2);
  REQUIRE(r.code == 0);
  CHECK(slurp(ckpt2) == slurp(t.ckpt));
  CHECK(r.out == t.train_run.out);
}

TEST_CASE("skim-eval with threshold 0 matches eval") {
  TinyRun t;
  const auto ev = nlohmann::json::parse(t.w.run("eval --ckpt " + t.ckpt + " --data " + t.dev).out);
  const auto r = t.w.run("skim-eval --ckpt " + t.ckpt + " --data " + t.dev + " --threshold 0 --json");
  REQUIRE(r.code == 0);
  const auto j = nlohmann::json::parse(r.out);
  CHECK(j[0]["flops_ratio"].get<double>() == 1.0);
  CHECK(j[0]["f1"].get<double>() == ev["f1"].get<double>());
  CHECK(j[0]["em"].get<double>() == ev["em"].get<double>());

  const auto csv = t.w.run("skim-eval --ckpt " + t.ckpt + " --data " + t.dev + " --threshold 0,0.5");
  REQUIRE(csv.code == 0);
  std::istringstream is(csv.out);
  std::string header, row0, row1;
  std::getline(is, header);
  std::getline(is, row0);
  std::getline(is, row1);
  CHECK(header == "threshold,em,f1,flops_ratio,analytic_speedup,tokens_l0,tokens_l1,all_passage_skimmed");
  CHECK(row0.rfind("0.0000,", 0) == 0);
  CHECK(row0.find(",1.0000,1.0000,") != std::string::npos);
  CHECK(row1.rfind("0.5000,", 0) == 0);

  const std::string states = t.w.path("states.jsonl");
  REQUIRE(t.w.run("skim-eval --ckpt " + t.ckpt + " --data " + t.dev + " --threshold 0 --states-out " + states).code ==
          0);
  const auto sp = t.w.run("speedup --from-skimstate " + states);
  CHECK(sp.code == 0);
  CHECK(sp.out == "1.00\n");
}

TEST_CASE("profile-attn and probe produce per-layer tables") {
  TinyRun t;
  const std::string trace = t.w.path("t.bin");
  const auto p = t.w.run("profile-attn --ckpt " + t.ckpt + " --data " + t.dev + " --trace-out " + trace);
  REQUIRE(p.code == 0);
  CHECK(p.out.rfind("layer,answer_count,answer_mean,answer_std,irrelevant_count,irrelevant_mean,irrelevant_std\n0,", 0) ==
        0);
  const auto q = t.w.run("probe --trace " + trace + " --data " + t.dev + " --block-size 8");
  REQUIRE(q.code == 0);
  CHECK(q.out.rfind("layer,train_accuracy,train_f1,heldout_accuracy,heldout_f1,iterations\n0,", 0) == 0);
  CHECK(std::count(q.out.begin(), q.out.end(), '\n') == 3);

  std::string bytes = slurp(trace);
  bytes[0] = 'Z';
  std::ofstream(trace, std::ios::binary | std::ios::trunc) << bytes;
  const auto bad = t.w.run("probe --trace " + trace + " --data " + t.dev);
  CHECK(bad.code == 6);
  CHECK(last_json_line(bad.err)["error"]["category"] == "format");
}

TEST_CASE("error categories map to distinct exit codes") {
  TinyRun t;
  std::map<std::string, int> seen;
  auto expect = [&](const std::string& args, const std::string& category) {
    const auto r = t.w.run(args);
    INFO(args << "\n" << r.err);
    CHECK(r.code != 0);
    const auto j = last_json_line(r.err);
    CHECK(j["error"]["category"] == category);
    CHECK(j["error"]["exit_code"] == r.code);
    if (seen.count(category)) CHECK(seen[category] == r.code);
    for (const auto& [c, code] : seen)
      if (c != category) CHECK(code != r.code);
    seen[category] = r.code;
  };
  expect("eval --ckpt " + t.w.path("missing.ckpt") + " --data " + t.dev, "io");
  expect("train --config " + kTinyCfg + " --set model.depth=3 --data " + t.train + " --out-ckpt x", "config");
  std::ofstream(t.w.path("broken.jsonl")) << "{\"tokens\": [1, 2\n";
  expect("eval --ckpt " + t.ckpt + " --data " + t.w.path("broken.jsonl"), "parse");
  std::ofstream(t.w.path("junk.ckpt")) << "not a checkpoint";
  expect("eval --ckpt " + t.w.path("junk.ckpt") + " --data " + t.dev, "format");
  const std::string wide = t.w.path("wide.jsonl");
  REQUIRE(t.w.run("gen-data --config " + kTinyCfg + " --set synth.vocab_size=512 --out " + wide + " --n 4").code == 0);
  expect("eval --ckpt " + t.ckpt + " --data " + wide, "dimension");
  expect("speedup --retention 0", "domain");
  expect("eval --ckpt " + t.ckpt, "usage");
  CHECK(seen.size() == 7);
}
