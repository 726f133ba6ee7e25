// Copyright 2026 The MiTA Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line entry point. Exit codes: 0 success, 1 check failure,
// 2 usage error, 3 runtime error.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mita/checks.h"
#include "mita/diag.h"
#include "mita/parallel.h"
#include "mita/train.h"

#ifndef MITA_VERSION
#define MITA_VERSION "unknown"
#endif

namespace {

using json = nlohmann::ordered_json;
using namespace mita;

constexpr int kOk = 0;
constexpr int kCheckFailed = 1;
constexpr int kUsage = 2;
constexpr int kRuntime = 3;

constexpr const char* kManifestSchema = "mita.manifest.v1";
constexpr const char* kBenchSchema = "mita.bench.v1";
constexpr const char* kHistorySchema = "mita.train_history.v1";
constexpr const char* kSweepSchema = "mita.sweep.v1";
constexpr const char* kDiagSchema = "mita.diag.v1";
constexpr const char* kCheckSchema = "mita.check.v1";

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

json manifest(const std::string& command, json config, std::uint64_t seed,
              const std::vector<std::string>& outputs) {
  json m;
  m["schema"] = kManifestSchema;
  m["command"] = command;
  m["config"] = std::move(config);
  m["seed"] = seed;
  m["version"] = MITA_VERSION;
  m["threads"] = thread_count();
  m["timestamp"] = utc_timestamp();
  m["outputs"] = outputs;
  return m;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << text;
  if (!out) throw std::runtime_error("write to " + path + " failed");
}

void write_json(const std::string& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

std::string manifest_path(const std::string& output) { return output + ".manifest.json"; }

std::string fixed(double x, int digits) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << x;
  return s.str();
}

// Round-trip precision for values that must reproduce bit-exactly.
std::string exact(double x) {
  std::ostringstream s;
  s << std::setprecision(17) << x;
  return s.str();
}

json config_json(const MitaConfig& c) {
  return {{"m", c.m}, {"k", c.k}, {"s", c.s}, {"shared_expert", c.shared_expert},
          {"routed_experts", c.routed_experts}};
}

json attention_json(const AttentionSpec& a) {
  json j = {{"mech", mechanism_name(a.mech)}};
  if (a.mech != Mechanism::kFull) j["config"] = config_json(a.cfg);
  return j;
}

json task_json(const TaskSpec& t) {
  return {{"kind", task_name(t.kind)}, {"seq_len", t.seq_len}, {"vocab", t.vocab},
          {"query_slots", t.query_slots}, {"seed", t.seed}};
}

std::vector<Mechanism> parse_mechanisms(const std::string& list) {
  std::vector<Mechanism> out;
  std::stringstream in(list);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) throw std::invalid_argument("empty mechanism in list '" + list + "'");
    out.push_back(parse_mechanism(item));
  }
  if (out.empty()) throw std::invalid_argument("empty mechanism list");
  return out;
}

// --- check -----------------------------------------------------------------

struct CheckArgs {
  CheckOptions opts;
  bool grad_only = false;
  bool list = false;
  std::string json_path;
  std::string manifest;
};

int run_check(const CheckArgs& a) {
  if (a.list) {
    for (const std::string& name : check_names()) std::cout << name << "\n";
    return kOk;
  }
  CheckOptions opts = a.opts;
  if (a.grad_only) opts.filter = opts.filter.empty() ? "grad." : opts.filter;
  const std::vector<CheckResult> results = run_checks(opts);
  if (results.empty()) throw UsageError("no check suite matches filter '" + opts.filter + "'");
  if (a.grad_only) {
    double worst = 0.0;
    for (const CheckResult& r : results) worst = std::max(worst, r.worst);
    std::cout << "grad-check seed " << opts.seed << ": max_rel_err " << std::scientific
              << std::setprecision(3) << worst << std::defaultfloat << "\n";
  }
  bool ok = true;
  std::size_t width = 5;
  for (const CheckResult& r : results) width = std::max(width, r.name.size());
  std::cout << std::left << std::setw(static_cast<int>(width + 2)) << "suite" << "result  detail\n";
  json rows = json::array();
  for (const CheckResult& r : results) {
    ok = ok && r.pass;
    std::cout << std::left << std::setw(static_cast<int>(width + 2)) << r.name
              << (r.pass ? "PASS    " : "FAIL    ") << r.detail << "\n";
    rows.push_back({{"name", r.name}, {"pass", r.pass}, {"worst", r.worst},
                    {"tolerance", r.tolerance}, {"detail", r.detail}});
  }
  std::vector<std::string> outputs;
  if (!a.json_path.empty()) {
    write_json(a.json_path, {{"schema", kCheckSchema}, {"seed", opts.seed}, {"suites", rows}});
    outputs.push_back(a.json_path);
  }
  json cfg = {{"filter", opts.filter}, {"instances", opts.instances}, {"grad", a.grad_only}};
  if (!a.manifest.empty()) {
    write_json(a.manifest, manifest("check", cfg, opts.seed, outputs));
  } else if (!a.json_path.empty()) {
    write_json(manifest_path(a.json_path), manifest("check", cfg, opts.seed, outputs));
  }
  if (!ok) {
    for (const CheckResult& r : results) {
      if (!r.pass) std::cerr << "failed: " << r.name << " (" << r.detail << ")\n";
    }
  }
  return ok ? kOk : kCheckFailed;
}

// --- bench -----------------------------------------------------------------

struct BenchArgs {
  std::string mechs = "mita";
  std::vector<std::size_t> seq_lens = {1024};
  std::size_t m = 256;
  std::size_t k = 256;
  std::size_t heads = 2;
  std::size_t dim = 128;
  BenchOptions opts;
  std::string csv;
};

int run_bench(const BenchArgs& a) {
  const std::vector<Mechanism> mechs = parse_mechanisms(a.mechs);
  std::ostringstream out;
  out << "# schema: " << kBenchSchema << "\n";
  out << "mech,N,D,heads,m,k,s,batch,tokens_per_s,flops,threads,reps\n";
  json rows = json::array();
  for (Mechanism mech : mechs) {
    for (std::size_t n : a.seq_lens) {
      const BenchRecord r = bench_attention(mech, n, a.dim, a.heads, config_for(mech, a.m, a.k), a.opts);
      const bool full = mech == Mechanism::kFull;
      out << mechanism_name(mech) << ',' << n << ',' << a.dim << ',' << a.heads << ','
          << (full ? 0 : r.cfg.m) << ',' << (full ? 0 : r.cfg.k) << ',' << (full ? 0 : r.cfg.s) << ','
          << r.batch << ',' << fixed(r.tokens_per_second, 1) << ',' << r.flops << ',' << r.threads
          << ',' << r.reps << "\n";
      std::cerr << mechanism_name(mech) << " N=" << n << " batch=" << r.batch << " "
                << fixed(r.tokens_per_second, 1) << " tok/s (median " << fixed(r.median_seconds, 4)
                << " s, cv " << fixed(r.cv, 3) << ")\n";
      rows.push_back({{"mech", mechanism_name(mech)}, {"N", n}, {"cv", r.cv},
                      {"median_seconds", r.median_seconds},
                      {"bytes_moved_estimate", r.bytes_moved_estimate}});
    }
  }
  if (a.csv.empty()) {
    std::cout << out.str();
    return kOk;
  }
  write_text(a.csv, out.str());
  json cfg = {{"mechs", a.mechs}, {"seq_lens", a.seq_lens}, {"m", a.m}, {"k", a.k},
              {"heads", a.heads}, {"dim", a.dim}, {"layers", a.opts.layers},
              {"reps", a.opts.reps}, {"warmup", a.opts.warmup},
              {"token_budget", a.opts.token_budget}, {"measurements", rows}};
  write_json(manifest_path(a.csv), manifest("bench", cfg, a.opts.seed, {a.csv}));
  return kOk;
}

// --- train -----------------------------------------------------------------

struct TrainArgs {
  TrainConfig cfg = recall_config();
  std::string mech = "full";
  std::string task = "recall";
  std::size_t m = 16;
  std::size_t k = 16;
  std::string out;
  std::string history;
  bool quiet = false;
};

std::string history_csv(const TrainHistory& h) {
  std::map<std::size_t, double> evals;
  for (const EvalPoint& e : h.evals) evals[e.step] = e.accuracy;
  std::ostringstream s;
  s << "# schema: " << kHistorySchema << "\n";
  s << "step,loss,eval_acc\n";
  for (std::size_t i = 0; i < h.loss.size(); ++i) {
    s << i + 1 << ',' << exact(h.loss[i]) << ',';
    if (auto it = evals.find(i + 1); it != evals.end()) s << exact(it->second);
    s << "\n";
  }
  return s.str();
}

int run_train(TrainArgs a) {
  TrainConfig& cfg = a.cfg;
  cfg.task.kind = parse_task(a.task);
  const Mechanism mech = parse_mechanism(a.mech);
  cfg.attn = AttentionSpec{mech, config_for(mech, a.m, a.k)};
  cfg.task.seed = cfg.seed;
  cfg.validate();
  if (a.out.empty()) throw UsageError("train: --out is required");
  if (a.history.empty()) a.history = a.out + ".history.csv";

  json config = {{"task", task_json(cfg.task)}, {"attention", attention_json(cfg.attn)},
                 {"layers", cfg.layers}, {"heads", cfg.heads}, {"dim", cfg.dim},
                 {"steps", cfg.steps}, {"batch", cfg.batch}, {"lr", cfg.lr},
                 {"beta1", cfg.beta1}, {"beta2", cfg.beta2}, {"eps", cfg.eps},
                 {"weight_decay", cfg.weight_decay}, {"clip_norm", cfg.clip_norm},
                 {"warmup_steps", cfg.warmup_steps}, {"cosine", cfg.cosine},
                 {"eval_every", cfg.eval_every}, {"eval_size", cfg.eval_size},
                 {"eval_seed", cfg.eval_seed}};
  const auto finish = [&](const TrainHistory& h) {
    write_text(a.history, history_csv(h));
    save_model(a.out, ModelFile{h.params, cfg.attn, cfg.task});
    write_json(manifest_path(a.out), manifest("train", config, cfg.seed, {a.out, a.history}));
  };
  const std::size_t report = std::max<std::size_t>(1, cfg.steps / 20);
  try {
    const TrainHistory h = train_run(cfg, [&](std::size_t step, double loss) {
      if (!a.quiet && ((step + 1) % report == 0 || step + 1 == cfg.steps)) {
        std::cerr << "step " << step + 1 << "/" << cfg.steps << " loss " << fixed(loss, 4) << "\n";
      }
    });
    finish(h);
    if (!h.evals.empty() && !a.quiet) {
      std::cerr << "final eval accuracy " << fixed(h.evals.back().accuracy, 4) << "\n";
    }
  } catch (const TrainDivergence& e) {
    write_text(a.history, history_csv(e.partial()));
    write_json(manifest_path(a.out), manifest("train", config, cfg.seed, {a.history}));
    throw;
  }
  return kOk;
}

// --- sweep -----------------------------------------------------------------

struct SweepArgs {
  std::string params;
  std::string grid;
  std::string json_path;
  std::uint64_t eval_seed = 1;
  std::size_t eval_size = 512;
};

json accuracy_json(const std::optional<double>& acc) {
  return acc ? json(*acc) : json(nullptr);
}

int run_sweep(const SweepArgs& a) {
  if (a.grid.empty()) throw UsageError("sweep: --grid is empty (expected e.g. --grid 16x16,32x32)");
  std::vector<std::pair<std::size_t, std::size_t>> grid;
  try {
    grid = parse_grid(a.grid);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const ModelFile model = load_model(a.params);
  const SweepResult r = mk_sweep(model.params, model.task, model.attn, grid, a.eval_seed, a.eval_size);
  json cells = json::array();
  for (const SweepCell& c : r.cells) {
    json cell = {{"m", c.m}, {"k", c.k}, {"acc", accuracy_json(c.accuracy)}};
    if (!c.accuracy) cell["skipped"] = c.skip_reason;
    cells.push_back(cell);
  }
  json ge = json::array();
  for (std::size_t i : r.cells_ge_99pct) ge.push_back({{"m", r.cells[i].m}, {"k", r.cells[i].k}});
  json out;
  out["schema"] = kSweepSchema;
  out["grid"] = cells;
  out["baseline"] = {{"mech", mechanism_name(model.attn.mech)}, {"m", r.baseline.m},
                     {"k", r.baseline.k}, {"acc", accuracy_json(r.baseline.accuracy)}};
  out["best"] = r.best ? json{{"m", r.cells[*r.best].m}, {"k", r.cells[*r.best].k}} : json(nullptr);
  out["cells_ge_99pct"] = ge;
  json cfg = {{"params", a.params}, {"grid", a.grid}, {"eval_seed", a.eval_seed},
              {"eval_size", a.eval_size}};
  if (a.json_path.empty()) {
    std::cout << out.dump(2) << "\n";
  } else {
    write_json(a.json_path, out);
    write_json(manifest_path(a.json_path), manifest("sweep", cfg, model.task.seed, {a.json_path}));
  }
  return kOk;
}

// --- diag ------------------------------------------------------------------

struct DiagArgs {
  std::string params;
  std::vector<std::string> extra_params;
  bool coverage = false;
  bool overlap = false;
  std::string cross;
  std::size_t m = 16;
  std::size_t k = 16;
  std::string json_path;
  std::uint64_t eval_seed = 1;
  std::size_t eval_size = 512;
  std::size_t diag_size = 64;
};

int run_diag(const DiagArgs& a) {
  if (!a.coverage && !a.overlap && a.cross.empty()) {
    throw UsageError("diag: choose at least one of --coverage, --overlap, --cross");
  }
  const ModelFile model = load_model(a.params);
  json out;
  out["schema"] = kDiagSchema;
  out["model"] = {{"params", a.params}, {"attention", attention_json(model.attn)},
                  {"task", task_json(model.task)}};
  if (a.coverage || a.overlap) {
    // Full-attention models are inspected through MiTA at (--m, --k).
    AttentionSpec probe = model.attn;
    if (probe.mech == Mechanism::kFull || probe.mech == Mechanism::kCompressionOnly) {
      probe = AttentionSpec{Mechanism::kMita, MitaConfig::full(a.m, a.k)};
    }
    const LayerDiagnostics d = model_diagnostics(model.params, model.task, probe, a.eval_seed, a.diag_size);
    out["inspected_with"] = attention_json(probe);
    if (a.coverage) out["coverage"] = d.coverage;
    if (a.overlap) out["miou"] = d.miou;
  }
  if (!a.cross.empty()) {
    std::vector<ModelFile> models = {model};
    for (const std::string& p : a.extra_params) models.push_back(load_model(p));
    std::vector<AttentionSpec> infer;
    for (Mechanism mech : parse_mechanisms(a.cross)) infer.push_back({mech, config_for(mech, a.m, a.k)});
    const CrossMatrix m = cross_mech_matrix(models, infer, model.task, a.eval_seed, a.eval_size);
    json rows = json::array();
    for (const auto& row : m.accuracy) {
      json r = json::array();
      for (const auto& cell : row) r.push_back(accuracy_json(cell));
      rows.push_back(r);
    }
    out["cross"] = {{"train", m.train_labels}, {"infer", m.infer_labels}, {"accuracy", rows}};
  }
  json cfg = {{"params", a.params}, {"extra_params", a.extra_params}, {"coverage", a.coverage},
              {"overlap", a.overlap}, {"cross", a.cross}, {"m", a.m}, {"k", a.k},
              {"eval_seed", a.eval_seed}, {"eval_size", a.eval_size}, {"diag_size", a.diag_size}};
  if (a.json_path.empty()) {
    std::cout << out.dump(2) << "\n";
  } else {
    write_json(a.json_path, out);
    write_json(manifest_path(a.json_path), manifest("diag", cfg, model.task.seed, {a.json_path}));
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MiTA attention: checks, benchmarks, training, sweeps and diagnostics"};
  app.require_subcommand(1);
  app.set_version_flag("--version", MITA_VERSION);
  int threads = 0;
  app.add_option("--threads", threads, "Worker threads (default: $MITA_THREADS or 1)")
      ->check(CLI::PositiveNumber);

  CheckArgs check;
  auto* c = app.add_subcommand("check", "Run equivalence, oracle and gradient suites");
  c->add_option("--seed", check.opts.seed, "Seed for random instances");
  c->add_option("--instances", check.opts.instances, "Random instances per suite")->check(CLI::PositiveNumber);
  c->add_option("--filter", check.opts.filter, "Only suites whose name contains this text");
  c->add_flag("--grad", check.grad_only, "Gradient checks only, with a max_rel_err summary");
  c->add_flag("--list", check.list, "List suite names and exit");
  c->add_option("--json", check.json_path, "Also write the results as JSON");
  c->add_option("--manifest", check.manifest, "Run manifest path");

  BenchArgs bench;
  auto* b = app.add_subcommand("bench", "Forward-pass throughput of a toy transformer");
  b->add_option("--mech", bench.mechs, "Mechanism or comma-separated list")->capture_default_str();
  b->add_option("--seq-len", bench.seq_lens, "Sequence lengths")->delimiter(',')->capture_default_str();
  b->add_option("--m", bench.m, "Landmark count")->capture_default_str();
  b->add_option("--k", bench.k, "Expert width")->capture_default_str();
  b->add_option("--heads", bench.heads, "Attention heads")->capture_default_str();
  b->add_option("--dim", bench.dim, "Model width")->capture_default_str();
  b->add_option("--layers", bench.opts.layers, "Blocks")->capture_default_str();
  b->add_option("--reps", bench.opts.reps, "Timed repetitions (>= 3)")->capture_default_str();
  b->add_option("--warmup", bench.opts.warmup, "Warmup runs (>= 1)")->capture_default_str();
  b->add_option("--token-budget", bench.opts.token_budget, "Max batch * N while tuning the batch")
      ->capture_default_str();
  b->add_option("--seed", bench.opts.seed, "Weight and input seed");
  b->add_option("--csv", bench.csv, "Output CSV path (stdout if omitted)");

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train a small transformer on a synthetic task");
  t->add_option("--mech", train.mech, "Attention mechanism")->capture_default_str();
  t->add_option("--task", train.task, "recall or copy")->capture_default_str();
  t->add_option("--n", train.cfg.task.seq_len, "Sequence length")->capture_default_str();
  t->add_option("--vocab", train.cfg.task.vocab, "Symbol alphabet size")->capture_default_str();
  t->add_option("--slots", train.cfg.task.query_slots, "Query slots per sequence")->capture_default_str();
  t->add_option("--m", train.m, "Landmark count")->capture_default_str();
  t->add_option("--k", train.k, "Expert width")->capture_default_str();
  t->add_option("--layers", train.cfg.layers, "Blocks")->capture_default_str();
  t->add_option("--heads", train.cfg.heads, "Attention heads")->capture_default_str();
  t->add_option("--dim", train.cfg.dim, "Model width")->capture_default_str();
  t->add_option("--steps", train.cfg.steps, "Optimizer steps")->capture_default_str();
  t->add_option("--batch", train.cfg.batch, "Sequences per step")->capture_default_str();
  t->add_option("--lr", train.cfg.lr, "Peak learning rate")->capture_default_str();
  t->add_option("--beta1", train.cfg.beta1)->capture_default_str();
  t->add_option("--beta2", train.cfg.beta2)->capture_default_str();
  t->add_option("--eps", train.cfg.eps)->capture_default_str();
  t->add_option("--weight-decay", train.cfg.weight_decay)->capture_default_str();
  t->add_option("--clip", train.cfg.clip_norm, "Global gradient-norm clip, 0 disables")->capture_default_str();
  t->add_option("--warmup", train.cfg.warmup_steps, "Linear warmup steps")->capture_default_str();
  t->add_flag("--cosine,!--no-cosine", train.cfg.cosine, "Cosine decay to zero");
  t->add_option("--eval-every", train.cfg.eval_every, "Steps between evals, 0 disables")->capture_default_str();
  t->add_option("--eval-size", train.cfg.eval_size, "Eval sequences")->capture_default_str();
  t->add_option("--eval-seed", train.cfg.eval_seed)->capture_default_str();
  t->add_option("--seed", train.cfg.seed, "Init and data seed")->capture_default_str();
  t->add_option("--out", train.out, "Params output path")->required();
  t->add_option("--history", train.history, "History CSV path (default <out>.history.csv)");
  t->add_flag("--quiet", train.quiet, "No progress output");

  SweepArgs sweep;
  auto* s = app.add_subcommand("sweep", "Accuracy over a grid of (m, k)");
  s->add_option("--params", sweep.params, "Params file")->required();
  s->add_option("--grid", sweep.grid, "Cells like 16x16,32x32")->required();
  s->add_option("--json", sweep.json_path, "Output JSON path (stdout if omitted)");
  s->add_option("--eval-seed", sweep.eval_seed)->capture_default_str();
  s->add_option("--eval-size", sweep.eval_size)->capture_default_str();

  DiagArgs diag;
  auto* d = app.add_subcommand("diag", "Coverage, overlap and cross-mechanism diagnostics");
  d->add_option("--params", diag.params, "Params file")->required();
  d->add_option("--cross-params", diag.extra_params, "Further models for the cross matrix")->delimiter(',');
  d->add_flag("--coverage", diag.coverage, "Per-layer coverage ratio");
  d->add_flag("--overlap", diag.overlap, "Per-layer expert/query overlap mIoU");
  d->add_option("--cross", diag.cross, "Inference mechanisms, e.g. full,mita");
  d->add_option("--m", diag.m, "m for MiTA inference mechanisms")->capture_default_str();
  d->add_option("--k", diag.k, "k for MiTA inference mechanisms")->capture_default_str();
  d->add_option("--json", diag.json_path, "Output JSON path (stdout if omitted)");
  d->add_option("--eval-seed", diag.eval_seed)->capture_default_str();
  d->add_option("--eval-size", diag.eval_size)->capture_default_str();
  d->add_option("--diag-size", diag.diag_size, "Sequences for coverage/overlap")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (threads > 0) set_thread_count(threads);
    if (c->parsed()) return run_check(check);
    if (b->parsed()) return run_bench(bench);
    if (t->parsed()) return run_train(train);
    if (s->parsed()) return run_sweep(sweep);
    if (d->parsed()) return run_diag(diag);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}
