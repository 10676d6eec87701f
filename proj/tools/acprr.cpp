// Copyright 2026 The ACP Rerank Authors
// SPDX-License-Identifier: Apache-2.0

// acprr: synthetic data, training, re-ranking, sweeps and benchmarks.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "acp/pipeline.hpp"
#include "acp/synthetic.hpp"
#include "acp/train.hpp"

namespace {

namespace fs = std::filesystem;
using acp::ExitCode;

/// Flags shared by rerank, sweep and bench.
struct RerankOptions {
  std::string query;
  std::string gallery;
  std::string checkpoint;
  std::size_t k1 = 25;
  std::size_t k2 = 6;
  double alpha = 3.0;
  double lambda = 0.3;
  std::string metric = "cosine";
  std::optional<bool> renormalize;
  std::string space = "baseline";
  std::size_t threads = 1;
  std::uint64_t memory_budget = 2ull << 30;
};

void add_rerank_flags(CLI::App& app, RerankOptions& o) {
  app.add_option("--query", o.query, "Query embeddings (.acpe)")->required();
  app.add_option("--gallery", o.gallery, "Gallery embeddings (.acpe)")->required();
  app.add_option("--checkpoint", o.checkpoint, "Trained ACP checkpoint");
  app.add_option("--k1", o.k1, "Neighborhood size")->capture_default_str();
  app.add_option("--k2", o.k2, "Refinement length (acp) or k2 (kreciprocal)")
      ->capture_default_str();
  app.add_option("--alpha", o.alpha, "Power of alpha query expansion")
      ->capture_default_str();
  app.add_option("--lambda", o.lambda, "Original distance weight (kreciprocal)")
      ->capture_default_str();
  app.add_option("--metric", o.metric, "euclidean or cosine")->capture_default_str();
  app.add_option("--renormalize", o.renormalize,
                 "L2-normalize expanded features (default: on for cosine)");
  app.add_option("--space", o.space, "ACP expansion space: baseline or fused")
      ->capture_default_str();
  app.add_option("--threads", o.threads)->capture_default_str();
  app.add_option("--memory-budget", o.memory_budget,
                 "Byte budget of k-reciprocal re-ranking (accepts KB/MB/GB)")
      ->transform(CLI::AsSizeValue(false));
}

struct Inputs {
  acp::data::EmbeddingSet query;
  acp::data::EmbeddingSet gallery;
  std::optional<acp::model::ACPModel<float>> model;
  acp::pipeline::MethodParams params;
};

Inputs load_inputs(const RerankOptions& o, bool need_model) {
  Inputs in{acp::data::load_set(o.query), acp::data::load_set(o.gallery), {}, {}};
  auto& p = in.params;
  p.k1 = o.k1;
  p.k2 = o.k2;
  p.alpha = o.alpha;
  p.lambda = o.lambda;
  p.metric = acp::ranking::parse_metric(o.metric);
  p.renormalize = o.renormalize.value_or(p.metric == acp::ranking::Metric::kCosine);
  p.space = acp::pipeline::parse_space(o.space);
  p.threads = o.threads;
  p.memory_budget_bytes = o.memory_budget;
  if (!o.checkpoint.empty()) {
    in.model.emplace(acp::model::load_checkpoint(o.checkpoint));
    if (in.model->config().block_dims != in.query.block_dims) {
      throw acp::DimensionError("checkpoint block layout does not match the data");
    }
  } else if (need_model) {
    throw acp::ConfigError("the acp method needs --checkpoint");
  }
  return in;
}

void write_text(const std::string& text, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << text;
    if (!text.empty() && text.back() != '\n') std::cout << '\n';
    return;
  }
  std::ofstream out(path);
  if (!out) throw acp::IoError("cannot write " + path);
  out << text;
  if (!text.empty() && text.back() != '\n') out << '\n';
  if (!out) throw acp::IoError("write failed for " + path);
}

// --- gen -----------------------------------------------------------------

struct GenOptions {
  acp::data::SyntheticConfig cfg;
  std::string out = ".";
};

void run_gen(const GenOptions& o) {
  const auto split = acp::data::generate_synthetic(o.cfg);
  fs::create_directories(o.out);
  for (const auto* set : {&split.train, &split.query, &split.gallery}) {
    const fs::path stem = fs::path(o.out) / acp::data::role_name(set->role);
    acp::data::save_set(*set, stem.string() + ".acpe");
    acp::data::write_manifest(*set, stem.string() + ".jsonl");
    std::fprintf(stderr, "wrote %s.acpe (%zu records)\n", stem.c_str(), set->size());
  }
}

// --- train ---------------------------------------------------------------

struct TrainOptions {
  std::string data;
  std::string config;
  std::string checkpoint;
  std::string loss_csv;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  bool quiet = false;
};

void run_train(const TrainOptions& o) {
  const auto set = acp::data::load_set(o.data);
  acp::train::RunConfig rc{acp::model::ACPConfig::desk(set.block_dims),
                           acp::train::TrainConfig::desk()};
  if (!o.config.empty()) rc = acp::train::load_run_config(o.config, set.block_dims);
  if (o.seed) rc.train.seed = *o.seed;
  if (o.threads) rc.train.threads = *o.threads;

  acp::model::ACPModel<float> model(rc.model, rc.train.seed);
  const auto result = acp::train::train(
      model, set, rc.train, [&](const acp::train::EpochStats& e) {
        if (!o.quiet) {
          std::fprintf(stderr, "epoch %3zu  lr %.2e  loss %.5f  holdout %.5f\n",
                       e.epoch + 1, e.lr, e.mean_loss, e.holdout_loss);
        }
      });
  acp::model::save_checkpoint(model, o.checkpoint);
  acp::train::write_loss_csv(result.curve,
                             o.loss_csv.empty() ? o.checkpoint + ".loss.csv" : o.loss_csv);
  std::fprintf(stderr,
               "best epoch %zu  holdout loss %.5f  accuracy %.4f (majority %.4f)\n",
               result.best_epoch + 1, result.best_holdout_loss,
               result.holdout.accuracy, result.holdout.majority_accuracy);
}

// --- rerank --------------------------------------------------------------

struct RunOptions {
  RerankOptions common;
  std::string method = "acp";
  std::string ranking;
  std::size_t depth = 100;
  std::string report;
  bool per_query = false;
};

void run_rerank(const RunOptions& o) {
  const auto method = acp::pipeline::parse_method(o.method);
  auto in = load_inputs(o.common, method == acp::pipeline::Method::kAcp);
  if (in.model) in.params.model = &*in.model;
  const auto r = acp::pipeline::run_method(method, in.query, in.gallery, in.params);
  if (!o.ranking.empty()) {
    acp::pipeline::write_ranking(r, in.query, in.gallery, o.depth, o.ranking);
  }
  write_text(acp::pipeline::result_json(r, in.params, o.per_query), o.report);
}

// --- sweep ---------------------------------------------------------------

struct SweepOptions {
  RerankOptions common;
  std::string method = "aqe";
  std::string parameter = "k1";
  std::vector<std::size_t> values;
  std::string out;
};

void run_sweep(const SweepOptions& o) {
  const auto method = acp::pipeline::parse_method(o.method);
  const auto parameter = acp::pipeline::parse_sweep_parameter(o.parameter);
  auto in = load_inputs(o.common, method == acp::pipeline::Method::kAcp);
  if (in.model) in.params.model = &*in.model;
  const auto rows = acp::pipeline::sweep(parameter, o.values, method, in.query,
                                         in.gallery, in.params);
  write_text(acp::pipeline::sweep_csv(parameter, rows), o.out);
}

// --- bench ---------------------------------------------------------------

struct BenchOptions {
  RerankOptions common;
  std::vector<std::string> methods;
  std::string out;
};

void run_bench(const BenchOptions& o) {
  std::vector<acp::pipeline::Method> methods;
  for (const auto& name : o.methods) methods.push_back(acp::pipeline::parse_method(name));
  if (methods.empty()) methods = acp::pipeline::all_methods();
  bool need_model = false;
  for (auto m : methods) need_model |= m == acp::pipeline::Method::kAcp;
  auto in = load_inputs(o.common, need_model);
  if (in.model) in.params.model = &*in.model;
  std::vector<acp::pipeline::MethodResult> results;
  for (auto m : methods) {
    results.push_back(acp::pipeline::run_method(m, in.query, in.gallery, in.params));
    results.back().distance = acp::Matrix();
    std::fprintf(stderr, "%-12s mAP %.4f -> %.4f  %.3fs\n", acp::pipeline::method_name(m),
                 results.back().before.map, results.back().after.map,
                 results.back().seconds);
  }
  write_text(acp::pipeline::bench_json(results, in.params), o.out);
}

int exit_with(ExitCode code, const std::string& message) {
  std::fprintf(stderr, "acprr: %s\n", message.c_str());
  return static_cast<int>(code);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive contextual perception re-ranking for retrieval embeddings"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "acprr 0.1.0");

  GenOptions gen;
  auto* gen_cmd = app.add_subcommand("gen", "Write a synthetic train/query/gallery split");
  gen_cmd->add_option("--out", gen.out, "Output directory")->capture_default_str();
  gen_cmd->add_option("--seed", gen.cfg.seed)->capture_default_str();
  gen_cmd->add_option("--train-ids", gen.cfg.train_ids)->capture_default_str();
  gen_cmd->add_option("--test-ids", gen.cfg.test_ids)->capture_default_str();
  gen_cmd->add_option("--imgs-per-id", gen.cfg.imgs_per_id)->capture_default_str();
  gen_cmd->add_option("--cameras", gen.cfg.cameras)->capture_default_str();
  gen_cmd->add_option("--sigma", gen.cfg.sigma)->capture_default_str();
  gen_cmd->add_option("--distractors", gen.cfg.distractor_rate,
                      "Extra gallery distractors as a fraction of the gallery")
      ->capture_default_str();
  gen_cmd->add_option("--dims", gen.cfg.block_dims, "Block dimensions")
      ->delimiter(',')
      ->capture_default_str();

  TrainOptions tr;
  auto* train_cmd = app.add_subcommand("train", "Train an ACP model");
  train_cmd->add_option("--data", tr.data, "Training embeddings (.acpe)")->required();
  train_cmd->add_option("--config", tr.config, "key = value run config");
  train_cmd->add_option("--checkpoint", tr.checkpoint, "Output checkpoint")->required();
  train_cmd->add_option("--loss-csv", tr.loss_csv,
                        "Loss curve (default: <checkpoint>.loss.csv)");
  train_cmd->add_option("--seed", tr.seed, "Overrides the config seed");
  train_cmd->add_option("--threads", tr.threads, "Overrides the config threads");
  train_cmd->add_flag("--quiet", tr.quiet);

  RunOptions run;
  auto* rerank_cmd = app.add_subcommand("rerank", "Re-rank a query/gallery split");
  add_rerank_flags(*rerank_cmd, run.common);
  rerank_cmd->add_option("--method", run.method,
                         "baseline, aqe, alphaqe, kreciprocal or acp")
      ->capture_default_str();
  rerank_cmd->add_option("--ranking", run.ranking, "Top-depth ranking (JSON lines)");
  rerank_cmd->add_option("--depth", run.depth)->capture_default_str();
  rerank_cmd->add_option("--report", run.report, "Evaluation report (default: stdout)");
  rerank_cmd->add_flag("--per-query", run.per_query, "Include per-query AP");

  SweepOptions sw;
  auto* sweep_cmd = app.add_subcommand("sweep", "Metric versus k1 or k2 as CSV");
  add_rerank_flags(*sweep_cmd, sw.common);
  sweep_cmd->add_option("--method", sw.method)->capture_default_str();
  sweep_cmd->add_option("--param", sw.parameter, "k1 or k2")->capture_default_str();
  sweep_cmd->add_option("--values", sw.values, "Comma separated values")
      ->delimiter(',')
      ->required();
  sweep_cmd->add_option("--out", sw.out, "CSV path (default: stdout)");

  BenchOptions bench;
  auto* bench_cmd = app.add_subcommand("bench", "Run every method and report time and memory");
  add_rerank_flags(*bench_cmd, bench.common);
  bench_cmd->add_option("--methods", bench.methods, "Subset of methods (default: all)")
      ->delimiter(',');
  bench_cmd->add_option("--out", bench.out, "JSON path (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::kConfig);
  }

  try {
    if (gen_cmd->parsed()) run_gen(gen);
    if (train_cmd->parsed()) run_train(tr);
    if (rerank_cmd->parsed()) run_rerank(run);
    if (sweep_cmd->parsed()) run_sweep(sw);
    if (bench_cmd->parsed()) run_bench(bench);
  } catch (const acp::Error& e) {
    return exit_with(e.exit_code(), e.what());
  } catch (const std::bad_alloc&) {
    return exit_with(ExitCode::kResource, "out of memory");
  } catch (const std::exception& e) {
    return exit_with(ExitCode::kFailure, e.what());
  }
  return 0;
}
