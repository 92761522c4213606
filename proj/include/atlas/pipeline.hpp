#pragma once

// Config-driven orchestration shared by the command line tool and the
// end-to-end tests. Every step reads its inputs from, and writes its outputs
// under, one output directory:
//
//   data/<split>.jsonl, data/fixture_<strategy>.jsonl
//   body.pvc
//   runs/<run>/step-<n>.pvc          one file per checkpoint stage
//   ledger.json
//   grid/<split>/curves/<a>__<b>__<split>.csv
//   grid/<split>/<metric>.csv
//   grid/<split>/stage-<s>/cg.csv    per-stage matrices for dynamics
//   reports/*.json, planes/*, figures/*.svg

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "atlas/basin.hpp"
#include "atlas/checkpoint.hpp"
#include "atlas/connectivity.hpp"
#include "atlas/geometry.hpp"
#include "atlas/parallel.hpp"
#include "atlas/svg.hpp"
#include "atlas/tasks.hpp"
#include "atlas/trainer.hpp"

namespace atlas {

namespace fs = std::filesystem;

struct SweepConfig {
  TaskSpec task;
  ModelConfig model;
  TrainConfig train;
  std::size_t n_runs = 24;
  std::uint64_t seed_base = 0;
  std::uint64_t body_seed = 7;
  std::size_t heuristic_fixtures = 0;
  std::size_t generalizing_fixtures = 0;
  // pairwise grid
  SplitId split = SplitId::id_val;
  std::size_t resolution = 11;
  std::size_t n_samples = 512;
  std::uint64_t eval_seed = 0;
  std::vector<MetricTag> metrics{MetricTag::cg};
  std::size_t workers = 0;  // 0 = available parallelism
  // clustering
  std::size_t k = 2;
  std::uint64_t cluster_seed = 0;
  // geometry
  SharpnessConfig sharpness;
  ChainFitConfig curve;
  std::size_t curve_points = 21;
  std::size_t plane_resolution = 21;
  std::pair<double, double> plane_x{-0.5, 1.5};
  std::pair<double, double> plane_y{-0.5, 1.5};
  fs::path out = "atlas-out";

  void validate() const {
    validate_compat(model, task);
    train.validate();
    require(n_runs >= 2, "sweep: n_runs must be >= 2");
    require(heuristic_fixtures + generalizing_fixtures <= n_runs, "sweep: more fixtures than runs");
    require(resolution >= 2, "sweep: resolution must be >= 2");
    require(n_samples >= 1, "sweep: n_samples must be >= 1");
    require(!metrics.empty(), "sweep: at least one metric");
    require(k >= 2 && k < n_runs, "sweep: need 2 <= k < n_runs");
    require(curve_points >= 2 && plane_resolution >= 2, "sweep: curve_points and plane_resolution must be >= 2");
    require(!out.empty(), "sweep: output directory must be set");
  }

  std::size_t effective_workers() const { return workers == 0 ? default_workers() : workers; }
};

inline nlohmann::json to_json(const SweepConfig& c) {
  std::vector<std::string> metrics;
  for (auto m : c.metrics) metrics.push_back(to_string(m));
  return {{"task", to_json(c.task)},
          {"model", to_json(c.model)},
          {"train", to_json(c.train)},
          {"sweep",
           {{"n_runs", c.n_runs},
            {"seed_base", c.seed_base},
            {"body_seed", c.body_seed},
            {"fixtures", {{"heuristic", c.heuristic_fixtures}, {"generalizing", c.generalizing_fixtures}}}}},
          {"grid",
           {{"split", to_string(c.split)},
            {"resolution", c.resolution},
            {"n_samples", c.n_samples},
            {"eval_seed", c.eval_seed},
            {"metrics", metrics},
            {"workers", c.workers}}},
          {"cluster", {{"k", c.k}, {"seed", c.cluster_seed}}},
          {"sharpness", to_json(c.sharpness)},
          {"curve",
           {{"k_bends", c.curve.k_bends},
            {"fit_steps", c.curve.fit_steps},
            {"fit_lr", c.curve.fit_lr},
            {"batch_size", c.curve.batch_size},
            {"jitter", c.curve.jitter},
            {"seed", c.curve.seed},
            {"points", c.curve_points}}},
          {"plane",
           {{"resolution", c.plane_resolution},
            {"x_range", {c.plane_x.first, c.plane_x.second}},
            {"y_range", {c.plane_y.first, c.plane_y.second}}}},
          {"out", c.out.string()}};
}

inline SweepConfig sweep_config_from_json(const nlohmann::json& j) {
  SweepConfig c;
  try {
    if (j.contains("task")) c.task = task_spec_from_json(j.at("task"));
    if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
    if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
    if (j.contains("sweep")) {
      const auto& s = j.at("sweep");
      c.n_runs = s.value("n_runs", c.n_runs);
      c.seed_base = s.value("seed_base", c.seed_base);
      c.body_seed = s.value("body_seed", c.body_seed);
      if (s.contains("fixtures")) {
        c.heuristic_fixtures = s.at("fixtures").value("heuristic", c.heuristic_fixtures);
        c.generalizing_fixtures = s.at("fixtures").value("generalizing", c.generalizing_fixtures);
      }
    }
    if (j.contains("grid")) {
      const auto& g = j.at("grid");
      c.split = split_from_string(g.value("split", to_string(c.split)));
      c.resolution = g.value("resolution", c.resolution);
      c.n_samples = g.value("n_samples", c.n_samples);
      c.eval_seed = g.value("eval_seed", c.eval_seed);
      c.workers = g.value("workers", c.workers);
      if (g.contains("metrics")) {
        c.metrics.clear();
        for (const auto& m : g.at("metrics")) c.metrics.push_back(metric_from_string(m.get<std::string>()));
      }
    }
    if (j.contains("cluster")) {
      c.k = j.at("cluster").value("k", c.k);
      c.cluster_seed = j.at("cluster").value("seed", c.cluster_seed);
    }
    if (j.contains("sharpness")) c.sharpness = sharpness_config_from_json(j.at("sharpness"));
    if (j.contains("curve")) {
      const auto& v = j.at("curve");
      c.curve.k_bends = v.value("k_bends", c.curve.k_bends);
      c.curve.fit_steps = v.value("fit_steps", c.curve.fit_steps);
      c.curve.fit_lr = v.value("fit_lr", c.curve.fit_lr);
      c.curve.batch_size = v.value("batch_size", c.curve.batch_size);
      c.curve.jitter = v.value("jitter", c.curve.jitter);
      c.curve.seed = v.value("seed", c.curve.seed);
      c.curve_points = v.value("points", c.curve_points);
      c.curve.validate();
    }
    if (j.contains("plane")) {
      const auto& p = j.at("plane");
      c.plane_resolution = p.value("resolution", c.plane_resolution);
      if (p.contains("x_range")) c.plane_x = {p.at("x_range").at(0).get<double>(), p.at("x_range").at(1).get<double>()};
      if (p.contains("y_range")) c.plane_y = {p.at("y_range").at(0).get<double>(), p.at("y_range").at(1).get<double>()};
    }
    if (j.contains("out")) c.out = j.at("out").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

inline std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw RuntimeFailure("cannot read " + p.string());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

inline void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeFailure("cannot write " + p.string());
  out << text;
  if (!out) throw RuntimeFailure("write failed for " + p.string());
}

inline void write_json(const fs::path& p, const nlohmann::json& j) { write_text(p, j.dump(2) + "\n"); }

inline nlohmann::json read_json(const fs::path& p) {
  try {
    return nlohmann::json::parse(read_text(p));
  } catch (const nlohmann::json::exception& e) {
    throw RuntimeFailure("malformed JSON in " + p.string() + ": " + e.what());
  }
}

inline SweepConfig load_sweep_config(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw ValidationError("config file not found: " + p.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text(p));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("config: " + std::string(e.what()));
  }
  return sweep_config_from_json(j);
}

// ---------------------------------------------------------------------------
// Paths

inline std::string run_id(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "run-%03zu", i);
  return buf;
}

inline fs::path ledger_path(const SweepConfig& c) { return c.out / "ledger.json"; }
inline fs::path body_path(const SweepConfig& c) { return c.out / "body.pvc"; }
inline fs::path grid_dir(const SweepConfig& c, SplitId s) { return c.out / "grid" / to_string(s); }
inline fs::path reports_dir(const SweepConfig& c) { return c.out / "reports"; }
inline fs::path matrix_path(const SweepConfig& c, SplitId s, MetricTag m) {
  return grid_dir(c, s) / (to_string(m) + ".csv");
}

// ---------------------------------------------------------------------------
// Data, pretraining, sweep

struct Splits {
  DatasetSplit train, id_val, diagnostic;

  const DatasetSplit& get(SplitId s) const {
    switch (s) {
      case SplitId::train: return train;
      case SplitId::id_val: return id_val;
      case SplitId::diagnostic: return diagnostic;
    }
    return train;
  }
};

inline Splits make_splits(const TaskSpec& t) {
  return {gen_split(t, SplitId::train, t.seed), gen_split(t, SplitId::id_val, t.seed),
          gen_split(t, SplitId::diagnostic, t.seed)};
}

inline void gen_data(const SweepConfig& c) {
  c.validate();
  const auto s = make_splits(c.task);
  for (auto id : {SplitId::train, SplitId::id_val, SplitId::diagnostic})
    write_jsonl(s.get(id), c.out / "data" / (to_string(id) + ".jsonl"));
  for (auto f : {FixtureStrategy::heuristic, FixtureStrategy::generalizing})
    write_jsonl(gen_forced_fixture(c.task, f, c.task.seed), c.out / "data" / ("fixture_" + to_string(f) + ".jsonl"));
}

inline Checkpoint run_pretrain(const SweepConfig& c) {
  c.validate();
  auto body = pretrain_body(c.model, c.train, c.task, c.body_seed);
  save_checkpoint(body, body_path(c));
  return body;
}

/// Fixture assignment of run i: the first heuristic_fixtures runs, then the
/// generalizing ones, then unforced runs.
inline std::string fixture_of(const SweepConfig& c, std::size_t i) {
  if (i < c.heuristic_fixtures) return "heuristic";
  if (i < c.heuristic_fixtures + c.generalizing_fixtures) return "generalizing";
  return "";
}

struct SweepSummary {
  std::vector<RunRecord> records;
  std::size_t failed = 0;
};

inline std::vector<RunRecord> read_ledger(const SweepConfig& c) {
  const auto p = ledger_path(c);
  if (!fs::exists(p)) throw RuntimeFailure("missing ledger " + p.string() + " (run sweep first)");
  std::vector<RunRecord> out;
  try {
    const auto ledger = read_json(p);
    for (const auto& r : ledger.at("runs")) out.push_back(run_record_from_json(r));
  } catch (const nlohmann::json::exception& e) {
    throw RuntimeFailure("malformed ledger: " + std::string(e.what()));
  }
  return out;
}

/// Pretrains the shared body and finetunes n_runs models (head_seed = data_seed
/// = seed_base + i). Failed runs are recorded; more than 10% failures throws.
inline SweepSummary run_sweep(const SweepConfig& c) {
  c.validate();
  gen_data(c);
  const auto body = run_pretrain(c);
  const auto splits = make_splits(c.task);
  std::optional<DatasetSplit> heur, gen;
  if (c.heuristic_fixtures) heur = gen_forced_fixture(c.task, FixtureStrategy::heuristic, c.task.seed);
  if (c.generalizing_fixtures) gen = gen_forced_fixture(c.task, FixtureStrategy::generalizing, c.task.seed);

  SweepSummary sum;
  for (std::size_t i = 0; i < c.n_runs; ++i) {
    const std::string fixture = fixture_of(c, i);
    const DatasetSplit& train = fixture == "heuristic" ? *heur : fixture == "generalizing" ? *gen : splits.train;
    FinetuneRequest req{run_id(i), c.seed_base + i, c.seed_base + i, fixture};
    RunRecord rec;
    try {
      auto res = finetune(body, req, c.model, c.train, c.task, train);
      rec = res.record;
      for (const auto& ck : res.checkpoints) {
        const fs::path rel = fs::path("runs") / req.run_id / ("step-" + std::to_string(ck.meta.step) + ".pvc");
        save_checkpoint(ck, c.out / rel);
        rec.checkpoint_paths.push_back(rel.generic_string());
      }
      rec.metrics = measure(res.checkpoints.back().params, c.model, splits.id_val, splits.diagnostic,
                            c.train.eval_sample_size, c.train.eval_seed);
    } catch (const RuntimeFailure& e) {
      rec.run_id = req.run_id;
      rec.head_seed = req.head_seed;
      rec.data_seed = req.data_seed;
      rec.body_seed = c.body_seed;
      rec.fixture = fixture;
      rec.failed = true;
      rec.failure = e.what();
      ++sum.failed;
    }
    sum.records.push_back(std::move(rec));
  }
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& r : sum.records) runs.push_back(to_json(r));
  nlohmann::json cfg = to_json(c);
  cfg.erase("out");
  cfg["grid"].erase("workers");
  write_json(ledger_path(c), {{"config", cfg}, {"runs", runs}});
  if (10 * sum.failed > c.n_runs)
    throw RuntimeFailure("sweep: " + std::to_string(sum.failed) + " of " + std::to_string(c.n_runs) + " runs failed");
  return sum;
}

// ---------------------------------------------------------------------------
// Loading checkpoints

struct LoadedRuns {
  std::vector<std::string> ids;
  std::vector<RunRecord> records;
  std::vector<ParamVector> params;
};

/// Final checkpoints (or checkpoint `stage` when given) of every successful run.
inline LoadedRuns load_runs(const SweepConfig& c, std::optional<std::size_t> stage = std::nullopt) {
  LoadedRuns out;
  for (auto& r : read_ledger(c)) {
    if (r.failed) continue;
    require(!r.checkpoint_paths.empty(), "ledger: run " + r.run_id + " has no checkpoints");
    const std::size_t s = stage ? *stage : r.checkpoint_paths.size() - 1;
    if (s >= r.checkpoint_paths.size())
      throw RuntimeFailure("run " + r.run_id + " has no checkpoint stage " + std::to_string(s));
    const fs::path p = c.out / r.checkpoint_paths[s];
    if (!fs::exists(p)) throw RuntimeFailure("missing checkpoint " + p.string());
    out.params.push_back(load_checkpoint(p).params);
    out.ids.push_back(r.run_id);
    out.records.push_back(std::move(r));
  }
  if (out.ids.size() < 2) throw RuntimeFailure("need at least 2 successful runs");
  return out;
}

inline CurveMeta curve_meta(const SweepConfig& c, std::size_t n_samples) {
  return {to_string(c.split), n_samples, c.eval_seed, "", ""};
}

// ---------------------------------------------------------------------------
// Grid

/// Pairwise curves and matrices for every configured metric. Curves are shared
/// between curve metrics; euclidean needs none.
inline std::map<MetricTag, DistanceMatrix> run_grid(const SweepConfig& c, std::optional<std::size_t> stage = std::nullopt) {
  c.validate();
  const auto runs = load_runs(c, stage);
  const auto splits = make_splits(c.task);
  const auto& split = splits.get(c.split);
  const std::size_t n = std::min(c.n_samples, split.size());
  const Evaluator eval(c.model, split, n, c.eval_seed);
  fs::path dir = grid_dir(c, c.split);
  if (stage) dir /= "stage-" + std::to_string(*stage);

  std::map<MetricTag, DistanceMatrix> out;
  std::optional<PairwiseResult> curves;
  for (auto m : c.metrics) {
    if (m == MetricTag::euclidean) {
      out[m] = pairwise_matrix(runs.params, runs.ids, m, c.resolution, eval, c.effective_workers()).matrix;
      continue;
    }
    if (!curves) {
      curves = pairwise_matrix(runs.params, runs.ids, MetricTag::cg, c.resolution, eval, c.effective_workers(),
                               curve_meta(c, n));
      for (const auto& pc : curves->curves)
        write_text(dir / "curves" / curve_file_name(runs.ids[pc.i], runs.ids[pc.j], to_string(c.split)),
                   curve_to_csv(pc.curve));
    }
    DistanceMatrix d = curves->matrix;
    d.metric = m;
    for (const auto& pc : curves->curves) d(pc.i, pc.j) = d(pc.j, pc.i) = curve_metric(m, pc.curve);
    out[m] = std::move(d);
  }
  for (auto& [m, d] : out) {
    d.meta["n_samples"] = n;
    d.meta["eval_seed"] = c.eval_seed;
    d.meta["split"] = to_string(c.split);
    write_text(dir / (to_string(m) + ".csv"), matrix_to_csv(d));
  }
  return out;
}

inline DistanceMatrix read_matrix(const fs::path& p) {
  if (!fs::exists(p)) throw RuntimeFailure("missing matrix " + p.string() + " (run grid first)");
  return matrix_from_csv(read_text(p));
}

// ---------------------------------------------------------------------------
// Analysis commands

inline std::map<std::string, RunRecord> records_by_id(const SweepConfig& c) {
  std::map<std::string, RunRecord> m;
  for (auto& r : read_ledger(c)) m[r.run_id] = std::move(r);
  return m;
}

inline double diagnostic_accuracy_of(const std::map<std::string, RunRecord>& recs, const std::string& id) {
  const auto it = recs.find(id);
  if (it == recs.end() || !it->second.metrics) throw RuntimeFailure("no metrics recorded for run " + id);
  return it->second.metrics->diagnostic_accuracy;
}

/// Cluster report plus the per-model table used by later figures.
inline nlohmann::json run_cluster(const SweepConfig& c, MetricTag metric) {
  const auto d = read_matrix(matrix_path(c, c.split, metric));
  const auto rep = spectral_cluster(d, c.k, c.cluster_seed);
  const auto recs = records_by_id(c);
  nlohmann::json j = to_json(rep);
  j["metric"] = to_string(metric);
  j["split"] = to_string(c.split);
  std::vector<double> acc;
  for (std::size_t i = 0; i < rep.ids.size(); ++i) {
    acc.push_back(diagnostic_accuracy_of(recs, rep.ids[i]));
    j["models"][i]["diagnostic_accuracy"] = acc.back();
    j["models"][i]["fixture"] = recs.at(rep.ids[i]).fixture;
  }
  const auto r = pearson(rep.features, acc);
  j["pearson_feature_diagnostic"] = r ? nlohmann::json(*r) : nlohmann::json(nullptr);
  if (!rep.degenerate) {
    const auto sep = separation(d, rep.labels);
    j["within_median"] = sep.within_median;
    j["between_median"] = sep.between_median;
  }
  write_json(reports_dir(c) / ("cluster_" + to_string(metric) + ".json"), j);
  return j;
}

/// Table-style statistics of diagnostic accuracy over the two clusters.
inline nlohmann::json run_stats(const SweepConfig& c, MetricTag metric) {
  const fs::path p = reports_dir(c) / ("cluster_" + to_string(metric) + ".json");
  if (!fs::exists(p)) throw RuntimeFailure("missing " + p.string() + " (run cluster first)");
  const auto rep = cluster_report_from_json(read_json(p));
  require(!rep.degenerate, "stats: cluster report is degenerate (single cluster)");
  const auto recs = records_by_id(c);
  std::vector<int> labels;
  std::vector<double> values;
  for (std::size_t i = 0; i < rep.ids.size(); ++i) {
    if (rep.labels[i] > 1) continue;
    labels.push_back(rep.labels[i]);
    values.push_back(diagnostic_accuracy_of(recs, rep.ids[i]));
  }
  nlohmann::json j = to_json(cluster_stats(labels, values));
  j["value"] = "diagnostic_accuracy";
  j["metric"] = to_string(metric);
  write_json(reports_dir(c) / "stats.json", j);
  return j;
}

/// Stats from a hand-written file: {"labels": [...], "values": [...]}.
inline nlohmann::json stats_from_file(const fs::path& p) {
  const auto j = read_json(p);
  try {
    const auto labels = j.at("labels").get<std::vector<int>>();
    const auto values = j.at("values").get<std::vector<double>>();
    return to_json(cluster_stats(labels, values));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("stats input: " + std::string(e.what()));
  }
}

inline std::size_t stage_count(const SweepConfig& c) {
  std::size_t stages = 0;
  for (const auto& r : read_ledger(c))
    if (!r.failed) stages = stages ? std::min(stages, r.checkpoint_paths.size()) : r.checkpoint_paths.size();
  return stages;
}

/// Per-stage CG grids (written under grid/<split>/stage-<s>/) and the dynamics report.
inline nlohmann::json run_dynamics(const SweepConfig& c) {
  const std::size_t stages = stage_count(c);
  require(stages >= 1, "dynamics: no checkpoint stages recorded");
  SweepConfig sc = c;
  sc.metrics = {MetricTag::cg};
  std::vector<DistanceMatrix> mats;
  std::vector<std::string> names;
  for (std::size_t s = 0; s < stages; ++s) {
    const fs::path p = grid_dir(c, c.split) / ("stage-" + std::to_string(s)) / "cg.csv";
    mats.push_back(fs::exists(p) ? read_matrix(p) : run_grid(sc, s).at(MetricTag::cg));
    names.push_back("stage-" + std::to_string(s));
  }
  const auto rep = dynamics(mats, names, c.k, c.cluster_seed);
  nlohmann::json j = to_json(rep);
  const auto recs = records_by_id(c);
  for (std::size_t i = 0; i < rep.ids.size(); ++i) j["runs"][i]["fixture"] = recs.at(rep.ids[i]).fixture;
  write_json(reports_dir(c) / "dynamics.json", j);
  return j;
}

inline nlohmann::json run_sharpness(const SweepConfig& c) {
  const auto runs = load_runs(c);
  const auto splits = make_splits(c.task);
  const auto& split = splits.get(c.split);
  const std::size_t n = std::min(c.sharpness.eval_samples, split.size());
  Rng rng(derive_seed(c.eval_seed, tag_of("eval.sample")));
  std::vector<Example> picked;
  for (auto i : sample_without_replacement(split.size(), n, rng)) picked.push_back(split.examples[i]);
  const ModelObjective obj(c.model, to_batch(picked, c.model.max_len));
  nlohmann::json models = nlohmann::json::array();
  for (std::size_t i = 0; i < runs.ids.size(); ++i) {
    const auto r = epsilon_sharpness(runs.params[i], obj, c.sharpness);
    models.push_back({{"id", runs.ids[i]}, {"sharpness", r.sharpness}, {"base_loss", r.base_loss},
                      {"max_loss", r.max_loss}});
  }
  nlohmann::json j = {{"config", to_json(c.sharpness)}, {"split", to_string(c.split)},
                      {"eval_samples_used", n}, {"models", models}};
  write_json(reports_dir(c) / "sharpness.json", j);
  return j;
}

inline std::size_t index_of_run(const LoadedRuns& runs, const std::string& id) {
  const auto it = std::find(runs.ids.begin(), runs.ids.end(), id);
  if (it == runs.ids.end()) throw ValidationError("unknown run id '" + id + "'");
  return static_cast<std::size_t>(it - runs.ids.begin());
}

inline nlohmann::json run_plane(const SweepConfig& c, const std::array<std::string, 3>& ids) {
  const auto runs = load_runs(c);
  const auto splits = make_splits(c.task);
  const auto& split = splits.get(c.split);
  const std::size_t n = std::min(c.n_samples, split.size());
  const Evaluator eval(c.model, split, n, c.eval_seed);
  const auto basis = plane_basis(runs.params[index_of_run(runs, ids[0])], runs.params[index_of_run(runs, ids[1])],
                                 runs.params[index_of_run(runs, ids[2])]);
  const auto grid = plane_loss_surface(basis, c.plane_x, c.plane_y, c.plane_resolution, eval, curve_meta(c, n));
  const std::string stem = ids[0] + "__" + ids[1] + "__" + ids[2];
  write_text(c.out / "planes" / (stem + ".csv"), plane_to_csv(grid));
  const auto side = plane_sidecar(grid, ids);
  write_json(c.out / "planes" / (stem + ".json"), side);
  return side;
}

inline nlohmann::json run_curve(const SweepConfig& c, const std::string& a, const std::string& b) {
  const auto runs = load_runs(c);
  const auto splits = make_splits(c.task);
  const auto& split = splits.get(c.split);
  const std::size_t n = std::min(c.n_samples, split.size());
  const Evaluator eval(c.model, split, n, c.eval_seed);
  std::vector<Example> picked;
  {
    Rng rng(derive_seed(c.eval_seed, tag_of("eval.sample")));
    for (auto i : sample_without_replacement(split.size(), n, rng)) picked.push_back(split.examples[i]);
  }
  const ModelObjective obj(c.model, to_batch(picked, c.model.max_len));
  const auto& pa = runs.params[index_of_run(runs, a)];
  const auto& pb = runs.params[index_of_run(runs, b)];
  const auto chain = fit_low_loss_curve(pa, pb, obj, c.curve);
  CurveMeta meta = curve_meta(c, n);
  meta.id_a = a;
  meta.id_b = b;
  const auto along = eval_chain_path(chain, c.curve_points, eval, meta);
  const auto linear = eval_linear_path(pb, pa, c.curve_points, eval, meta);
  const std::string stem = a + "__" + b + "__" + to_string(c.split);
  write_text(c.out / "curves" / (stem + "__chain.csv"), curve_to_csv(along));
  write_text(c.out / "curves" / (stem + "__linear.csv"), curve_to_csv(linear));
  auto j = chain_report(chain, along, linear);
  j["a"] = a;
  j["b"] = b;
  write_json(reports_dir(c) / ("curve_" + a + "__" + b + ".json"), j);
  return j;
}

/// Accuracy of every run on each split, and their correlation matrix.
inline nlohmann::json run_correlate(const SweepConfig& c) {
  const auto runs = load_runs(c);
  const auto splits = make_splits(c.task);
  std::vector<std::string> names;
  std::vector<Evaluator> evals;
  for (auto id : {SplitId::train, SplitId::id_val, SplitId::diagnostic}) {
    const auto& s = splits.get(id);
    names.push_back(to_string(id));
    evals.emplace_back(c.model, s, std::min(c.n_samples, s.size()), c.eval_seed);
  }
  std::vector<std::vector<double>> acc;
  nlohmann::json models = nlohmann::json::array();
  for (std::size_t i = 0; i < runs.ids.size(); ++i) {
    std::vector<double> row;
    for (const auto& e : evals) row.push_back(e(runs.params[i]).accuracy);
    models.push_back({{"id", runs.ids[i]}, {"accuracy", row}});
    acc.push_back(std::move(row));
  }
  nlohmann::json j = to_json(correlation_matrix(acc, names));
  j["models"] = models;
  write_json(reports_dir(c) / "correlation.json", j);
  return j;
}

// ---------------------------------------------------------------------------
// Figures

/// Heatmaps sorted by diagnostic accuracy, cluster-coloured histogram of the
/// centroid feature, feature-vs-accuracy scatter, and any plane grids present.
inline std::vector<fs::path> run_plot(const SweepConfig& c) {
  std::vector<fs::path> written;
  const auto recs = records_by_id(c);
  const fs::path figs = c.out / "figures";
  for (auto m : c.metrics) {
    const fs::path mp = matrix_path(c, c.split, m);
    if (!fs::exists(mp)) continue;
    const auto d = read_matrix(mp);
    std::vector<double> key;
    for (const auto& id : d.ids) key.push_back(diagnostic_accuracy_of(recs, id));
    const fs::path out = figs / ("heatmap_" + to_string(m) + "_" + to_string(c.split) + ".svg");
    write_text(out, svg::heatmap(d, key, to_string(m) + " on " + to_string(c.split) + ", sorted by diagnostic accuracy"));
    written.push_back(out);
  }
  for (auto m : c.metrics) {
    const fs::path cp = reports_dir(c) / ("cluster_" + to_string(m) + ".json");
    if (!fs::exists(cp)) continue;
    const auto rep = cluster_report_from_json(read_json(cp));
    std::vector<double> acc;
    for (const auto& id : rep.ids) acc.push_back(diagnostic_accuracy_of(recs, id));
    fs::path out = figs / ("histogram_" + to_string(m) + ".svg");
    write_text(out, svg::histogram(acc, rep.labels, 10, "diagnostic accuracy", "diagnostic accuracy by cluster"));
    written.push_back(out);
    out = figs / ("scatter_" + to_string(m) + ".svg");
    write_text(out, svg::scatter_fit(rep.features, acc, rep.labels, "centroid feature", "diagnostic accuracy",
                                     "basin membership vs diagnostic accuracy"));
    written.push_back(out);
  }
  const fs::path curves = grid_dir(c, c.split) / "curves";
  if (fs::exists(curves)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(curves)) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.size() > 6) files.resize(6);
    std::vector<LossCurve> cs;
    std::vector<std::string> labels;
    for (const auto& f : files) {
      cs.push_back(curve_from_csv(read_text(f)));
      labels.push_back(f.stem().string());
    }
    if (!cs.empty()) {
      const fs::path out = figs / "curves.svg";
      write_text(out, svg::curve_panel(cs, labels, "loss and accuracy along linear paths"));
      written.push_back(out);
    }
  }
  const fs::path planes = c.out / "planes";
  if (fs::exists(planes)) {
    std::vector<fs::path> sides;
    for (const auto& e : fs::directory_iterator(planes))
      if (e.path().extension() == ".json") sides.push_back(e.path());
    std::sort(sides.begin(), sides.end());
    for (const auto& side : sides) {
      const auto meta = read_json(side);
      PlaneGrid g;
      g.scale_unit = meta.at("scale_unit").get<double>();
      std::array<std::string, 3> ids;
      for (std::size_t a = 0; a < 3; ++a) {
        g.anchors[a] = {meta.at("anchors")[a].at("x").get<double>(), meta.at("anchors")[a].at("y").get<double>()};
        ids[a] = meta.at("anchors")[a].at("id").get<std::string>();
      }
      const std::size_t res = meta.at("resolution").get<std::size_t>();
      g.xs = linear_grid(meta.at("x_range")[0].get<double>(), meta.at("x_range")[1].get<double>(), res);
      g.ys = linear_grid(meta.at("y_range")[0].get<double>(), meta.at("y_range")[1].get<double>(), res);
      std::istringstream in(read_text(fs::path(side).replace_extension(".csv")));
      std::string line;
      std::getline(in, line);
      while (std::getline(in, line)) g.losses.push_back(std::stod(line.substr(line.rfind(',') + 1)));
      require(g.losses.size() == res * res, "plane csv: wrong number of rows");
      const fs::path out = figs / ("plane_" + side.stem().string() + ".svg");
      write_text(out, svg::plane(g, ids, "loss on the plane through " + ids[0] + ", " + ids[1] + ", " + ids[2]));
      written.push_back(out);
    }
  }
  return written;
}

}  // namespace atlas
