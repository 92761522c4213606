// atlas: command line driver for sweeps, pairwise grids, basin reports and figures.
//
// Exit codes: 0 success, 1 validation error, 2 runtime failure.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "atlas/pipeline.hpp"

namespace {

struct Overrides {
  std::string config;
  std::string out;
  std::optional<std::size_t> workers;
  std::string metric;
  std::string split;
  std::optional<std::size_t> resolution;
  std::optional<std::size_t> samples;
  std::optional<std::uint64_t> eval_seed;
  std::optional<std::size_t> k;
  std::optional<std::uint64_t> seed;
};

atlas::SweepConfig resolve(const Overrides& o) {
  atlas::SweepConfig c = o.config.empty() ? atlas::SweepConfig{} : atlas::load_sweep_config(o.config);
  if (!o.out.empty()) c.out = o.out;
  if (const char* env = std::getenv("ATLAS_OUT"); env && *env) c.out = env;
  if (o.workers) c.workers = *o.workers;
  if (!o.metric.empty()) c.metrics = {atlas::metric_from_string(o.metric)};
  if (!o.split.empty()) c.split = atlas::split_from_string(o.split);
  if (o.resolution) c.resolution = *o.resolution;
  if (o.samples) c.n_samples = *o.samples;
  if (o.eval_seed) c.eval_seed = *o.eval_seed;
  if (o.k) c.k = *o.k;
  if (o.seed) {
    c.cluster_seed = *o.seed;
    c.curve.seed = *o.seed;
    c.sharpness.seed = *o.seed;
  }
  c.validate();
  return c;
}

void print(const nlohmann::json& j) { std::cout << j.dump(2) << "\n"; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Loss-landscape basins of small sentence-pair classifiers"};
  app.require_subcommand(1);
  app.fallthrough();

  Overrides o;
  app.add_option("--config", o.config, "JSON config file");
  app.add_option("--out", o.out, "output directory (ATLAS_OUT overrides)");
  app.add_option("--workers", o.workers, "worker threads for the grid");
  app.add_option("--metric", o.metric, "cg | bh | auc | euclidean");
  app.add_option("--split", o.split, "train | id_val | diagnostic");
  app.add_option("--resolution", o.resolution, "points per interpolation path");
  app.add_option("--samples", o.samples, "evaluation sample size");
  app.add_option("--eval-seed", o.eval_seed, "seed of the evaluation sample");
  app.add_option("--k", o.k, "number of clusters");
  app.add_option("--seed", o.seed, "seed for clustering, curve fitting and sharpness");

  auto* gen_data = app.add_subcommand("gen-data", "write train, id_val, diagnostic and fixture splits");
  auto* pretrain = app.add_subcommand("pretrain", "train the shared body");
  auto* sweep = app.add_subcommand("sweep", "pretrain and finetune N runs, write the ledger");
  auto* grid = app.add_subcommand("grid", "pairwise interpolation curves and distance matrices");
  auto* cluster = app.add_subcommand("cluster", "spectral clustering of a distance matrix");
  auto* stats = app.add_subcommand("stats", "cluster statistics of diagnostic accuracy");
  std::string stats_input;
  stats->add_option("--input", stats_input, "JSON file with labels and values instead of sweep outputs");
  auto* dyn = app.add_subcommand("dynamics", "cluster every checkpoint stage and align labels");
  auto* sharp = app.add_subcommand("sharpness", "epsilon-sharpness of every run");
  auto* plane = app.add_subcommand("plane", "loss surface on the plane through three runs");
  std::vector<std::string> plane_ids;
  plane->add_option("--ids", plane_ids, "three run ids")->expected(3);
  auto* curve = app.add_subcommand("curve", "fit a segmented low-loss curve between two runs");
  std::vector<std::string> curve_ids;
  curve->add_option("--pair", curve_ids, "two run ids")->expected(2);
  auto* correlate = app.add_subcommand("correlate", "accuracy correlations across splits");
  auto* plot = app.add_subcommand("plot", "render SVG figures from existing outputs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (stats->parsed() && !stats_input.empty()) {
      print(atlas::stats_from_file(stats_input));
      return 0;
    }
    const auto c = resolve(o);
    if (gen_data->parsed()) {
      atlas::gen_data(c);
      print({{"data", (c.out / "data").string()}});
    } else if (pretrain->parsed()) {
      const auto body = atlas::run_pretrain(c);
      print({{"body", atlas::body_path(c).string()}, {"steps", body.meta.step}});
    } else if (sweep->parsed()) {
      const auto s = atlas::run_sweep(c);
      print({{"ledger", atlas::ledger_path(c).string()}, {"runs", s.records.size()}, {"failed", s.failed}});
    } else if (grid->parsed()) {
      const auto mats = atlas::run_grid(c);
      nlohmann::json j = nlohmann::json::object();
      for (const auto& [m, d] : mats) j[atlas::to_string(m)] = atlas::matrix_path(c, c.split, m).string();
      print(j);
    } else if (cluster->parsed()) {
      const auto j = atlas::run_cluster(c, c.metrics.front());
      print({{"cluster_sizes", j.at("cluster_sizes")}, {"sigma", j.at("sigma")},
             {"pearson_feature_diagnostic", j.at("pearson_feature_diagnostic")}});
    } else if (stats->parsed()) {
      print(atlas::run_stats(c, c.metrics.front()));
    } else if (dyn->parsed()) {
      const auto j = atlas::run_dynamics(c);
      print({{"stages", j.at("stages").size()}, {"report", (atlas::reports_dir(c) / "dynamics.json").string()}});
    } else if (sharp->parsed()) {
      print(atlas::run_sharpness(c));
    } else if (plane->parsed()) {
      if (plane_ids.empty()) {
        const auto recs = atlas::read_ledger(c);
        atlas::require(recs.size() >= 3, "plane: need at least 3 runs");
        plane_ids = {recs.front().run_id, recs[recs.size() / 2].run_id, recs.back().run_id};
      }
      print(atlas::run_plane(c, {plane_ids[0], plane_ids[1], plane_ids[2]}));
    } else if (curve->parsed()) {
      if (curve_ids.empty()) {
        const auto recs = atlas::read_ledger(c);
        curve_ids = {recs.front().run_id, recs.back().run_id};
      }
      print(atlas::run_curve(c, curve_ids[0], curve_ids[1]));
    } else if (correlate->parsed()) {
      print(atlas::run_correlate(c));
    } else if (plot->parsed()) {
      nlohmann::json files = nlohmann::json::array();
      for (const auto& p : atlas::run_plot(c)) files.push_back(p.string());
      print({{"figures", files}});
    }
    return 0;
  } catch (const atlas::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << "\n";
    return 2;
  }
}
