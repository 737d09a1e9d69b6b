#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "surfpool/training.hpp"

#ifndef SURFPOOL_GIT_DESC
#define SURFPOOL_GIT_DESC "unknown"
#endif

namespace surfpool {

ExperimentKind experiment_kind_from_name(const std::string& name) {
  if (name == "pooling_comparison") return ExperimentKind::pooling_comparison;
  if (name == "size_study") return ExperimentKind::size_study;
  if (name == "parcel_regression") return ExperimentKind::parcel_regression;
  if (name == "classify") return ExperimentKind::classify;
  if (name == "regress") return ExperimentKind::regress;
  throw ArgumentError("unknown experiment kind '" + name + "'");
}

namespace {

std::string experiment_kind_name(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::pooling_comparison: return "pooling_comparison";
    case ExperimentKind::size_study: return "size_study";
    case ExperimentKind::parcel_regression: return "parcel_regression";
    case ExperimentKind::classify: return "classify";
    case ExperimentKind::regress: return "regress";
  }
  return "unknown";
}

std::pair<double, double> mean_std(const std::vector<double>& values) {
  if (values.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= values.size();
  if (values.size() < 2) return {mean, 0.0};
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  return {mean, std::sqrt(var / (values.size() - 1))};
}

std::vector<SurfaceMesh> load_all(const DatasetManifest& manifest) {
  std::vector<SurfaceMesh> meshes;
  meshes.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) meshes.push_back(load_mesh(manifest.resolve(e)));
  return meshes;
}

std::uint64_t mix(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Embeds every mesh and aligns it to the first train-split mesh.
PreparedDataset prepare_in_memory(const DatasetManifest& manifest,
                                  const std::vector<SurfaceMesh>& meshes,
                                  const ModelConfig& cfg) {
  int ref_idx = -1;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i)
    if (manifest.entries[i].split == "train") {
      ref_idx = static_cast<int>(i);
      break;
    }
  if (ref_idx < 0) throw ArgumentError("prepare_in_memory: manifest has no training split");

  SpectralEmbedding ref = embed_mesh(meshes[ref_idx], cfg.embedding_dim);
  PreparedDataset out;
  out.field_names = manifest.field_names;
  out.task = manifest.task;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    const auto& entry = manifest.entries[i];
    SpectralEmbedding aligned;
    if (static_cast<int>(i) == ref_idx) {
      aligned = ref;
      aligned.aligned = true;  // the reference defines the common frame
    } else {
      aligned = align_to_reference(embed_mesh(meshes[i], cfg.embedding_dim), ref).first;
    }
    const std::string stem = std::filesystem::path(entry.path).stem().string();
    out.meshes.push_back(
        prepare_mesh(meshes[i], aligned, manifest.field_names, cfg, entry.target, stem));
    const int idx = static_cast<int>(i);
    if (entry.split == "train")
      out.train.push_back(idx);
    else if (entry.split == "val")
      out.val.push_back(idx);
    else
      out.test.push_back(idx);
  }
  return out;
}

TrainConfig make_train_config(const ExperimentConfig& cfg, std::uint64_t seed) {
  TrainConfig tc;
  tc.epochs = cfg.epochs;
  tc.learning_rate = cfg.learning_rate;
  tc.seed = seed;
  tc.eval_every = cfg.eval_every;
  tc.early_stop_patience = cfg.early_stop_patience;
  return tc;
}

void write_report_files(const ExperimentReport& report, const ExperimentConfig& cfg,
                        const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::ofstream tsv(out_dir / "report.tsv");
  if (!tsv) throw Error("run_experiment: cannot write report.tsv");
  tsv << "condition";
  for (const auto& col : report.columns) tsv << "\t" << col << "_mean\t" << col << "_std";
  tsv << "\n";
  char buf[32];
  for (const auto& row : report.table) {
    tsv << row.front().label;
    for (const auto& cell : row) {
      std::snprintf(buf, sizeof(buf), "%.17g", cell.mean);
      tsv << "\t" << buf;
      std::snprintf(buf, sizeof(buf), "%.17g", cell.stddev);
      tsv << "\t" << buf;
    }
    tsv << "\n";
  }

  nlohmann::ordered_json j;
  j["kind"] = report.kind;
  j["git"] = SURFPOOL_GIT_DESC;
  j["config"] = {{"count", cfg.count},
                 {"n_min", cfg.n_range.first},
                 {"n_max", cfg.n_range.second},
                 {"seeds", cfg.seeds},
                 {"base_seed", cfg.base_seed},
                 {"noise", cfg.noise},
                 {"delta", cfg.delta},
                 {"parcels", cfg.parcels},
                 {"epochs", cfg.epochs},
                 {"learning_rate", cfg.learning_rate},
                 {"alpha", cfg.alpha},
                 {"model", nlohmann::json::parse(model_config_to_json(cfg.model))}};
  j["results"] = nlohmann::ordered_json::array();
  for (const auto& row : report.table) {
    nlohmann::ordered_json jrow;
    jrow["condition"] = row.front().label;
    for (std::size_t c = 0; c < report.columns.size(); ++c) {
      jrow[report.columns[c]] = {
          {"mean", row[c].mean}, {"std", row[c].stddev}, {"values", row[c].values}};
    }
    j["results"].push_back(std::move(jrow));
  }
  std::ofstream js(out_dir / "run.json");
  if (!js) throw Error("run_experiment: cannot write run.json");
  js << j.dump(2) << "\n";
}

ExperimentRow make_row(std::string label, std::vector<double> values) {
  ExperimentRow row;
  row.label = std::move(label);
  auto [m, s] = mean_std(values);
  row.mean = m;
  row.stddev = s;
  row.values = std::move(values);
  return row;
}

}  // namespace

ExperimentReport run_experiment(ExperimentKind kind, const ExperimentConfig& cfg,
                                const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  ExperimentReport report;
  report.kind = experiment_kind_name(kind);

  DatasetOptions opts;
  opts.delta = cfg.delta;
  opts.noise = cfg.noise;
  opts.parcels = cfg.parcels;

  ModelConfig base = cfg.model;
  base.alpha = cfg.alpha;
  base.kernel.dim = base.embedding_dim;

  switch (kind) {
    case ExperimentKind::pooling_comparison: {
      base.task = ModelConfig::Task::classify;
      base.n_outputs = 2;
      const auto manifest = gen_labeled_dataset(DatasetTask::two_region_class, cfg.count,
                                                cfg.n_range, cfg.base_seed, opts,
                                                out_dir / "data");
      const auto meshes = load_all(manifest);
      const PreparedDataset data = prepare_in_memory(manifest, meshes, base);
      int max_parcel = 0;
      for (const auto& pm : data.meshes)
        for (int p : pm.parcels) max_parcel = std::max(max_parcel, p);

      report.columns = {"accuracy"};
      const ModelConfig::Pooling modes[] = {
          ModelConfig::Pooling::global_average, ModelConfig::Pooling::fixed_parcellation,
          ModelConfig::Pooling::spectral_kmeans, ModelConfig::Pooling::learnable};
      for (auto mode : modes) {
        ModelConfig mc = base;
        mc.pooling = mode;
        if (mode == ModelConfig::Pooling::fixed_parcellation) mc.n_parcels = max_parcel + 1;
        std::vector<double> acc;
        for (int s = 0; s < cfg.seeds; ++s) {
          auto res = train(data, mc, make_train_config(cfg, mix(cfg.base_seed, 100 + s)));
          acc.push_back(res.report.final_metric);
          save_history(res.report, out_dir / pooling_name(mode) /
                                       ("history_seed" + std::to_string(s) + ".tsv"));
        }
        report.table.push_back({make_row(pooling_name(mode), acc)});
      }
      break;
    }

    case ExperimentKind::size_study: {
      base.task = ModelConfig::Task::classify;
      base.n_outputs = 2;
      base.pooling = ModelConfig::Pooling::learnable;
      const auto manifest = gen_labeled_dataset(DatasetTask::two_region_class, cfg.count,
                                                cfg.n_range, cfg.base_seed, opts,
                                                out_dir / "data");
      const auto full_meshes = load_all(manifest);
      const PreparedDataset full_data = prepare_in_memory(manifest, full_meshes, base);

      report.columns = {"accuracy_subsampled", "accuracy_full"};
      for (int budget : cfg.size_budgets) {
        std::vector<SurfaceMesh> meshes;
        meshes.reserve(full_meshes.size());
        for (std::size_t i = 0; i < full_meshes.size(); ++i) {
          const int n = full_meshes[i].n_vertices();
          if (budget > 0 && budget < n)
            meshes.push_back(subsample_mesh(full_meshes[i], budget, mix(cfg.base_seed, 7 * i + budget)));
          else
            meshes.push_back(full_meshes[i]);
        }
        const PreparedDataset data = prepare_in_memory(manifest, meshes, base);
        std::vector<double> acc_sub, acc_full;
        for (int s = 0; s < cfg.seeds; ++s) {
          auto res = train(data, base, make_train_config(cfg, mix(cfg.base_seed, 200 + s)));
          acc_sub.push_back(res.report.final_metric);
          acc_full.push_back(evaluate(res.state, base, full_data, full_data.test));
        }
        const std::string label = budget > 0 ? std::to_string(budget) : "full";
        report.table.push_back({make_row(label, acc_sub), make_row(label, acc_full)});
      }
      break;
    }

    case ExperimentKind::parcel_regression: {
      base.task = ModelConfig::Task::regress;
      base.n_outputs = cfg.parcels;
      base.pooling = ModelConfig::Pooling::learnable;
      const auto manifest = gen_labeled_dataset(DatasetTask::parcel_size_reg, cfg.count,
                                                cfg.n_range, cfg.base_seed, opts,
                                                out_dir / "data");
      const auto meshes = load_all(manifest);
      const PreparedDataset data = prepare_in_memory(manifest, meshes, base);

      report.columns = {"ami_epoch50", "ami_final", "mae"};
      for (int s = 0; s < cfg.seeds; ++s) {
        auto res = train(data, base, make_train_config(cfg, mix(cfg.base_seed, 300 + s)));
        double ami50 = 0.0, ami_final = 0.0;
        for (const auto& [epoch, value] : res.report.val_ami) {
          if (epoch <= 50 || ami50 == 0.0) ami50 = value;
          ami_final = value;
        }
        save_history(res.report,
                     out_dir / ("ami_curve_seed" + std::to_string(s) + ".tsv"));
        report.table.push_back({make_row("seed" + std::to_string(s), {ami50}),
                                make_row("seed" + std::to_string(s), {ami_final}),
                                make_row("seed" + std::to_string(s),
                                         {res.report.final_metric})});
      }
      break;
    }

    case ExperimentKind::classify: {
      base.task = ModelConfig::Task::classify;
      base.n_outputs = 2;
      base.pooling = ModelConfig::Pooling::learnable;
      const auto manifest = gen_labeled_dataset(DatasetTask::two_region_class, cfg.count,
                                                cfg.n_range, cfg.base_seed, opts,
                                                out_dir / "data");
      const PreparedDataset data = prepare_in_memory(manifest, load_all(manifest), base);
      report.columns = {"accuracy"};
      std::vector<double> acc;
      for (int s = 0; s < cfg.seeds; ++s) {
        auto res = train(data, base, make_train_config(cfg, mix(cfg.base_seed, 400 + s)));
        acc.push_back(res.report.final_metric);
      }
      report.table.push_back({make_row("learnable", acc)});
      break;
    }

    case ExperimentKind::regress: {
      base.task = ModelConfig::Task::regress;
      base.n_outputs = cfg.parcels;
      base.pooling = ModelConfig::Pooling::learnable;
      const auto manifest = gen_labeled_dataset(DatasetTask::parcel_size_reg, cfg.count,
                                                cfg.n_range, cfg.base_seed, opts,
                                                out_dir / "data");
      const PreparedDataset data = prepare_in_memory(manifest, load_all(manifest), base);
      report.columns = {"mae"};
      std::vector<double> mae;
      for (int s = 0; s < cfg.seeds; ++s) {
        auto res = train(data, base, make_train_config(cfg, mix(cfg.base_seed, 500 + s)));
        mae.push_back(res.report.final_metric);
      }
      report.table.push_back({make_row("learnable", mae)});
      break;
    }
  }

  write_report_files(report, cfg, out_dir);
  return report;
}

}  // namespace surfpool
