#include "surfpool/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "surfpool/training.hpp"

#ifndef SURFPOOL_GIT_DESC
#define SURFPOOL_GIT_DESC "unknown"
#endif

namespace surfpool::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

fs::path prepare_out_dir(const std::string& out, bool force) {
  fs::path dir(out);
  if (fs::exists(dir) && !fs::is_empty(dir) && !force)
    throw ArgumentError("output directory '" + out + "' is not empty (use --force to overwrite)");
  fs::create_directories(dir);
  return dir;
}

void write_json_file(const fs::path& path, const ordered_json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

void write_run_json(const fs::path& dir, const std::string& command,
                    const ordered_json& settings, const ordered_json& results) {
  ordered_json j;
  j["format_version"] = 1;
  j["command"] = command;
  j["git"] = SURFPOOL_GIT_DESC;
  j["settings"] = settings;
  j["results"] = results;
  write_json_file(dir / "run.json", j);
}

void check_known_keys(const json& j, const std::set<std::string>& allowed,
                      const std::string& context) {
  for (const auto& item : j.items())
    if (!allowed.count(item.key()))
      throw ArgumentError("config: unknown key '" + item.key() + "' in " + context);
}

const std::set<std::string> kModelKeys = {
    "input_channels", "block1_features", "block1_clusters", "block2_features",
    "block2_clusters", "fc1_width",       "n_outputs",       "k_neighbors",
    "embedding_dim",   "alpha",           "leaky_slope",     "kernel",
    "bspline_grid",    "gaussian_kernels", "task",           "pooling",
    "n_parcels",       "kmeans_seed"};
const std::set<std::string> kTrainKeys = {"epochs",     "learning_rate", "adam_beta1",
                                          "adam_beta2", "adam_eps",      "seed",
                                          "eval_every", "early_stop_patience"};

struct FileConfig {
  json model = json::object();
  json train = json::object();
};

FileConfig load_config_file(const std::string& path) {
  FileConfig fc;
  if (path.empty()) return fc;
  std::ifstream in(path);
  if (!in) throw ParseError(path + ": cannot open config file");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  check_known_keys(j, {"model", "train"}, "top level");
  if (j.contains("model")) {
    check_known_keys(j["model"], kModelKeys, "\"model\"");
    fc.model = j["model"];
  }
  if (j.contains("train")) {
    check_known_keys(j["train"], kTrainKeys, "\"train\"");
    fc.train = j["train"];
  }
  return fc;
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig tc;
  tc.epochs = j.value("epochs", tc.epochs);
  tc.learning_rate = j.value("learning_rate", tc.learning_rate);
  tc.adam_beta1 = j.value("adam_beta1", tc.adam_beta1);
  tc.adam_beta2 = j.value("adam_beta2", tc.adam_beta2);
  tc.adam_eps = j.value("adam_eps", tc.adam_eps);
  tc.seed = j.value("seed", tc.seed);
  tc.eval_every = j.value("eval_every", tc.eval_every);
  tc.early_stop_patience = j.value("early_stop_patience", tc.early_stop_patience);
  return tc;
}

ordered_json train_config_to_json(const TrainConfig& tc) {
  ordered_json j;
  j["epochs"] = tc.epochs;
  j["learning_rate"] = tc.learning_rate;
  j["adam_beta1"] = tc.adam_beta1;
  j["adam_beta2"] = tc.adam_beta2;
  j["adam_eps"] = tc.adam_eps;
  j["seed"] = tc.seed;
  j["eval_every"] = tc.eval_every;
  j["early_stop_patience"] = tc.early_stop_patience;
  return j;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string stem_of(const std::string& rel_path) {
  return fs::path(rel_path).stem().string();
}

/// Derives data-dependent config fields (input channels, embedding dim,
/// output count, parcel count) from the manifest and one embedding header.
void derive_from_data(ModelConfig& mc, const DatasetManifest& manifest,
                      const fs::path& embeddings_dir, bool n_outputs_given) {
  if (manifest.entries.empty()) throw ArgumentError("manifest has no entries");
  const SpectralEmbedding probe =
      load_embedding(embeddings_dir / (stem_of(manifest.entries[0].path) + ".emb"));
  mc.embedding_dim = probe.d;
  mc.kernel.dim = probe.d;
  mc.input_channels = probe.d + static_cast<int>(manifest.field_names.size());
  if (!n_outputs_given) {
    if (mc.task == ModelConfig::Task::classify) {
      double max_cls = 1.0;
      for (const auto& e : manifest.entries) max_cls = std::max(max_cls, e.target.at(0));
      mc.n_outputs = static_cast<int>(max_cls) + 1;
    } else {
      mc.n_outputs = static_cast<int>(manifest.entries[0].target.size());
    }
  }
}

int derive_n_parcels(const PreparedDataset& data) {
  int max_parcel = -1;
  for (const auto& pm : data.meshes)
    for (int p : pm.parcels) max_parcel = std::max(max_parcel, p);
  if (max_parcel < 0)
    throw ArgumentError("fixed_parcellation pooling requires parcel labels in the dataset");
  return max_parcel + 1;
}

void write_predictions(const fs::path& path, const std::vector<Prediction>& preds) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  if (preds.empty()) return;
  out << "mesh";
  for (std::size_t c = 0; c < preds[0].target.size(); ++c) out << "\ttarget_" << c;
  for (std::size_t c = 0; c < preds[0].output.size(); ++c) out << "\toutput_" << c;
  out << "\n";
  for (const auto& p : preds) {
    out << p.id;
    for (double t : p.target) out << "\t" << fmt(t);
    for (double o : p.output) out << "\t" << fmt(o);
    out << "\n";
  }
}

// --- Subcommand implementations -------------------------------------------------

struct GenArgs {
  std::string task = "two_region_class";
  int count = 20;
  int n_min = 120;
  int n_max = 200;
  std::uint64_t seed = 1;
  std::string out;
  double noise = 0.2;
  double delta = 1.0;
  int parcels = 8;
  double region_frac = 0.15;
  bool force = false;
};

void cmd_gen_synthetic(const GenArgs& a) {
  const fs::path dir = prepare_out_dir(a.out, a.force);
  DatasetOptions opts;
  opts.noise = a.noise;
  opts.delta = a.delta;
  opts.parcels = a.parcels;
  opts.region_frac = a.region_frac;
  const DatasetTask task = a.task == "two_region_class" ? DatasetTask::two_region_class
                                                        : DatasetTask::parcel_size_reg;
  const auto manifest =
      gen_labeled_dataset(task, a.count, {a.n_min, a.n_max}, a.seed, opts, dir);

  int n_train = 0, n_val = 0, n_test = 0;
  for (const auto& e : manifest.entries) {
    if (e.split == "train") ++n_train;
    else if (e.split == "val") ++n_val;
    else ++n_test;
  }
  ordered_json settings{{"task", a.task},     {"count", a.count},   {"n_min", a.n_min},
                        {"n_max", a.n_max},   {"seed", a.seed},     {"noise", a.noise},
                        {"delta", a.delta},   {"parcels", a.parcels},
                        {"region_frac", a.region_frac}};
  write_json_file(dir / "config.json", settings);
  write_run_json(dir, "gen-synthetic", settings,
                 ordered_json{{"meshes", a.count},
                              {"splits", {{"train", n_train}, {"val", n_val}, {"test", n_test}}}});
  std::cout << "gen-synthetic: wrote " << a.count << " meshes (" << n_train << "/" << n_val
            << "/" << n_test << " train/val/test) to " << dir.string() << "\n";
}

struct EmbedArgs {
  std::string manifest;
  int d = 3;
  double epsilon = 1e-6;
  std::string out;
  bool force = false;
};

void cmd_embed(const EmbedArgs& a) {
  const auto manifest = load_manifest(a.manifest);
  const fs::path dir = prepare_out_dir(a.out, a.force);
  for (const auto& e : manifest.entries) {
    const SurfaceMesh mesh = load_mesh(manifest.resolve(e));
    const SpectralEmbedding emb = embed_mesh(mesh, a.d, a.epsilon);
    save_embedding(emb, dir / (stem_of(e.path) + ".emb"), "");
  }
  ordered_json settings{
      {"manifest", a.manifest}, {"d", a.d}, {"epsilon", a.epsilon}};
  write_json_file(dir / "config.json", settings);
  write_run_json(dir, "embed", settings,
                 ordered_json{{"embedded", manifest.entries.size()}});
  std::cout << "embed: wrote " << manifest.entries.size() << " embeddings to " << dir.string()
            << "\n";
}

struct AlignArgs {
  std::string manifest;
  std::string embeddings;
  std::string reference;  // stem; empty = first train-split mesh
  std::string out;
  int max_iters = 50;
  double tol = 1e-9;
  bool orthogonal = false;
  bool force = false;
};

void cmd_align(const AlignArgs& a) {
  const auto manifest = load_manifest(a.manifest);
  const fs::path emb_dir(a.embeddings);
  const fs::path dir = prepare_out_dir(a.out, a.force);

  std::string ref_stem = a.reference;
  if (ref_stem.empty()) {
    for (const auto& e : manifest.entries)
      if (e.split == "train") {
        ref_stem = stem_of(e.path);
        break;
      }
    if (ref_stem.empty()) throw ArgumentError("align: manifest has no training split");
  }
  SpectralEmbedding ref = load_embedding(emb_dir / (ref_stem + ".emb"));
  if (ref.aligned) throw ArgumentError("align: reference embedding is already aligned");

  AlignOptions opts;
  opts.max_iters = a.max_iters;
  opts.tol = a.tol;
  opts.orthogonal = a.orthogonal;

  std::ofstream summary(dir / "alignment.tsv");
  if (!summary) throw Error("cannot write alignment summary");
  summary << "mesh\tresidual\titerations\n";
  for (const auto& e : manifest.entries) {
    const std::string stem = stem_of(e.path);
    Correspondence corr;
    SpectralEmbedding aligned;
    if (stem == ref_stem) {
      aligned = ref;
      aligned.aligned = true;  // the reference defines the common frame
      corr.pi.resize(aligned.n_nodes());
      for (int i = 0; i < aligned.n_nodes(); ++i) corr.pi[i] = i;
      corr.residual = 0.0;
      corr.iterations = 0;
    } else {
      const SpectralEmbedding emb = load_embedding(emb_dir / (stem + ".emb"));
      std::tie(aligned, corr) = align_to_reference(emb, ref, opts);
    }
    save_embedding(aligned, dir / (stem + ".emb"), ref_stem);
    std::ofstream corr_out(dir / (stem + ".corr"));
    corr_out << "# " << ordered_json{{"residual", corr.residual},
                                     {"iterations", corr.iterations},
                                     {"reference", ref_stem}}
                            .dump()
             << "\npi\n";
    for (int p : corr.pi) corr_out << p << "\n";
    summary << stem << "\t" << fmt(corr.residual) << "\t" << corr.iterations << "\n";
  }
  ordered_json settings{{"manifest", a.manifest},   {"embeddings", a.embeddings},
                        {"reference", ref_stem},    {"max_iters", a.max_iters},
                        {"tol", a.tol},             {"orthogonal", a.orthogonal}};
  write_json_file(dir / "config.json", settings);
  write_run_json(dir, "align", settings,
                 ordered_json{{"aligned", manifest.entries.size()}});
  std::cout << "align: aligned " << manifest.entries.size() << " embeddings to reference "
            << ref_stem << "\n";
}

struct TrainArgs {
  std::string manifest;
  std::string embeddings;
  std::string config;
  std::string out;
  bool force = false;
  // flag overrides (applied when the caller passed them)
  int epochs = 0;
  double lr = 0.0;
  std::uint64_t seed = 0;
  double alpha = 0.0;
  std::string pooling, kernel, task;
  int n_outputs = 0;
  int k_neighbors = 0;
  int grid = 0;
  int eval_every = 0;
  int patience = -1;
  bool epochs_set = false, lr_set = false, seed_set = false, alpha_set = false,
       n_outputs_set = false, k_set = false, grid_set = false, eval_set = false,
       patience_set = false;
};

std::pair<ModelConfig, TrainConfig> resolve_train_configs(const TrainArgs& a,
                                                          const DatasetManifest& manifest) {
  const FileConfig fc = load_config_file(a.config);
  ModelConfig mc = model_config_from_json(fc.model.dump());
  TrainConfig tc = train_config_from_json(fc.train);
  if (!a.task.empty()) mc.task = task_from_name(a.task);
  else if (!fc.model.contains("task") && manifest.task == "parcel_size_reg")
    mc.task = ModelConfig::Task::regress;
  if (!a.pooling.empty()) mc.pooling = pooling_from_name(a.pooling);
  if (!a.kernel.empty())
    mc.kernel.type = a.kernel == "gaussian" ? KernelSpec::Type::gaussian
                                            : KernelSpec::Type::bspline;
  if (a.grid_set) mc.kernel.bspline_grid = a.grid;
  if (a.alpha_set) mc.alpha = a.alpha;
  if (a.k_set) mc.k_neighbors = a.k_neighbors;
  if (a.n_outputs_set) mc.n_outputs = a.n_outputs;
  if (a.epochs_set) tc.epochs = a.epochs;
  if (a.lr_set) tc.learning_rate = a.lr;
  if (a.seed_set) tc.seed = a.seed;
  if (a.eval_set) tc.eval_every = a.eval_every;
  if (a.patience_set) tc.early_stop_patience = a.patience;
  derive_from_data(mc, manifest, a.embeddings,
                   a.n_outputs_set || fc.model.contains("n_outputs"));
  return {mc, tc};
}

void cmd_train(const TrainArgs& a) {
  const auto manifest = load_manifest(a.manifest);
  auto [mc, tc] = resolve_train_configs(a, manifest);
  const fs::path dir = prepare_out_dir(a.out, a.force);

  PreparedDataset data = load_prepared_dataset(manifest, a.embeddings, mc);
  if (mc.pooling == ModelConfig::Pooling::fixed_parcellation && mc.n_parcels == 0)
    mc.n_parcels = derive_n_parcels(data);

  TrainResult result = train(data, mc, tc, dir);
  save_checkpoint(mc, result.state, dir / "model.ckpt");
  save_history(result.report, dir / "history.tsv");

  ordered_json settings;
  settings["model"] = json::parse(model_config_to_json(mc));
  settings["train"] = train_config_to_json(tc);
  settings["manifest"] = a.manifest;
  settings["embeddings"] = a.embeddings;
  write_json_file(dir / "config.json", settings);
  const char* metric_name =
      mc.task == ModelConfig::Task::classify ? "test_accuracy" : "test_mae";
  write_run_json(dir, "train", settings,
                 ordered_json{{metric_name, result.report.final_metric},
                              {"best_epoch", result.report.best_epoch},
                              {"best_val_loss", result.report.best_val_loss},
                              {"epochs_run", result.report.train_loss.size()},
                              {"saturated_coords", result.report.saturation_count},
                              {"empty_clusters", result.report.empty_cluster_count}});
  std::cout << "train: " << metric_name << " " << fmt(result.report.final_metric)
            << " (best epoch " << result.report.best_epoch << ") -> " << dir.string() << "\n";
}

struct EvalArgs {
  std::string checkpoint;
  std::string manifest;
  std::string embeddings;
  std::string split = "test";
  std::string out;
  bool force = false;
};

void cmd_eval(const EvalArgs& a) {
  if (!fs::exists(a.checkpoint))
    throw ParseError("eval: checkpoint does not exist: " + a.checkpoint);
  auto [mc, state] = load_checkpoint(a.checkpoint);
  const auto manifest = load_manifest(a.manifest);
  PreparedDataset data = load_prepared_dataset(manifest, a.embeddings, mc);
  const std::vector<int>* indices = nullptr;
  if (a.split == "train") indices = &data.train;
  else if (a.split == "val") indices = &data.val;
  else if (a.split == "test") indices = &data.test;
  else throw ArgumentError("eval: unknown split '" + a.split + "'");
  if (indices->empty()) throw ArgumentError("eval: split '" + a.split + "' is empty");

  std::vector<Prediction> preds;
  const double metric = evaluate(state, mc, data, *indices, &preds);
  const char* metric_name = mc.task == ModelConfig::Task::classify ? "accuracy" : "mae";
  std::cout << metric_name << "\t" << fmt(metric) << "\n";
  if (!a.out.empty()) {
    const fs::path dir = prepare_out_dir(a.out, a.force);
    write_predictions(dir / "predictions.tsv", preds);
    ordered_json settings{{"checkpoint", a.checkpoint},
                          {"manifest", a.manifest},
                          {"embeddings", a.embeddings},
                          {"split", a.split}};
    write_json_file(dir / "config.json", settings);
    write_run_json(dir, "eval", settings, ordered_json{{metric_name, metric}});
  } else {
    for (const auto& p : preds) {
      std::cout << p.id;
      for (double o : p.output) std::cout << "\t" << fmt(o);
      std::cout << "\n";
    }
  }
}

struct ClustersArgs {
  std::string checkpoint;
  std::string mesh;
  std::string embedding;
  std::string out;
  bool force = false;
};

void cmd_clusters(const ClustersArgs& a) {
  if (!fs::exists(a.checkpoint))
    throw ParseError("clusters: checkpoint does not exist: " + a.checkpoint);
  auto [mc, state] = load_checkpoint(a.checkpoint);
  const SurfaceMesh mesh = load_mesh(a.mesh);
  const SpectralEmbedding emb = load_embedding(a.embedding);
  std::vector<std::string> field_order;
  for (const auto& [name, values] : mesh.fields) field_order.push_back(name);

  PreparedMesh pm = prepare_mesh(mesh, emb, field_order, mc, {}, stem_of(a.mesh));
  ad::Tape tape;
  auto fwd = model_forward(tape, pm, mc, state, false);

  SurfaceMesh out_mesh;
  out_mesh.vertices = mesh.vertices;
  out_mesh.faces = mesh.faces;
  out_mesh.rebuilt_edges = mesh.rebuilt_edges;
  out_mesh.meta = mesh.meta;
  out_mesh.meta["checkpoint"] = fs::path(a.checkpoint).filename().string();
  auto& cluster = out_mesh.add_field("cluster");
  for (int i = 0; i < pm.n(); ++i) {
    int arg = 0;
    for (int c = 1; c < fwd.s1_dense.cols(); ++c)
      if (fwd.s1_dense(i, c) > fwd.s1_dense(i, arg)) arg = c;
    cluster[i] = arg;
  }
  for (int c = 0; c < fwd.s1_dense.cols(); ++c) {
    auto& col = out_mesh.add_field("s1_" + std::to_string(c));
    for (int i = 0; i < pm.n(); ++i) col[i] = fwd.s1_dense(i, c);
  }

  const fs::path dir = prepare_out_dir(a.out, a.force);
  const std::string stem = stem_of(a.mesh);
  save_mesh(out_mesh, dir / (stem + "_clusters.off"));
  ordered_json settings{{"checkpoint", a.checkpoint},
                        {"mesh", a.mesh},
                        {"embedding", a.embedding}};
  write_json_file(dir / "config.json", settings);
  write_run_json(dir, "clusters", settings,
                 ordered_json{{"nodes", pm.n()}, {"clusters", fwd.s1_dense.cols()}});
  std::cout << "clusters: wrote " << (dir / (stem + "_clusters.off")).string() << "\n";
}

struct GradcheckArgs {
  int size = 30;
  std::uint64_t seed = 1;
  std::string kernel = "bspline";
  int grid = 3;  // reduced default keeps the smoke check fast
  int gaussians = 6;
  double h = 3e-4;
  double tol = 1e-4;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  SurfaceMesh mesh = gen_synthetic_mesh(MeshKind::blob, std::max(12, a.size), a.seed);
  std::mt19937_64 rng(a.seed ^ 0xfeedULL);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (const char* name : {"thickness", "depth"}) {
    auto& f = mesh.add_field(name);
    for (double& v : f) v = gauss(rng);
  }
  SpectralEmbedding emb = embed_mesh(mesh, 3);
  emb.aligned = true;  // single mesh defines its own frame

  ModelConfig mc;
  mc.kernel.type = a.kernel == "gaussian" ? KernelSpec::Type::gaussian
                                          : KernelSpec::Type::bspline;
  mc.kernel.bspline_grid = a.grid;
  mc.kernel.gaussian_kernels = a.gaussians;
  PreparedMesh pm = prepare_mesh(mesh, emb, {"thickness", "depth"}, mc, {0.0}, "gradcheck");
  const auto res = full_network_grad_check(pm, mc, a.seed, a.h);

  std::printf(
      "gradcheck: %d nodes, %zu parameter entries, max relative error %.3e (worst: %s[%zu])\n",
      pm.n(), res.n_entries, res.max_rel_err, res.worst_param.c_str(), res.worst_index);
  if (res.max_rel_err <= a.tol) {
    std::printf("gradcheck: PASS (tolerance %.1e)\n", a.tol);
    return 0;
  }
  std::printf("gradcheck: FAIL (tolerance %.1e)\n", a.tol);
  return 3;
}

struct ExperimentArgs {
  std::string kind;
  std::string out;
  int count = 40;
  int n_min = 120;
  int n_max = 250;
  int seeds = 3;
  std::uint64_t seed = 1;
  double noise = 0.2;
  double delta = 1.0;
  int parcels = 8;
  int epochs = 150;
  double lr = 1e-3;
  double alpha = 1e-3;
  int eval_every = 5;
  int patience = 10;
  std::string budgets = "100,1000,0";
  std::string kernel = "bspline";
  int grid = 5;
  bool force = false;
};

void cmd_experiment(const ExperimentArgs& a) {
  const fs::path dir = prepare_out_dir(a.out, a.force);
  ExperimentConfig cfg;
  cfg.count = a.count;
  cfg.n_range = {a.n_min, a.n_max};
  cfg.seeds = a.seeds;
  cfg.base_seed = a.seed;
  cfg.noise = a.noise;
  cfg.delta = a.delta;
  cfg.parcels = a.parcels;
  cfg.epochs = a.epochs;
  cfg.eval_every = a.eval_every;
  cfg.early_stop_patience = a.patience;
  cfg.learning_rate = a.lr;
  cfg.alpha = a.alpha;
  cfg.model.kernel.type = a.kernel == "gaussian" ? KernelSpec::Type::gaussian
                                                 : KernelSpec::Type::bspline;
  cfg.model.kernel.bspline_grid = a.grid;
  cfg.size_budgets.clear();
  std::stringstream ss(a.budgets);
  std::string tok;
  while (std::getline(ss, tok, ',')) cfg.size_budgets.push_back(std::stoi(tok));

  const auto report = run_experiment(experiment_kind_from_name(a.kind), cfg, dir);
  std::cout << "experiment " << report.kind << ":\n";
  std::cout << "condition";
  for (const auto& col : report.columns) std::cout << "\t" << col;
  std::cout << "\n";
  for (const auto& row : report.table) {
    std::cout << row.front().label;
    for (const auto& cell : row)
      std::printf("\t%.2f +/- %.2f", cell.mean, cell.stddev);
    std::cout << "\n";
  }
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"surfpool: graph convolution networks with spectral embedding and learnable "
               "pooling for surface meshes"};
  app.require_subcommand(1);
  int gradcheck_rc = 0;

  GenArgs gen;
  auto* sgen = app.add_subcommand("gen-synthetic", "Generate a labeled synthetic mesh dataset");
  sgen->add_option("--task", gen.task, "two_region_class or parcel_size_reg")
      ->check(CLI::IsMember({"two_region_class", "parcel_size_reg"}));
  sgen->add_option("--count", gen.count, "number of meshes")->check(CLI::PositiveNumber);
  sgen->add_option("--n-min", gen.n_min, "minimum node count");
  sgen->add_option("--n-max", gen.n_max, "maximum node count");
  sgen->add_option("--seed", gen.seed, "RNG seed");
  sgen->add_option("--out", gen.out, "output directory")->required();
  sgen->add_option("--noise", gen.noise, "field noise sigma");
  sgen->add_option("--delta", gen.delta, "class contrast delta");
  sgen->add_option("--parcels", gen.parcels, "parcel count");
  sgen->add_option("--region-frac", gen.region_frac, "region size fraction");
  sgen->add_flag("--force", gen.force, "overwrite a non-empty output directory");
  sgen->callback([&gen] { cmd_gen_synthetic(gen); });

  EmbedArgs emb;
  auto* semb = app.add_subcommand("embed", "Compute unaligned spectral embeddings");
  semb->add_option("--manifest", emb.manifest, "dataset manifest")->required();
  semb->add_option("--d", emb.d, "embedding dimension");
  semb->add_option("--epsilon", emb.epsilon, "edge weight epsilon");
  semb->add_option("--out", emb.out, "output directory")->required();
  semb->add_flag("--force", emb.force, "overwrite a non-empty output directory");
  semb->callback([&emb] { cmd_embed(emb); });

  AlignArgs aln;
  auto* saln = app.add_subcommand("align", "Align embeddings to a common reference");
  saln->add_option("--manifest", aln.manifest, "dataset manifest")->required();
  saln->add_option("--embeddings", aln.embeddings, "directory of unaligned embeddings")
      ->required();
  saln->add_option("--reference", aln.reference,
                   "reference mesh stem (default: first training mesh)");
  saln->add_option("--out", aln.out, "output directory")->required();
  saln->add_option("--max-iters", aln.max_iters, "ICP iteration budget");
  saln->add_option("--tol", aln.tol, "ICP residual improvement tolerance");
  saln->add_flag("--orthogonal", aln.orthogonal, "project the transform to orthogonal");
  saln->add_flag("--force", aln.force, "overwrite a non-empty output directory");
  saln->callback([&aln] { cmd_align(aln); });

  TrainArgs tr;
  auto* str = app.add_subcommand("train", "Train a model on a prepared dataset");
  str->add_option("--manifest", tr.manifest, "dataset manifest")->required();
  str->add_option("--embeddings", tr.embeddings, "directory of aligned embeddings")->required();
  str->add_option("--config", tr.config, "JSON config file (model/train sections)");
  str->add_option("--out", tr.out, "output directory")->required();
  auto* o_epochs = str->add_option("--epochs", tr.epochs, "training epochs");
  auto* o_lr = str->add_option("--lr", tr.lr, "learning rate");
  auto* o_seed = str->add_option("--seed", tr.seed, "RNG seed");
  auto* o_alpha = str->add_option("--alpha", tr.alpha, "regularization weight");
  str->add_option("--pooling", tr.pooling, "pooling mode")
      ->check(CLI::IsMember({"learnable", "global_average", "fixed_parcellation",
                             "spectral_kmeans"}));
  str->add_option("--kernel", tr.kernel, "kernel type")
      ->check(CLI::IsMember({"bspline", "gaussian"}));
  auto* o_grid = str->add_option("--grid", tr.grid, "bspline grid size");
  str->add_option("--task", tr.task, "classify or regress")
      ->check(CLI::IsMember({"classify", "regress"}));
  auto* o_nout = str->add_option("--n-outputs", tr.n_outputs, "output count");
  auto* o_k = str->add_option("--k-neighbors", tr.k_neighbors, "spectral kNN neighborhood size");
  auto* o_ev = str->add_option("--eval-every", tr.eval_every, "epochs between validations");
  auto* o_pat = str->add_option("--patience", tr.patience, "early stopping patience");
  str->add_flag("--force", tr.force, "overwrite a non-empty output directory");
  str->callback([&tr, o_epochs, o_lr, o_seed, o_alpha, o_grid, o_nout, o_k, o_ev, o_pat] {
    tr.epochs_set = o_epochs->count() > 0;
    tr.lr_set = o_lr->count() > 0;
    tr.seed_set = o_seed->count() > 0;
    tr.alpha_set = o_alpha->count() > 0;
    tr.grid_set = o_grid->count() > 0;
    tr.n_outputs_set = o_nout->count() > 0;
    tr.k_set = o_k->count() > 0;
    tr.eval_set = o_ev->count() > 0;
    tr.patience_set = o_pat->count() > 0;
    cmd_train(tr);
  });

  EvalArgs ev;
  auto* sev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  sev->add_option("--checkpoint", ev.checkpoint, "model checkpoint")->required();
  sev->add_option("--manifest", ev.manifest, "dataset manifest")->required();
  sev->add_option("--embeddings", ev.embeddings, "directory of aligned embeddings")->required();
  sev->add_option("--split", ev.split, "train, val or test")
      ->check(CLI::IsMember({"train", "val", "test"}));
  sev->add_option("--out", ev.out, "optional output directory for predictions");
  sev->add_flag("--force", ev.force, "overwrite a non-empty output directory");
  sev->callback([&ev] { cmd_eval(ev); });

  ClustersArgs cl;
  auto* scl = app.add_subcommand("clusters", "Export learned cluster assignments for one mesh");
  scl->add_option("--checkpoint", cl.checkpoint, "model checkpoint")->required();
  scl->add_option("--mesh", cl.mesh, "mesh geometry file")->required();
  scl->add_option("--embedding", cl.embedding, "aligned embedding for the mesh")->required();
  scl->add_option("--out", cl.out, "output directory")->required();
  scl->add_flag("--force", cl.force, "overwrite a non-empty output directory");
  scl->callback([&cl] { cmd_clusters(cl); });

  GradcheckArgs gc;
  auto* sgc = app.add_subcommand(
      "gradcheck", "Finite-difference check of the full network gradient");
  sgc->add_option("--size", gc.size, "synthetic mesh node count");
  sgc->add_option("--seed", gc.seed, "RNG seed");
  sgc->add_option("--kernel", gc.kernel, "kernel type")
      ->check(CLI::IsMember({"bspline", "gaussian"}));
  sgc->add_option("--grid", gc.grid, "bspline grid size");
  sgc->add_option("--gaussians", gc.gaussians, "gaussian kernel count");
  sgc->add_option("--step", gc.h, "finite difference step");
  sgc->add_option("--tol", gc.tol, "pass tolerance");
  sgc->callback([&gc, &gradcheck_rc] { gradcheck_rc = cmd_gradcheck(gc); });

  ExperimentArgs ex;
  auto* sex = app.add_subcommand("experiment", "Run a full experiment family");
  sex->add_option("--kind", ex.kind, "experiment kind")
      ->required()
      ->check(CLI::IsMember({"pooling_comparison", "size_study", "parcel_regression",
                             "classify", "regress"}));
  sex->add_option("--out", ex.out, "output directory")->required();
  sex->add_option("--count", ex.count, "meshes in the dataset");
  sex->add_option("--n-min", ex.n_min, "minimum node count");
  sex->add_option("--n-max", ex.n_max, "maximum node count");
  sex->add_option("--seeds", ex.seeds, "seeded repetitions per condition");
  sex->add_option("--seed", ex.seed, "base RNG seed");
  sex->add_option("--noise", ex.noise, "field noise sigma");
  sex->add_option("--delta", ex.delta, "class contrast delta");
  sex->add_option("--parcels", ex.parcels, "parcel count");
  sex->add_option("--epochs", ex.epochs, "training epochs");
  sex->add_option("--lr", ex.lr, "learning rate");
  sex->add_option("--alpha", ex.alpha, "regularization weight");
  sex->add_option("--eval-every", ex.eval_every, "epochs between validations");
  sex->add_option("--patience", ex.patience, "early stopping patience");
  sex->add_option("--budgets", ex.budgets, "size study node budgets (0 = full)");
  sex->add_option("--kernel", ex.kernel, "kernel type")
      ->check(CLI::IsMember({"bspline", "gaussian"}));
  sex->add_option("--grid", ex.grid, "bspline grid size");
  sex->add_flag("--force", ex.force, "overwrite a non-empty output directory");
  sex->callback([&ex] { cmd_experiment(ex); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_name() == "CallForHelp" || e.get_name() == "CallForAllHelp" ||
        e.get_name() == "CallForVersion")
      return app.exit(e);
    app.exit(e);
    return 1;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const ConvergenceError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const ArgumentError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return gradcheck_rc;
}

}  // namespace surfpool::cli
