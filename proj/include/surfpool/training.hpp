#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "surfpool/model.hpp"

namespace surfpool {

struct TrainConfig {
  int epochs = 500;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  int eval_every = 5;            // epochs between validation passes
  int early_stop_patience = 10;  // validation rounds without improvement; <= 0 disables

  void validate() const;
};

struct MetricsReport {
  std::vector<double> train_loss;                 // one entry per epoch
  std::vector<std::pair<int, double>> val_loss;   // (epoch, loss)
  std::vector<std::pair<int, double>> val_ami;    // (epoch, mean AMI), when parcels exist
  double final_metric = 0.0;                      // accuracy % (classify) or MAE (regress)
  int best_epoch = -1;
  double best_val_loss = 0.0;
  long saturation_count = 0;
  long empty_cluster_count = 0;
};

/// Writes "epoch<TAB>train_loss<TAB>val_loss<TAB>val_ami" rows (blank cells
/// where a quantity was not evaluated).
void save_history(const MetricsReport& report, const std::filesystem::path& path);

// --- Optimizer -------------------------------------------------------------------

struct AdamState {
  std::map<std::string, ad::Tensor> m, v;
  long t = 0;
};

/// Standard bias-corrected Adam update, applied in place to every named
/// parameter present in `grads`.
void adam_step(ModelState& params, const std::map<std::string, ad::Tensor>& grads,
               AdamState& state, double lr, double beta1, double beta2, double eps);

// --- Dataset plumbing --------------------------------------------------------------

struct PreparedDataset {
  std::vector<PreparedMesh> meshes;
  std::vector<int> train, val, test;
  std::vector<std::string> field_names;
  std::string task;
};

/// Loads every manifest entry and its aligned embedding (<stem>.emb under
/// embeddings_dir) and prepares it for the network.
PreparedDataset load_prepared_dataset(const DatasetManifest& manifest,
                                      const std::filesystem::path& embeddings_dir,
                                      const ModelConfig& cfg);

/// Embeds one mesh: weighted graph, normalized Laplacian, smallest d
/// non-zero eigenpairs.
SpectralEmbedding embed_mesh(const SurfaceMesh& mesh, int d, double epsilon = 1e-6);

// --- Training ------------------------------------------------------------------------

struct TrainResult {
  ModelState state;  // best-validation parameters
  MetricsReport report;
};

/// One-mesh-per-step Adam training over the train split in manifest order;
/// tracks the best validation loss and returns that state. Deterministic for
/// a fixed seed. A non-finite loss aborts with NumericalError naming the
/// last good checkpoint (saved under work_dir when given).
TrainResult train(const PreparedDataset& data, const ModelConfig& model_cfg,
                  const TrainConfig& train_cfg, const std::filesystem::path& work_dir = {});

/// Argmax accuracy in percent (classify) or mean absolute error (regress).
/// Per-mesh predictions are appended to *predictions when given.
struct Prediction {
  std::string id;
  std::vector<double> target;
  std::vector<double> output;
};
double evaluate(const ModelState& state, const ModelConfig& cfg, const PreparedDataset& data,
                const std::vector<int>& indices, std::vector<Prediction>* predictions = nullptr);

// --- Metrics ---------------------------------------------------------------------------

/// Adjusted mutual information between two labelings under the permutation
/// (hypergeometric) null model: (MI - E[MI]) / (mean(H_a, H_b) - E[MI]).
/// The single-cluster vs single-cluster degenerate case returns 1 for
/// identical partitions and 0 otherwise.
double ami(const std::vector<int>& labels_a, const std::vector<int>& labels_b);

/// Mean AMI between per-node argmax of S1 and the reference parcels over the
/// given meshes.
double mean_cluster_ami(const ModelState& state, const ModelConfig& cfg,
                        const PreparedDataset& data, const std::vector<int>& indices);

// --- Experiments ------------------------------------------------------------------------

enum class ExperimentKind { pooling_comparison, size_study, parcel_regression, classify, regress };

ExperimentKind experiment_kind_from_name(const std::string& name);

struct ExperimentConfig {
  int count = 200;
  std::pair<int, int> n_range{500, 1000};
  int seeds = 5;
  std::uint64_t base_seed = 1;
  double noise = 0.2;
  double delta = 1.0;
  int parcels = 8;
  int epochs = 300;
  int eval_every = 5;
  int early_stop_patience = 10;
  double learning_rate = 1e-3;
  double alpha = 1e-3;
  std::vector<int> size_budgets{100, 1000, 2000};
  ModelConfig model;  // template; task/outputs adjusted per experiment
};

struct ExperimentRow {
  std::string label;
  double mean = 0.0;
  double stddev = 0.0;
  std::vector<double> values;
};

struct ExperimentReport {
  std::string kind;
  std::vector<std::string> columns;
  std::vector<std::vector<ExperimentRow>> table;  // rows x columns
};

/// Runs one experiment family end to end (dataset generation, embedding,
/// alignment, per-condition training) and writes report files under out_dir.
ExperimentReport run_experiment(ExperimentKind kind, const ExperimentConfig& cfg,
                                const std::filesystem::path& out_dir);

}  // namespace surfpool
