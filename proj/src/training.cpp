#include "surfpool/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>

namespace surfpool {

void TrainConfig::validate() const {
  if (epochs < 1) throw ArgumentError("TrainConfig: epochs must be >= 1");
  if (learning_rate < 0.0) throw ArgumentError("TrainConfig: learning rate must be >= 0");
  if (adam_beta1 < 0.0 || adam_beta1 >= 1.0 || adam_beta2 < 0.0 || adam_beta2 >= 1.0)
    throw ArgumentError("TrainConfig: betas must lie in [0, 1)");
  if (adam_eps <= 0.0) throw ArgumentError("TrainConfig: adam_eps must be > 0");
  if (eval_every < 1) throw ArgumentError("TrainConfig: eval_every must be >= 1");
}

// --- Adam ---------------------------------------------------------------------

void adam_step(ModelState& params, const std::map<std::string, ad::Tensor>& grads,
               AdamState& state, double lr, double beta1, double beta2, double eps) {
  ++state.t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (const auto& [name, g] : grads) {
    auto it = params.params.find(name);
    if (it == params.params.end())
      throw ArgumentError("adam_step: unknown parameter '" + name + "'");
    ad::Tensor& p = it->second;
    if (g.numel() != p.numel())
      throw ShapeError("adam_step: gradient shape mismatch for '" + name + "'");
    ad::Tensor& m = state.m[name];
    ad::Tensor& v = state.v[name];
    if (m.numel() != p.numel()) m = ad::Tensor(p.shape);
    if (v.numel() != p.numel()) v = ad::Tensor(p.shape);
    for (std::size_t e = 0; e < p.numel(); ++e) {
      m.data[e] = beta1 * m.data[e] + (1.0 - beta1) * g.data[e];
      v.data[e] = beta2 * v.data[e] + (1.0 - beta2) * g.data[e] * g.data[e];
      const double mhat = m.data[e] / bc1;
      const double vhat = v.data[e] / bc2;
      p.data[e] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

// --- Dataset plumbing ------------------------------------------------------------

SpectralEmbedding embed_mesh(const SurfaceMesh& mesh, int d, double epsilon) {
  const WeightedGraph graph = build_weighted_graph(mesh, epsilon);
  return smallest_eigenpairs(build_laplacian(graph), d);
}

PreparedDataset load_prepared_dataset(const DatasetManifest& manifest,
                                      const std::filesystem::path& embeddings_dir,
                                      const ModelConfig& cfg) {
  PreparedDataset out;
  out.field_names = manifest.field_names;
  out.task = manifest.task;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    const auto& entry = manifest.entries[i];
    const SurfaceMesh mesh = load_mesh(manifest.resolve(entry));
    const std::string stem = std::filesystem::path(entry.path).stem().string();
    SpectralEmbedding emb = load_embedding(embeddings_dir / (stem + ".emb"));
    out.meshes.push_back(
        prepare_mesh(mesh, emb, manifest.field_names, cfg, entry.target, stem));
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

// --- Evaluation --------------------------------------------------------------------

double evaluate(const ModelState& state, const ModelConfig& cfg, const PreparedDataset& data,
                const std::vector<int>& indices, std::vector<Prediction>* predictions) {
  if (indices.empty()) throw ArgumentError("evaluate: empty index set");
  double correct = 0.0;
  double abs_err = 0.0;
  for (int idx : indices) {
    const PreparedMesh& pm = data.meshes[idx];
    ad::Tape tape;
    auto fwd = model_forward(tape, pm, cfg, state, false);
    const ad::Tensor& out = fwd.output.tensor();
    if (predictions) {
      Prediction p;
      p.id = pm.id;
      p.target = pm.target;
      p.output = out.data;
      predictions->push_back(std::move(p));
    }
    if (cfg.task == ModelConfig::Task::classify) {
      int argmax = 0;
      for (std::size_t c = 1; c < out.numel(); ++c)
        if (out.data[c] > out.data[argmax]) argmax = static_cast<int>(c);
      if (argmax == static_cast<int>(pm.target.at(0))) correct += 1.0;
    } else {
      double e = 0.0;
      for (std::size_t c = 0; c < out.numel(); ++c) e += std::abs(out.data[c] - pm.target.at(c));
      abs_err += e / out.numel();
    }
  }
  if (cfg.task == ModelConfig::Task::classify) return 100.0 * correct / indices.size();
  return abs_err / indices.size();
}

// --- AMI -----------------------------------------------------------------------------

namespace {

std::vector<int> dense_labels(const std::vector<int>& labels, int& count) {
  std::map<int, int> remap;
  std::vector<int> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto [it, inserted] = remap.emplace(labels[i], static_cast<int>(remap.size()));
    out[i] = it->second;
  }
  count = static_cast<int>(remap.size());
  return out;
}

}  // namespace

double ami(const std::vector<int>& labels_a, const std::vector<int>& labels_b) {
  if (labels_a.size() != labels_b.size())
    throw ArgumentError("ami: label arrays differ in length");
  if (labels_a.empty()) throw ArgumentError("ami: empty labelings");
  const int n = static_cast<int>(labels_a.size());

  int r = 0, c = 0;
  const std::vector<int> a = dense_labels(labels_a, r);
  const std::vector<int> b = dense_labels(labels_b, c);
  std::vector<std::vector<int>> nij(r, std::vector<int>(c, 0));
  std::vector<int> ai(r, 0), bj(c, 0);
  for (int i = 0; i < n; ++i) {
    nij[a[i]][b[i]]++;
    ai[a[i]]++;
    bj[b[i]]++;
  }

  const double dn = static_cast<double>(n);
  // MI and entropies share the same expression shape so that identical
  // partitions give bit-identical MI and H (hence AMI exactly 1).
  auto info_term = [dn](double count, double ma, double mb) {
    return (count / dn) * std::log((dn * count) / (ma * mb));
  };
  double mi = 0.0;
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j)
      if (nij[i][j] > 0) mi += info_term(nij[i][j], ai[i], bj[j]);
  double ha = 0.0, hb = 0.0;
  for (int i = 0; i < r; ++i) ha += info_term(ai[i], ai[i], ai[i]);
  for (int j = 0; j < c; ++j) hb += info_term(bj[j], bj[j], bj[j]);

  if (r == 1 && c == 1) return 1.0;  // single cluster vs single cluster

  // E[MI] under the permutation (hypergeometric) model.
  std::vector<double> lg(n + 2);
  for (int k = 0; k <= n + 1; ++k) lg[k] = std::lgamma(static_cast<double>(k) + 1.0);
  double emi = 0.0;
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) {
      const int lo = std::max(1, ai[i] + bj[j] - n);
      const int hi = std::min(ai[i], bj[j]);
      for (int m = lo; m <= hi; ++m) {
        const double log_pmf = lg[ai[i]] + lg[bj[j]] + lg[n - ai[i]] + lg[n - bj[j]] - lg[n] -
                               lg[m] - lg[ai[i] - m] - lg[bj[j] - m] - lg[n - ai[i] - bj[j] + m];
        emi += info_term(m, ai[i], bj[j]) * std::exp(log_pmf);
      }
    }

  const double denom = 0.5 * (ha + hb) - emi;
  if (std::abs(denom) < 1e-15) {
    // Degenerate normalization; identical partitions score 1, anything else 0.
    return mi == 0.5 * (ha + hb) && mi > 0.0 ? 1.0 : 0.0;
  }
  return (mi - emi) / denom;
}

double mean_cluster_ami(const ModelState& state, const ModelConfig& cfg,
                        const PreparedDataset& data, const std::vector<int>& indices) {
  double total = 0.0;
  int counted = 0;
  for (int idx : indices) {
    const PreparedMesh& pm = data.meshes[idx];
    if (pm.parcels.empty()) continue;
    ad::Tape tape;
    auto fwd = model_forward(tape, pm, cfg, state, false);
    std::vector<int> learned(pm.n());
    for (int i = 0; i < pm.n(); ++i) {
      int arg = 0;
      for (int c = 1; c < fwd.s1_dense.cols(); ++c)
        if (fwd.s1_dense(i, c) > fwd.s1_dense(i, arg)) arg = c;
      learned[i] = arg;
    }
    total += ami(learned, pm.parcels);
    ++counted;
  }
  if (counted == 0) throw ArgumentError("mean_cluster_ami: no meshes carry parcels");
  return total / counted;
}

// --- Training loop --------------------------------------------------------------------

void save_history(const MetricsReport& report, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("save_history: cannot write " + path.string());
  out << "epoch\ttrain_loss\tval_loss\tval_ami\n";
  std::map<int, double> val(report.val_loss.begin(), report.val_loss.end());
  std::map<int, double> amis(report.val_ami.begin(), report.val_ami.end());
  char buf[32];
  for (std::size_t e = 0; e < report.train_loss.size(); ++e) {
    const int epoch = static_cast<int>(e) + 1;
    std::snprintf(buf, sizeof(buf), "%.17g", report.train_loss[e]);
    out << epoch << "\t" << buf;
    if (auto it = val.find(epoch); it != val.end()) {
      std::snprintf(buf, sizeof(buf), "%.17g", it->second);
      out << "\t" << buf;
    } else {
      out << "\t";
    }
    if (auto it = amis.find(epoch); it != amis.end()) {
      std::snprintf(buf, sizeof(buf), "%.17g", it->second);
      out << "\t" << buf;
    } else {
      out << "\t";
    }
    out << "\n";
  }
}

namespace {

double split_loss(const ModelState& state, const ModelConfig& cfg, const PreparedDataset& data,
                  const std::vector<int>& indices) {
  double total = 0.0;
  for (int idx : indices) {
    ad::Tape tape;
    auto fwd = model_forward(tape, data.meshes[idx], cfg, state, false);
    total += model_loss(tape, fwd, data.meshes[idx], cfg).tensor().data[0];
  }
  return total / indices.size();
}

bool dataset_has_parcels(const PreparedDataset& data, const std::vector<int>& indices) {
  for (int idx : indices)
    if (!data.meshes[idx].parcels.empty()) return true;
  return false;
}

}  // namespace

TrainResult train(const PreparedDataset& data, const ModelConfig& model_cfg,
                  const TrainConfig& train_cfg, const std::filesystem::path& work_dir) {
  model_cfg.validate();
  train_cfg.validate();
  if (data.train.empty()) throw ArgumentError("train: empty training split");

  ModelState state = init_model_state(model_cfg, train_cfg.seed);
  auto [norm1, norm2] = fit_normalizers(data.meshes, data.train, model_cfg);
  set_normalizers(state, norm1, norm2);

  AdamState adam;
  MetricsReport report;
  ModelState best = state;
  double best_val = std::numeric_limits<double>::max();
  int stall = 0;
  std::string last_good = "none";
  if (!work_dir.empty()) {
    std::filesystem::create_directories(work_dir);
    save_checkpoint(model_cfg, state, work_dir / "last_good.ckpt");
    last_good = (work_dir / "last_good.ckpt").string();
  }
  const bool track_ami = model_cfg.pooling == ModelConfig::Pooling::learnable &&
                         !data.val.empty() && dataset_has_parcels(data, data.val);

  for (int epoch = 1; epoch <= train_cfg.epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (int idx : data.train) {
      ad::Tape tape;
      auto fwd = model_forward(tape, data.meshes[idx], model_cfg, state, true);
      ad::Value loss = model_loss(tape, fwd, data.meshes[idx], model_cfg);
      const double lval = loss.tensor().data[0];
      if (!std::isfinite(lval))
        throw NumericalError("train: non-finite loss at epoch " + std::to_string(epoch) +
                             " on mesh " + data.meshes[idx].id +
                             "; last good checkpoint: " + last_good);
      tape.backward(loss);
      std::map<std::string, ad::Tensor> grads;
      for (const auto& [name, value] : fwd.bound) grads.emplace(name, value.grad());
      adam_step(state, grads, adam, train_cfg.learning_rate, train_cfg.adam_beta1,
                train_cfg.adam_beta2, train_cfg.adam_eps);
      epoch_loss += lval;
      report.saturation_count += fwd.diag.saturated;
      report.empty_cluster_count += fwd.diag.empty_clusters;
    }
    report.train_loss.push_back(epoch_loss / data.train.size());

    const bool eval_now = !data.val.empty() &&
                          (epoch % train_cfg.eval_every == 0 || epoch == train_cfg.epochs);
    if (eval_now) {
      const double vloss = split_loss(state, model_cfg, data, data.val);
      report.val_loss.emplace_back(epoch, vloss);
      if (track_ami)
        report.val_ami.emplace_back(epoch, mean_cluster_ami(state, model_cfg, data, data.val));
      if (vloss < best_val) {
        best_val = vloss;
        best = state;
        report.best_epoch = epoch;
        stall = 0;
      } else {
        ++stall;
      }
      if (!work_dir.empty()) {
        save_checkpoint(model_cfg, state, work_dir / "last_good.ckpt");
        last_good = (work_dir / "last_good.ckpt").string();
      }
      if (train_cfg.early_stop_patience > 0 && stall >= train_cfg.early_stop_patience) break;
    }
  }

  if (data.val.empty()) {
    best = state;
    report.best_epoch = static_cast<int>(report.train_loss.size());
    best_val = std::numeric_limits<double>::quiet_NaN();
  }
  report.best_val_loss = best_val;
  if (!data.test.empty()) report.final_metric = evaluate(best, model_cfg, data, data.test);
  return {std::move(best), std::move(report)};
}

}  // namespace surfpool
