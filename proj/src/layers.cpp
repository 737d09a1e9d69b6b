#include "surfpool/layers.hpp"

#include <algorithm>
#include <cmath>

namespace surfpool {

CoordNormalizer CoordNormalizer::identity(int dim) {
  CoordNormalizer n;
  n.lo = Eigen::VectorXd::Zero(dim);
  n.hi = Eigen::VectorXd::Ones(dim);
  return n;
}

std::shared_ptr<ConvGeometry> make_conv_geometry(
    const std::vector<std::vector<int>>& neighbor_lists, const Eigen::MatrixXd& coords) {
  auto geom = std::make_shared<ConvGeometry>();
  geom->n_nodes = static_cast<int>(neighbor_lists.size());
  geom->offsets.reserve(geom->n_nodes + 1);
  geom->offsets.push_back(0);
  for (const auto& lst : neighbor_lists) {
    for (int j : lst) geom->nbr.push_back(j);
    geom->offsets.push_back(static_cast<int>(geom->nbr.size()));
  }
  geom->edge_u.resize(geom->n_edges(), coords.cols());
  int e = 0;
  for (int i = 0; i < geom->n_nodes; ++i)
    for (int off = geom->offsets[i]; off < geom->offsets[i + 1]; ++off, ++e)
      geom->edge_u.row(e) = coords.row(geom->nbr[off]) - coords.row(i);
  return geom;
}

// --- Kernel functions ---------------------------------------------------------

double gaussian_kernel(const Eigen::VectorXd& u, const Eigen::VectorXd& mu,
                       const Eigen::VectorXd& log_var) {
  double q = 0.0;
  for (int c = 0; c < u.size(); ++c) {
    const double d = u[c] - mu[c];
    q += d * d / std::exp(log_var[c]);
  }
  return std::exp(-0.5 * q);
}

namespace {

// Per-edge degree-1 basis: fills 2^d (kernel index, weight) pairs and,
// when dw is non-null, d(weight)/d(raw u) for every pair and dimension.
// norm == nullptr means u is already in the unit domain.
void bspline_pairs(const double* u, int d, int grid, const CoordNormalizer* norm, int* kidx,
                   double* wgt, double* dw, int* saturated) {
  constexpr int kMaxDim = 8;
  double w0[kMaxDim], w1[kMaxDim], dw0[kMaxDim], dw1[kMaxDim];
  int cell[kMaxDim];
  for (int c = 0; c < d; ++c) {
    double t = norm ? norm->unit(u[c], c) : u[c];
    double dscale = (grid - 1) * (norm ? norm->inv_range(c) : 1.0);
    if (t < 0.0 || t > 1.0) {
      t = std::clamp(t, 0.0, 1.0);
      dscale = 0.0;
      if (saturated) ++*saturated;
    }
    const double x = t * (grid - 1);
    cell[c] = std::min(static_cast<int>(x), grid - 2);
    const double s = x - cell[c];
    w0[c] = 1.0 - s;
    w1[c] = s;
    dw0[c] = -dscale;
    dw1[c] = dscale;
  }
  const int pairs = 1 << d;
  for (int p = 0; p < pairs; ++p) {
    double weight = 1.0;
    int k = 0;
    for (int c = 0; c < d; ++c) {
      const int bit = (p >> (d - 1 - c)) & 1;
      weight *= bit ? w1[c] : w0[c];
      k = k * grid + cell[c] + bit;
    }
    kidx[p] = k;
    wgt[p] = weight;
    if (dw) {
      for (int c = 0; c < d; ++c) {
        double g = 1.0;
        for (int cc = 0; cc < d; ++cc) {
          const int bit = (p >> (d - 1 - cc)) & 1;
          if (cc == c)
            g *= bit ? dw1[cc] : dw0[cc];
          else
            g *= bit ? w1[cc] : w0[cc];
        }
        dw[p * d + c] = g;
      }
    }
  }
}

}  // namespace

BSplineEval bspline_kernel(const Eigen::VectorXd& u_unit, int grid) {
  if (grid < 2) throw ArgumentError("bspline_kernel: grid must be >= 2");
  const int d = static_cast<int>(u_unit.size());
  if (d < 1 || d > 8) throw ArgumentError("bspline_kernel: dimension out of range");
  BSplineEval out;
  out.index.resize(1 << d);
  out.weight.resize(1 << d);
  bspline_pairs(u_unit.data(), d, grid, nullptr, out.index.data(), out.weight.data(), nullptr,
                &out.saturated);
  return out;
}

// --- Geometric convolution ------------------------------------------------------

namespace {

struct BasisBuffer {
  int ppe = 0;
  std::vector<int> kidx;      // edges * ppe
  std::vector<double> weight; // edges * ppe
  std::vector<double> dw;     // edges * ppe * d, tape-u only
};

struct PhiBuffer {
  std::vector<double> phi;  // edges * K
  std::vector<double> t;    // edges * d (normalized coordinates)
};

}  // namespace

ad::Value geometric_conv(ad::Tape& tape, const GeometricConvInputs& in,
                         std::shared_ptr<const ConvGeometry> geom, const KernelSpec& spec,
                         const CoordNormalizer& norm, long* saturation_counter) {
  const ad::Tensor& ty = in.y.tensor();
  const ad::Tensor& tw = in.w.tensor();
  const ad::Tensor& tb = in.b.tensor();
  const int n = geom->n_nodes;
  const int d = spec.dim;
  const int K = spec.kernel_count();
  const std::size_t Q = ty.cols();
  if (static_cast<int>(ty.rows()) != n)
    throw ShapeError("geometric_conv: feature rows " + ty.shape_str() + " vs " +
                     std::to_string(n) + " nodes");
  if (tw.shape.size() != 3 || tw.shape[0] != static_cast<std::size_t>(K) || tw.shape[1] != Q)
    throw ShapeError("geometric_conv: weight shape " + tw.shape_str() + " incompatible with K=" +
                     std::to_string(K) + ", Q=" + std::to_string(Q));
  const std::size_t P = tw.shape[2];
  if (tb.numel() != P) throw ShapeError("geometric_conv: bias shape " + tb.shape_str());
  if (spec.type == KernelSpec::Type::gaussian && (!in.mu || !in.log_var))
    throw ArgumentError("geometric_conv: gaussian kernels need mu and log_var");
  const int E = geom->n_edges();
  if (!in.edge_u && geom->edge_u.rows() != E)
    throw ArgumentError("geometric_conv: geometry lacks edge coordinates");

  std::vector<ad::Value> inputs{in.y, in.w, in.b};
  const int mu_id = in.mu ? in.mu->id : -1;
  const int lv_id = in.log_var ? in.log_var->id : -1;
  const int ue_id = in.edge_u ? in.edge_u->id : -1;
  if (in.mu) inputs.push_back(*in.mu);
  if (in.log_var) inputs.push_back(*in.log_var);
  if (in.edge_u) inputs.push_back(*in.edge_u);

  const int yid = in.y.id, wid = in.w.id, bid = in.b.id;
  auto first_pass = std::make_shared<bool>(true);

  if (spec.type == KernelSpec::Type::bspline) {
    const int grid = spec.bspline_grid;
    if (grid < 2) throw ArgumentError("geometric_conv: bspline grid must be >= 2");
    auto basis = std::make_shared<BasisBuffer>();
    basis->ppe = 1 << d;
    basis->kidx.resize(static_cast<std::size_t>(E) * basis->ppe);
    basis->weight.resize(static_cast<std::size_t>(E) * basis->ppe);
    if (in.edge_u) basis->dw.resize(static_cast<std::size_t>(E) * basis->ppe * d);

    if (!in.edge_u) {
      int sat = 0;
      std::vector<double> urow(d);
      for (int e = 0; e < E; ++e) {
        for (int c = 0; c < d; ++c) urow[c] = geom->edge_u(e, c);
        bspline_pairs(urow.data(), d, grid, &norm, basis->kidx.data() + e * basis->ppe,
                      basis->weight.data() + e * basis->ppe, nullptr, &sat);
      }
      if (saturation_counter) *saturation_counter += sat;
    }

    CoordNormalizer nrm = norm;
    auto fwd = [=](ad::Tape& tp, int out) {
      if (ue_id >= 0) {
        // Tape-valued coordinates: refresh basis (and derivatives) each pass.
        const double* U = tp.val(ue_id).data.data();
        int sat = 0;
        for (int e = 0; e < E; ++e)
          bspline_pairs(U + static_cast<std::size_t>(e) * d, d, grid, &nrm,
                        basis->kidx.data() + e * basis->ppe,
                        basis->weight.data() + e * basis->ppe, basis->dw.data() + e * basis->ppe * d,
                        &sat);
        if (*first_pass && saturation_counter) *saturation_counter += sat;
      }
      *first_pass = false;
      const double* Y = tp.val(yid).data.data();
      const double* W = tp.val(wid).data.data();
      const double* B = tp.val(bid).data.data();
      double* Z = tp.mutable_val(out).data.data();
      for (int i = 0; i < n; ++i)
        for (std::size_t p = 0; p < P; ++p) Z[i * P + p] = B[p];
      const int ppe = basis->ppe;
      for (int i = 0; i < n; ++i) {
        double* zrow = Z + static_cast<std::size_t>(i) * P;
        for (int off = geom->offsets[i]; off < geom->offsets[i + 1]; ++off) {
          const int j = geom->nbr[off];
          const double* yrow = Y + static_cast<std::size_t>(j) * Q;
          const int* kk = basis->kidx.data() + static_cast<std::size_t>(off) * ppe;
          const double* bw = basis->weight.data() + static_cast<std::size_t>(off) * ppe;
          for (int pr = 0; pr < ppe; ++pr) {
            const double beta = bw[pr];
            if (beta == 0.0) continue;
            const double* wk = W + (static_cast<std::size_t>(kk[pr]) * Q) * P;
            for (std::size_t q = 0; q < Q; ++q) {
              const double t = beta * yrow[q];
              const double* wrow = wk + q * P;
              for (std::size_t p = 0; p < P; ++p) zrow[p] += t * wrow[p];
            }
          }
        }
      }
    };
    auto bwd = [=](ad::Tape& tp, int out) {
      const double* G = tp.grad_buf(out).data.data();
      const double* Y = tp.val(yid).data.data();
      const double* W = tp.val(wid).data.data();
      const bool need_y = tp.requires_grad(yid);
      const bool need_w = tp.requires_grad(wid);
      const bool need_b = tp.requires_grad(bid);
      const bool need_u = ue_id >= 0 && tp.requires_grad(ue_id);
      double* GY = need_y ? tp.grad_buf(yid).data.data() : nullptr;
      double* GW = need_w ? tp.grad_buf(wid).data.data() : nullptr;
      double* GU = need_u ? tp.grad_buf(ue_id).data.data() : nullptr;
      if (need_b) {
        double* GB = tp.grad_buf(bid).data.data();
        for (int i = 0; i < n; ++i)
          for (std::size_t p = 0; p < P; ++p) GB[p] += G[i * P + p];
      }
      const int ppe = basis->ppe;
      for (int i = 0; i < n; ++i) {
        const double* grow = G + static_cast<std::size_t>(i) * P;
        for (int off = geom->offsets[i]; off < geom->offsets[i + 1]; ++off) {
          const int j = geom->nbr[off];
          const double* yrow = Y + static_cast<std::size_t>(j) * Q;
          const int* kk = basis->kidx.data() + static_cast<std::size_t>(off) * ppe;
          const double* bw = basis->weight.data() + static_cast<std::size_t>(off) * ppe;
          for (int pr = 0; pr < ppe; ++pr) {
            const double beta = bw[pr];
            const std::size_t kbase = static_cast<std::size_t>(kk[pr]) * Q;
            double alpha = 0.0;  // d z / d beta for this pair
            for (std::size_t q = 0; q < Q; ++q) {
              const double* wrow = W + (kbase + q) * P;
              double s = 0.0;
              for (std::size_t p = 0; p < P; ++p) s += grow[p] * wrow[p];
              if (need_y) GY[j * Q + q] += beta * s;
              if (need_u) alpha += yrow[q] * s;
              if (need_w) {
                const double t = beta * yrow[q];
                double* gwrow = GW + (kbase + q) * P;
                for (std::size_t p = 0; p < P; ++p) gwrow[p] += t * grow[p];
              }
            }
            if (need_u) {
              const double* dwp = basis->dw.data() + (static_cast<std::size_t>(off) * ppe + pr) * d;
              for (int c = 0; c < d; ++c) GU[static_cast<std::size_t>(off) * d + c] += alpha * dwp[c];
            }
          }
        }
      }
    };
    return tape.make_node({static_cast<std::size_t>(n), P}, inputs, fwd, bwd);
  }

  // Gaussian kernels.
  auto buf = std::make_shared<PhiBuffer>();
  buf->phi.resize(static_cast<std::size_t>(E) * K);
  buf->t.resize(static_cast<std::size_t>(E) * d);
  CoordNormalizer nrm = norm;
  auto fwd = [=](ad::Tape& tp, int out) {
    const double* U = ue_id >= 0 ? tp.val(ue_id).data.data() : geom->edge_u.data();
    const bool u_rowmajor = ue_id >= 0;  // Eigen matrices are column-major
    const double* MU = tp.val(mu_id).data.data();
    const double* LV = tp.val(lv_id).data.data();
    for (int e = 0; e < E; ++e)
      for (int c = 0; c < d; ++c) {
        const double raw = u_rowmajor ? U[static_cast<std::size_t>(e) * d + c]
                                      : geom->edge_u(e, c);
        buf->t[static_cast<std::size_t>(e) * d + c] = nrm.unit(raw, c);
      }
    for (int e = 0; e < E; ++e)
      for (int k = 0; k < K; ++k) {
        double q = 0.0;
        for (int c = 0; c < d; ++c) {
          const double diff = buf->t[static_cast<std::size_t>(e) * d + c] - MU[k * d + c];
          q += diff * diff / std::exp(LV[k * d + c]);
        }
        buf->phi[static_cast<std::size_t>(e) * K + k] = std::exp(-0.5 * q);
      }
    *first_pass = false;
    const double* Y = tp.val(yid).data.data();
    const double* W = tp.val(wid).data.data();
    const double* B = tp.val(bid).data.data();
    double* Z = tp.mutable_val(out).data.data();
    for (int i = 0; i < n; ++i)
      for (std::size_t p = 0; p < P; ++p) Z[i * P + p] = B[p];
    for (int i = 0; i < n; ++i) {
      double* zrow = Z + static_cast<std::size_t>(i) * P;
      for (int off = geom->offsets[i]; off < geom->offsets[i + 1]; ++off) {
        const int j = geom->nbr[off];
        const double* yrow = Y + static_cast<std::size_t>(j) * Q;
        const double* prow = buf->phi.data() + static_cast<std::size_t>(off) * K;
        for (int k = 0; k < K; ++k) {
          const double phi = prow[k];
          const double* wk = W + (static_cast<std::size_t>(k) * Q) * P;
          for (std::size_t q = 0; q < Q; ++q) {
            const double t = phi * yrow[q];
            const double* wrow = wk + q * P;
            for (std::size_t p = 0; p < P; ++p) zrow[p] += t * wrow[p];
          }
        }
      }
    }
  };
  auto bwd = [=](ad::Tape& tp, int out) {
    const double* G = tp.grad_buf(out).data.data();
    const double* Y = tp.val(yid).data.data();
    const double* W = tp.val(wid).data.data();
    const double* MU = tp.val(mu_id).data.data();
    const double* LV = tp.val(lv_id).data.data();
    const bool need_y = tp.requires_grad(yid);
    const bool need_w = tp.requires_grad(wid);
    const bool need_b = tp.requires_grad(bid);
    const bool need_mu = tp.requires_grad(mu_id);
    const bool need_lv = tp.requires_grad(lv_id);
    const bool need_u = ue_id >= 0 && tp.requires_grad(ue_id);
    double* GY = need_y ? tp.grad_buf(yid).data.data() : nullptr;
    double* GW = need_w ? tp.grad_buf(wid).data.data() : nullptr;
    double* GMU = need_mu ? tp.grad_buf(mu_id).data.data() : nullptr;
    double* GLV = need_lv ? tp.grad_buf(lv_id).data.data() : nullptr;
    double* GU = need_u ? tp.grad_buf(ue_id).data.data() : nullptr;
    if (need_b) {
      double* GB = tp.grad_buf(bid).data.data();
      for (int i = 0; i < n; ++i)
        for (std::size_t p = 0; p < P; ++p) GB[p] += G[i * P + p];
    }
    for (int i = 0; i < n; ++i) {
      const double* grow = G + static_cast<std::size_t>(i) * P;
      for (int off = geom->offsets[i]; off < geom->offsets[i + 1]; ++off) {
        const int j = geom->nbr[off];
        const double* yrow = Y + static_cast<std::size_t>(j) * Q;
        const double* prow = buf->phi.data() + static_cast<std::size_t>(off) * K;
        const double* trow = buf->t.data() + static_cast<std::size_t>(off) * d;
        for (int k = 0; k < K; ++k) {
          const double phi = prow[k];
          const std::size_t kbase = static_cast<std::size_t>(k) * Q;
          double dphi = 0.0;
          for (std::size_t q = 0; q < Q; ++q) {
            const double* wrow = W + (kbase + q) * P;
            double s = 0.0;
            for (std::size_t p = 0; p < P; ++p) s += grow[p] * wrow[p];
            if (need_y) GY[j * Q + q] += phi * s;
            dphi += yrow[q] * s;
            if (need_w) {
              const double t = phi * yrow[q];
              double* gwrow = GW + (kbase + q) * P;
              for (std::size_t p = 0; p < P; ++p) gwrow[p] += t * grow[p];
            }
          }
          if (need_mu || need_lv || need_u) {
            for (int c = 0; c < d; ++c) {
              const double diff = trow[c] - MU[k * d + c];
              const double inv_var = std::exp(-LV[k * d + c]);
              if (need_mu) GMU[k * d + c] += dphi * phi * diff * inv_var;
              if (need_lv) GLV[k * d + c] += dphi * phi * 0.5 * diff * diff * inv_var;
              if (need_u)
                GU[static_cast<std::size_t>(off) * d + c] -=
                    dphi * phi * diff * inv_var * nrm.inv_range(c);
            }
          }
        }
      }
    }
  };
  return tape.make_node({static_cast<std::size_t>(n), P}, inputs, fwd, bwd);
}

// --- Pooling ---------------------------------------------------------------------

void ClusterAssignment::validate() const {
  for (int i = 0; i < s.rows(); ++i) {
    double sum = 0.0;
    for (int c = 0; c < s.cols(); ++c) {
      const double v = s(i, c);
      if (v < -1e-12 || v > 1.0 + 1e-12)
        throw ArgumentError("ClusterAssignment: entry outside [0,1] at row " + std::to_string(i));
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-12)
      throw ArgumentError("ClusterAssignment: row " + std::to_string(i) +
                          " sums to " + std::to_string(sum));
  }
}

Eigen::MatrixXd dense_adjacency(const WeightedGraph& graph) {
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(graph.n, graph.n);
  for (const auto& e : graph.edges) {
    a(e.i, e.j) = e.w;
    a(e.j, e.i) = e.w;
  }
  return a;
}

Eigen::MatrixXd pool_features(const ClusterAssignment& s, const Eigen::MatrixXd& y) {
  if (s.s.rows() != y.rows())
    throw ShapeError("pool_features: S rows " + std::to_string(s.s.rows()) + " vs Y rows " +
                     std::to_string(y.rows()));
  return s.s.transpose() * y;
}

Eigen::MatrixXd pool_adjacency(const ClusterAssignment& s, const Eigen::MatrixXd& a) {
  if (a.rows() != a.cols() || a.rows() != s.s.rows())
    throw ShapeError("pool_adjacency: incompatible shapes");
  const Eigen::MatrixXd p = s.s.transpose() * a * s.s;
  return 0.5 * (p + p.transpose());  // exact symmetry despite summation order
}

Eigen::MatrixXd pool_coords(const ClusterAssignment& s, const Eigen::MatrixXd& coords,
                            int* empty_warnings) {
  const int c = s.clusters();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(c, coords.cols());
  for (int cc = 0; cc < c; ++cc) {
    const double mass = s.s.col(cc).sum();
    if (mass < 1e-12) {
      if (empty_warnings) ++*empty_warnings;
      continue;
    }
    out.row(cc) = (s.s.col(cc).transpose() * coords) / mass;
  }
  return out;
}

double laplacian_reg_value(const ClusterAssignment& s, const WeightedGraph& graph) {
  if (s.n() != graph.n) throw ShapeError("laplacian_reg: S rows vs graph nodes");
  double total = 0.0;
  for (const auto& e : graph.edges) {
    double d2 = 0.0;
    for (int c = 0; c < s.clusters(); ++c) {
      const double diff = s.s(e.i, c) - s.s(e.j, c);
      d2 += diff * diff;
    }
    total += 2.0 * e.w * d2;  // (i,j) and (j,i) of the double sum
  }
  return total;
}

ad::Value pool_coords_op(ad::Tape& tape, const ad::Value& s, const Eigen::MatrixXd& coords,
                         int* empty_warnings) {
  const ad::Tensor& ts = s.tensor();
  if (static_cast<int>(ts.rows()) != coords.rows())
    throw ShapeError("pool_coords: S rows vs coordinate rows");
  const std::size_t n = ts.rows(), c = ts.cols(), d = coords.cols();
  auto u = std::make_shared<Eigen::MatrixXd>(coords);
  auto mass = std::make_shared<std::vector<double>>(c, 0.0);
  auto first_pass = std::make_shared<bool>(true);
  const int sid = s.id;
  auto fwd = [=](ad::Tape& tp, int out) {
    const double* S = tp.val(sid).data.data();
    double* O = tp.mutable_val(out).data.data();
    std::fill(O, O + c * d, 0.0);
    for (std::size_t cc = 0; cc < c; ++cc) {
      double m = 0.0;
      for (std::size_t i = 0; i < n; ++i) m += S[i * c + cc];
      (*mass)[cc] = m;
    }
    int empties = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t cc = 0; cc < c; ++cc) {
        const double sv = S[i * c + cc];
        for (std::size_t k = 0; k < d; ++k) O[cc * d + k] += sv * (*u)(i, k);
      }
    for (std::size_t cc = 0; cc < c; ++cc) {
      if ((*mass)[cc] < 1e-12) {
        ++empties;
        for (std::size_t k = 0; k < d; ++k) O[cc * d + k] = 0.0;
      } else {
        for (std::size_t k = 0; k < d; ++k) O[cc * d + k] /= (*mass)[cc];
      }
    }
    if (*first_pass && empty_warnings) *empty_warnings += empties;
    *first_pass = false;
  };
  auto bwd = [=](ad::Tape& tp, int out) {
    if (!tp.requires_grad(sid)) return;
    const double* G = tp.grad_buf(out).data.data();
    const double* O = tp.val(out).data.data();
    double* GS = tp.grad_buf(sid).data.data();
    for (std::size_t cc = 0; cc < c; ++cc) {
      if ((*mass)[cc] < 1e-12) continue;
      const double inv_m = 1.0 / (*mass)[cc];
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t k = 0; k < d; ++k)
          acc += G[cc * d + k] * ((*u)(i, k) - O[cc * d + k]);
        GS[i * c + cc] += acc * inv_m;
      }
    }
  };
  return tape.make_node({c, d}, {s}, fwd, bwd);
}

ad::Value edge_diff_op(ad::Tape& tape, const ad::Value& coords,
                       std::shared_ptr<const std::vector<std::pair<int, int>>> edges) {
  const ad::Tensor& tc = coords.tensor();
  const std::size_t d = tc.cols();
  const std::size_t e_count = edges->size();
  const int cid = coords.id;
  auto fwd = [=](ad::Tape& tp, int out) {
    const double* C = tp.val(cid).data.data();
    double* O = tp.mutable_val(out).data.data();
    for (std::size_t e = 0; e < e_count; ++e) {
      const auto& [src, dst] = (*edges)[e];
      for (std::size_t k = 0; k < d; ++k) O[e * d + k] = C[dst * d + k] - C[src * d + k];
    }
  };
  auto bwd = [=](ad::Tape& tp, int out) {
    if (!tp.requires_grad(cid)) return;
    const double* G = tp.grad_buf(out).data.data();
    double* GC = tp.grad_buf(cid).data.data();
    for (std::size_t e = 0; e < e_count; ++e) {
      const auto& [src, dst] = (*edges)[e];
      for (std::size_t k = 0; k < d; ++k) {
        GC[dst * d + k] += G[e * d + k];
        GC[src * d + k] -= G[e * d + k];
      }
    }
  };
  return tape.make_node({e_count, d}, {coords}, fwd, bwd);
}

ad::Value laplacian_reg_op(ad::Tape& tape, const ad::Value& s,
                           std::shared_ptr<const std::vector<WeightedGraph::Edge>> edges) {
  const ad::Tensor& ts = s.tensor();
  const std::size_t c = ts.cols();
  const int sid = s.id;
  auto fwd = [=](ad::Tape& tp, int out) {
    const double* S = tp.val(sid).data.data();
    double total = 0.0;
    for (const auto& e : *edges) {
      double d2 = 0.0;
      for (std::size_t k = 0; k < c; ++k) {
        const double diff = S[e.i * c + k] - S[e.j * c + k];
        d2 += diff * diff;
      }
      total += 2.0 * e.w * d2;
    }
    tp.mutable_val(out).data[0] = total;
  };
  auto bwd = [=](ad::Tape& tp, int out) {
    if (!tp.requires_grad(sid)) return;
    const double g = tp.grad_buf(out).data[0];
    const double* S = tp.val(sid).data.data();
    double* GS = tp.grad_buf(sid).data.data();
    for (const auto& e : *edges) {
      for (std::size_t k = 0; k < c; ++k) {
        const double diff = S[e.i * c + k] - S[e.j * c + k];
        GS[e.i * c + k] += g * 4.0 * e.w * diff;
        GS[e.j * c + k] -= g * 4.0 * e.w * diff;
      }
    }
  };
  return tape.make_node({1, 1}, {s}, fwd, bwd);
}

}  // namespace surfpool
