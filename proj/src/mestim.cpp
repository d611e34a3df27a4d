#include "hdboot/mestim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>

#include "hdboot/error.hpp"
#include "hdboot/parallel.hpp"
#include "hdboot/stats.hpp"

namespace hdboot {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kFocTol = 1e-10;

void check_rank(const Eigen::ColPivHouseholderQR<MatrixXd>& qr, double rank_tol) {
  const Index p = qr.cols();
  if (qr.rows() < p) throw Error(ErrorCode::RankDeficient, "fewer rows than columns");
  const auto& r = qr.matrixR();
  double largest = 0.0;
  double smallest = std::numeric_limits<double>::infinity();
  for (Index j = 0; j < p; ++j) {
    largest = std::max(largest, std::abs(r(j, j)));
    smallest = std::min(smallest, std::abs(r(j, j)));
  }
  if (!(largest > 0.0) || smallest < rank_tol * largest) {
    throw Error(ErrorCode::RankDeficient,
                "design has numerical rank below " + std::to_string(p));
  }
}

double objective(const Loss& loss, const VectorXd& e, const VectorXd& w) {
  double total = 0.0;
  for (Index i = 0; i < e.size(); ++i) {
    if (w[i] != 0.0) total += w[i] * loss.rho(e[i]);
  }
  return total;
}

// sup-norm of the weighted score and the matching scale for the first-order test.
std::pair<double, double> score_norm(const MatrixXd& X, const Loss& loss, const VectorXd& e,
                                     const VectorXd& w) {
  VectorXd s(e.size());
  VectorXd a(e.size());
  for (Index i = 0; i < e.size(); ++i) {
    s[i] = w[i] * loss.psi(e[i]);
    a[i] = std::abs(s[i]);
  }
  const VectorXd g = X.transpose() * s;
  const VectorXd scale = X.cwiseAbs().transpose() * a;
  return {g.lpNorm<Eigen::Infinity>(), scale.lpNorm<Eigen::Infinity>()};
}

// Weighted least squares on rows with positive weight.
VectorXd weighted_ls(const MatrixXd& X, const VectorXd& y, const VectorXd& w, double rank_tol) {
  const Index n = X.rows();
  std::vector<Index> rows;
  rows.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    if (w[i] > 0.0) rows.push_back(i);
  }
  const Index m = static_cast<Index>(rows.size());
  if (m < X.cols()) throw Error(ErrorCode::RankDeficient, "too few weighted rows");
  MatrixXd Xw(m, X.cols());
  VectorXd yw(m);
  for (Index k = 0; k < m; ++k) {
    const double s = std::sqrt(w[rows[static_cast<std::size_t>(k)]]);
    Xw.row(k) = s * X.row(rows[static_cast<std::size_t>(k)]);
    yw[k] = s * y[rows[static_cast<std::size_t>(k)]];
  }
  Eigen::ColPivHouseholderQR<MatrixXd> qr(Xw);
  check_rank(qr, rank_tol);
  return qr.solve(yw);
}

// Solves X'WX b = X'Wy; returns false if the system is numerically singular.
bool irls_step(const MatrixXd& X, const VectorXd& y, const VectorXd& W, VectorXd& out) {
  const MatrixXd XtW = X.transpose() * W.asDiagonal();
  MatrixXd gram = XtW * X;
  const VectorXd rhs = XtW * y;
  Eigen::LDLT<MatrixXd> ldlt(gram);
  if (ldlt.info() == Eigen::Success) {
    const VectorXd d = ldlt.vectorD();
    const double dmax = d.maxCoeff();
    if (dmax > 0.0 && d.minCoeff() > 1e-14 * dmax) {
      out = ldlt.solve(rhs);
      return out.allFinite();
    }
  }
  MatrixXd Xs = W.cwiseSqrt().asDiagonal() * X;
  Eigen::ColPivHouseholderQR<MatrixXd> qr(Xs);
  if (qr.rank() < X.cols()) return false;
  out = qr.solve(W.cwiseSqrt().cwiseProduct(y));
  return out.allFinite();
}

// Vertex descent for the absolute losses. Starts from the p rows with the
// smallest residuals fitted exactly and swaps one row per step, each step being
// an exact line search along an edge of the L1 objective. Returns 1 when the
// final vertex satisfies the subgradient condition for `loss`, 0 when it is
// optimal for plain L1 only, -1 when no usable starting basis exists.
int l1_vertex_descent(const MatrixXd& X, const VectorXd& y, const VectorXd& w, const Loss& loss,
                      VectorXd& beta, VectorXd& e, int max_pivots, int& pivots,
                      std::vector<double>* trace) {
  const Index n = X.rows();
  const Index p = X.cols();
  std::vector<Index> order;
  for (Index i = 0; i < n; ++i) {
    if (w[i] > 0.0) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](Index a, Index b) { return std::abs(e[a]) < std::abs(e[b]); });
  // Greedy independent rows by Gram-Schmidt.
  std::vector<Index> basis;
  MatrixXd ortho(p, p);
  for (Index i : order) {
    if (static_cast<Index>(basis.size()) == p) break;
    VectorXd v = X.row(i).transpose();
    const double norm0 = v.norm();
    if (norm0 == 0.0) continue;
    for (int pass = 0; pass < 2; ++pass) {
      for (Index j = 0; j < static_cast<Index>(basis.size()); ++j) v -= ortho.col(j).dot(v) * ortho.col(j);
    }
    if (v.norm() < 1e-8 * norm0) continue;
    ortho.col(static_cast<Index>(basis.size())) = v.normalized();
    basis.push_back(i);
  }
  if (static_cast<Index>(basis.size()) < p) return -1;

  MatrixXd B(p, p);
  VectorXd yB(p);
  MatrixXd Binv;
  std::vector<char> in_basis(static_cast<std::size_t>(n), 0);
  auto refactor = [&]() {
    for (Index k = 0; k < p; ++k) {
      B.row(k) = X.row(basis[static_cast<std::size_t>(k)]);
      yB[k] = y[basis[static_cast<std::size_t>(k)]];
    }
    Eigen::PartialPivLU<MatrixXd> lu(B);
    if (!(lu.rcond() > 1e-13)) return false;
    Binv = lu.inverse();
    beta = lu.solve(yB);
    e = y - X * beta;
    for (Index k = 0; k < p; ++k) e[basis[static_cast<std::size_t>(k)]] = 0.0;
    return true;
  };
  if (!refactor()) return -1;
  for (Index i : basis) in_basis[static_cast<std::size_t>(i)] = 1;
  const Loss plain = Loss::absolute();
  double f = objective(plain, e, w);
  if (trace != nullptr && !trace->empty() && objective(loss, e, w) <= trace->back()) {
    trace->push_back(objective(loss, e, w));
  }

  auto subgradient = [&](const Loss& l) {
    VectorXd rest = VectorXd::Zero(p);
    for (Index i = 0; i < n; ++i) {
      if (in_basis[static_cast<std::size_t>(i)] || w[i] == 0.0) continue;
      rest.noalias() += (w[i] * l.psi(e[i])) * X.row(i).transpose();
    }
    return VectorXd(-(Binv.transpose() * rest));
  };

  std::vector<std::pair<double, Index>> breaks;
  for (pivots = 0; pivots < max_pivots; ++pivots) {
    const VectorXd g = subgradient(plain);
    Index leave = -1;
    double worst = 0.0;
    for (Index k = 0; k < p; ++k) {
      const double wk = w[basis[static_cast<std::size_t>(k)]];
      const double excess = std::abs(g[k]) - wk * (1.0 + 1e-11);
      if (excess > worst) {
        worst = excess;
        leave = k;
      }
    }
    if (leave < 0) {
      if (loss.kind() == LossKind::AbsoluteError) return 1;
      const VectorXd gl = subgradient(loss);
      for (Index k = 0; k < p; ++k) {
        if (std::abs(gl[k]) > w[basis[static_cast<std::size_t>(k)]] * (1.0 + 1e-9)) return 0;
      }
      return 1;
    }
    const double s = g[leave] > 0.0 ? -1.0 : 1.0;
    const VectorXd d = s * Binv.col(leave);
    const VectorXd a = X * d;
    double slope = w[basis[static_cast<std::size_t>(leave)]] - std::abs(g[leave]);
    breaks.clear();
    for (Index i = 0; i < n; ++i) {
      if (in_basis[static_cast<std::size_t>(i)] || w[i] == 0.0 || a[i] == 0.0) continue;
      const double t = e[i] / a[i];
      if (t > 0.0) breaks.emplace_back(t, i);
    }
    std::sort(breaks.begin(), breaks.end());
    Index enter = -1;
    double step = 0.0;
    for (const auto& [t, i] : breaks) {
      slope += 2.0 * w[i] * std::abs(a[i]);
      if (slope >= 0.0) {
        enter = i;
        step = t;
        break;
      }
    }
    if (enter < 0) return -1;
    beta += step * d;
    e -= step * a;
    const Index out = basis[static_cast<std::size_t>(leave)];
    in_basis[static_cast<std::size_t>(out)] = 0;
    in_basis[static_cast<std::size_t>(enter)] = 1;
    basis[static_cast<std::size_t>(leave)] = enter;
    e[enter] = 0.0;
    // Sherman-Morrison update of the basis inverse for the swapped row.
    const VectorXd v = X.row(enter).transpose() - X.row(out).transpose();
    const VectorXd col = Binv.col(leave);
    const double denom = 1.0 + v.dot(col);
    if (std::abs(denom) < 1e-10 || (pivots + 1) % 32 == 0) {
      if (!refactor()) return -1;
    } else {
      const Eigen::RowVectorXd vB = v.transpose() * Binv;
      Binv.noalias() -= (col / denom) * vB;
    }
    const double fn = objective(plain, e, w);
    if (fn > f * (1.0 + 1e-12) + 1e-300) {
      if (!refactor()) return -1;
    }
    f = objective(plain, e, w);
    if (trace != nullptr) {
      const double fl = objective(loss, e, w);
      if (trace->empty() || fl <= trace->back()) trace->push_back(fl);
    }
  }
  return -1;
}

// Newton step for Huber given the current inlier/outlier split. Returns 1 if the
// new point keeps the split (so it is the exact minimizer), 0 if it only yields
// a candidate, -1 on a singular inlier design.
int polish_huber(const MatrixXd& X, const VectorXd& y, const VectorXd& w, double k,
                 const VectorXd& e, VectorXd& beta_out) {
  const Index n = X.rows();
  const Index p = X.cols();
  VectorXd inlier_w = VectorXd::Zero(n);
  VectorXd shift = VectorXd::Zero(p);
  for (Index i = 0; i < n; ++i) {
    if (w[i] == 0.0) continue;
    if (std::abs(e[i]) <= k) {
      inlier_w[i] = w[i];
    } else {
      shift.noalias() += (w[i] * k * (e[i] > 0 ? 1.0 : -1.0)) * X.row(i).transpose();
    }
  }
  const MatrixXd XtW = X.transpose() * inlier_w.asDiagonal();
  const MatrixXd gram = XtW * X;
  Eigen::LDLT<MatrixXd> ldlt(gram);
  if (ldlt.info() != Eigen::Success) return -1;
  const VectorXd d = ldlt.vectorD();
  if (!(d.maxCoeff() > 0.0) || d.minCoeff() <= 1e-12 * d.maxCoeff()) return -1;
  beta_out = ldlt.solve(XtW * y + shift);
  if (!beta_out.allFinite()) return -1;
  const VectorXd r = y - X * beta_out;
  for (Index i = 0; i < n; ++i) {
    if (w[i] == 0.0) continue;
    const bool was_in = std::abs(e[i]) <= k;
    const bool is_in = std::abs(r[i]) <= k;
    if (was_in != is_in) return 0;
    if (!is_in && (r[i] > 0) != (e[i] > 0)) return 0;
  }
  return 1;
}

// Active-set finish for |x| + eta x^2 / 2. Rows in the zero set are held at
// e_i = 0 as equality constraints; the rest keep their signs, which makes the
// objective quadratic. Each round solves that problem, releases zero-set rows
// whose multipliers leave [-w_i, w_i], and moves along the segment with an
// exact piecewise-quadratic line search. Returns 1 at a verified optimum.
int polish_smoothed(const MatrixXd& X, const VectorXd& y, const VectorXd& w, double eta,
                    VectorXd& beta, VectorXd& e, int max_rounds, std::vector<double>* trace) {
  const Index n = X.rows();
  const Index p = X.cols();
  const double zero_tol = 1e-12 * std::max(1.0, y.lpNorm<Eigen::Infinity>());
  std::vector<char> zero(static_cast<std::size_t>(n), 0);
  VectorXd sgn = VectorXd::Zero(n);
  for (Index i = 0; i < n; ++i) {
    if (w[i] == 0.0) continue;
    if (std::abs(e[i]) <= zero_tol) {
      zero[static_cast<std::size_t>(i)] = 1;
    } else {
      sgn[i] = e[i] > 0.0 ? 1.0 : -1.0;
    }
  }
  const Loss loss = Loss::smoothed_absolute(eta);
  std::vector<std::pair<double, Index>> breaks;
  std::vector<char> saved_zero;
  VectorXd saved_sgn;
  bool just_released = false;
  bool single_release = false;
  for (int round = 0; round < max_rounds; ++round) {
    std::vector<Index> Z;
    for (Index i = 0; i < n; ++i) {
      if (zero[static_cast<std::size_t>(i)]) Z.push_back(i);
    }
    const Index z = static_cast<Index>(Z.size());
    MatrixXd M = MatrixXd::Zero(p + z, p + z);
    VectorXd rhs = VectorXd::Zero(p + z);
    for (Index i = 0; i < n; ++i) {
      if (w[i] == 0.0 || zero[static_cast<std::size_t>(i)]) continue;
      M.topLeftCorner(p, p).selfadjointView<Eigen::Lower>().rankUpdate(X.row(i).transpose(),
                                                                       eta * w[i]);
      rhs.head(p).noalias() += (w[i] * (eta * y[i] + sgn[i])) * X.row(i).transpose();
    }
    M.topLeftCorner(p, p).triangularView<Eigen::StrictlyUpper>() =
        M.topLeftCorner(p, p).transpose();
    for (Index k = 0; k < z; ++k) {
      M.block(0, p + k, p, 1) = X.row(Z[static_cast<std::size_t>(k)]).transpose();
      M.block(p + k, 0, 1, p) = X.row(Z[static_cast<std::size_t>(k)]);
      rhs[p + k] = y[Z[static_cast<std::size_t>(k)]];
    }
    Eigen::FullPivLU<MatrixXd> lu(M);
    if (lu.rank() < p + z) return 0;
    const VectorXd sol = lu.solve(rhs);
    if (!sol.allFinite()) return 0;
    const VectorXd d = sol.head(p) - beta;
    const VectorXd a = X * d;
    // phi'(t) = c0 + c1 t between breakpoints.
    double c0 = 0.0, c1 = 0.0, scale = 0.0;
    breaks.clear();
    for (Index i = 0; i < n; ++i) {
      if (w[i] == 0.0 || a[i] == 0.0) continue;
      double sigma = e[i] > 0.0 ? 1.0 : (e[i] < 0.0 ? -1.0 : 0.0);
      if (sigma == 0.0) sigma = a[i] > 0.0 ? -1.0 : 1.0;
      c0 += w[i] * (-a[i] * sigma - eta * a[i] * e[i]);
      c1 += w[i] * eta * a[i] * a[i];
      scale += w[i] * std::abs(a[i]) * (1.0 + eta * std::abs(e[i]));
      if (e[i] != 0.0) {
        const double t = e[i] / a[i];
        if (t > 0.0) breaks.emplace_back(t, i);
      }
    }
    const bool at_min = d.norm() <= 1e-12 * std::max(beta.norm(), 1.0) ||
                        !(c1 > 0.0) || c0 >= -1e-12 * scale;
    if (at_min && just_released) {
      // The release gave no descent: retry with the worst row alone.
      if (single_release) return 0;
      zero = saved_zero;
      sgn = saved_sgn;
      single_release = true;
      just_released = false;
      continue;
    }
    if (at_min) {
      // Minimizer for this zero set: release rows whose multipliers are
      // infeasible, all of them unless that failed to give descent before.
      Index worst = -1;
      double worst_excess = 1e-9;
      for (Index k = 0; k < z; ++k) {
        const double excess = std::abs(sol[p + k]) / w[Z[static_cast<std::size_t>(k)]] - 1.0;
        if (excess > worst_excess) {
          worst_excess = excess;
          worst = k;
        }
      }
      if (worst < 0) return 1;
      saved_zero = zero;
      saved_sgn = sgn;
      for (Index k = 0; k < z; ++k) {
        const Index i = Z[static_cast<std::size_t>(k)];
        if (single_release ? k != worst : std::abs(sol[p + k]) / w[i] - 1.0 <= 1e-9) continue;
        zero[static_cast<std::size_t>(i)] = 0;
        sgn[i] = sol[p + k] > 0.0 ? -1.0 : 1.0;
      }
      just_released = true;
      continue;
    }
    just_released = false;
    single_release = false;
    std::sort(breaks.begin(), breaks.end());
    double t_star = -1.0;
    Index hit = -1;
    for (const auto& [tb, i] : breaks) {
      if (-c0 / c1 <= tb) {
        t_star = -c0 / c1;
        break;
      }
      c0 += 2.0 * w[i] * std::abs(a[i]);
      if (c0 + c1 * tb >= 0.0) {
        t_star = tb;
        hit = i;
        break;
      }
    }
    if (t_star < 0.0) t_star = -c0 / c1;
    beta += t_star * d;
    e = y - X * beta;
    for (Index i = 0; i < n; ++i) {
      if (w[i] == 0.0) continue;
      if (zero[static_cast<std::size_t>(i)] || i == hit || std::abs(e[i]) <= zero_tol) {
        zero[static_cast<std::size_t>(i)] = 1;
        e[i] = 0.0;
        sgn[i] = 0.0;
      } else {
        sgn[i] = e[i] > 0.0 ? 1.0 : -1.0;
      }
    }
    if (trace != nullptr) trace->push_back(objective(loss, e, w));
  }
  return 0;
}

FitResult irls(const MatrixXd& X, const VectorXd& y, const VectorXd& w, const Loss& loss,
               const FitOptions& opts, VectorXd beta) {
  FitResult res;
  res.loss = loss;
  VectorXd e = y - X * beta;
  double f = objective(loss, e, w);
  std::vector<double>* trace = opts.record_objective ? &res.objective_trace : nullptr;
  if (trace != nullptr) trace->push_back(f);
  const bool absolute = loss.kind() == LossKind::AbsoluteError ||
                        loss.kind() == LossKind::SmoothedAbsolute;
  const bool huber = loss.kind() == LossKind::Huber;
  bool converged = false;
  bool vertex_tried = false;
  bool stalled = false;
  int it = 0;
  VectorXd W(X.rows());
  VectorXd candidate;
  double rel = std::numeric_limits<double>::infinity();
  while (it < opts.max_iter) {
    // Exact active-set finish once IRLS has settled down.
    if (absolute && !vertex_tried && (rel < 1e-1 || it >= 5 || stalled)) {
      vertex_tried = true;
      VectorXd b = beta;
      VectorXd eb = e;
      int pivots = 0;
      // The vertex path only tracks the objective of plain L1.
      const int status = l1_vertex_descent(
          X, y, w, loss, b, eb, opts.max_iter * 20, pivots,
          loss.kind() == LossKind::AbsoluteError ? trace : nullptr);
      it += pivots;
      double fb = status >= 0 ? objective(loss, eb, w) : f;
      int final_status = status;
      if (status != 1 && loss.kind() == LossKind::SmoothedAbsolute) {
        // Continue from whichever of the vertex and the IRLS iterate is lower.
        if (status < 0 || fb > f) {
          b = beta;
          eb = e;
        } else if (trace != nullptr) {
          trace->push_back(fb);
        }
        final_status = polish_smoothed(X, y, w, loss.param(), b, eb,
                                       4 * static_cast<int>(X.cols()) + 50, trace);
        fb = objective(loss, eb, w);
      }
      if (final_status == 1 || (final_status == 0 && fb <= f)) {
        rel = (b - beta).norm() / std::max(b.norm(), 1.0);
        beta = b;
        e = eb;
        f = fb;
        if (final_status == 1) {
          converged = true;
          break;
        }
      }
    }
    ++it;
    if (huber && rel < 1e-3) {
      const int status = polish_huber(X, y, w, loss.param(), e, candidate);
      if (status >= 0) {
        const VectorXd ec = y - X * candidate;
        const double fc = objective(loss, ec, w);
        if (status == 1 || fc <= f) {
          rel = (candidate - beta).norm() / std::max(candidate.norm(), 1.0);
          beta = candidate;
          e = ec;
          f = status == 1 ? fc : std::min(fc, f);
          if (trace != nullptr) trace->push_back(f);
          if (status == 1) {
            converged = true;
            break;
          }
          continue;
        }
      }
    }
    for (Index i = 0; i < X.rows(); ++i) W[i] = w[i] == 0.0 ? 0.0 : w[i] * loss.irls_weight(e[i]);
    if (!irls_step(X, y, W, candidate)) {
      throw Error(ErrorCode::RankDeficient, "weighted design became singular");
    }
    VectorXd step = candidate - beta;
    VectorXd next = candidate;
    VectorXd en = y - X * next;
    double fn = objective(loss, en, w);
    int halvings = 0;
    while (fn > f && halvings < 40) {
      step *= 0.5;
      next = beta + step;
      en = y - X * next;
      fn = objective(loss, en, w);
      ++halvings;
    }
    if (fn > f) {
      // No descent left at working precision.
      if (absolute && !vertex_tried) {
        stalled = true;
        continue;
      }
      if (!absolute) {
        const auto [g, scale] = score_norm(X, loss, e, w);
        converged = g <= kFocTol * std::max(scale, 1e-300);
      }
      break;
    }
    rel = step.norm() / std::max(next.norm(), 1.0);
    const double decrease = f - fn;
    beta = next;
    e = en;
    const double f_old = f;
    f = fn;
    if (trace != nullptr) trace->push_back(f);
    if (rel < opts.beta_tol && decrease <= opts.objective_tol * std::max(f_old, 1.0)) {
      if (absolute && !vertex_tried) {
        stalled = true;
        continue;
      }
      converged = true;
      break;
    }
  }
  if (!converged && !absolute) {
    const auto [g, scale] = score_norm(X, loss, e, w);
    converged = g <= kFocTol * std::max(scale, 1e-300);
  }
  res.beta_hat = std::move(beta);
  res.residuals = std::move(e);
  res.iterations = it;
  res.converged = converged;
  res.objective = f;
  res.gradient_norm = score_norm(X, loss, res.residuals, w).first;
  return res;
}

void check_inputs(const MatrixXd& X, const VectorXd& y, const VectorXd& w) {
  if (X.rows() != y.size() || w.size() != y.size()) {
    throw Error(ErrorCode::InvalidArgument, "X, y and weights must have matching rows");
  }
  if (X.cols() < 1) throw Error(ErrorCode::InvalidArgument, "design needs at least one column");
  for (Index i = 0; i < w.size(); ++i) {
    if (!(w[i] >= 0.0) || !std::isfinite(w[i])) {
      throw Error(ErrorCode::InvalidArgument, "weights must be finite and nonnegative");
    }
  }
}

FitResult fit_impl(const MatrixXd& X, const VectorXd& y, const VectorXd& w, const Loss& loss,
                   const FitOptions& opts, const VectorXd* warm_start) {
  check_inputs(X, y, w);
  VectorXd start = weighted_ls(X, y, w, opts.rank_tol);
  if (loss.kind() == LossKind::SquaredError) {
    FitResult res;
    res.loss = loss;
    res.beta_hat = std::move(start);
    res.residuals = y - X * res.beta_hat;
    res.objective = objective(loss, res.residuals, w);
    res.iterations = 1;
    res.converged = true;
    res.gradient_norm = score_norm(X, loss, res.residuals, w).first;
    if (opts.record_objective) res.objective_trace.push_back(res.objective);
    return res;
  }
  if (warm_start != nullptr) {
    if (warm_start->size() != X.cols()) {
      throw Error(ErrorCode::InvalidArgument, "warm start has the wrong length");
    }
    start = *warm_start;
  }
  return irls(X, y, w, loss, opts, std::move(start));
}

}  // namespace

void Dataset::validate() const {
  if (X.rows() != y.size()) throw Error(ErrorCode::InvalidArgument, "X and y row counts differ");
  if (p() < 1) throw Error(ErrorCode::InvalidArgument, "design needs at least one column");
  if (n() <= p()) throw Error(ErrorCode::InvalidArgument, "need more observations than columns");
  if (!X.allFinite() || !y.allFinite()) {
    throw Error(ErrorCode::InvalidArgument, "data contain non-finite values");
  }
}

LeastSquaresFactor::LeastSquaresFactor(const MatrixXd& X, double rank_tol) : qr_(X) {
  check_rank(qr_, rank_tol);
}

VectorXd LeastSquaresFactor::solve(const VectorXd& y) const { return qr_.solve(y); }

VectorXd LeastSquaresFactor::hat_diagonal() const {
  const MatrixXd Q = qr_.householderQ() * MatrixXd::Identity(n(), p());
  return Q.rowwise().squaredNorm();
}

VectorXd LeastSquaresFactor::gram_inverse_times(const VectorXd& v) const {
  // (X'X)^{-1} = P R^{-1} R^{-T} P'
  const auto R = qr_.matrixR().topLeftCorner(p(), p()).triangularView<Eigen::Upper>();
  VectorXd u = qr_.colsPermutation().transpose() * v;
  R.transpose().solveInPlace(u);
  R.solveInPlace(u);
  return qr_.colsPermutation() * u;
}

VectorXd LeastSquaresFactor::contrast_weights(const VectorXd& v) const {
  // X P R^{-1} R^{-T} P' v = Q R^{-T} P' v
  const auto R = qr_.matrixR().topLeftCorner(p(), p()).triangularView<Eigen::Upper>();
  VectorXd u = qr_.colsPermutation().transpose() * v;
  R.transpose().solveInPlace(u);
  VectorXd full = VectorXd::Zero(n());
  full.head(p()) = u;
  return qr_.householderQ() * full;
}

MatrixXd LeastSquaresFactor::pseudo_inverse() const {
  // (X'X)^{-1} X' = P R^{-1} Q1'
  const auto R = qr_.matrixR().topLeftCorner(p(), p()).triangularView<Eigen::Upper>();
  MatrixXd Qt = (qr_.householderQ() * MatrixXd::Identity(n(), p())).transpose();
  R.solveInPlace(Qt);
  return qr_.colsPermutation() * Qt;
}

FitResult fit(const Dataset& ds, const Loss& loss, const FitOptions& opts) {
  ds.validate();
  return fit_impl(ds.X, ds.y, VectorXd::Ones(ds.n()), loss, opts, nullptr);
}

FitResult fit_weighted(const MatrixXd& X, const VectorXd& y, const VectorXd& weights,
                       const Loss& loss, const FitOptions& opts, const VectorXd* warm_start) {
  return fit_impl(X, y, weights, loss, opts, warm_start);
}

FitResult fit_from(const MatrixXd& X, const VectorXd& y, const Loss& loss,
                   const VectorXd& warm_start, const FitOptions& opts) {
  return fit_impl(X, y, VectorXd::Ones(X.rows()), loss, opts, &warm_start);
}

VectorXd hat_diagonal(const Dataset& ds) {
  ds.validate();
  return LeastSquaresFactor(ds.X).hat_diagonal();
}

std::vector<FitResult> loo_fits(const Dataset& ds, const Loss& loss, const FitOptions& opts,
                                int threads) {
  ds.validate();
  const Index n = ds.n();
  const Index p = ds.p();
  if (n - 1 <= p) throw Error(ErrorCode::InvalidArgument, "leave-one-out needs n - 1 > p");
  std::vector<FitResult> out(static_cast<std::size_t>(n));
  auto strip = [n](const VectorXd& v, Index i) {
    VectorXd s(n - 1);
    s.head(i) = v.head(i);
    s.tail(n - 1 - i) = v.tail(n - 1 - i);
    return s;
  };
  if (loss.kind() == LossKind::SquaredError) {
    const LeastSquaresFactor factor(ds.X, opts.rank_tol);
    const VectorXd beta = factor.solve(ds.y);
    const VectorXd e = ds.y - ds.X * beta;
    const VectorXd h = factor.hat_diagonal();
    const MatrixXd pinv = factor.pseudo_inverse();
    for (Index i = 0; i < n; ++i) {
      if (1.0 - h[i] < 1e-10) {
        throw Error(ErrorCode::RankDeficient,
                    "leave-one-out design loses rank at row " + std::to_string(i));
      }
      FitResult& r = out[static_cast<std::size_t>(i)];
      r.loss = loss;
      r.beta_hat = beta - pinv.col(i) * (e[i] / (1.0 - h[i]));
      r.residuals = strip(ds.y - ds.X * r.beta_hat, i);
      r.objective = 0.5 * r.residuals.squaredNorm();
      r.iterations = 1;
      r.converged = true;
      VectorXd w = VectorXd::Ones(n);
      w[i] = 0.0;
      r.gradient_norm = score_norm(ds.X, loss, ds.y - ds.X * r.beta_hat, w).first;
    }
    return out;
  }
  const FitResult full = fit(ds, loss, opts);
  parallel_for(static_cast<std::size_t>(n), threads, [&](std::size_t k) {
    const Index i = static_cast<Index>(k);
    VectorXd w = VectorXd::Ones(n);
    w[i] = 0.0;
    FitResult r = fit_impl(ds.X, ds.y, w, loss, opts, &full.beta_hat);
    r.residuals = strip(r.residuals, i);
    out[k] = std::move(r);
  });
  return out;
}

PredictedErrors predicted_errors(const Dataset& ds, const Loss& loss, const FitOptions& opts,
                                 int threads) {
  ds.validate();
  const Index n = ds.n();
  PredictedErrors pe;
  pe.values.resize(n);
  if (loss.kind() == LossKind::SquaredError) {
    if (n - 1 <= ds.p()) throw Error(ErrorCode::InvalidArgument, "leave-one-out needs n - 1 > p");
    const LeastSquaresFactor factor(ds.X, opts.rank_tol);
    const VectorXd e = ds.y - ds.X * factor.solve(ds.y);
    const VectorXd h = factor.hat_diagonal();
    for (Index i = 0; i < n; ++i) {
      if (1.0 - h[i] < 1e-10) {
        throw Error(ErrorCode::RankDeficient,
                    "leave-one-out design loses rank at row " + std::to_string(i));
      }
      pe.values[i] = e[i] / (1.0 - h[i]);
    }
  } else {
    const auto fits = loo_fits(ds, loss, opts, threads);
    for (Index i = 0; i < n; ++i) {
      pe.values[i] = ds.y[i] - ds.X.row(i).dot(fits[static_cast<std::size_t>(i)].beta_hat);
    }
  }
  pe.sigma_hat_ls = std::sqrt(sigma_hat_ls(ds));
  pe.variance = sample_variance(std::span<const double>(pe.values.data(), pe.values.size()));
  if (!(pe.variance > 0.0)) {
    throw Error(ErrorCode::DegenerateScale, "predicted errors have zero variance");
  }
  pe.standardized = pe.values * (pe.sigma_hat_ls / std::sqrt(pe.variance));
  return pe;
}

double sigma_hat_ls(const Dataset& ds) {
  ds.validate();
  const LeastSquaresFactor factor(ds.X);
  const VectorXd e = ds.y - ds.X * factor.solve(ds.y);
  return e.squaredNorm() / static_cast<double>(ds.n() - ds.p());
}

}  // namespace hdboot
