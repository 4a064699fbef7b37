#pragma once

// Strictly convex QP   min 1/2 x'Hx + g'x   s.t.  A x <= b
// solved with the Goldfarb-Idnani dual active-set method. The active set is
// kept as a QR-like factorisation (J, R) updated with Givens rotations.
// Pivoting is deterministic: the most violated constraint is added next, ties
// going to the lowest row index.

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace eemp {

struct QpProblem {
  Eigen::MatrixXd hessian;      // n x n, symmetric positive definite
  Eigen::VectorXd gradient;     // n
  Eigen::MatrixXd constraints;  // m x n
  Eigen::VectorXd bounds;       // m

  Eigen::Index num_variables() const { return gradient.size(); }
  Eigen::Index num_constraints() const { return bounds.size(); }
  double objective(const Eigen::VectorXd& x) const { return 0.5 * x.dot(hessian * x) + gradient.dot(x); }
};

struct QpSolution {
  Eigen::VectorXd x;
  Eigen::VectorXd multipliers;  // one per constraint row, >= 0
  std::vector<int> active;      // active rows in order of addition
  double objective = 0.0;
  int iterations = 0;
  double kkt_residual = 0.0;       // ||Hx + g + A' lambda||_inf
  double primal_violation = 0.0;   // max(0, max(Ax - b))
};

class QpError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class QpInfeasible : public QpError {
 public:
  using QpError::QpError;
};

class QpMaxIterations : public QpError {
 public:
  using QpError::QpError;
};

struct QpOptions {
  int max_iterations = 2000;
  double feasibility_tol = 1e-11;
};

namespace detail {

class DualActiveSet {
 public:
  DualActiveSet(const QpProblem& qp, const QpOptions& opt) : qp_(qp), opt_(opt) {
    n_ = qp.num_variables();
    m_ = qp.num_constraints();
    if (qp.hessian.rows() != n_ || qp.hessian.cols() != n_) throw QpError("qp: Hessian shape mismatch");
    if (qp.constraints.rows() != m_ || (m_ > 0 && qp.constraints.cols() != n_))
      throw QpError("qp: constraint shape mismatch");
  }

  QpSolution solve() {
    Eigen::LLT<Eigen::MatrixXd> llt(qp_.hessian);
    if (llt.info() != Eigen::Success) throw QpError("qp: Hessian is not positive definite");
    J_ = llt.matrixU().solve(Eigen::MatrixXd::Identity(n_, n_));
    R_ = Eigen::MatrixXd::Zero(n_, n_);
    x_ = -llt.solve(qp_.gradient);
    u_ = Eigen::VectorXd::Zero(n_ + 1);
    active_.assign(n_ + 1, -1);
    in_active_.assign(m_, false);
    excluded_.assign(m_, false);
    d_.resize(n_);
    z_.resize(n_);
    r_.resize(n_ + 1);
    iq_ = 0;
    r_norm_ = 1.0;

    int iter = 0;
    const double inf = std::numeric_limits<double>::infinity();
    while (true) {
      if (++iter > opt_.max_iterations) throw QpMaxIterations("qp: iteration limit reached");

      // Step 1: most violated inactive constraint.
      int ip = -1;
      double worst = -opt_.feasibility_tol;
      for (int i = 0; i < m_; ++i) {
        if (in_active_[i] || excluded_[i]) continue;
        const double s = slack(i);
        if (s < worst) {
          worst = s;
          ip = i;
        }
      }
      if (ip < 0) break;

      const Eigen::VectorXd np = -qp_.constraints.row(ip).transpose();
      const Eigen::VectorXd x_old = x_;
      const Eigen::VectorXd u_old = u_;
      const std::vector<int> active_old = active_;
      const int iq_old = iq_;
      u_(iq_) = 0.0;
      active_[iq_] = ip;
      double s_ip = slack(ip);

      // Step 2: move until constraint ip becomes satisfied.
      while (true) {
        if (++iter > opt_.max_iterations) throw QpMaxIterations("qp: iteration limit reached");
        d_ = J_.transpose() * np;
        z_ = J_.rightCols(n_ - iq_) * d_.tail(n_ - iq_);
        for (int i = iq_ - 1; i >= 0; --i) {
          double sum = d_(i);
          for (int j = i + 1; j < iq_; ++j) sum -= R_(i, j) * r_(j);
          r_(i) = sum / R_(i, i);
        }

        // Partial (dual) step length.
        double t1 = inf;
        int drop = -1;
        for (int k = 0; k < iq_; ++k) {
          if (r_(k) > 0.0) {
            const double ratio = u_(k) / r_(k);
            if (ratio < t1) {
              t1 = ratio;
              drop = active_[k];
            }
          }
        }
        // Full (primal) step length.
        double t2 = inf;
        const double znp = z_.dot(np);
        if (z_.lpNorm<Eigen::Infinity>() > std::numeric_limits<double>::epsilon() && znp > 0.0)
          t2 = -s_ip / znp;
        const double t = std::min(t1, t2);
        if (t >= inf) throw QpInfeasible("qp: constraints are infeasible");

        if (t2 >= inf) {
          for (int k = 0; k < iq_; ++k) u_(k) -= t * r_(k);
          u_(iq_) += t;
          remove(drop);
          continue;
        }

        x_ += t * z_;
        for (int k = 0; k < iq_; ++k) u_(k) -= t * r_(k);
        u_(iq_) += t;

        if (t == t2) {
          if (!add()) {
            // Linearly dependent with the active set: roll back and skip it.
            x_ = x_old;
            u_ = u_old;
            active_ = active_old;
            rebuild(iq_old);
            excluded_[ip] = true;
          } else {
            in_active_[ip] = true;
          }
          break;
        }
        remove(drop);
        s_ip = slack(ip);
      }
    }

    QpSolution sol;
    sol.x = x_;
    sol.iterations = iter;
    sol.multipliers = Eigen::VectorXd::Zero(m_);
    for (int k = 0; k < iq_; ++k) {
      sol.multipliers(active_[k]) = std::max(0.0, u_(k));
      sol.active.push_back(active_[k]);
    }
    sol.objective = qp_.objective(x_);
    Eigen::VectorXd grad = qp_.hessian * x_ + qp_.gradient;
    if (m_ > 0) {
      grad += qp_.constraints.transpose() * sol.multipliers;
      sol.primal_violation = std::max(0.0, (qp_.constraints * x_ - qp_.bounds).maxCoeff());
    }
    sol.kkt_residual = n_ > 0 ? grad.lpNorm<Eigen::Infinity>() : 0.0;
    return sol;
  }

 private:
  double slack(int i) const { return qp_.bounds(i) - qp_.constraints.row(i).dot(x_); }

  // Append the pending constraint (direction d_) to the factorisation.
  bool add() {
    for (int j = n_ - 1; j >= iq_ + 1; --j) {
      double cc = d_(j - 1), ss = d_(j);
      const double h = std::hypot(cc, ss);
      if (h == 0.0) continue;
      d_(j) = 0.0;
      ss /= h;
      cc /= h;
      if (cc < 0.0) {
        cc = -cc;
        ss = -ss;
        d_(j - 1) = -h;
      } else {
        d_(j - 1) = h;
      }
      const double xny = ss / (1.0 + cc);
      for (int k = 0; k < n_; ++k) {
        const double t1 = J_(k, j - 1), t2 = J_(k, j);
        J_(k, j - 1) = t1 * cc + t2 * ss;
        J_(k, j) = xny * (t1 + J_(k, j - 1)) - t2;
      }
    }
    ++iq_;
    for (int i = 0; i < iq_; ++i) R_(i, iq_ - 1) = d_(i);
    if (std::abs(d_(iq_ - 1)) <= std::numeric_limits<double>::epsilon() * r_norm_) {
      --iq_;
      return false;
    }
    r_norm_ = std::max(r_norm_, std::abs(d_(iq_ - 1)));
    return true;
  }

  void remove(int row) {
    int qq = -1;
    for (int i = 0; i < iq_; ++i)
      if (active_[i] == row) {
        qq = i;
        break;
      }
    if (qq < 0) throw QpError("qp: internal error, constraint not active");
    in_active_[row] = false;
    for (int i = qq; i < iq_ - 1; ++i) {
      active_[i] = active_[i + 1];
      u_(i) = u_(i + 1);
      R_.col(i) = R_.col(i + 1);
    }
    active_[iq_ - 1] = active_[iq_];
    u_(iq_ - 1) = u_(iq_);
    active_[iq_] = -1;
    u_(iq_) = 0.0;
    for (int j = 0; j < iq_; ++j) R_(j, iq_ - 1) = 0.0;
    --iq_;
    if (iq_ == 0) return;
    for (int j = qq; j < iq_; ++j) {
      double cc = R_(j, j), ss = R_(j + 1, j);
      const double h = std::hypot(cc, ss);
      if (h == 0.0) continue;
      cc /= h;
      ss /= h;
      R_(j + 1, j) = 0.0;
      if (cc < 0.0) {
        R_(j, j) = -h;
        cc = -cc;
        ss = -ss;
      } else {
        R_(j, j) = h;
      }
      const double xny = ss / (1.0 + cc);
      for (int k = j + 1; k < iq_; ++k) {
        const double t1 = R_(j, k), t2 = R_(j + 1, k);
        R_(j, k) = t1 * cc + t2 * ss;
        R_(j + 1, k) = xny * (t1 + R_(j, k)) - t2;
      }
      for (int k = 0; k < n_; ++k) {
        const double t1 = J_(k, j), t2 = J_(k, j + 1);
        J_(k, j) = t1 * cc + t2 * ss;
        J_(k, j + 1) = xny * (J_(k, j) + t1) - t2;
      }
    }
  }

  // Recompute the factorisation for the first `count` entries of active_.
  void rebuild(int count) {
    Eigen::LLT<Eigen::MatrixXd> llt(qp_.hessian);
    J_ = llt.matrixU().solve(Eigen::MatrixXd::Identity(n_, n_));
    R_.setZero();
    iq_ = 0;
    r_norm_ = 1.0;
    std::fill(in_active_.begin(), in_active_.end(), false);
    const std::vector<int> rows(active_.begin(), active_.begin() + count);
    for (int row : rows) {
      d_ = J_.transpose() * (-qp_.constraints.row(row).transpose());
      active_[iq_] = row;
      if (add()) in_active_[row] = true;
    }
    for (int k = iq_; k <= n_; ++k) active_[k] = -1;
  }

  const QpProblem& qp_;
  QpOptions opt_;
  int n_ = 0, m_ = 0, iq_ = 0;
  double r_norm_ = 1.0;
  Eigen::MatrixXd J_, R_;
  Eigen::VectorXd x_, u_, d_, z_, r_;
  std::vector<int> active_;
  std::vector<bool> in_active_, excluded_;
};

}  // namespace detail

inline QpSolution solve_qp(const QpProblem& qp, const QpOptions& options = {}) {
  return detail::DualActiveSet(qp, options).solve();
}

}  // namespace eemp
