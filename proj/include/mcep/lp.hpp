#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "mcep/common.hpp"

namespace mcep {

enum class LpStatus { kOptimal, kInfeasible, kUnbounded, kIterLimit };

enum class VarStatus : std::uint8_t { kBasic, kAtLower, kAtUpper, kFree };

/// Linear program over bounded variables with range rows lo <= a.x <= hi.
/// Equality rows have lo == hi; one-sided rows use +-infinity.
struct LpModel {
  enum class Sense { kMin, kMax };
  Sense sense = Sense::kMin;

  std::vector<double> obj, lb, ub;
  std::vector<std::uint8_t> is_int;
  std::vector<std::string> var_names;

  struct Row {
    double lo, hi;
  };
  std::vector<Row> rows;
  std::vector<std::vector<std::pair<int, double>>> row_terms;
  std::vector<std::string> row_names;

  int add_var(double lb_, double ub_, double obj_, const std::string& name = "") {
    require(!(lb_ > ub_), "add_var: empty bound interval");
    obj.push_back(obj_);
    lb.push_back(lb_);
    ub.push_back(ub_);
    is_int.push_back(0);
    var_names.push_back(name.empty() ? "x" + std::to_string(obj.size() - 1) : name);
    return static_cast<int>(obj.size()) - 1;
  }

  int add_int_var(double lb_, double ub_, double obj_, const std::string& name = "") {
    int j = add_var(lb_, ub_, obj_, name);
    is_int[static_cast<std::size_t>(j)] = 1;
    return j;
  }

  int add_row(double lo, double hi, std::vector<std::pair<int, double>> terms,
              const std::string& name = "") {
    require(!(lo > hi), "add_row: empty activity interval");
    rows.push_back({lo, hi});
    row_terms.push_back(std::move(terms));
    row_names.push_back(name.empty() ? "r" + std::to_string(rows.size() - 1) : name);
    return static_cast<int>(rows.size()) - 1;
  }

  int add_le(double rhs, std::vector<std::pair<int, double>> terms, const std::string& name = "") {
    return add_row(-kInf, rhs, std::move(terms), name);
  }
  int add_ge(double rhs, std::vector<std::pair<int, double>> terms, const std::string& name = "") {
    return add_row(rhs, kInf, std::move(terms), name);
  }
  int add_eq(double rhs, std::vector<std::pair<int, double>> terms, const std::string& name = "") {
    return add_row(rhs, rhs, std::move(terms), name);
  }

  std::size_t num_vars() const { return obj.size(); }
  std::size_t num_rows() const { return rows.size(); }
};

struct Basis {
  std::vector<int> basic;               // size m, column indices (structural or logical)
  std::vector<VarStatus> status;        // size n + m
  bool valid() const { return !basic.empty(); }
};

/// KKT residuals of a claimed-optimal basic solution; all should be ~0.
struct LpResiduals {
  double primal = 0.0;  // max bound/row violation
  double dual = 0.0;    // max wrong-signed reduced cost, relative to |c|
  double gap = 0.0;     // |primal obj - dual obj| / (1 + |primal obj|)
};

struct LpSolution {
  LpStatus status = LpStatus::kIterLimit;
  double obj = 0.0;
  std::vector<double> x;              // structural values
  std::vector<double> row_activity;   // a.x per row
  std::vector<double> duals;          // per row, user-sense convention
  std::vector<double> reduced_costs;  // per structural, user-sense convention
  Basis basis;
  LpResiduals residuals;
  long iterations = 0;
};

struct SimplexParams {
  long max_iters = 2000000;
  double feas_tol = 1e-9;     // primal feasibility, scaled by 1 + |bound|
  double opt_tol = 1e-9;      // dual feasibility, scaled by 1 + |c_j|
  double pivot_tol = 1e-9;    // smallest acceptable pivot magnitude
  int refactor_every = 100;   // pivots between explicit re-inversions
  long stall_limit = 1000;    // non-improving pivots before Bland's rule engages
};

/// Bounded-variable revised simplex with a dense explicit basis inverse.
/// Internal convention: minimize c.x subject to A.x - r = 0 where the logical
/// variable r_i carries the row bounds; phase 1 uses singleton artificials.
/// The object survives bound changes between solves so branch-and-bound can
/// re-solve warm with the dual simplex.
class Simplex {
 public:
  explicit Simplex(const LpModel& model, SimplexParams params = {})
      : params_(params), sense_max_(model.sense == LpModel::Sense::kMax) {
    n_ = model.num_vars();
    m_ = model.num_rows();
    lb_ = model.lb;
    ub_ = model.ub;
    cost_.assign(n_ + m_, 0.0);
    for (std::size_t j = 0; j < n_; ++j) cost_[j] = sense_max_ ? -model.obj[j] : model.obj[j];
    for (const auto& row : model.rows) {
      lb_.push_back(row.lo);
      ub_.push_back(row.hi);
    }
    // CSC of the structural block, duplicate terms combined.
    std::vector<std::size_t> count(n_, 0);
    for (const auto& terms : model.row_terms)
      for (const auto& [j, v] : terms) {
        require(j >= 0 && static_cast<std::size_t>(j) < n_, "row term references unknown column");
        (void)v;
        ++count[static_cast<std::size_t>(j)];
      }
    col_ptr_.assign(n_ + 1, 0);
    for (std::size_t j = 0; j < n_; ++j) col_ptr_[j + 1] = col_ptr_[j] + count[j];
    row_idx_.assign(col_ptr_[n_], 0);
    val_.assign(col_ptr_[n_], 0.0);
    std::vector<std::size_t> fill(col_ptr_.begin(), col_ptr_.end() - 1);
    for (std::size_t i = 0; i < m_; ++i)
      for (const auto& [j, v] : model.row_terms[i]) {
        std::size_t at = fill[static_cast<std::size_t>(j)]++;
        row_idx_[at] = i;
        val_[at] = v;
      }
    for (std::size_t j = 0; j < n_; ++j) {  // combine duplicates within a column
      std::size_t lo = col_ptr_[j], hi = col_ptr_[j + 1], w = lo;
      std::vector<std::pair<std::size_t, double>> terms;
      for (std::size_t k = lo; k < hi; ++k) terms.emplace_back(row_idx_[k], val_[k]);
      std::sort(terms.begin(), terms.end());
      for (std::size_t k = 0; k < terms.size(); ++k) {
        if (k + 1 < terms.size() && terms[k + 1].first == terms[k].first) {
          terms[k + 1].second += terms[k].second;
          continue;
        }
        row_idx_[w] = terms[k].first;
        val_[w] = terms[k].second;
        ++w;
      }
      col_trim_.push_back(w);
    }
    vstat_.assign(n_ + m_, VarStatus::kAtLower);
    basic_.assign(m_, 0);
    has_basis_ = false;
  }

  std::size_t num_vars() const { return n_; }
  std::size_t num_rows() const { return m_; }

  void set_bounds(std::size_t j, double lo, double hi) {
    require(j < n_, "set_bounds: unknown column");
    require(!(lo > hi), "set_bounds: empty interval");
    lb_[j] = lo;
    ub_[j] = hi;
  }
  double lower(std::size_t j) const { return lb_[j]; }
  double upper(std::size_t j) const { return ub_[j]; }

  void set_basis(const Basis& b) {
    require(b.basic.size() == m_ && b.status.size() == n_ + m_, "set_basis: wrong shape");
    for (int k : b.basic)
      require(k >= 0 && static_cast<std::size_t>(k) < n_ + m_,
              "set_basis: basis references a column outside the model");
    basic_ = b.basic;
    for (std::size_t j = 0; j < n_ + m_; ++j) vstat_[j] = b.status[j];
    has_basis_ = true;
  }

  /// Full solve: warm from the current basis when one exists, else cold start.
  LpSolution solve() {
    iters_ = 0;
    if (!prepare()) return infeasible_result();
    if (!primal_feasible_now()) {
      int ph1 = phase1();
      if (ph1 <= 0) {
        // A failed or aborted phase 1 leaves live artificial columns behind;
        // they must never act as free relaxation columns in a later warm
        // start, so the next use rebuilds from the logical basis.
        has_basis_ = false;
        return ph1 < 0 ? limit_result() : infeasible_result();
      }
    }
    load_phase2_costs();
    int st = primal_loop();
    if (st < 0) return limit_result();
    if (st == 0) return unbounded_result();
    return extract(LpStatus::kOptimal);
  }

  /// Dual simplex from the current basis after bound changes. Falls back to a
  /// cold solve when the basis is not dual feasible or numerics degrade.
  /// Bound changes never alter the basis matrix, so the existing inverse is
  /// reused; extract() re-inverts if the measured residuals reveal drift.
  LpSolution resolve_dual() {
    if (!has_basis_) return solve();
    iters_ = 0;
    if (binv_.empty() || pivots_since_refactor_ >= params_.refactor_every) {
      if (!refactor()) return solve();
    }
    load_phase2_costs();
    snap_nonbasic_to_bounds();
    refresh_xb();
    if (!dual_feasible_now()) return solve();
    int st = dual_loop();
    if (st < 0) return limit_result();
    if (st == 0) return infeasible_result();
    // Dual simplex ends primal feasible; polish with primal iterations in case
    // bound flips disturbed optimality.
    int st2 = primal_loop();
    if (st2 < 0) return limit_result();
    if (st2 == 0) return unbounded_result();
    return extract(LpStatus::kOptimal);
  }

 private:
  // --- data -----------------------------------------------------------------
  SimplexParams params_;
  bool sense_max_ = false;
  std::size_t n_ = 0, m_ = 0;
  std::vector<double> cost_;          // phase-2 costs, internal min sense; logicals 0
  std::vector<double> lb_, ub_;       // structurals then logicals
  std::vector<std::size_t> col_ptr_, row_idx_, col_trim_;
  std::vector<double> val_;

  std::vector<int> basic_;            // basis column per row slot
  std::vector<VarStatus> vstat_;      // structurals + logicals (+ artificials)
  std::vector<double> binv_;          // m x m row-major
  std::vector<double> xb_;            // basic values
  std::vector<double> d_;             // reduced costs, all columns
  std::vector<double> xn_;            // nonbasic values (and cache of all x)
  std::vector<double> cur_cost_;      // active objective (phase 1 or 2)
  bool has_basis_ = false;
  long iters_ = 0;
  int pivots_since_refactor_ = 0;
  long stall_ = 0;
  double last_obj_ = kInf;

  // artificials: columns n_+m_ .. ; each is sigma * e_row with bounds [0,0] or [0,inf)
  std::vector<std::size_t> art_row_;
  std::vector<double> art_sigma_;

  std::size_t total_cols() const { return n_ + m_ + art_row_.size(); }

  bool is_fixed(std::size_t j) const { return lb_[j] == ub_[j]; }

  double col_lb(std::size_t j) const {
    return j < n_ + m_ ? lb_[j] : 0.0;
  }
  double col_ub(std::size_t j) const {
    if (j < n_ + m_) return ub_[j];
    return art_ub_[j - n_ - m_];
  }
  std::vector<double> art_ub_;

  template <typename Fn>
  void for_col(std::size_t j, Fn&& fn) const {
    if (j < n_) {
      for (std::size_t k = col_ptr_[j]; k < col_trim_[j]; ++k) fn(row_idx_[k], val_[k]);
    } else if (j < n_ + m_) {
      fn(j - n_, -1.0);
    } else {
      fn(art_row_[j - n_ - m_], art_sigma_[j - n_ - m_]);
    }
  }

  double nonbasic_value(std::size_t j) const {
    switch (vstat_[j]) {
      case VarStatus::kAtLower: return col_lb(j);
      case VarStatus::kAtUpper: return col_ub(j);
      case VarStatus::kFree: return 0.0;
      case VarStatus::kBasic: break;
    }
    return 0.0;
  }

  double ftol(double bound) const { return params_.feas_tol * (1.0 + std::abs(bound)); }
  double dtol(std::size_t j) const { return params_.opt_tol * (1.0 + std::abs(cur_cost_[j])); }

  // --- setup ----------------------------------------------------------------
  void cold_basis() {
    art_row_.clear();
    art_sigma_.clear();
    art_ub_.clear();
    vstat_.assign(n_ + m_, VarStatus::kAtLower);
    for (std::size_t j = 0; j < n_ + m_; ++j) vstat_[j] = default_status(j);
    for (std::size_t i = 0; i < m_; ++i) {
      basic_[i] = static_cast<int>(n_ + i);
      vstat_[n_ + i] = VarStatus::kBasic;
    }
    if (!refactor()) throw McepError("simplex: logical basis refactor failed");
    refresh_xb();
    has_basis_ = true;
  }

  bool prepare() {
    row_scale_ = 0.0;
    for (std::size_t j = 0; j < n_ + m_; ++j) {
      if (lb_[j] > ub_[j]) return false;
      if (lb_[j] > -kInf) row_scale_ = std::max(row_scale_, std::abs(lb_[j]));
      if (ub_[j] < kInf) row_scale_ = std::max(row_scale_, std::abs(ub_[j]));
    }
    if (!has_basis_) {
      cold_basis();
      return true;
    }
    snap_nonbasic_to_bounds();
    if (binv_.empty() || pivots_since_refactor_ >= params_.refactor_every) {
      if (!refactor()) {
        cold_basis();
        return true;
      }
    }
    refresh_xb();
    return true;
  }

  VarStatus default_status(std::size_t j) const {
    if (lb_[j] > -kInf) return VarStatus::kAtLower;
    if (ub_[j] < kInf) return VarStatus::kAtUpper;
    return VarStatus::kFree;
  }

  void snap_nonbasic_to_bounds() {
    for (std::size_t j = 0; j < n_ + m_; ++j) {
      if (vstat_[j] == VarStatus::kBasic) continue;
      if (vstat_[j] == VarStatus::kAtLower && lb_[j] <= -kInf)
        vstat_[j] = ub_[j] < kInf ? VarStatus::kAtUpper : VarStatus::kFree;
      if (vstat_[j] == VarStatus::kAtUpper && ub_[j] >= kInf)
        vstat_[j] = lb_[j] > -kInf ? VarStatus::kAtLower : VarStatus::kFree;
      if (vstat_[j] == VarStatus::kFree && (lb_[j] > -kInf || ub_[j] < kInf))
        vstat_[j] = default_status(j);
    }
  }

  // --- linear algebra ---------------------------------------------------------
  bool refactor() {
    // Dense Gauss-Jordan inverse of the basis matrix with partial pivoting.
    std::vector<double> b(m_ * m_, 0.0);
    for (std::size_t i = 0; i < m_; ++i)
      for_col(static_cast<std::size_t>(basic_[i]),
              [&](std::size_t row, double v) { b[row * m_ + i] = v; });
    binv_.assign(m_ * m_, 0.0);
    for (std::size_t i = 0; i < m_; ++i) binv_[i * m_ + i] = 1.0;
    for (std::size_t k = 0; k < m_; ++k) {
      std::size_t piv = k;
      double best = std::abs(b[k * m_ + k]);
      for (std::size_t i = k + 1; i < m_; ++i) {
        double a = std::abs(b[i * m_ + k]);
        if (a > best) {
          best = a;
          piv = i;
        }
      }
      if (best < 1e-12) return false;
      if (piv != k) {
        for (std::size_t c = 0; c < m_; ++c) {
          std::swap(b[piv * m_ + c], b[k * m_ + c]);
          std::swap(binv_[piv * m_ + c], binv_[k * m_ + c]);
        }
      }
      double inv = 1.0 / b[k * m_ + k];
      for (std::size_t c = 0; c < m_; ++c) {
        b[k * m_ + c] *= inv;
        binv_[k * m_ + c] *= inv;
      }
      for (std::size_t i = 0; i < m_; ++i) {
        if (i == k) continue;
        double f = b[i * m_ + k];
        if (f == 0.0) continue;
        for (std::size_t c = 0; c < m_; ++c) {
          b[i * m_ + c] -= f * b[k * m_ + c];
          binv_[i * m_ + c] -= f * binv_[k * m_ + c];
        }
      }
    }
    pivots_since_refactor_ = 0;
    return true;
  }

  std::vector<double> ftran(std::size_t j) const {
    std::vector<double> w(m_, 0.0);
    for_col(j, [&](std::size_t row, double v) {
      const double* col = &binv_[row];  // column `row` of row-major binv_
      for (std::size_t i = 0; i < m_; ++i) w[i] += v * col[i * m_];
    });
    return w;
  }

  void refresh_xb() {
    std::vector<double> rhs(m_, 0.0);
    xn_.assign(total_cols(), 0.0);
    for (std::size_t j = 0; j < total_cols(); ++j) {
      if (vstat_[j] == VarStatus::kBasic) continue;
      double v = nonbasic_value(j);
      xn_[j] = v;
      if (v != 0.0) for_col(j, [&](std::size_t row, double a) { rhs[row] -= a * v; });
    }
    xb_.assign(m_, 0.0);
    for (std::size_t i = 0; i < m_; ++i) {
      const double* row = &binv_[i * m_];
      double acc = 0.0;
      for (std::size_t k = 0; k < m_; ++k) acc += row[k] * rhs[k];
      xb_[i] = acc;
    }
  }

  void refresh_duals() {
    // y = c_B^T B^{-1}, accumulated row-wise; then d_j = c_j - y.a_j.
    std::vector<double> y(m_, 0.0);
    for (std::size_t i = 0; i < m_; ++i) {
      double cb = cur_cost_[static_cast<std::size_t>(basic_[i])];
      if (cb == 0.0) continue;
      const double* row = &binv_[i * m_];
      for (std::size_t k = 0; k < m_; ++k) y[k] += cb * row[k];
    }
    y_ = y;
    d_.assign(total_cols(), 0.0);
    for (std::size_t j = 0; j < total_cols(); ++j) {
      if (vstat_[j] == VarStatus::kBasic) continue;
      double acc = cur_cost_[j];
      for_col(j, [&](std::size_t row, double v) { acc -= y[row] * v; });
      d_[j] = acc;
    }
  }
  std::vector<double> y_;

  void load_phase2_costs() {
    cur_cost_.assign(total_cols(), 0.0);
    for (std::size_t j = 0; j < n_ + m_; ++j) cur_cost_[j] = j < n_ ? cost_[j] : 0.0;
    refresh_duals();
    last_obj_ = kInf;
    stall_ = 0;
  }

  bool primal_feasible_now() {
    for (std::size_t i = 0; i < m_; ++i) {
      std::size_t k = static_cast<std::size_t>(basic_[i]);
      if (xb_[i] < col_lb(k) - ftol(col_lb(k))) return false;
      if (xb_[i] > col_ub(k) + ftol(col_ub(k))) return false;
    }
    return true;
  }

  bool dual_feasible_now() {
    for (std::size_t j = 0; j < total_cols(); ++j) {
      if (vstat_[j] == VarStatus::kBasic || is_col_fixed(j)) continue;
      if (vstat_[j] == VarStatus::kAtLower && d_[j] < -dtol(j)) return false;
      if (vstat_[j] == VarStatus::kAtUpper && d_[j] > dtol(j)) return false;
      if (vstat_[j] == VarStatus::kFree && std::abs(d_[j]) > dtol(j)) return false;
    }
    return true;
  }

  bool is_col_fixed(std::size_t j) const { return col_lb(j) == col_ub(j); }

  // --- phase 1 ----------------------------------------------------------------
  // Cold-resets to the logical basis, clamps violated logicals to their nearer
  // bound, covers each residual with a diagonal artificial, and minimizes the
  // artificial sum. Returns 1 feasible, 0 infeasible, -1 iteration limit.
  int phase1() {
    cold_basis();
    std::vector<double> act(m_, 0.0);
    for (std::size_t j = 0; j < n_; ++j) {
      double v = nonbasic_value(j);
      if (v != 0.0)
        for (std::size_t k = col_ptr_[j]; k < col_trim_[j]; ++k) act[row_idx_[k]] += val_[k] * v;
    }
    for (std::size_t i = 0; i < m_; ++i) {
      std::size_t lg = n_ + i;
      double lo = lb_[lg], hi = ub_[lg];
      double sigma;
      if (act[i] < lo - ftol(lo)) {
        vstat_[lg] = VarStatus::kAtLower;
        sigma = 1.0;  // artificial value = lo - act > 0
      } else if (act[i] > hi + ftol(hi)) {
        vstat_[lg] = VarStatus::kAtUpper;
        sigma = -1.0;  // artificial value = act - hi > 0
      } else {
        continue;
      }
      art_row_.push_back(i);
      art_sigma_.push_back(sigma);
      art_ub_.push_back(kInf);
      basic_[i] = static_cast<int>(n_ + m_ + art_row_.size() - 1);
    }
    if (art_row_.empty()) {
      refresh_xb();
      return 1;
    }
    vstat_.resize(total_cols(), VarStatus::kAtLower);
    for (std::size_t a = 0; a < art_row_.size(); ++a) vstat_[n_ + m_ + a] = VarStatus::kBasic;
    if (!refactor()) throw McepError("simplex: artificial basis refactor failed");
    refresh_xb();

    cur_cost_.assign(total_cols(), 0.0);
    for (std::size_t a = 0; a < art_row_.size(); ++a) cur_cost_[n_ + m_ + a] = 1.0;
    refresh_duals();
    last_obj_ = kInf;
    stall_ = 0;
    int st = primal_loop();
    if (st < 0) return -1;
    if (current_obj() > 1e-7 * (1.0 + row_scale_)) return 0;
    // Freeze artificials at zero for phase 2.
    for (std::size_t a = 0; a < art_row_.size(); ++a) art_ub_[a] = 0.0;
    return 1;
  }

  double row_scale_ = 0.0;

  // --- primal iterations --------------------------------------------------------
  // Returns 1 = optimal for the active costs, 0 = unbounded, -1 = iteration limit.
  int primal_loop() {
    for (;;) {
      if (++iters_ > params_.max_iters) return -1;
      if (pivots_since_refactor_ >= params_.refactor_every) {
        if (!refactor()) throw McepError("simplex: refactor failed mid-solve");
        refresh_xb();
        refresh_duals();
      }
      bool bland = stall_ > params_.stall_limit;
      std::size_t q = total_cols();
      double best = 0.0;
      int dir = +1;
      for (std::size_t j = 0; j < total_cols(); ++j) {
        if (vstat_[j] == VarStatus::kBasic || is_col_fixed(j)) continue;
        double dj = d_[j];
        double tol = dtol(j);
        int cand_dir = 0;
        if ((vstat_[j] == VarStatus::kAtLower || vstat_[j] == VarStatus::kFree) && dj < -tol)
          cand_dir = +1;
        else if ((vstat_[j] == VarStatus::kAtUpper || vstat_[j] == VarStatus::kFree) && dj > tol)
          cand_dir = -1;
        if (!cand_dir) continue;
        if (bland) {
          q = j;
          dir = cand_dir;
          break;
        }
        if (std::abs(dj) > best) {
          best = std::abs(dj);
          q = j;
          dir = cand_dir;
        }
      }
      if (q == total_cols()) return 1;

      std::vector<double> w = ftran(q);
      double own_range = col_ub(q) - col_lb(q);
      double tmax = own_range;
      std::ptrdiff_t leave = -1;  // -1: own bound flip
      double leave_pivot = 0.0;
      for (std::size_t i = 0; i < m_; ++i) {
        double a = w[i];
        if (std::abs(a) <= params_.pivot_tol) continue;
        double rate = -a * dir;  // d x_B[i] / dt
        std::size_t k = static_cast<std::size_t>(basic_[i]);
        double t;
        if (rate > 0) {
          double hi = col_ub(k);
          if (hi >= kInf) continue;
          t = (hi - xb_[i]) / rate;
        } else {
          double lo = col_lb(k);
          if (lo <= -kInf) continue;
          t = (xb_[i] - lo) / (-rate);
        }
        if (t < 0) t = 0;
        if (t < tmax - 1e-12 || (t < tmax + 1e-12 && std::abs(a) > std::abs(leave_pivot))) {
          tmax = t;
          leave = static_cast<std::ptrdiff_t>(i);
          leave_pivot = a;
        }
      }
      if (tmax >= kInf) return 0;  // unbounded direction

      double obj_drop = std::abs(d_[q]) * tmax;
      if (obj_drop > 1e-12 * (1.0 + std::abs(last_obj_)))
        stall_ = 0;
      else
        ++stall_;

      if (leave < 0) {
        // Bound flip: q runs to its other bound, basis unchanged.
        for (std::size_t i = 0; i < m_; ++i) xb_[i] += -w[i] * dir * tmax;
        vstat_[q] = dir > 0 ? VarStatus::kAtUpper : VarStatus::kAtLower;
        continue;
      }

      std::size_t r = static_cast<std::size_t>(leave);
      std::size_t p = static_cast<std::size_t>(basic_[r]);
      // Pivot row over all columns for the incremental dual update.
      std::vector<double> beta(total_cols(), 0.0);
      {
        const double* pi = &binv_[r * m_];
        for (std::size_t j = 0; j < total_cols(); ++j) {
          if (vstat_[j] == VarStatus::kBasic) continue;
          double acc = 0.0;
          for_col(j, [&](std::size_t row, double v) { acc += pi[row] * v; });
          beta[j] = acc;
        }
      }
      double alpha = w[r];
      require(std::abs(alpha) > 1e-13, "simplex: vanishing pivot");

      // Primal update.
      double xq_new = nonbasic_value(q) + dir * tmax;
      for (std::size_t i = 0; i < m_; ++i)
        if (i != r) xb_[i] += -w[i] * dir * tmax;
      double rate_r = -alpha * dir;
      double xr_new = xb_[r] + rate_r * tmax;
      (void)xr_new;
      // Leaving variable lands on the bound the ratio test chose.
      vstat_[p] = rate_r > 0 ? VarStatus::kAtUpper : VarStatus::kAtLower;
      if (is_col_fixed(p)) vstat_[p] = VarStatus::kAtLower;
      basic_[r] = static_cast<int>(q);
      vstat_[q] = VarStatus::kBasic;
      xb_[r] = xq_new;

      // Dual update: d_j -= (d_q / alpha) * beta_j ; d of leaving = -d_q/alpha.
      double ratio = d_[q] / alpha;
      if (ratio != 0.0) {
        for (std::size_t j = 0; j < total_cols(); ++j) {
          if (vstat_[j] == VarStatus::kBasic || beta[j] == 0.0) continue;
          d_[j] -= ratio * beta[j];
        }
      }
      d_[p] = -ratio;
      d_[q] = 0.0;

      // Rank-1 update of the explicit inverse.
      double inv_alpha = 1.0 / alpha;
      double* brow = &binv_[r * m_];
      for (std::size_t c = 0; c < m_; ++c) brow[c] *= inv_alpha;
      for (std::size_t i = 0; i < m_; ++i) {
        if (i == r) continue;
        double f = w[i];
        if (f == 0.0) continue;
        double* irow = &binv_[i * m_];
        for (std::size_t c = 0; c < m_; ++c) irow[c] -= f * brow[c];
      }
      ++pivots_since_refactor_;

      double cur = current_obj();
      if (cur < last_obj_ - 1e-12 * (1.0 + std::abs(last_obj_))) {
        last_obj_ = cur;
        stall_ = 0;
      }
    }
  }

  double current_obj() const {
    double acc = 0.0;
    for (std::size_t i = 0; i < m_; ++i) acc += cur_cost_[static_cast<std::size_t>(basic_[i])] * xb_[i];
    for (std::size_t j = 0; j < total_cols(); ++j)
      if (vstat_[j] != VarStatus::kBasic && cur_cost_[j] != 0.0) acc += cur_cost_[j] * nonbasic_value(j);
    return acc;
  }

  // --- dual iterations ------------------------------------------------------------
  // Returns 1 = primal feasible reached, 0 = primal infeasible, -1 = limit.
  int dual_loop() {
    for (;;) {
      if (++iters_ > params_.max_iters) return -1;
      if (pivots_since_refactor_ >= params_.refactor_every) {
        if (!refactor()) throw McepError("simplex: refactor failed mid-solve");
        refresh_xb();
        refresh_duals();
      }
      // Leaving: most violated basic.
      std::size_t r = m_;
      double worst = 0.0;
      bool below = false;
      for (std::size_t i = 0; i < m_; ++i) {
        std::size_t k = static_cast<std::size_t>(basic_[i]);
        double lo = col_lb(k), hi = col_ub(k);
        double v1 = lo - xb_[i], v2 = xb_[i] - hi;
        if (v1 > worst + ftol(lo)) {
          worst = v1;
          r = i;
          below = true;
        }
        if (v2 > worst + ftol(hi)) {
          worst = v2;
          r = i;
          below = false;
        }
      }
      if (r == m_) return 1;

      const double* pi = &binv_[r * m_];
      std::size_t q = total_cols();
      int dir = 0;
      double best_ratio = kInf;
      double best_pivot = 0.0;
      for (std::size_t j = 0; j < total_cols(); ++j) {
        if (vstat_[j] == VarStatus::kBasic || is_col_fixed(j)) continue;
        double acc = 0.0;
        for_col(j, [&](std::size_t row, double v) { acc += pi[row] * v; });
        if (std::abs(acc) <= params_.pivot_tol) continue;
        // Entering motion that raises (below) or lowers (!below) x_B[r].
        int cand_dir = 0;
        if (below) {
          if ((vstat_[j] == VarStatus::kAtLower || vstat_[j] == VarStatus::kFree) && acc < 0)
            cand_dir = +1;
          else if ((vstat_[j] == VarStatus::kAtUpper || vstat_[j] == VarStatus::kFree) && acc > 0)
            cand_dir = -1;
        } else {
          if ((vstat_[j] == VarStatus::kAtLower || vstat_[j] == VarStatus::kFree) && acc > 0)
            cand_dir = +1;
          else if ((vstat_[j] == VarStatus::kAtUpper || vstat_[j] == VarStatus::kFree) && acc < 0)
            cand_dir = -1;
        }
        if (!cand_dir) continue;
        double ratio = std::abs(d_[j]) / std::abs(acc);
        if (ratio < best_ratio - 1e-12 ||
            (ratio < best_ratio + 1e-12 && std::abs(acc) > std::abs(best_pivot))) {
          best_ratio = ratio;
          q = j;
          dir = cand_dir;
          best_pivot = acc;
        }
      }
      if (q == total_cols()) return 0;  // no entering column: primal infeasible

      std::vector<double> w = ftran(q);
      double alpha = w[r];
      require(std::abs(alpha) > 1e-13, "simplex: vanishing dual pivot");
      std::size_t p = static_cast<std::size_t>(basic_[r]);
      double target = below ? col_lb(p) : col_ub(p);
      double rate = -alpha * dir;
      double t = (target - xb_[r]) / rate;
      if (t < 0) t = 0;

      std::vector<double> beta(total_cols(), 0.0);
      for (std::size_t j = 0; j < total_cols(); ++j) {
        if (vstat_[j] == VarStatus::kBasic) continue;
        double acc = 0.0;
        for_col(j, [&](std::size_t row, double v) { acc += pi[row] * v; });
        beta[j] = acc;
      }

      double xq_new = nonbasic_value(q) + dir * t;
      for (std::size_t i = 0; i < m_; ++i)
        if (i != r) xb_[i] += -w[i] * dir * t;
      vstat_[p] = below ? VarStatus::kAtLower : VarStatus::kAtUpper;
      if (is_col_fixed(p)) vstat_[p] = VarStatus::kAtLower;
      basic_[r] = static_cast<int>(q);
      vstat_[q] = VarStatus::kBasic;
      xb_[r] = xq_new;

      double ratio = d_[q] / alpha;
      if (ratio != 0.0) {
        for (std::size_t j = 0; j < total_cols(); ++j) {
          if (vstat_[j] == VarStatus::kBasic || beta[j] == 0.0) continue;
          d_[j] -= ratio * beta[j];
        }
      }
      d_[p] = -ratio;
      d_[q] = 0.0;

      double inv_alpha = 1.0 / alpha;
      double* brow = &binv_[r * m_];
      for (std::size_t c = 0; c < m_; ++c) brow[c] *= inv_alpha;
      for (std::size_t i = 0; i < m_; ++i) {
        if (i == r) continue;
        double f = w[i];
        if (f == 0.0) continue;
        double* irow = &binv_[i * m_];
        for (std::size_t c = 0; c < m_; ++c) irow[c] -= f * brow[c];
      }
      ++pivots_since_refactor_;
    }
  }

  // --- extraction ---------------------------------------------------------------
  LpSolution infeasible_result() {
    LpSolution s;
    s.status = LpStatus::kInfeasible;
    s.iterations = iters_;
    return s;
  }
  LpSolution unbounded_result() {
    LpSolution s;
    s.status = LpStatus::kUnbounded;
    s.iterations = iters_;
    return s;
  }
  LpSolution limit_result() {
    LpSolution s;
    s.status = LpStatus::kIterLimit;
    s.iterations = iters_;
    return s;
  }

  LpSolution extract(LpStatus st) {
    refresh_xb();
    refresh_duals();
    LpSolution s = extract_inner(st);
    if (st != LpStatus::kOptimal) return s;
    // The residuals are measured against the raw constraint data, so they
    // expose both drift in the factored inverse and a poisoned basis state;
    // re-invert and re-optimize whenever they degraded.
    bool clean = s.residuals.primal <= 64.0 * params_.feas_tol &&
                 s.residuals.dual <= 64.0 * params_.opt_tol && s.residuals.gap <= 1e-7;
    if (clean) return s;
    if (!refactor()) throw McepError("simplex: refactor failed during extraction");
    refresh_xb();
    if (!primal_feasible_now()) {
      int ph1 = phase1();
      if (ph1 <= 0) {
        has_basis_ = false;  // live artificials must not leak into warm starts
        return ph1 < 0 ? limit_result() : infeasible_result();
      }
    }
    load_phase2_costs();
    int st2 = primal_loop();
    if (st2 < 0) return limit_result();
    if (st2 == 0) return unbounded_result();
    refresh_xb();
    refresh_duals();
    return extract_inner(LpStatus::kOptimal);
  }

  LpSolution extract_inner(LpStatus st) {
    LpSolution s;
    s.status = st;
    s.iterations = iters_;
    s.x.assign(n_, 0.0);
    std::vector<double> full(n_ + m_, 0.0);
    for (std::size_t j = 0; j < n_ + m_; ++j)
      if (vstat_[j] != VarStatus::kBasic) full[j] = nonbasic_value(j);
    for (std::size_t i = 0; i < m_; ++i) {
      std::size_t k = static_cast<std::size_t>(basic_[i]);
      if (k < n_ + m_) full[k] = xb_[i];
    }
    for (std::size_t j = 0; j < n_; ++j) s.x[j] = full[j];
    s.row_activity.assign(m_, 0.0);
    for (std::size_t j = 0; j < n_; ++j) {
      double v = full[j];
      if (v == 0.0) continue;
      for (std::size_t k = col_ptr_[j]; k < col_trim_[j]; ++k)
        s.row_activity[row_idx_[k]] += val_[k] * v;
    }
    double obj_int = 0.0;
    for (std::size_t j = 0; j < n_; ++j) obj_int += cost_[j] * full[j];
    s.obj = sense_max_ ? -obj_int : obj_int;
    double flip = sense_max_ ? -1.0 : 1.0;
    s.duals.assign(m_, 0.0);
    for (std::size_t i = 0; i < m_; ++i) s.duals[i] = flip * y_[i];
    s.reduced_costs.assign(n_, 0.0);
    for (std::size_t j = 0; j < n_; ++j) s.reduced_costs[j] = flip * d_[j];
    s.basis.basic = basic_;
    s.basis.status.assign(vstat_.begin(), vstat_.begin() + static_cast<std::ptrdiff_t>(n_ + m_));

    // Residuals (internal min sense).
    LpResiduals res;
    for (std::size_t j = 0; j < n_ + m_; ++j) {
      double v = full[j];
      if (lb_[j] > -kInf) res.primal = std::max(res.primal, (lb_[j] - v) / (1.0 + std::abs(lb_[j])));
      if (ub_[j] < kInf) res.primal = std::max(res.primal, (v - ub_[j]) / (1.0 + std::abs(ub_[j])));
    }
    std::vector<double> act(m_, 0.0);
    for (std::size_t j = 0; j < n_ + m_; ++j) {
      double v = full[j];
      if (v != 0.0) for_col(j, [&](std::size_t row, double a) { act[row] += a * v; });
    }
    for (std::size_t i = 0; i < m_; ++i)
      res.primal = std::max(res.primal, std::abs(act[i]) / (1.0 + std::abs(full[n_ + i])));
    if (st == LpStatus::kOptimal) {
      for (std::size_t j = 0; j < n_ + m_; ++j) {
        if (vstat_[j] == VarStatus::kBasic || is_col_fixed(j)) continue;
        double dj = d_[j];
        double scale = 1.0 + std::abs(cur_cost_[j]);
        if (vstat_[j] == VarStatus::kAtLower && dj < 0) res.dual = std::max(res.dual, -dj / scale);
        if (vstat_[j] == VarStatus::kAtUpper && dj > 0) res.dual = std::max(res.dual, dj / scale);
        if (vstat_[j] == VarStatus::kFree) res.dual = std::max(res.dual, std::abs(dj) / scale);
      }
      // Strong duality via the basic-solution identity.
      double dual_obj = 0.0;
      for (std::size_t i = 0; i < m_; ++i) dual_obj += y_[i] * full[n_ + i];
      for (std::size_t j = 0; j < n_; ++j)
        if (vstat_[j] != VarStatus::kBasic) dual_obj += d_[j] * full[j];
      res.gap = std::abs(obj_int - dual_obj) / (1.0 + std::abs(obj_int));
    }
    s.residuals = res;
    return s;
  }
};

inline LpSolution solve_lp(const LpModel& model, SimplexParams params = {}) {
  Simplex s(model, params);
  return s.solve();
}

/// CPLEX-LP-format text dump; integer variables listed under Generals/Binaries.
inline void write_lp_format(const LpModel& model, std::ostream& out) {
  out << (model.sense == LpModel::Sense::kMax ? "Maximize" : "Minimize") << "\n obj:";
  for (std::size_t j = 0; j < model.num_vars(); ++j) {
    double c = model.obj[j];
    if (c == 0.0) continue;
    out << (c >= 0 ? " + " : " - ") << fmt_full(std::abs(c)) << ' ' << model.var_names[j];
  }
  out << "\nSubject To\n";
  for (std::size_t i = 0; i < model.num_rows(); ++i) {
    const auto& row = model.rows[i];
    auto terms = [&](std::ostream& os) {
      for (const auto& [j, v] : model.row_terms[i])
        os << (v >= 0 ? " + " : " - ") << fmt_full(std::abs(v)) << ' '
           << model.var_names[static_cast<std::size_t>(j)];
    };
    if (row.lo == row.hi) {
      out << ' ' << model.row_names[i] << ':';
      terms(out);
      out << " = " << fmt_full(row.lo) << '\n';
    } else {
      if (row.hi < kInf) {
        out << ' ' << model.row_names[i] << "_u:";
        terms(out);
        out << " <= " << fmt_full(row.hi) << '\n';
      }
      if (row.lo > -kInf) {
        out << ' ' << model.row_names[i] << "_l:";
        terms(out);
        out << " >= " << fmt_full(row.lo) << '\n';
      }
    }
  }
  out << "Bounds\n";
  for (std::size_t j = 0; j < model.num_vars(); ++j) {
    if (model.lb[j] <= -kInf && model.ub[j] >= kInf)
      out << ' ' << model.var_names[j] << " free\n";
    else if (model.lb[j] <= -kInf)
      out << " -inf <= " << model.var_names[j] << " <= " << fmt_full(model.ub[j]) << '\n';
    else if (model.ub[j] >= kInf)
      out << ' ' << fmt_full(model.lb[j]) << " <= " << model.var_names[j] << '\n';
    else
      out << ' ' << fmt_full(model.lb[j]) << " <= " << model.var_names[j] << " <= "
          << fmt_full(model.ub[j]) << '\n';
  }
  bool any_int = false;
  for (std::size_t j = 0; j < model.num_vars(); ++j) any_int = any_int || model.is_int[j];
  if (any_int) {
    out << "Generals\n";
    for (std::size_t j = 0; j < model.num_vars(); ++j)
      if (model.is_int[j]) out << ' ' << model.var_names[j] << '\n';
  }
  out << "End\n";
}

}  // namespace mcep
