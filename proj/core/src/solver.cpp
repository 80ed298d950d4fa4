#include "vaevar/solver.hpp"

#include <cmath>
#include <deque>
#include <limits>

namespace vaevar {

void LbfgsConfig::validate() const {
  if (memory < 1) throw ConfigError("LbfgsConfig: memory must be >= 1");
  if (max_iters < 0) throw ConfigError("LbfgsConfig: max_iters must be >= 0");
  if (!(0.0 < wolfe_c1 && wolfe_c1 < wolfe_c2 && wolfe_c2 < 1.0)) {
    throw ConfigError("LbfgsConfig: need 0 < c1 < c2 < 1");
  }
  if (max_line_search_steps < 1) throw ConfigError("LbfgsConfig: max_line_search_steps must be >= 1");
}

std::string to_string(Termination t) {
  switch (t) {
    case Termination::GradientTolerance: return "gradient_tolerance";
    case Termination::MaxIterations: return "max_iterations";
    case Termination::LineSearchFailed: return "line_search_failed";
    case Termination::NoProgress: return "no_progress";
  }
  return "unknown";
}

namespace {

struct Point {
  double alpha = 0.0;
  double f = 0.0;
  double df = 0.0;
  Vector z;
  Vector g;
};

/// Minimizer of the cubic through (a, fa, ga) and (b, fb, gb), or NaN when it does not exist.
double cubic_min(double a, double fa, double ga, double b, double fb, double gb) {
  const double d1 = ga + gb - 3.0 * (fa - fb) / (a - b);
  const double disc = d1 * d1 - ga * gb;
  if (!(disc >= 0.0)) return std::numeric_limits<double>::quiet_NaN();
  const double d2 = std::copysign(std::sqrt(disc), b - a);
  const double denom = gb - ga + 2.0 * d2;
  if (denom == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return b - (b - a) * (gb + d2 - d1) / denom;
}

class LineSearch {
 public:
  LineSearch(const Objective& f, const LbfgsConfig& cfg, const Vector& z, const Vector& dir, double f0, double df0)
      : f_(f), cfg_(cfg), z_(z), dir_(dir), f0_(f0), df0_(df0) {}

  /// Returns true if a strong Wolfe point was found. `best` always holds the lowest
  /// finite evaluation seen (alpha = 0 if none improved).
  bool search(double alpha, Point& out, int& evals) {
    Point prev{0.0, f0_, df0_, z_, {}};
    best_ = prev;
    for (int i = 0; evals_ < cfg_.max_line_search_steps; ++i) {
      Point cur;
      if (!eval(alpha, cur)) {
        alpha = prev.alpha + 0.5 * (alpha - prev.alpha);
        continue;
      }
      if (cur.f > f0_ + cfg_.wolfe_c1 * alpha * df0_ || (i > 0 && cur.f >= prev.f)) {
        const bool ok = zoom(prev, cur, out);
        evals += evals_;
        return ok;
      }
      if (std::abs(cur.df) <= -cfg_.wolfe_c2 * df0_) {
        out = std::move(cur);
        evals += evals_;
        return true;
      }
      if (cur.df >= 0.0) {
        const bool ok = zoom(cur, prev, out);
        evals += evals_;
        return ok;
      }
      prev = std::move(cur);
      alpha *= 2.0;
    }
    evals += evals_;
    return false;
  }

  const Point& best() const { return best_; }

 private:
  bool eval(double alpha, Point& p) {
    ++evals_;
    p.alpha = alpha;
    p.z = z_ + alpha * dir_;
    p.f = f_(p.z, p.g);
    if (!std::isfinite(p.f) || !p.g.allFinite()) return false;
    p.df = p.g.dot(dir_);
    if (p.f < best_.f) best_ = p;
    return true;
  }

  bool zoom(Point lo, Point hi, Point& out) {
    while (evals_ < cfg_.max_line_search_steps) {
      const double a = std::min(lo.alpha, hi.alpha);
      const double b = std::max(lo.alpha, hi.alpha);
      const double width = b - a;
      if (width <= std::numeric_limits<double>::epsilon() * std::max(1.0, b)) return false;
      double alpha = std::isfinite(hi.f) ? cubic_min(lo.alpha, lo.f, lo.df, hi.alpha, hi.f, hi.df)
                                         : std::numeric_limits<double>::quiet_NaN();
      if (!std::isfinite(alpha) || alpha < a + 0.1 * width || alpha > b - 0.1 * width) alpha = 0.5 * (a + b);
      Point cur;
      if (!eval(alpha, cur)) {
        hi = Point{alpha, std::numeric_limits<double>::infinity(), 0.0, {}, {}};
        continue;
      }
      if (cur.f > f0_ + cfg_.wolfe_c1 * alpha * df0_ || cur.f >= lo.f) {
        hi = std::move(cur);
      } else {
        if (std::abs(cur.df) <= -cfg_.wolfe_c2 * df0_) {
          out = std::move(cur);
          return true;
        }
        if (cur.df * (hi.alpha - lo.alpha) >= 0.0) hi = lo;
        lo = std::move(cur);
      }
    }
    return false;
  }

  const Objective& f_;
  const LbfgsConfig& cfg_;
  const Vector& z_;
  const Vector& dir_;
  double f0_;
  double df0_;
  int evals_ = 0;
  Point best_;
};

}  // namespace

MinimizeResult minimize(const Objective& f, const Vector& z0, const LbfgsConfig& cfg) {
  cfg.validate();
  MinimizeResult res;
  SolverReport& rep = res.report;
  Vector z = z0;
  Vector g;
  double fz = f(z, g);
  rep.function_evals = 1;
  if (!std::isfinite(fz) || !g.allFinite()) {
    throw Error("minimize: objective is not finite at the starting point");
  }

  std::deque<Vector> s_hist, y_hist;
  std::deque<double> rho_hist;
  rep.reason = Termination::MaxIterations;

  for (int iter = 0;; ++iter) {
    rep.grad_norm = g.norm();
    if (rep.grad_norm <= cfg.grad_tol) {
      rep.reason = Termination::GradientTolerance;
      break;
    }
    if (iter >= cfg.max_iters) {
      rep.reason = Termination::MaxIterations;
      break;
    }

    // Two-loop recursion.
    Vector q = g;
    const std::size_t m = s_hist.size();
    std::vector<double> alpha(m);
    for (std::size_t i = m; i-- > 0;) {
      alpha[i] = rho_hist[i] * s_hist[i].dot(q);
      q -= alpha[i] * y_hist[i];
    }
    double gamma = 1.0;
    if (m > 0) gamma = s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
    Vector dir = gamma * q;
    for (std::size_t i = 0; i < m; ++i) {
      const double beta = rho_hist[i] * y_hist[i].dot(dir);
      dir += (alpha[i] - beta) * s_hist[i];
    }
    dir = -dir;
    double df0 = g.dot(dir);
    if (!(df0 < 0.0)) {
      // Not a descent direction: drop curvature history and use steepest descent.
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      dir = -g;
      df0 = -g.squaredNorm();
    }

    const double alpha0 = (m == 0) ? std::min(1.0, 1.0 / g.lpNorm<1>()) : 1.0;
    LineSearch ls(f, cfg, z, dir, fz, df0);
    Point next;
    const bool ok = ls.search(alpha0, next, rep.function_evals);
    if (!ok) {
      const Point& best = ls.best();
      if (best.alpha > 0.0 && best.f < fz) {
        next = best;
      } else {
        rep.reason = Termination::LineSearchFailed;
        break;
      }
    }

    Vector s = next.z - z;
    Vector y = next.g - g;
    const double sy = s.dot(y);
    const double f_prev = fz;
    z = std::move(next.z);
    g = std::move(next.g);
    fz = next.f;
    ++rep.iterations;
    if (sy > 1e-12 * s.norm() * y.norm() && sy > 0.0) {
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(y));
      rho_hist.push_back(1.0 / sy);
      if (static_cast<int>(s_hist.size()) > cfg.memory) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
    if (std::abs(f_prev - fz) <= 1e-16 * std::max(1.0, std::abs(fz))) {
      rep.grad_norm = g.norm();
      rep.reason = rep.grad_norm <= cfg.grad_tol ? Termination::GradientTolerance : Termination::NoProgress;
      break;
    }
  }
  rep.final_value = fz;
  rep.grad_norm = g.norm();
  res.z = std::move(z);
  return res;
}

}  // namespace vaevar
