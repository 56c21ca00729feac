#include "swfqe/ratio.hpp"

#include "swfqe/csv.hpp"

#include <Eigen/QR>

#include <cmath>
#include <ostream>

namespace swfqe {

std::string to_string(RatioMethod method) {
  switch (method) {
    case RatioMethod::dice: return "dice";
    case RatioMethod::resolvent: return "resolvent";
    case RatioMethod::exact: return "exact";
  }
  return "?";
}

RatioMethod parse_ratio_method(const std::string& name) {
  if (name == "dice") return RatioMethod::dice;
  if (name == "resolvent") return RatioMethod::resolvent;
  if (name == "exact") return RatioMethod::exact;
  throw PreconditionError("unknown ratio method '" + name + "'");
}

// ---------------------------------------------------------------------------

DiceMoments dice_moments(const TransitionDataset& data, const FeatureMap& g_features, const FeatureMap& h_features,
                         Index n_actions) {
  if (data.transitions.empty()) throw DataError("empty dataset");
  require_dims(g_features.n_pairs() == h_features.n_pairs(), "critic and ratio features cover different pairs");
  const Index n_pairs = g_features.n_pairs();
  const double inv_n = 1.0 / static_cast<double>(data.size());
  // Moments depend on the data only through (pair, next pair) counts.
  Matrix flows = Matrix::Zero(n_pairs, n_pairs);
  for (const Transition& t : data.transitions) {
    const Index here = t.s * n_actions + t.a;
    const Index next = t.s_next * n_actions + t.a_next;
    if (here < 0 || here >= n_pairs || next < 0 || next >= n_pairs) throw DataError("transition index out of range");
    flows(here, next) += 1.0;
  }
  flows *= inv_n;
  const Vector freq = flows.rowwise().sum();
  const Matrix& g = g_features.phi();
  const Matrix& h = h_features.phi();
  const Matrix g_t_d = g.transpose() * freq.asDiagonal();
  return DiceMoments{g_t_d * h - g.transpose() * (flows * h), h.transpose() * freq.asDiagonal() * h, g_t_d.rowwise().sum(),
                     StateActionDist(freq / freq.sum())};
}

DiceMoments dice_population_moments(const TabularMdp& mdp, const Policy& target, const StateActionDist& nu_b,
                                    const FeatureMap& g_features, const FeatureMap& h_features) {
  require_dims(g_features.n_pairs() == mdp.n_pairs() && h_features.n_pairs() == mdp.n_pairs(),
               "features do not match MDP");
  const Matrix g_t_d = g_features.phi().transpose() * nu_b.mass().asDiagonal();
  const Matrix next_h = expected_next_features(mdp, target, h_features.phi());
  return DiceMoments{g_t_d * (h_features.phi() - next_h),
                     h_features.phi().transpose() * nu_b.mass().asDiagonal() * h_features.phi(),
                     g_t_d.rowwise().sum(), nu_b};
}

namespace {

Eigen::LDLT<Matrix> critic_factor(const DiceMoments& m, double reg) {
  if (!(reg >= 0.0)) throw PreconditionError("critic ridge must be nonnegative");
  Matrix b = m.critic_gram;
  b.diagonal().array() += reg;
  Eigen::LDLT<Matrix> factor(b);
  if (reg == 0.0 && near_singular(factor))
    throw SingularityError("critic Gram matrix is singular; use reg > 0");
  return factor;
}

}  // namespace

double dice_inner_value(const DiceMoments& moments, const Vector& c, double reg) {
  require_dims(c.size() == moments.cross.rows(), "dice_inner_value: coefficient length mismatch");
  const Vector a_t_c = moments.cross.transpose() * c;
  return 0.5 * a_t_c.dot(critic_factor(moments, reg).solve(a_t_c));
}

RatioEstimate dice_solve(const DiceMoments& moments, const FeatureMap& g_features, double reg, double penalty) {
  require_dims(g_features.dim() == moments.cross.rows(), "ratio features do not match the moments");
  require_dims(g_features.n_pairs() == moments.nu.size(), "ratio features do not match the distribution");
  if (!(penalty > 0.0)) throw PreconditionError("normalization penalty must be positive");
  const Eigen::LDLT<Matrix> critic = critic_factor(moments, reg);
  Matrix outer = moments.cross * critic.solve(Matrix(moments.cross.transpose()));
  outer += 2.0 * penalty * moments.g_mean * moments.g_mean.transpose();
  outer = 0.5 * (outer + outer.transpose()).eval();
  const Vector rhs = 2.0 * penalty * moments.g_mean;
  const Vector c = outer.completeOrthogonalDecomposition().solve(rhs);

  Vector w = g_features.phi() * c;
  double clipped = 0.0;
  for (Index i = 0; i < w.size(); ++i)
    if (w[i] < 0.0) {
      clipped += moments.nu[i] * -w[i];
      w[i] = 0.0;
    }
  const double mean = moments.nu.mass().dot(w);
  if (mean > 0.0) w /= mean;

  RatioEstimate out;
  out.values = RatioTable{std::move(w)};
  out.method = RatioMethod::dice;
  out.normalization_residual = clipped;
  return out;
}

RatioEstimate dice_estimate(const TransitionDataset& data, const FeatureMap& g_features, const FeatureMap& h_features,
                            Index n_actions, double reg, double penalty) {
  return dice_solve(dice_moments(data, g_features, h_features, n_actions), g_features, reg, penalty);
}

// ---------------------------------------------------------------------------

namespace {

void check_gamma_prime(double gamma_prime) {
  if (!(gamma_prime >= 0.0 && gamma_prime < 1.0)) throw PreconditionError("gamma_prime must lie in [0, 1)");
}

// pi(a|s) / b(a|s); zero where both vanish.
Vector action_ratio(const Policy& behavior, const Policy& target) {
  require_dims(behavior.n_states() == target.n_states() && behavior.n_actions() == target.n_actions(),
               "behavior and target policies differ in shape");
  Vector beta(target.n_states() * target.n_actions());
  std::vector<std::pair<Index, Index>> uncovered;
  for (Index s = 0; s < target.n_states(); ++s)
    for (Index a = 0; a < target.n_actions(); ++a) {
      const Index i = s * target.n_actions() + a;
      if (behavior(s, a) > 0.0)
        beta[i] = target(s, a) / behavior(s, a);
      else if (target(s, a) > 0.0)
        uncovered.emplace_back(s, a);
      else
        beta[i] = 0.0;
    }
  if (!uncovered.empty()) throw CoverageError("target plays actions the behavior policy never takes", uncovered);
  return beta;
}

// Picard iteration of w <- offset + gamma' * apply_k(w). Stops on the a-posteriori
// bound gamma'/(1 - gamma') * step, steps measured in L1(nu).
template <typename ApplyK>
void resolvent_picard(RatioEstimate& est, const Vector& offset, double gamma_prime, const Vector& nu,
                      const ApplyK& apply_k, const ResolventOptions& options) {
  Vector w = Vector::Zero(offset.size());
  for (int it = 0; it < options.max_iters; ++it) {
    Vector next = offset + gamma_prime * apply_k(w);
    const double step = (nu.array() * (next - w).array().abs()).sum();
    w = std::move(next);
    est.residuals.push_back(step);
    est.iterations = it + 1;
    if (gamma_prime == 0.0 || gamma_prime / (1.0 - gamma_prime) * step <= options.tol) break;
  }
  const double last = est.residuals.empty() ? 0.0 : est.residuals.back();
  est.normalization_residual = gamma_prime == 0.0 ? 0.0 : gamma_prime / (1.0 - gamma_prime) * last;
  if (est.normalization_residual > options.tol)
    throw ConvergenceError("resolvent Picard iteration did not converge", est.normalization_residual);
  est.values = RatioTable{std::move(w)};
}

}  // namespace

RatioEstimate resolvent_ratio_exact(const TabularMdp& mdp, const Policy& behavior, const Policy& target,
                                    const StateActionDist& nu_b, double gamma_prime,
                                    const ResolventOptions& options) {
  check_gamma_prime(gamma_prime);
  require_dims(nu_b.size() == mdp.n_pairs(), "nu_b does not match MDP");
  const Vector beta = action_ratio(behavior, target);
  const Vector rho_next = mdp.transition().transpose() * nu_b.mass();
  const Index n_actions = mdp.n_actions();

  RatioEstimate est;
  est.method = RatioMethod::resolvent;
  est.gamma_prime = gamma_prime;
  Vector inv_rho(rho_next.size());
  for (Index s = 0; s < rho_next.size(); ++s) {
    inv_rho[s] = rho_next[s] > 0.0 ? 1.0 / rho_next[s] : 0.0;
    if (!(rho_next[s] > 0.0)) est.restricted_support = true;
  }

  // (K g)(s', a') = beta(s', a') * sum_{s,a} nu(s,a) g(s,a) P(s'|s,a) / rho_next(s')
  auto apply_k = [&](const Vector& g) {
    const Vector flow = (mdp.transition().transpose() * nu_b.mass().cwiseProduct(g)).cwiseProduct(inv_rho);
    Vector out(g.size());
    for (Index s = 0; s < mdp.n_states(); ++s)
      for (Index a = 0; a < n_actions; ++a) out[s * n_actions + a] = beta[s * n_actions + a] * flow[s];
    return out;
  };
  const Vector offset = (1.0 - gamma_prime) * beta;
  resolvent_picard(est, offset, gamma_prime, nu_b.mass(), apply_k, options);

  Matrix k_matrix(mdp.n_pairs(), mdp.n_pairs());
  for (Index j = 0; j < mdp.n_pairs(); ++j) {
    Vector e = Vector::Zero(mdp.n_pairs());
    e[j] = 1.0;
    k_matrix.col(j) = apply_k(e);
  }
  const Matrix lhs = Matrix::Identity(mdp.n_pairs(), mdp.n_pairs()) - gamma_prime * k_matrix;
  const Vector direct = lhs.partialPivLu().solve(offset);
  const double gap = (direct - est.values.w).lpNorm<Eigen::Infinity>();
  if (!(gap <= options.agreement_tol * std::max(1.0, direct.lpNorm<Eigen::Infinity>())))
    throw ConvergenceError("resolvent Picard and direct solutions disagree", gap);
  return est;
}

RatioEstimate resolvent_ratio_empirical(const TransitionDataset& data, Index n_states, const Policy& behavior,
                                        const Policy& target, double gamma_prime,
                                        const ResolventOptions& options) {
  check_gamma_prime(gamma_prime);
  if (data.transitions.empty()) throw DataError("empty dataset");
  const Index n_actions = target.n_actions();
  const Vector beta = action_ratio(behavior, target);
  const StateActionDist nu = empirical_distribution(data, n_states, n_actions);

  // counts(s', pair) = #{i : s'_i = s', (s_i, a_i) = pair}
  Matrix counts = Matrix::Zero(n_states, n_states * n_actions);
  Vector next_counts = Vector::Zero(n_states);
  for (const Transition& t : data.transitions) {
    counts(t.s_next, t.s * n_actions + t.a) += 1.0;
    next_counts[t.s_next] += 1.0;
  }

  RatioEstimate est;
  est.method = RatioMethod::resolvent;
  est.gamma_prime = gamma_prime;
  Vector inv_next(n_states);
  for (Index s = 0; s < n_states; ++s) {
    inv_next[s] = next_counts[s] > 0.0 ? 1.0 / next_counts[s] : 0.0;
    if (!(next_counts[s] > 0.0)) est.restricted_support = true;
  }
  auto apply_k = [&](const Vector& g) {
    const Vector flow = (counts * g).cwiseProduct(inv_next);
    Vector out(g.size());
    for (Index s = 0; s < n_states; ++s)
      for (Index a = 0; a < n_actions; ++a) out[s * n_actions + a] = beta[s * n_actions + a] * flow[s];
    return out;
  };
  resolvent_picard(est, (1.0 - gamma_prime) * beta, gamma_prime, nu.mass(), apply_k, options);
  return est;
}

// ---------------------------------------------------------------------------

double variational_residual(const RatioTable& w, const StateActionDist& nu_b, const TabularMdp& mdp,
                            const Policy& target) {
  require_dims(w.w.size() == mdp.n_pairs() && nu_b.size() == mdp.n_pairs(), "variational_residual: size mismatch");
  const Vector weighted = nu_b.mass().cwiseProduct(w.w);
  return (weighted - push_forward(mdp, target, weighted)).lpNorm<Eigen::Infinity>();
}

double variational_residual(const RatioTable& w, const TransitionDataset& data, Index n_states, Index n_actions) {
  if (data.transitions.empty()) throw DataError("empty dataset");
  require_dims(w.w.size() == n_states * n_actions, "variational_residual: size mismatch");
  Vector residual = Vector::Zero(w.w.size());
  for (const Transition& t : data.transitions) {
    const double wi = w.w[t.s * n_actions + t.a];
    residual[t.s * n_actions + t.a] += wi;
    residual[t.s_next * n_actions + t.a_next] -= wi;
  }
  return residual.lpNorm<Eigen::Infinity>() / static_cast<double>(data.size());
}

double ratio_error(const RatioTable& w_hat, const RatioTable& w, const StateActionDist& mu) {
  require_dims(w_hat.w.size() == w.w.size() && w.w.size() == mu.size(), "ratio_error: size mismatch");
  double total = 0.0;
  for (Index i = 0; i < mu.size(); ++i) {
    if (!(mu[i] > 0.0)) continue;
    if (!(w.w[i] > 0.0)) throw PreconditionError("reference ratio vanishes where mu has mass");
    const double r = w_hat.w[i] / w.w[i] - 1.0;
    total += mu[i] * r * r;
  }
  return std::sqrt(total);
}

void write_ratio_csv(std::ostream& out, const RatioTable& table, Index n_actions) {
  out << "s,a,w\n";
  for (Index i = 0; i < table.w.size(); ++i)
    out << i / n_actions << ',' << i % n_actions << ',' << csv::format_real(table.w[i]) << '\n';
}

}  // namespace swfqe
