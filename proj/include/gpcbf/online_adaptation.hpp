#ifndef GPCBF_ONLINE_ADAPTATION_HPP
#define GPCBF_ONLINE_ADAPTATION_HPP

#include "gpcbf/sparse_gp.hpp"

namespace gpcbf {

/// Projection-energy scores of the current window against the inducing set.
/// p_th is the phi-weighted sum of residuals k_tt - k_to K_oo^-1 k_ot; the
/// per-point vector splits the explained part so that
///   p_th + sum_m per_point(m) == sum_t w_t k_tt
/// holds by construction.
struct NoveltyScores {
  double p_th = 0.0;
  Eigen::VectorXd per_point;  // length M
};

struct AdaptationConfig {
  double epsilon = 0.1;   // insertion threshold on p_th
  int max_inducing = 25;  // eviction trigger: size > max_inducing
};

struct StepEvents {
  double p_th = 0.0;
  bool inserted = false;
  bool insertion_rejected = false;  // duplicate point (Schur complement <= 0)
  int evicted_index = -1;
  bool fallback_rebuild = false;
};

/// Slide the window: evict the oldest sample, append the new one, and fold
/// both into the caches with the phi-discounted rank-one recursion
///   B_phi^-1 <- phi B_phi^-1 + (1-phi) K_oo
///               + s^-2 (k_new^T k_new - phi^P k_old^T k_old)
///   zlk      <- phi zlk + z_new k_new - phi^P z_old k_old
/// Cost O(M^3) (one Cholesky of the updated B_phi^-1), independent of stream
/// length. If the update loses positive definiteness the caches are rebuilt
/// from the window instead (counted, never silent). Returns true on fallback.
bool ingest_sample(ModelState& state, const Sample& sample);

/// Scores of the window as stored (call after ingest so the candidate is
/// included, matching the update-then-score ordering).
NoveltyScores novelty_scores(const ModelState& state);

/// Grow the inducing set by one point using the bordered-inverse updates of
/// both K_oo^-1 and B_phi. Returns false (state untouched) when the new
/// point is numerically dependent on the existing set.
bool add_inducing(ModelState& state, const Sample& sample);

/// Drop inducing point `index`; B_phi is rebuilt from its batch definition on
/// the reduced set. Refuses to empty the set.
void remove_inducing(ModelState& state, int index);

/// One streaming step: ingest, score, insert if p_th > epsilon, evict the
/// least-contributing point if the capacity is exceeded.
StepEvents step(ModelState& state, const Sample& sample, const AdaptationConfig& config);

}  // namespace gpcbf

#endif  // GPCBF_ONLINE_ADAPTATION_HPP
