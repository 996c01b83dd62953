#pragma once

// Exact Bayesian group posterior over a user's observed ratings, accumulated
// in log space so PD1-scale likelihood ratios (e^-128 per observation) stay
// representable.

#include <vector>

#include "rlt4rec/simenv.hpp"

namespace rlt4rec {

struct PosteriorState {
    std::vector<double> log_likelihoods;  // accumulated log p(observations | g)
    std::vector<double> probs;            // posterior incl. prior, sums to 1
};

// Fresh state: no observations, probs equal the prior.
PosteriorState make_posterior(const GroupModel& gm);

// Adds one (item, rating) observation: per-group log Gaussian density
// accumulated, probs renormalized via max-subtracted log-sum-exp.
PosteriorState posterior_update(const PosteriorState& state, const GroupModel& gm, int item,
                                double rating);

}  // namespace rlt4rec
