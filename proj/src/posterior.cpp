#include "rlt4rec/posterior.hpp"

#include <cmath>
#include <limits>

#include "rlt4rec/util.hpp"

namespace rlt4rec {

namespace {

void renormalize(PosteriorState& st, const GroupModel& gm) {
    const int n = gm.n_groups;
    st.probs.resize(n);
    double best = -std::numeric_limits<double>::infinity();
    for (int g = 0; g < n; ++g) {
        st.probs[g] = st.log_likelihoods[g] + std::log(gm.group_prior[g]);
        best = std::max(best, st.probs[g]);
    }
    double sum = 0.0;
    for (int g = 0; g < n; ++g) {
        st.probs[g] = std::exp(st.probs[g] - best);
        sum += st.probs[g];
    }
    for (int g = 0; g < n; ++g) {
        st.probs[g] /= sum;
    }
}

}  // namespace

PosteriorState make_posterior(const GroupModel& gm) {
    gm.validate();
    PosteriorState st;
    st.log_likelihoods.assign(gm.n_groups, 0.0);
    st.probs = gm.group_prior;
    return st;
}

PosteriorState posterior_update(const PosteriorState& state, const GroupModel& gm, int item,
                                double rating) {
    if (item < 0 || item >= gm.n_items) {
        fail(cat("posterior_update: item ", item, " out of range [0,", gm.n_items, ")"));
    }
    if (state.log_likelihoods.size() != static_cast<std::size_t>(gm.n_groups)) {
        fail("posterior_update: state does not match the group model");
    }
    constexpr double kLogSqrt2Pi = 0.91893853320467274178;  // log sqrt(2*pi)
    PosteriorState next = state;
    for (int g = 0; g < gm.n_groups; ++g) {
        const double mu = gm.mu(g, item);
        const double sd = gm.sigma(g, item);
        const double z = (rating - mu) / sd;
        next.log_likelihoods[g] += -kLogSqrt2Pi - std::log(sd) - 0.5 * z * z;
    }
    renormalize(next, gm);
    return next;
}

}  // namespace rlt4rec
