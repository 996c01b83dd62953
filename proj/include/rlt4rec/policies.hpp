#pragma once

// Recommendation strategies: the genie baseline, random baselines, myopic
// Bayes-greedy exploitation of the posterior, UCT Monte Carlo tree search
// over the group-Gaussian model, and the trained-transformer policy.

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rlt4rec/model.hpp"
#include "rlt4rec/posterior.hpp"
#include "rlt4rec/rng.hpp"
#include "rlt4rec/simenv.hpp"

namespace rlt4rec {

struct PolicyContext {
    std::vector<bool> seen;  // seen[v] iff v appears in history
    InteractionHistory history;
    std::optional<PosteriorState> posterior;  // maintained by posterior-based policies

    std::size_t seen_count = 0;

    static PolicyContext make(int n_items) {
        PolicyContext ctx;
        ctx.seen.assign(static_cast<std::size_t>(n_items), false);
        return ctx;
    }
    void record(int item, double rating) {
        seen[static_cast<std::size_t>(item)] = true;
        ++seen_count;
        history.push(item, rating);
    }
    std::size_t n_unseen() const { return seen.size() - seen_count; }
};

// Genie: highest true group mean among unseen items, ties by lowest id.
int best_star_next(const GroupModel& gm, int group, const PolicyContext& ctx);

int random_uniform_next(const PolicyContext& ctx, int n_items, RngStream& rng);

// Unseen item with probability proportional to its rating count.
int random_popular_next(const GroupModel& gm, const PolicyContext& ctx, RngStream& rng);

// Depth-0 exploitation: argmax over unseen of posterior-weighted means.
int bayes_greedy_next(const PosteriorState& posterior, const GroupModel& gm,
                      const PolicyContext& ctx);

struct MctsOptions {
    int budget = 2000;
    int horizon = 10;
    double c_ucb = 1.4142135623730951;
};

struct MctsSearchResult {
    int item = -1;
    std::vector<double> root_values;  // mean return per root action; NaN if never tried
    std::vector<int> root_visits;
};

// Full search returning per-item root statistics (relevance scores for the
// list protocol). budget = 0 degrades to bayes_greedy_next with
// posterior-weighted means as scores.
MctsSearchResult mcts_search(const PosteriorState& posterior, const GroupModel& gm,
                             const PolicyContext& ctx, const MctsOptions& opt, RngStream& rng);

int mcts_next(const PosteriorState& posterior, const GroupModel& gm, const PolicyContext& ctx,
              int budget, int horizon, double c_ucb, RngStream& rng);

// Argmax of next_item_dist over unseen items, ties by lowest id.
int rlt4rec_next(const ModelParams& params, const PolicyContext& ctx, double target_rating);

// Episode-harness interface. The harness owns the context: it records each
// (item, rating) into it and then calls observe() for policy-specific state.
class Policy {
public:
    virtual ~Policy() = default;
    virtual std::string name() const = 0;
    virtual void reset(PolicyContext& ctx) { (void)ctx; }
    virtual int next(const PolicyContext& ctx, RngStream& rng) = 0;
    virtual void observe(PolicyContext& ctx, int item, double rating) {
        (void)ctx;
        (void)item;
        (void)rating;
    }
    // Per-item relevance scores for precision@K; seen items may carry any
    // value (they are excluded from ranking).
    virtual std::vector<double> relevance_scores(const PolicyContext& ctx, RngStream& rng) = 0;
};

std::unique_ptr<Policy> make_best_star_policy(const GroupModel& gm, int group);
std::unique_ptr<Policy> make_random_uniform_policy(int n_items);
std::unique_ptr<Policy> make_random_popular_policy(const GroupModel& gm);
std::unique_ptr<Policy> make_bayes_greedy_policy(const GroupModel& gm);
std::unique_ptr<Policy> make_mcts_policy(const GroupModel& gm, const MctsOptions& opt);
std::unique_ptr<Policy> make_rlt4rec_policy(const ModelParams& params, double target_rating,
                                            std::string name = "rlt4rec");

}  // namespace rlt4rec
