#include "rlt4rec/policies.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "rlt4rec/util.hpp"

namespace rlt4rec {

namespace {

void require_unseen(const PolicyContext& ctx, const char* who) {
    if (ctx.n_unseen() == 0) {
        fail(cat(who, ": all items have been seen"));
    }
}

// argmax of score(v) over unseen items, ties by lowest id
template <typename ScoreFn>
int argmax_unseen(const std::vector<bool>& seen, ScoreFn score) {
    int best = -1;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t v = 0; v < seen.size(); ++v) {
        if (seen[v]) {
            continue;
        }
        const double s = score(static_cast<int>(v));
        if (s > best_score) {
            best_score = s;
            best = static_cast<int>(v);
        }
    }
    return best;
}

}  // namespace

int best_star_next(const GroupModel& gm, int group, const PolicyContext& ctx) {
    if (group < 0 || group >= gm.n_groups) {
        fail(cat("best_star_next: group ", group, " out of range"));
    }
    require_unseen(ctx, "best_star_next");
    return argmax_unseen(ctx.seen, [&](int v) { return gm.mu(group, v); });
}

int random_uniform_next(const PolicyContext& ctx, int n_items, RngStream& rng) {
    if (ctx.seen.size() != static_cast<std::size_t>(n_items)) {
        fail("random_uniform_next: context size mismatch");
    }
    require_unseen(ctx, "random_uniform_next");
    std::size_t pick = rng.index(ctx.n_unseen());
    for (std::size_t v = 0; v < ctx.seen.size(); ++v) {
        if (!ctx.seen[v]) {
            if (pick == 0) {
                return static_cast<int>(v);
            }
            --pick;
        }
    }
    fail("random_uniform_next: unreachable");
}

int random_popular_next(const GroupModel& gm, const PolicyContext& ctx, RngStream& rng) {
    if (!gm.item_popularity) {
        fail(
            "random_popular_next: the group model carries no item popularity counts; "
            "ingest rating triples (cmd ingest) to obtain them");
    }
    require_unseen(ctx, "random_popular_next");
    const auto& pop = *gm.item_popularity;
    std::vector<double> weights(pop.size(), 0.0);
    double total = 0.0;
    for (std::size_t v = 0; v < pop.size(); ++v) {
        if (!ctx.seen[v]) {
            weights[v] = pop[v];
            total += pop[v];
        }
    }
    if (total <= 0.0) {
        fail("random_popular_next: popularity is zero across all unseen items");
    }
    return static_cast<int>(rng.weighted_index(weights));
}

namespace {

int bayes_greedy_pick(const std::vector<double>& probs, const GroupModel& gm,
                      const std::vector<bool>& seen) {
    return argmax_unseen(seen, [&](int v) {
        double m = 0.0;
        for (int g = 0; g < gm.n_groups; ++g) {
            m += probs[static_cast<std::size_t>(g)] * gm.mu(g, v);
        }
        return m;
    });
}

}  // namespace

int bayes_greedy_next(const PosteriorState& posterior, const GroupModel& gm,
                      const PolicyContext& ctx) {
    require_unseen(ctx, "bayes_greedy_next");
    return bayes_greedy_pick(posterior.probs, gm, ctx.seen);
}

namespace {

// History tree in the POMCP style: action nodes branch on the observed
// rating, discretized to integer buckets, so value statistics condition on
// what the simulated user actually revealed. Without the observation split
// the tree mixes returns across sampled groups and degrades to an open-loop
// search.
struct ActionNode {
    int item = -1;
    int visits = 0;
    double total_return = 0.0;                    // suffix returns from the parent history
    std::vector<std::pair<int, int>> obs;         // (rating bucket, history node), sorted
};

struct HistoryNode {
    int visits = 0;
    std::vector<int> actions;  // action-node indices, sorted by item id
    std::vector<int> untried;  // unseen items without an action node yet
    bool initialized = false;
};

int rating_bucket(double rating) {
    return static_cast<int>(std::lround(std::clamp(rating, -100.0, 100.0)));
}

}  // namespace

MctsSearchResult mcts_search(const PosteriorState& posterior, const GroupModel& gm,
                             const PolicyContext& ctx, const MctsOptions& opt, RngStream& rng) {
    if (opt.budget < 0 || opt.horizon < 1) {
        fail("mcts_search: budget must be >= 0 and horizon >= 1");
    }
    require_unseen(ctx, "mcts_search");

    MctsSearchResult res;
    res.root_values.assign(ctx.seen.size(), std::numeric_limits<double>::quiet_NaN());
    res.root_visits.assign(ctx.seen.size(), 0);

    if (opt.budget == 0) {
        res.item = bayes_greedy_pick(posterior.probs, gm, ctx.seen);
        for (std::size_t v = 0; v < ctx.seen.size(); ++v) {
            if (!ctx.seen[v]) {
                double m = 0.0;
                for (int g = 0; g < gm.n_groups; ++g) {
                    m += posterior.probs[static_cast<std::size_t>(g)] * gm.mu(g, static_cast<int>(v));
                }
                res.root_values[v] = m;
            }
        }
        return res;
    }

    std::vector<HistoryNode> hist(1);
    std::vector<ActionNode> act;
    std::vector<std::pair<int, double>> path;  // (action node, return accumulated before it)
    std::vector<bool> sim_seen;
    for (int sim = 0; sim < opt.budget; ++sim) {
        const int g = static_cast<int>(rng.weighted_index(posterior.probs));
        sim_seen = ctx.seen;
        PosteriorState belief = posterior;
        path.clear();
        std::vector<int> hpath = {0};
        int hnode = 0;
        int depth = 0;
        double ret = 0.0;
        auto draw = [&](int item) {
            const double r = rng.normal(gm.mu(g, item), gm.sigma(g, item));
            ret += r;
            belief = posterior_update(belief, gm, item, r);
            sim_seen[static_cast<std::size_t>(item)] = true;
            ++depth;
            return r;
        };
        // selection / expansion over the history tree
        while (depth < opt.horizon) {
            HistoryNode& cur = hist[static_cast<std::size_t>(hnode)];
            if (!cur.initialized) {
                cur.initialized = true;
                for (std::size_t v = 0; v < sim_seen.size(); ++v) {
                    if (!sim_seen[v]) {
                        cur.untried.push_back(static_cast<int>(v));
                    }
                }
            }
            int anode;
            bool expanded = false;
            if (!cur.untried.empty()) {
                const std::size_t pick = rng.index(cur.untried.size());
                const int item = cur.untried[pick];
                cur.untried.erase(cur.untried.begin() + static_cast<std::ptrdiff_t>(pick));
                anode = static_cast<int>(act.size());
                auto at = std::lower_bound(
                    cur.actions.begin(), cur.actions.end(), item,
                    [&](int idx, int it) { return act[static_cast<std::size_t>(idx)].item < it; });
                cur.actions.insert(at, anode);
                act.emplace_back();
                act.back().item = item;
                expanded = true;
            } else if (cur.actions.empty()) {
                break;  // nothing left to show
            } else {
                anode = -1;
                double best_score = -std::numeric_limits<double>::infinity();
                const double log_n = std::log(static_cast<double>(std::max(cur.visits, 1)));
                for (int idx : cur.actions) {
                    const ActionNode& a = act[static_cast<std::size_t>(idx)];
                    const double mean = a.total_return / std::max(a.visits, 1);
                    const double score = mean + opt.c_ucb * std::sqrt(log_n / static_cast<double>(
                                                                                  std::max(a.visits, 1)));
                    if (score > best_score) {
                        best_score = score;
                        anode = idx;
                    }
                }
            }
            path.emplace_back(anode, ret);
            const double r = draw(act[static_cast<std::size_t>(anode)].item);
            if (expanded || depth >= opt.horizon) {
                break;  // rollout takes over from a fresh node or the horizon ends
            }
            const int bucket = rating_bucket(r);
            auto& obs = act[static_cast<std::size_t>(anode)].obs;
            auto it = std::lower_bound(obs.begin(), obs.end(), bucket,
                                       [](const std::pair<int, int>& o, int b) { return o.first < b; });
            if (it == obs.end() || it->first != bucket) {
                const int fresh = static_cast<int>(hist.size());
                hist.emplace_back();
                it = obs.insert(it, {bucket, fresh});
            }
            hnode = it->second;
            hpath.push_back(hnode);
        }
        // rollout beyond the expanded frontier
        while (depth < opt.horizon) {
            const int item = bayes_greedy_pick(belief.probs, gm, sim_seen);
            if (item < 0) {
                break;
            }
            draw(item);
        }
        for (int idx : hpath) {
            hist[static_cast<std::size_t>(idx)].visits += 1;
        }
        for (const auto& [anode, before] : path) {
            act[static_cast<std::size_t>(anode)].visits += 1;
            act[static_cast<std::size_t>(anode)].total_return += ret - before;
        }
    }

    // Highest visit count wins; visit ties (small budgets leave every child
    // at one visit) fall back to mean return, then lowest item id.
    int best_visits = -1;
    double best_mean = -std::numeric_limits<double>::infinity();
    for (int idx : hist[0].actions) {
        const ActionNode& a = act[static_cast<std::size_t>(idx)];
        const double mean = a.total_return / std::max(a.visits, 1);
        res.root_values[static_cast<std::size_t>(a.item)] = mean;
        res.root_visits[static_cast<std::size_t>(a.item)] = a.visits;
        if (a.visits > best_visits || (a.visits == best_visits && mean > best_mean)) {
            best_visits = a.visits;
            best_mean = mean;
            res.item = a.item;
        }
    }
    if (res.item < 0) {
        res.item = bayes_greedy_pick(posterior.probs, gm, ctx.seen);
    }
    return res;
}

int mcts_next(const PosteriorState& posterior, const GroupModel& gm, const PolicyContext& ctx,
              int budget, int horizon, double c_ucb, RngStream& rng) {
    MctsOptions opt;
    opt.budget = budget;
    opt.horizon = horizon;
    opt.c_ucb = c_ucb;
    return mcts_search(posterior, gm, ctx, opt, rng).item;
}

int rlt4rec_next(const ModelParams& params, const PolicyContext& ctx, double target_rating) {
    require_unseen(ctx, "rlt4rec_next");
    const std::vector<double> dist = next_item_dist(params, ctx.history, target_rating);
    if (dist.size() != ctx.seen.size()) {
        fail("rlt4rec_next: model item count does not match the context");
    }
    return argmax_unseen(ctx.seen, [&](int v) { return dist[static_cast<std::size_t>(v)]; });
}

namespace {

class BestStarPolicy final : public Policy {
public:
    BestStarPolicy(const GroupModel& gm, int group) : gm_(gm), group_(group) {}
    std::string name() const override { return "best_star"; }
    int next(const PolicyContext& ctx, RngStream&) override {
        return best_star_next(gm_, group_, ctx);
    }
    std::vector<double> relevance_scores(const PolicyContext&, RngStream&) override {
        std::vector<double> scores(static_cast<std::size_t>(gm_.n_items));
        for (int v = 0; v < gm_.n_items; ++v) {
            scores[static_cast<std::size_t>(v)] = gm_.mu(group_, v);
        }
        return scores;
    }

private:
    const GroupModel& gm_;
    int group_;
};

class RandomUniformPolicy final : public Policy {
public:
    explicit RandomUniformPolicy(int n_items) : n_items_(n_items) {}
    std::string name() const override { return "random_uniform"; }
    int next(const PolicyContext& ctx, RngStream& rng) override {
        return random_uniform_next(ctx, n_items_, rng);
    }
    std::vector<double> relevance_scores(const PolicyContext&, RngStream& rng) override {
        std::vector<double> scores(static_cast<std::size_t>(n_items_));
        for (auto& s : scores) {
            s = rng.uniform();
        }
        return scores;
    }

private:
    int n_items_;
};

class RandomPopularPolicy final : public Policy {
public:
    explicit RandomPopularPolicy(const GroupModel& gm) : gm_(gm) {}
    std::string name() const override { return "random_popular"; }
    int next(const PolicyContext& ctx, RngStream& rng) override {
        return random_popular_next(gm_, ctx, rng);
    }
    std::vector<double> relevance_scores(const PolicyContext&, RngStream&) override {
        if (!gm_.item_popularity) {
            fail("random_popular: the group model carries no item popularity counts");
        }
        return *gm_.item_popularity;
    }

private:
    const GroupModel& gm_;
};

class BayesGreedyPolicy final : public Policy {
public:
    explicit BayesGreedyPolicy(const GroupModel& gm) : gm_(gm) {}
    std::string name() const override { return "bayes_greedy"; }
    void reset(PolicyContext& ctx) override { ctx.posterior = make_posterior(gm_); }
    int next(const PolicyContext& ctx, RngStream&) override {
        return bayes_greedy_next(*ctx.posterior, gm_, ctx);
    }
    void observe(PolicyContext& ctx, int item, double rating) override {
        ctx.posterior = posterior_update(*ctx.posterior, gm_, item, rating);
    }
    std::vector<double> relevance_scores(const PolicyContext& ctx, RngStream&) override {
        std::vector<double> scores(static_cast<std::size_t>(gm_.n_items));
        for (int v = 0; v < gm_.n_items; ++v) {
            double m = 0.0;
            for (int g = 0; g < gm_.n_groups; ++g) {
                m += ctx.posterior->probs[static_cast<std::size_t>(g)] * gm_.mu(g, v);
            }
            scores[static_cast<std::size_t>(v)] = m;
        }
        return scores;
    }

private:
    const GroupModel& gm_;
};

class MctsPolicy final : public Policy {
public:
    MctsPolicy(const GroupModel& gm, const MctsOptions& opt) : gm_(gm), opt_(opt) {}
    std::string name() const override { return "mcts"; }
    void reset(PolicyContext& ctx) override { ctx.posterior = make_posterior(gm_); }
    int next(const PolicyContext& ctx, RngStream& rng) override {
        return mcts_search(*ctx.posterior, gm_, ctx, opt_, rng).item;
    }
    void observe(PolicyContext& ctx, int item, double rating) override {
        ctx.posterior = posterior_update(*ctx.posterior, gm_, item, rating);
    }
    std::vector<double> relevance_scores(const PolicyContext& ctx, RngStream& rng) override {
        // estimated mean reward per item from one search at the current state
        MctsSearchResult r = mcts_search(*ctx.posterior, gm_, ctx, opt_, rng);
        for (auto& v : r.root_values) {
            if (std::isnan(v)) {
                v = -std::numeric_limits<double>::infinity();
            }
        }
        return r.root_values;
    }

private:
    const GroupModel& gm_;
    MctsOptions opt_;
};

class Rlt4RecPolicy final : public Policy {
public:
    Rlt4RecPolicy(const ModelParams& params, double target_rating, std::string name)
        : params_(params), target_(target_rating), name_(std::move(name)) {}
    std::string name() const override { return name_; }
    int next(const PolicyContext& ctx, RngStream&) override {
        return rlt4rec_next(params_, ctx, target_);
    }
    std::vector<double> relevance_scores(const PolicyContext& ctx, RngStream&) override {
        return next_item_dist(params_, ctx.history, target_);
    }

private:
    const ModelParams& params_;
    double target_;
    std::string name_;
};

}  // namespace

std::unique_ptr<Policy> make_best_star_policy(const GroupModel& gm, int group) {
    return std::make_unique<BestStarPolicy>(gm, group);
}
std::unique_ptr<Policy> make_random_uniform_policy(int n_items) {
    return std::make_unique<RandomUniformPolicy>(n_items);
}
std::unique_ptr<Policy> make_random_popular_policy(const GroupModel& gm) {
    return std::make_unique<RandomPopularPolicy>(gm);
}
std::unique_ptr<Policy> make_bayes_greedy_policy(const GroupModel& gm) {
    return std::make_unique<BayesGreedyPolicy>(gm);
}
std::unique_ptr<Policy> make_mcts_policy(const GroupModel& gm, const MctsOptions& opt) {
    return std::make_unique<MctsPolicy>(gm, opt);
}
std::unique_ptr<Policy> make_rlt4rec_policy(const ModelParams& params, double target_rating,
                                            std::string name) {
    return std::make_unique<Rlt4RecPolicy>(params, target_rating, std::move(name));
}

}  // namespace rlt4rec
