#include "rlt4rec/evalharness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "rlt4rec/util.hpp"

namespace rlt4rec {

EpisodeLog run_episode(Policy& policy, const UserRatings& user, const GroupModel& gm, int horizon,
                       RngStream& rng) {
    if (horizon > gm.n_items) {
        fail(cat("run_episode: horizon ", horizon, " exceeds n_items ", gm.n_items));
    }
    EpisodeLog log;
    log.group = user.group;
    log.policy = policy.name();
    PolicyContext ctx = PolicyContext::make(gm.n_items);
    policy.reset(ctx);
    for (int t = 0; t < horizon; ++t) {
        const int item = policy.next(ctx, rng);
        if (item < 0 || item >= gm.n_items) {
            fail(cat("run_episode: policy '", policy.name(), "' returned invalid item ", item));
        }
        if (ctx.seen[static_cast<std::size_t>(item)]) {
            throw std::logic_error(cat("run_episode: policy '", policy.name(),
                                       "' repeated item ", item, " at step ", t));
        }
        const double rating = user.ratings[static_cast<std::size_t>(item)];
        ctx.record(item, rating);
        policy.observe(ctx, item, rating);
        log.items.push_back(item);
        log.ratings.push_back(rating);
    }
    return log;
}

std::vector<CurvePoint> mean_rating_curve(std::span<const EpisodeLog> logs) {
    if (logs.empty()) {
        fail("mean_rating_curve: no episodes");
    }
    const std::size_t horizon = logs[0].ratings.size();
    for (const auto& log : logs) {
        if (log.ratings.size() != horizon) {
            fail("mean_rating_curve: episodes disagree on horizon");
        }
    }
    const double n = static_cast<double>(logs.size());
    std::vector<CurvePoint> curve(horizon);
    std::vector<double> prefix(logs.size());
    for (std::size_t t = 0; t < horizon; ++t) {
        double sum_prefix = 0.0, sum_inst = 0.0;
        for (std::size_t e = 0; e < logs.size(); ++e) {
            prefix[e] += logs[e].ratings[t];
            sum_prefix += prefix[e] / static_cast<double>(t + 1);
            sum_inst += logs[e].ratings[t];
        }
        CurvePoint& p = curve[t];
        p.mean_rating = sum_prefix / n;
        p.inst_mean = sum_inst / n;
        if (logs.size() > 1) {
            double sq_prefix = 0.0, sq_inst = 0.0;
            for (std::size_t e = 0; e < logs.size(); ++e) {
                const double dp = prefix[e] / static_cast<double>(t + 1) - p.mean_rating;
                sq_prefix += dp * dp;
                const double di = logs[e].ratings[t] - p.inst_mean;
                sq_inst += di * di;
            }
            p.stderr_mean = std::sqrt(sq_prefix / (n - 1.0)) / std::sqrt(n);
            p.inst_stderr = std::sqrt(sq_inst / (n - 1.0)) / std::sqrt(n);
        }
    }
    return curve;
}

double precision_at_k(const std::vector<double>& scores, const UserRatings& user,
                      const std::vector<bool>& seen, int k, double threshold) {
    if (scores.size() != user.ratings.size() || scores.size() != seen.size()) {
        fail("precision_at_k: scores/ratings/seen sizes disagree");
    }
    std::vector<int> unseen;
    for (std::size_t v = 0; v < seen.size(); ++v) {
        if (!seen[v]) {
            unseen.push_back(static_cast<int>(v));
        }
    }
    if (k < 1 || static_cast<std::size_t>(k) > unseen.size()) {
        fail(cat("precision_at_k: K=", k, " outside [1,", unseen.size(), "]"));
    }
    std::partial_sort(unseen.begin(), unseen.begin() + k, unseen.end(), [&](int a, int b) {
        const double sa = scores[static_cast<std::size_t>(a)];
        const double sb = scores[static_cast<std::size_t>(b)];
        if (sa != sb) {
            return sa > sb;
        }
        return a < b;
    });
    int relevant = 0;
    for (int i = 0; i < k; ++i) {
        relevant += user.ratings[static_cast<std::size_t>(unseen[static_cast<std::size_t>(i)])] >
                    threshold;
    }
    return static_cast<double>(relevant) / static_cast<double>(k);
}

Report evaluate_cohort(const PolicyFactory& factory, const std::string& policy_name,
                       const GroupModel& gm, const CohortOptions& opt, std::uint64_t seed) {
    if (opt.users_per_group < 1 || opt.horizon < 1) {
        fail("evaluate_cohort: users_per_group and horizon must be positive");
    }
    const std::size_t episodes =
        static_cast<std::size_t>(gm.n_groups) * static_cast<std::size_t>(opt.users_per_group);
    const bool want_precision =
        !opt.k_list.empty() && opt.horizon >= opt.precision_warmup &&
        gm.n_items > opt.precision_warmup;

    std::vector<EpisodeLog> logs(episodes);
    std::vector<std::vector<double>> precisions(opt.k_list.size());
    for (auto& p : precisions) {
        p.assign(episodes, 0.0);
    }

    RngStream base(seed);
    parallel_for(episodes, opt.workers, [&](std::size_t e) {
        const int group = static_cast<int>(e) / opt.users_per_group;
        RngStream user_rng = base.fork(2 * e);
        RngStream ep_rng = base.fork(2 * e + 1);
        const UserRatings user = sample_user(gm, group, user_rng);
        std::unique_ptr<Policy> policy = factory(user);
        logs[e] = run_episode(*policy, user, gm, opt.horizon, ep_rng);
        logs[e].seed = seed;
        if (want_precision) {
            // replay the first `warmup` steps into a fresh policy, then score
            std::unique_ptr<Policy> scorer = factory(user);
            PolicyContext ctx = PolicyContext::make(gm.n_items);
            scorer->reset(ctx);
            for (int t = 0; t < opt.precision_warmup; ++t) {
                const int item = logs[e].items[static_cast<std::size_t>(t)];
                const double rating = logs[e].ratings[static_cast<std::size_t>(t)];
                ctx.record(item, rating);
                scorer->observe(ctx, item, rating);
            }
            RngStream score_rng = ep_rng.fork(0x5c05e);
            const std::vector<double> scores = scorer->relevance_scores(ctx, score_rng);
            for (std::size_t ki = 0; ki < opt.k_list.size(); ++ki) {
                precisions[ki][e] = precision_at_k(scores, user, ctx.seen, opt.k_list[ki],
                                                   opt.precision_threshold);
            }
        }
    });

    Report report;
    report.policy = policy_name;
    report.dataset = opt.dataset_name;
    report.seed = seed;
    report.config_fingerprint = opt.config_fingerprint;
    report.horizon = opt.horizon;
    report.episodes = static_cast<int>(episodes);
    report.curve = mean_rating_curve(logs);
    if (want_precision) {
        const double n = static_cast<double>(episodes);
        for (std::size_t ki = 0; ki < opt.k_list.size(); ++ki) {
            PrecisionPoint p;
            p.k = opt.k_list[ki];
            double sum = 0.0;
            for (double x : precisions[ki]) {
                sum += x;
            }
            p.precision = sum / n;
            if (episodes > 1) {
                double sq = 0.0;
                for (double x : precisions[ki]) {
                    sq += (x - p.precision) * (x - p.precision);
                }
                p.stderr_prec = std::sqrt(sq / (n - 1.0)) / std::sqrt(n);
            }
            report.precision.push_back(p);
        }
    }
    return report;
}

namespace {

std::string real17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

void save_curve_csv(const Report& report, const std::string& path) {
    std::ofstream os(path);
    if (!os) {
        fail(cat("save_curve_csv: cannot open '", path, "'"));
    }
    os << "t,mean_rating,stderr,policy,dataset,seed,inst_mean,inst_stderr\n";
    for (std::size_t i = 0; i < report.curve.size(); ++i) {
        const CurvePoint& p = report.curve[i];
        os << (i + 1) << "," << real17(p.mean_rating) << "," << real17(p.stderr_mean) << ","
           << report.policy << "," << report.dataset << "," << report.seed << ","
           << real17(p.inst_mean) << "," << real17(p.inst_stderr) << "\n";
    }
}

void save_precision_csv(const Report& report, const std::string& path) {
    std::ofstream os(path);
    if (!os) {
        fail(cat("save_precision_csv: cannot open '", path, "'"));
    }
    os << "K,precision,stderr,policy,dataset,seed\n";
    for (const PrecisionPoint& p : report.precision) {
        os << p.k << "," << real17(p.precision) << "," << real17(p.stderr_prec) << ","
           << report.policy << "," << report.dataset << "," << report.seed << "\n";
    }
}

}  // namespace rlt4rec
