#pragma once

// Episode simulation and cohort metrics: per-t mean-rating curves (prefix and
// instantaneous readings), Precision@K for established users, and CSV report
// emission.

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "rlt4rec/policies.hpp"
#include "rlt4rec/rng.hpp"
#include "rlt4rec/simenv.hpp"

namespace rlt4rec {

struct EpisodeLog {
    int group = 0;
    std::vector<int> items;
    std::vector<double> ratings;
    std::string policy;
    std::uint64_t seed = 0;
};

// One policy-driven session against a fixed user. A policy returning an
// already-seen item is a contract breach and aborts hard.
EpisodeLog run_episode(Policy& policy, const UserRatings& user, const GroupModel& gm, int horizon,
                       RngStream& rng);

struct CurvePoint {
    double mean_rating = 0.0;  // prefix mean over the first t ratings
    double stderr_mean = 0.0;
    double inst_mean = 0.0;  // rating at step t only
    double inst_stderr = 0.0;
};

// Index i holds t = i+1. All logs must share one horizon.
std::vector<CurvePoint> mean_rating_curve(std::span<const EpisodeLog> logs);

// Ranks unseen items by score (descending, ties by lowest id) and returns the
// fraction of the top K whose true user rating exceeds the threshold.
double precision_at_k(const std::vector<double>& scores, const UserRatings& user,
                      const std::vector<bool>& seen, int k, double threshold = 4.0);

struct PrecisionPoint {
    int k = 0;
    double precision = 0.0;
    double stderr_prec = 0.0;
};

struct Report {
    std::string policy;
    std::string dataset;
    std::uint64_t seed = 0;
    std::string config_fingerprint;
    int horizon = 0;
    int episodes = 0;
    std::vector<CurvePoint> curve;
    std::vector<PrecisionPoint> precision;
};

// Fresh policy per episode; best_star needs the genie's group, hence the user.
using PolicyFactory = std::function<std::unique_ptr<Policy>(const UserRatings&)>;

struct CohortOptions {
    int users_per_group = 200;
    int horizon = 25;
    std::vector<int> k_list;             // empty: skip the list protocol
    double precision_threshold = 4.0;
    int precision_warmup = 25;           // list protocol applies once a user rated this many
    int workers = 0;                     // 0: RLT4REC_THREADS or hardware
    std::string dataset_name = "dataset";
    std::string config_fingerprint;
};

// Independent episodes per sampled user; per-episode RNG streams are derived
// as (seed, episode index), so results do not depend on worker scheduling.
Report evaluate_cohort(const PolicyFactory& factory, const std::string& policy_name,
                       const GroupModel& gm, const CohortOptions& opt, std::uint64_t seed);

void save_curve_csv(const Report& report, const std::string& path);
void save_precision_csv(const Report& report, const std::string& path);

}  // namespace rlt4rec
