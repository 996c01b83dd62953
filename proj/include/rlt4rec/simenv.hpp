#pragma once

// Ground-truth user simulator: group-Gaussian rating model, the polarised
// synthetic datasets, user sampling, random offline training data, and
// k-means ingestion of (user, item, rating) triples.

#include <optional>
#include <string>
#include <vector>

#include "rlt4rec/rng.hpp"

namespace rlt4rec {

// Ordered (item, rating) pairs; the only thing a policy ever sees of a user.
struct InteractionHistory {
    std::vector<int> items;
    std::vector<double> ratings;

    std::size_t size() const { return items.size(); }
    void push(int item, double rating) {
        items.push_back(item);
        ratings.push_back(rating);
    }
};

struct GroupModel {
    int n_groups = 0;
    int n_items = 0;
    double rating_max = 5.0;
    std::vector<double> mean;         // [n_groups * n_items], row-major by group
    std::vector<double> stddev;       // same layout, strictly positive
    std::vector<double> group_prior;  // sums to 1
    std::optional<std::vector<double>> item_popularity;  // per-item rating counts

    double mu(int g, int v) const { return mean[static_cast<std::size_t>(g) * n_items + v]; }
    double sigma(int g, int v) const { return stddev[static_cast<std::size_t>(g) * n_items + v]; }
    void validate() const;
};

// One simulated user: group label plus a fully materialized rating vector,
// fixed for the user's lifetime.
struct UserRatings {
    int group = 0;
    std::vector<double> ratings;
};

struct OfflineDataset {
    std::vector<InteractionHistory> sequences;  // uniform length seq_len
    std::vector<int> group_labels;              // parallel; for probing only
    int n_items = 0;
    int n_groups = 0;
    int seq_len = 0;
};

GroupModel make_pd1(int n_groups = 4, int block = 25, double high = 5.0, double low = 1.0,
                    double sigma = 0.25);
GroupModel make_pd2(int n_groups = 5, int block = 25, double sigma = 0.5);

// Draws one user; the group comes from the prior unless given explicitly.
UserRatings sample_user(const GroupModel& gm, std::optional<int> group, RngStream& rng);

// users_per_group users per group; per-user items drawn uniformly without
// replacement. Per-user randomness forks off `rng` by user index, so parallel
// regeneration is stream-stable.
OfflineDataset gen_offline_dataset(const GroupModel& gm, int users_per_group, int seq_len,
                                   RngStream& rng);

void save_dataset(const OfflineDataset& ds, const std::string& path);
OfflineDataset load_dataset(const std::string& path);

// Triples ingestion: "user_id,item_id,rating" lines, optional header. Users
// and items are re-indexed densely in first-appearance order.
struct TriplesData {
    struct Record {
        int user;
        int item;
        double rating;
    };
    std::vector<Record> records;
    std::vector<std::string> user_ids;  // dense user index -> original id
    std::vector<std::string> item_ids;  // dense item index -> original id
};

TriplesData read_triples(const std::string& path);

// k-means over mean-imputed user rating vectors, then per-(group, item)
// empirical statistics with shrinkage for sparse cells.
GroupModel fit_group_model(const TriplesData& triples, int n_groups, RngStream& rng);

void save_group_model(const GroupModel& gm, const std::string& path);
GroupModel load_group_model(const std::string& path);

}  // namespace rlt4rec
