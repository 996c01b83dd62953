#include "rlt4rec/simenv.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "rlt4rec/util.hpp"

namespace rlt4rec {

namespace {

std::string real17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_real_array(std::ostream& os, const std::vector<double>& xs) {
    os << "[";
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) {
            os << ",";
        }
        os << real17(xs[i]);
    }
    os << "]";
}

}  // namespace

void GroupModel::validate() const {
    if (n_groups <= 0 || n_items <= 0) {
        fail(cat("group model: invalid dimensions ", n_groups, "x", n_items));
    }
    const std::size_t cells = static_cast<std::size_t>(n_groups) * n_items;
    if (mean.size() != cells || stddev.size() != cells) {
        fail("group model: mean/stddev size does not match n_groups*n_items");
    }
    for (double s : stddev) {
        if (!(s > 0.0)) {
            fail("group model: stddev entries must be strictly positive");
        }
    }
    if (group_prior.size() != static_cast<std::size_t>(n_groups)) {
        fail("group model: prior length mismatch");
    }
    double total = 0.0;
    for (double p : group_prior) {
        if (p < 0.0) {
            fail("group model: negative prior entry");
        }
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) {
        fail(cat("group model: prior sums to ", total));
    }
    if (item_popularity && item_popularity->size() != static_cast<std::size_t>(n_items)) {
        fail("group model: item_popularity length mismatch");
    }
}

GroupModel make_pd1(int n_groups, int block, double high, double low, double sigma) {
    if (n_groups < 2 || block < 1) {
        fail(cat("make_pd1: need n_groups >= 2 and block >= 1, got ", n_groups, ", ", block));
    }
    GroupModel gm;
    gm.n_groups = n_groups;
    gm.n_items = n_groups * block;
    gm.rating_max = high;
    gm.mean.resize(static_cast<std::size_t>(gm.n_groups) * gm.n_items);
    gm.stddev.assign(gm.mean.size(), sigma);
    gm.group_prior.assign(n_groups, 1.0 / n_groups);
    for (int g = 0; g < n_groups; ++g) {
        for (int v = 0; v < gm.n_items; ++v) {
            gm.mean[static_cast<std::size_t>(g) * gm.n_items + v] = (v / block == g) ? high : low;
        }
    }
    gm.validate();
    return gm;
}

GroupModel make_pd2(int n_groups, int block, double sigma) {
    if (n_groups < 2 || block < 1) {
        fail(cat("make_pd2: need n_groups >= 2 and block >= 1, got ", n_groups, ", ", block));
    }
    GroupModel gm;
    gm.n_groups = n_groups;
    gm.n_items = n_groups * block;
    gm.rating_max = 5.0;
    gm.mean.resize(static_cast<std::size_t>(gm.n_groups) * gm.n_items);
    gm.stddev.assign(gm.mean.size(), sigma);
    gm.group_prior.assign(n_groups, 1.0 / n_groups);
    for (int g = 0; g < n_groups; ++g) {
        for (int v = 0; v < gm.n_items; ++v) {
            const int b = v / block;
            const int offset = ((g - b) % n_groups + n_groups) % n_groups;
            gm.mean[static_cast<std::size_t>(g) * gm.n_items + v] = 5.0 - offset;
        }
    }
    gm.validate();
    return gm;
}

UserRatings sample_user(const GroupModel& gm, std::optional<int> group, RngStream& rng) {
    UserRatings user;
    if (group) {
        if (*group < 0 || *group >= gm.n_groups) {
            fail(cat("sample_user: group ", *group, " out of range [0,", gm.n_groups, ")"));
        }
        user.group = *group;
    } else {
        user.group = static_cast<int>(rng.weighted_index(gm.group_prior));
    }
    user.ratings.resize(gm.n_items);
    for (int v = 0; v < gm.n_items; ++v) {
        user.ratings[v] = rng.normal(gm.mu(user.group, v), gm.sigma(user.group, v));
    }
    return user;
}

OfflineDataset gen_offline_dataset(const GroupModel& gm, int users_per_group, int seq_len,
                                   RngStream& rng) {
    if (seq_len > gm.n_items) {
        fail(cat("gen_offline_dataset: seq_len ", seq_len, " exceeds n_items ", gm.n_items));
    }
    if (users_per_group < 0 || seq_len < 0) {
        fail("gen_offline_dataset: negative users_per_group or seq_len");
    }
    OfflineDataset ds;
    ds.n_items = gm.n_items;
    ds.n_groups = gm.n_groups;
    ds.seq_len = seq_len;
    const std::size_t total = static_cast<std::size_t>(gm.n_groups) * users_per_group;
    ds.sequences.resize(total);
    ds.group_labels.resize(total);
    for (int g = 0; g < gm.n_groups; ++g) {
        for (int u = 0; u < users_per_group; ++u) {
            const std::size_t idx = static_cast<std::size_t>(g) * users_per_group + u;
            RngStream user_rng = rng.fork(idx);
            UserRatings user = sample_user(gm, g, user_rng);
            std::vector<int> items = user_rng.sample_without_replacement(
                static_cast<std::size_t>(gm.n_items), static_cast<std::size_t>(seq_len));
            InteractionHistory seq;
            seq.items = std::move(items);
            seq.ratings.reserve(seq.items.size());
            for (int it : seq.items) {
                seq.ratings.push_back(user.ratings[it]);
            }
            ds.sequences[idx] = std::move(seq);
            ds.group_labels[idx] = g;
        }
    }
    return ds;
}

void save_dataset(const OfflineDataset& ds, const std::string& path) {
    std::ofstream os(path);
    if (!os) {
        fail(cat("save_dataset: cannot open '", path, "'"));
    }
    os << "rlt4rec-dataset,v1," << ds.sequences.size() << "," << ds.seq_len << "," << ds.n_items
       << "," << ds.n_groups << "\n";
    for (std::size_t i = 0; i < ds.sequences.size(); ++i) {
        const auto& seq = ds.sequences[i];
        os << ds.group_labels[i];
        for (std::size_t k = 0; k < seq.size(); ++k) {
            os << "," << seq.items[k] << "," << real17(seq.ratings[k]);
        }
        os << "\n";
    }
    if (!os) {
        fail(cat("save_dataset: write failed for '", path, "'"));
    }
}

OfflineDataset load_dataset(const std::string& path) {
    std::ifstream is(path);
    if (!is) {
        fail(cat("load_dataset: cannot open '", path, "'"));
    }
    std::string line;
    if (!std::getline(is, line)) {
        fail(cat("load_dataset: empty file '", path, "'"));
    }
    OfflineDataset ds;
    std::size_t n_sequences = 0;
    {
        std::istringstream hs(line);
        std::string magic, version, field;
        std::getline(hs, magic, ',');
        std::getline(hs, version, ',');
        if (magic != "rlt4rec-dataset" || version != "v1") {
            fail(cat("load_dataset: '", path, "' is not a v1 dataset file"));
        }
        std::getline(hs, field, ',');
        n_sequences = static_cast<std::size_t>(std::stoull(field));
        std::getline(hs, field, ',');
        ds.seq_len = std::stoi(field);
        std::getline(hs, field, ',');
        ds.n_items = std::stoi(field);
        std::getline(hs, field, ',');
        ds.n_groups = std::stoi(field);
    }
    ds.sequences.reserve(n_sequences);
    ds.group_labels.reserve(n_sequences);
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        std::istringstream ls(line);
        std::string field;
        std::getline(ls, field, ',');
        InteractionHistory seq;
        ds.group_labels.push_back(std::stoi(field));
        while (std::getline(ls, field, ',')) {
            seq.items.push_back(std::stoi(field));
            if (!std::getline(ls, field, ',')) {
                fail(cat("load_dataset: dangling item at '", path, "' line ", line_no));
            }
            seq.ratings.push_back(std::strtod(field.c_str(), nullptr));
        }
        if (seq.size() != static_cast<std::size_t>(ds.seq_len)) {
            fail(cat("load_dataset: sequence length ", seq.size(), " != header seq_len ",
                     ds.seq_len, " at line ", line_no));
        }
        ds.sequences.push_back(std::move(seq));
    }
    if (ds.sequences.size() != n_sequences) {
        fail(cat("load_dataset: header promised ", n_sequences, " sequences, found ",
                 ds.sequences.size()));
    }
    return ds;
}

TriplesData read_triples(const std::string& path) {
    std::ifstream is(path);
    if (!is) {
        fail(cat("read_triples: cannot open '", path, "'"));
    }
    TriplesData out;
    std::unordered_map<std::string, int> user_index, item_index;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        std::istringstream ls(line);
        std::string user, item, rating_str, extra;
        if (!std::getline(ls, user, ',') || !std::getline(ls, item, ',') ||
            !std::getline(ls, rating_str, ',')) {
            fail(cat("read_triples: '", path, "' line ", line_no, ": expected user,item,rating"));
        }
        if (std::getline(ls, extra, ',')) {
            fail(cat("read_triples: '", path, "' line ", line_no, ": too many fields"));
        }
        char* end = nullptr;
        const double rating = std::strtod(rating_str.c_str(), &end);
        if (end == rating_str.c_str() || *end != '\0') {
            if (line_no == 1) {
                continue;  // header line
            }
            fail(cat("read_triples: '", path, "' line ", line_no, ": bad rating '", rating_str,
                     "'"));
        }
        auto uid = user_index.emplace(user, static_cast<int>(out.user_ids.size()));
        if (uid.second) {
            out.user_ids.push_back(user);
        }
        auto iid = item_index.emplace(item, static_cast<int>(out.item_ids.size()));
        if (iid.second) {
            out.item_ids.push_back(item);
        }
        out.records.push_back({uid.first->second, iid.first->second, rating});
    }
    if (out.records.empty()) {
        fail(cat("read_triples: '", path, "' contains no records"));
    }
    return out;
}

namespace {

struct KMeansResult {
    std::vector<int> assignment;
    double sse = std::numeric_limits<double>::infinity();
};

double sq_dist(const double* a, const double* b, int d) {
    double s = 0.0;
    for (int i = 0; i < d; ++i) {
        const double diff = a[i] - b[i];
        s += diff * diff;
    }
    return s;
}

KMeansResult kmeans_once(const std::vector<double>& x, int n, int d, int k, RngStream& rng,
                         int max_iter) {
    std::vector<double> centroids(static_cast<std::size_t>(k) * d);
    std::vector<int> pick = rng.sample_without_replacement(static_cast<std::size_t>(n),
                                                           static_cast<std::size_t>(k));
    for (int c = 0; c < k; ++c) {
        std::copy(x.begin() + static_cast<std::size_t>(pick[c]) * d,
                  x.begin() + static_cast<std::size_t>(pick[c] + 1) * d,
                  centroids.begin() + static_cast<std::size_t>(c) * d);
    }
    KMeansResult res;
    res.assignment.assign(n, -1);
    std::vector<int> counts(k);
    for (int iter = 0; iter < max_iter; ++iter) {
        bool changed = false;
        for (int i = 0; i < n; ++i) {
            int best = 0;
            double best_d = sq_dist(&x[static_cast<std::size_t>(i) * d], &centroids[0], d);
            for (int c = 1; c < k; ++c) {
                const double dist =
                    sq_dist(&x[static_cast<std::size_t>(i) * d], &centroids[static_cast<std::size_t>(c) * d], d);
                if (dist < best_d) {
                    best_d = dist;
                    best = c;
                }
            }
            if (res.assignment[i] != best) {
                res.assignment[i] = best;
                changed = true;
            }
        }
        std::fill(centroids.begin(), centroids.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (int i = 0; i < n; ++i) {
            const int c = res.assignment[i];
            counts[c] += 1;
            for (int j = 0; j < d; ++j) {
                centroids[static_cast<std::size_t>(c) * d + j] += x[static_cast<std::size_t>(i) * d + j];
            }
        }
        for (int c = 0; c < k; ++c) {
            if (counts[c] > 0) {
                for (int j = 0; j < d; ++j) {
                    centroids[static_cast<std::size_t>(c) * d + j] /= counts[c];
                }
            }
        }
        // Reseed empty clusters to the point farthest from its own centroid.
        for (int c = 0; c < k; ++c) {
            if (counts[c] != 0) {
                continue;
            }
            int far = 0;
            double far_d = -1.0;
            for (int i = 0; i < n; ++i) {
                const double dist = sq_dist(
                    &x[static_cast<std::size_t>(i) * d],
                    &centroids[static_cast<std::size_t>(res.assignment[i]) * d], d);
                if (dist > far_d) {
                    far_d = dist;
                    far = i;
                }
            }
            std::copy(x.begin() + static_cast<std::size_t>(far) * d,
                      x.begin() + static_cast<std::size_t>(far + 1) * d,
                      centroids.begin() + static_cast<std::size_t>(c) * d);
            res.assignment[far] = c;
            changed = true;
        }
        if (!changed) {
            break;
        }
    }
    res.sse = 0.0;
    for (int i = 0; i < n; ++i) {
        res.sse += sq_dist(&x[static_cast<std::size_t>(i) * d],
                           &centroids[static_cast<std::size_t>(res.assignment[i]) * d], d);
    }
    return res;
}

}  // namespace

GroupModel fit_group_model(const TriplesData& triples, int n_groups, RngStream& rng) {
    if (n_groups < 1) {
        fail("fit_group_model: n_groups must be >= 1");
    }
    const int n_users = static_cast<int>(triples.user_ids.size());
    const int n_items = static_cast<int>(triples.item_ids.size());
    if (n_groups > n_users) {
        fail(cat("fit_group_model: ", n_groups, " groups for only ", n_users, " users"));
    }

    // Mean-imputed user rating vectors for clustering.
    std::vector<double> sum(n_users, 0.0);
    std::vector<int> cnt(n_users, 0);
    for (const auto& r : triples.records) {
        sum[r.user] += r.rating;
        cnt[r.user] += 1;
    }
    std::vector<double> features(static_cast<std::size_t>(n_users) * n_items);
    for (int u = 0; u < n_users; ++u) {
        if (cnt[u] == 0) {
            fail(cat("fit_group_model: user '", triples.user_ids[u], "' has no ratings"));
        }
        const double user_mean = sum[u] / cnt[u];
        std::fill(features.begin() + static_cast<std::size_t>(u) * n_items,
                  features.begin() + static_cast<std::size_t>(u + 1) * n_items, user_mean);
    }
    for (const auto& r : triples.records) {
        features[static_cast<std::size_t>(r.user) * n_items + r.item] = r.rating;
    }

    constexpr int kRestarts = 20;
    constexpr int kMaxIter = 100;
    KMeansResult best;
    for (int restart = 0; restart < kRestarts; ++restart) {
        RngStream restart_rng = rng.fork(static_cast<std::uint64_t>(restart));
        KMeansResult res = kmeans_once(features, n_users, n_items, n_groups, restart_rng, kMaxIter);
        if (res.sse < best.sse) {
            best = std::move(res);
        }
    }

    GroupModel gm;
    gm.n_groups = n_groups;
    gm.n_items = n_items;
    const std::size_t cells = static_cast<std::size_t>(n_groups) * n_items;
    std::vector<double> cell_sum(cells, 0.0), cell_sq(cells, 0.0);
    std::vector<int> cell_cnt(cells, 0);
    std::vector<double> group_sum(n_groups, 0.0), group_sq(n_groups, 0.0);
    std::vector<long> group_cnt(n_groups, 0);
    std::vector<double> item_sum(n_items, 0.0);
    std::vector<int> item_cnt(n_items, 0);
    double grand_sum = 0.0;
    double max_rating = -std::numeric_limits<double>::infinity();
    for (const auto& r : triples.records) {
        const int g = best.assignment[r.user];
        const std::size_t c = static_cast<std::size_t>(g) * n_items + r.item;
        cell_sum[c] += r.rating;
        cell_sq[c] += r.rating * r.rating;
        cell_cnt[c] += 1;
        group_sum[g] += r.rating;
        group_sq[g] += r.rating * r.rating;
        group_cnt[g] += 1;
        item_sum[r.item] += r.rating;
        item_cnt[r.item] += 1;
        grand_sum += r.rating;
        max_rating = std::max(max_rating, r.rating);
    }
    const double grand_mean = grand_sum / static_cast<double>(triples.records.size());
    gm.rating_max = max_rating;

    constexpr double kStddevFloor = 0.25;
    constexpr int kMinCellCount = 3;
    std::vector<double> group_stddev(n_groups, kStddevFloor);
    for (int g = 0; g < n_groups; ++g) {
        if (group_cnt[g] >= 2) {
            const double m = group_sum[g] / group_cnt[g];
            const double var =
                std::max(0.0, (group_sq[g] - group_cnt[g] * m * m) / (group_cnt[g] - 1));
            group_stddev[g] = std::max(kStddevFloor, std::sqrt(var));
        }
    }

    gm.mean.resize(cells);
    gm.stddev.resize(cells);
    for (int g = 0; g < n_groups; ++g) {
        for (int v = 0; v < n_items; ++v) {
            const std::size_t c = static_cast<std::size_t>(g) * n_items + v;
            if (cell_cnt[c] > 0) {
                gm.mean[c] = cell_sum[c] / cell_cnt[c];
            } else if (item_cnt[v] > 0) {
                gm.mean[c] = item_sum[v] / item_cnt[v];
            } else {
                gm.mean[c] = grand_mean;
            }
            if (cell_cnt[c] >= kMinCellCount) {
                const double m = cell_sum[c] / cell_cnt[c];
                const double var =
                    std::max(0.0, (cell_sq[c] - cell_cnt[c] * m * m) / (cell_cnt[c] - 1));
                gm.stddev[c] = std::max(kStddevFloor, std::sqrt(var));
            } else {
                gm.stddev[c] = group_stddev[g];
            }
        }
    }

    gm.group_prior.assign(n_groups, 0.0);
    for (int u = 0; u < n_users; ++u) {
        gm.group_prior[best.assignment[u]] += 1.0;
    }
    for (double& p : gm.group_prior) {
        p /= n_users;
    }

    std::vector<double> popularity(n_items);
    for (int v = 0; v < n_items; ++v) {
        popularity[v] = static_cast<double>(item_cnt[v]);
    }
    gm.item_popularity = std::move(popularity);
    gm.validate();
    return gm;
}

void save_group_model(const GroupModel& gm, const std::string& path) {
    gm.validate();
    std::ofstream os(path);
    if (!os) {
        fail(cat("save_group_model: cannot open '", path, "'"));
    }
    os << "{\n";
    os << "  \"n_groups\": " << gm.n_groups << ",\n";
    os << "  \"n_items\": " << gm.n_items << ",\n";
    os << "  \"rating_max\": " << real17(gm.rating_max) << ",\n";
    os << "  \"mean\": ";
    write_real_array(os, gm.mean);
    os << ",\n  \"stddev\": ";
    write_real_array(os, gm.stddev);
    os << ",\n  \"group_prior\": ";
    write_real_array(os, gm.group_prior);
    os << ",\n  \"item_popularity\": ";
    if (gm.item_popularity) {
        write_real_array(os, *gm.item_popularity);
    } else {
        os << "null";
    }
    os << "\n}\n";
    if (!os) {
        fail(cat("save_group_model: write failed for '", path, "'"));
    }
}

GroupModel load_group_model(const std::string& path) {
    std::ifstream is(path);
    if (!is) {
        fail(cat("load_group_model: cannot open '", path, "'"));
    }
    nlohmann::json j;
    try {
        is >> j;
    } catch (const std::exception& e) {
        fail(cat("load_group_model: '", path, "': ", e.what()));
    }
    GroupModel gm;
    try {
        gm.n_groups = j.at("n_groups").get<int>();
        gm.n_items = j.at("n_items").get<int>();
        gm.rating_max = j.at("rating_max").get<double>();
        gm.mean = j.at("mean").get<std::vector<double>>();
        gm.stddev = j.at("stddev").get<std::vector<double>>();
        gm.group_prior = j.at("group_prior").get<std::vector<double>>();
        if (j.contains("item_popularity") && !j.at("item_popularity").is_null()) {
            gm.item_popularity = j.at("item_popularity").get<std::vector<double>>();
        }
    } catch (const std::exception& e) {
        fail(cat("load_group_model: '", path, "': ", e.what()));
    }
    gm.validate();
    return gm;
}

}  // namespace rlt4rec
