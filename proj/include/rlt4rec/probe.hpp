#pragma once

// Information-state probing: a 2-layer MLP trained to predict the exact
// Bayesian group posterior from the model's bottleneck activations, with
// per-timestep MAE and group-estimation accuracy against the true-posterior
// ceiling.

#include <string>
#include <utility>
#include <vector>

#include "rlt4rec/model.hpp"
#include "rlt4rec/posterior.hpp"
#include "rlt4rec/simenv.hpp"

namespace rlt4rec {

struct ProbeSample {
    std::vector<double> activation;      // s_hat after t pairs
    std::vector<double> true_posterior;  // exact Eq-style posterior over groups
    int true_group = 0;
    int t = 0;  // items rated so far
};

struct ProbeSamples {
    std::vector<ProbeSample> samples;
    int n_groups = 0;
    int d = 0;
    int horizon = 0;
};

struct ProbeCollectOptions {
    int users_per_group = 200;
    int horizon = 5;
    int workers = 0;
};

// For every simulated user and every t = 1..horizon over one random distinct
// item sequence, pairs the bottleneck activation at the latest item token
// with the exact posterior over the same observations.
ProbeSamples collect_probe_data(const ModelParams& params, const GroupModel& gm,
                                const ProbeCollectOptions& opt, RngStream& rng);

// User-disjoint split (samples stay in per-user blocks of `horizon`).
// Returns {train, eval} with ~eval_fraction of the users in eval.
std::pair<ProbeSamples, ProbeSamples> split_probe_by_user(const ProbeSamples& data,
                                                          double eval_fraction, RngStream& rng);

struct ProbeParams {
    int d = 0, hidden = 0, n_groups = 0;
    diff::TensorPtrT<float> w1, b1;  // [d, hidden], [hidden]
    diff::TensorPtrT<float> w2, b2;  // [hidden, n_groups], [n_groups]
};

struct ProbeTrainOptions {
    int hidden = 64;
    int epochs = 100;
    double lr = 1e-3;
    int batch_size = 256;
};

// Cross-entropy against the soft posterior targets, trained with Adam.
ProbeParams train_probe(const ProbeSamples& data, const ProbeTrainOptions& opt, RngStream& rng);

// Probe output distribution for one activation.
std::vector<double> probe_predict(const ProbeParams& probe, const std::vector<double>& activation);

struct ProbeMetricsRow {
    int t = 0;
    double mae = 0.0;        // mean over groups then samples of |P - P_hat|
    double accuracy = 0.0;   // argmax probe == true group
    double accuracy_true_posterior = 0.0;  // ceiling: argmax exact posterior
    int n = 0;
};

std::vector<ProbeMetricsRow> probe_metrics(const ProbeParams& probe, const ProbeSamples& data);

// Table-shaped report: per-t columns for the trained model, the random
// (untrained) baseline, and the true-posterior ceiling.
struct ProbeReport {
    std::vector<int> t;
    std::vector<double> mae_trained;
    std::vector<double> mae_random;
    std::vector<double> acc_probe;
    std::vector<double> acc_true_posterior;
    std::vector<double> acc_probe_random;
};

void save_probe_report(const ProbeReport& report, const std::string& path);

}  // namespace rlt4rec
