#include "rlt4rec/probe.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "rlt4rec/optim.hpp"
#include "rlt4rec/util.hpp"

namespace rlt4rec {

ProbeSamples collect_probe_data(const ModelParams& params, const GroupModel& gm,
                                const ProbeCollectOptions& opt, RngStream& rng) {
    if (opt.users_per_group < 1 || opt.horizon < 1) {
        fail("collect_probe_data: users_per_group and horizon must be positive");
    }
    if (opt.horizon > gm.n_items) {
        fail(cat("collect_probe_data: horizon ", opt.horizon, " exceeds n_items ", gm.n_items));
    }
    if (params.hp.n_items < gm.n_items) {
        fail("collect_probe_data: model covers fewer items than the group model");
    }
    ProbeSamples out;
    out.n_groups = gm.n_groups;
    out.d = params.hp.d;
    out.horizon = opt.horizon;
    const std::size_t n_users =
        static_cast<std::size_t>(gm.n_groups) * static_cast<std::size_t>(opt.users_per_group);
    out.samples.resize(n_users * static_cast<std::size_t>(opt.horizon));

    parallel_for(n_users, opt.workers, [&](std::size_t u) {
        const int group = static_cast<int>(u) / opt.users_per_group;
        RngStream user_rng = rng.fork(u);
        const UserRatings user = sample_user(gm, group, user_rng);
        InteractionHistory pairs;
        for (int it : user_rng.sample_without_replacement(static_cast<std::size_t>(gm.n_items),
                                                          static_cast<std::size_t>(opt.horizon))) {
            pairs.push(it, user.ratings[static_cast<std::size_t>(it)]);
        }
        // one causal forward covers every prefix; s_hat at item token t-1
        // equals the truncated forward over the first t pairs
        const TokenSeq seq = tokenize_pairs(params.hp, pairs);
        const ForwardOut fwd = forward(params, seq);
        PosteriorState post = make_posterior(gm);
        for (int t = 1; t <= opt.horizon; ++t) {
            post = posterior_update(post, gm, pairs.items[static_cast<std::size_t>(t - 1)],
                                    pairs.ratings[static_cast<std::size_t>(t - 1)]);
            ProbeSample& s = out.samples[u * static_cast<std::size_t>(opt.horizon) +
                                         static_cast<std::size_t>(t - 1)];
            s.activation = fwd.seqs[0].user_embeddings[static_cast<std::size_t>(t - 1)];
            s.true_posterior = post.probs;
            s.true_group = group;
            s.t = t;
        }
    });
    return out;
}

std::pair<ProbeSamples, ProbeSamples> split_probe_by_user(const ProbeSamples& data,
                                                          double eval_fraction, RngStream& rng) {
    if (data.horizon <= 0 || data.samples.size() % static_cast<std::size_t>(data.horizon) != 0) {
        fail("split_probe_by_user: samples are not user-contiguous");
    }
    const std::size_t n_users = data.samples.size() / static_cast<std::size_t>(data.horizon);
    const std::size_t n_eval = static_cast<std::size_t>(static_cast<double>(n_users) * eval_fraction);
    const std::vector<std::size_t> perm = rng.permutation(n_users);
    ProbeSamples train, eval;
    train.n_groups = eval.n_groups = data.n_groups;
    train.d = eval.d = data.d;
    train.horizon = eval.horizon = data.horizon;
    for (std::size_t i = 0; i < n_users; ++i) {
        ProbeSamples& dst = i < n_eval ? eval : train;
        const std::size_t base = perm[i] * static_cast<std::size_t>(data.horizon);
        for (int t = 0; t < data.horizon; ++t) {
            dst.samples.push_back(data.samples[base + static_cast<std::size_t>(t)]);
        }
    }
    return {std::move(train), std::move(eval)};
}

ProbeParams train_probe(const ProbeSamples& data, const ProbeTrainOptions& opt, RngStream& rng) {
    if (data.samples.empty()) {
        fail("train_probe: no samples");
    }
    if (opt.hidden < 1 || opt.epochs < 0 || opt.batch_size < 1) {
        fail("train_probe: invalid options");
    }
    const std::size_t d = static_cast<std::size_t>(data.d);
    const std::size_t h = static_cast<std::size_t>(opt.hidden);
    const std::size_t g = static_cast<std::size_t>(data.n_groups);

    ProbeParams probe;
    probe.d = data.d;
    probe.hidden = opt.hidden;
    probe.n_groups = data.n_groups;
    RngStream init = rng.fork(1);
    auto gauss = [&](std::vector<std::size_t> shape, double std, std::uint64_t stream) {
        auto t = diff::TensorT<float>::make(std::move(shape), true);
        RngStream r = init.fork(stream);
        for (auto& x : t->data) {
            x = static_cast<float>(r.normal(0.0, std));
        }
        return t;
    };
    probe.w1 = gauss({d, h}, 1.0 / std::sqrt(static_cast<double>(d)), 0);
    probe.b1 = diff::TensorT<float>::make({h}, true);
    probe.w2 = gauss({h, g}, 1.0 / std::sqrt(static_cast<double>(h)), 1);
    probe.b2 = diff::TensorT<float>::make({g}, true);

    diff::ParamList params = {{"probe.w1", probe.w1},
                              {"probe.b1", probe.b1},
                              {"probe.w2", probe.w2},
                              {"probe.b2", probe.b2}};
    auto adam = diff::AdamState::make(params);
    diff::AdamOptions adam_opt;
    adam_opt.lr = opt.lr;
    adam_opt.weight_decay = 0.0;

    const std::size_t n = data.samples.size();
    const std::size_t bs = static_cast<std::size_t>(opt.batch_size);
    RngStream shuffle = rng.fork(2);
    for (int epoch = 1; epoch <= opt.epochs; ++epoch) {
        const std::vector<std::size_t> order = shuffle.fork(static_cast<std::uint64_t>(epoch)).permutation(n);
        for (std::size_t pos = 0; pos < n; pos += bs) {
            const std::size_t take = std::min(bs, n - pos);
            std::vector<float> x(take * d), t(take * g);
            for (std::size_t i = 0; i < take; ++i) {
                const ProbeSample& s = data.samples[order[pos + i]];
                for (std::size_t j = 0; j < d; ++j) {
                    x[i * d + j] = static_cast<float>(s.activation[j]);
                }
                for (std::size_t j = 0; j < g; ++j) {
                    t[i * g + j] = static_cast<float>(s.true_posterior[j]);
                }
            }
            for (auto& np : params) {
                np.tensor->zero_grad();
            }
            auto xc = diff::TensorT<float>::constant({take, d}, std::move(x));
            auto tc = diff::TensorT<float>::constant({take, g}, std::move(t));
            auto hidden = diff::tanh(diff::add(diff::matmul(xc, probe.w1), probe.b1));
            auto logits = diff::add(diff::matmul(hidden, probe.w2), probe.b2);
            auto loss = diff::cross_entropy_soft(logits, tc);
            const double lv = static_cast<double>(diff::backward(loss));
            if (!std::isfinite(lv)) {
                fail(cat("train_probe: non-finite loss at epoch ", epoch));
            }
            diff::adam_step(params, adam, adam_opt);
        }
    }
    return probe;
}

std::vector<double> probe_predict(const ProbeParams& probe, const std::vector<double>& activation) {
    if (activation.size() != static_cast<std::size_t>(probe.d)) {
        fail("probe_predict: activation width mismatch");
    }
    const std::size_t d = static_cast<std::size_t>(probe.d);
    const std::size_t h = static_cast<std::size_t>(probe.hidden);
    const std::size_t g = static_cast<std::size_t>(probe.n_groups);
    std::vector<double> hidden(h);
    for (std::size_t j = 0; j < h; ++j) {
        double acc = static_cast<double>(probe.b1->data[j]);
        for (std::size_t i = 0; i < d; ++i) {
            acc += activation[i] * static_cast<double>(probe.w1->data[i * h + j]);
        }
        hidden[j] = std::tanh(acc);
    }
    std::vector<double> logits(g);
    for (std::size_t j = 0; j < g; ++j) {
        double acc = static_cast<double>(probe.b2->data[j]);
        for (std::size_t i = 0; i < h; ++i) {
            acc += hidden[i] * static_cast<double>(probe.w2->data[i * g + j]);
        }
        logits[j] = acc;
    }
    const double m = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (auto& z : logits) {
        z = std::exp(z - m);
        sum += z;
    }
    for (auto& z : logits) {
        z /= sum;
    }
    return logits;
}

std::vector<ProbeMetricsRow> probe_metrics(const ProbeParams& probe, const ProbeSamples& data) {
    if (data.samples.empty()) {
        fail("probe_metrics: no samples");
    }
    std::vector<ProbeMetricsRow> rows(static_cast<std::size_t>(data.horizon));
    for (int t = 1; t <= data.horizon; ++t) {
        rows[static_cast<std::size_t>(t - 1)].t = t;
    }
    for (const ProbeSample& s : data.samples) {
        ProbeMetricsRow& row = rows[static_cast<std::size_t>(s.t - 1)];
        const std::vector<double> pred = probe_predict(probe, s.activation);
        double mae = 0.0;
        for (std::size_t gi = 0; gi < pred.size(); ++gi) {
            mae += std::abs(pred[gi] - s.true_posterior[gi]);
        }
        row.mae += mae / static_cast<double>(pred.size());
        const int guess = static_cast<int>(
            std::max_element(pred.begin(), pred.end()) - pred.begin());
        row.accuracy += guess == s.true_group;
        const int truth_guess = static_cast<int>(
            std::max_element(s.true_posterior.begin(), s.true_posterior.end()) -
            s.true_posterior.begin());
        row.accuracy_true_posterior += truth_guess == s.true_group;
        row.n += 1;
    }
    for (auto& row : rows) {
        if (row.n > 0) {
            row.mae /= row.n;
            row.accuracy /= row.n;
            row.accuracy_true_posterior /= row.n;
        }
    }
    return rows;
}

void save_probe_report(const ProbeReport& report, const std::string& path) {
    std::ofstream os(path);
    if (!os) {
        fail(cat("save_probe_report: cannot open '", path, "'"));
    }
    os << "t,mae_trained,mae_random,acc_probe,acc_true_posterior,acc_probe_random\n";
    char buf[256];
    for (std::size_t i = 0; i < report.t.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g\n", report.t[i],
                      report.mae_trained[i], report.mae_random[i], report.acc_probe[i],
                      report.acc_true_posterior[i], report.acc_probe_random[i]);
        os << buf;
    }
}

}  // namespace rlt4rec
