#include "rlt4rec/cliapp.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "rlt4rec/evalharness.hpp"
#include "rlt4rec/policies.hpp"
#include "rlt4rec/probe.hpp"
#include "rlt4rec/util.hpp"

namespace rlt4rec {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Usage/config problems exit with status 2; runtime failures with 1.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void check_keys(const json& obj, std::initializer_list<const char*> allowed,
                const std::string& where) {
    for (const auto& [key, value] : obj.items()) {
        (void)value;
        bool ok = false;
        for (const char* a : allowed) {
            if (key == a) {
                ok = true;
                break;
            }
        }
        if (!ok) {
            throw UsageError(cat("config: unknown key '", key, "' in ", where));
        }
    }
}

void require_file(const std::string& path, const std::string& what) {
    if (!path.empty() && !fs::exists(path)) {
        throw UsageError(cat("config: ", what, " '", path, "' does not exist"));
    }
}

template <typename T>
void read_into(const json& obj, const char* key, T& out) {
    if (obj.contains(key)) {
        out = obj.at(key).get<T>();
    }
}

std::string real17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

std::string RunConfig::to_json() const {
    json j;
    j["dataset"] = {{"kind", dataset.kind},
                    {"n_groups", dataset.n_groups},
                    {"block", dataset.block},
                    {"sigma", dataset.sigma},
                    {"group_model_file", dataset.group_model_file},
                    {"triples_file", dataset.triples_file},
                    {"triples_n_groups", dataset.triples_n_groups}};
    j["model"] = {{"d", model.d},
                  {"n_blocks", model.n_blocks},
                  {"n_heads", model.n_heads},
                  {"ffn_mult", model.ffn_mult},
                  {"n_items", model.n_items},
                  {"max_timesteps", model.max_timesteps},
                  {"lr", model.lr},
                  {"weight_decay", model.weight_decay},
                  {"clip_norm", model.clip_norm},
                  {"batch_size", model.batch_size},
                  {"epochs", model.epochs},
                  {"bottleneck_enabled", model.bottleneck_enabled},
                  {"layernorm_enabled", model.layernorm_enabled},
                  {"dropout", model.dropout}};
    j["offline_data"] = {{"users_per_group", offline_data.users_per_group},
                         {"seq_len", offline_data.seq_len}};
    j["evaluation"] = {{"policies", evaluation.policies},
                       {"horizon", evaluation.horizon},
                       {"users_per_group", evaluation.users_per_group},
                       {"k_list", evaluation.k_list},
                       {"target_rating", evaluation.target_rating},
                       {"target_sweep", evaluation.target_sweep},
                       {"mcts_budget", evaluation.mcts_budget},
                       {"mcts_horizon", evaluation.mcts_horizon},
                       {"mcts_c_ucb", evaluation.mcts_c_ucb},
                       {"checkpoint", evaluation.checkpoint},
                       {"ablation_checkpoint", evaluation.ablation_checkpoint}};
    j["probe"] = {{"users_per_group", probe.users_per_group},
                  {"horizon", probe.horizon},
                  {"hidden", probe.hidden},
                  {"epochs", probe.epochs},
                  {"lr", probe.lr},
                  {"eval_fraction", probe.eval_fraction}};
    j["seed"] = seed;
    j["output_dir"] = output_dir;
    j["workers"] = workers;
    return j.dump(2) + "\n";
}

std::string RunConfig::fingerprint() const {
    return hex64(fnv1a64(to_json()));
}

RunConfig config_from_json_text(const std::string& text, const std::string& origin) {
    json j;
    try {
        j = json::parse(text);
    } catch (const std::exception& e) {
        throw UsageError(cat("config: cannot parse ", origin, ": ", e.what()));
    }
    RunConfig cfg;
    cfg.model.epochs = 20;  // CLI default training length
    check_keys(j, {"dataset", "model", "offline_data", "evaluation", "probe", "seed", "output_dir",
                   "workers"},
               origin);
    if (j.contains("dataset")) {
        const json& d = j.at("dataset");
        check_keys(d, {"kind", "n_groups", "block", "sigma", "group_model_file", "triples_file",
                       "triples_n_groups"},
                   "dataset");
        read_into(d, "kind", cfg.dataset.kind);
        read_into(d, "n_groups", cfg.dataset.n_groups);
        read_into(d, "block", cfg.dataset.block);
        read_into(d, "sigma", cfg.dataset.sigma);
        read_into(d, "group_model_file", cfg.dataset.group_model_file);
        read_into(d, "triples_file", cfg.dataset.triples_file);
        read_into(d, "triples_n_groups", cfg.dataset.triples_n_groups);
    }
    if (j.contains("model")) {
        const json& m = j.at("model");
        check_keys(m, {"d", "n_blocks", "n_heads", "ffn_mult", "n_items", "max_timesteps", "lr",
                       "weight_decay", "clip_norm", "batch_size", "epochs", "bottleneck_enabled",
                       "layernorm_enabled", "dropout"},
                   "model");
        cfg.model.d = 0;  // 0: dataset-dependent default
        cfg.model.max_timesteps = 0;
        read_into(m, "d", cfg.model.d);
        read_into(m, "n_blocks", cfg.model.n_blocks);
        read_into(m, "n_heads", cfg.model.n_heads);
        read_into(m, "ffn_mult", cfg.model.ffn_mult);
        read_into(m, "n_items", cfg.model.n_items);
        read_into(m, "max_timesteps", cfg.model.max_timesteps);
        read_into(m, "lr", cfg.model.lr);
        read_into(m, "weight_decay", cfg.model.weight_decay);
        read_into(m, "clip_norm", cfg.model.clip_norm);
        read_into(m, "batch_size", cfg.model.batch_size);
        read_into(m, "epochs", cfg.model.epochs);
        read_into(m, "bottleneck_enabled", cfg.model.bottleneck_enabled);
        read_into(m, "layernorm_enabled", cfg.model.layernorm_enabled);
        read_into(m, "dropout", cfg.model.dropout);
    } else {
        cfg.model.d = 0;
        cfg.model.max_timesteps = 0;
    }
    if (j.contains("offline_data")) {
        const json& o = j.at("offline_data");
        check_keys(o, {"users_per_group", "seq_len"}, "offline_data");
        read_into(o, "users_per_group", cfg.offline_data.users_per_group);
        read_into(o, "seq_len", cfg.offline_data.seq_len);
    }
    if (j.contains("evaluation")) {
        const json& e = j.at("evaluation");
        check_keys(e, {"policies", "horizon", "users_per_group", "k_list", "target_rating",
                       "target_sweep", "mcts_budget", "mcts_horizon", "mcts_c_ucb", "checkpoint",
                       "ablation_checkpoint"},
                   "evaluation");
        read_into(e, "policies", cfg.evaluation.policies);
        read_into(e, "horizon", cfg.evaluation.horizon);
        read_into(e, "users_per_group", cfg.evaluation.users_per_group);
        read_into(e, "k_list", cfg.evaluation.k_list);
        read_into(e, "target_rating", cfg.evaluation.target_rating);
        read_into(e, "target_sweep", cfg.evaluation.target_sweep);
        read_into(e, "mcts_budget", cfg.evaluation.mcts_budget);
        read_into(e, "mcts_horizon", cfg.evaluation.mcts_horizon);
        read_into(e, "mcts_c_ucb", cfg.evaluation.mcts_c_ucb);
        read_into(e, "checkpoint", cfg.evaluation.checkpoint);
        read_into(e, "ablation_checkpoint", cfg.evaluation.ablation_checkpoint);
    }
    if (j.contains("probe")) {
        const json& p = j.at("probe");
        check_keys(p, {"users_per_group", "horizon", "hidden", "epochs", "lr", "eval_fraction"},
                   "probe");
        read_into(p, "users_per_group", cfg.probe.users_per_group);
        read_into(p, "horizon", cfg.probe.horizon);
        read_into(p, "hidden", cfg.probe.hidden);
        read_into(p, "epochs", cfg.probe.epochs);
        read_into(p, "lr", cfg.probe.lr);
        read_into(p, "eval_fraction", cfg.probe.eval_fraction);
    }
    read_into(j, "seed", cfg.seed);
    read_into(j, "output_dir", cfg.output_dir);
    read_into(j, "workers", cfg.workers);

    if (cfg.dataset.kind != "pd1" && cfg.dataset.kind != "pd2" &&
        cfg.dataset.kind != "group_model_file" && cfg.dataset.kind != "triples_file") {
        throw UsageError(cat("config: unknown dataset kind '", cfg.dataset.kind, "'"));
    }
    if (cfg.dataset.kind == "group_model_file" && cfg.dataset.group_model_file.empty()) {
        throw UsageError("config: dataset.group_model_file is required for this kind");
    }
    if (cfg.dataset.kind == "triples_file" && cfg.dataset.triples_file.empty()) {
        throw UsageError("config: dataset.triples_file is required for this kind");
    }
    require_file(cfg.dataset.group_model_file, "dataset.group_model_file");
    require_file(cfg.dataset.triples_file, "dataset.triples_file");
    require_file(cfg.evaluation.checkpoint, "evaluation.checkpoint");
    require_file(cfg.evaluation.ablation_checkpoint, "evaluation.ablation_checkpoint");
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) {
        throw UsageError(cat("config: cannot open '", path, "'"));
    }
    std::ostringstream ss;
    ss << is.rdbuf();
    return config_from_json_text(ss.str(), cat("'", path, "'"));
}

GroupModel resolve_dataset(const DatasetSpec& spec, std::uint64_t seed) {
    if (spec.kind == "pd1") {
        return make_pd1(spec.n_groups > 0 ? spec.n_groups : 4, spec.block, 5.0, 1.0,
                        spec.sigma > 0.0 ? spec.sigma : 0.25);
    }
    if (spec.kind == "pd2") {
        return make_pd2(spec.n_groups > 0 ? spec.n_groups : 5, spec.block,
                        spec.sigma > 0.0 ? spec.sigma : 0.5);
    }
    if (spec.kind == "group_model_file") {
        return load_group_model(spec.group_model_file);
    }
    TriplesData triples = read_triples(spec.triples_file);
    RngStream rng(seed, 40);
    return fit_group_model(triples, spec.triples_n_groups, rng);
}

std::string dataset_label(const DatasetSpec& spec) {
    if (spec.kind == "pd1" || spec.kind == "pd2") {
        return spec.kind;
    }
    const std::string& path =
        spec.kind == "group_model_file" ? spec.group_model_file : spec.triples_file;
    return fs::path(path).stem().string();
}

namespace {

using Clock = std::chrono::steady_clock;

void write_manifest(const RunConfig& cfg, const std::string& command,
                    const std::vector<std::string>& outputs, double wall_seconds) {
    json j;
    j["command"] = command;
    j["seed"] = cfg.seed;
    j["config_fingerprint"] = cfg.fingerprint();
    j["wall_seconds"] = wall_seconds;
    j["outputs"] = outputs;
    j["written_at_unix"] =
        std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch())
            .count();
    std::ofstream os(fs::path(cfg.output_dir) / (command + "_manifest.json"));
    os << j.dump(2) << "\n";
}

void ensure_output_dir(const RunConfig& cfg) {
    std::error_code ec;
    fs::create_directories(cfg.output_dir, ec);
    if (ec) {
        fail(cat("cannot create output directory '", cfg.output_dir, "': ", ec.message()));
    }
}

HyperParams effective_hyperparams(const RunConfig& cfg, const GroupModel& gm) {
    HyperParams hp = cfg.model;
    if (hp.d == 0) {
        hp.d = cfg.dataset.kind == "triples_file" ? 256 : 128;
    }
    if (hp.n_items == 0) {
        hp.n_items = gm.n_items;
    }
    if (hp.max_timesteps == 0) {
        hp.max_timesteps = std::max(cfg.offline_data.seq_len, cfg.evaluation.horizon + 1);
    }
    hp.seed = cfg.seed;
    return hp;
}

int users_per_group_default(const RunConfig& cfg, const GroupModel& gm) {
    if (cfg.offline_data.users_per_group > 0) {
        return cfg.offline_data.users_per_group;
    }
    return std::max(1, 5000 / gm.n_groups);  // 5000 sequences total
}

int cmd_gen(const RunConfig& cfg) {
    const auto t0 = Clock::now();
    ensure_output_dir(cfg);
    GroupModel gm = resolve_dataset(cfg.dataset, cfg.seed);
    if (cfg.offline_data.seq_len > gm.n_items) {
        throw UsageError(cat("gen: seq_len ", cfg.offline_data.seq_len,
                             " exceeds the dataset's ", gm.n_items, " items"));
    }
    const int upg = users_per_group_default(cfg, gm);
    RngStream rng(cfg.seed, 10);
    OfflineDataset ds = gen_offline_dataset(gm, upg, cfg.offline_data.seq_len, rng);
    const std::string path = (fs::path(cfg.output_dir) / "dataset.csv").string();
    save_dataset(ds, path);
    std::cout << "wrote " << ds.sequences.size() << " sequences of length " << ds.seq_len
              << " to " << path << "\n";
    write_manifest(cfg, "gen", {path},
                   std::chrono::duration<double>(Clock::now() - t0).count());
    return 0;
}

int cmd_train(const RunConfig& cfg, const std::string& dataset_path, bool tiny_overfit) {
    const auto t0 = Clock::now();
    ensure_output_dir(cfg);
    OfflineDataset ds;
    HyperParams hp;
    double val_fraction = 0.1;
    if (tiny_overfit) {
        GroupModel gm = make_pd1(4, 5);
        RngStream gen(3);
        ds = gen_offline_dataset(gm, 2, 10, gen);
        hp = HyperParams{};
        hp.d = 32;
        hp.n_items = gm.n_items;
        hp.max_timesteps = 12;
        hp.batch_size = 8;
        hp.epochs = 200;  // one batch per epoch: 200 steps
        hp.lr = 3e-3;
        hp.seed = cfg.seed;
        val_fraction = 0.0;
    } else {
        GroupModel gm = resolve_dataset(cfg.dataset, cfg.seed);
        ds = load_dataset(dataset_path);
        hp = effective_hyperparams(cfg, gm);
    }
    RngStream rng(cfg.seed, 20);
    TrainResult res = train_model(ds, hp, rng, val_fraction);
    const std::string ckpt = (fs::path(cfg.output_dir) / "checkpoint.bin").string();
    const std::string log_path = (fs::path(cfg.output_dir) / "training_log.csv").string();
    save_checkpoint(res.params, ckpt);
    save_training_log(res.log, log_path);
    std::cout << "trained " << res.log.epochs.size() << " epochs; best epoch "
              << res.log.best_epoch << " (val loss "
              << (res.log.epochs.empty()
                      ? 0.0
                      : res.log.epochs[static_cast<std::size_t>(
                                           std::max(res.log.best_epoch - 1, 0))].val_loss)
              << ")\n";
    int status = 0;
    if (tiny_overfit) {
        const double initial = res.log.epochs.front().train_loss;
        const double final_loss = res.log.epochs.back().train_loss;
        const bool pass = final_loss < 0.1 * initial;
        std::cout << "tiny-overfit: initial " << initial << " final " << final_loss << " -> "
                  << (pass ? "PASS" : "FAIL") << "\n";
        status = pass ? 0 : 1;
    }
    write_manifest(cfg, "train", {ckpt, log_path},
                   std::chrono::duration<double>(Clock::now() - t0).count());
    return status;
}

PolicyFactory make_policy_factory(const std::string& name, const RunConfig& cfg,
                                  const GroupModel& gm, const ModelParams* model,
                                  const ModelParams* ablation, double target) {
    if (name == "best_star") {
        return [&gm](const UserRatings& u) { return make_best_star_policy(gm, u.group); };
    }
    if (name == "random_uniform") {
        return [&gm](const UserRatings&) { return make_random_uniform_policy(gm.n_items); };
    }
    if (name == "random_popular") {
        return [&gm](const UserRatings&) { return make_random_popular_policy(gm); };
    }
    if (name == "bayes_greedy") {
        return [&gm](const UserRatings&) { return make_bayes_greedy_policy(gm); };
    }
    if (name == "mcts") {
        MctsOptions opt;
        opt.budget = cfg.evaluation.mcts_budget;
        opt.horizon = cfg.evaluation.mcts_horizon;
        opt.c_ucb = cfg.evaluation.mcts_c_ucb;
        return [&gm, opt](const UserRatings&) { return make_mcts_policy(gm, opt); };
    }
    if (name == "rlt4rec") {
        if (model == nullptr) {
            throw UsageError("eval: policy 'rlt4rec' needs evaluation.checkpoint");
        }
        return [model, target, name](const UserRatings&) {
            return make_rlt4rec_policy(*model, target, name);
        };
    }
    if (name == "rlt4rec_no_bottleneck") {
        if (ablation == nullptr) {
            throw UsageError(
                "eval: policy 'rlt4rec_no_bottleneck' needs evaluation.ablation_checkpoint");
        }
        return [ablation, target, name](const UserRatings&) {
            return make_rlt4rec_policy(*ablation, target, name);
        };
    }
    throw UsageError(cat("eval: unknown policy '", name, "'"));
}

int cmd_eval(const RunConfig& cfg) {
    const auto t0 = Clock::now();
    ensure_output_dir(cfg);
    GroupModel gm = resolve_dataset(cfg.dataset, cfg.seed);
    std::optional<ModelParams> model, ablation;
    if (!cfg.evaluation.checkpoint.empty()) {
        model = load_checkpoint(cfg.evaluation.checkpoint);
    }
    if (!cfg.evaluation.ablation_checkpoint.empty()) {
        ablation = load_checkpoint(cfg.evaluation.ablation_checkpoint);
    }
    const double target =
        cfg.evaluation.target_rating > 0.0 ? cfg.evaluation.target_rating : gm.rating_max;

    CohortOptions opt;
    opt.users_per_group = cfg.evaluation.users_per_group;
    opt.horizon = cfg.evaluation.horizon;
    opt.k_list = cfg.evaluation.k_list;
    opt.workers = cfg.workers;
    opt.dataset_name = dataset_label(cfg.dataset);
    opt.config_fingerprint = cfg.fingerprint();

    std::vector<std::string> outputs;
    for (const std::string& name : cfg.evaluation.policies) {
        const bool is_model_policy = name == "rlt4rec" || name == "rlt4rec_no_bottleneck";
        std::vector<double> targets = {target};
        if (cfg.evaluation.target_sweep && is_model_policy) {
            targets.clear();
            for (int r = 1; r <= static_cast<int>(gm.rating_max); ++r) {
                targets.push_back(r);
            }
        }
        for (double tgt : targets) {
            PolicyFactory factory = make_policy_factory(
                name, cfg, gm, model ? &*model : nullptr, ablation ? &*ablation : nullptr, tgt);
            Report report = evaluate_cohort(factory, name, gm, opt, cfg.seed);
            std::string suffix = name;
            if (cfg.evaluation.target_sweep && is_model_policy) {
                suffix += cat("_target", static_cast<int>(tgt));
            }
            const std::string curve_path =
                (fs::path(cfg.output_dir) / cat("curve_", suffix, ".csv")).string();
            save_curve_csv(report, curve_path);
            outputs.push_back(curve_path);
            if (!report.precision.empty()) {
                const std::string prec_path =
                    (fs::path(cfg.output_dir) / cat("precision_", suffix, ".csv")).string();
                save_precision_csv(report, prec_path);
                outputs.push_back(prec_path);
            }
            std::cout << name;
            if (cfg.evaluation.target_sweep && is_model_policy) {
                std::cout << " (target " << tgt << ")";
            }
            std::cout << ": mean rating @" << report.horizon << " = "
                      << report.curve.back().mean_rating << "\n";
        }
    }
    write_manifest(cfg, "eval", outputs,
                   std::chrono::duration<double>(Clock::now() - t0).count());
    return 0;
}

int cmd_probe(const RunConfig& cfg) {
    const auto t0 = Clock::now();
    ensure_output_dir(cfg);
    if (cfg.evaluation.checkpoint.empty()) {
        throw UsageError("probe: evaluation.checkpoint is required");
    }
    GroupModel gm = resolve_dataset(cfg.dataset, cfg.seed);
    ModelParams trained = load_checkpoint(cfg.evaluation.checkpoint);
    RngStream fresh_rng(cfg.seed, 51);
    ModelParams random_model = init_params<float>(trained.hp, fresh_rng);

    ProbeCollectOptions copt;
    copt.users_per_group = cfg.probe.users_per_group;
    copt.horizon = cfg.probe.horizon;
    copt.workers = cfg.workers;
    ProbeTrainOptions topt;
    topt.hidden = cfg.probe.hidden;
    topt.epochs = cfg.probe.epochs;
    topt.lr = cfg.probe.lr;

    auto run_side = [&](const ModelParams& params, std::uint64_t stream) {
        RngStream collect_rng(cfg.seed, 50);  // same users/items for both sides
        ProbeSamples data = collect_probe_data(params, gm, copt, collect_rng);
        RngStream split_rng(cfg.seed, stream);
        auto [train, eval] = split_probe_by_user(data, cfg.probe.eval_fraction, split_rng);
        RngStream train_rng(cfg.seed, stream + 1);
        ProbeParams probe = train_probe(train, topt, train_rng);
        return probe_metrics(probe, eval);
    };
    const auto trained_rows = run_side(trained, 52);
    const auto random_rows = run_side(random_model, 54);

    ProbeReport report;
    for (std::size_t i = 0; i < trained_rows.size(); ++i) {
        report.t.push_back(trained_rows[i].t);
        report.mae_trained.push_back(trained_rows[i].mae);
        report.mae_random.push_back(random_rows[i].mae);
        report.acc_probe.push_back(trained_rows[i].accuracy);
        report.acc_true_posterior.push_back(trained_rows[i].accuracy_true_posterior);
        report.acc_probe_random.push_back(random_rows[i].accuracy);
    }
    const std::string path = (fs::path(cfg.output_dir) / "probe_report.csv").string();
    save_probe_report(report, path);
    for (std::size_t i = 0; i < report.t.size(); ++i) {
        std::cout << "t=" << report.t[i] << " mae " << report.mae_trained[i] << " acc "
                  << report.acc_probe[i] << " (ceiling " << report.acc_true_posterior[i] << ")\n";
    }
    write_manifest(cfg, "probe", {path},
                   std::chrono::duration<double>(Clock::now() - t0).count());
    return 0;
}

int cmd_ingest(const RunConfig& cfg, const std::string& triples_path, int n_groups) {
    const auto t0 = Clock::now();
    ensure_output_dir(cfg);
    TriplesData triples;
    try {
        triples = read_triples(triples_path);
    } catch (const std::exception& e) {
        throw UsageError(e.what());
    }
    RngStream rng(cfg.seed, 40);
    GroupModel gm = fit_group_model(triples, n_groups, rng);
    const std::string gm_path = (fs::path(cfg.output_dir) / "group_model.json").string();
    const std::string map_path = (fs::path(cfg.output_dir) / "item_map.json").string();
    save_group_model(gm, gm_path);
    {
        json j;
        j["items"] = triples.item_ids;
        std::ofstream os(map_path);
        os << j.dump(2) << "\n";
    }
    std::cout << "fitted " << n_groups << " groups over " << triples.user_ids.size()
              << " users, " << triples.item_ids.size() << " items ("
              << triples.records.size() << " ratings)\n";
    write_manifest(cfg, "ingest", {gm_path, map_path},
                   std::chrono::duration<double>(Clock::now() - t0).count());
    return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"desk-scale sequential-transformer recommender laboratory"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed_override;
    std::optional<std::string> out_override;
    std::optional<int> workers_override;
    app.add_option("--config", config_path, "JSON run configuration");
    app.add_option("--seed", seed_override, "override config seed");
    app.add_option("--out", out_override, "override output directory");
    app.add_option("--workers", workers_override, "override worker count");

    auto* gen = app.add_subcommand("gen", "generate offline training data");
    std::optional<int> gen_upg, gen_seq_len;
    gen->add_option("--users-per-group", gen_upg, "users per group");
    gen->add_option("--seq-len", gen_seq_len, "training sequence length");

    auto* train = app.add_subcommand("train", "train a model on a dataset file");
    std::string train_dataset;
    bool tiny_overfit = false;
    std::optional<int> train_epochs;
    std::optional<double> train_lr;
    std::optional<bool> train_bottleneck;
    train->add_option("--dataset", train_dataset, "dataset file from gen");
    train->add_flag("--tiny-overfit", tiny_overfit, "run the 8-sequence overfit fixture");
    train->add_option("--epochs", train_epochs, "override epoch count");
    train->add_option("--lr", train_lr, "override learning rate");
    train->add_option("--bottleneck", train_bottleneck, "enable the rating bottleneck (0/1)");

    auto* eval = app.add_subcommand("eval", "evaluate policies against the simulator");
    std::optional<std::string> eval_ckpt, eval_ablation;
    std::optional<std::vector<std::string>> eval_policies;
    std::optional<bool> eval_sweep;
    std::optional<int> eval_upg, eval_horizon;
    eval->add_option("--checkpoint", eval_ckpt, "trained model checkpoint");
    eval->add_option("--ablation-checkpoint", eval_ablation, "no-bottleneck checkpoint");
    eval->add_option("--policies", eval_policies, "policies to run")->delimiter(',');
    eval->add_option("--target-sweep", eval_sweep, "sweep integer targets 1..max");
    eval->add_option("--users-per-group", eval_upg, "evaluation cohort size");
    eval->add_option("--horizon", eval_horizon, "episode length");

    auto* probe = app.add_subcommand("probe", "probe bottleneck activations for the posterior");
    std::optional<std::string> probe_ckpt;
    probe->add_option("--checkpoint", probe_ckpt, "trained model checkpoint");

    auto* ingest = app.add_subcommand("ingest", "fit a group model from rating triples");
    std::string ingest_triples;
    std::optional<int> ingest_groups;
    ingest->add_option("--triples", ingest_triples, "user,item,rating CSV")->required();
    ingest->add_option("--n-groups", ingest_groups, "number of groups to fit");

    auto* print_config = app.add_subcommand("print-config", "print the effective configuration");

    std::vector<const char*> argv;
    argv.push_back("rlt4rec");
    for (const auto& a : args) {
        argv.push_back(a.c_str());
    }
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    }

    try {
        RunConfig cfg;
        if (!config_path.empty()) {
            cfg = load_config(config_path);
        }
        if (seed_override) {
            cfg.seed = *seed_override;
        }
        if (out_override) {
            cfg.output_dir = *out_override;
        }
        if (workers_override) {
            cfg.workers = *workers_override;
        }
        if (gen_upg) {
            cfg.offline_data.users_per_group = *gen_upg;
        }
        if (gen_seq_len) {
            cfg.offline_data.seq_len = *gen_seq_len;
        }
        if (train_epochs) {
            cfg.model.epochs = *train_epochs;
        }
        if (train_lr) {
            cfg.model.lr = *train_lr;
        }
        if (train_bottleneck) {
            cfg.model.bottleneck_enabled = *train_bottleneck;
        }
        if (eval_ckpt) {
            require_file(*eval_ckpt, "evaluation.checkpoint");
            cfg.evaluation.checkpoint = *eval_ckpt;
        }
        if (eval_ablation) {
            require_file(*eval_ablation, "evaluation.ablation_checkpoint");
            cfg.evaluation.ablation_checkpoint = *eval_ablation;
        }
        if (eval_policies) {
            cfg.evaluation.policies = *eval_policies;
        }
        if (eval_sweep) {
            cfg.evaluation.target_sweep = *eval_sweep;
        }
        if (eval_upg) {
            cfg.evaluation.users_per_group = *eval_upg;
        }
        if (eval_horizon) {
            cfg.evaluation.horizon = *eval_horizon;
        }
        if (probe_ckpt) {
            require_file(*probe_ckpt, "evaluation.checkpoint");
            cfg.evaluation.checkpoint = *probe_ckpt;
        }

        if (gen->parsed()) {
            return cmd_gen(cfg);
        }
        if (train->parsed()) {
            if (!tiny_overfit && train_dataset.empty()) {
                throw UsageError("train: --dataset is required (or use --tiny-overfit)");
            }
            if (!tiny_overfit) {
                require_file(train_dataset, "train --dataset");
            }
            return cmd_train(cfg, train_dataset, tiny_overfit);
        }
        if (eval->parsed()) {
            return cmd_eval(cfg);
        }
        if (probe->parsed()) {
            return cmd_probe(cfg);
        }
        if (ingest->parsed()) {
            return cmd_ingest(cfg, ingest_triples,
                              ingest_groups ? *ingest_groups : cfg.dataset.triples_n_groups);
        }
        if (print_config->parsed()) {
            std::cout << cfg.to_json();
            return 0;
        }
        throw UsageError("no subcommand given");
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace rlt4rec
