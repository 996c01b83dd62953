#include "rlt4rec/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>

namespace rlt4rec {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian; big-endian hosts unsupported");

TokenSeq tokenize(const HyperParams& hp, const InteractionHistory& history, double target_rating) {
    const std::size_t t = history.size();
    if (t >= static_cast<std::size_t>(hp.max_timesteps)) {
        fail(cat("tokenize: history length ", t, " must be below max_timesteps ",
                 hp.max_timesteps));
    }
    for (int v : history.items) {
        if (v < 0 || v >= hp.n_items) {
            fail(cat("tokenize: item id ", v, " out of range [0,", hp.n_items, ")"));
        }
    }
    TokenSeq seq;
    seq.ratings = history.ratings;
    seq.ratings.push_back(target_rating);
    seq.items = history.items;
    return seq;
}

TokenSeq tokenize_pairs(const HyperParams& hp, const InteractionHistory& pairs) {
    const std::size_t t = pairs.size();
    if (t == 0) {
        fail("tokenize_pairs: empty pair sequence");
    }
    if (t > static_cast<std::size_t>(hp.max_timesteps)) {
        fail(cat("tokenize_pairs: ", t, " pairs exceed max_timesteps ", hp.max_timesteps));
    }
    for (int v : pairs.items) {
        if (v < 0 || v >= hp.n_items) {
            fail(cat("tokenize_pairs: item id ", v, " out of range [0,", hp.n_items, ")"));
        }
    }
    TokenSeq seq;
    seq.ratings = pairs.ratings;
    seq.items = pairs.items;
    return seq;
}

double sequence_loss(const ForwardOut& out, std::span<const TokenSeq> batch,
                     bool bottleneck_enabled) {
    if (out.seqs.size() != batch.size() || batch.empty()) {
        fail(cat("sequence_loss: ", out.seqs.size(), " outputs for ", batch.size(), " sequences"));
    }
    double total = 0.0;
    for (std::size_t s = 0; s < batch.size(); ++s) {
        const SeqForward& sf = out.seqs[s];
        const TokenSeq& seq = batch[s];
        if (sf.item_logits.size() != seq.n_ratings() || seq.n_ratings() != seq.n_items_tok()) {
            fail("sequence_loss: outputs do not align with a training-form sequence");
        }
        double ce = 0.0;
        for (std::size_t t = 0; t < sf.item_logits.size(); ++t) {
            const auto& row = sf.item_logits[t];
            double m = row[0];
            for (double z : row) {
                m = std::max(m, z);
            }
            double sum = 0.0;
            for (double z : row) {
                sum += std::exp(z - m);
            }
            ce += m + std::log(sum) - row[static_cast<std::size_t>(seq.items[t])];
        }
        ce /= static_cast<double>(sf.item_logits.size());
        double mse = 0.0;
        if (bottleneck_enabled && !sf.rating_preds.empty()) {
            if (sf.rating_preds.size() + 1 != seq.n_ratings()) {
                fail("sequence_loss: rating predictions do not align with targets");
            }
            for (std::size_t k = 0; k < sf.rating_preds.size(); ++k) {
                const double d = sf.rating_preds[k] - seq.ratings[k + 1];
                mse += d * d;
            }
            mse /= static_cast<double>(sf.rating_preds.size());
        }
        total += ce + mse;
    }
    return total / static_cast<double>(batch.size());
}

std::vector<double> next_item_dist(const ModelParams& p, const InteractionHistory& history,
                                   double target_rating) {
    TokenSeq seq = tokenize(p.hp, history, target_rating);
    ForwardOut out = forward(p, seq);
    const auto& logits = out.seqs[0].item_logits.back();
    double m = logits[0];
    for (double z : logits) {
        m = std::max(m, z);
    }
    std::vector<double> probs(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        probs[i] = std::exp(logits[i] - m);
        sum += probs[i];
    }
    for (double& x : probs) {
        x /= sum;
    }
    return probs;
}

void save_training_log(const TrainingLog& log, const std::string& path) {
    std::ofstream os(path);
    if (!os) {
        fail(cat("save_training_log: cannot open '", path, "'"));
    }
    os << "epoch,train_loss,val_loss\n";
    char buf[128];
    for (const auto& e : log.epochs) {
        std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g\n", e.epoch, e.train_loss, e.val_loss);
        os << buf;
    }
}

TrainResult train_model(const OfflineDataset& data, HyperParams hp, RngStream& rng,
                        double val_fraction) {
    if (data.sequences.empty()) {
        fail("train_model: empty dataset");
    }
    if (hp.n_items == 0) {
        hp.n_items = data.n_items;
    }
    if (hp.n_items < data.n_items) {
        fail(cat("train_model: model covers ", hp.n_items, " items, dataset has ", data.n_items));
    }
    if (data.seq_len < 1) {
        fail("train_model: dataset sequences are empty");
    }
    if (data.seq_len > hp.max_timesteps) {
        fail(cat("train_model: seq_len ", data.seq_len, " exceeds max_timesteps ",
                 hp.max_timesteps));
    }
    if (val_fraction < 0.0 || val_fraction >= 1.0) {
        fail("train_model: val_fraction must be in [0,1)");
    }
    hp.validate();

    std::vector<TokenSeq> tokens;
    tokens.reserve(data.sequences.size());
    for (const auto& seq : data.sequences) {
        tokens.push_back(tokenize_pairs(hp, seq));
    }

    const std::size_t n = tokens.size();
    const std::size_t val_count = static_cast<std::size_t>(static_cast<double>(n) * val_fraction);
    RngStream split_rng = rng.fork(1);
    const std::vector<std::size_t> perm = split_rng.permutation(n);
    std::vector<std::size_t> val_idx(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(val_count));
    std::vector<std::size_t> train_idx(perm.begin() + static_cast<std::ptrdiff_t>(val_count), perm.end());
    if (val_idx.empty()) {
        val_idx = train_idx;  // tiny fixtures: validate on the training set
    }

    RngStream init_rng = rng.fork(2);
    ModelParams params = init_params<float>(hp, init_rng);
    diff::ParamList named = params.named();
    diff::AdamState adam = diff::AdamState::make(named);
    diff::AdamOptions opt;
    opt.lr = hp.lr;
    opt.weight_decay = hp.weight_decay;

    const std::size_t bs = static_cast<std::size_t>(hp.batch_size);
    auto eval_loss = [&](const std::vector<std::size_t>& idx) {
        double total = 0.0;
        for (std::size_t pos = 0; pos < idx.size(); pos += bs) {
            const std::size_t take = std::min(bs, idx.size() - pos);
            std::vector<TokenSeq> b;
            b.reserve(take);
            for (std::size_t k = 0; k < take; ++k) {
                b.push_back(tokens[idx[pos + k]]);
            }
            auto loss = detail::loss_graph(params, std::span<const TokenSeq>(b), nullptr);
            total += static_cast<double>(loss->data[0]) * static_cast<double>(take);
        }
        return total / static_cast<double>(idx.size());
    };

    TrainingLog log;
    if (hp.epochs <= 0) {
        const auto t0 = std::chrono::steady_clock::now();
        TrainingLog::Epoch e;
        e.epoch = 0;
        e.train_loss = eval_loss(train_idx);
        e.val_loss = eval_loss(val_idx);
        e.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        log.epochs.push_back(e);
        log.best_epoch = 0;
        return {std::move(params), std::move(log)};
    }

    ModelParams best = params.clone();
    double best_val = std::numeric_limits<double>::infinity();
    int best_epoch = 0;
    for (int epoch = 1; epoch <= hp.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        RngStream shuffle_rng = rng.fork(1000 + static_cast<std::uint64_t>(epoch));
        RngStream drop_base = rng.fork(2000000 + static_cast<std::uint64_t>(epoch));
        const std::vector<std::size_t> order = shuffle_rng.permutation(train_idx.size());
        double train_total = 0.0;
        std::size_t batch_no = 0;
        for (std::size_t pos = 0; pos < order.size(); pos += bs, ++batch_no) {
            const std::size_t take = std::min(bs, order.size() - pos);
            std::vector<TokenSeq> b;
            b.reserve(take);
            for (std::size_t k = 0; k < take; ++k) {
                b.push_back(tokens[train_idx[order[pos + k]]]);
            }
            for (auto& np : named) {
                np.tensor->zero_grad();
            }
            RngStream drop = drop_base.fork(batch_no);
            auto loss = detail::loss_graph(params, std::span<const TokenSeq>(b),
                                           hp.dropout > 0.0 ? &drop : nullptr);
            const double lv = static_cast<double>(diff::backward(loss));
            if (!std::isfinite(lv)) {
                fail(cat("train_model: non-finite loss at epoch ", epoch, " batch ", batch_no));
            }
            if (hp.clip_norm > 0.0) {
                diff::clip_global_norm(named, hp.clip_norm);
            }
            diff::adam_step(named, adam, opt);
            train_total += lv * static_cast<double>(take);
        }
        TrainingLog::Epoch e;
        e.epoch = epoch;
        e.train_loss = train_total / static_cast<double>(train_idx.size());
        e.val_loss = eval_loss(val_idx);
        e.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        log.epochs.push_back(e);
        if (e.val_loss < best_val) {
            best_val = e.val_loss;
            best = params.clone();
            best_epoch = epoch;
        }
    }
    log.best_epoch = best_epoch;
    return {std::move(best), std::move(log)};
}

namespace {

constexpr char kMagic[8] = "RLT4REC";  // 7 chars + NUL
constexpr std::uint32_t kVersion = 1;

enum class Tag : std::uint8_t { kI64 = 0, kF64 = 1, kBool = 2, kU64 = 3 };

void write_bytes(std::ostream& os, const void* p, std::size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}
template <typename T>
void write_pod(std::ostream& os, T v) {
    write_bytes(os, &v, sizeof v);
}
void write_str(std::ostream& os, const std::string& s) {
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
    write_bytes(os, s.data(), s.size());
}

void read_bytes(std::istream& is, void* p, std::size_t n, const std::string& path) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!is) {
        fail(cat("load_checkpoint: truncated file '", path, "'"));
    }
}
template <typename T>
T read_pod(std::istream& is, const std::string& path) {
    T v;
    read_bytes(is, &v, sizeof v, path);
    return v;
}
std::string read_str(std::istream& is, const std::string& path) {
    const auto n = read_pod<std::uint32_t>(is, path);
    std::string s(n, '\0');
    read_bytes(is, s.data(), n, path);
    return s;
}

struct HpEntry {
    Tag tag;
    std::int64_t i = 0;
    double f = 0.0;
    bool b = false;
    std::uint64_t u = 0;
};

void write_hp(std::ostream& os, const HyperParams& hp) {
    std::vector<std::pair<std::string, HpEntry>> entries = {
        {"d", {Tag::kI64, hp.d}},
        {"n_blocks", {Tag::kI64, hp.n_blocks}},
        {"n_heads", {Tag::kI64, hp.n_heads}},
        {"ffn_mult", {Tag::kI64, hp.ffn_mult}},
        {"n_items", {Tag::kI64, hp.n_items}},
        {"max_timesteps", {Tag::kI64, hp.max_timesteps}},
        {"lr", {Tag::kF64, 0, hp.lr}},
        {"weight_decay", {Tag::kF64, 0, hp.weight_decay}},
        {"clip_norm", {Tag::kF64, 0, hp.clip_norm}},
        {"batch_size", {Tag::kI64, hp.batch_size}},
        {"epochs", {Tag::kI64, hp.epochs}},
        {"bottleneck_enabled", {Tag::kBool, 0, 0, hp.bottleneck_enabled}},
        {"layernorm_enabled", {Tag::kBool, 0, 0, hp.layernorm_enabled}},
        {"dropout", {Tag::kF64, 0, hp.dropout}},
        {"seed", {Tag::kU64, 0, 0, false, hp.seed}},
    };
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(entries.size()));
    for (const auto& [key, e] : entries) {
        write_str(os, key);
        write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(e.tag));
        switch (e.tag) {
            case Tag::kI64: write_pod<std::int64_t>(os, e.i); break;
            case Tag::kF64: write_pod<double>(os, e.f); break;
            case Tag::kBool: write_pod<std::uint8_t>(os, e.b ? 1 : 0); break;
            case Tag::kU64: write_pod<std::uint64_t>(os, e.u); break;
        }
    }
}

HyperParams read_hp(std::istream& is, const std::string& path) {
    HyperParams hp;
    const auto count = read_pod<std::uint32_t>(is, path);
    for (std::uint32_t k = 0; k < count; ++k) {
        const std::string key = read_str(is, path);
        const Tag tag = static_cast<Tag>(read_pod<std::uint8_t>(is, path));
        std::int64_t i = 0;
        double f = 0.0;
        bool b = false;
        std::uint64_t u = 0;
        switch (tag) {
            case Tag::kI64: i = read_pod<std::int64_t>(is, path); break;
            case Tag::kF64: f = read_pod<double>(is, path); break;
            case Tag::kBool: b = read_pod<std::uint8_t>(is, path) != 0; break;
            case Tag::kU64: u = read_pod<std::uint64_t>(is, path); break;
            default: fail(cat("load_checkpoint: unknown header tag in '", path, "'"));
        }
        if (key == "d") hp.d = static_cast<int>(i);
        else if (key == "n_blocks") hp.n_blocks = static_cast<int>(i);
        else if (key == "n_heads") hp.n_heads = static_cast<int>(i);
        else if (key == "ffn_mult") hp.ffn_mult = static_cast<int>(i);
        else if (key == "n_items") hp.n_items = static_cast<int>(i);
        else if (key == "max_timesteps") hp.max_timesteps = static_cast<int>(i);
        else if (key == "lr") hp.lr = f;
        else if (key == "weight_decay") hp.weight_decay = f;
        else if (key == "clip_norm") hp.clip_norm = f;
        else if (key == "batch_size") hp.batch_size = static_cast<int>(i);
        else if (key == "epochs") hp.epochs = static_cast<int>(i);
        else if (key == "bottleneck_enabled") hp.bottleneck_enabled = b;
        else if (key == "layernorm_enabled") hp.layernorm_enabled = b;
        else if (key == "dropout") hp.dropout = f;
        else if (key == "seed") hp.seed = u;
        else fail(cat("load_checkpoint: unknown header key '", key, "' in '", path, "'"));
    }
    return hp;
}

}  // namespace

void save_checkpoint(const ModelParams& p, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        fail(cat("save_checkpoint: cannot open '", path, "'"));
    }
    write_bytes(os, kMagic, 7);
    write_pod<std::uint32_t>(os, kVersion);
    write_hp(os, p.hp);
    const diff::ParamList named = p.named();
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(named.size()));
    for (const auto& np : named) {
        write_str(os, np.name);
        write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(np.tensor->rank()));
        for (std::size_t dim : np.tensor->shape) {
            write_pod<std::uint64_t>(os, dim);
        }
        write_bytes(os, np.tensor->data.data(), np.tensor->data.size() * sizeof(float));
    }
    if (!os) {
        fail(cat("save_checkpoint: write failed for '", path, "'"));
    }
}

ModelParams load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        fail(cat("load_checkpoint: cannot open '", path, "'"));
    }
    char magic[7];
    read_bytes(is, magic, 7, path);
    if (std::memcmp(magic, kMagic, 7) != 0) {
        fail(cat("load_checkpoint: '", path, "' is not a checkpoint file"));
    }
    const auto version = read_pod<std::uint32_t>(is, path);
    if (version != kVersion) {
        fail(cat("load_checkpoint: unsupported format version ", version, " in '", path, "'"));
    }
    const HyperParams hp = read_hp(is, path);
    hp.validate();

    std::map<std::string, diff::TensorPtrT<float>> tensors;
    const auto n_tensors = read_pod<std::uint32_t>(is, path);
    for (std::uint32_t k = 0; k < n_tensors; ++k) {
        const std::string name = read_str(is, path);
        const auto rank = read_pod<std::uint32_t>(is, path);
        std::vector<std::size_t> shape(rank);
        for (auto& dim : shape) {
            dim = static_cast<std::size_t>(read_pod<std::uint64_t>(is, path));
        }
        auto t = diff::TensorT<float>::make(shape, true);
        read_bytes(is, t->data.data(), t->data.size() * sizeof(float), path);
        tensors.emplace(name, std::move(t));
    }

    RngStream dummy(0);
    ModelParams p = init_params<float>(hp, dummy);  // correct shapes, then overwrite
    auto assign = [&](const std::string& name, diff::TensorPtrT<float>& slot) {
        auto it = tensors.find(name);
        if (it == tensors.end()) {
            fail(cat("load_checkpoint: '", path, "' is missing tensor '", name, "'"));
        }
        if (it->second->shape != slot->shape) {
            fail(cat("load_checkpoint: tensor '", name, "' has shape ",
                     diff::shape_str(it->second->shape), ", expected ",
                     diff::shape_str(slot->shape)));
        }
        slot = it->second;
        tensors.erase(it);
    };
    assign("item_embedding", p.item_embedding);
    assign("rating_proj_w", p.rating_proj_w);
    assign("rating_proj_b", p.rating_proj_b);
    assign("position_embedding", p.position_embedding);
    for (std::size_t i = 0; i < p.blocks.size(); ++i) {
        const std::string prefix = cat("block", i, ".");
        assign(prefix + "wq", p.blocks[i].wq);
        assign(prefix + "wk", p.blocks[i].wk);
        assign(prefix + "wv", p.blocks[i].wv);
        assign(prefix + "wo", p.blocks[i].wo);
        assign(prefix + "ffn_w1", p.blocks[i].ffn_w1);
        assign(prefix + "ffn_w2", p.blocks[i].ffn_w2);
    }
    assign("decoder_wa", p.decoder_wa);
    assign("bottleneck_ws", p.bottleneck_ws);
    if (!tensors.empty()) {
        fail(cat("load_checkpoint: unexpected tensor '", tensors.begin()->first, "' in '", path,
                 "'"));
    }
    return p;
}

}  // namespace rlt4rec
