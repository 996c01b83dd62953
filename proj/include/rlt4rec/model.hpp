#pragma once

// The sequential-transformer recommender: interleaved (rating, item) token
// encoding, causal multi-head attention blocks without skip connections, an
// item decoder head, and a tanh inner-product bottleneck that predicts the
// next rating from a learned user embedding. Graph construction is templated
// on the scalar so the double-precision gradient oracle runs the exact same
// code path as float training.

#include <chrono>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rlt4rec/optim.hpp"
#include "rlt4rec/rng.hpp"
#include "rlt4rec/simenv.hpp"
#include "rlt4rec/tensor.hpp"

namespace rlt4rec {

struct HyperParams {
    int d = 128;
    int n_blocks = 2;
    int n_heads = 4;
    int ffn_mult = 4;
    int n_items = 0;
    int max_timesteps = 50;
    double lr = 1e-3;
    double weight_decay = 1e-5;
    double clip_norm = 1.0;
    int batch_size = 32;
    int epochs = 20;
    bool bottleneck_enabled = true;
    bool layernorm_enabled = false;
    double dropout = 0.0;
    std::uint64_t seed = 1;

    void validate() const {
        if (d <= 0 || n_blocks <= 0 || n_heads <= 0 || ffn_mult <= 0) {
            fail("hyperparams: d, n_blocks, n_heads, ffn_mult must be positive");
        }
        if (d % n_heads != 0) {
            fail(cat("hyperparams: d=", d, " not divisible by n_heads=", n_heads));
        }
        if (n_items <= 0) {
            fail("hyperparams: n_items must be positive");
        }
        if (max_timesteps <= 0) {
            fail("hyperparams: max_timesteps must be positive");
        }
        if (dropout < 0.0 || dropout >= 1.0) {
            fail(cat("hyperparams: dropout ", dropout, " outside [0,1)"));
        }
        if (batch_size <= 0) {
            fail("hyperparams: batch_size must be positive");
        }
    }
};

// Interleaved token view r_0, v_0, r_1, v_1, ... Ratings may carry one more
// entry than items: a trailing target rating prompting the next item.
struct TokenSeq {
    std::vector<double> ratings;
    std::vector<int> items;

    std::size_t n_ratings() const { return ratings.size(); }
    std::size_t n_items_tok() const { return items.size(); }
    std::size_t n_tokens() const { return ratings.size() + items.size(); }
};

// History of t pairs plus a target rating -> 2t+1 tokens.
TokenSeq tokenize(const HyperParams& hp, const InteractionHistory& history, double target_rating);

// Full pair sequence -> 2T tokens (teacher-forced training / probing form).
TokenSeq tokenize_pairs(const HyperParams& hp, const InteractionHistory& pairs);

template <typename S>
struct ModelParamsT {
    HyperParams hp;
    diff::TensorPtrT<S> item_embedding;      // [n_items, d]
    diff::TensorPtrT<S> rating_proj_w;       // [d]
    diff::TensorPtrT<S> rating_proj_b;       // [d]
    diff::TensorPtrT<S> position_embedding;  // [max_timesteps, d]
    struct Block {
        diff::TensorPtrT<S> wq, wk, wv, wo;   // [d, d]
        diff::TensorPtrT<S> ffn_w1, ffn_w2;   // [d, ffn_mult*d], [ffn_mult*d, d]
    };
    std::vector<Block> blocks;
    diff::TensorPtrT<S> decoder_wa;    // [n_items, d]
    diff::TensorPtrT<S> bottleneck_ws; // [d, d]

    diff::ParamListT<S> named() const {
        diff::ParamListT<S> out;
        out.push_back({"item_embedding", item_embedding});
        out.push_back({"rating_proj_w", rating_proj_w});
        out.push_back({"rating_proj_b", rating_proj_b});
        out.push_back({"position_embedding", position_embedding});
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            const std::string prefix = cat("block", i, ".");
            out.push_back({prefix + "wq", blocks[i].wq});
            out.push_back({prefix + "wk", blocks[i].wk});
            out.push_back({prefix + "wv", blocks[i].wv});
            out.push_back({prefix + "wo", blocks[i].wo});
            out.push_back({prefix + "ffn_w1", blocks[i].ffn_w1});
            out.push_back({prefix + "ffn_w2", blocks[i].ffn_w2});
        }
        out.push_back({"decoder_wa", decoder_wa});
        out.push_back({"bottleneck_ws", bottleneck_ws});
        return out;
    }

    ModelParamsT clone() const {
        ModelParamsT copy;
        copy.hp = hp;
        auto dup = [](const diff::TensorPtrT<S>& t) {
            auto c = diff::TensorT<S>::make(t->shape, true);
            c->data = t->data;
            return c;
        };
        copy.item_embedding = dup(item_embedding);
        copy.rating_proj_w = dup(rating_proj_w);
        copy.rating_proj_b = dup(rating_proj_b);
        copy.position_embedding = dup(position_embedding);
        copy.blocks.reserve(blocks.size());
        for (const auto& b : blocks) {
            copy.blocks.push_back(
                {dup(b.wq), dup(b.wk), dup(b.wv), dup(b.wo), dup(b.ffn_w1), dup(b.ffn_w2)});
        }
        copy.decoder_wa = dup(decoder_wa);
        copy.bottleneck_ws = dup(bottleneck_ws);
        return copy;
    }
};

using ModelParams = ModelParamsT<float>;

template <typename S>
ModelParamsT<S> init_params(const HyperParams& hp, RngStream& rng) {
    hp.validate();
    // Without skip connections the blocks must preserve signal scale, so
    // everything is fan-in scaled. Item embeddings share the 1/sqrt(d) scale;
    // the bottleneck dot product then spans rating magnitude without first
    // having to grow the embedding table. The rating projection divides by a
    // nominal rating scale so rating tokens match item-token magnitude.
    ModelParamsT<S> p;
    p.hp = hp;
    const std::size_t d = static_cast<std::size_t>(hp.d);
    std::uint64_t stream = 0;
    auto gauss = [&](std::vector<std::size_t> shape, double std) {
        auto t = diff::TensorT<S>::make(std::move(shape), true);
        RngStream r = rng.fork(stream++);
        for (auto& x : t->data) {
            x = static_cast<S>(r.normal(0.0, std));
        }
        return t;
    };
    const double w_std = 1.0 / std::sqrt(static_cast<double>(d));
    const std::size_t f = d * static_cast<std::size_t>(hp.ffn_mult);
    const double f_std = 1.0 / std::sqrt(static_cast<double>(f));
    constexpr double kNominalRatingScale = 3.0;
    p.item_embedding = gauss({static_cast<std::size_t>(hp.n_items), d}, w_std);
    p.rating_proj_w = gauss({d}, w_std / kNominalRatingScale);
    p.rating_proj_b = diff::TensorT<S>::make({d}, true);
    ++stream;
    p.position_embedding = gauss({static_cast<std::size_t>(hp.max_timesteps), d}, w_std);
    p.blocks.resize(static_cast<std::size_t>(hp.n_blocks));
    for (auto& b : p.blocks) {
        b.wq = gauss({d, d}, w_std);
        b.wk = gauss({d, d}, w_std);
        b.wv = gauss({d, d}, w_std);
        b.wo = gauss({d, d}, w_std);
        b.ffn_w1 = gauss({d, f}, w_std);
        b.ffn_w2 = gauss({f, d}, f_std);
    }
    p.decoder_wa = gauss({static_cast<std::size_t>(hp.n_items), d}, w_std);
    p.bottleneck_ws = gauss({d, d}, w_std);
    return p;
}

namespace detail {

// Graph handles for one forward build over a uniform-shape token batch.
template <typename S>
struct GraphOut {
    diff::TensorPtrT<S> logits;  // [B*Tr, n_items]
    diff::TensorPtrT<S> s_hat;   // [B*Ti, d] or null when Ti == 0
    diff::TensorPtrT<S> r_pred;  // [B*(Ti-1)] or null when Ti < 2
    std::size_t batch = 0, tr = 0, ti = 0;
};

// Builds the full forward graph. dropout_rng non-null enables inverted
// dropout (training mode).
template <typename S>
GraphOut<S> build_graph(const ModelParamsT<S>& p, std::span<const TokenSeq> batch,
                        RngStream* dropout_rng) {
    using namespace rlt4rec::diff;
    const HyperParams& hp = p.hp;
    if (batch.empty()) {
        fail("forward: empty batch");
    }
    const std::size_t b = batch.size();
    const std::size_t tr = batch[0].n_ratings();
    const std::size_t ti = batch[0].n_items_tok();
    if (tr != ti && tr != ti + 1) {
        fail(cat("forward: malformed token sequence (", tr, " ratings, ", ti, " items)"));
    }
    if (tr == 0) {
        fail("forward: token sequence needs at least one rating token");
    }
    if (tr > static_cast<std::size_t>(hp.max_timesteps)) {
        fail(cat("forward: ", tr, " timesteps exceed max_timesteps ", hp.max_timesteps));
    }
    std::vector<S> ratings_flat(b * tr);
    std::vector<int> item_ids(b * ti), rstep(b * tr), istep(b * ti);
    for (std::size_t s = 0; s < b; ++s) {
        const TokenSeq& seq = batch[s];
        if (seq.n_ratings() != tr || seq.n_items_tok() != ti) {
            fail("forward: batch sequences must share one token shape");
        }
        for (std::size_t t = 0; t < tr; ++t) {
            ratings_flat[s * tr + t] = static_cast<S>(seq.ratings[t]);
            rstep[s * tr + t] = static_cast<int>(t);
        }
        for (std::size_t t = 0; t < ti; ++t) {
            if (seq.items[t] < 0 || seq.items[t] >= hp.n_items) {
                fail(cat("forward: item id ", seq.items[t], " out of range [0,", hp.n_items, ")"));
            }
            item_ids[s * ti + t] = seq.items[t];
            istep[s * ti + t] = static_cast<int>(t);
        }
    }
    const std::size_t d = static_cast<std::size_t>(hp.d);
    const std::size_t heads = static_cast<std::size_t>(hp.n_heads);
    const std::size_t tt = tr + ti;

    auto ratings_const = TensorT<S>::constant({b * tr, 1}, std::move(ratings_flat));
    auto r_lin = matmul(ratings_const, reshape(p.rating_proj_w, {1, d}));
    auto r_tok = add(add(r_lin, p.rating_proj_b), embedding_rows(p.position_embedding, rstep));
    auto x = reshape(r_tok, {b, tr, d});
    if (ti > 0) {
        auto i_tok = add(embedding_rows(p.item_embedding, item_ids),
                         embedding_rows(p.position_embedding, istep));
        x = interleave_rows(x, reshape(i_tok, {b, ti, d}));
    }

    auto mask = causal_mask<S>(tt);
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(hp.d));
    auto maybe_dropout = [&](TensorPtrT<S> t) {
        if (dropout_rng == nullptr || hp.dropout <= 0.0) {
            return t;
        }
        auto m = TensorT<S>::make(t->shape);
        const S keep = static_cast<S>(1.0 / (1.0 - hp.dropout));
        for (auto& v : m->data) {
            v = dropout_rng->uniform() < hp.dropout ? S(0) : keep;
        }
        return mul(t, m);
    };

    for (int blk = 0; blk < hp.n_blocks; ++blk) {
        const auto& w = p.blocks[static_cast<std::size_t>(blk)];
        auto xin = hp.layernorm_enabled ? layernorm(x) : x;
        auto qh = split_heads(matmul(xin, w.wq), heads);
        auto kh = split_heads(matmul(xin, w.wk), heads);
        auto vh = split_heads(matmul(xin, w.wv), heads);
        auto scores = add(scale(matmul(qh, transpose(kh)), att_scale), mask);
        auto ctx = merge_heads(matmul(softmax(scores), vh), heads);
        auto y = maybe_dropout(matmul(ctx, w.wo));
        auto yin = hp.layernorm_enabled ? layernorm(y) : y;
        auto hidden = maybe_dropout(gelu(matmul(yin, w.ffn_w1)));
        x = matmul(hidden, w.ffn_w2);
        for (S v : x->data) {
            if (!std::isfinite(static_cast<double>(v))) {
                fail(cat("forward: non-finite activation in block ", blk));
            }
        }
    }

    GraphOut<S> out;
    out.batch = b;
    out.tr = tr;
    out.ti = ti;
    auto h_r = reshape(take_rows(x, 0, 2, tr), {b * tr, d});
    out.logits = matmul(h_r, transpose(p.decoder_wa));
    if (ti > 0) {
        auto h_i = reshape(take_rows(x, 1, 2, ti), {b * ti, d});
        out.s_hat = tanh(matmul(h_i, transpose(p.bottleneck_ws)));
        if (ti >= 2) {
            std::vector<int> next_ids(b * (ti - 1));
            for (std::size_t s = 0; s < b; ++s) {
                for (std::size_t t = 0; t + 1 < ti; ++t) {
                    next_ids[s * (ti - 1) + t] = batch[s].items[t + 1];
                }
            }
            auto s3 = reshape(out.s_hat, {b, ti, d});
            auto s_used = reshape(take_rows(s3, 0, 1, ti - 1), {b * (ti - 1), d});
            out.r_pred = rowwise_dot(s_used, embedding_rows(p.item_embedding, next_ids));
        }
    }
    return out;
}

// Teacher-forced joint loss over a training-form batch (Ti == Tr).
template <typename S>
diff::TensorPtrT<S> loss_graph(const ModelParamsT<S>& p, std::span<const TokenSeq> batch,
                               RngStream* dropout_rng) {
    using namespace rlt4rec::diff;
    GraphOut<S> g = build_graph(p, batch, dropout_rng);
    if (g.ti != g.tr) {
        fail("loss: training form requires one item per rating token");
    }
    std::vector<int> targets(g.batch * g.tr);
    for (std::size_t s = 0; s < g.batch; ++s) {
        for (std::size_t t = 0; t < g.tr; ++t) {
            targets[s * g.tr + t] = batch[s].items[t];
        }
    }
    auto loss = cross_entropy(g.logits, std::move(targets));
    if (p.hp.bottleneck_enabled && g.r_pred) {
        std::vector<S> rating_targets(g.batch * (g.ti - 1));
        for (std::size_t s = 0; s < g.batch; ++s) {
            for (std::size_t t = 1; t < g.ti; ++t) {
                rating_targets[s * (g.ti - 1) + (t - 1)] = static_cast<S>(batch[s].ratings[t]);
            }
        }
        auto target_const =
            TensorT<S>::constant({g.batch * (g.ti - 1)}, std::move(rating_targets));
        loss = add(loss, squared_error(g.r_pred, target_const));
    }
    return loss;
}

}  // namespace detail

// Per-sequence forward values, detached from the graph.
struct SeqForward {
    std::vector<std::vector<double>> item_logits;      // one n_items row per rating token
    std::vector<std::vector<double>> user_embeddings;  // one d row per item token (s_hat)
    std::vector<double> rating_preds;                  // one per applicable item token
};

struct ForwardOut {
    std::vector<SeqForward> seqs;
};

template <typename S>
ForwardOut forward(const ModelParamsT<S>& p, std::span<const TokenSeq> batch) {
    detail::GraphOut<S> g = detail::build_graph(p, batch, nullptr);
    ForwardOut out;
    out.seqs.resize(g.batch);
    const std::size_t v = static_cast<std::size_t>(p.hp.n_items);
    const std::size_t d = static_cast<std::size_t>(p.hp.d);
    for (std::size_t s = 0; s < g.batch; ++s) {
        SeqForward& sf = out.seqs[s];
        sf.item_logits.resize(g.tr);
        for (std::size_t t = 0; t < g.tr; ++t) {
            const S* row = g.logits->data.data() + (s * g.tr + t) * v;
            sf.item_logits[t].assign(row, row + v);
        }
        sf.user_embeddings.resize(g.ti);
        for (std::size_t t = 0; t < g.ti; ++t) {
            const S* row = g.s_hat->data.data() + (s * g.ti + t) * d;
            sf.user_embeddings[t].assign(row, row + d);
        }
        if (g.r_pred) {
            const std::size_t n = g.ti - 1;
            sf.rating_preds.assign(g.r_pred->data.begin() + static_cast<std::ptrdiff_t>(s * n),
                                   g.r_pred->data.begin() + static_cast<std::ptrdiff_t>((s + 1) * n));
        }
    }
    return out;
}

template <typename S>
ForwardOut forward(const ModelParamsT<S>& p, const TokenSeq& seq) {
    return forward(p, std::span<const TokenSeq>(&seq, 1));
}

// Scalar-arithmetic joint loss over a training-form batch: per sequence, the
// mean cross-entropy over rating tokens plus the mean squared rating error
// over applicable positions; averaged over sequences.
double sequence_loss(const ForwardOut& out, std::span<const TokenSeq> batch,
                     bool bottleneck_enabled);

// Softmax of the final-position item logits. Unmasked: excluding seen items
// is the policy layer's job.
std::vector<double> next_item_dist(const ModelParams& p, const InteractionHistory& history,
                                   double target_rating);

struct TrainingLog {
    struct Epoch {
        int epoch = 0;
        double train_loss = 0.0;
        double val_loss = 0.0;
        double wall_seconds = 0.0;
    };
    std::vector<Epoch> epochs;
    int best_epoch = 0;
};

// Deterministic columns only (epoch, train_loss, val_loss); wall time lives
// in the run manifest.
void save_training_log(const TrainingLog& log, const std::string& path);

struct TrainResult {
    ModelParams params;
    TrainingLog log;
};

// Teacher-forced training with a by-user validation split; returns the
// parameters of the epoch with minimum validation loss.
TrainResult train_model(const OfflineDataset& data, HyperParams hp, RngStream& rng,
                        double val_fraction = 0.1);

void save_checkpoint(const ModelParams& p, const std::string& path);
ModelParams load_checkpoint(const std::string& path);

}  // namespace rlt4rec
