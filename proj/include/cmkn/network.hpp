#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmkn/common.hpp"
#include "cmkn/kernel.hpp"
#include "cmkn/nystroem.hpp"
#include "cmkn/seqdata.hpp"

namespace cmkn {

/// Fully-connected layer. Activation is always the identity: the
/// interpretation machinery requires a purely linear head, so no other
/// activation is representable here.
struct DenseLayer {
    Eigen::MatrixXd weights;  // out x in
    Eigen::VectorXd bias;     // out
};

enum class LossKind { class_balanced_ce, bce_logits };

inline std::string loss_kind_name(LossKind k) {
    return k == LossKind::class_balanced_ce ? "class_balanced_ce" : "bce_logits";
}

inline LossKind loss_kind_from_name(const std::string& s) {
    if (s == "class_balanced_ce") return LossKind::class_balanced_ce;
    if (s == "bce_logits") return LossKind::bce_logits;
    throw config_error("unknown loss '" + s + "'");
}

struct TrainingMeta {
    std::uint64_t seed = 0;
    int epochs = 0;
    std::string config_hash;
};

struct CmknModel {
    Alphabet alphabet;
    KernelParams params;
    AnchorSet anchors;
    std::vector<DenseLayer> dense;
    std::vector<std::string> class_names;
    int seq_length = 0;
    LossKind loss = LossKind::class_balanced_ce;
    TrainingMeta meta;

    int positions() const { return window_count(seq_length, params.k); }
    int num_classes() const { return static_cast<int>(class_names.size()); }

    void validate() const {
        if (dense.empty()) throw config_error("model has no dense layers");
        if (dense.front().weights.cols() != anchors.count() * positions())
            throw config_error("dense input dimension does not match n * P");
        const int out = static_cast<int>(dense.back().weights.rows());
        if (loss == LossKind::bce_logits) {
            if (out != 1 || num_classes() != 2)
                throw config_error("bce_logits requires a 1-logit head and 2 classes");
        } else if (out != num_classes()) {
            throw config_error("output dimension does not match the class count");
        }
        for (std::size_t l = 1; l < dense.size(); ++l)
            if (dense[l].weights.cols() != dense[l - 1].weights.rows())
                throw config_error(strf("dense layer %zu input mismatch", l));
    }
};

/// Kernel-layer output flattened anchor-major: flat[i * P + p] = psi(i, p).
inline Eigen::VectorXd flatten_features(const Eigen::MatrixXd& psi) {
    const int n = static_cast<int>(psi.rows());
    const int P = static_cast<int>(psi.cols());
    Eigen::VectorXd flat(n * P);
    for (int i = 0; i < n; ++i) flat.segment(i * P, P) = psi.row(i).transpose();
    return flat;
}

inline Eigen::MatrixXd unflatten_features(const Eigen::VectorXd& flat, int n, int P) {
    Eigen::MatrixXd psi(n, P);
    for (int i = 0; i < n; ++i) psi.row(i) = flat.segment(i * P, P).transpose();
    return psi;
}

struct ForwardCache {
    Eigen::MatrixXd psi;                     // n x P
    std::vector<Eigen::VectorXd> activations;  // [flat, h1, ..., logits]
};

inline Eigen::VectorXd model_forward(const CmknModel& model, const EncodedSequence& x,
                                     ForwardCache* cache = nullptr) {
    if (x.length() != model.seq_length)
        throw config_error(strf("input length %d does not match the model's %d", x.length(),
                                model.seq_length));
    const Eigen::MatrixXd psi = layer_forward(x, model.anchors, model.params);
    Eigen::VectorXd a = flatten_features(psi);
    if (cache) {
        cache->psi = psi;
        cache->activations.clear();
        cache->activations.push_back(a);
    }
    for (const auto& layer : model.dense) {
        a = layer.weights * a + layer.bias;
        if (cache) cache->activations.push_back(a);
    }
    return a;
}

/// Class probabilities: softmax over the logits, or (1 - s, s) for a
/// single-logit binary head.
inline Eigen::VectorXd predict(const CmknModel& model, const EncodedSequence& x) {
    const Eigen::VectorXd logits = model_forward(model, x);
    if (model.loss == LossKind::bce_logits) {
        const double s = 1.0 / (1.0 + std::exp(-logits(0)));
        Eigen::VectorXd p(2);
        p << 1.0 - s, s;
        return p;
    }
    const double m = logits.maxCoeff();
    Eigen::VectorXd p = (logits.array() - m).exp();
    p /= p.sum();
    return p;
}

/// Probability assigned to class 1; the score used by the binary metrics.
inline double score_positive(const CmknModel& model, const EncodedSequence& x) {
    return predict(model, x)(1);
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Class-balanced weights (1 - beta) / (1 - beta^{n_c}), normalized to sum to
/// the class count. beta = 0 gives unit weights for any counts.
inline Eigen::VectorXd class_balanced_weights(const std::vector<int>& counts, double cb_beta) {
    if (counts.empty()) throw config_error("class_balanced_weights: no classes");
    if (cb_beta < 0.0 || cb_beta >= 1.0) throw config_error("cb_beta must be in [0, 1)");
    Eigen::VectorXd w(counts.size());
    for (std::size_t c = 0; c < counts.size(); ++c) {
        if (counts[c] < 1) throw config_error("class_balanced_weights: empty class");
        w(c) = cb_beta == 0.0
                   ? 1.0
                   : (1.0 - cb_beta) / (1.0 - std::pow(cb_beta, counts[c]));
    }
    w *= static_cast<double>(counts.size()) / w.sum();
    return w;
}

struct LossResult {
    double value = 0.0;
    Eigen::VectorXd grad;  // d value / d logits
};

inline LossResult loss_value_grad(LossKind kind, const Eigen::VectorXd& logits, int label,
                                  const Eigen::VectorXd& class_weights) {
    if (label < 0 || label >= class_weights.size())
        throw config_error("loss: label out of range");
    const double w = class_weights(label);
    LossResult out;
    if (kind == LossKind::bce_logits) {
        const double s = logits(0);
        const double y = static_cast<double>(label);
        // softplus(s) - y s, evaluated stably
        out.value = w * (std::max(s, 0.0) + std::log1p(std::exp(-std::abs(s))) - y * s);
        const double sig = 1.0 / (1.0 + std::exp(-s));
        out.grad = Eigen::VectorXd::Constant(1, w * (sig - y));
        return out;
    }
    const double m = logits.maxCoeff();
    const double lse = m + std::log((logits.array() - m).exp().sum());
    out.value = w * (lse - logits(label));
    Eigen::VectorXd p = (logits.array() - lse).exp();
    p(label) -= 1.0;
    out.grad = w * p;
    return out;
}

// ---------------------------------------------------------------------------
// Optimizer and schedule
// ---------------------------------------------------------------------------

struct AdamState {
    std::vector<Eigen::MatrixXd> m;
    std::vector<Eigen::MatrixXd> v;
    long t = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    void init(const std::vector<Eigen::MatrixXd*>& params) {
        m.clear();
        v.clear();
        for (const auto* p : params) {
            m.push_back(Eigen::MatrixXd::Zero(p->rows(), p->cols()));
            v.push_back(Eigen::MatrixXd::Zero(p->rows(), p->cols()));
        }
        t = 0;
    }
};

/// One bias-corrected Adam update over a parameter list.
inline void adam_step(const std::vector<Eigen::MatrixXd*>& params,
                      const std::vector<const Eigen::MatrixXd*>& grads, AdamState& state,
                      double lr) {
    if (params.size() != grads.size() || params.size() != state.m.size())
        throw config_error("adam_step: mismatched parameter lists");
    ++state.t;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& m = state.m[i];
        auto& v = state.v[i];
        const auto& g = *grads[i];
        m = state.beta1 * m + (1.0 - state.beta1) * g;
        v = state.beta2 * v + (1.0 - state.beta2) * g.cwiseProduct(g);
        params[i]->array() -=
            lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + state.eps);
    }
}

/// ReduceLROnPlateau: when the best loss has not improved by a relative
/// threshold for `patience` consecutive epochs, multiply the rate by
/// `factor`, never below `min_lr`.
struct PlateauScheduler {
    double lr;
    double factor = 0.1;
    int patience = 10;
    double min_lr = 1e-8;
    double rel_threshold = 1e-4;

    double best = std::numeric_limits<double>::infinity();
    int bad_epochs = 0;

    explicit PlateauScheduler(double initial_lr) : lr(initial_lr) {}

    double observe(double epoch_loss) {
        if (epoch_loss < best - rel_threshold * std::abs(best)) {
            best = epoch_loss;
            bad_epochs = 0;
        } else {
            ++bad_epochs;
            if (bad_epochs >= patience) {
                lr = std::max(lr * factor, min_lr);
                bad_epochs = 0;
            }
        }
        return lr;
    }
};

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct ModelConfig {
    KernelParams kernel;
    int n_anchors = 50;
    int sample_m = 0;         // 0 -> max(10 n, 3000)
    std::vector<int> hidden;  // widths of linear hidden layers

    int resolved_sample_m() const {
        return sample_m > 0 ? sample_m : std::max(10 * n_anchors, 3000);
    }
};

struct TrainConfig {
    int epochs = 200;
    double lr = 0.1;
    double factor = 0.1;
    int patience = 10;
    double min_lr = 1e-8;
    double rel_threshold = 1e-4;
    LossKind loss = LossKind::class_balanced_ce;
    double cb_beta = 0.999;
    int batch_size = 0;  // 0 = full batch
    std::uint64_t seed = 1;
    bool freeze_positions = false;
    bool detach_inv_sqrt = false;

    void validate() const {
        if (epochs < 1) throw config_error("epochs must be >= 1");
        if (lr < 0.0) throw config_error("learning rate must be >= 0");
        if (factor <= 0.0 || factor >= 1.0) throw config_error("factor must be in (0, 1)");
        if (patience < 1) throw config_error("patience must be >= 1");
        if (cb_beta < 0.0 || cb_beta >= 1.0) throw config_error("cb_beta must be in [0, 1)");
        if (batch_size < 0) throw config_error("batch_size must be >= 0");
    }
};

struct EpochStats {
    int epoch = 0;
    double loss = 0.0;
    double lr = 0.0;
    double train_accuracy = 0.0;
};

namespace detail {

struct DenseGrads {
    std::vector<Eigen::MatrixXd> w;
    std::vector<Eigen::MatrixXd> b;  // column vectors kept as 1-col matrices

    void init(const std::vector<DenseLayer>& layers) {
        w.clear();
        b.clear();
        for (const auto& l : layers) {
            w.push_back(Eigen::MatrixXd::Zero(l.weights.rows(), l.weights.cols()));
            b.push_back(Eigen::MatrixXd::Zero(l.bias.size(), 1));
        }
    }
    void zero() {
        for (auto& g : w) g.setZero();
        for (auto& g : b) g.setZero();
    }
};

}  // namespace detail

/// Mean loss over the index set plus gradients of that mean with respect to
/// every parameter. Requires a current anchor cache. The kernel-layer K_ZZ
/// path is accumulated over the whole batch and differentiated once.
inline double batch_forward_backward(const CmknModel& model, const LabeledDataset& ds,
                                     const std::vector<int>& idx,
                                     const Eigen::VectorXd& class_weights,
                                     bool detach_inv_sqrt, LayerGrads& anchor_grads,
                                     detail::DenseGrads& dense_grads, int* correct = nullptr) {
    const double inv_b = 1.0 / static_cast<double>(idx.size());
    const int n = model.anchors.count();
    const int P = model.positions();
    Eigen::MatrixXd s_accum = Eigen::MatrixXd::Zero(n, n);
    double loss_sum = 0.0;
    int hits = 0;

    ForwardCache cache;
    for (int i : idx) {
        const auto& x = ds.sequences[i];
        const Eigen::VectorXd logits = model_forward(model, x, &cache);
        const LossResult lr = loss_value_grad(model.loss, logits, x.label, class_weights);
        loss_sum += lr.value;
        if (!std::isfinite(lr.value))
            throw numeric_error(strf("non-finite loss on sample '%s'", x.id.c_str()));
        if (model.loss == LossKind::bce_logits)
            hits += (logits(0) >= 0.0 ? 1 : 0) == x.label;
        else {
            int arg = 0;
            logits.maxCoeff(&arg);
            hits += arg == x.label;
        }

        Eigen::VectorXd delta = lr.grad * inv_b;
        for (int l = static_cast<int>(model.dense.size()) - 1; l >= 0; --l) {
            dense_grads.w[l].noalias() +=
                delta * cache.activations[l].transpose();
            dense_grads.b[l].col(0) += delta;
            delta = model.dense[l].weights.transpose() * delta;
        }
        const Eigen::MatrixXd g = unflatten_features(delta, n, P);
        layer_backward_kz(x, model.anchors, model.params, g, anchor_grads, s_accum);
    }
    if (!detach_inv_sqrt)
        layer_backward_kzz(model.anchors, model.params, s_accum, anchor_grads);
    if (correct) *correct = hits;
    return loss_sum * inv_b;
}

/// Mean loss only (no gradients); used by evaluation paths and finite
/// difference checks.
inline double batch_loss(const CmknModel& model, const LabeledDataset& ds,
                         const std::vector<int>& idx, const Eigen::VectorXd& class_weights) {
    double sum = 0.0;
    for (int i : idx)
        sum += loss_value_grad(model.loss, model_forward(model, ds.sequences[i]),
                               ds.sequences[i].label, class_weights)
                   .value;
    return sum / static_cast<double>(idx.size());
}

/// End-to-end training: anchor initialization, Adam over dense parameters and
/// raw anchor parameters with constraint projection after every step, and a
/// plateau learning-rate schedule. Deterministic for a fixed rng seed in
/// single-threaded mode.
inline std::pair<CmknModel, std::vector<EpochStats>> train(const LabeledDataset& ds,
                                                           const ModelConfig& mc,
                                                           const TrainConfig& tc,
                                                           SplitRng rng) {
    tc.validate();
    if (ds.sequences.empty()) throw config_error("train: empty dataset");
    const int C = ds.num_classes();
    if (C < 2) throw config_error("train: need at least two classes");
    if (tc.loss == LossKind::bce_logits && C != 2)
        throw config_error("bce_logits requires exactly two classes");
    const int L = ds.sequences.front().length();
    for (const auto& s : ds.sequences)
        if (s.length() != L)
            throw config_error("train: all sequences must share one length");

    CmknModel model;
    model.alphabet = ds.alphabet;
    model.params = mc.kernel;
    model.class_names = ds.class_names;
    model.seq_length = L;
    model.loss = tc.loss;
    model.meta.seed = tc.seed;
    model.meta.epochs = tc.epochs;

    SplitRng anchor_rng = rng.split(1);
    SplitRng dense_rng = rng.split(2);
    SplitRng shuffle_rng = rng.split(3);

    model.anchors =
        init_anchors(ds, mc.n_anchors, mc.resolved_sample_m(), mc.kernel.k, mc.kernel,
                     anchor_rng);

    const int P = model.positions();
    const int out_dim = tc.loss == LossKind::bce_logits ? 1 : C;
    std::vector<int> dims;
    dims.push_back(mc.n_anchors * P);
    for (int h : mc.hidden) {
        if (h < 1) throw config_error("hidden layer width must be >= 1");
        dims.push_back(h);
    }
    dims.push_back(out_dim);
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        DenseLayer layer;
        const double limit = std::sqrt(6.0 / static_cast<double>(dims[l] + dims[l + 1]));
        layer.weights.resize(dims[l + 1], dims[l]);
        for (int r = 0; r < layer.weights.rows(); ++r)
            for (int c = 0; c < layer.weights.cols(); ++c)
                layer.weights(r, c) = (2.0 * dense_rng.next_double() - 1.0) * limit;
        layer.bias = Eigen::VectorXd::Zero(dims[l + 1]);
        model.dense.push_back(std::move(layer));
    }
    model.validate();

    const Eigen::VectorXd weights = class_balanced_weights(ds.class_counts(), tc.cb_beta);

    // Parameter list: anchor motifs, anchor positions, then dense W/b pairs.
    std::vector<Eigen::MatrixXd> bias_as_mat(model.dense.size());
    std::vector<Eigen::MatrixXd*> params{&model.anchors.motifs, &model.anchors.positions};
    for (std::size_t l = 0; l < model.dense.size(); ++l) params.push_back(&model.dense[l].weights);
    for (std::size_t l = 0; l < model.dense.size(); ++l) {
        bias_as_mat[l] = model.dense[l].bias;
        params.push_back(&bias_as_mat[l]);
    }
    AdamState adam;
    adam.init(params);
    PlateauScheduler sched(tc.lr);
    sched.factor = tc.factor;
    sched.patience = tc.patience;
    sched.min_lr = tc.min_lr;
    sched.rel_threshold = tc.rel_threshold;

    LayerGrads anchor_grads(mc.n_anchors, model.anchors.motif_dim());
    detail::DenseGrads dense_grads;
    dense_grads.init(model.dense);

    const int N = static_cast<int>(ds.sequences.size());
    std::vector<int> order(N);
    for (int i = 0; i < N; ++i) order[i] = i;

    std::vector<EpochStats> history;
    double lr_now = tc.lr;
    for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
        if (tc.batch_size > 0)
            for (int i = N - 1; i > 0; --i)
                std::swap(order[i], order[static_cast<int>(shuffle_rng.next_below(i + 1))]);

        const int bs = tc.batch_size > 0 ? tc.batch_size : N;
        double loss_weighted_sum = 0.0;
        int correct = 0;
        for (int start = 0; start < N; start += bs) {
            const int stop = std::min(start + bs, N);
            std::vector<int> batch(order.begin() + start, order.begin() + stop);

            if (!model.anchors.cache_valid()) model.anchors.recompute_cache(model.params);
            anchor_grads.motifs.setZero();
            anchor_grads.positions.setZero();
            dense_grads.zero();
            int batch_correct = 0;
            const double mean_loss =
                batch_forward_backward(model, ds, batch, weights, tc.detach_inv_sqrt,
                                       anchor_grads, dense_grads, &batch_correct);
            loss_weighted_sum += mean_loss * static_cast<double>(batch.size());
            correct += batch_correct;

            if (tc.freeze_positions) anchor_grads.positions.setZero();
            std::vector<const Eigen::MatrixXd*> grads{&anchor_grads.motifs,
                                                      &anchor_grads.positions};
            for (std::size_t l = 0; l < model.dense.size(); ++l)
                grads.push_back(&dense_grads.w[l]);
            for (std::size_t l = 0; l < model.dense.size(); ++l)
                grads.push_back(&dense_grads.b[l]);
            adam_step(params, grads, adam, lr_now);
            for (std::size_t l = 0; l < model.dense.size(); ++l)
                model.dense[l].bias = bias_as_mat[l].col(0);
            apply_anchor_constraints(model.anchors, model.params.k);
        }

        const double epoch_loss = loss_weighted_sum / static_cast<double>(N);
        if (!std::isfinite(epoch_loss))
            throw numeric_error(strf("training diverged at epoch %d", epoch));
        history.push_back({epoch, epoch_loss, lr_now,
                           static_cast<double>(correct) / static_cast<double>(N)});
        lr_now = sched.observe(epoch_loss);
    }

    if (!model.anchors.cache_valid()) model.anchors.recompute_cache(model.params);
    return {std::move(model), std::move(history)};
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline constexpr int kModelFormatVersion = 1;

inline std::string kzz_digest(const CmknModel& model) {
    const Eigen::MatrixXd kzz = compute_kzz(model.anchors, model.params);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (int i = 0; i < kzz.rows(); ++i)
        for (int j = 0; j < kzz.cols(); ++j) {
            const double v = kzz(i, j);
            h = fnv1a64(&v, sizeof(v), h);
        }
    return hex64(h);
}

inline nlohmann::json model_to_json(const CmknModel& model) {
    nlohmann::json j;
    j["format_version"] = kModelFormatVersion;
    j["alphabet"] = {{"name", model.alphabet.name}, {"symbols", model.alphabet.symbols}};
    nlohmann::json amb = nlohmann::json::object();
    for (const auto& [c, members] : model.alphabet.ambiguity)
        amb[std::string(1, c)] = members;
    j["alphabet"]["ambiguity"] = amb;
    j["kernel_params"] = {{"k", model.params.k},
                          {"alpha", model.params.alpha},
                          {"beta", model.params.beta},
                          {"sigma", model.params.sigma}};

    nlohmann::json anchors;
    anchors["epsilon"] = model.anchors.eps_rel;
    anchors["motifs"] = nlohmann::json::array();
    anchors["positions"] = nlohmann::json::array();
    for (int i = 0; i < model.anchors.count(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (int d = 0; d < model.anchors.motif_dim(); ++d)
            row.push_back(model.anchors.motifs(i, d));
        anchors["motifs"].push_back(row);
        anchors["positions"].push_back(
            {model.anchors.positions(i, 0), model.anchors.positions(i, 1)});
    }
    j["anchors"] = anchors;

    j["dense_layers"] = nlohmann::json::array();
    for (const auto& layer : model.dense) {
        nlohmann::json l;
        l["weights"] = nlohmann::json::array();
        for (int r = 0; r < layer.weights.rows(); ++r) {
            nlohmann::json row = nlohmann::json::array();
            for (int c = 0; c < layer.weights.cols(); ++c) row.push_back(layer.weights(r, c));
            l["weights"].push_back(row);
        }
        l["bias"] = nlohmann::json::array();
        for (int r = 0; r < layer.bias.size(); ++r) l["bias"].push_back(layer.bias(r));
        j["dense_layers"].push_back(l);
    }

    j["class_names"] = model.class_names;
    j["seq_length"] = model.seq_length;
    j["loss"] = loss_kind_name(model.loss);
    j["kzz_digest"] = kzz_digest(model);
    j["training_meta"] = {{"seed", model.meta.seed},
                          {"epochs", model.meta.epochs},
                          {"config_hash", model.meta.config_hash}};
    return j;
}

inline CmknModel model_from_json(const nlohmann::json& j) {
    auto need = [&](const nlohmann::json& obj, const char* key) -> const nlohmann::json& {
        if (!obj.contains(key))
            throw data_error(strf("model file is missing field '%s'", key));
        return obj.at(key);
    };

    const int version = need(j, "format_version").get<int>();
    if (version != kModelFormatVersion)
        throw data_error(strf("unsupported model format_version %d (expected %d)", version,
                              kModelFormatVersion));

    CmknModel model;
    const auto& ja = need(j, "alphabet");
    model.alphabet.name = need(ja, "name").get<std::string>();
    model.alphabet.symbols = need(ja, "symbols").get<std::string>();
    for (auto it = need(ja, "ambiguity").begin(); it != need(ja, "ambiguity").end(); ++it)
        model.alphabet.ambiguity[it.key()[0]] = it.value().get<std::string>();
    model.alphabet.validate();

    const auto& jk = need(j, "kernel_params");
    model.params = KernelParams(need(jk, "k").get<int>(), need(jk, "alpha").get<double>(),
                                need(jk, "beta").get<double>(),
                                need(jk, "sigma").get<double>());

    const auto& jan = need(j, "anchors");
    model.anchors.eps_rel = need(jan, "epsilon").get<double>();
    const auto& motifs = need(jan, "motifs");
    const auto& positions = need(jan, "positions");
    if (motifs.empty() || motifs.size() != positions.size())
        throw data_error("model file anchors are empty or inconsistent");
    const int n = static_cast<int>(motifs.size());
    const int D = static_cast<int>(motifs.at(0).size());
    model.anchors.motifs.resize(n, D);
    model.anchors.positions.resize(n, 2);
    for (int i = 0; i < n; ++i) {
        for (int d = 0; d < D; ++d) model.anchors.motifs(i, d) = motifs.at(i).at(d).get<double>();
        model.anchors.positions(i, 0) = positions.at(i).at(0).get<double>();
        model.anchors.positions(i, 1) = positions.at(i).at(1).get<double>();
    }

    for (const auto& jl : need(j, "dense_layers")) {
        DenseLayer layer;
        const auto& w = need(jl, "weights");
        const int rows = static_cast<int>(w.size());
        const int cols = rows > 0 ? static_cast<int>(w.at(0).size()) : 0;
        layer.weights.resize(rows, cols);
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) layer.weights(r, c) = w.at(r).at(c).get<double>();
        const auto& b = need(jl, "bias");
        layer.bias.resize(static_cast<int>(b.size()));
        for (int r = 0; r < layer.bias.size(); ++r) layer.bias(r) = b.at(r).get<double>();
        model.dense.push_back(std::move(layer));
    }

    model.class_names = need(j, "class_names").get<std::vector<std::string>>();
    model.seq_length = need(j, "seq_length").get<int>();
    model.loss = loss_kind_from_name(need(j, "loss").get<std::string>());
    const auto& jm = need(j, "training_meta");
    model.meta.seed = need(jm, "seed").get<std::uint64_t>();
    model.meta.epochs = need(jm, "epochs").get<int>();
    model.meta.config_hash = need(jm, "config_hash").get<std::string>();
    model.validate();

    const std::string digest = need(j, "kzz_digest").get<std::string>();
    if (digest != kzz_digest(model))
        throw data_error("model file digest mismatch: anchor Gram does not reproduce");
    model.anchors.recompute_cache(model.params);
    return model;
}

inline void save_model(const CmknModel& model, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw data_error("cannot open '" + path + "' for writing");
    out << model_to_json(model).dump(2) << '\n';
    if (!out) throw data_error("failed writing model to '" + path + "'");
}

inline CmknModel load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open model file '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw data_error(std::string("model file is not valid JSON: ") + e.what());
    }
    return model_from_json(j);
}

}  // namespace cmkn
