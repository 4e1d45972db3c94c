#pragma once

#include <algorithm>
#include <stdexcept>
#include <string>
#include <vector>

#include "lsvis/adam.hpp"
#include "lsvis/autodiff.hpp"
#include "lsvis/datasets.hpp"
#include "lsvis/rng.hpp"

namespace lsvis::pseudo {

struct PseudoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Raised when the classifier misses the accuracy gate; carries the value.
struct GateError : PseudoError {
    double achieved;
    double gate;
    GateError(double achieved_, double gate_)
        : PseudoError("classifier accuracy " + std::to_string(achieved_) +
                      " below required gate " + std::to_string(gate_)),
          achieved(achieved_),
          gate(gate_) {}
};

struct ClassifierConfig {
    int class_count = 0;
    int epochs = 10;
    double lr = 1e-3;
    int64_t batch_size = 64;
    double accuracy_gate = 0.95;
    uint64_t seed = 0;

    void validate() const {
        if (class_count < 2) throw PseudoError("class_count must be >= 2");
        if (accuracy_gate <= 0.0 || accuracy_gate > 1.0)
            throw PseudoError("accuracy_gate must be in (0,1]");
        if (epochs < 1 || batch_size < 1) throw PseudoError("epochs and batch_size must be >= 1");
    }
};

// Small label source standing in for the high-accuracy classifier role:
// 3x (conv 32 filters, 3x3, stride 2, pad 1, relu) -> global mean pool ->
// linear to class_count.
struct Classifier {
    ClassifierConfig cfg;
    nd::ParamMap<float> params;
    double val_accuracy = 0.0;
    bool gate_passed = false;
};

constexpr int kClsLayers = 3;
constexpr int64_t kClsFilters = 32;

namespace detail {

inline nd::ParamMap<float> init_classifier_params(int class_count, Rng& rng) {
    nd::ParamMap<float> p;
    for (int i = 1; i <= kClsLayers; ++i) {
        int64_t ci = i == 1 ? 1 : kClsFilters;
        nd::ArrayT<float> w({kClsFilters, ci, 3, 3});
        double bound = std::sqrt(1.0 / static_cast<double>(ci * 9));
        for (auto& v : w.data) v = static_cast<float>(rng.uniform(-bound, bound));
        p["cls" + std::to_string(i) + ".w"] = std::move(w);
        p["cls" + std::to_string(i) + ".b"] = nd::ArrayT<float>::zeros({kClsFilters});
    }
    nd::ArrayT<float> hw({kClsFilters, class_count});
    double bound = std::sqrt(1.0 / static_cast<double>(kClsFilters));
    for (auto& v : hw.data) v = static_cast<float>(rng.uniform(-bound, bound));
    p["head.w"] = std::move(hw);
    p["head.b"] = nd::ArrayT<float>::zeros({class_count});
    return p;
}

// logits for one batch; `bound` holds tape ids of the parameters
inline int classifier_logits(nd::Tape<float>& t, const std::map<std::string, int>& bound, int x) {
    int h = x;
    for (int i = 1; i <= kClsLayers; ++i) {
        h = nd::conv2d(t, h, bound.at("cls" + std::to_string(i) + ".w"),
                       bound.at("cls" + std::to_string(i) + ".b"), 2);
        h = nd::relu(t, h);
    }
    h = nd::spatial_mean(t, h);
    return nd::linear(t, h, bound.at("head.w"), bound.at("head.b"));
}

inline nd::ArrayT<float> gather_batch(const data::LabeledImageSet& set,
                                      const std::vector<int64_t>& idx, int64_t from, int64_t to) {
    int64_t ppi = set.pixels_per_image();
    nd::ArrayT<float> out({to - from, 1, set.height(), set.width()});
    for (int64_t i = from; i < to; ++i)
        std::copy(set.image(idx[static_cast<size_t>(i)]),
                  set.image(idx[static_cast<size_t>(i)]) + ppi, out.ptr() + (i - from) * ppi);
    return out;
}

}  // namespace detail

// Argmax labels for a whole set; ties break toward the lower class index.
inline std::vector<int> predict_raw(const Classifier& cls, const data::LabeledImageSet& set) {
    if (set.count() == 0) return {};
    std::vector<int> out;
    out.reserve(static_cast<size_t>(set.count()));
    std::vector<int64_t> order(static_cast<size_t>(set.count()));
    for (int64_t i = 0; i < set.count(); ++i) order[static_cast<size_t>(i)] = i;
    int64_t bs = 256;
    int c = cls.cfg.class_count;
    for (int64_t start = 0; start < set.count(); start += bs) {
        int64_t end = std::min(start + bs, set.count());
        nd::Tape<float> t;
        std::map<std::string, int> bound;
        for (const auto& [name, arr] : cls.params) bound[name] = nd::constant(t, arr);
        int x = nd::constant(t, detail::gather_batch(set, order, start, end));
        const auto& logits = t.val(detail::classifier_logits(t, bound, x));
        for (int64_t i = 0; i < end - start; ++i) {
            int best = 0;
            for (int j = 1; j < c; ++j)
                if (logits[i * c + j] > logits[i * c + best]) best = j;
            out.push_back(best);
        }
    }
    return out;
}

// Trains on the manual subset with an internal stratified 80/20 split and
// enforces the held-out accuracy gate before any downstream use.
inline Classifier train_classifier(const data::LabeledImageSet& set, const ClassifierConfig& cfg) {
    cfg.validate();
    set.validate();
    for (auto p : set.provenance)
        if (p != data::Provenance::Manual)
            throw PseudoError("train_classifier: all labels must be manual");
    std::vector<bool> seen(static_cast<size_t>(cfg.class_count), false);
    for (int l : set.labels) {
        if (l < 0 || l >= cfg.class_count)
            throw PseudoError("train_classifier: label out of range");
        seen[static_cast<size_t>(l)] = true;
    }
    for (int c = 0; c < cfg.class_count; ++c)
        if (!seen[static_cast<size_t>(c)])
            throw PseudoError("train_classifier: class " + std::to_string(c) +
                              " missing from training set");

    Rng rng(cfg.seed);
    auto [train, val] = data::split(set, {0.8, rng.next_u64()});

    Classifier cls;
    cls.cfg = cfg;
    cls.params = detail::init_classifier_params(cfg.class_count, rng);
    nd::AdamState<float> opt;
    opt.lr = static_cast<float>(cfg.lr);

    std::vector<int64_t> order(static_cast<size_t>(train.count()));
    for (int64_t i = 0; i < train.count(); ++i) order[static_cast<size_t>(i)] = i;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        for (int64_t start = 0; start < train.count(); start += cfg.batch_size) {
            int64_t end = std::min(start + cfg.batch_size, train.count());
            nd::Tape<float> t;
            std::map<std::string, int> bound;
            for (const auto& [name, arr] : cls.params) bound[name] = nd::leaf(t, arr, true);
            int x = nd::constant(t, detail::gather_batch(train, order, start, end));
            std::vector<int> yb;
            for (int64_t i = start; i < end; ++i)
                yb.push_back(train.labels[static_cast<size_t>(order[static_cast<size_t>(i)])]);
            int loss = nd::log_softmax_nll(t, detail::classifier_logits(t, bound, x), yb);
            t.backward(loss);
            nd::ParamMap<float> grads;
            for (auto& [name, id] : bound) grads.emplace(name, t.grad(id));
            adam_update(cls.params, grads, opt);
        }
    }

    auto preds = predict_raw(cls, val);
    int64_t hits = 0;
    for (int64_t i = 0; i < val.count(); ++i)
        if (preds[static_cast<size_t>(i)] == val.labels[static_cast<size_t>(i)]) ++hits;
    cls.val_accuracy = static_cast<double>(hits) / static_cast<double>(val.count());
    if (cls.val_accuracy < cfg.accuracy_gate) throw GateError(cls.val_accuracy, cfg.accuracy_gate);
    cls.gate_passed = true;
    return cls;
}

// Pseudo-labels an unlabeled set. Refuses classifiers that missed the gate.
inline data::LabeledImageSet predict_labels(const Classifier& cls,
                                            const data::LabeledImageSet& set) {
    if (!cls.gate_passed) throw GateError(cls.val_accuracy, cls.cfg.accuracy_gate);
    if (set.height() * set.width() == 0 || set.images.shape[1] != 1)
        throw nd::ShapeError("predict_labels: expected [N,1,H,W] images");
    data::LabeledImageSet out = set;
    out.labels = predict_raw(cls, set);
    out.class_count = std::max(out.class_count, cls.cfg.class_count);
    std::fill(out.provenance.begin(), out.provenance.end(), data::Provenance::Pseudo);
    return out;
}

}  // namespace lsvis::pseudo
