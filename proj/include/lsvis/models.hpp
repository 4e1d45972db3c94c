#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "lsvis/adam.hpp"
#include "lsvis/autodiff.hpp"
#include "lsvis/rng.hpp"

namespace lsvis::models {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class ModelKind { AE, VAE };

struct ModelConfig {
    ModelKind kind = ModelKind::AE;
    int latent_dim = 256;
    double dropout_p = 0.0;
    double beta = 1.0;  // ignored for AE; beta=1 reduces the beta-VAE to a VAE
    int64_t input_h = 0;
    int64_t input_w = 0;

    void validate() const {
        bool latent_ok = false;
        for (int v : {32, 64, 128, 256}) latent_ok |= (latent_dim == v);
        if (!latent_ok) throw ConfigError("latent_dim must be one of {32,64,128,256}");
        bool drop_ok = false;
        for (double v : {0.0, 0.2, 0.3, 0.4}) drop_ok |= std::abs(dropout_p - v) < 1e-9;
        if (!drop_ok) throw ConfigError("dropout_p must be one of {0,0.2,0.3,0.4}");
        if (beta <= 0.0) throw ConfigError("beta must be positive");
        int64_t h = input_h, w = input_w;
        for (int i = 0; i < 4; ++i) {
            h = (h + 1) / 2;
            w = (w + 1) / 2;
        }
        if (input_h <= 0 || input_w <= 0 || h <= 0 || w <= 0)
            throw ConfigError("input size does not admit four spatial halvings");
    }
};

constexpr int kConvLayers = 4;
constexpr int64_t kFilters = 64;

// Encoder spatial sizes per layer plus the output padding each decoder layer
// needs to invert the shape map exactly. Computed at build time from the
// recorded encoder shapes, so any input resolution works.
struct Geometry {
    std::vector<int64_t> h, w;       // length kConvLayers+1, h[0] = input
    std::vector<int64_t> out_pad_h, out_pad_w;  // per decoder layer (deepest first)
    int64_t flat = 0;
};

inline Geometry make_geometry(int64_t input_h, int64_t input_w) {
    Geometry g;
    g.h.push_back(input_h);
    g.w.push_back(input_w);
    for (int i = 0; i < kConvLayers; ++i) {
        g.h.push_back((g.h.back() + 1) / 2);
        g.w.push_back((g.w.back() + 1) / 2);
    }
    for (int i = kConvLayers; i >= 1; --i) {
        int64_t oph = g.h[static_cast<size_t>(i - 1)] - ((g.h[static_cast<size_t>(i)] - 1) * 2 + 1);
        int64_t opw = g.w[static_cast<size_t>(i - 1)] - ((g.w[static_cast<size_t>(i)] - 1) * 2 + 1);
        if (oph < 0 || oph > 1 || opw < 0 || opw > 1)
            throw ConfigError("no output_padding inverts the encoder at layer " +
                              std::to_string(i));
        g.out_pad_h.push_back(oph);
        g.out_pad_w.push_back(opw);
    }
    g.flat = kFilters * g.h.back() * g.w.back();
    return g;
}

template <typename T>
struct ModelT {
    ModelConfig cfg;
    Geometry geom;
    nd::ParamMap<T> params;
};

using Model = ModelT<float>;

template <typename T>
nd::ArrayT<T> uniform_init(nd::Shape shape, int64_t fan_in, Rng& rng) {
    nd::ArrayT<T> a(std::move(shape));
    double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    for (auto& v : a.data) v = static_cast<T>(rng.uniform(-bound, bound));
    return a;
}

template <typename T>
ModelT<T> build_model(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    ModelT<T> m;
    m.cfg = cfg;
    m.geom = make_geometry(cfg.input_h, cfg.input_w);
    auto& p = m.params;
    for (int i = 1; i <= kConvLayers; ++i) {
        int64_t ci = i == 1 ? 1 : kFilters;
        p["enc" + std::to_string(i) + ".w"] =
            uniform_init<T>({kFilters, ci, 3, 3}, ci * 9, rng);
        p["enc" + std::to_string(i) + ".b"] = nd::ArrayT<T>::zeros({kFilters});
    }
    int64_t latent = cfg.latent_dim;
    if (cfg.kind == ModelKind::AE) {
        p["fc_z.w"] = uniform_init<T>({m.geom.flat, latent}, m.geom.flat, rng);
        p["fc_z.b"] = nd::ArrayT<T>::zeros({latent});
    } else {
        p["fc_mu.w"] = uniform_init<T>({m.geom.flat, latent}, m.geom.flat, rng);
        p["fc_mu.b"] = nd::ArrayT<T>::zeros({latent});
        p["fc_logvar.w"] = uniform_init<T>({m.geom.flat, latent}, m.geom.flat, rng);
        p["fc_logvar.b"] = nd::ArrayT<T>::zeros({latent});
    }
    p["dec_fc.w"] = uniform_init<T>({latent, m.geom.flat}, latent, rng);
    p["dec_fc.b"] = nd::ArrayT<T>::zeros({m.geom.flat});
    for (int i = 1; i <= kConvLayers; ++i) {
        int64_t co = i == kConvLayers ? 1 : kFilters;
        p["dec" + std::to_string(i) + ".w"] =
            uniform_init<T>({kFilters, co, 3, 3}, kFilters * 9, rng);
        p["dec" + std::to_string(i) + ".b"] = nd::ArrayT<T>::zeros({co});
    }
    return m;
}

// Tape ids of every parameter, so one graph can both run and differentiate.
using BoundParams = std::map<std::string, int>;

template <typename T>
BoundParams bind_params(nd::Tape<T>& t, const ModelT<T>& m, bool with_grad) {
    BoundParams b;
    for (const auto& [name, arr] : m.params) b[name] = nd::leaf(t, arr, with_grad);
    return b;
}

template <typename T>
struct EncodeOut {
    int z = -1;        // AE latent
    int mu = -1;       // VAE heads
    int log_var = -1;
};

template <typename T>
EncodeOut<T> encode(nd::Tape<T>& t, const ModelT<T>& m, const BoundParams& b, int x, bool train,
                    Rng& rng) {
    const auto shape = t.val(x).shape;  // by value: pushes reallocate the tape
    if (shape.size() != 4 || shape[1] != 1 || shape[2] != m.cfg.input_h ||
        shape[3] != m.cfg.input_w)
        throw nd::ShapeError("encode: batch shape " + nd::shape_str(shape) +
                             " does not match configured input");
    int h = x;
    for (int i = 1; i <= kConvLayers; ++i) {
        h = nd::conv2d(t, h, b.at("enc" + std::to_string(i) + ".w"),
                       b.at("enc" + std::to_string(i) + ".b"), 2);
        h = nd::relu(t, h);
        if (train && m.cfg.dropout_p > 0.0) h = nd::dropout(t, h, m.cfg.dropout_p, rng);
    }
    h = nd::reshape(t, h, {shape[0], m.geom.flat});
    EncodeOut<T> out;
    if (m.cfg.kind == ModelKind::AE) {
        out.z = nd::linear(t, h, b.at("fc_z.w"), b.at("fc_z.b"));
    } else {
        out.mu = nd::linear(t, h, b.at("fc_mu.w"), b.at("fc_mu.b"));
        out.log_var = nd::linear(t, h, b.at("fc_logvar.w"), b.at("fc_logvar.b"));
    }
    return out;
}

// z = mu + exp(log_var / 2) * eps with eps drawn from the run's seeded stream
template <typename T>
int reparameterize(nd::Tape<T>& t, int mu, int log_var, Rng& rng) {
    nd::ArrayT<T> eps(t.val(mu).shape);
    for (auto& v : eps.data) v = static_cast<T>(rng.normal());
    int sigma = nd::exp_(t, nd::mul_scalar(t, log_var, T(0.5)));
    return nd::add(t, mu, nd::mul(t, sigma, nd::constant(t, std::move(eps))));
}

template <typename T>
int decode(nd::Tape<T>& t, const ModelT<T>& m, const BoundParams& b, int z) {
    const auto shape = t.val(z).shape;
    if (shape.size() != 2 || shape[1] != m.cfg.latent_dim)
        throw nd::ShapeError("decode: latent width does not match latent_dim");
    int64_t batch = shape[0];
    int h = nd::relu(t, nd::linear(t, z, b.at("dec_fc.w"), b.at("dec_fc.b")));
    h = nd::reshape(t, h, {batch, kFilters, m.geom.h.back(), m.geom.w.back()});
    for (int i = 1; i <= kConvLayers; ++i) {
        h = nd::conv2d_transpose(t, h, b.at("dec" + std::to_string(i) + ".w"),
                                 b.at("dec" + std::to_string(i) + ".b"), 2,
                                 m.geom.out_pad_h[static_cast<size_t>(i - 1)],
                                 m.geom.out_pad_w[static_cast<size_t>(i - 1)]);
        if (i < kConvLayers) h = nd::relu(t, h);  // final layer stays linear
    }
    return h;
}

// Convenience eval-mode latent of a whole set, run in mini-batches.
template <typename T>
nd::ArrayT<T> encode_latents(const ModelT<T>& m, const nd::ArrayT<T>& images, int64_t batch_size,
                             Rng& rng) {
    int64_t n = images.shape[0];
    int64_t ppi = images.shape[1] * images.shape[2] * images.shape[3];
    nd::ArrayT<T> out({n, m.cfg.latent_dim});
    for (int64_t start = 0; start < n; start += batch_size) {
        int64_t bn = std::min(batch_size, n - start);
        nd::Tape<T> t;
        nd::ArrayT<T> chunk({bn, images.shape[1], images.shape[2], images.shape[3]});
        std::copy(images.ptr() + start * ppi, images.ptr() + (start + bn) * ppi, chunk.ptr());
        BoundParams b = bind_params(t, m, false);
        int x = nd::constant(t, std::move(chunk));
        EncodeOut<T> enc = encode(t, m, b, x, false, rng);
        int z = m.cfg.kind == ModelKind::AE ? enc.z : enc.mu;  // eval uses the mean
        std::copy(t.val(z).data.begin(), t.val(z).data.end(),
                  out.data.begin() + static_cast<size_t>(start * m.cfg.latent_dim));
    }
    return out;
}

}  // namespace lsvis::models
