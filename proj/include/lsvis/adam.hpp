#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>

#include "lsvis/array.hpp"

namespace lsvis::nd {

template <typename T>
using ParamMap = std::map<std::string, ArrayT<T>>;

struct OptimError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bias-corrected Adam (Kingma & Ba). Moment accumulators are keyed by
// parameter name and allocated lazily on the first update.
template <typename T>
struct AdamState {
    int64_t step = 0;
    T lr = T(5e-4);
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);
    ParamMap<T> m, v;
};

template <typename T>
void adam_update(ParamMap<T>& params, const ParamMap<T>& grads, AdamState<T>& st) {
    st.step += 1;
    T bc1 = T(1) - std::pow(st.beta1, static_cast<T>(st.step));
    T bc2 = T(1) - std::pow(st.beta2, static_cast<T>(st.step));
    for (auto& [name, p] : params) {
        auto git = grads.find(name);
        if (git == grads.end()) continue;
        const ArrayT<T>& g = git->second;
        if (g.shape != p.shape)
            throw OptimError("adam: gradient shape mismatch for parameter '" + name + "'");
        if (!g.all_finite())
            throw OptimError("adam: non-finite gradient for parameter '" + name + "'");
        ArrayT<T>& m = st.m.try_emplace(name, ArrayT<T>::zeros(p.shape)).first->second;
        ArrayT<T>& v = st.v.try_emplace(name, ArrayT<T>::zeros(p.shape)).first->second;
        for (int64_t i = 0; i < p.size(); ++i) {
            m[i] = st.beta1 * m[i] + (T(1) - st.beta1) * g[i];
            v[i] = st.beta2 * v[i] + (T(1) - st.beta2) * g[i] * g[i];
            T mhat = m[i] / bc1;
            T vhat = v[i] / bc2;
            p[i] -= st.lr * mhat / (std::sqrt(vhat) + st.eps);
        }
    }
}

}  // namespace lsvis::nd
