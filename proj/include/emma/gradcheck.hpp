#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "emma/tensor.hpp"

namespace emma {

// Central-difference verification of reverse-mode gradients, run in double.
//
// `forward` must rebuild its graph from the current contents of `inputs` on
// every call; it receives a tape when the analytic pass needs recording and
// nullptr during the numeric probes. The objective is sum(weights * output),
// with fixed random weights so every output element influences the scalar.
struct GradCheckReport {
    std::string name;
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    std::int64_t checked = 0;
};

inline GradCheckReport check_gradients(
    const std::string& name, std::vector<TensorD*> inputs,
    const std::function<TensorD(TapeD*)>& forward, std::uint64_t weight_seed = 7,
    double step = 1e-5) {
    for (TensorD* in : inputs) in->set_requires_grad(true);

    // Analytic pass.
    TapeD tape;
    TensorD out = forward(&tape);
    SplitMix64 wrng(weight_seed);
    TensorD w(out.shape());
    for (auto& v : w.data()) v = wrng.next_normal();
    TensorD weighted = mul(&tape, out, w);
    TensorD loss = sum_all(&tape, weighted);
    for (TensorD* in : inputs) in->clear_grad();
    tape.backward(loss);

    auto objective = [&]() {
        TensorD o = forward(nullptr);
        double s = 0.0;
        for (std::size_t i = 0; i < o.data().size(); ++i) s += o.data()[i] * w.data()[i];
        return s;
    };

    GradCheckReport rep;
    rep.name = name;
    for (TensorD* in : inputs) {
        const bool have = in->has_grad();
        for (std::size_t i = 0; i < in->data().size(); ++i) {
            const double keep = in->data()[i];
            in->data()[i] = keep + step;
            const double up = objective();
            in->data()[i] = keep - step;
            const double down = objective();
            in->data()[i] = keep;
            const double numeric = (up - down) / (2.0 * step);
            const double analytic = have ? in->grad()[i] : 0.0;
            const double abs_err = std::abs(analytic - numeric);
            const double rel = abs_err / std::max({1.0, std::abs(analytic), std::abs(numeric)});
            rep.max_rel_err = std::max(rep.max_rel_err, rel);
            rep.max_abs_err = std::max(rep.max_abs_err, abs_err);
            ++rep.checked;
        }
    }
    return rep;
}

}  // namespace emma
