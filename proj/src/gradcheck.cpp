#include "aau/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace aau {

namespace {

double rel_err(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

double eval_scalar(const Objective& fn, const std::vector<TensorF>& inputs) {
    Tape tape;
    std::vector<Value> leaves;
    leaves.reserve(inputs.size());
    for (const auto& in : inputs) leaves.push_back(tape.input(in));
    Value out = fn(tape, leaves);
    require(tape.val(out).numel() == 1, "non-scalar-objective",
            "objective returned shape " + shape_str(tape.shape(out)));
    return tape.val(out)[0];
}

} // namespace

double grad_check(const Objective& fn, const std::vector<TensorF>& inputs, double epsilon,
                  int max_coords_per_input, std::uint64_t seed) {
    require(epsilon >= 1e-7 && epsilon <= 1e-4, "bad-epsilon",
            "grad_check epsilon must lie in [1e-7, 1e-4]");

    // Analytic pass: inputs become temporary parameters so the tape
    // accumulates their gradients.
    std::vector<Parameter> holders;
    holders.reserve(inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i)
        holders.emplace_back("grad_check_in" + std::to_string(i), inputs[i]);
    {
        Tape tape;
        std::vector<Value> leaves;
        for (auto& h : holders) leaves.push_back(tape.leaf(h));
        Value out = fn(tape, leaves);
        tape.backward(out);
    }

    Rng rng(seed);
    double worst = 0.0;
    std::vector<TensorF> work = inputs;
    for (std::size_t i = 0; i < work.size(); ++i) {
        const std::int64_t n = work[i].numel();
        std::vector<std::int64_t> coords;
        if (max_coords_per_input < 0 || max_coords_per_input >= n) {
            coords.resize(static_cast<std::size_t>(n));
            for (std::int64_t j = 0; j < n; ++j) coords[static_cast<std::size_t>(j)] = j;
        } else {
            for (int j = 0; j < max_coords_per_input; ++j) coords.push_back(rng.uniform_int(0, n - 1));
        }
        for (std::int64_t j : coords) {
            const double orig = work[i][j];
            work[i][j] = orig + epsilon;
            const double fp = eval_scalar(fn, work);
            work[i][j] = orig - epsilon;
            const double fm = eval_scalar(fn, work);
            work[i][j] = orig;
            const double numeric = (fp - fm) / (2.0 * epsilon);
            worst = std::max(worst, rel_err(holders[i].grad[j], numeric));
        }
    }
    return worst;
}

double grad_check_params(const std::function<Value(Tape&)>& fn, const std::vector<Parameter*>& params,
                         double epsilon, int n_samples, std::uint64_t seed) {
    require(epsilon >= 1e-7 && epsilon <= 1e-4, "bad-epsilon",
            "grad_check epsilon must lie in [1e-7, 1e-4]");
    for (Parameter* p : params) p->reset_grad();
    {
        Tape tape;
        Value out = fn(tape);
        require(tape.val(out).numel() == 1, "non-scalar-objective",
                "objective returned shape " + shape_str(tape.shape(out)));
        tape.backward(out);
    }

    auto eval = [&fn]() {
        Tape tape;
        Value out = fn(tape);
        return tape.val(out)[0];
    };

    std::int64_t total = 0;
    for (Parameter* p : params) total += p->value.numel();
    require(total > 0, "bad-value", "grad_check_params with no coordinates");

    Rng rng(seed);
    double worst = 0.0;
    for (int s = 0; s < n_samples; ++s) {
        std::int64_t flat = rng.uniform_int(0, total - 1);
        Parameter* target = nullptr;
        for (Parameter* p : params) {
            if (flat < p->value.numel()) {
                target = p;
                break;
            }
            flat -= p->value.numel();
        }
        const double orig = target->value[flat];
        target->value[flat] = orig + epsilon;
        const double fp = eval();
        target->value[flat] = orig - epsilon;
        const double fm = eval();
        target->value[flat] = orig;
        const double numeric = (fp - fm) / (2.0 * epsilon);
        worst = std::max(worst, rel_err(target->grad[flat], numeric));
    }
    return worst;
}

} // namespace aau
