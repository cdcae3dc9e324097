#include "fdwm/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "fdwm/rng.hpp"

namespace fdwm {

namespace {
double eval_scalar(const TapeFn& fn, const Tensor<double>& point) {
    Tape<double> g;
    Tensor<double> p = point;
    p.requires_grad = false;
    auto x = g.leaf(std::move(p));
    auto loss = fn(g, x);
    if (g.value(loss).numel() != 1) throw std::invalid_argument("grad_check: loss must be scalar");
    double v = g.value(loss).data[0];
    if (!std::isfinite(v)) throw std::runtime_error("grad_check: non-finite function value");
    return v;
}
}  // namespace

double grad_check(const TapeFn& fn, const Tensor<double>& point, double eps, int max_coords,
                  uint64_t seed) {
    if (!(eps > 0.0 && eps <= 1e-2)) throw std::invalid_argument("grad_check: eps out of (0, 1e-2]");

    Tape<double> g;
    Tensor<double> p = point;
    p.requires_grad = true;
    auto x = g.leaf(std::move(p));
    auto loss = fn(g, x);
    if (g.value(loss).numel() != 1) throw std::invalid_argument("grad_check: loss must be scalar");
    if (!std::isfinite(g.value(loss).data[0]))
        throw std::runtime_error("grad_check: non-finite function value");
    g.backward(loss);
    Tensor<double> analytic = g.grad(x);

    std::vector<int64_t> coords(static_cast<size_t>(point.numel()));
    std::iota(coords.begin(), coords.end(), 0);
    if (max_coords >= 0 && max_coords < static_cast<int>(coords.size())) {
        Rng rng(mix_seed(seed, 0x6772616463686bULL));
        for (size_t i = 0; i < static_cast<size_t>(max_coords); ++i) {
            size_t j = i + static_cast<size_t>(rng.uniform_int(
                               0, static_cast<int>(coords.size() - 1 - i)));
            std::swap(coords[i], coords[j]);
        }
        coords.resize(static_cast<size_t>(max_coords));
    }

    double worst = 0.0;
    Tensor<double> probe = point;
    for (int64_t c : coords) {
        double saved = probe.data[static_cast<size_t>(c)];
        probe.data[static_cast<size_t>(c)] = saved + eps;
        double fp = eval_scalar(fn, probe);
        probe.data[static_cast<size_t>(c)] = saved - eps;
        double fm = eval_scalar(fn, probe);
        probe.data[static_cast<size_t>(c)] = saved;
        double numeric = (fp - fm) / (2.0 * eps);
        double a = analytic.data[static_cast<size_t>(c)];
        double rel = std::abs(a - numeric) / std::max(1.0, std::abs(a));
        worst = std::max(worst, rel);
    }
    return worst;
}

}  // namespace fdwm
