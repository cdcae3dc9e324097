#include "fdwm/metrics.hpp"

#include <cmath>
#include <stdexcept>

namespace fdwm {

namespace {
void check_extents(const RgbdFrame& a, const RgbdFrame& b) {
    if (a.h != b.h || a.w != b.w) throw std::invalid_argument("metrics: extent mismatch");
}

double mse_to_psnr(double mse, double range) {
    if (mse <= 0.0) return 99.0;
    return std::min(99.0, 10.0 * std::log10(range * range / mse));
}
}  // namespace

double psnr(const RgbdFrame& pred, const RgbdFrame& gt, double data_range) {
    check_extents(pred, gt);
    if (!(data_range > 0.0)) throw std::invalid_argument("psnr: data_range must be positive");
    double s = 0.0;
    for (size_t i = 0; i < gt.rgb.size(); ++i) {
        double d = static_cast<double>(pred.rgb[i]) - static_cast<double>(gt.rgb[i]);
        s += d * d;
    }
    return mse_to_psnr(s / static_cast<double>(gt.rgb.size()), data_range);
}

double psnr_masked(const RgbdFrame& pred, const RgbdFrame& gt, const std::vector<uint8_t>& mask,
                   double data_range) {
    check_extents(pred, gt);
    if (mask.size() != static_cast<size_t>(gt.h) * gt.w)
        throw std::invalid_argument("psnr_masked: mask extent mismatch");
    double s = 0.0;
    int64_t n = 0;
    for (size_t p = 0; p < mask.size(); ++p) {
        if (!mask[p]) continue;
        for (int c = 0; c < 3; ++c) {
            double d = static_cast<double>(pred.rgb[p * 3 + c]) -
                       static_cast<double>(gt.rgb[p * 3 + c]);
            s += d * d;
        }
        n += 3;
    }
    if (n == 0) return 99.0;  // nothing moved
    return mse_to_psnr(s / static_cast<double>(n), data_range);
}

double ssim(const RgbdFrame& pred, const RgbdFrame& gt, double data_range) {
    check_extents(pred, gt);
    const int win = 8;
    if (pred.h < win || pred.w < win)
        throw std::invalid_argument("ssim: image smaller than the 8x8 window");
    const double c1 = (0.01 * data_range) * (0.01 * data_range);
    const double c2 = (0.03 * data_range) * (0.03 * data_range);

    const int h = pred.h, w = pred.w;
    std::vector<double> ga(static_cast<size_t>(h) * w), gb(static_cast<size_t>(h) * w);
    for (size_t i = 0; i < ga.size(); ++i) {
        ga[i] = (pred.rgb[i * 3] + pred.rgb[i * 3 + 1] + pred.rgb[i * 3 + 2]) / 3.0;
        gb[i] = (gt.rgb[i * 3] + gt.rgb[i * 3 + 1] + gt.rgb[i * 3 + 2]) / 3.0;
    }

    double total = 0.0;
    int64_t count = 0;
    const double inv_n = 1.0 / (win * win);
    for (int y = 0; y + win <= h; ++y)
        for (int x = 0; x + win <= w; ++x) {
            double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
            for (int dy = 0; dy < win; ++dy)
                for (int dx = 0; dx < win; ++dx) {
                    double a = ga[static_cast<size_t>(y + dy) * w + (x + dx)];
                    double b = gb[static_cast<size_t>(y + dy) * w + (x + dx)];
                    sa += a;
                    sb += b;
                    saa += a * a;
                    sbb += b * b;
                    sab += a * b;
                }
            double mu_a = sa * inv_n, mu_b = sb * inv_n;
            double var_a = saa * inv_n - mu_a * mu_a;
            double var_b = sbb * inv_n - mu_b * mu_b;
            double cov = sab * inv_n - mu_a * mu_b;
            double v = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
                       ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            total += v;
            ++count;
        }
    return total / static_cast<double>(count);
}

double flow_epe(const SceneFlowField& f_hat, const SceneFlowField& f) {
    if (f_hat.h != f.h || f_hat.w != f.w) throw std::invalid_argument("flow_epe: extent mismatch");
    double s = 0.0;
    size_t n = static_cast<size_t>(f.h) * f.w;
    for (size_t i = 0; i < n; ++i) {
        double dx = static_cast<double>(f_hat.flow[i * 3]) - f.flow[i * 3];
        double dy = static_cast<double>(f_hat.flow[i * 3 + 1]) - f.flow[i * 3 + 1];
        double dz = static_cast<double>(f_hat.flow[i * 3 + 2]) - f.flow[i * 3 + 2];
        s += std::sqrt(dx * dx + dy * dy + dz * dz);
    }
    return s / static_cast<double>(n);
}

double flow_mse(const SceneFlowField& f_hat, const SceneFlowField& f) {
    if (f_hat.h != f.h || f_hat.w != f.w) throw std::invalid_argument("flow_mse: extent mismatch");
    double s = 0.0;
    for (size_t i = 0; i < f.flow.size(); ++i) {
        double d = static_cast<double>(f_hat.flow[i]) - f.flow[i];
        s += d * d;
    }
    return s / static_cast<double>(f.flow.size());
}

double pearson_r(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw std::invalid_argument("pearson_r: length mismatch");
    const size_t n = x.size();
    if (n < 3) throw std::invalid_argument("pearson_r: need at least 3 samples");
    double mx = 0, my = 0;
    for (size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxx = 0, syy = 0, sxy = 0;
    for (size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (sxx <= 0.0 || syy <= 0.0)
        throw std::invalid_argument("pearson_r: constant input is degenerate");
    return sxy / std::sqrt(sxx * syy);
}

std::vector<uint8_t> moved_mask(const SceneFlowField& gt_flow) {
    std::vector<uint8_t> m(static_cast<size_t>(gt_flow.h) * gt_flow.w, 0);
    for (size_t i = 0; i < m.size(); ++i) {
        if (gt_flow.flow[i * 3] != 0.0f || gt_flow.flow[i * 3 + 1] != 0.0f ||
            gt_flow.flow[i * 3 + 2] != 0.0f)
            m[i] = 1;
    }
    return m;
}

}  // namespace fdwm
