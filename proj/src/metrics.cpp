#include "xilab/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "xilab/rng.hpp"

namespace xilab::metrics {

void WrConfig::validate() const {
    if (!(alpha > 0.0 && alpha < 1.0))
        throw ConfigError("WrConfig: alpha must lie strictly inside (0,1), got " +
                          std::to_string(alpha));
}

std::vector<double> norm_plus(std::span<const double> map) {
    std::vector<double> out(map.size(), 0.0);
    double mx = 0.0;
    for (double v : map) mx = std::max(mx, v);
    if (mx <= 0.0) return out; // no positive value -> all zeros
    for (std::size_t i = 0; i < map.size(); ++i)
        out[i] = map[i] > 0.0 ? map[i] / mx : 0.0;
    return out;
}

double wr_score(std::span<const double> map, std::span<const std::uint8_t> mask,
                const WrConfig& cfg) {
    cfg.validate();
    if (map.size() != mask.size())
        throw ShapeError("wr_score: map has " + std::to_string(map.size()) + " values but mask " +
                         std::to_string(mask.size()));
    std::int64_t mask_sum = 0;
    for (std::uint8_t m : mask) mask_sum += m;
    if (mask_sum == 0)
        throw ConfigError("wr_score: mask sums to zero, the score is undefined");

    std::vector<double> normed = norm_plus(map);
    std::int64_t hits = 0;
    for (std::size_t i = 0; i < normed.size(); ++i)
        if (mask[i] && normed[i] > cfg.alpha) ++hits;
    return 100.0 * static_cast<double>(hits) / static_cast<double>(mask_sum);
}

double wr_score(const explainers::Explanation& e, std::span<const std::uint8_t> mask,
                const WrConfig& cfg) {
    return wr_score(std::span<const double>(e.map), mask, cfg);
}

WrTable wr_table(const model::CnnModel& m, const datasets::Dataset& test,
                 std::span<const explainers::ExplainerKind> kinds, const WrConfig& cfg,
                 const WrTableOptions& opts) {
    cfg.validate();
    if (test.samples.empty()) throw ConfigError("wr_table: empty test set");
    if (opts.samples < 1) throw ConfigError("wr_table: samples must be >= 1");

    const std::size_t n_eval = std::min<std::size_t>(test.samples.size(),
                                                     static_cast<std::size_t>(opts.samples));
    const std::size_t n_lime = std::min<std::size_t>(n_eval, static_cast<std::size_t>(opts.lime_samples));
    std::vector<std::size_t> subset =
        rng::sample_indices(test.samples.size(), n_eval, opts.subset_seed);

    WrTable table;
    for (explainers::ExplainerKind kind : kinds) {
        const bool is_lime = kind == explainers::ExplainerKind::Lime;
        const std::size_t count = is_lime ? n_lime : n_eval;
        double sum = 0.0;
        for (std::size_t i = 0; i < count; ++i) {
            const auto& sample = test.samples[subset[i]];
            explainers::Explanation e;
            switch (kind) {
                case explainers::ExplainerKind::InputGrad:
                    e = explainers::input_gradients(m, sample.image);
                    break;
                case explainers::ExplainerKind::IntGrad:
                    e = explainers::integrated_gradients(m, sample.image);
                    break;
                case explainers::ExplainerKind::GradCam:
                    e = explainers::grad_cam(m, sample.image);
                    break;
                case explainers::ExplainerKind::Lime: {
                    explainers::LimeOptions lo = opts.lime;
                    // per-sample stream tied to the evaluated row, order-free
                    lo.seed = opts.lime.seed ^ (0x9E3779B97F4A7C15ull * (subset[i] + 1));
                    e = explainers::lime(m, sample.image, lo);
                    break;
                }
            }
            sum += wr_score(e, sample.confounder_mask, cfg);
        }
        table.explainers.push_back(kind);
        table.mean_wr.push_back(sum / static_cast<double>(count));
        table.sample_counts.push_back(static_cast<int>(count));
    }
    return table;
}

} // namespace xilab::metrics
