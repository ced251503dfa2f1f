#include "xilab/explainers.hpp"

#include <lapacke.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "xilab/ops.hpp"
#include "xilab/rng.hpp"

namespace xilab::explainers {

using namespace autodiff;

namespace {

constexpr int kPix = datasets::kPixels;

Tensor single_image_tensor(std::span<const float> image) {
    if (static_cast<int>(image.size()) != kPix)
        throw ShapeError("explainer: expected a 784-pixel image, got " +
                         std::to_string(image.size()) + " values");
    std::vector<double> data(image.begin(), image.end());
    return Tensor::from_data({1, 1, datasets::kRows, datasets::kCols}, std::move(data));
}

std::vector<double> softmax_row(std::span<const double> logits, int offset, int classes) {
    double mx = logits[static_cast<std::size_t>(offset)];
    for (int j = 1; j < classes; ++j)
        mx = std::max(mx, logits[static_cast<std::size_t>(offset + j)]);
    std::vector<double> p(static_cast<std::size_t>(classes));
    double denom = 0.0;
    for (int j = 0; j < classes; ++j) {
        p[static_cast<std::size_t>(j)] = std::exp(logits[static_cast<std::size_t>(offset + j)] - mx);
        denom += p[static_cast<std::size_t>(j)];
    }
    for (auto& v : p) v /= denom;
    return p;
}

} // namespace

const char* explainer_name(ExplainerKind k) {
    switch (k) {
        case ExplainerKind::InputGrad: return "IG";
        case ExplainerKind::IntGrad: return "IntGrad";
        case ExplainerKind::GradCam: return "GradCAM";
        case ExplainerKind::Lime: return "LIME";
    }
    return "?";
}

ExplainerKind explainer_from_name(std::string_view name) {
    if (name == "IG") return ExplainerKind::InputGrad;
    if (name == "IntGrad") return ExplainerKind::IntGrad;
    if (name == "GradCAM") return ExplainerKind::GradCam;
    if (name == "LIME") return ExplainerKind::Lime;
    throw ConfigError("unknown explainer '" + std::string(name) +
                      "' (expected IG, IntGrad, GradCAM or LIME)");
}

int predicted_class(const model::CnnModel& m, std::span<const float> image) {
    NoGradGuard ng;
    Tensor logits = m.forward(single_image_tensor(image));
    auto lv = logits.values();
    int best = 0;
    for (int j = 1; j < datasets::kClasses; ++j)
        if (lv[static_cast<std::size_t>(j)] > lv[static_cast<std::size_t>(best)]) best = j;
    return best;
}

Tensor input_gradients_graph(const model::CnnModel& m, const Tensor& x_leaf) {
    Tensor summed = sum_all(log_softmax(m.forward(x_leaf)));
    return backward(summed, {x_leaf}, /*retain_higher_order=*/true)[0];
}

Explanation input_gradients(const model::CnnModel& m, std::span<const float> image,
                            InputGradMode mode) {
    Tensor x = Tensor::leaf({1, 1, datasets::kRows, datasets::kCols},
                            std::vector<double>(image.begin(), image.end()));
    Tensor logits = m.forward(x);
    Tensor summed = mode == InputGradMode::SummedLogProb ? sum_all(log_softmax(logits))
                                                         : sum_all(logits);
    Tensor g = backward(summed, {x})[0];
    Explanation e;
    e.map.assign(g.values().begin(), g.values().end());
    e.source = ExplainerKind::InputGrad;
    e.target = -1;
    return e;
}

Explanation integrated_gradients(const model::CnnModel& m, std::span<const float> image,
                                 int steps, int target) {
    if (steps < 1) throw ConfigError("integrated_gradients: steps must be >= 1");
    if (static_cast<int>(image.size()) != kPix)
        throw ShapeError("integrated_gradients: expected a 784-pixel image");
    if (target < 0) target = predicted_class(m, image);

    // one batch holds every midpoint sample; per-row gradients are
    // independent, so a single backward pass yields all of them
    std::vector<double> batch(static_cast<std::size_t>(steps) * kPix);
    for (int j = 0; j < steps; ++j) {
        const double alpha = (j + 0.5) / steps;
        for (int p = 0; p < kPix; ++p)
            batch[static_cast<std::size_t>(j) * kPix + static_cast<std::size_t>(p)] =
                alpha * image[static_cast<std::size_t>(p)];
    }
    Tensor xb = Tensor::leaf({steps, 1, datasets::kRows, datasets::kCols}, std::move(batch));
    Tensor logits = m.forward(xb);
    Tensor picked = gather_labels(logits, std::vector<int>(static_cast<std::size_t>(steps), target));
    Tensor g = backward(sum_all(picked), {xb})[0];

    Explanation e;
    e.map.assign(static_cast<std::size_t>(kPix), 0.0);
    auto gv = g.values();
    for (int p = 0; p < kPix; ++p) {
        double mean = 0.0;
        for (int j = 0; j < steps; ++j)
            mean += gv[static_cast<std::size_t>(j) * kPix + static_cast<std::size_t>(p)];
        mean /= steps;
        e.map[static_cast<std::size_t>(p)] = image[static_cast<std::size_t>(p)] * mean;
    }
    e.source = ExplainerKind::IntGrad;
    e.target = target;
    return e;
}

Tensor grad_cam_graph(const model::CnnModel& m, const Tensor& images,
                      const std::vector<int>& targets) {
    auto acts = m.forward_with_activations(images);
    std::vector<int> tg = targets;
    if (tg.empty()) {
        auto lv = acts.logits.values();
        const int n = images.dim(0);
        tg.resize(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            int best = 0;
            for (int j = 1; j < datasets::kClasses; ++j)
                if (lv[static_cast<std::size_t>(i * datasets::kClasses + j)] >
                    lv[static_cast<std::size_t>(i * datasets::kClasses + best)])
                    best = j;
            tg[static_cast<std::size_t>(i)] = best;
        }
    }
    Tensor picked = gather_labels(acts.logits, tg);
    Tensor ga = backward(sum_all(picked), {acts.conv2_relu}, /*retain_higher_order=*/true)[0];
    const int h = acts.conv2_relu.dim(2), w = acts.conv2_relu.dim(3);
    Tensor weights = scale(sum_hw(ga), 1.0 / (h * w)); // [N,K]
    Tensor cam = relu(sum_channels(mul(acts.conv2_relu, expand_hw(weights, h, w))));
    return upsample_bilinear(cam, datasets::kRows, datasets::kCols);
}

Explanation grad_cam(const model::CnnModel& m, std::span<const float> image, int target) {
    if (target < 0) target = predicted_class(m, image);
    Tensor cam = grad_cam_graph(m, single_image_tensor(image), {target});
    Explanation e;
    e.map.assign(cam.values().begin(), cam.values().end());
    e.source = ExplainerKind::GradCam;
    e.target = target;
    return e;
}

namespace {

// 7x7 grid of 4x4 patches, row-major segment ids
constexpr int kSegGrid = 7;
constexpr int kSegments = kSegGrid * kSegGrid;

int segment_of(int pixel) {
    const int r = pixel / datasets::kCols, c = pixel % datasets::kCols;
    return (r / 4) * kSegGrid + (c / 4);
}

} // namespace

namespace detail {

Explanation lime_core(const ProbFn& prob_fn, std::span<const float> image,
                      const LimeOptions& opts) {
    if (opts.n_samples < kSegments)
        throw ConfigError("lime: n_samples must be at least the segment count (49)");
    if (static_cast<int>(image.size()) != kPix)
        throw ShapeError("lime: expected a 784-pixel image");
    rng::Engine eng(opts.seed);

    std::vector<std::uint8_t> z(static_cast<std::size_t>(opts.n_samples) * kSegments);
    for (auto& b : z) b = rng::uniform01(eng) < 0.5 ? 1 : 0;

    // probabilities for all perturbed images, in chunks
    std::vector<double> prob;
    prob.reserve(static_cast<std::size_t>(opts.n_samples));
    {
        const int chunk = 256;
        for (int start = 0; start < opts.n_samples; start += chunk) {
            const int stop = std::min(opts.n_samples, start + chunk);
            const int n = stop - start;
            std::vector<double> batch(static_cast<std::size_t>(n) * kPix);
            for (int i = 0; i < n; ++i) {
                const std::uint8_t* zi = z.data() + std::size_t(start + i) * kSegments;
                for (int p = 0; p < kPix; ++p)
                    batch[static_cast<std::size_t>(i) * kPix + static_cast<std::size_t>(p)] =
                        zi[segment_of(p)] ? image[static_cast<std::size_t>(p)] : 0.0;
            }
            std::vector<double> chunk_prob = prob_fn(batch, n);
            prob.insert(prob.end(), chunk_prob.begin(), chunk_prob.end());
        }
    }

    // exponential kernel over cosine distance from the all-ones vector
    std::vector<double> weight(static_cast<std::size_t>(opts.n_samples));
    for (int i = 0; i < opts.n_samples; ++i) {
        int on = 0;
        const std::uint8_t* zi = z.data() + std::size_t(i) * kSegments;
        for (int s = 0; s < kSegments; ++s) on += zi[s];
        const double cos_sim =
            on == 0 ? 0.0 : on / (std::sqrt(double(on)) * std::sqrt(double(kSegments)));
        const double dist = 1.0 - cos_sim;
        weight[static_cast<std::size_t>(i)] =
            std::exp(-(dist * dist) / (opts.kernel_width * opts.kernel_width));
    }

    // weighted ridge on [intercept, z]; the intercept is unpenalized
    const int dim = kSegments + 1;
    std::vector<double> ata(static_cast<std::size_t>(dim) * dim, 0.0);
    std::vector<double> atb(static_cast<std::size_t>(dim), 0.0);
    std::vector<double> row(static_cast<std::size_t>(dim));
    for (int i = 0; i < opts.n_samples; ++i) {
        row[0] = 1.0;
        const std::uint8_t* zi = z.data() + std::size_t(i) * kSegments;
        for (int s = 0; s < kSegments; ++s) row[static_cast<std::size_t>(s + 1)] = zi[s];
        const double w = weight[static_cast<std::size_t>(i)];
        for (int a = 0; a < dim; ++a) {
            if (row[static_cast<std::size_t>(a)] == 0.0) continue;
            const double wa = w * row[static_cast<std::size_t>(a)];
            for (int b = a; b < dim; ++b)
                ata[static_cast<std::size_t>(a) * dim + b] += wa * row[static_cast<std::size_t>(b)];
            atb[static_cast<std::size_t>(a)] += wa * prob[static_cast<std::size_t>(i)];
        }
    }
    for (int a = 0; a < dim; ++a)
        for (int b = 0; b < a; ++b)
            ata[static_cast<std::size_t>(a) * dim + b] = ata[static_cast<std::size_t>(b) * dim + a];
    for (int s = 1; s < dim; ++s) ata[static_cast<std::size_t>(s) * dim + s] += opts.ridge;

    // Cholesky solve; singular systems fall back to the least-norm solution
    std::vector<double> beta = atb;
    bool fallback = false;
    {
        std::vector<double> chol = ata;
        if (LAPACKE_dposv(LAPACK_ROW_MAJOR, 'L', dim, 1, chol.data(), dim, beta.data(), 1) != 0) {
            fallback = true;
            std::vector<double> a = ata;
            std::vector<double> b = atb;
            std::vector<double> sv(static_cast<std::size_t>(dim));
            lapack_int rank = 0;
            if (LAPACKE_dgelsd(LAPACK_ROW_MAJOR, dim, dim, 1, a.data(), dim, b.data(), 1, sv.data(),
                               1e-12, &rank) != 0)
                throw RunError("lime: least-norm fallback solver failed");
            beta = b;
        }
    }

    Explanation e;
    e.map.assign(static_cast<std::size_t>(kPix), 0.0);
    for (int p = 0; p < kPix; ++p)
        e.map[static_cast<std::size_t>(p)] = beta[static_cast<std::size_t>(segment_of(p) + 1)];
    e.source = ExplainerKind::Lime;
    e.target = -1;
    e.solver_fallback = fallback;
    return e;
}

} // namespace detail

Explanation lime(const model::CnnModel& m, std::span<const float> image, const LimeOptions& opts) {
    const int target = predicted_class(m, image);
    detail::ProbFn prob_fn = [&m, target](const std::vector<double>& batch, int n) {
        NoGradGuard ng;
        std::vector<double> batch_copy = batch;
        Tensor logits = m.forward(
            Tensor::from_data({n, 1, datasets::kRows, datasets::kCols}, std::move(batch_copy)));
        auto lv = logits.values();
        std::vector<double> out(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i)
            out[static_cast<std::size_t>(i)] = softmax_row(
                lv, i * datasets::kClasses, datasets::kClasses)[static_cast<std::size_t>(target)];
        return out;
    };
    Explanation e = detail::lime_core(prob_fn, image, opts);
    e.target = target;
    return e;
}

void write_csv(const Explanation& e, const std::string& path) {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out << "row,col,value\n";
    for (int r = 0; r < datasets::kRows; ++r)
        for (int c = 0; c < datasets::kCols; ++c)
            out << r << ',' << c << ',' << e.map[static_cast<std::size_t>(r * datasets::kCols + c)]
                << '\n';
}

void write_pgm(const Explanation& e, const std::string& path) {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    double lo = e.map[0], hi = e.map[0];
    for (double v : e.map) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double span = hi - lo > 0 ? hi - lo : 1.0;
    out << "P5\n" << datasets::kCols << ' ' << datasets::kRows << "\n255\n";
    for (double v : e.map) {
        const auto byte = static_cast<unsigned char>(std::lround((v - lo) / span * 255.0));
        out.write(reinterpret_cast<const char*>(&byte), 1);
    }
}

} // namespace xilab::explainers
