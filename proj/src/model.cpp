#include "xilab/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "xilab/adam.hpp"
#include "xilab/ops.hpp"
#include "xilab/rng.hpp"

namespace xilab::model {

using namespace autodiff;

namespace {

Tensor init_uniform(Shape shape, double limit, rng::Engine& eng) {
    std::vector<double> data(static_cast<std::size_t>(numel_of(shape)));
    for (auto& v : data) v = rng::uniform(eng, -limit, limit);
    return Tensor::leaf(std::move(shape), std::move(data));
}

int argmax_row(std::span<const double> logits, int offset, int classes) {
    int best = 0;
    for (int j = 1; j < classes; ++j)
        if (logits[static_cast<std::size_t>(offset + j)] > logits[static_cast<std::size_t>(offset + best)])
            best = j; // ties keep the lower class index
    return best;
}

} // namespace

Tensor CnnModel::forward(const Tensor& images) const {
    return forward_with_activations(images).logits;
}

CnnModel::Activations CnnModel::forward_with_activations(const Tensor& images) const {
    if (images.ndim() != 4 || images.dim(1) != 1 || images.dim(2) != datasets::kRows ||
        images.dim(3) != datasets::kCols)
        throw ShapeError("CnnModel: expected [N,1,28,28] input, got " + shape_str(images.shape()));
    Tensor h1 = max_pool2d(relu(conv2d(images, conv1_w, conv1_b)));
    Tensor conv2_act = relu(conv2d(h1, conv2_w, conv2_b)); // [N,c2,8,8]
    Tensor h2 = max_pool2d(conv2_act);
    Tensor flat = reshape(h2, {images.dim(0), flatten_width()});
    Tensor h3 = relu(dense(flat, fc1_w, fc1_b));
    return {dense(h3, fc2_w, fc2_b), conv2_act};
}

std::vector<Tensor> CnnModel::parameters() const {
    return {conv1_w, conv1_b, conv2_w, conv2_b, fc1_w, fc1_b, fc2_w, fc2_b};
}

std::vector<std::string> CnnModel::parameter_names() const {
    return {"conv1_w", "conv1_b", "conv2_w", "conv2_b", "fc1_w", "fc1_b", "fc2_w", "fc2_b"};
}

CnnModel CnnModel::clone() const {
    CnnModel c;
    c.conv1_channels = conv1_channels;
    c.conv2_channels = conv2_channels;
    c.hidden = hidden;
    auto copy_leaf = [](const Tensor& t) {
        return Tensor::leaf(t.shape(), std::vector<double>(t.values().begin(), t.values().end()));
    };
    c.conv1_w = copy_leaf(conv1_w);
    c.conv1_b = copy_leaf(conv1_b);
    c.conv2_w = copy_leaf(conv2_w);
    c.conv2_b = copy_leaf(conv2_b);
    c.fc1_w = copy_leaf(fc1_w);
    c.fc1_b = copy_leaf(fc1_b);
    c.fc2_w = copy_leaf(fc2_w);
    c.fc2_b = copy_leaf(fc2_b);
    return c;
}

CnnModel build_cnn(std::uint64_t seed, int conv1_channels, int conv2_channels, int hidden) {
    CnnModel m;
    m.conv1_channels = conv1_channels;
    m.conv2_channels = conv2_channels;
    m.hidden = hidden;
    rng::Engine eng(seed);
    // fan-in-scaled uniform weights, zero biases; fixed draw order
    m.conv1_w = init_uniform({conv1_channels, 1, 5, 5}, 1.0 / std::sqrt(25.0), eng);
    m.conv1_b = Tensor::leaf({conv1_channels},
                             std::vector<double>(static_cast<std::size_t>(conv1_channels), 0.0));
    m.conv2_w = init_uniform({conv2_channels, conv1_channels, 5, 5},
                             1.0 / std::sqrt(conv1_channels * 25.0), eng);
    m.conv2_b = Tensor::leaf({conv2_channels},
                             std::vector<double>(static_cast<std::size_t>(conv2_channels), 0.0));
    m.fc1_w = init_uniform({m.flatten_width(), hidden},
                           1.0 / std::sqrt(static_cast<double>(m.flatten_width())), eng);
    m.fc1_b = Tensor::leaf({hidden}, std::vector<double>(static_cast<std::size_t>(hidden), 0.0));
    m.fc2_w = init_uniform({hidden, datasets::kClasses},
                           1.0 / std::sqrt(static_cast<double>(hidden)), eng);
    m.fc2_b = Tensor::leaf({datasets::kClasses}, std::vector<double>(datasets::kClasses, 0.0));
    return m;
}

TrainConfig TrainConfig::desk_scale() {
    TrainConfig cfg;
    cfg.epochs = 10;
    cfg.subset = 10000;
    return cfg;
}

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("TrainConfig: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
    if (subset < 0) throw ConfigError("TrainConfig: subset must be >= 0");
    for (const auto& spec : xil_specs) spec.validate();
}

Tensor image_batch(const datasets::Dataset& data, std::span<const std::size_t> indices) {
    const int n = static_cast<int>(indices.size());
    std::vector<double> out(static_cast<std::size_t>(n) * datasets::kPixels);
    for (int i = 0; i < n; ++i) {
        const auto& img = data.samples[indices[static_cast<std::size_t>(i)]].image;
        for (int p = 0; p < datasets::kPixels; ++p)
            out[static_cast<std::size_t>(i) * datasets::kPixels + static_cast<std::size_t>(p)] =
                img[static_cast<std::size_t>(p)];
    }
    return Tensor::from_data({n, 1, datasets::kRows, datasets::kCols}, std::move(out));
}

namespace {

Tensor mask_batch(const datasets::Dataset& data, std::span<const std::size_t> indices,
                  bool reward) {
    const int n = static_cast<int>(indices.size());
    std::vector<double> out(static_cast<std::size_t>(n) * datasets::kPixels);
    for (int i = 0; i < n; ++i) {
        const auto& s = data.samples[indices[static_cast<std::size_t>(i)]];
        const auto& m = reward ? s.reward_mask : s.confounder_mask;
        for (int p = 0; p < datasets::kPixels; ++p)
            out[static_cast<std::size_t>(i) * datasets::kPixels + static_cast<std::size_t>(p)] =
                m[static_cast<std::size_t>(p)];
    }
    return Tensor::from_data({n, 1, datasets::kRows, datasets::kCols}, std::move(out));
}

} // namespace

Tensor confounder_mask_batch(const datasets::Dataset& data, std::span<const std::size_t> indices) {
    return mask_batch(data, indices, false);
}

Tensor reward_mask_batch(const datasets::Dataset& data, std::span<const std::size_t> indices) {
    return mask_batch(data, indices, true);
}

std::vector<int> label_batch(const datasets::Dataset& data, std::span<const std::size_t> indices) {
    std::vector<int> labels(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i)
        labels[i] = data.samples[indices[i]].label;
    return labels;
}

TrainResult train(const CnnModel& m, const datasets::Dataset& train_set, const TrainConfig& cfg) {
    cfg.validate();
    if (train_set.samples.empty()) throw ConfigError("train: empty training set");
    for (const auto& spec : cfg.xil_specs)
        if (!train_set.decoyed)
            throw ConfigError(std::string("train: method ") + losses::method_name(spec.method) +
                              " needs feedback masks, but the dataset carries none");

    CnnModel working = m.clone();
    std::vector<Tensor> params = working.parameters();
    AdamState adam = AdamState::init(params);
    AdamConfig adam_cfg;
    adam_cfg.lr = cfg.lr;

    const std::size_t n_total = train_set.samples.size();
    const std::size_t n_used =
        cfg.subset > 0 ? std::min<std::size_t>(n_total, static_cast<std::size_t>(cfg.subset))
                       : n_total;
    std::vector<std::size_t> order(n_used);
    std::iota(order.begin(), order.end(), 0u);

    rng::Engine shuffle_rng(cfg.seed);
    TrainResult result;
    result.history.reserve(static_cast<std::size_t>(cfg.epochs));

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng::shuffle(order, shuffle_rng);
        double pred_sum = 0.0;
        std::vector<double> xil_sums(cfg.xil_specs.size(), 0.0);
        std::size_t correct = 0;
        std::size_t batches = 0;

        for (std::size_t start = 0; start < n_used;
             start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop =
                std::min(n_used, start + static_cast<std::size_t>(cfg.batch_size));
            std::span<const std::size_t> idx(order.data() + start, stop - start);

            Tensor x = image_batch(train_set, idx);
            std::vector<int> labels = label_batch(train_set, idx);
            Tensor conf_mask, reward_mask;
            for (const auto& spec : cfg.xil_specs) {
                if (losses::uses_reward_mask(spec.method)) {
                    if (!reward_mask.defined()) reward_mask = reward_mask_batch(train_set, idx);
                } else if (!conf_mask.defined()) {
                    conf_mask = confounder_mask_batch(train_set, idx);
                }
            }

            Tensor logits = working.forward(x);
            Tensor pred = cross_entropy(logits, labels);
            std::vector<Tensor> terms;
            terms.reserve(cfg.xil_specs.size());
            for (const auto& spec : cfg.xil_specs)
                terms.push_back(losses::xil_term(spec, working, x, labels, conf_mask, reward_mask));
            Tensor total = losses::combined_loss(pred, cfg.xil_specs, terms);

            std::vector<Tensor> grads = backward(total, params);
            adam_step(params, grads, adam, adam_cfg);

            pred_sum += pred.item();
            for (std::size_t t = 0; t < terms.size(); ++t) xil_sums[t] += terms[t].item();
            auto lv = logits.values();
            for (std::size_t i = 0; i < idx.size(); ++i)
                if (argmax_row(lv, static_cast<int>(i) * datasets::kClasses, datasets::kClasses) ==
                    labels[i])
                    ++correct;
            ++batches;
        }

        EpochStats stats;
        stats.pred_loss = pred_sum / static_cast<double>(batches);
        for (double s : xil_sums) stats.xil_losses.push_back(s / static_cast<double>(batches));
        stats.train_acc = static_cast<double>(correct) / static_cast<double>(n_used);
        result.history.push_back(std::move(stats));
    }

    result.model = std::move(working);
    return result;
}

double evaluate(const CnnModel& m, const datasets::Dataset& data) {
    if (data.samples.empty()) return 0.0;
    NoGradGuard ng;
    const std::size_t n = data.samples.size();
    std::size_t correct = 0;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < n; start += 512) {
        const std::size_t stop = std::min(n, start + 512);
        idx.resize(stop - start);
        std::iota(idx.begin(), idx.end(), start);
        Tensor logits = m.forward(image_batch(data, idx));
        auto lv = logits.values();
        for (std::size_t i = 0; i < idx.size(); ++i)
            if (argmax_row(lv, static_cast<int>(i) * datasets::kClasses, datasets::kClasses) ==
                data.samples[idx[i]].label)
                ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

namespace {

constexpr char kCheckpointMagic[8] = {'X', 'I', 'L', 'C', 'K', 'P', 'T', '1'};

void put_u32(std::ofstream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), 4);
}

std::uint32_t take_u32(std::ifstream& in, const std::string& path) {
    std::uint32_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), 4))
        throw DataError(path + ": truncated checkpoint");
    return v;
}

} // namespace

void save_checkpoint(const CnnModel& m, const std::string& path) {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint " + path);
    out.write(kCheckpointMagic, 8);
    put_u32(out, 1); // version
    put_u32(out, static_cast<std::uint32_t>(m.conv1_channels));
    put_u32(out, static_cast<std::uint32_t>(m.conv2_channels));
    put_u32(out, static_cast<std::uint32_t>(m.hidden));
    auto params = m.parameters();
    auto names = m.parameter_names();
    put_u32(out, static_cast<std::uint32_t>(params.size()));
    for (std::size_t p = 0; p < params.size(); ++p) {
        put_u32(out, static_cast<std::uint32_t>(names[p].size()));
        out.write(names[p].data(), static_cast<std::streamsize>(names[p].size()));
        const auto& shape = params[p].shape();
        put_u32(out, static_cast<std::uint32_t>(shape.size()));
        for (int d : shape) put_u32(out, static_cast<std::uint32_t>(d));
        auto vals = params[p].values();
        out.write(reinterpret_cast<const char*>(vals.data()),
                  static_cast<std::streamsize>(vals.size() * sizeof(double)));
    }
}

CnnModel load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + path);
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw DataError(path + ": not a model checkpoint");
    const std::uint32_t version = take_u32(in, path);
    if (version != 1)
        throw DataError(path + ": unsupported checkpoint version " + std::to_string(version));
    const int c1 = static_cast<int>(take_u32(in, path));
    const int c2 = static_cast<int>(take_u32(in, path));
    const int hidden = static_cast<int>(take_u32(in, path));
    CnnModel m = build_cnn(0, c1, c2, hidden);
    auto params = m.parameters();
    auto names = m.parameter_names();
    const std::uint32_t count = take_u32(in, path);
    if (count != params.size()) throw DataError(path + ": unexpected parameter count");
    for (std::size_t p = 0; p < params.size(); ++p) {
        const std::uint32_t name_len = take_u32(in, path);
        std::string name(name_len, '\0');
        if (!in.read(name.data(), name_len)) throw DataError(path + ": truncated checkpoint");
        if (name != names[p]) throw DataError(path + ": unexpected parameter " + name);
        const std::uint32_t ndim = take_u32(in, path);
        Shape shape(ndim);
        for (auto& d : shape) d = static_cast<int>(take_u32(in, path));
        if (shape != params[p].shape()) throw DataError(path + ": shape mismatch for " + name);
        auto vals = params[p].values();
        if (!in.read(reinterpret_cast<char*>(vals.data()),
                     static_cast<std::streamsize>(vals.size() * sizeof(double))))
            throw DataError(path + ": truncated parameter data for " + name);
    }
    return m;
}

void write_history_csv(const std::vector<EpochStats>& history,
                       std::span<const losses::XilLossSpec> specs, const std::string& path) {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out << "epoch,pred_loss";
    for (const auto& spec : specs) out << ",xil_loss_" << losses::method_name(spec.method);
    out << ",train_acc\n";
    for (std::size_t e = 0; e < history.size(); ++e) {
        out << (e + 1) << ',' << history[e].pred_loss;
        for (double v : history[e].xil_losses) out << ',' << v;
        out << ',' << history[e].train_acc << '\n';
    }
}

} // namespace xilab::model
