#include "xilab/datasets.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

namespace xilab::datasets {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

struct Reader {
    std::vector<unsigned char> bytes;
    std::uint64_t pos = 0;
    std::string path;

    std::uint32_t read_u32() {
        if (pos + 4 > bytes.size())
            throw IdxParseError(path + ": truncated header", pos);
        std::uint32_t v = (std::uint32_t(bytes[pos]) << 24) | (std::uint32_t(bytes[pos + 1]) << 16) |
                          (std::uint32_t(bytes[pos + 2]) << 8) | std::uint32_t(bytes[pos + 3]);
        pos += 4;
        return v;
    }
};

Reader read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    Reader r;
    r.path = path;
    r.bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    return r;
}

void write_u32(std::ofstream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

// corner order: top-left, top-right, bottom-left, bottom-right
std::pair<int, int> corner_origin(int corner, int square) {
    switch (corner) {
        case 0: return {0, 0};
        case 1: return {0, kCols - square};
        case 2: return {kRows - square, 0};
        default: return {kRows - square, kCols - square};
    }
}

} // namespace

DecoyConfig DecoyConfig::defaults() {
    DecoyConfig cfg;
    for (int d = 0; d < kClasses; ++d)
        cfg.shade_of_digit[static_cast<std::size_t>(d)] = (255.0 - 25.0 * d) / 255.0;
    return cfg;
}

void DecoyConfig::validate() const {
    if (square_size != 4)
        throw ConfigError("DecoyConfig: square_size must be 4, got " + std::to_string(square_size));
    for (int d = 0; d < kClasses; ++d) {
        double s = shade_of_digit[static_cast<std::size_t>(d)];
        if (!(s > 0.0 && s <= 1.0))
            throw ConfigError("DecoyConfig: shade for class " + std::to_string(d) +
                              " must lie in (0,1], got " + std::to_string(s));
    }
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    Reader imgs = read_file(images_path);
    std::uint32_t magic = imgs.read_u32();
    if (magic != kImageMagic)
        throw IdxParseError(images_path + ": bad image magic 0x" + std::to_string(magic), 0);
    const std::uint32_t count = imgs.read_u32();
    const std::uint32_t rows = imgs.read_u32();
    const std::uint32_t cols = imgs.read_u32();
    if (rows != kRows || cols != kCols)
        throw IdxParseError(images_path + ": expected 28x28 images, got " + std::to_string(rows) +
                                "x" + std::to_string(cols), 8);
    const std::uint64_t need = imgs.pos + std::uint64_t(count) * kPixels;
    if (imgs.bytes.size() < need)
        throw IdxParseError(images_path + ": truncated image data, need " + std::to_string(need) +
                                " bytes, have " + std::to_string(imgs.bytes.size()),
                            imgs.bytes.size());

    Reader labs = read_file(labels_path);
    std::uint32_t lmagic = labs.read_u32();
    if (lmagic != kLabelMagic)
        throw IdxParseError(labels_path + ": bad label magic 0x" + std::to_string(lmagic), 0);
    const std::uint32_t lcount = labs.read_u32();
    if (lcount != count)
        throw IdxParseError(labels_path + ": label count " + std::to_string(lcount) +
                                " does not match image count " + std::to_string(count), 4);
    if (labs.bytes.size() < labs.pos + lcount)
        throw IdxParseError(labels_path + ": truncated label data", labs.bytes.size());

    Dataset ds;
    ds.samples.resize(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        Sample& s = ds.samples[i];
        s.image.resize(kPixels);
        const unsigned char* px = imgs.bytes.data() + imgs.pos + std::uint64_t(i) * kPixels;
        for (int p = 0; p < kPixels; ++p)
            s.image[static_cast<std::size_t>(p)] = static_cast<float>(px[p] / 255.0);
        s.label = labs.bytes[labs.pos + i];
        if (s.label >= kClasses)
            throw IdxParseError(labels_path + ": label " + std::to_string(s.label) + " out of range",
                                labs.pos + i);
        s.confounder_mask.assign(kPixels, 0);
        s.reward_mask.assign(kPixels, 0);
    }
    return ds;
}

void write_idx(const std::string& images_path, const std::string& labels_path,
               const std::vector<std::array<std::uint8_t, kPixels>>& images,
               const std::vector<std::uint8_t>& labels) {
    if (images.size() != labels.size())
        throw ConfigError("write_idx: image/label count mismatch");
    const auto parent = std::filesystem::path(images_path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream imgs(images_path, std::ios::binary);
    if (!imgs) throw DataError("cannot write " + images_path);
    write_u32(imgs, kImageMagic);
    write_u32(imgs, static_cast<std::uint32_t>(images.size()));
    write_u32(imgs, kRows);
    write_u32(imgs, kCols);
    for (const auto& im : images)
        imgs.write(reinterpret_cast<const char*>(im.data()), kPixels);

    std::ofstream labs(labels_path, std::ios::binary);
    if (!labs) throw DataError("cannot write " + labels_path);
    write_u32(labs, kLabelMagic);
    write_u32(labs, static_cast<std::uint32_t>(labels.size()));
    labs.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
}

Dataset inject_decoy(const Dataset& clean, const DecoyConfig& config, Split split,
                     rng::Engine& rng) {
    config.validate();
    if (clean.decoyed)
        throw ConfigError("inject_decoy: dataset already carries decoys");

    const int sq = config.square_size;
    Dataset out;
    out.decoyed = true;
    out.samples.reserve(clean.samples.size());
    for (const Sample& src : clean.samples) {
        if (static_cast<int>(src.image.size()) != kPixels)
            throw ConfigError("inject_decoy: images must be 28x28");
        Sample s;
        s.label = src.label;
        s.image = src.image;
        s.confounder_mask.assign(kPixels, 0);
        s.reward_mask.assign(kPixels, 0);

        // draw order per image: corner first, then (test split) the shade
        const int corner = static_cast<int>(rng::uniform_int(rng, 4));
        double shade = config.shade_of_digit[static_cast<std::size_t>(src.label)];
        if (split == Split::Test && config.test_randomization)
            shade = config.shade_of_digit[rng::uniform_int(rng, kClasses)];

        auto [r0, c0] = corner_origin(corner, sq);
        for (int r = r0; r < r0 + sq; ++r)
            for (int c = c0; c < c0 + sq; ++c) {
                const int p = r * kCols + c;
                s.image[static_cast<std::size_t>(p)] = static_cast<float>(shade);
                s.confounder_mask[static_cast<std::size_t>(p)] = 1;
            }
        for (int p = 0; p < kPixels; ++p)
            if (!s.confounder_mask[static_cast<std::size_t>(p)] &&
                src.image[static_cast<std::size_t>(p)] > 0.0f)
                s.reward_mask[static_cast<std::size_t>(p)] = 1;

        out.samples.push_back(std::move(s));
    }
    return out;
}

Dataset make_counterexamples(const Dataset& data, CeFill fill, int copies_per_sample,
                             rng::Engine& rng) {
    if (copies_per_sample < 0)
        throw ConfigError("make_counterexamples: copies_per_sample must be >= 0, got " +
                          std::to_string(copies_per_sample));
    Dataset out;
    out.decoyed = data.decoyed;
    out.samples = data.samples;
    for (const Sample& src : data.samples) {
        bool confounded = false;
        for (std::uint8_t m : src.confounder_mask)
            if (m) { confounded = true; break; }
        if (!confounded) continue;
        for (int c = 0; c < copies_per_sample; ++c) {
            Sample copy = src;
            for (int p = 0; p < kPixels; ++p)
                if (copy.confounder_mask[static_cast<std::size_t>(p)])
                    copy.image[static_cast<std::size_t>(p)] =
                        fill == CeFill::Zero ? 0.0f : static_cast<float>(rng::uniform01(rng));
            out.samples.push_back(std::move(copy));
        }
    }
    return out;
}

} // namespace xilab::datasets
