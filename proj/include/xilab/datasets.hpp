#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "xilab/errors.hpp"
#include "xilab/rng.hpp"

namespace xilab::datasets {

inline constexpr int kRows = 28;
inline constexpr int kCols = 28;
inline constexpr int kPixels = kRows * kCols;
inline constexpr int kClasses = 10;

/// One image with its label and the two feedback masks. Confounder masks
/// mark the decoy square (penalty feedback); reward masks mark the pixels
/// of the actual object. The two are disjoint by construction.
struct Sample {
    std::vector<float> image;                 // kPixels values in [0,1]
    int label = 0;
    std::vector<std::uint8_t> confounder_mask; // kPixels, 0/1
    std::vector<std::uint8_t> reward_mask;     // kPixels, 0/1
};

struct Dataset {
    std::vector<Sample> samples;
    bool decoyed = false;

    std::size_t size() const { return samples.size(); }
};

struct DecoyConfig {
    int square_size = 4;
    std::array<double, kClasses> shade_of_digit{}; // gray level per class
    bool test_randomization = true;
    std::uint64_t rng_seed = 0;

    /// Evenly spaced palette (255 - 25*d)/255 for d = 0..9.
    static DecoyConfig defaults();
    void validate() const;
};

enum class Split { Train, Test };

/// Parse an IDX image/label file pair; pixel bytes are scaled to [0,1].
/// Malformed input raises IdxParseError with the failing byte offset.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

/// Write an IDX image/label file pair (bytes as-is, big-endian headers).
void write_idx(const std::string& images_path, const std::string& labels_path,
               const std::vector<std::array<std::uint8_t, kPixels>>& images,
               const std::vector<std::uint8_t>& labels);

/// Paint a square_size x square_size gray square into a uniformly chosen
/// corner of every image. Train split: the shade encodes the label. Test
/// split: the shade is drawn uniformly from the palette, independent of the
/// label. Fills the confounder mask with the painted pixels and the reward
/// mask with the originally nonzero pixels outside the square. Rejects
/// already-decoyed input.
Dataset inject_decoy(const Dataset& clean, const DecoyConfig& config, Split split,
                     rng::Engine& rng);

enum class CeFill { Zero, Noise };

/// Counterexample augmentation: for every confounded sample, append
/// copies_per_sample corrected duplicates whose confounder pixels are
/// zeroed (or replaced by uniform noise). Originals are retained untouched.
Dataset make_counterexamples(const Dataset& data, CeFill fill, int copies_per_sample,
                             rng::Engine& rng);

enum class SyntheticKind { Digits, Fashion };

/// Deterministic procedurally generated stand-in datasets written as real
/// IDX files (the standard file names) into `dir`. Used when the canonical
/// downloads are not available.
void generate_synthetic_idx(const std::string& dir, SyntheticKind kind, int train_count,
                            int test_count, std::uint64_t seed);

} // namespace xilab::datasets
