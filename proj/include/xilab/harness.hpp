#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xilab/datasets.hpp"
#include "xilab/losses.hpp"
#include "xilab/metrics.hpp"
#include "xilab/model.hpp"

namespace xilab::harness {

enum class DatasetKind { DecoyMnist, DecoyFmnist, Clean };

const char* dataset_kind_name(DatasetKind k);
DatasetKind dataset_kind_from_name(std::string_view name);

/// One experiment: a dataset, a set of revision methods (possibly empty =
/// vanilla, possibly including "CE"), and the seeds to repeat over.
struct RunConfig {
    DatasetKind dataset = DatasetKind::DecoyMnist;
    std::vector<std::string> methods;            // subset of RRR, RRR_G, RBR, HINT, CE
    std::map<std::string, double> lambdas;       // per-method overrides
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    bool desk = true;                            // desk preset; full scale otherwise
    int epochs_override = 0;                     // 0 = preset value
    int subset_override = -1;                    // -1 = preset value
    double alpha = 0.5;
    bool compute_wr = true;
    metrics::WrTableOptions wr_eval;
    int ce_copies = 1;
    datasets::CeFill ce_fill = datasets::CeFill::Zero;
    std::string data_dir;                        // empty = $XILAB_DATA_DIR or ./data
    std::string out_dir;                         // empty = do not persist

    void validate() const;
    model::TrainConfig train_config(std::uint64_t seed) const;
    std::vector<losses::XilLossSpec> xil_specs() const;
    bool uses_ce() const;
};

struct SeedResult {
    std::uint64_t seed = 0;
    double train_acc = 0.0; // final-epoch training accuracy
    double test_acc = 0.0;
    std::map<std::string, double> wr; // by explainer name, percent
};

struct RunResult {
    int schema_version = 1;
    RunConfig config;
    std::vector<SeedResult> per_seed;
    double mean_train_acc = 0.0, sd_train_acc = 0.0;
    double mean_test_acc = 0.0, sd_test_acc = 0.0;
    std::map<std::string, double> mean_wr, sd_wr;
    std::string config_hash;
    double wall_seconds = 0.0;
    std::optional<std::uint64_t> failed_seed; // set when a seed aborted the run

    std::string label() const; // e.g. "Vanilla", "RRR+RRR_G"
};

/// Stable hash of the canonical config serialization.
std::string config_hash(const RunConfig& cfg);

/// Resolve the data directory: explicit config value, else $XILAB_DATA_DIR,
/// else ./data.
std::string resolve_data_dir(const std::string& configured);

/// Load the (train, test) pair for a dataset kind, decoy-injected as
/// configured. Missing files raise DataError naming the expected paths.
std::pair<datasets::Dataset, datasets::Dataset> load_dataset(DatasetKind kind,
                                                             const std::string& data_dir);

/// For each seed: build, (optionally CE-augment), train with the combined
/// loss, evaluate accuracy, and score WR over all four explainers.
/// Aggregates are persisted to out_dir when set. A failing seed saves the
/// partial result flagged with failed_seed, then raises RunError.
RunResult run_experiment(const RunConfig& cfg);

void save_run_result(const RunResult& result, const std::string& path);
RunResult load_run_result(const std::string& path);

enum class TableLayout { Accuracy, Wr };
enum class TableFormat { Csv, Text };

/// Accuracy layout: one row per result, columns train/test. WR layout: one
/// row per explainer, one column per result. Cells are mean +- sd with one
/// decimal. All results must share the dataset and alpha.
std::string emit_table(std::span<const RunResult> results, TableLayout layout,
                       TableFormat format);

struct CellDelta {
    std::string row;
    double delta = 0.0;        // mean(B) - mean(A)
    double combined_sd = 0.0;  // sd(A) + sd(B)
    bool significant = false;  // |delta| > combined_sd
};

struct Comparison {
    std::string label_a, label_b;
    std::vector<CellDelta> accuracy; // train/test rows
    std::vector<CellDelta> wr;       // per explainer
};

Comparison compare(const RunResult& a, const RunResult& b);
std::string render_comparison(const Comparison& c);

} // namespace xilab::harness
