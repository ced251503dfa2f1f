// Shared, lazily built test fixtures: a small synthetic digit set (clean and
// decoyed) and a briefly trained model. Built once per test process, staged
// in the same directory layout the harness expects (<root>/mnist/...).
#pragma once

#include <filesystem>
#include <string>
#include <unistd.h>

#include "xilab/datasets.hpp"
#include "xilab/model.hpp"

namespace fixtures {

inline std::string fixture_root() {
    static const std::string dir = [] {
        auto path = std::filesystem::temp_directory_path() /
                    ("xilab-fixtures-" + std::to_string(::getpid()));
        std::filesystem::create_directories(path);
        xilab::datasets::generate_synthetic_idx((path / "mnist").string(),
                                                xilab::datasets::SyntheticKind::Digits, 1200, 400, 1);
        return path.string();
    }();
    return dir;
}

inline const xilab::datasets::Dataset& clean_train() {
    static const xilab::datasets::Dataset ds =
        xilab::datasets::load_idx(fixture_root() + "/mnist/train-images-idx3-ubyte",
                                  fixture_root() + "/mnist/train-labels-idx1-ubyte");
    return ds;
}

inline const xilab::datasets::Dataset& clean_test() {
    static const xilab::datasets::Dataset ds =
        xilab::datasets::load_idx(fixture_root() + "/mnist/t10k-images-idx3-ubyte",
                                  fixture_root() + "/mnist/t10k-labels-idx1-ubyte");
    return ds;
}

inline const xilab::datasets::Dataset& decoy_train() {
    static const xilab::datasets::Dataset ds = [] {
        xilab::rng::Engine eng(7);
        return xilab::datasets::inject_decoy(clean_train(), xilab::datasets::DecoyConfig::defaults(),
                                             xilab::datasets::Split::Train, eng);
    }();
    return ds;
}

inline const xilab::datasets::Dataset& decoy_test() {
    static const xilab::datasets::Dataset ds = [] {
        xilab::rng::Engine eng(8);
        return xilab::datasets::inject_decoy(clean_test(), xilab::datasets::DecoyConfig::defaults(),
                                             xilab::datasets::Split::Test, eng);
    }();
    return ds;
}

/// Two quick epochs on the decoyed set: enough structure for explainer and
/// metric tests without a long fit.
inline const xilab::model::CnnModel& briefly_trained_model() {
    static const xilab::model::CnnModel m = [] {
        xilab::model::TrainConfig cfg;
        cfg.epochs = 2;
        cfg.batch_size = 128;
        cfg.seed = 0;
        return xilab::model::train(xilab::model::build_cnn(0), decoy_train(), cfg).model;
    }();
    return m;
}

} // namespace fixtures
