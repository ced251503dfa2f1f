#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <numeric>

#include "xilab/model.hpp"
#include "xilab/ops.hpp"

#include "fixtures.hpp"

using namespace xilab;
using namespace xilab::model;

TEST_SUITE_BEGIN("model");

TEST_CASE("forward of a zero batch yields equal rows of 10 logits") {
    CnnModel m = build_cnn(1);
    autodiff::Tensor logits = m.forward(autodiff::Tensor::zeros({2, 1, 28, 28}));
    REQUIRE(logits.shape() == autodiff::Shape{2, 10});
    for (int j = 0; j < 10; ++j)
        CHECK(logits.values()[static_cast<std::size_t>(j)] ==
              logits.values()[static_cast<std::size_t>(10 + j)]);
}

TEST_CASE("flatten width follows the pooling arithmetic") {
    // 28 -> conv 24 -> pool 12 -> conv 8 -> pool 4; 50 channels * 16 = 800
    CnnModel m = build_cnn(0);
    CHECK(m.flatten_width() == 800);
    CHECK(m.fc1_w.shape() == autodiff::Shape{800, 500});
    CnnModel tiny = build_cnn(0, 2, 3, 16);
    CHECK(tiny.flatten_width() == 48);
}

TEST_CASE("identical seeds give bitwise-identical parameters") {
    CnnModel a = build_cnn(42), b = build_cnn(42), c = build_cnn(43);
    auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
    bool any_diff_c = false;
    for (std::size_t p = 0; p < pa.size(); ++p) {
        auto va = pa[p].values(), vb = pb[p].values(), vc = pc[p].values();
        for (std::size_t i = 0; i < va.size(); ++i) {
            CHECK(va[i] == vb[i]);
            if (va[i] != vc[i]) any_diff_c = true;
        }
    }
    CHECK(any_diff_c);
}

TEST_CASE("untrained model scores chance level on a balanced test set") {
    CnnModel m = build_cnn(5);
    const double acc = evaluate(m, fixtures::clean_test());
    CHECK(acc > 0.07);
    CHECK(acc < 0.13);
}

TEST_CASE("training memorizes a 10-sample toy set perfectly") {
    datasets::Dataset toy;
    toy.samples.assign(fixtures::clean_train().samples.begin(),
                       fixtures::clean_train().samples.begin() + 10);
    TrainConfig cfg;
    cfg.epochs = 120;
    cfg.batch_size = 10;
    cfg.seed = 3;
    TrainResult res = train(build_cnn(3), toy, cfg);
    CHECK(evaluate(res.model, toy) == 1.0);
    CHECK(res.history.size() == 120);
}

TEST_CASE("xil specs with lambda zero reproduce the plain trajectory bitwise") {
    TrainConfig plain;
    plain.epochs = 2;
    plain.batch_size = 128;
    plain.subset = 256;
    plain.seed = 11;

    TrainConfig zeroed = plain;
    zeroed.xil_specs = {{losses::Method::RRR, 0.0}};

    TrainResult a = train(build_cnn(11), fixtures::decoy_train(), plain);
    TrainResult b = train(build_cnn(11), fixtures::decoy_train(), zeroed);
    auto pa = a.model.parameters(), pb = b.model.parameters();
    for (std::size_t p = 0; p < pa.size(); ++p) {
        auto va = pa[p].values(), vb = pb[p].values();
        for (std::size_t i = 0; i < va.size(); ++i) CHECK(va[i] == vb[i]);
    }
    for (std::size_t e = 0; e < a.history.size(); ++e) {
        CHECK(a.history[e].pred_loss == b.history[e].pred_loss);
        CHECK(a.history[e].train_acc == b.history[e].train_acc);
    }
}

TEST_CASE("identical TrainConfig reproduces history and parameters bitwise") {
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 128;
    cfg.subset = 384;
    cfg.seed = 17;
    cfg.xil_specs = {{losses::Method::RRR, 1.0}};
    TrainResult a = train(build_cnn(17), fixtures::decoy_train(), cfg);
    TrainResult b = train(build_cnn(17), fixtures::decoy_train(), cfg);
    auto pa = a.model.parameters(), pb = b.model.parameters();
    for (std::size_t p = 0; p < pa.size(); ++p) {
        auto va = pa[p].values(), vb = pb[p].values();
        for (std::size_t i = 0; i < va.size(); ++i) CHECK(va[i] == vb[i]);
    }
    for (std::size_t e = 0; e < a.history.size(); ++e) {
        CHECK(a.history[e].pred_loss == b.history[e].pred_loss);
        CHECK(a.history[e].xil_losses == b.history[e].xil_losses);
    }
}

TEST_CASE("a revision method on a mask-free dataset is a configuration error") {
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.xil_specs = {{losses::Method::RRR, -1.0}};
    CHECK_THROWS_AS(train(build_cnn(0), fixtures::clean_train(), cfg), ConfigError);
}

TEST_CASE("checkpoints round-trip bitwise") {
    const CnnModel& m = fixtures::briefly_trained_model();
    const std::string path =
        (std::filesystem::temp_directory_path() / "xilab-ckpt-test.bin").string();
    save_checkpoint(m, path);
    CnnModel loaded = load_checkpoint(path);
    auto pa = m.parameters(), pb = loaded.parameters();
    for (std::size_t p = 0; p < pa.size(); ++p) {
        auto va = pa[p].values(), vb = pb[p].values();
        for (std::size_t i = 0; i < va.size(); ++i) CHECK(va[i] == vb[i]);
    }
    std::filesystem::remove(path);
    CHECK_THROWS_AS(load_checkpoint("/nonexistent/ckpt"), DataError);
}

TEST_CASE("history CSV lists one row per epoch and one column per term") {
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 256;
    cfg.subset = 256;
    cfg.seed = 1;
    cfg.xil_specs = {{losses::Method::RRR, 1.0}};
    TrainResult res = train(build_cnn(1), fixtures::decoy_train(), cfg);
    const std::string path =
        (std::filesystem::temp_directory_path() / "xilab-history-test.csv").string();
    write_history_csv(res.history, cfg.xil_specs, path);
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    CHECK(header == "epoch,pred_loss,xil_loss_RRR,train_acc");
    int rows = 0;
    for (std::string line; std::getline(in, line);)
        if (!line.empty()) ++rows;
    CHECK(rows == 2);
    std::filesystem::remove(path);
}

TEST_SUITE_END();
