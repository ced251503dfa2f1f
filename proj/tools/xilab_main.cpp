// Command-line front end: dataset staging, single training runs, WR
// scoring, table/comparison rendering, and the end-to-end desk-scale
// reproduction of the accuracy/WR tables.
#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "xilab/harness.hpp"

namespace {

using namespace xilab;

std::map<std::string, double> parse_lambda_overrides(const std::vector<std::string>& kvs) {
    std::map<std::string, double> out;
    for (const auto& kv : kvs) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw ConfigError("--lambda expects METHOD=VALUE, got '" + kv + "'");
        out[kv.substr(0, eq)] = std::stod(kv.substr(eq + 1));
    }
    return out;
}

int fetch_data(const std::string& data_dir, bool synthetic, bool force, int train_count,
               int test_count, std::uint64_t seed) {
    const std::string base = harness::resolve_data_dir(data_dir);
    struct Entry {
        const char* sub;
        const char* remote;
        datasets::SyntheticKind kind;
    };
    const Entry entries[] = {
        {"mnist", "https://storage.googleapis.com/cvdf-datasets/mnist",
         datasets::SyntheticKind::Digits},
        {"fmnist", "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com",
         datasets::SyntheticKind::Fashion},
    };
    const char* files[] = {"train-images-idx3-ubyte", "train-labels-idx1-ubyte",
                           "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"};

    bool all_present = true;
    for (const auto& e : entries)
        for (const char* f : files)
            if (!std::filesystem::exists(base + "/" + e.sub + "/" + f)) all_present = false;
    if (all_present && !force) {
        std::cout << "data already present under " << base << "\n";
        return 0;
    }

    if (synthetic) {
        for (const auto& e : entries) {
            std::cout << "generating synthetic " << e.sub << " (" << train_count << "/"
                      << test_count << ") into " << base << "/" << e.sub << "\n";
            datasets::generate_synthetic_idx(base + "/" + e.sub, e.kind, train_count, test_count,
                                             seed);
        }
        return 0;
    }

    std::cout << "expected files (gunzip after download):\n";
    bool downloaded_all = true;
    for (const auto& e : entries) {
        std::filesystem::create_directories(base + "/" + e.sub);
        for (const char* f : files) {
            const std::string path = base + "/" + e.sub + "/" + f;
            std::cout << "  " << path << "\n";
            if (std::filesystem::exists(path) && !force) continue;
            const std::string url = std::string(e.remote) + "/" + f + ".gz";
            const std::string cmd = "curl -fsSL '" + url + "' | gunzip > '" + path + "'";
            if (std::system(cmd.c_str()) != 0) {
                std::remove(path.c_str());
                downloaded_all = false;
            }
        }
    }
    if (!downloaded_all) {
        std::cerr << "download failed (no network?); rerun with --synthetic to generate "
                     "deterministic stand-in datasets\n";
        return 2;
    }
    return 0;
}

void apply_common(harness::RunConfig& cfg, const std::string& data_dir, bool full, double alpha) {
    cfg.data_dir = data_dir;
    cfg.desk = !full;
    cfg.alpha = alpha;
    if (full)
        std::cerr << "note: --full trains 50 epochs on the whole training set; this takes hours "
                     "on a CPU\n";
}

int run_reproduce(const std::string& data_dir, const std::string& out_dir,
                  std::vector<std::uint64_t> seeds, double alpha, bool full, bool with_fmnist) {
    using harness::DatasetKind;
    struct Job {
        DatasetKind dataset;
        std::vector<std::string> methods;
    };
    std::vector<Job> jobs = {
        {DatasetKind::Clean, {}},
        {DatasetKind::DecoyMnist, {}},
        {DatasetKind::DecoyMnist, {"RRR"}},
        {DatasetKind::DecoyMnist, {"RRR_G"}},
        {DatasetKind::DecoyMnist, {"RBR"}},
        {DatasetKind::DecoyMnist, {"RRR", "RRR_G"}},
        {DatasetKind::DecoyMnist, {"RRR", "RBR"}},
        {DatasetKind::DecoyMnist, {"RRR_G", "RBR"}},
        {DatasetKind::DecoyMnist, {"RRR", "RRR_G", "RBR"}},
    };
    if (with_fmnist) {
        jobs.push_back({DatasetKind::DecoyFmnist, {}});
        jobs.push_back({DatasetKind::DecoyFmnist, {"RRR"}});
        jobs.push_back({DatasetKind::DecoyFmnist, {"RRR_G"}});
        jobs.push_back({DatasetKind::DecoyFmnist, {"RBR"}});
        jobs.push_back({DatasetKind::DecoyFmnist, {"RRR", "RRR_G"}});
        jobs.push_back({DatasetKind::DecoyFmnist, {"RRR", "RRR_G", "RBR"}});
    }

    std::vector<harness::RunResult> mnist_results, fmnist_results;
    for (const auto& job : jobs) {
        harness::RunConfig cfg;
        cfg.dataset = job.dataset;
        cfg.methods = job.methods;
        cfg.seeds = seeds;
        cfg.out_dir = out_dir;
        apply_common(cfg, data_dir, full, alpha);
        cfg.compute_wr = job.dataset != DatasetKind::Clean;

        harness::RunResult r = harness::run_experiment(cfg);
        std::cout << harness::dataset_kind_name(job.dataset) << " " << r.label() << ": test acc "
                  << r.mean_test_acc << " +- " << r.sd_test_acc;
        for (const auto& [name, wr] : r.mean_wr) std::cout << "  WR(" << name << ") " << wr;
        std::cout << "  (" << r.wall_seconds << " s)" << std::endl;
        if (job.dataset == DatasetKind::DecoyFmnist)
            fmnist_results.push_back(std::move(r));
        else
            mnist_results.push_back(std::move(r));
    }

    auto dump = [&out_dir](const std::vector<harness::RunResult>& rs, const std::string& stem) {
        if (rs.empty()) return;
        for (auto layout : {harness::TableLayout::Accuracy, harness::TableLayout::Wr}) {
            const std::string kind = layout == harness::TableLayout::Accuracy ? "accuracy" : "wr";
            const std::string text = harness::emit_table(rs, layout, harness::TableFormat::Text);
            const std::string csv = harness::emit_table(rs, layout, harness::TableFormat::Csv);
            std::cout << "\n" << stem << " " << kind << ":\n" << text;
            if (!out_dir.empty()) {
                std::filesystem::create_directories(out_dir);
                std::ofstream(out_dir + "/" + stem + "-" + kind + ".txt") << text;
                std::ofstream(out_dir + "/" + stem + "-" + kind + ".csv") << csv;
            }
        }
    };
    dump(mnist_results, "mnist");
    dump(fmnist_results, "fmnist");
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"explanatory interactive learning lab"};
    app.require_subcommand(1);

    std::string data_dir;
    app.add_option("--data-dir", data_dir, "data directory (default: $XILAB_DATA_DIR or ./data)");

    auto* fetch = app.add_subcommand("fetch-data", "download or synthesize the IDX datasets");
    bool synthetic = false, force = false;
    int syn_train = 60000, syn_test = 10000;
    std::uint64_t syn_seed = 1;
    fetch->add_flag("--synthetic", synthetic, "generate deterministic stand-in datasets");
    fetch->add_flag("--force", force, "overwrite existing files");
    fetch->add_option("--train-count", syn_train, "synthetic training set size");
    fetch->add_option("--test-count", syn_test, "synthetic test set size");
    fetch->add_option("--seed", syn_seed, "synthetic generator seed");

    std::string dataset_name = "DecoyMNIST";
    std::vector<std::string> methods;
    std::vector<std::string> lambda_kvs;
    std::vector<std::uint64_t> seeds;
    bool full = false;
    double alpha = 0.5;
    std::string out_dir;

    auto* train_cmd = app.add_subcommand("train", "train one model and save a checkpoint");
    std::uint64_t train_seed = 0;
    std::string checkpoint_out = "model.ckpt", history_out;
    int epochs_override = 0, subset_override = -1;
    train_cmd->add_option("--dataset", dataset_name, "DecoyMNIST, DecoyFMNIST or clean");
    train_cmd->add_option("--methods", methods, "revision methods (RRR RRR_G RBR HINT CE)");
    train_cmd->add_option("--lambda", lambda_kvs, "lambda override METHOD=VALUE");
    train_cmd->add_option("--seed", train_seed, "training seed");
    train_cmd->add_flag("--full", full, "full scale (50 epochs, whole set) instead of desk scale");
    train_cmd->add_option("--epochs", epochs_override, "override epoch count");
    train_cmd->add_option("--subset", subset_override, "override training subset size");
    train_cmd->add_option("--checkpoint", checkpoint_out, "checkpoint output path");
    train_cmd->add_option("--history", history_out, "training history CSV path");

    auto* eval_cmd = app.add_subcommand("evaluate", "accuracy of a checkpoint on a dataset split");
    std::string checkpoint_in;
    std::string split = "test";
    eval_cmd->add_option("--checkpoint", checkpoint_in, "model checkpoint")->required();
    eval_cmd->add_option("--dataset", dataset_name, "DecoyMNIST, DecoyFMNIST or clean");
    eval_cmd->add_option("--split", split, "train or test");

    auto* wr_cmd = app.add_subcommand("wr", "wrong-reason scores of a checkpoint");
    int wr_samples = 256, wr_lime_samples = 64;
    std::string export_dir;
    int export_sample = -1;
    wr_cmd->add_option("--checkpoint", checkpoint_in, "model checkpoint")->required();
    wr_cmd->add_option("--dataset", dataset_name, "DecoyMNIST or DecoyFMNIST");
    wr_cmd->add_option("--alpha", alpha, "binarization threshold");
    wr_cmd->add_option("--samples", wr_samples, "evaluation subset size");
    wr_cmd->add_option("--lime-samples", wr_lime_samples, "LIME evaluation subset size");
    wr_cmd->add_option("--export-dir", export_dir, "write CSV/PGM maps for one sample");
    wr_cmd->add_option("--export-sample", export_sample, "test-set index to export");

    auto* table_cmd = app.add_subcommand("table", "render accuracy/WR tables from saved runs");
    std::vector<std::string> result_paths;
    std::string layout = "wr", format = "text", table_out;
    table_cmd->add_option("--results", result_paths, "run-*.json files")->required();
    table_cmd->add_option("--layout", layout, "accuracy or wr");
    table_cmd->add_option("--format", format, "csv or text");
    table_cmd->add_option("--out", table_out, "output file (default: stdout)");

    auto* compare_cmd = app.add_subcommand("compare", "per-cell deltas between two saved runs");
    std::string result_a, result_b;
    compare_cmd->add_option("--a", result_a, "baseline run JSON")->required();
    compare_cmd->add_option("--b", result_b, "candidate run JSON")->required();

    auto* repro_cmd =
        app.add_subcommand("reproduce", "desk-scale single/combined method tables, end to end");
    bool with_fmnist = false;
    repro_cmd->add_option("--seeds", seeds, "seeds (default 0 1 2)");
    repro_cmd->add_option("--alpha", alpha, "binarization threshold");
    repro_cmd->add_flag("--full", full, "full scale instead of desk scale");
    repro_cmd->add_flag("--fmnist", with_fmnist, "also run the fashion analog");
    repro_cmd->add_option("--out", out_dir, "directory for run JSON and tables");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*fetch) return fetch_data(data_dir, synthetic, force, syn_train, syn_test, syn_seed);

        if (*train_cmd) {
            harness::RunConfig cfg;
            cfg.dataset = harness::dataset_kind_from_name(dataset_name);
            cfg.methods = methods;
            cfg.lambdas = parse_lambda_overrides(lambda_kvs);
            cfg.seeds = {train_seed};
            cfg.epochs_override = epochs_override;
            cfg.subset_override = subset_override;
            apply_common(cfg, data_dir, full, alpha);
            cfg.validate();

            auto [train_set, test_set] =
                harness::load_dataset(cfg.dataset, harness::resolve_data_dir(cfg.data_dir));
            if (cfg.uses_ce()) {
                rng::Engine ce_rng(9);
                train_set =
                    datasets::make_counterexamples(train_set, cfg.ce_fill, cfg.ce_copies, ce_rng);
            }
            model::TrainResult trained = model::train(model::build_cnn(train_seed), train_set,
                                                      cfg.train_config(train_seed));
            model::save_checkpoint(trained.model, checkpoint_out);
            if (!history_out.empty())
                model::write_history_csv(trained.history, cfg.train_config(train_seed).xil_specs,
                                         history_out);
            std::cout << "train acc " << trained.history.back().train_acc * 100.0 << "  test acc "
                      << model::evaluate(trained.model, test_set) * 100.0 << "\n"
                      << "checkpoint written to " << checkpoint_out << "\n";
            return 0;
        }

        if (*eval_cmd) {
            model::CnnModel m = model::load_checkpoint(checkpoint_in);
            auto [train_set, test_set] = harness::load_dataset(
                harness::dataset_kind_from_name(dataset_name), harness::resolve_data_dir(data_dir));
            const auto& ds = split == "train" ? train_set : test_set;
            std::cout << "accuracy " << model::evaluate(m, ds) * 100.0 << "\n";
            return 0;
        }

        if (*wr_cmd) {
            model::CnnModel m = model::load_checkpoint(checkpoint_in);
            auto kind = harness::dataset_kind_from_name(dataset_name);
            if (kind == harness::DatasetKind::Clean)
                throw ConfigError("wr needs a decoyed dataset (masks are required)");
            auto [train_set, test_set] =
                harness::load_dataset(kind, harness::resolve_data_dir(data_dir));
            metrics::WrTableOptions opts;
            opts.samples = wr_samples;
            opts.lime_samples = wr_lime_samples;
            const std::vector<explainers::ExplainerKind> kinds = {
                explainers::ExplainerKind::InputGrad, explainers::ExplainerKind::GradCam,
                explainers::ExplainerKind::IntGrad, explainers::ExplainerKind::Lime};
            metrics::WrTable t =
                metrics::wr_table(m, test_set, kinds, metrics::WrConfig{alpha}, opts);
            for (std::size_t i = 0; i < t.explainers.size(); ++i)
                std::cout << explainers::explainer_name(t.explainers[i]) << " " << t.mean_wr[i]
                          << " (" << t.sample_counts[i] << " samples)\n";
            if (!export_dir.empty() && export_sample >= 0) {
                const auto& sample = test_set.samples.at(static_cast<std::size_t>(export_sample));
                for (auto k : kinds) {
                    explainers::Explanation e;
                    switch (k) {
                        case explainers::ExplainerKind::InputGrad:
                            e = explainers::input_gradients(m, sample.image);
                            break;
                        case explainers::ExplainerKind::IntGrad:
                            e = explainers::integrated_gradients(m, sample.image);
                            break;
                        case explainers::ExplainerKind::GradCam:
                            e = explainers::grad_cam(m, sample.image);
                            break;
                        case explainers::ExplainerKind::Lime:
                            e = explainers::lime(m, sample.image);
                            break;
                    }
                    const std::string stem = export_dir + "/" + explainers::explainer_name(k) +
                                             "-" + std::to_string(export_sample);
                    explainers::write_csv(e, stem + ".csv");
                    explainers::write_pgm(e, stem + ".pgm");
                }
                std::cout << "maps written to " << export_dir << "\n";
            }
            return 0;
        }

        if (*table_cmd) {
            std::vector<harness::RunResult> results;
            for (const auto& p : result_paths) results.push_back(harness::load_run_result(p));
            const auto lay =
                layout == "accuracy" ? harness::TableLayout::Accuracy : harness::TableLayout::Wr;
            const auto fmt =
                format == "csv" ? harness::TableFormat::Csv : harness::TableFormat::Text;
            const std::string text = harness::emit_table(results, lay, fmt);
            if (table_out.empty()) {
                std::cout << text;
            } else {
                std::ofstream(table_out) << text;
                std::cout << "table written to " << table_out << "\n";
            }
            return 0;
        }

        if (*compare_cmd) {
            harness::RunResult a = harness::load_run_result(result_a);
            harness::RunResult b = harness::load_run_result(result_b);
            std::cout << harness::render_comparison(harness::compare(a, b));
            return 0;
        }

        if (*repro_cmd) {
            if (seeds.empty()) seeds = {0, 1, 2};
            return run_reproduce(data_dir, out_dir, seeds, alpha, full, with_fmnist);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const IdxParseError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "run failed: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
