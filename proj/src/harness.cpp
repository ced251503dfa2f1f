#include "xilab/harness.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace xilab::harness {

using nlohmann::json;

namespace {

// decoy injection streams are fixed so every method sees identical data
constexpr std::uint64_t kTrainDecoySeed = 7;
constexpr std::uint64_t kTestDecoySeed = 8;
constexpr std::uint64_t kCeSeed = 9;

const std::vector<explainers::ExplainerKind> kAllExplainers = {
    explainers::ExplainerKind::InputGrad, explainers::ExplainerKind::GradCam,
    explainers::ExplainerKind::IntGrad, explainers::ExplainerKind::Lime};

std::string two_decimals(double v, int decimals = 1) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(decimals);
    os << v;
    return os.str();
}

double mean_of(const std::vector<double>& xs) {
    double s = 0.0;
    for (double x : xs) s += x;
    return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
}

// unbiased estimator; zero for a single observation
double sd_of(const std::vector<double>& xs) {
    if (xs.size() < 2) return 0.0;
    const double m = mean_of(xs);
    double acc = 0.0;
    for (double x : xs) acc += (x - m) * (x - m);
    return std::sqrt(acc / static_cast<double>(xs.size() - 1));
}

json config_to_json(const RunConfig& cfg) {
    json j;
    j["dataset"] = dataset_kind_name(cfg.dataset);
    j["methods"] = cfg.methods;
    j["lambdas"] = cfg.lambdas;
    j["seeds"] = cfg.seeds;
    j["desk"] = cfg.desk;
    j["epochs_override"] = cfg.epochs_override;
    j["subset_override"] = cfg.subset_override;
    j["alpha"] = cfg.alpha;
    j["compute_wr"] = cfg.compute_wr;
    j["wr_samples"] = cfg.wr_eval.samples;
    j["wr_lime_samples"] = cfg.wr_eval.lime_samples;
    j["wr_subset_seed"] = cfg.wr_eval.subset_seed;
    j["lime_n_samples"] = cfg.wr_eval.lime.n_samples;
    j["lime_ridge"] = cfg.wr_eval.lime.ridge;
    j["lime_kernel_width"] = cfg.wr_eval.lime.kernel_width;
    j["ce_copies"] = cfg.ce_copies;
    j["ce_fill"] = cfg.ce_fill == datasets::CeFill::Zero ? "zero" : "noise";
    return j;
}

RunConfig config_from_json(const json& j) {
    RunConfig cfg;
    cfg.dataset = dataset_kind_from_name(j.at("dataset").get<std::string>());
    cfg.methods = j.at("methods").get<std::vector<std::string>>();
    cfg.lambdas = j.at("lambdas").get<std::map<std::string, double>>();
    cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    cfg.desk = j.at("desk").get<bool>();
    cfg.epochs_override = j.at("epochs_override").get<int>();
    cfg.subset_override = j.at("subset_override").get<int>();
    cfg.alpha = j.at("alpha").get<double>();
    cfg.compute_wr = j.at("compute_wr").get<bool>();
    cfg.wr_eval.samples = j.at("wr_samples").get<int>();
    cfg.wr_eval.lime_samples = j.at("wr_lime_samples").get<int>();
    cfg.wr_eval.subset_seed = j.at("wr_subset_seed").get<std::uint64_t>();
    cfg.wr_eval.lime.n_samples = j.at("lime_n_samples").get<int>();
    cfg.wr_eval.lime.ridge = j.at("lime_ridge").get<double>();
    cfg.wr_eval.lime.kernel_width = j.at("lime_kernel_width").get<double>();
    cfg.ce_copies = j.at("ce_copies").get<int>();
    cfg.ce_fill = j.at("ce_fill").get<std::string>() == "zero" ? datasets::CeFill::Zero
                                                               : datasets::CeFill::Noise;
    return cfg;
}

} // namespace

const char* dataset_kind_name(DatasetKind k) {
    switch (k) {
        case DatasetKind::DecoyMnist: return "DecoyMNIST";
        case DatasetKind::DecoyFmnist: return "DecoyFMNIST";
        case DatasetKind::Clean: return "clean";
    }
    return "?";
}

DatasetKind dataset_kind_from_name(std::string_view name) {
    if (name == "DecoyMNIST") return DatasetKind::DecoyMnist;
    if (name == "DecoyFMNIST") return DatasetKind::DecoyFmnist;
    if (name == "clean") return DatasetKind::Clean;
    throw ConfigError("unknown dataset '" + std::string(name) +
                      "' (expected DecoyMNIST, DecoyFMNIST or clean)");
}

void RunConfig::validate() const {
    if (seeds.empty()) throw ConfigError("RunConfig: seed list must not be empty");
    for (const auto& m : methods)
        if (m != "CE") (void)losses::method_from_name(m); // raises on unknown names
    for (const auto& [name, lambda] : lambdas) {
        (void)losses::method_from_name(name);
        if (lambda < 0) throw ConfigError("RunConfig: lambda for " + name + " must be >= 0");
    }
    if (dataset == DatasetKind::Clean && !methods.empty())
        throw ConfigError("RunConfig: revision methods need decoy masks; use a Decoy* dataset");
    if (ce_copies < 0) throw ConfigError("RunConfig: ce_copies must be >= 0");
    metrics::WrConfig{alpha}.validate();
}

bool RunConfig::uses_ce() const {
    return std::find(methods.begin(), methods.end(), "CE") != methods.end();
}

std::vector<losses::XilLossSpec> RunConfig::xil_specs() const {
    // canonical order keeps the combined-loss accumulation deterministic
    std::vector<losses::XilLossSpec> specs;
    for (losses::Method m :
         {losses::Method::RRR, losses::Method::RRR_G, losses::Method::RBR, losses::Method::HINT}) {
        const char* name = losses::method_name(m);
        if (std::find(methods.begin(), methods.end(), name) == methods.end()) continue;
        losses::XilLossSpec spec;
        spec.method = m;
        auto it = lambdas.find(name);
        spec.lambda = it == lambdas.end() ? -1.0 : it->second;
        specs.push_back(spec);
    }
    return specs;
}

model::TrainConfig RunConfig::train_config(std::uint64_t seed) const {
    model::TrainConfig tc = desk ? model::TrainConfig::desk_scale() : model::TrainConfig{};
    tc.seed = seed;
    tc.xil_specs = xil_specs();
    if (epochs_override > 0) tc.epochs = epochs_override;
    if (subset_override >= 0) tc.subset = subset_override;
    return tc;
}

std::string config_hash(const RunConfig& cfg) {
    const std::string dump = config_to_json(cfg).dump();
    // FNV-1a
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : dump) {
        h ^= c;
        h *= 1099511628211ull;
    }
    std::ostringstream os;
    os << std::hex << h;
    return os.str();
}

std::string resolve_data_dir(const std::string& configured) {
    if (!configured.empty()) return configured;
    if (const char* env = std::getenv("XILAB_DATA_DIR"); env && *env) return env;
    return "data";
}

std::pair<datasets::Dataset, datasets::Dataset> load_dataset(DatasetKind kind,
                                                             const std::string& data_dir) {
    const std::string sub = kind == DatasetKind::DecoyFmnist ? "fmnist" : "mnist";
    const std::string base = data_dir + "/" + sub;
    const std::string train_images = base + "/train-images-idx3-ubyte";
    const std::string train_labels = base + "/train-labels-idx1-ubyte";
    const std::string test_images = base + "/t10k-images-idx3-ubyte";
    const std::string test_labels = base + "/t10k-labels-idx1-ubyte";
    for (const auto& p : {train_images, train_labels, test_images, test_labels})
        if (!std::filesystem::exists(p))
            throw DataError("missing data file " + p + " (run `xilab fetch-data` first)");

    datasets::Dataset train = datasets::load_idx(train_images, train_labels);
    datasets::Dataset test = datasets::load_idx(test_images, test_labels);
    if (kind == DatasetKind::Clean) return {std::move(train), std::move(test)};

    datasets::DecoyConfig decoy = datasets::DecoyConfig::defaults();
    rng::Engine train_rng(kTrainDecoySeed), test_rng(kTestDecoySeed);
    datasets::Dataset dtrain = datasets::inject_decoy(train, decoy, datasets::Split::Train, train_rng);
    datasets::Dataset dtest = datasets::inject_decoy(test, decoy, datasets::Split::Test, test_rng);
    return {std::move(dtrain), std::move(dtest)};
}

std::string RunResult::label() const {
    if (config.dataset == DatasetKind::Clean) return "w/o decoy";
    if (config.methods.empty()) return "Vanilla";
    std::string out;
    for (const auto& m : config.methods) {
        if (!out.empty()) out += "+";
        out += m;
    }
    return out;
}

RunResult run_experiment(const RunConfig& cfg) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();

    const std::string data_dir = resolve_data_dir(cfg.data_dir);
    auto [train_set, test_set] = load_dataset(cfg.dataset, data_dir);
    if (cfg.uses_ce()) {
        rng::Engine ce_rng(kCeSeed);
        train_set = datasets::make_counterexamples(train_set, cfg.ce_fill, cfg.ce_copies, ce_rng);
    }

    RunResult result;
    result.config = cfg;
    result.config_hash = config_hash(cfg);

    auto persist = [&result](const std::string& out_dir) {
        if (out_dir.empty()) return;
        save_run_result(result, out_dir + "/run-" + result.config_hash + ".json");
    };

    for (std::uint64_t seed : cfg.seeds) {
        try {
            model::CnnModel m = model::build_cnn(seed);
            model::TrainResult trained = model::train(m, train_set, cfg.train_config(seed));

            SeedResult sr;
            sr.seed = seed;
            sr.train_acc = trained.history.back().train_acc * 100.0;
            sr.test_acc = model::evaluate(trained.model, test_set) * 100.0;
            if (cfg.compute_wr && cfg.dataset != DatasetKind::Clean) {
                metrics::WrTable wr = metrics::wr_table(trained.model, test_set, kAllExplainers,
                                                        metrics::WrConfig{cfg.alpha}, cfg.wr_eval);
                for (std::size_t i = 0; i < wr.explainers.size(); ++i)
                    sr.wr[explainers::explainer_name(wr.explainers[i])] = wr.mean_wr[i];
            }
            result.per_seed.push_back(std::move(sr));
        } catch (const std::exception& e) {
            result.failed_seed = seed;
            result.wall_seconds =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            persist(cfg.out_dir);
            throw RunError("seed " + std::to_string(seed) + " failed: " + e.what());
        }
    }

    std::vector<double> train_accs, test_accs;
    for (const auto& sr : result.per_seed) {
        train_accs.push_back(sr.train_acc);
        test_accs.push_back(sr.test_acc);
    }
    result.mean_train_acc = mean_of(train_accs);
    result.sd_train_acc = sd_of(train_accs);
    result.mean_test_acc = mean_of(test_accs);
    result.sd_test_acc = sd_of(test_accs);
    if (!result.per_seed.empty()) {
        for (const auto& [name, _] : result.per_seed.front().wr) {
            std::vector<double> vals;
            for (const auto& sr : result.per_seed) vals.push_back(sr.wr.at(name));
            result.mean_wr[name] = mean_of(vals);
            result.sd_wr[name] = sd_of(vals);
        }
    }
    result.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    persist(cfg.out_dir);
    return result;
}

void save_run_result(const RunResult& result, const std::string& path) {
    json j;
    j["schema"] = "xilab-run/" + std::to_string(result.schema_version);
    j["config"] = config_to_json(result.config);
    j["config_hash"] = result.config_hash;
    j["label"] = result.label();
    j["wall_seconds"] = result.wall_seconds;
    if (result.failed_seed) j["failed_seed"] = *result.failed_seed;
    json seeds = json::array();
    for (const auto& sr : result.per_seed) {
        json s;
        s["seed"] = sr.seed;
        s["train_acc"] = sr.train_acc;
        s["test_acc"] = sr.test_acc;
        s["wr"] = sr.wr;
        seeds.push_back(std::move(s));
    }
    j["per_seed"] = std::move(seeds);
    j["mean_train_acc"] = result.mean_train_acc;
    j["sd_train_acc"] = result.sd_train_acc;
    j["mean_test_acc"] = result.mean_test_acc;
    j["sd_test_acc"] = result.sd_test_acc;
    j["mean_wr"] = result.mean_wr;
    j["sd_wr"] = result.sd_wr;

    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out << j.dump(2) << '\n';
}

RunResult load_run_result(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw DataError(path + ": invalid result file: " + e.what());
    }
    RunResult result;
    const std::string schema = j.at("schema").get<std::string>();
    if (schema != "xilab-run/1") throw DataError(path + ": unsupported schema " + schema);
    result.schema_version = 1;
    result.config = config_from_json(j.at("config"));
    result.config_hash = j.at("config_hash").get<std::string>();
    result.wall_seconds = j.at("wall_seconds").get<double>();
    if (j.contains("failed_seed")) result.failed_seed = j.at("failed_seed").get<std::uint64_t>();
    for (const auto& s : j.at("per_seed")) {
        SeedResult sr;
        sr.seed = s.at("seed").get<std::uint64_t>();
        sr.train_acc = s.at("train_acc").get<double>();
        sr.test_acc = s.at("test_acc").get<double>();
        sr.wr = s.at("wr").get<std::map<std::string, double>>();
        result.per_seed.push_back(std::move(sr));
    }
    result.mean_train_acc = j.at("mean_train_acc").get<double>();
    result.sd_train_acc = j.at("sd_train_acc").get<double>();
    result.mean_test_acc = j.at("mean_test_acc").get<double>();
    result.sd_test_acc = j.at("sd_test_acc").get<double>();
    result.mean_wr = j.at("mean_wr").get<std::map<std::string, double>>();
    result.sd_wr = j.at("sd_wr").get<std::map<std::string, double>>();
    return result;
}

std::string emit_table(std::span<const RunResult> results, TableLayout layout,
                       TableFormat format) {
    if (results.empty()) throw ConfigError("emit_table: no results");
    for (const auto& r : results) {
        if (r.config.dataset != results.front().config.dataset &&
            r.config.dataset != DatasetKind::Clean &&
            results.front().config.dataset != DatasetKind::Clean)
            throw ConfigError("emit_table: results mix datasets");
        if (r.config.alpha != results.front().config.alpha)
            throw ConfigError("emit_table: results mix alpha settings");
    }

    auto cell = [](double mean, double sd) { return two_decimals(mean) + " +- " + two_decimals(sd); };

    std::vector<std::vector<std::string>> rows;
    if (layout == TableLayout::Accuracy) {
        rows.push_back({"method", "train", "test"});
        for (const auto& r : results)
            rows.push_back({r.label(), cell(r.mean_train_acc, r.sd_train_acc),
                            cell(r.mean_test_acc, r.sd_test_acc)});
    } else {
        std::vector<std::string> header{"explainer"};
        for (const auto& r : results) header.push_back(r.label());
        rows.push_back(std::move(header));
        for (const auto* name : {"IG", "GradCAM", "IntGrad", "LIME"}) {
            std::vector<std::string> row{name};
            bool any = false;
            for (const auto& r : results) {
                auto it = r.mean_wr.find(name);
                if (it == r.mean_wr.end()) {
                    row.push_back("-");
                } else {
                    row.push_back(cell(it->second, r.sd_wr.at(name)));
                    any = true;
                }
            }
            if (any) rows.push_back(std::move(row));
        }
    }

    std::ostringstream os;
    if (format == TableFormat::Csv) {
        for (const auto& row : rows) {
            for (std::size_t i = 0; i < row.size(); ++i) {
                if (i) os << ',';
                os << row[i];
            }
            os << '\n';
        }
    } else {
        std::vector<std::size_t> width(rows.front().size(), 0);
        for (const auto& row : rows)
            for (std::size_t i = 0; i < row.size(); ++i)
                width[i] = std::max(width[i], row[i].size());
        for (const auto& row : rows) {
            for (std::size_t i = 0; i < row.size(); ++i) {
                if (i) os << "  ";
                os << row[i] << std::string(width[i] - row[i].size(), ' ');
            }
            os << '\n';
        }
    }
    return os.str();
}

Comparison compare(const RunResult& a, const RunResult& b) {
    if (a.config.dataset != b.config.dataset)
        throw ConfigError("compare: results come from different datasets");
    std::vector<std::string> a_names, b_names;
    for (const auto& [n, _] : a.mean_wr) a_names.push_back(n);
    for (const auto& [n, _] : b.mean_wr) b_names.push_back(n);
    if (a_names != b_names)
        throw ConfigError("compare: results cover different explainer sets");

    Comparison c;
    c.label_a = a.label();
    c.label_b = b.label();
    auto delta = [](const std::string& row, double ma, double sa, double mb, double sb) {
        CellDelta d;
        d.row = row;
        d.delta = mb - ma;
        d.combined_sd = sa + sb;
        d.significant = std::fabs(d.delta) > d.combined_sd;
        return d;
    };
    c.accuracy.push_back(delta("train_acc", a.mean_train_acc, a.sd_train_acc, b.mean_train_acc,
                               b.sd_train_acc));
    c.accuracy.push_back(
        delta("test_acc", a.mean_test_acc, a.sd_test_acc, b.mean_test_acc, b.sd_test_acc));
    for (const auto& name : a_names)
        c.wr.push_back(delta("WR(" + name + ")", a.mean_wr.at(name), a.sd_wr.at(name),
                             b.mean_wr.at(name), b.sd_wr.at(name)));
    return c;
}

std::string render_comparison(const Comparison& c) {
    std::ostringstream os;
    os << "delta = " << c.label_b << " - " << c.label_a << "\n";
    auto line = [&os](const CellDelta& d) {
        os << "  " << d.row << ": " << two_decimals(d.delta, 2) << " (combined sd "
           << two_decimals(d.combined_sd, 2) << ")" << (d.significant ? " *" : "") << "\n";
    };
    for (const auto& d : c.accuracy) line(d);
    for (const auto& d : c.wr) line(d);
    return os.str();
}

} // namespace xilab::harness
