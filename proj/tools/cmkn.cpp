// Command-line interface for the convolutional motif kernel toolkit:
// synthetic data generation, training, cross-validated grid search,
// evaluation, Gram export, interpretation reports and HIVdb conversion.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cmkn/common.hpp"
#include "cmkn/cv.hpp"
#include "cmkn/interpret.hpp"
#include "cmkn/kernel.hpp"
#include "cmkn/metrics.hpp"
#include "cmkn/network.hpp"
#include "cmkn/nystroem.hpp"
#include "cmkn/seqdata.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw cmkn::data_error("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& path, const std::string& content, bool force) {
    if (fs::exists(path) && !force)
        throw cmkn::config_error("refusing to overwrite '" + path.string() +
                                 "' (use --force)");
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw cmkn::data_error("cannot open '" + path.string() + "' for writing");
    out << content;
    if (!out) throw cmkn::data_error("failed writing '" + path.string() + "'");
}

json load_json(const std::string& path) {
    try {
        return json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw cmkn::config_error("config '" + path + "' is not valid JSON: " + e.what());
    }
}

std::string config_digest(const json& j) {
    const std::string s = j.dump();
    return cmkn::hex64(cmkn::fnv1a64(s.data(), s.size()));
}

cmkn::TrainConfig train_config_from_json(const json& j) {
    cmkn::TrainConfig tc;
    if (j.contains("epochs")) tc.epochs = j.at("epochs").get<int>();
    if (j.contains("lr")) tc.lr = j.at("lr").get<double>();
    if (j.contains("factor")) tc.factor = j.at("factor").get<double>();
    if (j.contains("patience")) tc.patience = j.at("patience").get<int>();
    if (j.contains("min_lr")) tc.min_lr = j.at("min_lr").get<double>();
    if (j.contains("rel_threshold")) tc.rel_threshold = j.at("rel_threshold").get<double>();
    if (j.contains("loss")) tc.loss = cmkn::loss_kind_from_name(j.at("loss").get<std::string>());
    if (j.contains("cb_beta")) tc.cb_beta = j.at("cb_beta").get<double>();
    if (j.contains("batch_size")) tc.batch_size = j.at("batch_size").get<int>();
    if (j.contains("freeze_positions"))
        tc.freeze_positions = j.at("freeze_positions").get<bool>();
    if (j.contains("detach_inv_sqrt"))
        tc.detach_inv_sqrt = j.at("detach_inv_sqrt").get<bool>();
    tc.validate();
    return tc;
}

json train_config_to_json(const cmkn::TrainConfig& tc) {
    return json{{"epochs", tc.epochs},
                {"lr", tc.lr},
                {"factor", tc.factor},
                {"patience", tc.patience},
                {"min_lr", tc.min_lr},
                {"rel_threshold", tc.rel_threshold},
                {"loss", cmkn::loss_kind_name(tc.loss)},
                {"cb_beta", tc.cb_beta},
                {"batch_size", tc.batch_size},
                {"freeze_positions", tc.freeze_positions},
                {"detach_inv_sqrt", tc.detach_inv_sqrt}};
}

// Kernel block: sigma may be absent (grid-searched), beta may be the string
// "auto" meaning |x|^2 / 10 for the dataset's sequence length.
cmkn::KernelParams kernel_from_json(const json& j, int seq_length, double sigma_override = 0.0) {
    const int k = j.at("k").get<int>();
    const double alpha = j.at("alpha").get<double>();
    double beta;
    if (j.at("beta").is_string()) {
        if (j.at("beta").get<std::string>() != "auto")
            throw cmkn::config_error("kernel.beta must be a number or \"auto\"");
        beta = cmkn::default_beta(seq_length);
    } else {
        beta = j.at("beta").get<double>();
    }
    const double sigma =
        sigma_override > 0.0 ? sigma_override : j.at("sigma").get<double>();
    return cmkn::KernelParams(k, alpha, beta, sigma);
}

cmkn::LabeledDataset load_dataset(const std::string& path, const std::string& alphabet,
                                  bool labels_required = true) {
    return cmkn::parse_fasta(read_file(path), cmkn::Alphabet::by_name(alphabet),
                             labels_required);
}

std::string history_csv(const std::vector<cmkn::EpochStats>& history) {
    std::string csv = "epoch,loss,lr,train_accuracy\n";
    for (const auto& e : history)
        csv += std::to_string(e.epoch) + "," + cmkn::fmt_double(e.loss) + "," +
               cmkn::fmt_double(e.lr) + "," + cmkn::fmt_double(e.train_accuracy) + "\n";
    return csv;
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

struct CommonOpts {
    std::string out_dir;
    std::uint64_t seed = 0;
    bool seed_set = false;
    bool force = false;
    int threads = 1;
};

int cmd_synth(const std::string& config_path, const CommonOpts& opts) {
    json cfg_json = config_path.empty()
                        ? cmkn::synthetic_config_to_json(cmkn::default_synthetic_config())
                        : load_json(config_path);
    std::uint64_t seed = cfg_json.value("seed", 1ULL);
    if (opts.seed_set) seed = opts.seed;
    cfg_json.erase("seed");
    const cmkn::SyntheticConfig cfg = cmkn::synthetic_config_from_json(cfg_json);

    cmkn::SplitRng rng(seed);
    const cmkn::LabeledDataset ds = cmkn::generate_synthetic(cfg, rng);

    json resolved = cmkn::synthetic_config_to_json(cfg);
    resolved["seed"] = seed;
    json truth;
    truth["config"] = cmkn::synthetic_config_to_json(cfg);
    truth["seed"] = seed;
    truth["classes"] = json::array();
    for (const auto& cls : cfg.classes) {
        std::string argmax;
        for (const auto& dist : cls.consensus) {
            char best = dist.begin()->first;
            double bestp = dist.begin()->second;
            for (const auto& [sym, p] : dist)
                if (p > bestp) {
                    best = sym;
                    bestp = p;
                }
            argmax.push_back(best);
        }
        truth["classes"].push_back({{"name", cls.name},
                                    {"center", cls.center},
                                    {"jitter", cls.jitter},
                                    {"consensus_argmax", argmax}});
    }

    const fs::path dir(opts.out_dir);
    write_file(dir / "data.fasta", cmkn::write_fasta(ds), opts.force);
    write_file(dir / "truth.json", truth.dump(2) + "\n", opts.force);
    write_file(dir / "config.json", resolved.dump(2) + "\n", opts.force);
    std::cout << "wrote " << ds.sequences.size() << " sequences to "
              << (dir / "data.fasta").string() << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const CommonOpts& opts) {
    json cfg = load_json(config_path);
    std::uint64_t seed = cfg.value("seed", 1ULL);
    if (opts.seed_set) seed = opts.seed;

    const cmkn::LabeledDataset ds =
        load_dataset(cfg.at("dataset").get<std::string>(), cfg.at("alphabet").get<std::string>());
    if (ds.sequences.empty()) throw cmkn::data_error("dataset is empty");
    const int L = ds.sequences.front().length();

    cmkn::ModelConfig mc;
    mc.kernel = kernel_from_json(cfg.at("kernel"), L);
    mc.n_anchors = cfg.at("anchors").get<int>();
    mc.sample_m = cfg.value("sample_m", 0);
    mc.hidden = cfg.value("hidden", std::vector<int>{});
    cmkn::TrainConfig tc = train_config_from_json(cfg.value("train", json::object()));
    tc.seed = seed;

    json resolved = cfg;
    resolved["seed"] = seed;
    resolved["train"] = train_config_to_json(tc);
    resolved["kernel"] = {{"k", mc.kernel.k},
                          {"alpha", mc.kernel.alpha},
                          {"beta", mc.kernel.beta},
                          {"sigma", mc.kernel.sigma}};

    auto [model, history] = cmkn::train(ds, mc, tc, cmkn::SplitRng(seed));
    model.meta.config_hash = config_digest(resolved);

    const fs::path dir(opts.out_dir);
    write_file(dir / "config.json", resolved.dump(2) + "\n", opts.force);
    write_file(dir / "model.json", cmkn::model_to_json(model).dump(2) + "\n", opts.force);
    write_file(dir / "history.csv", history_csv(history), opts.force);
    std::cout << "trained " << tc.epochs << " epochs; final loss "
              << cmkn::fmt_double(history.back().loss) << "\n";
    return 0;
}

int cmd_cv(const std::string& config_path, const CommonOpts& opts) {
    json cfg = load_json(config_path);
    std::uint64_t seed = cfg.value("seed", 1ULL);
    if (opts.seed_set) seed = opts.seed;

    const cmkn::LabeledDataset ds =
        load_dataset(cfg.at("dataset").get<std::string>(), cfg.at("alphabet").get<std::string>());
    const int L = ds.sequences.front().length();
    const int folds = cfg.value("folds", 5);
    const double threshold = cfg.value("threshold", 0.5);

    const json& grid = cfg.at("grid");
    const auto sigma_grid = grid.at("sigma").get<std::vector<double>>();
    const auto anchor_grid = grid.at("anchors").get<std::vector<int>>();

    // Placeholder sigma; the grid supplies the real one per point.
    cmkn::KernelParams base = kernel_from_json(cfg.at("kernel"), L, sigma_grid.front());
    cmkn::TrainConfig tc = train_config_from_json(cfg.value("train", json::object()));
    const auto hidden = cfg.value("hidden", std::vector<int>{200});
    const int sample_m = cfg.value("sample_m", 0);

    json resolved = cfg;
    resolved["seed"] = seed;
    resolved["folds"] = folds;
    resolved["threshold"] = threshold;
    resolved["train"] = train_config_to_json(tc);
    resolved["hidden"] = hidden;

    const cmkn::CvOutcome outcome =
        cmkn::run_cv(ds, base, hidden, sample_m, tc, sigma_grid, anchor_grid, folds,
                     threshold, seed, opts.threads);

    std::string folds_csv = "sigma,anchors,fold," + cmkn::metrics_csv_header() + "\n";
    for (const auto& res : outcome.results)
        for (std::size_t f = 0; f < res.fold_reports.size(); ++f)
            folds_csv += cmkn::fmt_double(res.point.sigma) + "," +
                         std::to_string(res.point.anchors) + "," + std::to_string(f + 1) +
                         "," + cmkn::metrics_csv_row(res.fold_reports[f]) + "\n";

    std::string summary_csv =
        "sigma,anchors,wins,accuracy_mean,accuracy_std,f1_mean,f1_std,mcc_mean,mcc_std,"
        "auroc_mean,auroc_std,auprc_mean,auprc_std,fold_hash\n";
    for (const auto& res : outcome.results) {
        const auto& s = res.summary;
        summary_csv += cmkn::fmt_double(res.point.sigma) + "," +
                       std::to_string(res.point.anchors) + "," + std::to_string(res.wins) +
                       "," + cmkn::fmt_double(s.accuracy_mean) + "," +
                       cmkn::fmt_double(s.accuracy_std) + "," + cmkn::fmt_double(s.f1_mean) +
                       "," + cmkn::fmt_double(s.f1_std) + "," + cmkn::fmt_double(s.mcc_mean) +
                       "," + cmkn::fmt_double(s.mcc_std) + "," +
                       cmkn::fmt_double(s.auroc_mean) + "," + cmkn::fmt_double(s.auroc_std) +
                       "," + cmkn::fmt_double(s.auprc_mean) + "," +
                       cmkn::fmt_double(s.auprc_std) + "," + cmkn::hex64(res.fold_hash) + "\n";
    }

    const auto& best = outcome.results[outcome.best_index];
    json selection = {{"sigma", best.point.sigma},
                      {"anchors", best.point.anchors},
                      {"wins", best.wins},
                      {"mcc_mean", best.summary.mcc_mean},
                      {"accuracy_mean", best.summary.accuracy_mean},
                      {"f1_mean", best.summary.f1_mean},
                      {"auroc_mean", best.summary.auroc_mean}};

    const fs::path dir(opts.out_dir);
    write_file(dir / "config.json", resolved.dump(2) + "\n", opts.force);
    write_file(dir / "cv_folds.csv", folds_csv, opts.force);
    write_file(dir / "cv_summary.csv", summary_csv, opts.force);
    write_file(dir / "selection.json", selection.dump(2) + "\n", opts.force);
    std::cout << "best: sigma=" << best.point.sigma << " anchors=" << best.point.anchors
              << " (wins " << best.wins << ", mcc "
              << cmkn::fmt_double(best.summary.mcc_mean) << ")\n";
    return 0;
}

int cmd_eval(const std::string& model_path, const std::string& data_path,
             const std::string& alphabet, double threshold, const std::string& format,
             const CommonOpts& opts) {
    const cmkn::CmknModel model = cmkn::load_model(model_path);
    const std::string alpha_name = alphabet.empty() ? model.alphabet.name : alphabet;
    const cmkn::LabeledDataset ds = load_dataset(data_path, alpha_name);
    std::vector<int> labels;
    std::vector<double> scores;
    for (const auto& s : ds.sequences) {
        labels.push_back(s.label);
        scores.push_back(cmkn::score_positive(model, s));
    }
    const cmkn::MetricsReport report = cmkn::compute_metrics(labels, scores, threshold);

    json resolved = {{"model", model_path},
                     {"dataset", data_path},
                     {"alphabet", alpha_name},
                     {"threshold", threshold},
                     {"format", format}};
    const fs::path dir(opts.out_dir);
    write_file(dir / "config.json", resolved.dump(2) + "\n", opts.force);
    if (format == "json" || format == "both")
        write_file(dir / "metrics.json", cmkn::metrics_to_json(report).dump(2) + "\n",
                   opts.force);
    if (format == "csv" || format == "both")
        write_file(dir / "metrics.csv",
                   cmkn::metrics_csv_header() + "\n" + cmkn::metrics_csv_row(report) + "\n",
                   opts.force);
    std::cout << "accuracy " << cmkn::fmt_double(report.accuracy) << ", mcc "
              << cmkn::fmt_double(report.mcc) << "\n";
    return 0;
}

int cmd_gram(const std::string& data_path, const std::string& alphabet, int k, double alpha,
             const std::string& beta_str, double sigma, const std::string& format,
             const CommonOpts& opts) {
    const cmkn::LabeledDataset ds = load_dataset(data_path, alphabet, format == "svm");
    if (ds.sequences.empty()) throw cmkn::data_error("dataset is empty");
    double beta;
    if (beta_str == "auto")
        beta = cmkn::default_beta(ds.sequences.front().length());
    else
        beta = std::stod(beta_str);
    const cmkn::KernelParams params(k, alpha, beta, sigma);
    const Eigen::MatrixXd g = cmkn::gram(ds, params, opts.threads);

    json resolved = {{"dataset", data_path}, {"alphabet", alphabet},
                     {"k", k},               {"alpha", alpha},
                     {"beta", beta},         {"sigma", sigma},
                     {"format", format}};
    const fs::path dir(opts.out_dir);
    write_file(dir / "config.json", resolved.dump(2) + "\n", opts.force);
    std::ostringstream out;
    if (format == "svm") {
        std::vector<int> labels;
        for (const auto& s : ds.sequences) labels.push_back(s.label);
        cmkn::write_gram_svm(g, labels, out);
        write_file(dir / "gram.svm", out.str(), opts.force);
    } else {
        cmkn::write_gram_csv(g, out);
        write_file(dir / "gram.csv", out.str(), opts.force);
    }
    std::cout << "gram " << g.rows() << "x" << g.cols() << " written\n";
    return 0;
}

int cmd_interpret(const std::string& model_path, const std::string& data_path, int window,
                  int top, const CommonOpts& opts) {
    const cmkn::CmknModel model = cmkn::load_model(model_path);
    const cmkn::GlobalReport rep = cmkn::global_report(model, window, top);

    const fs::path dir(opts.out_dir);
    json resolved = {{"model", model_path},
                     {"data", data_path},
                     {"window", window},
                     {"top", top}};
    write_file(dir / "config.json", resolved.dump(2) + "\n", opts.force);
    write_file(dir / "global_report.json",
               cmkn::global_report_to_json(model, rep).dump(2) + "\n", opts.force);
    write_file(dir / "global_report.csv", cmkn::global_report_to_csv(model, rep), opts.force);

    for (int c = 0; c < model.num_classes(); ++c)
        for (std::size_t r = 0; r < rep.peak_motifs[c].size(); ++r) {
            const auto& mm = rep.peak_motifs[c][r];
            if (mm.empty) continue;
            write_file(dir / "logos" /
                           cmkn::strf("logo_%s_p%03d.svg", model.class_names[c].c_str(),
                                      mm.position),
                       cmkn::emit_logo(mm.matrix, model.alphabet), opts.force);
        }

    if (!data_path.empty()) {
        // Local reports target the union of the classes' top peak positions.
        std::vector<int> positions;
        for (int c = 0; c < model.num_classes(); ++c)
            for (std::size_t r = 0; r < rep.peak_motifs[c].size(); ++r)
                positions.push_back(rep.peaks[c][r].position);
        std::sort(positions.begin(), positions.end());
        positions.erase(std::unique(positions.begin(), positions.end()), positions.end());

        const cmkn::LabeledDataset inputs =
            load_dataset(data_path, model.alphabet.name, false);
        json local = json::array();
        for (const auto& s : inputs.sequences) {
            const cmkn::LocalReport lr = cmkn::local_report(model, s, positions);
            json jr = cmkn::local_report_to_json(model, lr);
            const Eigen::VectorXd probs = cmkn::predict(model, s);
            int arg = 0;
            probs.maxCoeff(&arg);
            jr["predicted_class"] = model.class_names[arg];
            jr["probabilities"] = std::vector<double>(probs.data(), probs.data() + probs.size());
            if (s.label >= 0) jr["true_class"] = model.class_names[s.label];
            local.push_back(jr);
        }
        write_file(dir / "local_reports.json", local.dump(2) + "\n", opts.force);
    }
    std::cout << "interpretation written to " << dir.string() << "\n";
    return 0;
}

int cmd_hivdb(const std::string& table_path, const std::string& reference_path,
              const std::string& drug, double low, double high, const CommonOpts& opts) {
    std::string reference = read_file(reference_path);
    // Accept FASTA or raw one-line references.
    std::string cleaned;
    std::istringstream in(reference);
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line[0] == '>') continue;
        for (char c : line)
            if (!std::isspace(static_cast<unsigned char>(c))) cleaned.push_back(c);
    }
    const std::string fasta =
        cmkn::convert_hivdb(read_file(table_path), cleaned, low, high, drug);
    json resolved = {{"table", table_path}, {"reference", reference_path},
                     {"drug", drug},        {"low", low},
                     {"high", high}};
    const fs::path dir(opts.out_dir);
    write_file(dir / "config.json", resolved.dump(2) + "\n", opts.force);
    write_file(dir / "converted.fasta", fasta, opts.force);
    std::cout << "converted table for " << drug << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Convolutional motif kernel networks"};
    app.require_subcommand(1);

    CommonOpts opts;
    std::string config_path, model_path, data_path, alphabet = "dna";
    std::string format = "both", beta_str = "auto", table_path, reference_path, drug;
    double threshold = 0.5, alpha = 1.0, sigma = 1.0, low = 3.0, high = 15.0;
    int k = 1, window = 11, top = 10;

    auto add_common = [&](CLI::App* cmd, bool with_threads = false) {
        cmd->add_option("--out-dir", opts.out_dir, "output directory")->required();
        cmd->add_option("--seed", opts.seed, "seed override")
            ->each([&](const std::string&) { opts.seed_set = true; });
        cmd->add_flag("--force", opts.force, "overwrite existing outputs");
        if (with_threads)
            cmd->add_option("--threads", opts.threads, "worker threads")
                ->check(CLI::PositiveNumber);
    };

    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    synth->add_option("--config", config_path, "synthetic config JSON");
    add_common(synth);

    auto* train = app.add_subcommand("train", "train one model");
    train->add_option("--config", config_path, "train config JSON")->required();
    add_common(train);

    auto* cv = app.add_subcommand("cv", "cross-validated grid search");
    cv->add_option("--config", config_path, "cv config JSON")->required();
    add_common(cv, true);

    auto* eval = app.add_subcommand("eval", "evaluate a model on a dataset");
    eval->add_option("--model", model_path, "model JSON")->required();
    eval->add_option("--data", data_path, "FASTA dataset")->required();
    eval->add_option("--alphabet", alphabet, "dna or protein (default: model's)")
        ->default_val("");
    eval->add_option("--threshold", threshold, "decision threshold");
    eval->add_option("--format", format, "csv, json or both")
        ->check(CLI::IsMember({"csv", "json", "both"}));
    add_common(eval);

    auto* gram_cmd = app.add_subcommand("gram", "export a PAM Gram matrix");
    gram_cmd->add_option("--data", data_path, "FASTA dataset")->required();
    gram_cmd->add_option("--alphabet", alphabet, "dna or protein");
    gram_cmd->add_option("--k", k, "motif length");
    gram_cmd->add_option("--alpha", alpha, "motif sharpness");
    gram_cmd->add_option("--beta", beta_str, "position scale or 'auto'");
    gram_cmd->add_option("--sigma", sigma, "positional uncertainty");
    gram_cmd->add_option("--format", format, "csv or svm")
        ->check(CLI::IsMember({"csv", "svm"}))
        ->default_val("csv");
    add_common(gram_cmd, true);

    auto* interp = app.add_subcommand("interpret", "interpretation reports and logos");
    interp->add_option("--model", model_path, "model JSON")->required();
    interp->add_option("--data", data_path, "optional FASTA for local reports");
    interp->add_option("--window", window, "peak detection window (odd)");
    interp->add_option("--top", top, "number of peaks to report");
    add_common(interp);

    auto* hivdb = app.add_subcommand("hivdb-convert", "HIVdb table to labeled FASTA");
    hivdb->add_option("--table", table_path, "tab-separated HIVdb export")->required();
    hivdb->add_option("--reference", reference_path, "wildtype reference (FASTA or raw)")
        ->required();
    hivdb->add_option("--drug", drug, "drug column name")->required();
    hivdb->add_option("--low", low, "lower fold-resistance threshold")->required();
    hivdb->add_option("--high", high, "upper fold-resistance threshold")->required();
    add_common(hivdb);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        if (synth->parsed()) return cmd_synth(config_path, opts);
        if (train->parsed()) return cmd_train(config_path, opts);
        if (cv->parsed()) return cmd_cv(config_path, opts);
        if (eval->parsed())
            return cmd_eval(model_path, data_path, alphabet, threshold,
                            format == "" ? "both" : format, opts);
        if (gram_cmd->parsed())
            return cmd_gram(data_path, alphabet, k, alpha, beta_str, sigma, format, opts);
        if (interp->parsed()) return cmd_interpret(model_path, data_path, window, top, opts);
        if (hivdb->parsed())
            return cmd_hivdb(table_path, reference_path, drug, low, high, opts);
    } catch (const cmkn::config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const cmkn::data_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const cmkn::numeric_error& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumeric;
    }
    return 0;
}
