#include "ridnoise/cli.hpp"

#include "ridnoise/errors.hpp"
#include "ridnoise/seeding.hpp"
#include "ridnoise/tasks.hpp"

#include "CLI11.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <ostream>

namespace ridnoise {

namespace fs = std::filesystem;

NoiseSpec RunConfig::noise_spec() const {
    NoiseSpec spec = default_noise(task, noise_mode);
    if (noise) {
        spec.sigma_x = noise->sigma_x;
        spec.sigma_y = noise->sigma_y;
        spec.alpha = noise->alpha;
    }
    return spec;
}

json to_json(const RunConfig& c) {
    return json{{"task", to_string(c.task)},
                {"noise", to_json(c.noise_spec())},
                {"n", c.n},
                {"seed", c.seed},
                {"threads", c.threads},
                {"weighting", to_json(c.weighting)},
                {"architecture", to_json(c.architecture)},
                {"training", to_json(c.training)},
                {"eval", to_json(c.eval)},
                {"n_per_target", c.n_per_target}};
}

void update_from_json(const json& j, RunConfig& c) {
    if (!j.is_object()) throw IoError("run config must be a JSON object");
    if (j.contains("task")) c.task = parse_task_name(j.at("task").get<std::string>());
    if (j.contains("noise")) {
        const json& n = j.at("noise");
        if (n.is_string()) {
            c.noise_mode = parse_noise_mode(n.get<std::string>());
        } else {
            if (n.contains("mode")) c.noise_mode = parse_noise_mode(n.at("mode").get<std::string>());
            NoiseSpec spec = c.noise_spec();
            update_from_json(n, spec);
            c.noise = spec;
        }
    }
    auto take = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
    };
    auto take_path = [&](const char* key, fs::path& field) {
        if (j.contains(key)) field = j.at(key).get<std::string>();
    };
    take("n", c.n);
    take("seed", c.seed);
    take("threads", c.threads);
    take("n_per_target", c.n_per_target);
    take_path("out", c.out);
    take_path("dataset", c.dataset);
    take_path("weights", c.weights);
    take_path("model", c.model);
    take_path("baseline", c.baseline);
    take_path("targets", c.targets);
    if (j.contains("weighting")) update_from_json(j.at("weighting"), c.weighting);
    if (j.contains("architecture")) update_from_json(j.at("architecture"), c.architecture);
    if (j.contains("training")) update_from_json(j.at("training"), c.training);
    if (j.contains("eval")) update_from_json(j.at("eval"), c.eval);
}

namespace {

json artifact_header(std::string_view kind, const RunConfig& cfg) {
    return json{{"format_version", kFormatVersion}, {"kind", kind}, {"run_config", to_json(cfg)}};
}

fs::path prepare_out(const RunConfig& cfg) {
    std::error_code ec;
    fs::create_directories(cfg.out, ec);
    if (ec || !fs::is_directory(cfg.out)) throw IoError("cannot create output directory " + cfg.out.string());
    return cfg.out;
}

const fs::path& require_path(const fs::path& p, std::string_view what) {
    if (p.empty()) throw DataError(std::string("missing --") + std::string(what));
    return p;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

struct LoadedModel {
    FlowModel model;
    std::string checksum;
};

LoadedModel load_model(const fs::path& path) {
    const std::string text = read_text(path);
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw IoError(path.string() + ": " + e.what());
    }
    return {flow_from_json(j), checksum_hex(text)};
}

}  // namespace

GenerateResult cmd_generate(const RunConfig& cfg, std::ostream& out) {
    if (cfg.n == 0) throw DataError("n must be >= 1");
    const fs::path dir = prepare_out(cfg);
    const TaskSpec task = make_task(cfg.task);
    const Dataset d = generate_dataset(task, cfg.noise_spec(), cfg.n, derive_seed(cfg.seed, "generate"));
    const DatasetFiles files = write_dataset(dir / "dataset.jsonl", d);
    // Attach the run config to the sidecar written by write_dataset.
    json meta = read_json(dir / "dataset.meta.json");
    meta["run_config"] = to_json(cfg);
    write_json(dir / "dataset.meta.json", meta);
    out << "rows " << d.size() << " checksum " << files.checksum << "\n";
    return {d.size(), files.checksum};
}

WeightsResult cmd_weights(const RunConfig& cfg, std::ostream& out) {
    const fs::path& data_path = require_path(cfg.dataset, "dataset");
    const std::string data_checksum = checksum_hex(read_text(data_path));
    const Dataset d = read_dataset(data_path);
    WeightConfig wc = cfg.weighting;
    wc.training.seed = derive_seed(cfg.seed, "weights");
    wc.threads = cfg.threads;
    wc.validate();

    std::vector<double> w;
    json robustness = nullptr;
    if (wc.tau == 0.0) {
        // exp(0) = 1 for every sample whatever r is.
        w.assign(d.size(), 1.0 + wc.eps);
    } else {
        const RobustnessEstimate est = estimate_sample_robustness(d, wc);
        w = robustness_to_weights(est.r, wc.tau, wc.eps);
        robustness = est.r;
    }
    const fs::path dir = prepare_out(cfg);
    json j = artifact_header("weights", cfg);
    j["weight_config"] = to_json(wc);
    j["dataset_checksum"] = data_checksum;
    j["rows"] = d.size();
    j["weights"] = w;
    j["robustness"] = robustness;
    write_json(dir / "weights.json", j);

    const auto [lo, hi] = std::minmax_element(w.begin(), w.end());
    const double mean = std::accumulate(w.begin(), w.end(), 0.0) / static_cast<double>(w.size());
    out << "weights min " << fmt(*lo) << " mean " << fmt(mean) << " max " << fmt(*hi) << "\n";
    return {*lo, mean, *hi};
}

FlowFit cmd_train(const RunConfig& cfg, std::ostream& out) {
    const fs::path& data_path = require_path(cfg.dataset, "dataset");
    const std::string data_checksum = checksum_hex(read_text(data_path));
    const Dataset d = read_dataset(data_path);

    std::vector<double> w(d.size(), 1.0);
    json weights_checksum = nullptr;
    if (!cfg.weights.empty()) {
        const std::string text = read_text(cfg.weights);
        const json j = json::parse(text, nullptr, false);
        if (j.is_discarded() || !j.contains("weights")) throw IoError(cfg.weights.string() + " is not a weights file");
        if (j.contains("dataset_checksum") && j.at("dataset_checksum").get<std::string>() != data_checksum) {
            throw DataError("weights were computed for a different dataset");
        }
        w = j.at("weights").get<std::vector<double>>();
        if (w.size() != d.size()) {
            throw DataError("weights file has " + std::to_string(w.size()) + " entries for " +
                            std::to_string(d.size()) + " samples");
        }
        weights_checksum = checksum_hex(text);
    }

    WnllConfig tc = cfg.training;
    tc.seed = derive_seed(cfg.seed, "train");
    FlowModel model = make_flow(d.dx(), d.dy(), cfg.architecture, derive_seed(cfg.seed, "train/init"));
    FlowFit fit = train_flow_wnll(std::move(model), d, w, tc);

    const fs::path dir = prepare_out(cfg);
    json m = to_json(fit.model);
    m["kind"] = "flow_model";
    m["run_config"] = to_json(cfg);
    m["dataset_checksum"] = data_checksum;
    m["dataset_provenance"] = d.provenance ? to_json(*d.provenance) : json(nullptr);
    m["weights_checksum"] = weights_checksum;
    write_json(dir / "model.json", m);

    json t = artifact_header("trace", cfg);
    t["dataset_checksum"] = data_checksum;
    t["weights_checksum"] = weights_checksum;
    t["loss"] = fit.loss_trace;
    write_json(dir / "trace.json", t);

    out << "epochs " << fit.loss_trace.size() << " first loss " << fmt(fit.loss_trace.front())
        << " final loss " << fmt(fit.loss_trace.back()) << "\n";
    return fit;
}

void cmd_sample(const RunConfig& cfg, std::ostream& out) {
    const LoadedModel lm = load_model(require_path(cfg.model, "model"));
    const fs::path& target_path = require_path(cfg.targets, "targets");
    const Matrix targets = read_targets(target_path);
    if (cfg.n_per_target == 0) throw DataError("n-per-target must be >= 1");
    const Matrix x = flow_sample(lm.model, targets, cfg.n_per_target, derive_seed(cfg.seed, "sample"));

    std::string body;
    for (std::size_t i = 0; i < targets.rows(); ++i) {
        json samples = json::array();
        for (std::size_t k = 0; k < cfg.n_per_target; ++k) {
            const auto row = x.row(i * cfg.n_per_target + k);
            samples.push_back(std::vector<double>(row.begin(), row.end()));
        }
        json line{{"format_version", kFormatVersion},
                  {"target", std::vector<double>(targets.row(i).begin(), targets.row(i).end())},
                  {"samples", samples}};
        body += line.dump();
        body += '\n';
    }
    const fs::path dir = prepare_out(cfg);
    write_text(dir / "samples.jsonl", body);
    json meta = artifact_header("samples", cfg);
    meta["model_checksum"] = lm.checksum;
    meta["targets_checksum"] = checksum_hex(read_text(target_path));
    meta["checksum"] = checksum_hex(body);
    write_json(meta_path(dir / "samples.jsonl"), meta);
    out << "targets " << targets.rows() << " samples " << x.rows() << "\n";
}

EvalReport cmd_eval(const RunConfig& cfg, std::ostream& out) {
    const LoadedModel lm = load_model(require_path(cfg.model, "model"));
    const TaskSpec task = make_task(cfg.task);
    const NoiseSpec noise = cfg.noise_spec();
    EvalConfig ec = cfg.eval;
    ec.seed = derive_seed(cfg.seed, "eval");
    ec.threads = cfg.threads;

    const Matrix targets = cfg.targets.empty()
                               ? make_test_targets(task, noise, ec.n_targets, derive_seed(cfg.seed, "eval/targets"))
                               : read_targets(cfg.targets);
    ec.n_targets = targets.rows();
    EvalReport report = resimulation_error(lm.model, task, noise, targets, ec);
    report.method = lm.checksum;

    json extra{{"model_checksum", lm.checksum}, {"baseline_checksum", nullptr}};
    if (!cfg.baseline.empty()) {
        const LoadedModel base = load_model(cfg.baseline);
        // Same targets and seeds, so the two models see common random numbers.
        const EvalReport b = resimulation_error(base.model, task, noise, targets, ec);
        const WelchResult w = welch_t_test(report.per_target, b.per_target);
        report.comparison = Comparison{base.checksum, b.mse, w.t, w.p};
        extra["baseline_checksum"] = base.checksum;
    }

    const fs::path dir = prepare_out(cfg);
    json j = artifact_header("report", cfg);
    j["noise_spec"] = to_json(noise);
    j.update(extra);
    j.update(to_json(report));
    write_json(dir / "report.json", j);

    out << "mse " << fmt(report.mse) << " std_error " << fmt(report.std_error);
    if (report.comparison) {
        out << " baseline_mse " << fmt(report.comparison->baseline_mse) << " t " << fmt(report.comparison->t)
            << " p " << fmt(report.comparison->p);
    }
    out << " seconds " << fmt(report.wall_seconds) << "\n";
    return report;
}

int run_cli(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Robust inverse design with noise-aware weighted normalizing flows", "ridnoise"};
    app.require_subcommand(1);

    RunConfig cfg;
    std::string task_name = to_string(cfg.task);
    std::string noise_name = to_string(cfg.noise_mode);
    std::string out_dir = cfg.out.string();
    std::string config_file, dataset, weights, model, baseline, targets;

    const std::vector<std::string> task_names{"radian", "clusters", "radius", "kinematics", "ballistics"};
    const std::vector<std::string> noise_names{"none", "n_x", "n_y", "n_xy"};

    auto common = [&](CLI::App* sub) {
        sub->add_option("--out", out_dir, "Output directory")->capture_default_str();
        sub->add_option("--config", config_file, "RunConfig JSON; its values override flags")
            ->check(CLI::ExistingFile);
        sub->add_option("--seed", cfg.seed, "Master seed")->capture_default_str();
        sub->add_option("--threads", cfg.threads, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();
    };
    auto task_flags = [&](CLI::App* sub) {
        sub->add_option("--task", task_name)->check(CLI::IsMember(task_names))->capture_default_str();
        sub->add_option("--noise", noise_name)->check(CLI::IsMember(noise_names))->capture_default_str();
    };

    CLI::App* gen = app.add_subcommand("generate", "Simulate a dataset");
    common(gen);
    task_flags(gen);
    gen->add_option("--n", cfg.n, "Number of samples")->check(CLI::PositiveNumber)->capture_default_str();

    CLI::App* wts = app.add_subcommand("weights", "Estimate sample weights");
    common(wts);
    wts->add_option("--dataset", dataset)->required()->check(CLI::ExistingFile);
    wts->add_option("--k", cfg.weighting.k_folds, "Cross-validation folds")->capture_default_str();
    wts->add_option("--tau", cfg.weighting.tau, "Weight temperature")->check(CLI::NonNegativeNumber)->capture_default_str();
    wts->add_option("--eps", cfg.weighting.eps, "Weight floor")->check(CLI::PositiveNumber)->capture_default_str();
    wts->add_option("--surrogate-epochs", cfg.weighting.training.epochs)->capture_default_str();
    wts->add_option("--surrogate-hidden", cfg.weighting.surrogate_hidden)->capture_default_str();

    CLI::App* trn = app.add_subcommand("train", "Fit a conditional flow by weighted likelihood");
    common(trn);
    trn->add_option("--dataset", dataset)->required()->check(CLI::ExistingFile);
    trn->add_option("--weights", weights, "Weights file; all ones when omitted")->check(CLI::ExistingFile);
    trn->add_option("--epochs", cfg.training.epochs)->capture_default_str();
    trn->add_option("--batch-size", cfg.training.batch_size)->check(CLI::PositiveNumber)->capture_default_str();
    trn->add_option("--lr", cfg.training.adam.learning_rate)->capture_default_str();
    trn->add_option("--sigma-aug", cfg.training.sigma_aug)->capture_default_str();
    trn->add_flag("--relabel", cfg.training.relabel, "Train on surrogate predictions instead of raw y");
    trn->add_option("--blocks", cfg.architecture.blocks)->check(CLI::PositiveNumber)->capture_default_str();
    trn->add_option("--hidden", cfg.architecture.hidden)->capture_default_str();
    trn->add_option("--clamp", cfg.architecture.clamp)->check(CLI::PositiveNumber)->capture_default_str();

    CLI::App* smp = app.add_subcommand("sample", "Draw designs for target outcomes");
    common(smp);
    smp->add_option("--model", model)->required()->check(CLI::ExistingFile);
    smp->add_option("--targets", targets, "JSON-lines file with \"y\" or \"target\" arrays")
        ->required()
        ->check(CLI::ExistingFile);
    smp->add_option("--n-per-target", cfg.n_per_target)->check(CLI::PositiveNumber)->capture_default_str();

    CLI::App* evl = app.add_subcommand("eval", "Re-simulation error of a model");
    common(evl);
    task_flags(evl);
    evl->add_option("--model", model)->required()->check(CLI::ExistingFile);
    evl->add_option("--baseline", baseline, "Second model compared by Welch test")->check(CLI::ExistingFile);
    evl->add_option("--targets", targets, "Fixed targets instead of fresh draws")->check(CLI::ExistingFile);
    evl->add_option("--n-targets", cfg.eval.n_targets)->check(CLI::PositiveNumber)->capture_default_str();
    evl->add_option("--samples-per-target", cfg.eval.samples_per_target)
        ->check(CLI::PositiveNumber)
        ->capture_default_str();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        cfg.task = parse_task_name(task_name);
        cfg.noise_mode = parse_noise_mode(noise_name);
        cfg.out = out_dir;
        cfg.dataset = dataset;
        cfg.weights = weights;
        cfg.model = model;
        cfg.baseline = baseline;
        cfg.targets = targets;
        if (!config_file.empty()) update_from_json(read_json(config_file), cfg);

        if (gen->parsed()) {
            if (cfg.n == 0) {
                err << "n must be >= 1\n";
                return kExitUsage;
            }
            cmd_generate(cfg, out);
        } else if (wts->parsed()) {
            cmd_weights(cfg, out);
        } else if (trn->parsed()) {
            cmd_train(cfg, out);
        } else if (smp->parsed()) {
            cmd_sample(cfg, out);
        } else if (evl->parsed()) {
            cmd_eval(cfg, out);
        }
    } catch (const NumericalError& e) {
        err << "numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const std::exception& e) {
        // DataError, ShapeError, IoError, malformed JSON and bad enum names
        err << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitOk;
}

}  // namespace ridnoise
