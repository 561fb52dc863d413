#include "ridnoise/io.hpp"

#include "ridnoise/errors.hpp"
#include "ridnoise/seeding.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace ridnoise {

namespace {

template <typename T>
void take(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

void require_object(const json& j, std::string_view what) {
    if (!j.is_object()) throw IoError(std::string(what) + " must be a JSON object");
}

void check_version(const json& j, std::string_view what) {
    if (!j.contains("format_version")) throw IoError(std::string(what) + " has no format_version");
    const int v = j.at("format_version").get<int>();
    if (v != kFormatVersion) {
        throw IoError(std::string(what) + " has format_version " + std::to_string(v) + ", expected " +
                      std::to_string(kFormatVersion));
    }
}

std::vector<double> row_values(const json& j, const char* key, std::size_t line) {
    if (!j.contains(key) || !j.at(key).is_array()) {
        throw IoError("line " + std::to_string(line) + ": missing array \"" + key + "\"");
    }
    return j.at(key).get<std::vector<double>>();
}

Matrix stack_rows(const std::vector<std::vector<double>>& rows, std::string_view what) {
    if (rows.empty()) return Matrix(0, 0);
    const std::size_t cols = rows.front().size();
    Matrix m(rows.size(), cols);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != cols) {
            throw IoError(std::string(what) + " line " + std::to_string(i + 1) + " has " +
                          std::to_string(rows[i].size()) + " values, expected " + std::to_string(cols));
        }
        std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
    }
    return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// Conversions

json to_json(const Matrix& m) {
    return json{{"rows", m.rows()},
                {"cols", m.cols()},
                {"data", std::vector<double>(m.values().begin(), m.values().end())}};
}

Matrix matrix_from_json(const json& j) {
    require_object(j, "matrix");
    return Matrix(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>(),
                  j.at("data").get<std::vector<double>>());
}

json to_json(const AdamConfig& c) {
    return json{{"learning_rate", c.learning_rate},
                {"weight_decay", c.weight_decay},
                {"beta1", c.beta1},
                {"beta2", c.beta2},
                {"epsilon", c.epsilon}};
}

void update_from_json(const json& j, AdamConfig& c) {
    require_object(j, "adam config");
    take(j, "learning_rate", c.learning_rate);
    take(j, "weight_decay", c.weight_decay);
    take(j, "beta1", c.beta1);
    take(j, "beta2", c.beta2);
    take(j, "epsilon", c.epsilon);
}

json to_json(const TrainConfig& c) {
    return json{{"epochs", c.epochs}, {"batch_size", c.batch_size}, {"seed", c.seed}, {"adam", to_json(c.adam)}};
}

void update_from_json(const json& j, TrainConfig& c) {
    require_object(j, "training config");
    take(j, "epochs", c.epochs);
    take(j, "batch_size", c.batch_size);
    take(j, "seed", c.seed);
    if (j.contains("adam")) update_from_json(j.at("adam"), c.adam);
}

json to_json(const WeightConfig& c) {
    return json{{"k_folds", c.k_folds},
                {"tau", c.tau},
                {"eps", c.eps},
                {"surrogate_hidden", c.surrogate_hidden},
                {"surrogate_activation", to_string(c.surrogate_activation)},
                {"training", to_json(c.training)},
                {"inner_valid_fraction", c.inner_valid_fraction},
                {"threads", c.threads}};
}

void update_from_json(const json& j, WeightConfig& c) {
    require_object(j, "weight config");
    take(j, "k_folds", c.k_folds);
    take(j, "tau", c.tau);
    take(j, "eps", c.eps);
    take(j, "surrogate_hidden", c.surrogate_hidden);
    if (j.contains("surrogate_activation")) {
        c.surrogate_activation = parse_activation(j.at("surrogate_activation").get<std::string>());
    }
    if (j.contains("training")) update_from_json(j.at("training"), c.training);
    take(j, "inner_valid_fraction", c.inner_valid_fraction);
    take(j, "threads", c.threads);
}

json to_json(const FlowArchitecture& c) {
    return json{{"blocks", c.blocks},
                {"hidden", c.hidden},
                {"activation", to_string(c.activation)},
                {"clamp", c.clamp}};
}

void update_from_json(const json& j, FlowArchitecture& c) {
    require_object(j, "flow architecture");
    take(j, "blocks", c.blocks);
    take(j, "hidden", c.hidden);
    if (j.contains("activation")) c.activation = parse_activation(j.at("activation").get<std::string>());
    take(j, "clamp", c.clamp);
}

json to_json(const WnllConfig& c) {
    return json{{"epochs", c.epochs},
                {"batch_size", c.batch_size},
                {"seed", c.seed},
                {"adam", to_json(c.adam)},
                {"sigma_aug", c.sigma_aug},
                {"standardize", c.standardize},
                {"relabel", c.relabel},
                {"relabel_hidden", c.relabel_hidden},
                {"relabel_epochs", c.relabel_epochs}};
}

void update_from_json(const json& j, WnllConfig& c) {
    require_object(j, "flow training config");
    take(j, "epochs", c.epochs);
    take(j, "batch_size", c.batch_size);
    take(j, "seed", c.seed);
    if (j.contains("adam")) update_from_json(j.at("adam"), c.adam);
    take(j, "sigma_aug", c.sigma_aug);
    take(j, "standardize", c.standardize);
    take(j, "relabel", c.relabel);
    take(j, "relabel_hidden", c.relabel_hidden);
    take(j, "relabel_epochs", c.relabel_epochs);
}

json to_json(const EvalConfig& c) {
    return json{{"n_targets", c.n_targets},
                {"samples_per_target", c.samples_per_target},
                {"mc_draws", c.mc_draws},
                {"seed", c.seed},
                {"threads", c.threads}};
}

void update_from_json(const json& j, EvalConfig& c) {
    require_object(j, "eval config");
    take(j, "n_targets", c.n_targets);
    take(j, "samples_per_target", c.samples_per_target);
    take(j, "mc_draws", c.mc_draws);
    take(j, "seed", c.seed);
    take(j, "threads", c.threads);
}

json to_json(const TaskSpec& t) {
    return json{{"name", to_string(t.name)},
                {"dx", t.dx},
                {"dy", t.dy},
                {"radian_min_norm", t.radian_min_norm},
                {"cluster_scale", t.cluster_scale},
                {"cluster_sigma", t.cluster_sigma},
                {"radius_inner", t.radius_inner},
                {"radius_outer", t.radius_outer},
                {"arm1", t.arm1},
                {"arm2", t.arm2},
                {"arm3", t.arm3},
                {"gravity", t.gravity}};
}

json to_json(const NoiseSpec& n) {
    return json{{"mode", to_string(n.mode)}, {"sigma_x", n.sigma_x}, {"sigma_y", n.sigma_y}, {"alpha", n.alpha}};
}

void update_from_json(const json& j, NoiseSpec& n) {
    require_object(j, "noise spec");
    if (j.contains("mode")) n.mode = parse_noise_mode(j.at("mode").get<std::string>());
    take(j, "sigma_x", n.sigma_x);
    take(j, "sigma_y", n.sigma_y);
    take(j, "alpha", n.alpha);
}

json to_json(const Provenance& p) {
    return json{{"task", to_json(p.task)}, {"noise", to_json(p.noise)}, {"seed", p.seed}};
}

Provenance provenance_from_json(const json& j) {
    require_object(j, "provenance");
    const json& t = j.at("task");
    Provenance p;
    p.task = make_task(parse_task_name(t.at("name").get<std::string>()));
    take(t, "radian_min_norm", p.task.radian_min_norm);
    take(t, "cluster_scale", p.task.cluster_scale);
    take(t, "cluster_sigma", p.task.cluster_sigma);
    take(t, "radius_inner", p.task.radius_inner);
    take(t, "radius_outer", p.task.radius_outer);
    take(t, "arm1", p.task.arm1);
    take(t, "arm2", p.task.arm2);
    take(t, "arm3", p.task.arm3);
    take(t, "gravity", p.task.gravity);
    const json& n = j.at("noise");
    p.noise = default_noise(p.task.name, parse_noise_mode(n.at("mode").get<std::string>()));
    update_from_json(n, p.noise);
    p.seed = j.at("seed").get<std::uint64_t>();
    return p;
}

json to_json(const MlpParams& p) {
    json layers = json::array();
    for (const auto& l : p.layers) layers.push_back(json{{"weight", to_json(l.weight)}, {"bias", to_json(l.bias)}});
    return json{{"format_version", kFormatVersion},
                {"input_dim", p.spec.input_dim},
                {"output_dim", p.spec.output_dim},
                {"hidden", p.spec.hidden},
                {"activation", to_string(p.spec.activation)},
                {"layers", layers}};
}

MlpParams mlp_from_json(const json& j) {
    require_object(j, "mlp");
    check_version(j, "mlp");
    MlpParams p;
    p.spec.input_dim = j.at("input_dim").get<std::size_t>();
    p.spec.output_dim = j.at("output_dim").get<std::size_t>();
    p.spec.hidden = j.at("hidden").get<std::vector<std::size_t>>();
    p.spec.activation = parse_activation(j.at("activation").get<std::string>());
    p.spec.validate();
    for (const auto& l : j.at("layers")) {
        p.layers.push_back(DenseLayer{matrix_from_json(l.at("weight")), matrix_from_json(l.at("bias"))});
    }
    if (p.layers.size() != p.spec.hidden.size() + 1) throw IoError("mlp layer count does not match its spec");
    std::size_t fan_in = p.spec.input_dim;
    for (std::size_t i = 0; i < p.layers.size(); ++i) {
        const std::size_t fan_out = i < p.spec.hidden.size() ? p.spec.hidden[i] : p.spec.output_dim;
        const auto& l = p.layers[i];
        if (l.weight.rows() != fan_in || l.weight.cols() != fan_out || l.bias.rows() != 1 ||
            l.bias.cols() != fan_out) {
            throw IoError("mlp layer " + std::to_string(i) + " has the wrong shape");
        }
        fan_in = fan_out;
    }
    return p;
}

json to_json(const FlowModel& m) {
    json blocks = json::array();
    for (const auto& b : m.blocks) {
        blocks.push_back(json{{"passive", b.passive},
                              {"active", b.active},
                              {"clamp", b.clamp},
                              {"subnet_s", to_json(b.subnet_s)},
                              {"subnet_t", to_json(b.subnet_t)}});
    }
    return json{{"format_version", kFormatVersion},
                {"dx", m.dx},
                {"dy", m.dy},
                {"x_shift", m.x_norm.shift},
                {"x_scale", m.x_norm.scale},
                {"y_shift", m.y_norm.shift},
                {"y_scale", m.y_norm.scale},
                {"blocks", blocks},
                {"permutations", m.permutations}};
}

FlowModel flow_from_json(const json& j) {
    require_object(j, "flow model");
    check_version(j, "flow model");
    FlowModel m;
    m.dx = j.at("dx").get<std::size_t>();
    m.dy = j.at("dy").get<std::size_t>();
    m.x_norm = {j.at("x_shift").get<std::vector<double>>(), j.at("x_scale").get<std::vector<double>>()};
    m.y_norm = {j.at("y_shift").get<std::vector<double>>(), j.at("y_scale").get<std::vector<double>>()};
    for (const auto& b : j.at("blocks")) {
        CouplingBlock block;
        block.passive = b.at("passive").get<std::vector<std::size_t>>();
        block.active = b.at("active").get<std::vector<std::size_t>>();
        block.clamp = b.at("clamp").get<double>();
        block.subnet_s = mlp_from_json(b.at("subnet_s"));
        block.subnet_t = mlp_from_json(b.at("subnet_t"));
        m.blocks.push_back(std::move(block));
    }
    m.permutations = j.at("permutations").get<std::vector<std::vector<std::size_t>>>();
    try {
        m.validate();
    } catch (const std::exception& e) {
        throw IoError(std::string("invalid flow model: ") + e.what());
    }
    return m;
}

json to_json(const EvalReport& r) {
    json j{{"method", r.method},
           {"task", r.task},
           {"noise", r.noise},
           {"config", to_json(r.config)},
           {"mse", r.mse},
           {"std_error", r.std_error},
           {"per_target", r.per_target}};
    if (r.comparison) {
        j["comparison"] = json{{"baseline_id", r.comparison->baseline_id},
                               {"baseline_mse", r.comparison->baseline_mse},
                               {"t", r.comparison->t},
                               {"p", r.comparison->p}};
    }
    return j;
}

// ---------------------------------------------------------------------------
// Files

std::string checksum_hex(std::string_view bytes) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(bytes)));
    return buf;
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const std::filesystem::path& path, std::string_view text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw IoError("failed writing " + path.string());
}

json read_json(const std::filesystem::path& path) {
    try {
        return json::parse(read_text(path));
    } catch (const json::exception& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

void write_json(const std::filesystem::path& path, const json& j) {
    write_text(path, j.dump(2) + "\n");
}

std::vector<json> read_jsonl(const std::filesystem::path& path) {
    std::istringstream in(read_text(path));
    std::vector<json> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(json::parse(line));
        } catch (const json::exception& e) {
            throw IoError(path.string() + " line " + std::to_string(n) + ": " + e.what());
        }
    }
    return out;
}

std::string dataset_to_jsonl(const Dataset& d) {
    std::string out;
    for (std::size_t i = 0; i < d.size(); ++i) {
        json row{{"x", std::vector<double>(d.x.row(i).begin(), d.x.row(i).end())},
                 {"y", std::vector<double>(d.y.row(i).begin(), d.y.row(i).end())}};
        out += row.dump();
        out += '\n';
    }
    return out;
}

std::filesystem::path meta_path(const std::filesystem::path& jsonl) {
    std::filesystem::path p = jsonl;
    p.replace_extension(".meta.json");
    return p;
}

DatasetFiles write_dataset(const std::filesystem::path& jsonl, const Dataset& d) {
    const std::string body = dataset_to_jsonl(d);
    DatasetFiles files{checksum_hex(body)};
    write_text(jsonl, body);
    json meta{{"format_version", kFormatVersion},
              {"kind", "dataset"},
              {"rows", d.size()},
              {"dx", d.dx()},
              {"dy", d.dy()},
              {"checksum", files.checksum}};
    meta["provenance"] = d.provenance ? to_json(*d.provenance) : json(nullptr);
    write_json(meta_path(jsonl), meta);
    return files;
}

Dataset read_dataset(const std::filesystem::path& jsonl) {
    const auto lines = read_jsonl(jsonl);
    if (lines.empty()) throw DataError(jsonl.string() + " holds no rows");
    std::vector<std::vector<double>> xs, ys;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        xs.push_back(row_values(lines[i], "x", i + 1));
        ys.push_back(row_values(lines[i], "y", i + 1));
    }
    Dataset d{stack_rows(xs, "x"), stack_rows(ys, "y"), std::nullopt};
    const auto meta = meta_path(jsonl);
    if (std::filesystem::exists(meta)) {
        const json m = read_json(meta);
        check_version(m, meta.string());
        if (m.contains("provenance") && !m.at("provenance").is_null()) {
            d.provenance = provenance_from_json(m.at("provenance"));
        }
    }
    d.validate();
    return d;
}

Matrix read_targets(const std::filesystem::path& jsonl) {
    const auto lines = read_jsonl(jsonl);
    if (lines.empty()) throw DataError(jsonl.string() + " holds no targets");
    std::vector<std::vector<double>> ys;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        ys.push_back(row_values(lines[i], lines[i].contains("y") ? "y" : "target", i + 1));
    }
    Matrix m = stack_rows(ys, "targets");
    if (!m.all_finite()) throw DataError("targets contain non-finite values");
    return m;
}

}  // namespace ridnoise
