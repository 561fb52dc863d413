#include "doctest.h"

#include "ridnoise/io.hpp"
#include "ridnoise/tasks.hpp"

#include <filesystem>
#include <random>

#include <unistd.h>

using namespace ridnoise;
namespace fs = std::filesystem;

TEST_CASE("matrix and mlp JSON round trip exactly") {
    std::mt19937_64 rng(1);
    MlpParams p = init_mlp(MlpSpec{3, 2, {5, 4}, Activation::Relu}, rng);
    for (double& v : p.layers[0].bias.values()) v = std::uniform_real_distribution<double>(-1, 1)(rng);
    const json j = to_json(p);
    CHECK(j.at("format_version") == kFormatVersion);
    CHECK(mlp_from_json(json::parse(j.dump())) == p);

    json broken = j;
    broken["hidden"] = std::vector<std::size_t>{5};
    CHECK_THROWS_AS(mlp_from_json(broken), IoError);
    broken = j;
    broken["format_version"] = 99;
    CHECK_THROWS_AS(mlp_from_json(broken), IoError);
}

TEST_CASE("flow model round trip gives identical densities") {
    FlowArchitecture arch;
    arch.blocks = 3;
    arch.hidden = {6};
    FlowModel m = make_flow(3, 2, arch, 4);
    std::mt19937_64 rng(2);
    std::normal_distribution<double> n01(0, 0.3);
    for (Matrix* t : m.tensors()) {
        for (double& v : t->values()) v = n01(rng);
    }
    m.x_norm = {{0.1, -2.0, 7.5}, {0.3, 1.7, 2.25}};
    m.y_norm = {{1.0 / 3.0, 4.0}, {0.9, 1e-3}};
    const FlowModel back = flow_from_json(json::parse(to_json(m).dump(2)));
    Matrix x(5, 3), y(5, 2);
    for (double& v : x.values()) v = n01(rng);
    for (double& v : y.values()) v = n01(rng);
    CHECK(flow_log_prob(back, x, y) == flow_log_prob(m, x, y));
    CHECK(to_json(back) == to_json(m));

    json bad = to_json(m);
    bad["permutations"][0][0] = 7;
    CHECK_THROWS_AS(flow_from_json(bad), IoError);
    bad = to_json(m);
    bad["x_scale"][1] = -1.0;
    CHECK_THROWS_AS(flow_from_json(bad), IoError);
}

TEST_CASE("dataset files") {
    const fs::path dir = fs::temp_directory_path() / ("ridnoise_io_" + std::to_string(::getpid()));
    fs::create_directories(dir);
    const Dataset d = generate_dataset(make_task(TaskName::Ballistics),
                                       default_noise(TaskName::Ballistics, NoiseMode::XY), 300, 8);
    const auto files = write_dataset(dir / "dataset.jsonl", d);
    CHECK(fs::exists(dir / "dataset.meta.json"));
    CHECK(files.checksum == checksum_hex(read_text(dir / "dataset.jsonl")));
    const Dataset back = read_dataset(dir / "dataset.jsonl");
    CHECK(back.x == d.x);
    CHECK(back.y == d.y);
    CHECK(back.provenance == d.provenance);
    CHECK(read_targets(dir / "dataset.jsonl") == d.y);

    write_text(dir / "ragged.jsonl", "{\"x\":[1],\"y\":[1]}\n{\"x\":[1,2],\"y\":[1]}\n");
    CHECK_THROWS_AS(read_dataset(dir / "ragged.jsonl"), IoError);
    write_text(dir / "garbage.jsonl", "{\"x\":[1],\n");
    CHECK_THROWS_AS(read_dataset(dir / "garbage.jsonl"), IoError);
    CHECK_THROWS_AS(read_dataset(dir / "absent.jsonl"), IoError);
    fs::remove_all(dir);
}

TEST_CASE("checksum is FNV-1a") {
    CHECK(checksum_hex("") == "cbf29ce484222325");
    CHECK(checksum_hex("a") == "af63dc4c8601ec8c");
}

TEST_CASE("partial config documents keep defaults") {
    WeightConfig w;
    update_from_json(json{{"tau", 3.0}, {"training", {{"epochs", 7}}}}, w);
    CHECK(w.tau == 3.0);
    CHECK(w.training.epochs == 7);
    CHECK(w.k_folds == 5);
    CHECK(w.training.batch_size == 64);
    WnllConfig c;
    update_from_json(to_json(c), c);
    CHECK(c == WnllConfig{});
}
