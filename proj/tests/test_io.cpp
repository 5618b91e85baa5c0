#include "doctest.h"

#include "capal/io.hpp"

#include <filesystem>
#include <sstream>

using namespace capal;
using nlohmann::json;

namespace {

ScenePool small_pool() {
    WorldSpec spec;
    spec.num_classes = 4;
    spec.embedding_dim = 6;
    spec.feature_dim = 5;
    auto sim = generate_pool(spec, 6);
    std::vector<std::string> lab = {sim.scenes[0].scene_id};
    ScenePool pool;
    pool.scenes = simulate_detector(sim, lab);
    pool.header = infer_header(pool.scenes, spec.num_classes);
    return pool;
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream is(text);
    for (std::string l; std::getline(is, l);) out.push_back(l);
    return out;
}

std::string join(const std::vector<std::string>& lines) {
    std::string s;
    for (const auto& l : lines) s += l + "\n";
    return s;
}

}  // namespace

TEST_CASE("header-only file is an empty pool") {
    std::istringstream is(R"({"format":"capal-scenes","version":1,"num_classes":3,"embedding_dim":4,"feature_dim":2})"
                          "\n");
    const auto pool = read_pool(is);
    CHECK(pool.scenes.empty());
    CHECK(pool.header.num_classes == 3);
}

TEST_CASE("empty input is reported") {
    std::istringstream is("\n\n");
    CHECK_THROWS_AS(read_pool(is), FormatError);
}

TEST_CASE("scene pools round-trip") {
    const auto pool = small_pool();
    std::ostringstream os;
    write_pool(os, pool);
    std::istringstream is(os.str());
    const auto back = read_pool(is);
    REQUIRE(back.scenes.size() == pool.scenes.size());
    for (std::size_t i = 0; i < pool.scenes.size(); ++i) {
        const auto &a = pool.scenes[i], &b = back.scenes[i];
        CHECK(a.scene_id == b.scene_id);
        CHECK(a.scene_type == b.scene_type);
        CHECK((a.global_feature - b.global_feature).norm() < 1e-12);
        CHECK((a.masked_feature - b.masked_feature).norm() < 1e-12);
        CHECK(std::abs(a.masked_weight - b.masked_weight) < 1e-12);
        REQUIRE(a.proposals.size() == b.proposals.size());
        for (std::size_t j = 0; j < a.proposals.size(); ++j) {
            const auto &p = a.proposals[j], &q = b.proposals[j];
            CHECK((p.class_probs - q.class_probs).norm() < 1e-12);
            CHECK((p.embedding - q.embedding).norm() < 1e-12);
            CHECK((p.box.center - q.box.center).norm() < 1e-12);
            CHECK(std::abs(p.consistency_iou - q.consistency_iou) < 1e-12);
            CHECK(p.predicted_class == q.predicted_class);
            CHECK((p.mc_samples - q.mc_samples).norm() < 1e-12);
        }
        REQUIRE(a.truth.has_value() == b.truth.has_value());
        if (a.truth) {
            REQUIRE(a.truth->size() == b.truth->size());
            for (std::size_t k = 0; k < a.truth->size(); ++k) {
                CHECK((*a.truth)[k].class_id == (*b.truth)[k].class_id);
                CHECK((*a.truth)[k].mode == (*b.truth)[k].mode);
            }
        }
    }
}

TEST_CASE("probabilities that do not sum to one are rejected with their line") {
    const auto pool = small_pool();
    std::ostringstream os;
    write_pool(os, pool);
    auto lines = lines_of(os.str());
    std::size_t target = 0;
    for (std::size_t i = 1; i < lines.size() && !target; ++i)
        if (!json::parse(lines[i])["proposals"].empty()) target = i;
    REQUIRE(target > 0);
    auto j = json::parse(lines[target]);
    auto& probs = j["proposals"][0]["class_probs"];
    probs = json::array({0.5, 0.3, 0.0, 0.0});
    lines[target] = j.dump();
    std::istringstream is(join(lines));
    try {
        read_pool(is, "pool.jsonl");
        FAIL("expected a format error");
    } catch (const FormatError& e) {
        CHECK(e.line() == target + 1);
        CHECK(std::string(e.what()).find("pool.jsonl:" + std::to_string(target + 1)) == 0);
    }
}

TEST_CASE("duplicate ids, unknown keys and bad boxes are rejected") {
    const auto pool = small_pool();
    std::ostringstream os;
    write_pool(os, pool);
    auto lines = lines_of(os.str());

    auto dup = lines;
    dup.push_back(lines[1]);
    std::istringstream a(join(dup));
    CHECK_THROWS_AS(read_pool(a), FormatError);

    auto extra = lines;
    auto j = json::parse(extra[1]);
    j["surprise"] = 1;
    extra[1] = j.dump();
    std::istringstream b(join(extra));
    CHECK_THROWS_AS(read_pool(b), FormatError);

    auto broken = lines;
    broken[1] = "{not json";
    std::istringstream c(join(broken));
    CHECK_THROWS_AS(read_pool(c), FormatError);
}

TEST_CASE("files are written atomically and read back") {
    const auto dir = std::filesystem::temp_directory_path() / "capal_test_io";
    std::filesystem::create_directories(dir);
    const auto path = (dir / "pool.jsonl").string();
    const auto pool = small_pool();
    write_pool(path, pool);
    CHECK_FALSE(std::filesystem::exists(path + ".tmp"));
    CHECK(read_pool(path).scenes.size() == pool.scenes.size());
    CHECK_THROWS(read_pool((dir / "absent.jsonl").string()));
}

TEST_CASE("configs round-trip and hash stably") {
    ExperimentConfig c;
    c.al.delta = 10;
    c.al.strategy = Strategy::coreset;
    c.world.coverage_scale = 12.5;
    const auto j = to_json(c);
    const auto back = experiment_config_from_json(j);
    CHECK(back.al.delta == 10);
    CHECK(back.al.strategy == Strategy::coreset);
    CHECK(back.world.coverage_scale == 12.5);
    CHECK(config_hash(back) == config_hash(c));
    CHECK(config_hash(c).size() == 16);

    ExperimentConfig d = c;
    d.al.delta = 6;
    CHECK(config_hash(d) != config_hash(c));
}

TEST_CASE("configs keep defaults for missing keys and reject unknown ones") {
    const auto c = experiment_config_from_json(json::parse(R"({"al":{"delta":3}})"));
    CHECK(c.al.delta == 3);
    CHECK(c.al.tau_sim == 0.3);
    CHECK_THROWS(experiment_config_from_json(json::parse(R"({"al":{"deltaa":3}})")));
    CHECK_THROWS(experiment_config_from_json(json::parse(R"({"al":{"delta":0}})")));
    CHECK_THROWS(experiment_config_from_json(json::parse(R"({"al":{"num_classes":5}})")));
    CHECK_THROWS(experiment_config_from_json(json::parse(R"({"format":"other"})")));
}

TEST_CASE("metrics CSV round-trip") {
    MetricsRow r;
    r.m.strategy = "ours_full";
    r.m.seed = 4;
    r.m.round = 2;
    r.m.labeled_fraction = 0.06;
    r.m.proxy_map25 = 0.123456789012345;
    r.m.proxy_map50 = 0.5;
    r.m.wall_ms = 12.5;
    r.param = "delta";
    r.value = "6";
    r.config_hash = "0123456789abcdef";
    std::ostringstream os;
    write_metrics_csv(os, {r, r});
    std::istringstream is(os.str());
    const auto back = read_metrics_csv(is);
    REQUIRE(back.size() == 2);
    CHECK(back[0].m.strategy == "ours_full");
    CHECK(back[0].m.proxy_map25 == r.m.proxy_map25);
    CHECK(back[1].param == "delta");
    CHECK(back[1].config_hash == r.config_hash);

    const auto j = metrics_to_json({r});
    CHECK(j["format"] == "capal-metrics");
    CHECK(j["rows"].size() == 1);

    r.param = "a,b";
    std::ostringstream bad;
    CHECK_THROWS(write_metrics_csv(bad, {r}));
    std::istringstream trunc(lines_of(os.str())[0] + "\nours_full,1\n");
    CHECK_THROWS_AS(read_metrics_csv(trunc), FormatError);
}
