#include "doctest.h"

#include "capal/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <set>

using namespace capal;

namespace {

std::vector<std::string> ids_of(const SimPool& pool) {
    std::vector<std::string> ids;
    for (const auto& s : pool.scenes) ids.push_back(s.scene_id);
    return ids;
}

SceneRecord hand_scene(const std::string& id, int type, std::vector<std::pair<int, int>> objs) {
    SceneRecord s;
    s.scene_id = id;
    s.scene_type = type;
    std::vector<TruthObject> t;
    for (auto [c, m] : objs) t.push_back({Box3d({0, 0, 0}, {1, 1, 1}), c, {}, m});
    s.truth = t;
    return s;
}

}  // namespace

TEST_CASE("single mode world keeps embeddings near one direction") {
    WorldSpec spec;
    spec.num_classes = 1;
    spec.modes_per_class = {1};
    spec.num_scene_types = 1;
    const auto pool = generate_pool(spec, 50);
    const auto& dir = pool.world.mode_directions[0][0];
    double worst = 1.0;
    for (const auto& s : pool.scenes)
        for (const auto& t : *s.truth) {
            CHECK(std::abs(t.embedding.norm() - 1.0) < 1e-12);
            worst = std::min(worst, t.embedding.dot(dir));
        }
    CHECK(worst > 0.5);
}

TEST_CASE("scene types with disjoint class templates do not share classes") {
    WorldSpec spec;
    spec.num_classes = 4;
    spec.modes_per_class = {1};
    spec.num_scene_types = 4;
    spec.off_type_weight = 0.0;
    const auto pool = generate_pool(spec, 300);
    std::set<int> type0, type1;
    for (const auto& s : pool.scenes)
        for (const auto& t : *s.truth) {
            if (s.scene_type == 0) type0.insert(t.class_id);
            if (s.scene_type == 1) type1.insert(t.class_id);
        }
    REQUIRE_FALSE(type0.empty());
    REQUIRE_FALSE(type1.empty());
    for (int c : type0) CHECK(type1.count(c) == 0);
}

TEST_CASE("class counts follow the configured frequencies") {
    WorldSpec spec;
    spec.num_classes = 2;
    spec.modes_per_class = {1};
    spec.num_scene_types = 1;
    spec.class_frequencies = {0.9, 0.1};
    const auto pool = generate_pool(spec, 130);
    double n = 0, first = 0;
    for (const auto& s : pool.scenes)
        for (const auto& t : *s.truth) {
            n += 1;
            first += t.class_id == 0;
        }
    CHECK(n >= 1000);
    CHECK(std::abs(first - 0.9 * n) <= 3 * std::sqrt(n * 0.9 * 0.1));
}

TEST_CASE("pool generation is deterministic and ids are unique") {
    WorldSpec spec;
    spec.seed = 5;
    const auto a = generate_pool(spec, 40), b = generate_pool(spec, 40);
    const auto ids = ids_of(a);
    CHECK(std::set<std::string>(ids.begin(), ids.end()).size() == ids.size());
    for (std::size_t i = 0; i < a.scenes.size(); ++i) {
        CHECK(a.scenes[i].scene_id == b.scenes[i].scene_id);
        CHECK(a.scenes[i].global_feature == b.scenes[i].global_feature);
        REQUIRE(a.scenes[i].truth->size() == b.scenes[i].truth->size());
    }
    const std::vector<std::string> lab(ids.begin(), ids.begin() + 3);
    const auto da = simulate_detector(a, lab), db = simulate_detector(b, lab);
    for (std::size_t i = 0; i < da.size(); ++i) {
        REQUIRE(da[i].proposals.size() == db[i].proposals.size());
        for (std::size_t j = 0; j < da[i].proposals.size(); ++j)
            CHECK(da[i].proposals[j].class_probs == db[i].proposals[j].class_probs);
        CHECK(da[i].masked_feature == db[i].masked_feature);
    }
}

TEST_CASE("noiseless fully labeled detector finds everything") {
    WorldSpec spec;
    spec.noise_scale = 0.0;
    const auto pool = generate_pool(spec, 30);
    const auto out = simulate_detector(pool, ids_of(pool));
    CHECK(detection_recall(out) == 1.0);
    for (const auto& s : out) {
        CHECK(s.proposals.size() == s.truth->size());
        for (const auto& p : s.proposals) {
            CHECK(std::abs(p.consistency_iou - 1.0) < 1e-12);
            CHECK_NOTHROW(validate_proposal(p));
        }
    }
}

TEST_CASE("miss rate caps recall with nothing labeled") {
    WorldSpec spec;
    spec.max_miss_rate = 0.5;
    double sum = 0;
    const int seeds = 50;
    for (int seed = 0; seed < seeds; ++seed) {
        spec.seed = static_cast<std::uint64_t>(seed);
        const auto pool = generate_pool(spec, 20);
        sum += detection_recall(simulate_detector(pool, {}));
    }
    CHECK(std::abs(sum / seeds - 0.5) <= 0.05);
}

TEST_CASE("recall at two percent labeling sits in the weak-detector regime") {
    WorldSpec spec;
    const auto pool = generate_pool(spec, 1000);
    const auto ids = ids_of(pool);
    const std::vector<std::string> lab(ids.begin(), ids.begin() + 20);
    const double r = detection_recall(simulate_detector(pool, lab));
    CHECK(r >= 0.3);
    CHECK(r <= 0.6);
}

TEST_CASE("proxy quality floor, ceiling and monotonicity") {
    WorldSpec spec;
    const auto pool = generate_pool(spec, 200);
    const auto ids = ids_of(pool);
    const auto none = proxy_quality(pool.scenes, {}, spec);
    CHECK(none.map25 == 0.0);
    CHECK(none.map50 == 0.0);
    const auto all = proxy_quality(pool.scenes, ids, spec);
    CHECK(std::abs(all.map25 - 1.0) < 1e-12);
    CHECK(std::abs(all.map50 - 1.0) < 1e-12);

    std::vector<std::string> lab;
    ProxyScores prev = none;
    for (const auto& id : ids) {
        lab.push_back(id);
        const auto q = proxy_quality(pool.scenes, lab, spec);
        CHECK(q.map25 >= prev.map25);
        CHECK(q.map50 >= prev.map50);
        prev = q;
    }
}

TEST_CASE("covering more modes and scene types scores strictly higher") {
    WorldSpec spec;
    spec.num_classes = 1;
    spec.modes_per_class = {2};
    spec.num_scene_types = 2;
    const std::vector<SceneRecord> scenes = {hand_scene("s1", 0, {{0, 0}, {0, 0}}),
                                             hand_scene("s2", 0, {{0, 0}, {0, 0}}),
                                             hand_scene("s3", 1, {{0, 1}, {0, 1}})};
    const auto wide = proxy_quality(scenes, std::vector<std::string>{"s1", "s3"}, spec);
    const auto narrow = proxy_quality(scenes, std::vector<std::string>{"s1", "s2"}, spec);
    CHECK(wide.map25 > narrow.map25);
    CHECK(wide.map50 > narrow.map50);
}

TEST_CASE("detector rejects unknown labeled ids") {
    const auto pool = generate_pool(WorldSpec{}, 5);
    CHECK_THROWS_AS(simulate_detector(pool, std::vector<std::string>{"nope"}), std::invalid_argument);
}

TEST_CASE("degenerate specs are rejected") {
    WorldSpec spec;
    spec.num_classes = 0;
    CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
    spec = {};
    spec.max_miss_rate = 1.5;
    CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
}

TEST_CASE("id hash ignores order") {
    const std::vector<std::string> a = {"x", "y", "z"}, b = {"z", "x", "y"}, c = {"x", "y"};
    CHECK(hash_ids(a) == hash_ids(b));
    CHECK(hash_ids(a) != hash_ids(c));
}
