#include "capal/io.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <type_traits>

namespace capal {

using nlohmann::json;

FormatError::FormatError(const std::string& source, std::size_t line, const std::string& what)
    : std::runtime_error(line > 0 ? source + ":" + std::to_string(line) + ": " + what : source + ": " + what),
      line_(line) {}

namespace {

json vec(const Eigen::VectorXd& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

Eigen::VectorXd vec_from(const json& j, const char* what, Eigen::Index expect) {
    if (!j.is_array()) throw std::invalid_argument(std::string(what) + " must be an array");
    const auto v = j.get<std::vector<double>>();
    if (expect >= 0 && static_cast<Eigen::Index>(v.size()) != expect)
        throw std::invalid_argument(std::string(what) + " has length " + std::to_string(v.size()) +
                                    ", header declares " + std::to_string(expect));
    Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[i];
    if (!out.allFinite()) throw std::invalid_argument(std::string(what) + " has non-finite entries");
    return out;
}

json box_json(const Box3d& b) {
    return json::array({b.center.x(), b.center.y(), b.center.z(), b.size.x(), b.size.y(), b.size.z(), b.yaw});
}

Box3d box_from(const json& j) {
    if (!j.is_array() || j.size() != 7) throw std::invalid_argument("box must be a 7-tuple [cx,cy,cz,dx,dy,dz,yaw]");
    const auto v = j.get<std::vector<double>>();
    Box3d b({v[0], v[1], v[2]}, {v[3], v[4], v[5]}, v[6]);
    if (!b.valid()) throw std::invalid_argument("box has non-positive size or yaw outside [-pi,pi)");
    return b;
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const char* what) {
    if (!j.is_object()) throw std::invalid_argument(std::string(what) + " must be an object");
    for (const auto& [k, _] : j.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || k == a;
        if (!ok) throw std::invalid_argument(std::string(what) + ": unknown key '" + k + "'");
    }
}

}  // namespace

nlohmann::json scene_to_json(const SceneRecord& s) {
    json props = json::array();
    for (const auto& p : s.proposals) {
        json jp{{"box", box_json(p.box)},
                {"class_probs", vec(p.class_probs)},
                {"embedding", vec(p.embedding)},
                {"consistency_iou", p.consistency_iou},
                {"feature_contribution", vec(p.feature_contribution)},
                {"feature_weight", p.feature_weight}};
        if (p.mc_samples.size() > 0) {
            json rows = json::array();
            for (Eigen::Index r = 0; r < p.mc_samples.rows(); ++r) rows.push_back(vec(p.mc_samples.row(r).transpose()));
            jp["mc_samples"] = rows;
        }
        props.push_back(std::move(jp));
    }
    json j{{"scene_id", s.scene_id},
           {"proposals", props},
           {"global_feature", vec(s.global_feature)},
           {"masked_feature", vec(s.masked_feature)},
           {"masked_weight", s.masked_weight}};
    if (s.scene_type >= 0) j["scene_type"] = s.scene_type;
    if (s.truth) {
        json t = json::array();
        for (const auto& o : *s.truth) {
            json jo{{"box", box_json(o.box)}, {"class_id", o.class_id}};
            if (o.embedding.size() > 0) jo["embedding"] = vec(o.embedding);
            if (o.mode >= 0) jo["mode"] = o.mode;
            t.push_back(std::move(jo));
        }
        j["truth"] = t;
    }
    return j;
}

SceneRecord scene_from_json(const json& j, const PoolHeader& h) {
    check_keys(j, {"scene_id", "proposals", "global_feature", "masked_feature", "masked_weight", "scene_type", "truth"},
               "scene");
    SceneRecord s;
    s.scene_id = j.at("scene_id").get<std::string>();
    if (s.scene_id.empty()) throw std::invalid_argument("scene_id is empty");
    s.global_feature = vec_from(j.at("global_feature"), "global_feature", h.feature_dim);
    s.masked_feature = vec_from(j.at("masked_feature"), "masked_feature", h.feature_dim);
    s.masked_weight = j.value("masked_weight", 0.0);
    if (!(s.masked_weight >= 0.0)) throw std::invalid_argument("masked_weight must be >= 0");
    s.scene_type = j.value("scene_type", -1);

    std::size_t idx = 0;
    for (const auto& jp : j.at("proposals")) {
        const std::string where = "proposal " + std::to_string(idx++) + ": ";
        try {
            check_keys(jp, {"box", "class_probs", "embedding", "consistency_iou", "feature_contribution",
                            "feature_weight", "mc_samples"},
                       "proposal");
            Proposal p;
            p.box = box_from(jp.at("box"));
            p.class_probs = vec_from(jp.at("class_probs"), "class_probs", h.num_classes);
            p.embedding = vec_from(jp.at("embedding"), "embedding", h.embedding_dim);
            p.consistency_iou = jp.at("consistency_iou").get<double>();
            p.feature_contribution = vec_from(jp.at("feature_contribution"), "feature_contribution", h.feature_dim);
            p.feature_weight = jp.value("feature_weight", 0.0);
            if (!(p.feature_weight >= 0.0)) throw std::invalid_argument("feature_weight must be >= 0");
            p.predicted_class = argmax_class(p.class_probs);
            if (jp.contains("mc_samples")) {
                const auto& rows = jp.at("mc_samples");
                p.mc_samples.resize(static_cast<Eigen::Index>(rows.size()), h.num_classes);
                for (std::size_t r = 0; r < rows.size(); ++r)
                    p.mc_samples.row(static_cast<Eigen::Index>(r)) =
                        vec_from(rows[r], "mc_samples row", h.num_classes).transpose();
            }
            validate_proposal(p);
            s.proposals.push_back(std::move(p));
        } catch (const std::exception& e) {
            throw std::invalid_argument(where + e.what());
        }
    }
    if (j.contains("truth")) {
        std::vector<TruthObject> truth;
        for (const auto& jo : j.at("truth")) {
            check_keys(jo, {"box", "class_id", "embedding", "mode"}, "truth object");
            TruthObject o;
            o.box = box_from(jo.at("box"));
            o.class_id = jo.at("class_id").get<int>();
            if (o.class_id < 0 || o.class_id >= h.num_classes)
                throw std::invalid_argument("truth class_id " + std::to_string(o.class_id) + " out of range");
            if (jo.contains("embedding")) o.embedding = vec_from(jo.at("embedding"), "truth embedding", h.embedding_dim);
            o.mode = jo.value("mode", -1);
            truth.push_back(std::move(o));
        }
        s.truth = std::move(truth);
    }
    return s;
}

PoolHeader infer_header(const std::vector<SceneRecord>& scenes, int num_classes) {
    PoolHeader h;
    h.num_classes = num_classes;
    for (const auto& s : scenes) {
        h.feature_dim = static_cast<int>(s.global_feature.size());
        for (const auto& p : s.proposals) {
            h.embedding_dim = static_cast<int>(p.embedding.size());
            return h;
        }
    }
    return h;
}

ScenePool read_pool(std::istream& is, const std::string& source) {
    ScenePool pool;
    std::string line;
    std::size_t n = 0;
    bool have_header = false;
    std::set<std::string> ids;
    while (std::getline(is, line)) {
        ++n;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw FormatError(source, n, std::string("malformed line: ") + e.what());
        }
        if (!have_header) {
            try {
                if (!j.is_object() || j.value("format", "") != kSceneFormat)
                    throw std::invalid_argument("missing capal-scenes header");
                if (j.at("version").get<int>() != kSceneVersion)
                    throw std::invalid_argument("unsupported version " + j.at("version").dump());
                pool.header.num_classes = j.at("num_classes").get<int>();
                pool.header.embedding_dim = j.at("embedding_dim").get<int>();
                pool.header.feature_dim = j.at("feature_dim").get<int>();
                if (pool.header.num_classes < 1 || pool.header.embedding_dim < 1 || pool.header.feature_dim < 1)
                    throw std::invalid_argument("header dimensions must be >= 1");
            } catch (const std::exception& e) {
                throw FormatError(source, n, e.what());
            }
            have_header = true;
            continue;
        }
        try {
            auto s = scene_from_json(j, pool.header);
            if (!ids.insert(s.scene_id).second) throw std::invalid_argument("duplicate scene_id " + s.scene_id);
            pool.scenes.push_back(std::move(s));
        } catch (const std::exception& e) {
            throw FormatError(source, n, e.what());
        }
    }
    if (!have_header) throw FormatError(source, 0, "empty file, header line expected");
    return pool;
}

ScenePool read_pool(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path);
    return read_pool(is, path);
}

void write_pool(std::ostream& os, const ScenePool& pool) {
    os << json{{"format", kSceneFormat},
               {"version", kSceneVersion},
               {"num_classes", pool.header.num_classes},
               {"embedding_dim", pool.header.embedding_dim},
               {"feature_dim", pool.header.feature_dim}}
              .dump()
       << '\n';
    for (const auto& s : pool.scenes) os << scene_to_json(s).dump() << '\n';
}

void write_pool(const std::string& path, const ScenePool& pool) {
    std::ostringstream os;
    write_pool(os, pool);
    write_text_atomic(path, os.str());
}

// ---- configs

namespace {

template <class T>
void put(json& j, const char* key, const T& v) {
    if constexpr (std::is_enum_v<T>)
        j[key] = to_string(v);
    else
        j[key] = v;
}

inline void parse_enum(const std::string& s, Strategy& v) { v = parse_strategy(s); }
inline void parse_enum(const std::string& s, BankMode& v) { v = parse_bank_mode(s); }
inline void parse_enum(const std::string& s, UncertaintyMeasure& v) { v = parse_uncertainty_measure(s); }
inline void parse_enum(const std::string& s, UncertaintyTerms& v) { v = parse_uncertainty_terms(s); }

template <class T>
void take(const json& j, const char* key, T& v) {
    if (!j.contains(key)) return;
    try {
        if constexpr (std::is_enum_v<T>)
            parse_enum(j.at(key).get<std::string>(), v);
        else
            v = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("config key '") + key + "': " + e.what());
    }
}

template <class S, class F>
void visit_world(S& s, F&& f) {
    f("num_classes", s.num_classes);
    f("modes_per_class", s.modes_per_class);
    f("mode_decay", s.mode_decay);
    f("class_frequencies", s.class_frequencies);
    f("zipf_exponent", s.zipf_exponent);
    f("num_scene_types", s.num_scene_types);
    f("off_type_weight", s.off_type_weight);
    f("mean_objects", s.mean_objects);
    f("min_objects", s.min_objects);
    f("max_objects", s.max_objects);
    f("embedding_dim", s.embedding_dim);
    f("feature_dim", s.feature_dim);
    f("embedding_spread", s.embedding_spread);
    f("detector_embedding_noise", s.detector_embedding_noise);
    f("feature_noise", s.feature_noise);
    f("objectness", s.objectness);
    f("max_miss_rate", s.max_miss_rate);
    f("coverage_scale", s.coverage_scale);
    f("class_share", s.class_share);
    f("max_confusion", s.max_confusion);
    f("temperature_min", s.temperature_min);
    f("temperature_max", s.temperature_max);
    f("logit_signal", s.logit_signal);
    f("logit_noise", s.logit_noise);
    f("box_jitter", s.box_jitter);
    f("box_jitter_growth", s.box_jitter_growth);
    f("perturb_jitter", s.perturb_jitter);
    f("perturb_jitter_growth", s.perturb_jitter_growth);
    f("fp_rate", s.fp_rate);
    f("fp_perturb_jitter", s.fp_perturb_jitter);
    f("max_false_positives", s.max_false_positives);
    f("noise_scale", s.noise_scale);
    f("mc_samples", s.mc_samples);
    f("mc_noise", s.mc_noise);
    f("background_weight", s.background_weight);
    f("fp_region_weight", s.fp_region_weight);
    f("seed", s.seed);
}

template <class S, class F>
void visit_al(S& c, F&& f) {
    f("initial_fraction", c.initial_fraction);
    f("per_round_fraction", c.per_round_fraction);
    f("final_fraction", c.final_fraction);
    f("delta", c.delta);
    f("strategy", c.strategy);
    f("seed", c.seed);
    f("num_classes", c.num_classes);
    f("scale_k", c.uncertainty.scale_k);
    f("measure", c.uncertainty.measure);
    f("undet_iou_threshold", c.uncertainty.undet_iou_threshold);
    f("consistency_weighting", c.uncertainty.consistency_weighting);
    f("terms", c.uncertainty.terms);
    f("learning_rate", c.regressor.learning_rate);
    f("epochs", c.regressor.epochs);
    f("batch_size", c.regressor.batch_size);
    f("mask_probability", c.regressor.mask_probability);
    f("regressor_seed", c.regressor.seed);
    f("hidden1", c.regressor.hidden1);
    f("hidden2", c.regressor.hidden2);
    f("beta", c.diversity.beta);
    f("num_clusters", c.diversity.num_clusters);
    f("diversity_seed", c.diversity.seed);
    f("tau_sim", c.tau_sim);
    f("bank_batch_size", c.bank_batch_size);
    f("bank_mode", c.bank_mode);
    f("fixed_prototypes_per_class", c.fixed_prototypes_per_class);
}

template <class S, class V>
void reject_unknown(const json& j, const char* what, V visitor) {
    if (!j.is_object()) throw std::invalid_argument(std::string(what) + " must be an object");
    std::set<std::string> known;
    S probe;
    visitor(probe, [&](const char* k, auto&) { known.insert(k); });
    for (const auto& [k, _] : j.items())
        if (!known.count(k)) throw std::invalid_argument(std::string(what) + ": unknown key '" + k + "'");
}

}  // namespace

json to_json(const WorldSpec& s) {
    json j = json::object();
    visit_world(s, [&](const char* k, const auto& v) { put(j, k, v); });
    return j;
}

WorldSpec world_spec_from_json(const json& j) {
    reject_unknown<WorldSpec>(j, "world", [](auto& s, auto&& f) { visit_world(s, f); });
    WorldSpec s;
    visit_world(s, [&](const char* k, auto& v) { take(j, k, v); });
    s.validate();
    return s;
}

json to_json(const ALConfig& c) {
    json j = json::object();
    visit_al(c, [&](const char* k, const auto& v) { put(j, k, v); });
    return j;
}

ALConfig al_config_from_json(const json& j) {
    reject_unknown<ALConfig>(j, "al", [](auto& s, auto&& f) { visit_al(s, f); });
    ALConfig c;
    visit_al(c, [&](const char* k, auto& v) { take(j, k, v); });
    c.validate();
    return c;
}

json to_json(const ExperimentConfig& c) {
    return json{{"format", "capal-config"}, {"version", 1}, {"world", to_json(c.world)}, {"al", to_json(c.al)}};
}

ExperimentConfig experiment_config_from_json(const json& j) {
    check_keys(j, {"format", "version", "world", "al"}, "config");
    if (j.value("format", "capal-config") != "capal-config") throw std::invalid_argument("config: wrong format tag");
    if (j.value("version", 1) != 1) throw std::invalid_argument("config: unsupported version");
    ExperimentConfig c;
    if (j.contains("world")) c.world = world_spec_from_json(j.at("world"));
    if (j.contains("al")) c.al = al_config_from_json(j.at("al"));
    if (c.al.num_classes != c.world.num_classes)
        throw std::invalid_argument("config: al.num_classes differs from world.num_classes");
    return c;
}

ExperimentConfig load_config(const std::string& path) {
    json j;
    try {
        j = json::parse(read_text(path));
    } catch (const json::parse_error& e) {
        throw FormatError(path, 0, e.what());
    }
    return experiment_config_from_json(j);
}

std::string config_hash(const json& canonical) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : canonical.dump()) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string config_hash(const ExperimentConfig& c) { return config_hash(to_json(c)); }

// ---- metrics

const std::vector<std::string> kMetricsColumns = {"strategy",    "seed",        "round",   "labeled_fraction",
                                                  "proxy_map25", "proxy_map50", "wall_ms", "param",
                                                  "value",       "config_hash"};

namespace {

std::string real(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    out.push_back(cur);
    return out;
}

void check_field(const std::string& s) {
    if (s.find_first_of(",\n\"") != std::string::npos)
        throw std::invalid_argument("metrics field contains a comma, quote or newline: " + s);
}

}  // namespace

void write_metrics_csv(std::ostream& os, const std::vector<MetricsRow>& rows) {
    for (std::size_t i = 0; i < kMetricsColumns.size(); ++i) os << (i ? "," : "") << kMetricsColumns[i];
    os << '\n';
    for (const auto& r : rows) {
        check_field(r.m.strategy);
        check_field(r.param);
        check_field(r.value);
        check_field(r.config_hash);
        os << r.m.strategy << ',' << r.m.seed << ',' << r.m.round << ',' << real(r.m.labeled_fraction) << ','
           << real(r.m.proxy_map25) << ',' << real(r.m.proxy_map50) << ',' << real(r.m.wall_ms) << ','
           << r.param << ',' << r.value << ',' << r.config_hash << '\n';
    }
}

std::vector<MetricsRow> read_metrics_csv(std::istream& is, const std::string& source) {
    std::string line;
    std::size_t n = 0;
    if (!std::getline(is, line)) throw FormatError(source, 0, "empty metrics file");
    ++n;
    if (split_csv(line) != kMetricsColumns) throw FormatError(source, n, "unexpected metrics header");
    std::vector<MetricsRow> rows;
    while (std::getline(is, line)) {
        ++n;
        if (line.empty() || line == "\r") continue;
        const auto f = split_csv(line);
        if (f.size() != kMetricsColumns.size())
            throw FormatError(source, n, "expected " + std::to_string(kMetricsColumns.size()) + " fields");
        try {
            MetricsRow r;
            r.m.strategy = f[0];
            r.m.seed = std::stoull(f[1]);
            r.m.round = std::stoi(f[2]);
            r.m.labeled_fraction = std::stod(f[3]);
            r.m.proxy_map25 = std::stod(f[4]);
            r.m.proxy_map50 = std::stod(f[5]);
            r.m.wall_ms = std::stod(f[6]);
            r.param = f[7];
            r.value = f[8];
            r.config_hash = f[9];
            rows.push_back(std::move(r));
        } catch (const std::exception& e) {
            throw FormatError(source, n, std::string("bad number: ") + e.what());
        }
    }
    return rows;
}

json metrics_to_json(const std::vector<MetricsRow>& rows) {
    json arr = json::array();
    for (const auto& r : rows)
        arr.push_back({{"strategy", r.m.strategy},
                       {"seed", r.m.seed},
                       {"round", r.m.round},
                       {"labeled_fraction", r.m.labeled_fraction},
                       {"proxy_map25", r.m.proxy_map25},
                       {"proxy_map50", r.m.proxy_map50},
                       {"wall_ms", r.m.wall_ms},
                       {"param", r.param},
                       {"value", r.value},
                       {"config_hash", r.config_hash},
                       {"selected", r.m.selected}});
    return json{{"format", "capal-metrics"}, {"version", 1}, {"rows", arr}};
}

std::string read_text(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

void write_text_atomic(const std::string& path, const std::string& text) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw std::runtime_error("cannot open " + tmp + " for writing");
        os << text;
        if (!os) throw std::runtime_error("write failed: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace capal
