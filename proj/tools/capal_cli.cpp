#include "capal/al_core.hpp"
#include "capal/io.hpp"
#include "capal/regressor.hpp"
#include "capal/simulator.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

using namespace capal;
using nlohmann::json;

namespace {

json load_config_json(const std::string& path) {
    if (path.empty()) return to_json(ExperimentConfig{});
    json j = json::parse(read_text(path));
    // normalise through the typed config so defaults are filled in and checked
    return to_json(experiment_config_from_json(j));
}

json parse_value(const std::string& s) {
    try {
        return json::parse(s);
    } catch (const json::parse_error&) {
        return s;
    }
}

std::string resolve_key(const std::string& param, const json& cfg, std::string& section) {
    static const std::map<std::string, std::string> alias = {{"k", "scale_k"}, {"tau", "tau_sim"}};
    std::string key = param;
    section = "al";
    if (const auto dot = key.find('.'); dot != std::string::npos) {
        section = key.substr(0, dot);
        key = key.substr(dot + 1);
        if (section != "al" && section != "world") throw std::invalid_argument("unknown config section " + section);
    }
    if (const auto it = alias.find(key); it != alias.end()) key = it->second;
    if (!cfg.at(section).contains(key)) throw std::invalid_argument("unknown parameter " + param);
    return key;
}

/// Seed flows into both the world and the engine.
void apply_seed(json& cfg, std::uint64_t seed) {
    cfg["world"]["seed"] = seed;
    cfg["al"]["seed"] = seed;
}

std::vector<std::string> read_ids(const std::string& path) {
    const std::string text = read_text(path);
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && text[first] == '{') {
        const json j = json::parse(text);
        if (j.contains("labeled")) return j.at("labeled").get<std::vector<std::string>>();
        if (j.contains("selected")) return j.at("selected").get<std::vector<std::string>>();
        throw std::invalid_argument(path + ": JSON id file needs a 'labeled' or 'selected' array");
    }
    std::vector<std::string> ids;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        line.erase(std::remove_if(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); }),
                   line.end());
        if (!line.empty() && line[0] != '#') ids.push_back(line);
    }
    return ids;
}

std::vector<std::string> pool_ids(const std::vector<SceneRecord>& scenes) {
    std::vector<std::string> ids;
    for (const auto& s : scenes) ids.push_back(s.scene_id);
    return ids;
}

void require_known(const std::vector<std::string>& ids, const std::vector<SceneRecord>& scenes) {
    std::set<std::string> known;
    for (const auto& s : scenes) known.insert(s.scene_id);
    for (const auto& id : ids)
        if (!known.count(id)) throw std::invalid_argument("id not in pool: " + id);
}

int cmd_simulate(const std::string& config_path, std::optional<std::uint64_t> seed, std::size_t n_scenes,
                 const std::string& labeled_path, const std::string& out) {
    json cj = load_config_json(config_path);
    if (seed) apply_seed(cj, *seed);
    const auto cfg = experiment_config_from_json(cj);
    const auto pool = generate_pool(cfg.world, n_scenes);
    const auto ids = pool_ids(pool.scenes);
    std::vector<std::string> labeled;
    if (!labeled_path.empty()) {
        labeled = read_ids(labeled_path);
        require_known(labeled, pool.scenes);
    } else {
        labeled = initial_state(ids, cfg.al).labeled;
    }
    ScenePool sp;
    sp.header = {cfg.world.num_classes, cfg.world.embedding_dim, cfg.world.feature_dim};
    sp.scenes = simulate_detector(pool, labeled);
    write_pool(out, sp);
    std::cerr << "wrote " << sp.scenes.size() << " scenes to " << out << " (config " << config_hash(cj)
              << ", recall " << detection_recall(sp.scenes) << ")\n";
    return 0;
}

int cmd_select(const std::string& pool_path, const std::string& config_path, const std::string& state_path,
               const std::string& strategy, std::optional<std::uint64_t> seed, const std::string& out,
               const std::string& state_out) {
    json cj = load_config_json(config_path);
    if (seed) cj["al"]["seed"] = *seed;
    if (!strategy.empty()) cj["al"]["strategy"] = strategy;
    const auto cfg = experiment_config_from_json(cj);
    const std::string hash = config_hash(cj);
    const auto pool = read_pool(pool_path);
    if (pool.header.num_classes != cfg.al.num_classes)
        throw std::invalid_argument("pool declares " + std::to_string(pool.header.num_classes) +
                                    " classes, config has " + std::to_string(cfg.al.num_classes));

    RoundState next;
    if (state_path.empty()) {
        next = initial_state(pool_ids(pool.scenes), cfg.al);
    } else {
        std::string prev_hash;
        const auto st = load_state(state_path, &prev_hash);
        if (prev_hash != hash)
            std::cerr << "warning: state was written under config " << prev_hash << ", now " << hash << "\n";
        next = run_round(st, pool.scenes, cfg.al);
    }
    const json sel{{"format", "capal-selection"},
                   {"version", 1},
                   {"config_hash", hash},
                   {"strategy", to_string(cfg.al.strategy)},
                   {"seed", cfg.al.seed},
                   {"round", next.round},
                   {"selected", next.selected}};
    write_text_atomic(out, sel.dump(1) + "\n");
    if (!state_out.empty()) save_state(state_out, next, hash);
    std::cerr << "round " << next.round << ": selected " << next.selected.size() << " scenes, "
              << next.labeled.size() << " labeled\n";
    return 0;
}

int cmd_train(const std::string& pool_path, const std::string& config_path, const std::string& labeled_path,
              std::optional<std::uint64_t> seed, const std::string& out) {
    json cj = load_config_json(config_path);
    if (seed) cj["al"]["regressor_seed"] = *seed;
    const auto cfg = experiment_config_from_json(cj);
    const auto pool = read_pool(pool_path);
    std::set<std::string> keep;
    if (!labeled_path.empty()) {
        const auto ids = read_ids(labeled_path);
        require_known(ids, pool.scenes);
        keep.insert(ids.begin(), ids.end());
    }
    std::vector<SceneRecord> train_set;
    for (const auto& s : pool.scenes)
        if (s.truth && (keep.empty() || keep.count(s.scene_id))) train_set.push_back(s);
    if (train_set.empty()) throw std::invalid_argument("no labeled scenes to train on");
    TrainConfig tc = cfg.al.regressor;
    tc.iou_threshold = cfg.al.uncertainty.undet_iou_threshold;
    const auto params = train(train_set, tc);

    std::ostringstream os;
    save_params(os, params);
    os << "config_hash " << config_hash(cj) << '\n';
    write_text_atomic(out, os.str());
    double mse = 0.0;
    for (const auto& s : train_set) {
        const auto smp = scene_sample(s, tc.iou_threshold);
        const double e = forward(params, smp.input) - smp.target;
        mse += e * e;
    }
    std::cerr << "trained on " << train_set.size() << " scenes, train mse " << mse / train_set.size() << "\n";
    return 0;
}

int cmd_evaluate(const std::string& pool_path, const std::string& config_path, const std::string& labeled_path,
                 bool all, const std::string& out) {
    const json cj = load_config_json(config_path);
    const auto cfg = experiment_config_from_json(cj);
    const auto pool = read_pool(pool_path);
    std::vector<std::string> labeled;
    if (all)
        labeled = pool_ids(pool.scenes);
    else if (!labeled_path.empty())
        labeled = read_ids(labeled_path);
    else
        throw std::invalid_argument("evaluate needs --labeled or --all");
    require_known(labeled, pool.scenes);
    const auto q = proxy_quality(pool.scenes, labeled, cfg.world);
    const json j{{"format", "capal-eval"},
                 {"version", 1},
                 {"config_hash", config_hash(cj)},
                 {"labeled", labeled.size()},
                 {"pool", pool.scenes.size()},
                 {"proxy_map25", q.map25},
                 {"proxy_map50", q.map50},
                 {"detection_recall", detection_recall(pool.scenes)}};
    if (out.empty())
        std::cout << j.dump(1) << '\n';
    else
        write_text_atomic(out, j.dump(1) + "\n");
    return 0;
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(s);
    while (std::getline(is, cur, sep))
        if (!cur.empty()) out.push_back(cur);
    return out;
}

int cmd_sweep(const std::string& config_path, const std::string& param, const std::string& values,
              const std::string& seeds, std::size_t n_scenes, const std::string& out, const std::string& json_out) {
    const json base = load_config_json(config_path);
    const std::string hash = config_hash(base);
    std::vector<std::string> vals = param.empty() ? std::vector<std::string>{""} : split(values, ',');
    if (vals.empty()) throw std::invalid_argument("--values is empty");
    std::vector<std::uint64_t> seed_list;
    for (const auto& s : split(seeds, ',')) seed_list.push_back(std::stoull(s));
    if (seed_list.empty()) throw std::invalid_argument("--seeds is empty");

    std::vector<MetricsRow> rows;
    for (const auto& v : vals) {
        for (std::uint64_t seed : seed_list) {
            json cj = base;
            apply_seed(cj, seed);
            if (!param.empty()) {
                std::string section;
                const auto key = resolve_key(param, cj, section);
                cj[section][key] = parse_value(v);
            }
            const auto cfg = experiment_config_from_json(cj);
            const auto pool = generate_pool(cfg.world, n_scenes);
            const auto ids = pool_ids(pool.scenes);
            const DetectorFn det = [&](const std::vector<std::string>& lab) { return simulate_detector(pool, lab); };
            const EvaluateFn ev = [&](const std::vector<std::string>& lab) {
                const auto q = proxy_quality(pool.scenes, lab, cfg.world);
                return EvalScores{q.map25, q.map50};
            };
            const auto res = run_experiment(ids, det, ev, cfg.al, cfg.al.num_rounds());
            for (const auto& m : res.metrics) rows.push_back({m, param, v, hash});
            std::cerr << (param.empty() ? "" : param + "=" + v + " ") << "seed " << seed << ": final proxy "
                      << res.metrics.back().proxy_map25 << " / " << res.metrics.back().proxy_map50 << "\n";
        }
    }
    std::ostringstream os;
    write_metrics_csv(os, rows);
    write_text_atomic(out, os.str());
    if (!json_out.empty()) write_text_atomic(json_out, metrics_to_json(rows).dump(1) + "\n");
    return 0;
}

int cmd_report(const std::vector<std::string>& inputs, bool force, const std::string& out) {
    std::vector<MetricsRow> rows;
    std::set<std::string> hashes;
    for (const auto& path : inputs) {
        std::ifstream is(path);
        if (!is) throw std::runtime_error("cannot open " + path);
        for (auto& r : read_metrics_csv(is, path)) {
            hashes.insert(r.config_hash);
            rows.push_back(std::move(r));
        }
    }
    if (hashes.size() > 1 && !force) {
        std::string list;
        for (const auto& h : hashes) list += " " + h;
        throw std::runtime_error("rows come from different configs (" + list.substr(1) +
                                 "); pass --force to merge anyway");
    }

    struct Acc {
        std::vector<double> m25, m50;
        double labeled = 0.0;
    };
    using Key = std::tuple<std::string, std::string, std::string, int>;
    std::map<Key, Acc> groups;
    for (const auto& r : rows) {
        auto& a = groups[{r.m.strategy, r.param, r.value, r.m.round}];
        a.m25.push_back(r.m.proxy_map25);
        a.m50.push_back(r.m.proxy_map50);
        a.labeled = r.m.labeled_fraction;
    }
    const auto stats = [](const std::vector<double>& v) {
        double mean = 0.0;
        for (double x : v) mean += x;
        mean /= static_cast<double>(v.size());
        double var = 0.0;
        for (double x : v) var += (x - mean) * (x - mean);
        const double sd = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0;
        return std::pair{mean, sd};
    };

    std::ostringstream os;
    os << std::fixed << std::setprecision(4);
    os << "| strategy | param | value | round | labeled | n | proxy_map25 | sd | proxy_map50 | sd |\n";
    os << "|---|---|---|---|---|---|---|---|---|---|\n";
    for (const auto& [k, a] : groups) {
        const auto [m25, s25] = stats(a.m25);
        const auto [m50, s50] = stats(a.m50);
        os << "| " << std::get<0>(k) << " | " << std::get<1>(k) << " | " << std::get<2>(k) << " | "
           << std::get<3>(k) << " | " << a.labeled << " | " << a.m25.size() << " | " << m25 << " | " << s25
           << " | " << m50 << " | " << s50 << " |\n";
    }
    if (hashes.size() == 1) os << "\nconfig_hash " << *hashes.begin() << "\n";
    if (out.empty())
        std::cout << os.str();
    else
        write_text_atomic(out, os.str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"capal: active learning selection for indoor 3D detection"};
    app.require_subcommand(1);

    std::string config, pool_path, out, labeled, state, state_out, strategy, param, values, json_out;
    std::string seeds = "0";
    std::optional<std::uint64_t> seed;
    std::size_t scenes = 1000;
    bool all = false, force = false;
    std::vector<std::string> inputs;

    auto* sim = app.add_subcommand("simulate", "generate a synthetic pool with detector outputs");
    sim->add_option("--config", config, "experiment config (JSON)")->check(CLI::ExistingFile);
    sim->add_option("--seed", seed, "world seed (overrides the config)");
    sim->add_option("--scenes", scenes, "number of scenes")->check(CLI::PositiveNumber);
    sim->add_option("--labeled", labeled, "ids the detector was trained on (default: the initial random draw)")
        ->check(CLI::ExistingFile);
    sim->add_option("--out", out, "output scene file")->required();

    auto* sel = app.add_subcommand("select", "run one acquisition round");
    sel->add_option("--pool", pool_path, "scene file with current detector outputs")->required()->check(CLI::ExistingFile);
    sel->add_option("--config", config, "experiment config (JSON)")->check(CLI::ExistingFile);
    sel->add_option("--state", state, "round-state checkpoint (omit for the initial draw)")->check(CLI::ExistingFile);
    sel->add_option("--strategy", strategy, "acquisition strategy (overrides the config)");
    sel->add_option("--seed", seed, "engine seed (overrides the config)");
    sel->add_option("--out", out, "selection file")->required();
    sel->add_option("--state-out", state_out, "new round-state checkpoint");

    auto* tr = app.add_subcommand("train-undet", "train the undetected-count regressor");
    tr->add_option("--pool", pool_path, "scene file")->required()->check(CLI::ExistingFile);
    tr->add_option("--config", config, "experiment config (JSON)")->check(CLI::ExistingFile);
    tr->add_option("--labeled", labeled, "restrict training to these ids")->check(CLI::ExistingFile);
    tr->add_option("--seed", seed, "regressor seed (overrides the config)");
    tr->add_option("--out", out, "parameter file")->required();

    auto* ev = app.add_subcommand("evaluate", "proxy quality of a labeled set");
    ev->add_option("--pool", pool_path, "scene file with truth")->required()->check(CLI::ExistingFile);
    ev->add_option("--config", config, "experiment config (JSON)")->check(CLI::ExistingFile);
    ev->add_option("--labeled", labeled, "labeled ids (text or state/selection JSON)")->check(CLI::ExistingFile);
    ev->add_flag("--all", all, "treat the whole pool as labeled");
    ev->add_option("--out", out, "write JSON here instead of stdout");

    auto* sw = app.add_subcommand("sweep", "grid over one parameter and seeds on the simulator");
    sw->add_option("--config", config, "base experiment config (JSON)")->check(CLI::ExistingFile);
    sw->add_option("--param", param, "parameter to sweep: k, delta, tau_sim, beta, strategy, seed or any al./world. key");
    sw->add_option("--values", values, "comma-separated values");
    sw->add_option("--seeds", seeds, "comma-separated seeds");
    sw->add_option("--scenes", scenes, "scenes per pool")->check(CLI::PositiveNumber);
    sw->add_option("--out", out, "metrics CSV")->required();
    sw->add_option("--json", json_out, "JSON mirror of the metrics");

    auto* rep = app.add_subcommand("report", "summary tables from metrics CSVs");
    rep->add_option("inputs", inputs, "metrics CSV files")->required()->check(CLI::ExistingFile);
    rep->add_flag("--force", force, "merge rows with different config hashes");
    rep->add_option("--out", out, "write the table here instead of stdout");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*sim) return cmd_simulate(config, seed, scenes, labeled, out);
        if (*sel) return cmd_select(pool_path, config, state, strategy, seed, out, state_out);
        if (*tr) return cmd_train(pool_path, config, labeled, seed, out);
        if (*ev) return cmd_evaluate(pool_path, config, labeled, all, out);
        if (*sw) {
            if (param == "seed") {
                seeds = values;
                param.clear();
            } else if (!param.empty() && values.empty()) {
                throw std::invalid_argument("--param needs --values");
            }
            return cmd_sweep(config, param, values, seeds, scenes, out, json_out);
        }
        if (*rep) return cmd_report(inputs, force, out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
