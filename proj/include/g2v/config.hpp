#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "g2v/common.hpp"

namespace g2v {

// Every knob of a run, serialized next to each artifact the run writes.
// Re-running any command from a saved config with the same seed reproduces
// its outputs byte for byte.
struct TrainRunConfig {
    // run identity
    uint64_t seed = 7;
    std::string out_dir = "out";

    // world / catalog
    int image_size = 48;
    int catalog_train_size = 30;
    int catalog_eval_size = 10;
    int gripper_stride = 4;
    double capture_radius = 2.5;
    int episode_cap = 40;

    // dataset generation
    int n_triples = 2000;
    int scene_min_objects = 1;
    int scene_max_objects = 6;

    // embedding encoders
    std::string enc_channels = "16,32,64";
    int embed_dim = 64;
    std::string pixel_norm = "unit_interval";

    // embedding training
    double npairs_lambda = 0.0005;
    int batch_size = 16;
    int embed_steps = 1500;
    int checkpoint_interval = 500;
    std::string optimizer = "adam";
    double learning_rate = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;

    // autoencoder baseline
    int autoenc_steps = 600;
    int autoenc_dim = 64;
    double autoenc_lr = 1e-3;

    // goal-conditioned Q-learning
    double gamma = 0.9;
    double eps_start = 1.0;
    double eps_end = 0.1;
    int target_sync = 500;
    int replay_capacity = 50000;
    int rl_batch = 32;
    double rl_lr = 5e-4;
    int rl_rounds = 40;
    int rl_episodes_per_round = 50;
    int rl_updates_per_round = 200;
    int goal_set_size = 10;
    int round_pool_size = 10;
    int rl_scene_objects = 5;
    int q_image_size = 24;
    std::string labeler = "pl_es";           // indiscriminate|pl|pl_aux0|pl_es|pl_aux_es|oracle|pl_es_autoenc
    std::string conditioning = "raw_image";  // none|raw_image|goal_embedding

    // evaluation
    int eval_trials = 700;
    int eval_queries = 500;
    int heatmap_exports = 8;

    // two-stage grasping
    double ts_threshold = 0.7;
    int ts_budget = 40;
    int ts_max_redrops = 5;
    int ts_trials = 500;

    std::map<std::string, std::string> to_kv() const;
    void apply_kv(const std::map<std::string, std::string>& kv);
    void save(const std::string& path) const;
    static TrainRunConfig load(const std::string& path);
};

namespace detail {
inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

template <typename T>
std::string kv_str(const T& v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}
}  // namespace detail

inline std::map<std::string, std::string> TrainRunConfig::to_kv() const {
    using detail::kv_str;
    std::map<std::string, std::string> kv;
    kv["seed"] = kv_str(seed);
    kv["out_dir"] = out_dir;
    kv["image_size"] = kv_str(image_size);
    kv["catalog_train_size"] = kv_str(catalog_train_size);
    kv["catalog_eval_size"] = kv_str(catalog_eval_size);
    kv["gripper_stride"] = kv_str(gripper_stride);
    kv["capture_radius"] = kv_str(capture_radius);
    kv["episode_cap"] = kv_str(episode_cap);
    kv["n_triples"] = kv_str(n_triples);
    kv["scene_min_objects"] = kv_str(scene_min_objects);
    kv["scene_max_objects"] = kv_str(scene_max_objects);
    kv["enc_channels"] = enc_channels;
    kv["embed_dim"] = kv_str(embed_dim);
    kv["pixel_norm"] = pixel_norm;
    kv["npairs_lambda"] = kv_str(npairs_lambda);
    kv["batch_size"] = kv_str(batch_size);
    kv["embed_steps"] = kv_str(embed_steps);
    kv["checkpoint_interval"] = kv_str(checkpoint_interval);
    kv["optimizer"] = optimizer;
    kv["learning_rate"] = kv_str(learning_rate);
    kv["adam_beta1"] = kv_str(adam_beta1);
    kv["adam_beta2"] = kv_str(adam_beta2);
    kv["adam_eps"] = kv_str(adam_eps);
    kv["autoenc_steps"] = kv_str(autoenc_steps);
    kv["autoenc_dim"] = kv_str(autoenc_dim);
    kv["autoenc_lr"] = kv_str(autoenc_lr);
    kv["gamma"] = kv_str(gamma);
    kv["eps_start"] = kv_str(eps_start);
    kv["eps_end"] = kv_str(eps_end);
    kv["target_sync"] = kv_str(target_sync);
    kv["replay_capacity"] = kv_str(replay_capacity);
    kv["rl_batch"] = kv_str(rl_batch);
    kv["rl_lr"] = kv_str(rl_lr);
    kv["rl_rounds"] = kv_str(rl_rounds);
    kv["rl_episodes_per_round"] = kv_str(rl_episodes_per_round);
    kv["rl_updates_per_round"] = kv_str(rl_updates_per_round);
    kv["goal_set_size"] = kv_str(goal_set_size);
    kv["round_pool_size"] = kv_str(round_pool_size);
    kv["rl_scene_objects"] = kv_str(rl_scene_objects);
    kv["q_image_size"] = kv_str(q_image_size);
    kv["labeler"] = labeler;
    kv["conditioning"] = conditioning;
    kv["eval_trials"] = kv_str(eval_trials);
    kv["eval_queries"] = kv_str(eval_queries);
    kv["heatmap_exports"] = kv_str(heatmap_exports);
    kv["ts_threshold"] = kv_str(ts_threshold);
    kv["ts_budget"] = kv_str(ts_budget);
    kv["ts_max_redrops"] = kv_str(ts_max_redrops);
    kv["ts_trials"] = kv_str(ts_trials);
    return kv;
}

inline void TrainRunConfig::apply_kv(const std::map<std::string, std::string>& kv) {
    auto geti = [&](const char* k, int& dst) {
        auto it = kv.find(k);
        if (it != kv.end()) dst = std::stoi(it->second);
    };
    auto getd = [&](const char* k, double& dst) {
        auto it = kv.find(k);
        if (it != kv.end()) dst = std::stod(it->second);
    };
    auto gets = [&](const char* k, std::string& dst) {
        auto it = kv.find(k);
        if (it != kv.end()) dst = it->second;
    };
    auto it = kv.find("seed");
    if (it != kv.end()) seed = std::stoull(it->second);
    gets("out_dir", out_dir);
    geti("image_size", image_size);
    geti("catalog_train_size", catalog_train_size);
    geti("catalog_eval_size", catalog_eval_size);
    geti("gripper_stride", gripper_stride);
    getd("capture_radius", capture_radius);
    geti("episode_cap", episode_cap);
    geti("n_triples", n_triples);
    geti("scene_min_objects", scene_min_objects);
    geti("scene_max_objects", scene_max_objects);
    gets("enc_channels", enc_channels);
    geti("embed_dim", embed_dim);
    gets("pixel_norm", pixel_norm);
    getd("npairs_lambda", npairs_lambda);
    geti("batch_size", batch_size);
    geti("embed_steps", embed_steps);
    geti("checkpoint_interval", checkpoint_interval);
    gets("optimizer", optimizer);
    getd("learning_rate", learning_rate);
    getd("adam_beta1", adam_beta1);
    getd("adam_beta2", adam_beta2);
    getd("adam_eps", adam_eps);
    geti("autoenc_steps", autoenc_steps);
    geti("autoenc_dim", autoenc_dim);
    getd("autoenc_lr", autoenc_lr);
    getd("gamma", gamma);
    getd("eps_start", eps_start);
    getd("eps_end", eps_end);
    geti("target_sync", target_sync);
    geti("replay_capacity", replay_capacity);
    geti("rl_batch", rl_batch);
    getd("rl_lr", rl_lr);
    geti("rl_rounds", rl_rounds);
    geti("rl_episodes_per_round", rl_episodes_per_round);
    geti("rl_updates_per_round", rl_updates_per_round);
    geti("goal_set_size", goal_set_size);
    geti("round_pool_size", round_pool_size);
    geti("rl_scene_objects", rl_scene_objects);
    geti("q_image_size", q_image_size);
    gets("labeler", labeler);
    gets("conditioning", conditioning);
    geti("eval_trials", eval_trials);
    geti("eval_queries", eval_queries);
    geti("heatmap_exports", heatmap_exports);
    getd("ts_threshold", ts_threshold);
    geti("ts_budget", ts_budget);
    geti("ts_max_redrops", ts_max_redrops);
    geti("ts_trials", ts_trials);
}

inline void TrainRunConfig::save(const std::string& path) const {
    std::ofstream os(path);
    require(os.good(), "cannot open config for writing: ", path);
    os << "# grasp2vec run configuration\n";
    for (const auto& [k, v] : to_kv()) os << k << " = " << v << "\n";
    require(os.good(), "I/O failure while writing config: ", path);
}

inline TrainRunConfig TrainRunConfig::load(const std::string& path) {
    std::ifstream is(path);
    require(is.good(), "cannot open config: ", path);
    std::map<std::string, std::string> kv;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#') continue;
        size_t eq = t.find('=');
        require(eq != std::string::npos, "bad config line ", lineno, " in ", path, ": ", line);
        kv[detail::trim(t.substr(0, eq))] = detail::trim(t.substr(eq + 1));
    }
    TrainRunConfig cfg;
    cfg.apply_kv(kv);
    return cfg;
}

}  // namespace g2v
