#include "coca/app/run_config.hpp"

#include "coca/app/fetch.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace coca::app {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

const std::vector<std::string>& extra_keys() {
    static const std::vector<std::string> keys = {"data_dir", "checkpoint_dir", "metrics_path", "plot_dir",
                                                  "subset",   "eval_subset",    "knn_k",        "knn_temperature",
                                                  "deterministic", "fetch_source",   "fetch_md5"};
    return keys;
}

}  // namespace

RunConfig::RunConfig() : fetch_source(kCifarUrl), fetch_md5(kCifarMd5) {
    const char* root = std::getenv(kDataRootEnv);
    data_dir = (root && *root) ? root : "data";
}

bool RunConfig::apply(const std::string& key, const std::string& value) {
    if (key == "data_dir") data_dir = value;
    else if (key == "checkpoint_dir") checkpoint_dir = value;
    else if (key == "metrics_path") metrics_path = value;
    else if (key == "plot_dir") plot_dir = value;
    else if (key == "subset") subset = parse_unsigned(key, value);
    else if (key == "eval_subset") eval_subset = parse_unsigned(key, value);
    else if (key == "knn_k") eval.k = parse_unsigned(key, value);
    else if (key == "knn_temperature") eval.temperature = parse_double(key, value);
    else if (key == "deterministic") deterministic = parse_bool(key, value);
    else if (key == "fetch_source") fetch_source = value;
    else if (key == "fetch_md5") fetch_md5 = value;
    else return apply_key(train, key, value);
    return true;
}

KeyValues RunConfig::to_key_values() const {
    auto kv = coca::to_key_values(train);
    kv["data_dir"] = data_dir;
    kv["checkpoint_dir"] = checkpoint_dir;
    kv["metrics_path"] = metrics_path;
    kv["plot_dir"] = plot_dir;
    kv["subset"] = std::to_string(subset);
    kv["eval_subset"] = std::to_string(eval_subset);
    kv["knn_k"] = std::to_string(eval.k);
    kv["knn_temperature"] = format_double(eval.temperature);
    kv["deterministic"] = deterministic ? "true" : "false";
    kv["fetch_source"] = fetch_source;
    kv["fetch_md5"] = fetch_md5;
    return kv;
}

std::string RunConfig::to_text() const {
    std::string out;
    for (const auto& [k, v] : to_key_values()) out += k + " = " + v + "\n";
    return out;
}

std::vector<std::string> run_config_keys() {
    std::set<std::string> keys;
    for (const auto& k : train_keys()) keys.insert(k);
    for (const auto& k : model_keys()) keys.insert(k);
    for (const auto& k : extra_keys()) keys.insert(k);
    return {keys.begin(), keys.end()};
}

RunConfig parse_run_config(const std::string& text, RunConfig base) {
    std::istringstream in(text);
    std::string line;
    std::set<std::string> seen;
    for (std::size_t n = 1; std::getline(in, line); ++n) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(n) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
        if (!seen.insert(key).second)
            throw std::invalid_argument("config line " + std::to_string(n) + ": duplicate key '" + key + "'");
        try {
            if (!base.apply(key, value))
                throw std::invalid_argument("unknown key '" + key + "'");
        } catch (const std::exception& e) {
            throw std::invalid_argument("config line " + std::to_string(n) + ": " + e.what());
        }
    }
    return base;
}

RunConfig load_run_config(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw std::runtime_error("cannot open config file " + file.string());
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return parse_run_config(ss.str());
    } catch (const std::exception& e) {
        throw std::invalid_argument(file.string() + ": " + e.what());
    }
}

void apply_full_scale(RunConfig& config) {
    config.train.batch_size = 512;
    config.train.epochs = 500;
    config.subset = 0;
    config.eval_subset = 0;
}

}  // namespace coca::app
