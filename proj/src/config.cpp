#include "coca/config.hpp"

#include <charconv>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "coca/checkpoint.hpp"

namespace coca {

std::string format_double(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc()) throw std::runtime_error("cannot format number");
    return std::string(buf, end);
}

double parse_double(const std::string& key, const std::string& value) {
    double v = 0.0;
    auto [end, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
    if (ec != std::errc() || end != value.data() + value.size())
        throw std::invalid_argument("key '" + key + "': expected a number, got '" + value + "'");
    return v;
}

std::uint64_t parse_unsigned(const std::string& key, const std::string& value) {
    std::uint64_t v = 0;
    auto [end, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
    if (ec != std::errc() || end != value.data() + value.size())
        throw std::invalid_argument("key '" + key + "': expected a non-negative integer, got '" + value + "'");
    return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "yes") return true;
    if (value == "false" || value == "0" || value == "no") return false;
    throw std::invalid_argument("key '" + key + "': expected true/false, got '" + value + "'");
}

namespace {

std::string join(const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

std::vector<std::size_t> split_list(const std::string& key, const std::string& value) {
    std::vector<std::size_t> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_unsigned(key, item));
    if (out.empty()) throw std::invalid_argument("key '" + key + "': empty list");
    return out;
}

}  // namespace

KeyValues to_key_values(const ModelConfig& c) {
    return {
        {"input_channels", std::to_string(c.input_channels)},
        {"image_size", std::to_string(c.image_size)},
        {"conv_channels", join(c.conv_channels)},
        {"conv_strides", join(c.conv_strides)},
        {"kernel", std::to_string(c.kernel)},
        {"padding", std::to_string(c.padding)},
        {"primary_types", std::to_string(c.primary_types)},
        {"primary_dim", std::to_string(c.primary_dim)},
        {"primary_bias", c.primary_bias ? "true" : "false"},
        {"parents", std::to_string(c.parents)},
        {"out_dim", std::to_string(c.out_dim)},
        {"routing_iterations", std::to_string(c.routing_iterations)},
        {"bn_momentum", format_double(c.bn_momentum)},
        {"bn_eps", format_double(c.bn_eps)},
    };
}

bool apply_key(ModelConfig& c, const std::string& k, const std::string& v) {
    if (k == "input_channels") c.input_channels = parse_unsigned(k, v);
    else if (k == "image_size") c.image_size = parse_unsigned(k, v);
    else if (k == "conv_channels") c.conv_channels = split_list(k, v);
    else if (k == "conv_strides") c.conv_strides = split_list(k, v);
    else if (k == "kernel") c.kernel = parse_unsigned(k, v);
    else if (k == "padding") c.padding = parse_unsigned(k, v);
    else if (k == "primary_types") c.primary_types = parse_unsigned(k, v);
    else if (k == "primary_dim") c.primary_dim = parse_unsigned(k, v);
    else if (k == "primary_bias") c.primary_bias = parse_bool(k, v);
    else if (k == "parents") c.parents = parse_unsigned(k, v);
    else if (k == "out_dim") c.out_dim = parse_unsigned(k, v);
    else if (k == "routing_iterations") c.routing_iterations = parse_unsigned(k, v);
    else if (k == "bn_momentum") c.bn_momentum = parse_double(k, v);
    else if (k == "bn_eps") c.bn_eps = parse_double(k, v);
    else return false;
    return true;
}

KeyValues to_key_values(const TrainConfig& c) {
    KeyValues kv = to_key_values(c.model);
    const auto& a = c.augment;
    kv.insert({
        {"temperature", format_double(c.temperature)},
        {"epochs", std::to_string(c.epochs)},
        {"batch_size", std::to_string(c.batch_size)},
        {"learning_rate", format_double(c.learning_rate)},
        {"weight_decay", format_double(c.weight_decay)},
        {"seed", std::to_string(c.seed)},
        {"checkpoint_every", std::to_string(c.checkpoint_every)},
        {"eval_every", std::to_string(c.eval_every)},
        {"crop_scale_min", format_double(a.crop_scale.first)},
        {"crop_scale_max", format_double(a.crop_scale.second)},
        {"flip_probability", format_double(a.flip_probability)},
        {"jitter_brightness", format_double(a.jitter_strengths[0])},
        {"jitter_contrast", format_double(a.jitter_strengths[1])},
        {"jitter_saturation", format_double(a.jitter_strengths[2])},
        {"jitter_hue", format_double(a.jitter_strengths[3])},
        {"jitter_probability", format_double(a.jitter_probability)},
        {"grayscale_probability", format_double(a.grayscale_probability)},
        {"augment_seed", std::to_string(a.seed)},
    });
    return kv;
}

bool apply_key(TrainConfig& c, const std::string& k, const std::string& v) {
    if (apply_key(c.model, k, v)) return true;
    auto& a = c.augment;
    if (k == "temperature") c.temperature = parse_double(k, v);
    else if (k == "epochs") c.epochs = parse_unsigned(k, v);
    else if (k == "batch_size") c.batch_size = parse_unsigned(k, v);
    else if (k == "learning_rate") c.learning_rate = parse_double(k, v);
    else if (k == "weight_decay") c.weight_decay = parse_double(k, v);
    else if (k == "seed") c.seed = parse_unsigned(k, v);
    else if (k == "checkpoint_every") c.checkpoint_every = parse_unsigned(k, v);
    else if (k == "eval_every") c.eval_every = parse_unsigned(k, v);
    else if (k == "crop_scale_min") a.crop_scale.first = parse_double(k, v);
    else if (k == "crop_scale_max") a.crop_scale.second = parse_double(k, v);
    else if (k == "flip_probability") a.flip_probability = parse_double(k, v);
    else if (k == "jitter_brightness") a.jitter_strengths[0] = parse_double(k, v);
    else if (k == "jitter_contrast") a.jitter_strengths[1] = parse_double(k, v);
    else if (k == "jitter_saturation") a.jitter_strengths[2] = parse_double(k, v);
    else if (k == "jitter_hue") a.jitter_strengths[3] = parse_double(k, v);
    else if (k == "jitter_probability") a.jitter_probability = parse_double(k, v);
    else if (k == "grayscale_probability") a.grayscale_probability = parse_double(k, v);
    else if (k == "augment_seed") a.seed = parse_unsigned(k, v);
    else return false;
    return true;
}

KeyValues to_key_values(const data::NormalizationStats& s) {
    KeyValues kv;
    for (std::size_t c = 0; c < data::kChannels; ++c) {
        kv["norm_mean_" + std::to_string(c)] = format_double(s.mean[c]);
        kv["norm_std_" + std::to_string(c)] = format_double(s.std[c]);
    }
    return kv;
}

bool apply_key(data::NormalizationStats& s, const std::string& k, const std::string& v) {
    for (std::size_t c = 0; c < data::kChannels; ++c) {
        if (k == "norm_mean_" + std::to_string(c)) return s.mean[c] = parse_double(k, v), true;
        if (k == "norm_std_" + std::to_string(c)) return s.std[c] = parse_double(k, v), true;
    }
    return false;
}

std::vector<std::string> model_keys() {
    std::vector<std::string> keys;
    for (const auto& [k, v] : to_key_values(ModelConfig{})) keys.push_back(k);
    return keys;
}

std::vector<std::string> train_keys() {
    std::vector<std::string> keys;
    for (const auto& [k, v] : to_key_values(TrainConfig{})) keys.push_back(k);
    return keys;
}

void TrainConfig::validate() const {
    model.validate();
    augment.validate();
    if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
    if (epochs < 1) throw std::invalid_argument("epochs must be at least 1");
    if (batch_size < 2) throw std::invalid_argument("batch_size must be at least 2");
    if (!(learning_rate >= 0.0)) throw std::invalid_argument("learning_rate must be non-negative");
    if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be non-negative");
}

std::string TrainConfig::resume_hash() const {
    auto kv = to_key_values(*this);
    kv.erase("epochs");
    kv.erase("checkpoint_every");
    kv.erase("eval_every");
    std::string canonical;
    for (const auto& [k, v] : kv) canonical += k + "=" + v + "\n";
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%08x", crc32_of(canonical));
    return buf;
}

}  // namespace coca
