#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "genrefusion/errors.hpp"

namespace genrefusion {

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

// Every tunable of the pipeline, loadable from a `key = value` file with
// command-line overrides on top (flags > file > defaults). Unknown keys are
// errors, not warnings. The canonical text form is echoed into output
// artifacts and is itself loadable, so any artifact can be reproduced from
// the config it carries.
struct RunConfig {
    // paths
    std::string manifest;
    std::string alias_table;
    std::string data_dir;
    std::string checkpoint;
    std::string out_dir;

    // shared
    std::uint64_t seed = 0;
    std::string modality = "fused";  // text | image | fused

    // text pipeline
    std::size_t max_len = 200;
    int min_count = 10;
    bool use_title = false;

    // image pipeline
    std::size_t image_size = 64;

    // model dims
    std::size_t embed_dim = 128;
    std::size_t lstm_hidden = 256;
    std::string conv_channels = "8,16,32";
    std::size_t image_feature_dim = 1024;

    // training
    std::size_t epochs = 20;
    std::size_t batch_size = 32;
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    bool freeze_encoders = false;
    std::size_t patience = 5;  // 0 disables early stopping

    // dataset
    bool stratify = false;
    std::string eval_split = "test";  // train | validation | test

    // synthetic corpus
    std::size_t synth_count = 150;
    int synth_genres = 15;
    double p_text = 1.0;
    double p_img = 1.0;
    std::string synth_signal = "full";  // full | complementary

    void set(const std::string& key, const std::string& value) {
        auto parse_u64 = [&](const char* what) -> std::uint64_t {
            try {
                return std::stoull(value);
            } catch (const std::exception&) {
                throw ConfigError(std::string("config: bad ") + what + " value '" + value + "'");
            }
        };
        auto parse_double = [&](const char* what) -> double {
            try {
                return std::stod(value);
            } catch (const std::exception&) {
                throw ConfigError(std::string("config: bad ") + what + " value '" + value + "'");
            }
        };
        auto parse_bool = [&](const char* what) -> bool {
            if (value == "true" || value == "1") return true;
            if (value == "false" || value == "0") return false;
            throw ConfigError(std::string("config: bad ") + what + " value '" + value + "'");
        };
        if (key == "manifest") manifest = value;
        else if (key == "alias_table") alias_table = value;
        else if (key == "data_dir") data_dir = value;
        else if (key == "checkpoint") checkpoint = value;
        else if (key == "out_dir") out_dir = value;
        else if (key == "seed") seed = parse_u64("seed");
        else if (key == "modality") modality = value;
        else if (key == "max_len") max_len = parse_u64("max_len");
        else if (key == "min_count") min_count = static_cast<int>(parse_u64("min_count"));
        else if (key == "use_title") use_title = parse_bool("use_title");
        else if (key == "image_size") image_size = parse_u64("image_size");
        else if (key == "embed_dim") embed_dim = parse_u64("embed_dim");
        else if (key == "lstm_hidden") lstm_hidden = parse_u64("lstm_hidden");
        else if (key == "conv_channels") conv_channels = value;
        else if (key == "image_feature_dim") image_feature_dim = parse_u64("image_feature_dim");
        else if (key == "epochs") epochs = parse_u64("epochs");
        else if (key == "batch_size") batch_size = parse_u64("batch_size");
        else if (key == "lr") lr = parse_double("lr");
        else if (key == "beta1") beta1 = parse_double("beta1");
        else if (key == "beta2") beta2 = parse_double("beta2");
        else if (key == "adam_eps") adam_eps = parse_double("adam_eps");
        else if (key == "freeze_encoders") freeze_encoders = parse_bool("freeze_encoders");
        else if (key == "patience") patience = parse_u64("patience");
        else if (key == "stratify") stratify = parse_bool("stratify");
        else if (key == "eval_split") eval_split = value;
        else if (key == "synth_count") synth_count = parse_u64("synth_count");
        else if (key == "synth_genres") synth_genres = static_cast<int>(parse_u64("synth_genres"));
        else if (key == "p_text") p_text = parse_double("p_text");
        else if (key == "p_img") p_img = parse_double("p_img");
        else if (key == "synth_signal") synth_signal = value;
        else throw ConfigError("config: unknown key '" + key + "'");
    }

    std::vector<std::pair<std::string, std::string>> entries() const {
        using detail::format_double;
        return {
            {"manifest", manifest},
            {"alias_table", alias_table},
            {"data_dir", data_dir},
            {"checkpoint", checkpoint},
            {"out_dir", out_dir},
            {"seed", std::to_string(seed)},
            {"modality", modality},
            {"max_len", std::to_string(max_len)},
            {"min_count", std::to_string(min_count)},
            {"use_title", use_title ? "true" : "false"},
            {"image_size", std::to_string(image_size)},
            {"embed_dim", std::to_string(embed_dim)},
            {"lstm_hidden", std::to_string(lstm_hidden)},
            {"conv_channels", conv_channels},
            {"image_feature_dim", std::to_string(image_feature_dim)},
            {"epochs", std::to_string(epochs)},
            {"batch_size", std::to_string(batch_size)},
            {"lr", format_double(lr)},
            {"beta1", format_double(beta1)},
            {"beta2", format_double(beta2)},
            {"adam_eps", format_double(adam_eps)},
            {"freeze_encoders", freeze_encoders ? "true" : "false"},
            {"patience", std::to_string(patience)},
            {"stratify", stratify ? "true" : "false"},
            {"eval_split", eval_split},
            {"synth_count", std::to_string(synth_count)},
            {"synth_genres", std::to_string(synth_genres)},
            {"p_text", format_double(p_text)},
            {"p_img", format_double(p_img)},
            {"synth_signal", synth_signal},
        };
    }

    std::string to_text() const {
        std::ostringstream out;
        for (const auto& [k, v] : entries()) out << k << " = " << v << "\n";
        return out.str();
    }

    std::map<std::string, std::string> to_map() const {
        std::map<std::string, std::string> m;
        for (const auto& [k, v] : entries()) m[k] = v;
        return m;
    }

    void apply_text(const std::string& text, const std::string& origin) {
        std::istringstream in(text);
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            const std::string stripped = detail::trim(line);
            if (stripped.empty() || stripped[0] == '#') continue;
            const auto eq = stripped.find('=');
            if (eq == std::string::npos) {
                throw ConfigError(origin + " line " + std::to_string(line_no) +
                                  ": expected key = value");
            }
            set(detail::trim(stripped.substr(0, eq)), detail::trim(stripped.substr(eq + 1)));
        }
    }

    void apply_file(const std::filesystem::path& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot read config file: " + path.string());
        std::ostringstream buf;
        buf << in.rdbuf();
        apply_text(buf.str(), path.string());
    }

    void write(const std::filesystem::path& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw IoError("cannot write config file: " + path.string());
        out << to_text();
    }

    std::vector<std::size_t> conv_channel_list() const {
        std::vector<std::size_t> channels;
        std::string cur;
        for (char c : conv_channels + ",") {
            if (c == ',') {
                if (!detail::trim(cur).empty()) {
                    try {
                        channels.push_back(std::stoull(detail::trim(cur)));
                    } catch (const std::exception&) {
                        throw ConfigError("config: bad conv_channels entry '" + cur + "'");
                    }
                }
                cur.clear();
            } else {
                cur.push_back(c);
            }
        }
        if (channels.empty()) throw ConfigError("config: conv_channels is empty");
        return channels;
    }
};

}  // namespace genrefusion
