#include "usra/config.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "usra/error.hpp"

namespace usra {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

struct KeyParser {
    const std::string& source;
    int line_no;
    const std::string& value;

    [[noreturn]] void fail(const std::string& why) const {
        raise(ErrorKind::config, source + ":" + std::to_string(line_no) + ": " + why);
    }
    float as_float(const std::string& key) const {
        char* end = nullptr;
        const float v = std::strtof(value.c_str(), &end);
        if (end == value.c_str() || *end != '\0' || !std::isfinite(v)) fail("bad value for " + key + ": '" + value + "'");
        return v;
    }
    int as_int(const std::string& key) const {
        char* end = nullptr;
        const long v = std::strtol(value.c_str(), &end, 10);
        if (end == value.c_str() || *end != '\0' || v < -2147483647L || v > 2147483647L)
            fail("bad value for " + key + ": '" + value + "'");
        return static_cast<int>(v);
    }
    uint64_t as_u64(const std::string& key) const {
        char* end = nullptr;
        const unsigned long long v = std::strtoull(value.c_str(), &end, 10);
        if (end == value.c_str() || *end != '\0') fail("bad value for " + key + ": '" + value + "'");
        return static_cast<uint64_t>(v);
    }
    bool as_bool(const std::string& key) const {
        if (value == "true" || value == "1") return true;
        if (value == "false" || value == "0") return false;
        fail("bad value for " + key + ": '" + value + "' (expected true/false)");
    }
};

}  // namespace

TrainConfig parse_config_text(const std::string& text, const std::string& source_name) {
    TrainConfig cfg;
    std::set<std::string> seen;
    std::istringstream in(text);
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string line = raw;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            raise(ErrorKind::config, source_name + ":" + std::to_string(line_no) + ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty())
            raise(ErrorKind::config, source_name + ":" + std::to_string(line_no) + ": expected 'key = value'");
        if (!seen.insert(key).second)
            raise(ErrorKind::config, source_name + ":" + std::to_string(line_no) + ": duplicate key '" + key + "'");

        const KeyParser p{source_name, line_no, value};
        if (key == "gamma") cfg.gamma = p.as_float(key);
        else if (key == "zeta") cfg.zeta = p.as_float(key);
        else if (key == "beta1") cfg.beta1 = p.as_float(key);
        else if (key == "beta2") cfg.beta2 = p.as_float(key);
        else if (key == "kl_weight") cfg.kl_weight = p.as_float(key);
        else if (key == "lr_base") cfg.lr_base = p.as_float(key);
        else if (key == "encoder_lr_divisor") cfg.encoder_lr_divisor = p.as_int(key);
        else if (key == "pretrain_frames") cfg.pretrain_frames = p.as_int(key);
        else if (key == "pretrain_epochs") cfg.pretrain_epochs = p.as_int(key);
        else if (key == "batch_lusr") cfg.batch_lusr = p.as_int(key);
        else if (key == "batch_svea") cfg.batch_svea = p.as_int(key);
        else if (key == "episodes") cfg.episodes = p.as_int(key);
        else if (key == "episode_length") cfg.episode_length = p.as_int(key);
        else if (key == "replay_capacity") cfg.replay_capacity = p.as_int(key);
        else if (key == "warmup_steps") cfg.warmup_steps = p.as_int(key);
        else if (key == "update_every") cfg.update_every = p.as_int(key);
        else if (key == "epsilon_start") cfg.epsilon_start = p.as_float(key);
        else if (key == "epsilon_final") cfg.epsilon_final = p.as_float(key);
        else if (key == "epsilon_fraction") cfg.epsilon_fraction = p.as_float(key);
        else if (key == "aug_kind") cfg.aug_kind = aug_kind_from_name(value);
        else if (key == "method") cfg.method = method_from_name(value);
        else if (key == "seed") cfg.seed = p.as_u64(key);
        else if (key == "p2_cycle_losses") cfg.p2_cycle_losses = p.as_bool(key);
        else
            raise(ErrorKind::config, source_name + ":" + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    cfg.validate();
    return cfg;
}

TrainConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) raise(ErrorKind::filesystem, "cannot open config '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str(), path);
}

std::string config_to_text(const TrainConfig& c) {
    char buf[2048];
    std::snprintf(buf, sizeof(buf),
                  "gamma = %g\n"
                  "zeta = %g\n"
                  "beta1 = %g\n"
                  "beta2 = %g\n"
                  "kl_weight = %g\n"
                  "lr_base = %g\n"
                  "encoder_lr_divisor = %d\n"
                  "pretrain_frames = %d\n"
                  "pretrain_epochs = %d\n"
                  "batch_lusr = %d\n"
                  "batch_svea = %d\n"
                  "episodes = %d\n"
                  "episode_length = %d\n"
                  "replay_capacity = %d\n"
                  "warmup_steps = %d\n"
                  "update_every = %d\n"
                  "epsilon_start = %g\n"
                  "epsilon_final = %g\n"
                  "epsilon_fraction = %g\n"
                  "aug_kind = %s\n"
                  "method = %s\n"
                  "seed = %llu\n"
                  "p2_cycle_losses = %s\n",
                  static_cast<double>(c.gamma), static_cast<double>(c.zeta), static_cast<double>(c.beta1),
                  static_cast<double>(c.beta2), static_cast<double>(c.kl_weight), static_cast<double>(c.lr_base),
                  c.encoder_lr_divisor, c.pretrain_frames, c.pretrain_epochs, c.batch_lusr, c.batch_svea,
                  c.episodes, c.episode_length, c.replay_capacity, c.warmup_steps, c.update_every,
                  static_cast<double>(c.epsilon_start), static_cast<double>(c.epsilon_final),
                  static_cast<double>(c.epsilon_fraction), aug_kind_name(c.aug_kind), method_name(c.method),
                  static_cast<unsigned long long>(c.seed), c.p2_cycle_losses ? "true" : "false");
    return std::string(buf);
}

void write_manifest_atomic(const std::string& path,
                           const std::vector<std::pair<std::string, std::string>>& fields) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) raise(ErrorKind::filesystem, "cannot open '" + tmp + "' for writing");
        for (const auto& [k, v] : fields) out << k << " = " << v << "\n";
        if (!out) raise(ErrorKind::filesystem, "short write to '" + tmp + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) raise(ErrorKind::filesystem, "cannot move manifest into place: " + ec.message());
}

}  // namespace usra
