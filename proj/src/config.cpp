#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "thgcl/trainer.hpp"

namespace thgcl {

std::string to_string(LossMode mode) {
    switch (mode) {
        case LossMode::fl_cl: return "fl_cl";
        case LossMode::fl_only: return "fl_only";
        case LossMode::ce_only: return "ce_only";
    }
    return "?";
}

LossMode parse_loss_mode(const std::string& s) {
    if (s == "fl_cl") return LossMode::fl_cl;
    if (s == "fl_only") return LossMode::fl_only;
    if (s == "ce_only") return LossMode::ce_only;
    throw ConfigError("unknown loss_mode '" + s + "' (expected fl_cl|fl_only|ce_only)");
}

void TrainConfig::validate() const {
    if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
    if (max_iterations < 0) throw ConfigError("max_iterations must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (loss_mode == LossMode::fl_cl && batch_size < 2) {
        throw ConfigError("batch_size must be >= 2 when the contrastive loss is enabled");
    }
    if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
    if (early_stop_patience < 1) throw ConfigError("early_stop_patience must be >= 1");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
        throw ConfigError("adam betas must lie in [0, 1)");
    }
    if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be > 0");
    if (hidden == 0 || d == 0 || layers == 0) throw ConfigError("hidden, d and layers must be > 0");
    if (num_classes < 0) throw ConfigError("num_classes must be >= 0");
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("val_fraction must lie in (0, 1)");
    if (threads < 1) throw ConfigError("threads must be >= 1");
    loss_cfg.validate();
    graph().validate();
}

LossConfig TrainConfig::effective_loss() const {
    LossConfig c = loss_cfg;
    switch (loss_mode) {
        case LossMode::fl_cl: break;
        case LossMode::fl_only: c.omega_cl = 0.0; break;
        case LossMode::ce_only:
            c.omega_cl = 0.0;
            c.focal_gamma = 0.0;
            c.focal_alpha = 1.0;
            break;
    }
    return c;
}

GraphConfig TrainConfig::graph() const {
    GraphConfig g = graph_cfg;
    g.temporal_mode = temporal_mode;
    return g;
}

namespace {

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
    T out{};
    const char* end = value.data() + value.size();
    if constexpr (std::is_floating_point_v<T>) {
        // from_chars for double is incomplete on some toolchains; strtod is exact here.
        char* stop = nullptr;
        out = static_cast<T>(std::strtod(value.c_str(), &stop));
        if (value.empty() || stop != value.c_str() + value.size()) {
            throw ConfigError("config key '" + key + "': invalid number '" + value + "'");
        }
    } else {
        auto [ptr, ec] = std::from_chars(value.data(), end, out);
        if (ec != std::errc() || ptr != end) throw ConfigError("config key '" + key + "': invalid integer '" + value + "'");
    }
    return out;
}

using Setter = std::function<void(TrainConfig&, const std::string&, const std::string&)>;

template <typename T>
Setter number(T TrainConfig::*field) {
    return [field](TrainConfig& c, const std::string& k, const std::string& v) { c.*field = parse_number<T>(k, v); };
}

template <typename T>
Setter loss_number(T LossConfig::*field) {
    return [field](TrainConfig& c, const std::string& k, const std::string& v) {
        c.loss_cfg.*field = parse_number<T>(k, v);
    };
}

template <typename T>
Setter graph_number(T GraphConfig::*field) {
    return [field](TrainConfig& c, const std::string& k, const std::string& v) {
        c.graph_cfg.*field = parse_number<T>(k, v);
    };
}

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = {
        {"lr", number(&TrainConfig::lr)},
        {"max_iterations", number(&TrainConfig::max_iterations)},
        {"batch_size", number(&TrainConfig::batch_size)},
        {"early_stop_patience", number(&TrainConfig::early_stop_patience)},
        {"eval_every", number(&TrainConfig::eval_every)},
        {"seed", number(&TrainConfig::seed)},
        {"adam_beta1", number(&TrainConfig::adam_beta1)},
        {"adam_beta2", number(&TrainConfig::adam_beta2)},
        {"adam_eps", number(&TrainConfig::adam_eps)},
        {"hidden", number(&TrainConfig::hidden)},
        {"d", number(&TrainConfig::d)},
        {"layers", number(&TrainConfig::layers)},
        {"num_classes", number(&TrainConfig::num_classes)},
        {"val_fraction", number(&TrainConfig::val_fraction)},
        {"threads", number(&TrainConfig::threads)},
        {"loss_mode", [](TrainConfig& c, const std::string&, const std::string& v) { c.loss_mode = parse_loss_mode(v); }},
        {"temporal_mode",
         [](TrainConfig& c, const std::string&, const std::string& v) { c.temporal_mode = parse_temporal_mode(v); }},
        {"temperature", loss_number(&LossConfig::temperature)},
        {"omega_fl", loss_number(&LossConfig::omega_fl)},
        {"omega_cl", loss_number(&LossConfig::omega_cl)},
        {"focal_gamma", loss_number(&LossConfig::focal_gamma)},
        {"focal_alpha", loss_number(&LossConfig::focal_alpha)},
        {"span_audio", graph_number(&GraphConfig::span_audio)},
        {"span_video", graph_number(&GraphConfig::span_video)},
        {"span_inter", graph_number(&GraphConfig::span_inter)},
        {"dilation_audio", graph_number(&GraphConfig::dilation_audio)},
        {"dilation_video", graph_number(&GraphConfig::dilation_video)},
        {"tau", graph_number(&GraphConfig::tau)},
        {"xi_seed", graph_number(&GraphConfig::xi_seed)},
        {"xi_clamp_eps", graph_number(&GraphConfig::xi_clamp_eps)},
        {"xi_mode", [](TrainConfig& c, const std::string&, const std::string& v) { c.graph_cfg.xi_mode = parse_xi_mode(v); }},
    };
    return table;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

TrainConfig parse_train_config(const std::string& text, TrainConfig cfg) {
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const auto it = setters().find(key);
        if (it == setters().end()) {
            throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
        }
        it->second(cfg, key, value);
    }
    return cfg;
}

TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_train_config(ss.str(), std::move(base));
}

std::string to_config_text(const TrainConfig& c) {
    std::ostringstream os;
    const auto real = [&](const char* key, double v) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.17g", v);
        os << key << " = " << buf << '\n';
    };
    real("lr", c.lr);
    os << "max_iterations = " << c.max_iterations << '\n';
    os << "batch_size = " << c.batch_size << '\n';
    os << "early_stop_patience = " << c.early_stop_patience << '\n';
    os << "eval_every = " << c.eval_every << '\n';
    os << "seed = " << c.seed << '\n';
    real("adam_beta1", c.adam_beta1);
    real("adam_beta2", c.adam_beta2);
    real("adam_eps", c.adam_eps);
    real("temperature", c.loss_cfg.temperature);
    real("omega_fl", c.loss_cfg.omega_fl);
    real("omega_cl", c.loss_cfg.omega_cl);
    real("focal_gamma", c.loss_cfg.focal_gamma);
    real("focal_alpha", c.loss_cfg.focal_alpha);
    os << "span_audio = " << c.graph_cfg.span_audio << '\n';
    os << "span_video = " << c.graph_cfg.span_video << '\n';
    os << "span_inter = " << c.graph_cfg.span_inter << '\n';
    os << "dilation_audio = " << c.graph_cfg.dilation_audio << '\n';
    os << "dilation_video = " << c.graph_cfg.dilation_video << '\n';
    real("tau", c.graph_cfg.tau);
    os << "xi_mode = " << to_string(c.graph_cfg.xi_mode) << '\n';
    os << "xi_seed = " << c.graph_cfg.xi_seed << '\n';
    real("xi_clamp_eps", c.graph_cfg.xi_clamp_eps);
    os << "hidden = " << c.hidden << '\n';
    os << "d = " << c.d << '\n';
    os << "layers = " << c.layers << '\n';
    os << "loss_mode = " << to_string(c.loss_mode) << '\n';
    os << "temporal_mode = " << to_string(c.temporal_mode) << '\n';
    os << "num_classes = " << c.num_classes << '\n';
    real("val_fraction", c.val_fraction);
    os << "threads = " << c.threads << '\n';
    return os.str();
}

}  // namespace thgcl
