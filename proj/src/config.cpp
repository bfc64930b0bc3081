#include "moef/config.hpp"

#include "moef/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace moef {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

[[noreturn]] void fail(const std::string& key, int line, const std::string& what) {
    std::string where = line > 0 ? " (line " + std::to_string(line) + ")" : "";
    throw config_error("config key '" + key + "'" + where + ": " + what);
}

int parse_int(const std::string& key, const std::string& value, int line) {
    try {
        size_t used = 0;
        const int v = std::stoi(value, &used);
        if (used != value.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        fail(key, line, "expected integer, got '" + value + "'");
    }
}

std::uint64_t parse_u64(const std::string& key, const std::string& value, int line) {
    try {
        size_t used = 0;
        const unsigned long long v = std::stoull(value, &used);
        if (used != value.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        fail(key, line, "expected unsigned integer, got '" + value + "'");
    }
}

double parse_real(const std::string& key, const std::string& value, int line) {
    try {
        size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        fail(key, line, "expected real number, got '" + value + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& value, int line) {
    if (value == "true" || value == "on" || value == "1") return true;
    if (value == "false" || value == "off" || value == "0") return false;
    fail(key, line, "expected boolean (true/false), got '" + value + "'");
}

std::vector<std::string> split_list(const std::string& value) {
    std::vector<std::string> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

EncoderSpec* find_encoder(ExperimentConfig& cfg, const std::string& name) {
    for (EncoderSpec& spec : cfg.model.encoders)
        if (spec.group_name == name) return &spec;
    return nullptr;
}

std::vector<std::string> checked_subset(const std::string& key, const std::string& value,
                                        int line) {
    const std::vector<std::string> names = split_list(value);
    if (names.empty()) fail(key, line, "encoder subset must be non-empty");
    for (const std::string& n : names) {
        if (std::find(known_groups().begin(), known_groups().end(), n) == known_groups().end()) {
            fail(key, line, "unknown group '" + n + "'");
        }
        if (std::count(names.begin(), names.end(), n) > 1) {
            fail(key, line, "group '" + n + "' listed twice");
        }
    }
    return names;
}

// During file parsing all four encoder specs stay staged in `pool` and the
// active subset is tracked separately, so section order in the file does not
// matter. Overrides on a finalized config (pool == nullptr) edit the config
// in place instead.
struct ParseTarget {
    ExperimentConfig* cfg;
    std::vector<EncoderSpec>* pool = nullptr;
    std::vector<std::string>* subset = nullptr;
};

void set_key(const ParseTarget& t, const std::string& key, const std::string& value, int line) {
    ExperimentConfig& cfg = *t.cfg;
    // run controls
    if (key == "steps") { cfg.steps = parse_int(key, value, line); return; }
    if (key == "batch_size") { cfg.batch_size = parse_int(key, value, line); return; }
    if (key == "learning_rate") { cfg.learning_rate = parse_real(key, value, line); return; }
    if (key == "momentum") { cfg.momentum = parse_real(key, value, line); return; }
    if (key == "cosine_schedule") { cfg.cosine_schedule = parse_bool(key, value, line); return; }
    if (key == "freeze_connector") { cfg.freeze_connector = parse_bool(key, value, line); return; }
    if (key == "metric_cadence") { cfg.metric_cadence = parse_int(key, value, line); return; }
    if (key == "out_dir") { cfg.out_dir = value; return; }
    if (key == "seed") { cfg.model.seed = parse_u64(key, value, line); return; }
    if (key == "connector") {
        if (value == "mlp") { cfg.model.connector = ConnectorKind::mlp; return; }
        if (value == "moec") { cfg.model.connector = ConnectorKind::moec; return; }
        fail(key, line, "expected mlp or moec, got '" + value + "'");
    }
    if (key == "fusion") {
        if (value == "append_only") { cfg.model.fusion = FusionKind::append_only; return; }
        if (value == "hga") { cfg.model.fusion = FusionKind::hga; return; }
        fail(key, line, "expected append_only or hga, got '" + value + "'");
    }
    if (key == "encoders") {
        const std::vector<std::string> names = checked_subset(key, value, line);
        if (t.subset != nullptr) {
            *t.subset = names;
            return;
        }
        // finalized config: members keep their specs, re-enabled groups get defaults
        std::vector<EncoderSpec> chosen;
        for (const EncoderSpec& d : default_encoder_specs()) {
            if (std::find(names.begin(), names.end(), d.group_name) == names.end()) continue;
            const EncoderSpec* existing = find_encoder(cfg, d.group_name);
            chosen.push_back(existing != nullptr ? *existing : d);
        }
        cfg.model.encoders = std::move(chosen);
        return;
    }

    // moec section
    if (key == "moec.experts") { cfg.model.moec.num_experts = parse_int(key, value, line); return; }
    if (key == "moec.top_k") { cfg.model.moec.top_k = parse_int(key, value, line); return; }
    if (key == "moec.input_dim") { cfg.model.moec.input_dim = parse_int(key, value, line); return; }
    if (key == "moec.hidden_dim") { cfg.model.moec.hidden_dim = parse_int(key, value, line); return; }
    if (key == "moec.output_dim") { cfg.model.moec.output_dim = parse_int(key, value, line); return; }
    if (key == "moec.renormalize") {
        if (value == "softmax") { cfg.model.moec.renormalize_by_sum = false; return; }
        if (value == "sum") { cfg.model.moec.renormalize_by_sum = true; return; }
        fail(key, line, "expected softmax or sum, got '" + value + "'");
    }

    // hga section
    if (key == "hga.intra_top_m") { cfg.model.hga.intra_top_m = parse_int(key, value, line); return; }
    if (key == "hga.inter_top_n") { cfg.model.hga.inter_top_n = parse_int(key, value, line); return; }
    if (key == "hga.gate_slope") { cfg.model.hga.gate_slope = parse_real(key, value, line); return; }
    if (key == "hga.gate_shift") { cfg.model.hga.gate_shift = parse_real(key, value, line); return; }

    // loss section
    if (key == "loss.balance_weight") { cfg.model.balance_weight = parse_real(key, value, line); return; }
    if (key == "loss.zloss_weight") { cfg.model.zloss_weight = parse_real(key, value, line); return; }
    if (key == "loss.auxiliary") { cfg.model.auxiliary_losses = parse_bool(key, value, line); return; }

    // task section
    if (key == "task.classes") { cfg.model.task.num_classes = parse_int(key, value, line); return; }
    if (key == "task.factor_rank") { cfg.model.task.factor_rank = parse_int(key, value, line); return; }
    if (key == "task.atoms") { cfg.model.task.atom_count = parse_int(key, value, line); return; }
    if (key == "task.noise") { cfg.model.task.noise = parse_real(key, value, line); return; }

    // per-encoder sections
    if (key.rfind("encoder.", 0) == 0) {
        const std::string rest = key.substr(8);
        const auto dot = rest.find('.');
        if (dot != std::string::npos) {
            const std::string group = rest.substr(0, dot);
            const std::string field = rest.substr(dot + 1);
            if (std::find(known_groups().begin(), known_groups().end(), group) ==
                known_groups().end()) {
                fail(key, line, "unknown encoder group '" + group + "'");
            }
            EncoderSpec* spec = nullptr;
            if (t.pool != nullptr) {
                for (EncoderSpec& s : *t.pool)
                    if (s.group_name == group) spec = &s;
            } else {
                spec = find_encoder(cfg, group);
                if (spec == nullptr) {
                    fail(key, line, "group '" + group + "' is not in the configured subset");
                }
            }
            if (field == "tokens") { spec->token_count = parse_int(key, value, line); return; }
            if (field == "channels") { spec->channel_dim = parse_int(key, value, line); return; }
            if (field == "pool") { spec->needs_channel_pooling = parse_bool(key, value, line); return; }
            if (field == "seed") { spec->seed = parse_u64(key, value, line); return; }
            fail(key, line, "unknown key");
        }
    }

    fail(key, line, "unknown key");
}

std::string format_real(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

}  // namespace

void ExperimentConfig::validate() const {
    model.validate();
    if (steps < 1) throw config_error("steps must be >= 1");
    if (batch_size < 1) throw config_error("batch_size must be >= 1");
    if (metric_cadence < 1) throw config_error("metric_cadence must be >= 1");
    if (!std::isfinite(learning_rate) || learning_rate < 0.0)
        throw config_error("learning_rate must be a finite non-negative real");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw config_error("momentum must be in [0, 1)");
    if (out_dir.empty()) throw config_error("out_dir must be non-empty");
}

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) {
    return serialize_config(a) == serialize_config(b);
}

ExperimentConfig default_experiment_config() {
    ExperimentConfig cfg;
    cfg.model = default_model_config();
    return cfg;
}

ExperimentConfig parse_config_text(const std::string& text) {
    ExperimentConfig cfg = default_experiment_config();
    std::vector<EncoderSpec> pool = default_encoder_specs();
    std::vector<std::string> subset;
    for (const EncoderSpec& spec : pool) subset.push_back(spec.group_name);
    const ParseTarget target{&cfg, &pool, &subset};

    std::istringstream in(text);
    std::string raw;
    std::string section;
    int line = 0;
    while (std::getline(in, raw)) {
        ++line;
        std::string s = raw;
        const auto hash = s.find('#');
        if (hash != std::string::npos) s = s.substr(0, hash);
        s = trim(s);
        if (s.empty()) continue;
        if (s.front() == '[') {
            if (s.back() != ']') {
                throw config_error("config line " + std::to_string(line) +
                                   ": malformed section header '" + raw + "'");
            }
            section = trim(s.substr(1, s.size() - 2));
            continue;
        }
        const auto eq = s.find('=');
        if (eq == std::string::npos) {
            throw config_error("config line " + std::to_string(line) +
                               ": expected 'key = value', got '" + raw + "'");
        }
        const std::string key = trim(s.substr(0, eq));
        const std::string value = trim(s.substr(eq + 1));
        if (key.empty()) {
            throw config_error("config line " + std::to_string(line) + ": empty key");
        }
        set_key(target, section.empty() ? key : section + "." + key, value, line);
    }

    cfg.model.encoders.clear();
    for (const EncoderSpec& spec : pool) {
        if (std::find(subset.begin(), subset.end(), spec.group_name) != subset.end()) {
            cfg.model.encoders.push_back(spec);
        }
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open config file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str());
}

std::string serialize_config(const ExperimentConfig& cfg) {
    std::ostringstream os;
    os << "steps = " << cfg.steps << "\n";
    os << "batch_size = " << cfg.batch_size << "\n";
    os << "learning_rate = " << format_real(cfg.learning_rate) << "\n";
    os << "momentum = " << format_real(cfg.momentum) << "\n";
    os << "cosine_schedule = " << (cfg.cosine_schedule ? "true" : "false") << "\n";
    os << "freeze_connector = " << (cfg.freeze_connector ? "true" : "false") << "\n";
    os << "metric_cadence = " << cfg.metric_cadence << "\n";
    os << "out_dir = " << cfg.out_dir << "\n";
    os << "seed = " << cfg.model.seed << "\n";
    os << "connector = " << to_string(cfg.model.connector) << "\n";
    os << "fusion = " << to_string(cfg.model.fusion) << "\n";
    os << "encoders = ";
    for (size_t i = 0; i < cfg.model.encoders.size(); ++i) {
        if (i > 0) os << ",";
        os << cfg.model.encoders[i].group_name;
    }
    os << "\n\n[moec]\n";
    os << "experts = " << cfg.model.moec.num_experts << "\n";
    os << "top_k = " << cfg.model.moec.top_k << "\n";
    os << "input_dim = " << cfg.model.moec.input_dim << "\n";
    os << "hidden_dim = " << cfg.model.moec.hidden_dim << "\n";
    os << "output_dim = " << cfg.model.moec.output_dim << "\n";
    os << "renormalize = " << (cfg.model.moec.renormalize_by_sum ? "sum" : "softmax") << "\n";
    os << "\n[hga]\n";
    os << "intra_top_m = " << cfg.model.hga.intra_top_m << "\n";
    os << "inter_top_n = " << cfg.model.hga.inter_top_n << "\n";
    os << "gate_slope = " << format_real(cfg.model.hga.gate_slope) << "\n";
    os << "gate_shift = " << format_real(cfg.model.hga.gate_shift) << "\n";
    os << "\n[loss]\n";
    os << "balance_weight = " << format_real(cfg.model.balance_weight) << "\n";
    os << "zloss_weight = " << format_real(cfg.model.zloss_weight) << "\n";
    os << "auxiliary = " << (cfg.model.auxiliary_losses ? "true" : "false") << "\n";
    os << "\n[task]\n";
    os << "classes = " << cfg.model.task.num_classes << "\n";
    os << "factor_rank = " << cfg.model.task.factor_rank << "\n";
    os << "atoms = " << cfg.model.task.atom_count << "\n";
    os << "noise = " << format_real(cfg.model.task.noise) << "\n";
    for (const EncoderSpec& spec : cfg.model.encoders) {
        os << "\n[encoder." << spec.group_name << "]\n";
        os << "tokens = " << spec.token_count << "\n";
        os << "channels = " << spec.channel_dim << "\n";
        os << "pool = " << (spec.needs_channel_pooling ? "true" : "false") << "\n";
        os << "seed = " << spec.seed << "\n";
    }
    return os.str();
}

void apply_override(ExperimentConfig& cfg, const std::string& dotted_key,
                    const std::string& value) {
    set_key(ParseTarget{&cfg}, trim(dotted_key), trim(value), 0);
}

}  // namespace moef
