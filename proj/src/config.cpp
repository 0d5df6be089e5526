#include "emma/config.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <vector>

namespace emma {

std::string format_number(double value) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", value);
    return buf;
}

WorldConfig RunConfig::world_config() const {
    WorldConfig w;
    w.grid_h = grid_h;
    w.grid_w = grid_w;
    w.num_colors = num_colors;
    w.num_shapes = num_shapes;
    w.noise_std = static_cast<float>(noise_std);
    w.ambiguous_fraction = ambiguous_fraction;
    return w;
}

EncoderConfig RunConfig::encoder_config() const {
    EncoderConfig e;
    e.grid_h = grid_h;
    e.grid_w = grid_w;
    e.patch_width = world_config().patch_width();
    e.m = m;
    e.d = d;
    e.d_prime = d_prime;
    e.depth = depth;
    e.vocab_size = vocab_size;
    e.embed_dim = embed_dim;
    e.mlp_ratio = mlp_ratio;
    return e;
}

void RunConfig::validate() const {
    world_config().validate();
    encoder_config().validate();
    if (m < 4) throw ConfigError("instructions need room for 4 tokens, got m=" + std::to_string(m));
    if (vocab_size < vocab::kShapeWord0 + num_shapes)
        throw ConfigError("vocab_size too small for the world vocabulary");
    if (train_samples < 1 || eval_samples < 1) throw ConfigError("sample counts must be positive");
    if (pretrain_steps < 1 || stage1_steps < 0 || stage2_steps < 0)
        throw ConfigError("step counts must be non-negative (pretraining at least 1)");
    if (pretrain_lr <= 0 || stage1_lr <= 0 || stage2_lr <= 0)
        throw ConfigError("learning rates must be positive");
    if (pretrain_batch < 2) throw ConfigError("pretrain_batch must be at least 2");
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    if (readout_hidden < 0) throw ConfigError("readout_hidden must be non-negative");
    if (eval_every < 1) throw ConfigError("eval_every must be positive");
    if (mi_k < 1) throw ConfigError("mi_k must be at least 1");
    if (num_pairs < 1) throw ConfigError("num_pairs must be positive");
    if (out_dir.empty()) throw ConfigError("out_dir must not be empty");
}

namespace {

struct Field {
    const char* key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

std::int64_t parse_int(const std::string& v) {
    std::size_t pos = 0;
    const long long out = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
}

std::uint64_t parse_uint(const std::string& v) {
    if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
    std::size_t pos = 0;
    const unsigned long long out = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
}

double parse_double(const std::string& v) {
    std::size_t pos = 0;
    const double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
}

Field int_field(const char* key, int RunConfig::*member) {
    return {key,
            [member](const RunConfig& c) { return std::to_string(c.*member); },
            [member](RunConfig& c, const std::string& v) {
                c.*member = static_cast<int>(parse_int(v));
            }};
}

Field i64_field(const char* key, std::int64_t RunConfig::*member) {
    return {key,
            [member](const RunConfig& c) { return std::to_string(c.*member); },
            [member](RunConfig& c, const std::string& v) { c.*member = parse_int(v); }};
}

Field double_field(const char* key, double RunConfig::*member) {
    return {key,
            [member](const RunConfig& c) { return format_number(c.*member); },
            [member](RunConfig& c, const std::string& v) { c.*member = parse_double(v); }};
}

const std::vector<Field>& fields() {
    static const std::vector<Field> kFields = {
        {"seed", [](const RunConfig& c) { return std::to_string(c.seed); },
         [](RunConfig& c, const std::string& v) { c.seed = parse_uint(v); }},
        {"adapter", [](const RunConfig& c) { return std::string(to_string(c.adapter)); },
         [](RunConfig& c, const std::string& v) { c.adapter = adapter_kind_from_string(v); }},
        {"layer_tap", [](const RunConfig& c) { return std::string(to_string(c.layer_tap)); },
         [](RunConfig& c, const std::string& v) { c.layer_tap = layer_tap_from_string(v); }},
        int_field("grid_h", &RunConfig::grid_h),
        int_field("grid_w", &RunConfig::grid_w),
        int_field("num_colors", &RunConfig::num_colors),
        int_field("num_shapes", &RunConfig::num_shapes),
        double_field("noise_std", &RunConfig::noise_std),
        double_field("ambiguous_fraction", &RunConfig::ambiguous_fraction),
        int_field("m", &RunConfig::m),
        int_field("d", &RunConfig::d),
        int_field("d_prime", &RunConfig::d_prime),
        int_field("depth", &RunConfig::depth),
        int_field("vocab_size", &RunConfig::vocab_size),
        int_field("embed_dim", &RunConfig::embed_dim),
        int_field("mlp_ratio", &RunConfig::mlp_ratio),
        i64_field("train_samples", &RunConfig::train_samples),
        i64_field("eval_samples", &RunConfig::eval_samples),
        int_field("pretrain_steps", &RunConfig::pretrain_steps),
        double_field("pretrain_lr", &RunConfig::pretrain_lr),
        int_field("pretrain_batch", &RunConfig::pretrain_batch),
        int_field("stage1_steps", &RunConfig::stage1_steps),
        double_field("stage1_lr", &RunConfig::stage1_lr),
        int_field("stage2_steps", &RunConfig::stage2_steps),
        double_field("stage2_lr", &RunConfig::stage2_lr),
        int_field("batch_size", &RunConfig::batch_size),
        {"readout_mode", [](const RunConfig& c) { return std::string(to_string(c.readout_mode)); },
         [](RunConfig& c, const std::string& v) { c.readout_mode = readout_mode_from_string(v); }},
        int_field("readout_hidden", &RunConfig::readout_hidden),
        int_field("eval_every", &RunConfig::eval_every),
        int_field("mi_k", &RunConfig::mi_k),
        int_field("num_pairs", &RunConfig::num_pairs),
        {"out_dir", [](const RunConfig& c) { return c.out_dir; },
         [](RunConfig& c, const std::string& v) { c.out_dir = v; }},
    };
    return kFields;
}

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && (s[a] == ' ' || s[a] == '\t' || s[a] == '\r')) ++a;
    while (b > a && (s[b - 1] == ' ' || s[b - 1] == '\t' || s[b - 1] == '\r')) --b;
    return s.substr(a, b - a);
}

}  // namespace

std::string serialize_run_config(const RunConfig& config) {
    std::string out;
    for (const auto& f : fields()) {
        out += f.key;
        out += "=";
        out += f.get(config);
        out += "\n";
    }
    return out;
}

RunConfig parse_run_config(const std::string& text) {
    RunConfig config;
    std::set<std::string> seen;
    std::istringstream in(text);
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        const std::string line = trim(raw);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(line_no) + ": expected key=value, got '" +
                              line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const Field* field = nullptr;
        for (const auto& f : fields())
            if (key == f.key) {
                field = &f;
                break;
            }
        if (!field)
            throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
        if (!seen.insert(key).second)
            throw ConfigError("line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
        try {
            field->set(config, value);
        } catch (const ConfigError& e) {
            std::string msg = e.what();
            const std::string prefix = "config error: ";
            if (msg.rfind(prefix, 0) == 0) msg = msg.substr(prefix.size());
            throw ConfigError("line " + std::to_string(line_no) + ": " + msg);
        } catch (const std::exception&) {
            throw ConfigError("line " + std::to_string(line_no) + ": invalid value '" + value +
                              "' for key '" + key + "'");
        }
    }
    return config;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read config file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_run_config(buf.str());
}

}  // namespace emma
