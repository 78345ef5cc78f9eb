#include "promptseg/config.hpp"

#include <fstream>
#include <functional>
#include <sstream>

#include <json.hpp>

#include "promptseg/errors.hpp"

namespace promptseg {

namespace {

// field registry: name -> typed accessor into a RunConfig instance
struct Field {
    const char* name;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

std::string dump_double(double v) { return nlohmann::json(v).dump(); }

double parse_double(const std::string& key, const std::string& s) {
    try {
        size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ValidationError("config: bad numeric value for '" + key + "': '" + s + "'");
    }
}

int64_t parse_int(const std::string& key, const std::string& s) {
    try {
        size_t pos = 0;
        const int64_t v = std::stoll(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ValidationError("config: bad integer value for '" + key + "': '" + s + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& s) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw ValidationError("config: bad boolean value for '" + key + "': '" + s + "'");
}

#define STR_FIELD(f)                                                               \
    Field{#f, [](const RunConfig& c) { return c.f; },                             \
          [](RunConfig& c, const std::string& s) { c.f = s; }}
#define DBL_FIELD(f)                                                               \
    Field{#f, [](const RunConfig& c) { return dump_double(c.f); },                \
          [](RunConfig& c, const std::string& s) { c.f = parse_double(#f, s); }}
#define INT_FIELD(f)                                                               \
    Field{#f, [](const RunConfig& c) { return std::to_string(c.f); },             \
          [](RunConfig& c, const std::string& s) {                                \
              c.f = static_cast<decltype(c.f)>(parse_int(#f, s));                 \
          }}
#define BOOL_FIELD(f)                                                              \
    Field{#f, [](const RunConfig& c) { return c.f ? "true" : "false"; },          \
          [](RunConfig& c, const std::string& s) { c.f = parse_bool(#f, s); }}

const std::vector<Field>& fields() {
    static const std::vector<Field> kFields = {
        STR_FIELD(manifest),
        STR_FIELD(out_dir),
        DBL_FIELD(train_fraction),
        INT_FIELD(seed),
        INT_FIELD(max_steps),
        INT_FIELD(epochs),
        INT_FIELD(batch_size),
        INT_FIELD(val_every),
        INT_FIELD(ckpt_every),
        STR_FIELD(resume),
        INT_FIELD(canvas),
        INT_FIELD(n_q),
        INT_FIELD(embed_dim),
        INT_FIELD(enc_layers),
        INT_FIELD(patch),
        INT_FIELD(mask_grid),
        INT_FIELD(mask_dim),
        INT_FIELD(dec_layers),
        INT_FIELD(mlp_ratio),
        DBL_FIELD(w_cls),
        DBL_FIELD(w_box),
        DBL_FIELD(w_giou),
        DBL_FIELD(alpha_match),
        DBL_FIELD(gamma_match),
        BOOL_FIELD(stable),
        INT_FIELD(top_k),
        DBL_FIELD(threshold),
        DBL_FIELD(alpha_o2m),
        DBL_FIELD(lambda_o2m),
        DBL_FIELD(lambda_ce),
        DBL_FIELD(lambda_pr),
        DBL_FIELD(alpha_cls),
        DBL_FIELD(gamma_cls),
        DBL_FIELD(pos_weight),
        DBL_FIELD(lambda_l1),
        DBL_FIELD(lambda_g),
        DBL_FIELD(alpha_seg),
        DBL_FIELD(gamma_seg),
        DBL_FIELD(lambda_f),
        DBL_FIELD(lambda_d),
        DBL_FIELD(lambda_sp),
        DBL_FIELD(dice_eps),
        DBL_FIELD(lr_decoder),
        DBL_FIELD(lr_vision),
        DBL_FIELD(lr_language),
        DBL_FIELD(lr_geometry),
        DBL_FIELD(beta1),
        DBL_FIELD(beta2),
        DBL_FIELD(weight_decay),
        DBL_FIELD(adam_eps),
        INT_FIELD(warmup_steps),
        DBL_FIELD(llrd_gamma),
        INT_FIELD(llrd_layers),
    };
    return kFields;
}

#undef STR_FIELD
#undef DBL_FIELD
#undef INT_FIELD
#undef BOOL_FIELD

} // namespace

ModelConfig RunConfig::model_config() const {
    ModelConfig m;
    m.n_q = n_q;
    m.embed_dim = embed_dim;
    m.enc_layers = enc_layers;
    m.canvas = canvas;
    m.patch = patch;
    m.mask_grid = mask_grid;
    m.mask_dim = mask_dim;
    m.dec_layers = dec_layers;
    m.mlp_ratio = mlp_ratio;
    return m;
}

ObjectiveWeights RunConfig::objective_weights() const {
    ObjectiveWeights w;
    w.matcher = MatcherWeights{w_cls, w_box, w_giou, alpha_match, gamma_match, stable};
    w.o2m = O2MConfig{top_k, threshold, alpha_o2m};
    w.lambda_o2m = lambda_o2m;
    w.find = FindWeights{lambda_ce, lambda_pr, alpha_cls, gamma_cls, pos_weight, lambda_l1,
                         lambda_g, n_q};
    w.seg = SegWeights{alpha_seg, gamma_seg, lambda_f, lambda_d, lambda_sp, dice_eps};
    return w;
}

GroupRates RunConfig::group_rates() const {
    return GroupRates{lr_decoder, lr_vision, lr_language, lr_geometry};
}

LLRDSpec RunConfig::llrd_spec() const { return LLRDSpec{lr_vision, llrd_layers, llrd_gamma}; }

ScheduleSpec RunConfig::schedule_spec() const { return ScheduleSpec{warmup_steps, beta1, beta2}; }

AdamWConfig RunConfig::adamw_config() const {
    return AdamWConfig{beta1, beta2, adam_eps, weight_decay};
}

void RunConfig::set(const std::string& key, const std::string& value) {
    for (const Field& f : fields())
        if (key == f.name) {
            f.set(*this, value);
            return;
        }
    throw ValidationError("config: unknown key '" + key + "'");
}

std::string RunConfig::get(const std::string& key) const {
    for (const Field& f : fields())
        if (key == f.name) return f.get(*this);
    throw ValidationError("config: unknown key '" + key + "'");
}

std::string RunConfig::print() const {
    std::ostringstream out;
    for (const Field& f : fields()) out << f.name << " = " << f.get(*this) << "\n";
    return out.str();
}

RunConfig apply_overrides(RunConfig cfg,
                          const std::vector<std::pair<std::string, std::string>>& overrides) {
    for (const auto& [key, value] : overrides) cfg.set(key, value);
    return cfg;
}

RunConfig load_run_config(const std::string& path,
                          const std::vector<std::pair<std::string, std::string>>& overrides) {
    RunConfig cfg;
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) throw ValidationError("config file not found: " + path);
        std::string line;
        int line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            const size_t hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            const size_t first = line.find_first_not_of(" \t\r");
            if (first == std::string::npos) continue;
            const size_t eq = line.find('=');
            if (eq == std::string::npos)
                throw ParseError("config line " + std::to_string(line_no) +
                                 ": expected 'key = value'");
            auto trim = [](std::string s) {
                const size_t a = s.find_first_not_of(" \t\r");
                const size_t b = s.find_last_not_of(" \t\r");
                return a == std::string::npos ? std::string{} : s.substr(a, b - a + 1);
            };
            cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        }
    }
    return apply_overrides(std::move(cfg), overrides);
}

} // namespace promptseg
