#include "voltron/config.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "voltron/error.hpp"

namespace voltron {

std::string variant_name(Variant v) {
    switch (v) {
        case Variant::VCond: return "v-cond";
        case Variant::VDual: return "v-dual";
        case Variant::VGen: return "v-gen";
        case Variant::NoLang: return "no-lang";
    }
    throw ConfigError("unknown variant value");
}

Variant parse_variant(const std::string& name) {
    if (name == "v-cond") return Variant::VCond;
    if (name == "v-dual") return Variant::VDual;
    if (name == "v-gen") return Variant::VGen;
    if (name == "no-lang") return Variant::NoLang;
    throw ConfigError("unknown variant '" + name +
                      "' (expected v-cond, v-dual, v-gen, or no-lang)");
}

int ModelConfig::dropped_regions() const {
    return static_cast<int>(std::lround(gamma * regions()));
}

void ModelConfig::validate() const {
    switch (variant) {
        case Variant::VCond:
            if (alpha != 0.0 || k != 1) throw ConfigError("v-cond requires alpha=0, k=1");
            break;
        case Variant::VDual:
            if (alpha != 0.0 || k != 2) throw ConfigError("v-dual requires alpha=0, k=2");
            break;
        case Variant::VGen:
            if (alpha != 0.5 || k != 2) throw ConfigError("v-gen requires alpha=0.5, k=2");
            break;
        case Variant::NoLang:
            if (alpha != 0.0) throw ConfigError("no-lang requires alpha=0");
            break;
    }
    if (alpha < 0.0 || alpha > 1.0) throw ConfigError("alpha must lie in [0,1]");
    if (k != 1 && k != 2) throw ConfigError("k must be 1 or 2");
    if (dim < 4 || dim % 4 != 0) throw ConfigError("dim must be a positive multiple of 4");
    if (dim % heads != 0) throw ConfigError("dim must be divisible by heads");
    if (dec_dim < 4 || dec_dim % 4 != 0) {
        throw ConfigError("dec_dim must be a positive multiple of 4");
    }
    if (dec_dim % dec_heads != 0) throw ConfigError("dec_dim must be divisible by dec_heads");
    if (depth < 1 || dec_depth < 1) throw ConfigError("depth values must be positive");
    if (patch < 1 || height % patch != 0 || width % patch != 0) {
        throw ConfigError("patch size " + std::to_string(patch) + " does not divide " +
                          std::to_string(height) + "x" + std::to_string(width));
    }
    if ((patch & (patch - 1)) != 0) {
        throw ConfigError("patch size must be a power of two (upsampling head)");
    }
    if (caption_len < 3) throw ConfigError("caption_len must be at least 3");
    if (vocab_size < 6) throw ConfigError("vocab_size must exceed the reserved tokens");
    if (lang_dim < 1) throw ConfigError("lang_dim must be positive");
    if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in (0,1)");
    if (dropped_regions() < 1 || visible_regions() < 1) {
        throw ConfigError("gamma leaves no masked or no visible region");
    }
}

ModelConfig ModelConfig::desk(Variant v) {
    ModelConfig c;
    c.variant = v;
    c.alpha = v == Variant::VGen ? 0.5 : 0.0;
    c.k = (v == Variant::VDual || v == Variant::VGen) ? 2 : 1;
    return c;
}

ModelConfig ModelConfig::vit_small(Variant v) {
    ModelConfig c = desk(v);
    c.dim = 384;
    c.depth = 12;
    c.heads = 6;
    c.patch = 16;
    c.height = 224;
    c.width = 224;
    c.dec_dim = 192;
    c.dec_depth = 4;
    c.dec_heads = 4;
    c.vocab_size = 4096;
    return c;
}

void RunConfig::validate() const {
    model.validate();
    if (epochs < 1) throw ConfigError("epochs must be positive");
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    if (frames_per_clip < 1) throw ConfigError("frames_per_clip must be positive");
    if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
    if (lr < 0.0) throw ConfigError("lr must be >= 0");
    if (warmup_frac < 0.0 || warmup_frac >= 1.0) throw ConfigError("warmup_frac in [0,1)");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
    if (clip_norm < 0.0) throw ConfigError("clip_norm must be >= 0 (0 disables)");
}

std::string RunConfig::resolved_metrics_path() const {
    return metrics_path.empty() ? out_dir + "/metrics.txt" : metrics_path;
}

double RunConfig::resolved_lr() const {
    return lr > 0.0 ? lr : 1.5e-4 * batch_size / 256.0;
}

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

int to_int(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        int out = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' expects an integer, got '" + v + "'");
    }
}

double to_double(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        double out = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' expects a number, got '" + v + "'");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config key '" + key + "' expects true/false, got '" + v + "'");
}

uint64_t to_u64(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        uint64_t out = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' expects an integer, got '" + v + "'");
    }
}

}  // namespace

std::string serialize_run_config(const RunConfig& cfg) {
    std::ostringstream os;
    os << "[model]\n";
    os << "variant = " << variant_name(cfg.model.variant) << "\n";
    os << "alpha = " << cfg.model.alpha << "\n";
    os << "k = " << cfg.model.k << "\n";
    os << "gamma = " << cfg.model.gamma << "\n";
    os << "dim = " << cfg.model.dim << "\n";
    os << "depth = " << cfg.model.depth << "\n";
    os << "heads = " << cfg.model.heads << "\n";
    os << "patch = " << cfg.model.patch << "\n";
    os << "height = " << cfg.model.height << "\n";
    os << "width = " << cfg.model.width << "\n";
    os << "caption_len = " << cfg.model.caption_len << "\n";
    os << "vocab_size = " << cfg.model.vocab_size << "\n";
    os << "dec_dim = " << cfg.model.dec_dim << "\n";
    os << "dec_depth = " << cfg.model.dec_depth << "\n";
    os << "dec_heads = " << cfg.model.dec_heads << "\n";
    os << "lang_dim = " << cfg.model.lang_dim << "\n";
    os << "final_norm = " << (cfg.model.final_norm ? "true" : "false") << "\n";
    os << "seed = " << cfg.model.seed << "\n";
    os << "[train]\n";
    os << "corpus = " << cfg.corpus_dir << "\n";
    os << "out_dir = " << cfg.out_dir << "\n";
    os << "epochs = " << cfg.epochs << "\n";
    os << "batch_size = " << cfg.batch_size << "\n";
    os << "frames_per_clip = " << cfg.frames_per_clip << "\n";
    os << "checkpoint_every = " << cfg.checkpoint_every << "\n";
    os << "lr = " << cfg.lr << "\n";
    os << "warmup_frac = " << cfg.warmup_frac << "\n";
    os << "weight_decay = " << cfg.weight_decay << "\n";
    os << "beta1 = " << cfg.beta1 << "\n";
    os << "beta2 = " << cfg.beta2 << "\n";
    os << "clip_norm = " << cfg.clip_norm << "\n";
    os << "metrics = " << cfg.metrics_path << "\n";
    return os.str();
}

RunConfig parse_run_config_text(const std::string& text) {
    RunConfig cfg;
    std::istringstream is(text);
    std::string line, section;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        if (t.front() == '[' && t.back() == ']') {
            section = t.substr(1, t.size() - 2);
            if (section != "model" && section != "train") {
                throw ConfigError("unknown config section '" + section + "'");
            }
            continue;
        }
        size_t eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(line_no) +
                              " is not 'key = value': " + t);
        }
        std::string key = trim(t.substr(0, eq));
        std::string val = trim(t.substr(eq + 1));
        if (section == "model") {
            auto& m = cfg.model;
            if (key == "variant") m.variant = parse_variant(val);
            else if (key == "alpha") m.alpha = to_double(key, val);
            else if (key == "k") m.k = to_int(key, val);
            else if (key == "gamma") m.gamma = to_double(key, val);
            else if (key == "dim") m.dim = to_int(key, val);
            else if (key == "depth") m.depth = to_int(key, val);
            else if (key == "heads") m.heads = to_int(key, val);
            else if (key == "patch") m.patch = to_int(key, val);
            else if (key == "height") m.height = to_int(key, val);
            else if (key == "width") m.width = to_int(key, val);
            else if (key == "caption_len") m.caption_len = to_int(key, val);
            else if (key == "vocab_size") m.vocab_size = to_int(key, val);
            else if (key == "dec_dim") m.dec_dim = to_int(key, val);
            else if (key == "dec_depth") m.dec_depth = to_int(key, val);
            else if (key == "dec_heads") m.dec_heads = to_int(key, val);
            else if (key == "lang_dim") m.lang_dim = to_int(key, val);
            else if (key == "final_norm") m.final_norm = to_bool(key, val);
            else if (key == "seed") m.seed = to_u64(key, val);
            else throw ConfigError("unknown [model] key '" + key + "'");
        } else if (section == "train") {
            if (key == "corpus") cfg.corpus_dir = val;
            else if (key == "out_dir") cfg.out_dir = val;
            else if (key == "epochs") cfg.epochs = to_int(key, val);
            else if (key == "batch_size") cfg.batch_size = to_int(key, val);
            else if (key == "frames_per_clip") cfg.frames_per_clip = to_int(key, val);
            else if (key == "checkpoint_every") cfg.checkpoint_every = to_int(key, val);
            else if (key == "lr") cfg.lr = to_double(key, val);
            else if (key == "warmup_frac") cfg.warmup_frac = to_double(key, val);
            else if (key == "weight_decay") cfg.weight_decay = to_double(key, val);
            else if (key == "beta1") cfg.beta1 = to_double(key, val);
            else if (key == "beta2") cfg.beta2 = to_double(key, val);
            else if (key == "clip_norm") cfg.clip_norm = to_double(key, val);
            else if (key == "metrics") cfg.metrics_path = val;
            else throw ConfigError("unknown [train] key '" + key + "'");
        } else {
            throw ConfigError("config key '" + key + "' appears before any section");
        }
    }
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    RunConfig cfg = parse_run_config_text(ss.str());
    if (const char* env_seed = std::getenv("VOLTRON_SEED")) {
        cfg.model.seed = to_u64("VOLTRON_SEED", env_seed);
    }
    return cfg;
}

}  // namespace voltron
