#include "voltron/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include "voltron/error.hpp"

namespace fs = std::filesystem;

namespace voltron {

namespace {

constexpr uint32_t kVersion = 1;

void put_bytes(std::ostream& os, const void* p, size_t n) {
    os.write(static_cast<const char*>(p), std::streamsize(n));
}

template <class T>
void put_int(std::ostream& os, T v) {
    uint8_t buf[sizeof(T)];
    for (size_t i = 0; i < sizeof(T); ++i) buf[i] = uint8_t(uint64_t(v) >> (8 * i));
    put_bytes(os, buf, sizeof(T));
}

void put_f64(std::ostream& os, double v) { put_int<uint64_t>(os, std::bit_cast<uint64_t>(v)); }

void put_string(std::ostream& os, const std::string& s) {
    if (s.size() > 0xffff) throw CheckpointError("string too long to serialize");
    put_int<uint16_t>(os, uint16_t(s.size()));
    put_bytes(os, s.data(), s.size());
}

void put_f32_array(std::ostream& os, const std::vector<double>& v) {
    for (double d : v) put_int<uint32_t>(os, std::bit_cast<uint32_t>(float(d)));
}

struct Reader {
    std::ifstream is;
    std::string path;

    explicit Reader(const std::string& p) : is(p, std::ios::binary), path(p) {
        if (!is) throw CheckpointError("cannot open checkpoint '" + p + "'");
    }
    void bytes(void* p, size_t n) {
        is.read(static_cast<char*>(p), std::streamsize(n));
        if (!is) throw CheckpointError("truncated checkpoint '" + path + "'");
    }
    template <class T>
    T integer() {
        uint8_t buf[sizeof(T)];
        bytes(buf, sizeof(T));
        uint64_t v = 0;
        for (size_t i = 0; i < sizeof(T); ++i) v |= uint64_t(buf[i]) << (8 * i);
        return static_cast<T>(v);
    }
    double f64() { return std::bit_cast<double>(integer<uint64_t>()); }
    std::string string() {
        uint16_t n = integer<uint16_t>();
        std::string s(n, '\0');
        if (n) bytes(s.data(), n);
        return s;
    }
    std::vector<double> f32_array(size_t n) {
        std::vector<double> out(n);
        for (auto& d : out) d = double(std::bit_cast<float>(integer<uint32_t>()));
        return out;
    }
};

void put_config(std::ostream& os, const ModelConfig& c) {
    put_int<uint8_t>(os, uint8_t(c.variant));
    put_f64(os, c.alpha);
    put_int<uint32_t>(os, uint32_t(c.k));
    put_f64(os, c.gamma);
    for (int v : {c.dim, c.depth, c.heads, c.patch, c.height, c.width, c.caption_len,
                  c.vocab_size, c.dec_dim, c.dec_depth, c.dec_heads, c.lang_dim}) {
        put_int<uint32_t>(os, uint32_t(v));
    }
    put_int<uint8_t>(os, c.final_norm ? 1 : 0);
    put_int<uint64_t>(os, c.seed);
}

ModelConfig read_config(Reader& r) {
    ModelConfig c;
    uint8_t variant = r.integer<uint8_t>();
    if (variant > 3) throw CheckpointError("checkpoint has an unknown variant tag");
    c.variant = Variant(variant);
    c.alpha = r.f64();
    c.k = int(r.integer<uint32_t>());
    c.gamma = r.f64();
    int* fields[] = {&c.dim,         &c.depth,     &c.heads,    &c.patch,
                     &c.height,      &c.width,     &c.caption_len, &c.vocab_size,
                     &c.dec_dim,     &c.dec_depth, &c.dec_heads,   &c.lang_dim};
    for (int* f : fields) *f = int(r.integer<uint32_t>());
    c.final_norm = r.integer<uint8_t>() != 0;
    c.seed = r.integer<uint64_t>();
    return c;
}

}  // namespace

void save_checkpoint(const std::string& path, const VoltronModel& model,
                     const AdamW* optimizer, const std::vector<RngSnapshot>& streams,
                     uint64_t step, uint32_t epoch) {
    fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw CheckpointError("cannot write checkpoint '" + tmp.string() + "'");
        os.write("VCKP", 4);
        put_int<uint32_t>(os, kVersion);
        put_config(os, model.cfg);
        put_int<uint64_t>(os, step);
        put_int<uint32_t>(os, epoch);
        put_int<uint32_t>(os, uint32_t(model.vocab.size()));
        for (const auto& t : model.vocab.id_to_token) put_string(os, t);
        put_int<uint32_t>(os, uint32_t(streams.size()));
        for (const auto& s : streams) {
            put_string(os, s.name);
            for (uint64_t w : s.state) put_int<uint64_t>(os, w);
        }
        auto named = model.named_parameters();
        put_int<uint32_t>(os, uint32_t(named.size()));
        for (const auto& n : named) {
            put_string(os, n.name);
            put_int<uint32_t>(os, uint32_t(n.tensor.rows()));
            put_int<uint32_t>(os, uint32_t(n.tensor.cols()));
            put_f32_array(os, n.tensor.values());
        }
        put_int<uint8_t>(os, optimizer ? 1 : 0);
        if (optimizer) {
            put_int<uint64_t>(os, uint64_t(optimizer->step_count()));
            const auto& params = optimizer->parameters();
            put_int<uint32_t>(os, uint32_t(params.size()));
            for (size_t i = 0; i < params.size(); ++i) {
                put_string(os, params[i].name());
                put_int<uint32_t>(os, uint32_t(params[i].rows()));
                put_int<uint32_t>(os, uint32_t(params[i].cols()));
                put_f32_array(os, optimizer->first_moment(i));
                put_f32_array(os, optimizer->second_moment(i));
            }
        }
        if (!os) throw CheckpointError("write failed for checkpoint '" + tmp.string() + "'");
    }
    fs::rename(tmp, target);
}

const RngSnapshot* LoadedCheckpoint::find_stream(const std::string& name) const {
    for (const auto& s : streams) {
        if (s.name == name) return &s;
    }
    return nullptr;
}

void LoadedCheckpoint::restore_optimizer(AdamW& opt) const {
    if (!has_optimizer) throw CheckpointError("checkpoint carries no optimizer state");
    std::map<std::string, const std::pair<std::vector<double>, std::vector<double>>*> by_name;
    for (const auto& m : moments) by_name[m.first] = &m.second;
    const auto& params = opt.parameters();
    for (size_t i = 0; i < params.size(); ++i) {
        auto it = by_name.find(params[i].name());
        if (it == by_name.end()) {
            throw CheckpointError("optimizer state missing for parameter '" +
                                  params[i].name() + "'");
        }
        opt.restore(i, it->second->first, it->second->second);
    }
    opt.set_step_count(adam_step);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    Reader r(path);
    char magic[4];
    r.bytes(magic, 4);
    if (std::string(magic, 4) != "VCKP") {
        throw CheckpointError("'" + path + "' is not a checkpoint file");
    }
    uint32_t version = r.integer<uint32_t>();
    if (version != kVersion) {
        throw CheckpointError("checkpoint version " + std::to_string(version) +
                              " is not supported (expected " + std::to_string(kVersion) +
                              ")");
    }
    ModelConfig cfg = read_config(r);
    uint64_t step = r.integer<uint64_t>();
    uint32_t epoch = r.integer<uint32_t>();
    uint32_t vocab_count = r.integer<uint32_t>();
    if (int(vocab_count) != cfg.vocab_size) {
        throw CheckpointError("checkpoint vocabulary does not match its config");
    }
    std::vector<std::string> tokens(vocab_count);
    for (auto& t : tokens) t = r.string();

    std::vector<RngSnapshot> streams(r.integer<uint32_t>());
    for (auto& s : streams) {
        s.name = r.string();
        for (auto& w : s.state) w = r.integer<uint64_t>();
    }

    uint32_t param_count = r.integer<uint32_t>();
    std::map<std::string, std::pair<std::pair<int, int>, std::vector<double>>> blobs;
    for (uint32_t i = 0; i < param_count; ++i) {
        std::string name = r.string();
        int rows = int(r.integer<uint32_t>());
        int cols = int(r.integer<uint32_t>());
        if (rows < 1 || cols < 1) throw CheckpointError("parameter '" + name + "' has bad shape");
        blobs[name] = {{rows, cols}, r.f32_array(size_t(rows) * cols)};
    }

    LoadedCheckpoint out{VoltronModel::create(cfg, Vocabulary::from_tokens(tokens)),
                         step,
                         epoch,
                         std::move(streams),
                         false,
                         0,
                         {}};

    auto named = out.model.named_parameters();
    if (named.size() != blobs.size()) {
        throw CheckpointError("checkpoint parameter set does not match the model");
    }
    for (auto& n : named) {
        auto it = blobs.find(n.name);
        if (it == blobs.end()) {
            throw CheckpointError("checkpoint is missing parameter '" + n.name + "'");
        }
        if (it->second.first.first != n.tensor.rows() ||
            it->second.first.second != n.tensor.cols()) {
            throw CheckpointError("parameter '" + n.name + "' has mismatched shape");
        }
        n.tensor.load_values(it->second.second);
    }

    if (r.integer<uint8_t>() != 0) {
        out.has_optimizer = true;
        out.adam_step = int64_t(r.integer<uint64_t>());
        uint32_t count = r.integer<uint32_t>();
        for (uint32_t i = 0; i < count; ++i) {
            std::string name = r.string();
            int rows = int(r.integer<uint32_t>());
            int cols = int(r.integer<uint32_t>());
            size_t n = size_t(rows) * cols;
            auto m = r.f32_array(n);
            auto v = r.f32_array(n);
            out.moments.push_back({name, {std::move(m), std::move(v)}});
        }
    }
    return out;
}

}  // namespace voltron
