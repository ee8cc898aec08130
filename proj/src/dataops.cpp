#include "voltron/dataops.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "voltron/error.hpp"
#include "voltron/png_io.hpp"

namespace fs = std::filesystem;

namespace voltron {

namespace {

std::vector<std::string> split_lower(const std::string& text) {
    std::vector<std::string> words;
    std::string cur;
    for (char c : text) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!cur.empty()) words.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        }
    }
    if (!cur.empty()) words.push_back(std::move(cur));
    return words;
}

}  // namespace

// ---- vocabulary ----

int Vocabulary::id_of(const std::string& token) const {
    auto it = token_to_id.find(token);
    return it == token_to_id.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token_of(int id) const {
    if (id < 0 || id >= size()) throw VocabularyError("token id out of range");
    return id_to_token[id];
}

Vocabulary Vocabulary::build(const std::vector<std::string>& texts, int target_size) {
    if (target_size < kReserved + 1) {
        throw VocabularyError("vocabulary size must exceed the reserved token count");
    }
    std::set<std::string> unique_words;
    for (const auto& t : texts) {
        for (auto& w : split_lower(t)) unique_words.insert(std::move(w));
    }
    if (static_cast<int>(unique_words.size()) > target_size - kReserved) {
        throw VocabularyError("corpus has " + std::to_string(unique_words.size()) +
                              " distinct words; vocabulary of size " +
                              std::to_string(target_size) + " cannot hold them");
    }
    Vocabulary v;
    v.id_to_token = {"<pad>", "<null>", "<bos>", "<eos>", "<unk>"};
    for (const auto& w : unique_words) v.id_to_token.push_back(w);
    int filler = 0;
    while (v.size() < target_size) {
        v.id_to_token.push_back("<unused" + std::to_string(filler++) + ">");
    }
    for (int i = 0; i < v.size(); ++i) v.token_to_id[v.id_to_token[i]] = i;
    return v;
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
    if (static_cast<int>(tokens.size()) < kReserved + 1) {
        throw VocabularyError("token list too short to be a vocabulary");
    }
    Vocabulary v;
    v.id_to_token = std::move(tokens);
    for (int i = 0; i < v.size(); ++i) v.token_to_id[v.id_to_token[i]] = i;
    if (static_cast<int>(v.token_to_id.size()) != v.size()) {
        throw VocabularyError("token list contains duplicates");
    }
    return v;
}

int TokenizedUtterance::real_length() const {
    return static_cast<int>(std::count(length_mask.begin(), length_mask.end(), 1));
}

bool TokenizedUtterance::is_null() const {
    return !ids.empty() && ids[0] == Vocabulary::kNull;
}

TokenizedUtterance tokenize(const std::string& text, const Vocabulary& vocab, int L) {
    if (L < 3) throw ConfigError("caption length L must be at least 3 (BOS, one token, EOS)");
    if (vocab.size() <= Vocabulary::kReserved) throw VocabularyError("empty vocabulary");
    std::vector<int> ids{Vocabulary::kBos};
    for (const auto& w : split_lower(text)) ids.push_back(vocab.id_of(w));
    ids.push_back(Vocabulary::kEos);
    if (static_cast<int>(ids.size()) > L) {
        ids.resize(L);
        ids.back() = Vocabulary::kEos;
    }
    TokenizedUtterance out;
    out.ids = ids;
    out.ids.resize(L, Vocabulary::kPad);
    out.length_mask.assign(L, 0);
    for (size_t i = 0; i < ids.size(); ++i) out.length_mask[i] = 1;
    return out;
}

std::string detokenize(const std::vector<int>& ids, const Vocabulary& vocab) {
    std::string out;
    for (int id : ids) {
        if (id == Vocabulary::kBos) continue;
        if (id == Vocabulary::kEos || id == Vocabulary::kPad) break;
        if (!out.empty()) out.push_back(' ');
        out += vocab.token_of(id);
    }
    return out;
}

TokenizedUtterance null_utterance(int L) {
    if (L < 1) throw ConfigError("caption length L must be positive");
    TokenizedUtterance out;
    out.ids.assign(L, Vocabulary::kPad);
    out.ids[0] = Vocabulary::kNull;
    out.length_mask.assign(L, 0);
    out.length_mask[0] = 1;
    return out;
}

// ---- corpus ----

Corpus load_corpus(const std::string& dir) {
    fs::path root(dir);
    fs::path manifest = root / "manifest.txt";
    std::ifstream mf(manifest);
    if (!mf) throw DataError("corpus: cannot open manifest '" + manifest.string() + "'");
    Corpus corpus;
    std::string line;
    while (std::getline(mf, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
        if (line.empty()) continue;
        fs::path clip_dir = root / line;
        ClipRecord clip;
        clip.name = line;
        for (int i = 0;; ++i) {
            fs::path frame_path = clip_dir / (std::to_string(i) + ".png");
            if (!fs::exists(frame_path)) break;
            Image img = read_png(frame_path.string());
            if (clip.width == 0) {
                clip.width = img.width;
                clip.height = img.height;
            } else if (img.width != clip.width || img.height != clip.height) {
                throw DataError("corpus: frame size mismatch in clip '" + line + "'");
            }
            std::vector<double> frame(img.rgb.size());
            for (size_t b = 0; b < img.rgb.size(); ++b) frame[b] = img.rgb[b] / 255.0;
            clip.frames.push_back(std::move(frame));
        }
        if (clip.frames.empty()) {
            throw DataError("corpus: clip '" + line + "' has no frames (expected 0.png...)");
        }
        std::ifstream cf(clip_dir / "caption.txt");
        if (!cf) throw DataError("corpus: clip '" + line + "' is missing caption.txt");
        std::getline(cf, clip.caption);
        while (!clip.caption.empty() &&
               (clip.caption.back() == '\r' || clip.caption.back() == '\n')) {
            clip.caption.pop_back();
        }
        if (corpus.width == 0) {
            corpus.width = clip.width;
            corpus.height = clip.height;
        } else if (clip.width != corpus.width || clip.height != corpus.height) {
            throw DataError("corpus: clip '" + line + "' frame size differs from corpus");
        }
        corpus.clips.push_back(std::move(clip));
    }
    if (corpus.clips.empty()) throw DataError("corpus: manifest lists no clips");
    return corpus;
}

void tokenize_corpus(Corpus& corpus, const Vocabulary& vocab, int L) {
    for (auto& clip : corpus.clips) clip.tokens = tokenize(clip.caption, vocab, L);
}

std::vector<std::string> corpus_captions(const Corpus& corpus) {
    std::vector<std::string> out;
    out.reserve(corpus.clips.size());
    for (const auto& c : corpus.clips) out.push_back(c.caption);
    return out;
}

// ---- masking ----

int MaskSpec::dropped_count() const {
    return static_cast<int>(std::count(keep.begin(), keep.end(), 0));
}

std::vector<int> MaskSpec::kept_indices() const {
    std::vector<int> out;
    for (int i = 0; i < num_regions(); ++i) {
        if (keep[i]) out.push_back(i);
    }
    return out;
}

std::vector<int> MaskSpec::dropped_indices() const {
    std::vector<int> out;
    for (int i = 0; i < num_regions(); ++i) {
        if (!keep[i]) out.push_back(i);
    }
    return out;
}

MaskSpec make_mask(int num_regions, double gamma, Rng& rng) {
    if (!(gamma > 0.0 && gamma < 1.0)) {
        throw ConfigError("masking ratio must lie strictly between 0 and 1");
    }
    int dropped = static_cast<int>(std::lround(gamma * num_regions));
    if (dropped < 1 || num_regions - dropped < 1) {
        throw ConfigError("masking ratio " + std::to_string(gamma) + " over " +
                          std::to_string(num_regions) +
                          " regions leaves no masked or no visible region");
    }
    std::vector<int> order(num_regions);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    MaskSpec spec;
    spec.gamma = gamma;
    spec.keep.assign(num_regions, 1);
    for (int i = 0; i < dropped; ++i) spec.keep[order[i]] = 0;
    return spec;
}

// ---- frame contexts ----

std::vector<int> sample_frame_indices(int num_frames, int k, Rng& rng) {
    if (num_frames < 1) throw DataError("clip has no frames");
    if (k == 1) return {static_cast<int>(rng.uniform_int(num_frames))};
    if (k != 2) throw ConfigError("frame context size must be 1 or 2");
    if (num_frames < 2) throw DataError("dual-frame context needs at least 2 frames");
    int boundary = static_cast<int>(std::ceil(0.2 * num_frames));
    int i = static_cast<int>(rng.uniform_int(boundary));
    int j = boundary + static_cast<int>(rng.uniform_int(num_frames - boundary));
    return {i, j};
}

FrameContext context_from_indices(const ClipRecord& clip, const std::vector<int>& idx) {
    FrameContext ctx;
    ctx.height = clip.height;
    ctx.width = clip.width;
    ctx.tokens = clip.tokens;
    ctx.frame_indices = idx;
    for (int i : idx) {
        if (i < 0 || i >= clip.frame_count()) {
            throw DataError("frame index out of range for clip '" + clip.name + "'");
        }
        ctx.frames.push_back(clip.frames[i]);
    }
    return ctx;
}

FrameContext sample_frame_context(const ClipRecord& clip, int k, Rng& rng) {
    return context_from_indices(clip, sample_frame_indices(clip.frame_count(), k, rng));
}

// ---- patches ----

Tensor patchify(const std::vector<double>& frame, int height, int width, int p) {
    if (p < 1 || height % p != 0 || width % p != 0) {
        throw ConfigError("patch size " + std::to_string(p) + " does not divide " +
                          std::to_string(height) + "x" + std::to_string(width));
    }
    if (frame.size() != size_t(height) * width * 3) {
        throw ShapeError("patchify: frame buffer does not match dimensions");
    }
    const int gh = height / p, gw = width / p;
    const int regions = gh * gw, patch_dim = p * p * 3;
    std::vector<double> out(size_t(regions) * patch_dim);
    for (int gy = 0; gy < gh; ++gy) {
        for (int gx = 0; gx < gw; ++gx) {
            double* dst = &out[size_t(gy * gw + gx) * patch_dim];
            for (int py = 0; py < p; ++py) {
                const double* src = &frame[((size_t(gy) * p + py) * width + size_t(gx) * p) * 3];
                std::copy(src, src + size_t(p) * 3, dst + size_t(py) * p * 3);
            }
        }
    }
    return Tensor::from_values(regions, patch_dim, std::move(out));
}

std::vector<double> unpatchify(const Tensor& patches, int height, int width, int p) {
    const int gh = height / p, gw = width / p;
    const int patch_dim = p * p * 3;
    if (patches.rows() != gh * gw || patches.cols() != patch_dim) {
        throw ShapeError("unpatchify: patch matrix does not match dimensions");
    }
    std::vector<double> frame(size_t(height) * width * 3);
    const auto& v = patches.values();
    for (int gy = 0; gy < gh; ++gy) {
        for (int gx = 0; gx < gw; ++gx) {
            const double* src = &v[size_t(gy * gw + gx) * patch_dim];
            for (int py = 0; py < p; ++py) {
                double* dst = &frame[((size_t(gy) * p + py) * width + size_t(gx) * p) * 3];
                std::copy(src + size_t(py) * p * 3, src + size_t(py + 1) * p * 3, dst);
            }
        }
    }
    return frame;
}

Tensor normalize_targets(const Tensor& patches) {
    const int r = patches.rows(), c = patches.cols();
    const auto& v = patches.values();
    std::vector<double> out(v.size());
    for (int i = 0; i < r; ++i) {
        const double* x = &v[size_t(i) * c];
        double m = 0.0;
        for (int j = 0; j < c; ++j) m += x[j];
        m /= c;
        double var = 0.0;
        for (int j = 0; j < c; ++j) var += (x[j] - m) * (x[j] - m);
        var /= c;
        double inv = 1.0 / std::sqrt(var + 1e-6);
        for (int j = 0; j < c; ++j) out[size_t(i) * c + j] = (x[j] - m) * inv;
    }
    return Tensor::from_values(r, c, std::move(out));
}

// ---- epoch index ----

EpochIndex build_epoch_index(const Corpus& corpus, int frames_per_clip, int k,
                             uint64_t seed) {
    if (corpus.clips.empty()) throw DataError("cannot index an empty corpus");
    if (frames_per_clip < 1) throw ConfigError("frames_per_clip must be positive");
    Rng rng = Rng::seeded(seed);
    EpochIndex index;
    index.seed = seed;
    index.k = k;
    for (uint32_t clip_id = 0; clip_id < corpus.clips.size(); ++clip_id) {
        const auto& clip = corpus.clips[clip_id];
        for (int s = 0; s < frames_per_clip; ++s) {
            auto idx = sample_frame_indices(clip.frame_count(), k, rng);
            EpochIndex::Entry e;
            e.clip_id = clip_id;
            for (int i : idx) e.frame_indices.push_back(static_cast<uint16_t>(i));
            index.entries.push_back(std::move(e));
        }
    }
    rng.shuffle(index.entries);
    return index;
}

namespace {

template <class T>
void write_le(std::ostream& os, T v) {
    uint8_t buf[sizeof(T)];
    for (size_t i = 0; i < sizeof(T); ++i) buf[i] = uint8_t(uint64_t(v) >> (8 * i));
    os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <class T>
T read_le(std::istream& is) {
    uint8_t buf[sizeof(T)];
    is.read(reinterpret_cast<char*>(buf), sizeof(T));
    uint64_t v = 0;
    for (size_t i = 0; i < sizeof(T); ++i) v |= uint64_t(buf[i]) << (8 * i);
    return static_cast<T>(v);
}

}  // namespace

void write_epoch_index(const std::string& path, const EpochIndex& index) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("epoch index: cannot write '" + path + "'");
    os.write("VEIX", 4);
    write_le<uint32_t>(os, 1);
    write_le<uint64_t>(os, index.seed);
    for (const auto& e : index.entries) {
        write_le<uint32_t>(os, e.clip_id);
        for (uint16_t f : e.frame_indices) write_le<uint16_t>(os, f);
    }
    if (!os) throw DataError("epoch index: write failed for '" + path + "'");
}

EpochIndex read_epoch_index(const std::string& path, int k) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("epoch index: cannot open '" + path + "'");
    is.seekg(0, std::ios::end);
    auto file_size = static_cast<size_t>(is.tellg());
    is.seekg(0);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != "VEIX") {
        throw DataError("epoch index: '" + path + "' has a bad magic header");
    }
    uint32_t version = read_le<uint32_t>(is);
    if (version != 1) {
        throw DataError("epoch index: unsupported version " + std::to_string(version));
    }
    EpochIndex index;
    index.seed = read_le<uint64_t>(is);
    index.k = k;
    const size_t record = 4 + 2 * size_t(k);
    if ((file_size - 16) % record != 0) {
        throw DataError("epoch index: record size does not match k=" + std::to_string(k));
    }
    size_t count = (file_size - 16) / record;
    index.entries.resize(count);
    for (auto& e : index.entries) {
        e.clip_id = read_le<uint32_t>(is);
        e.frame_indices.resize(k);
        for (auto& f : e.frame_indices) f = read_le<uint16_t>(is);
    }
    if (!is) throw DataError("epoch index: truncated file '" + path + "'");
    return index;
}

}  // namespace voltron
