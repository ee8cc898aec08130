#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"

namespace fs = std::filesystem;

namespace {

struct CliResult {
    int code = -1;
    std::string output;
};

CliResult run_cli(const std::string& args) {
    std::string cmd = std::string(VOLTRON_BIN) + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    CliResult res;
    char buf[4096];
    for (;;) {
        size_t n = fread(buf, 1, sizeof buf, pipe);
        if (n == 0) break;
        res.output.append(buf, n);
    }
    int status = pclose(pipe);
    res.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return res;
}

fs::path scratch_dir(const std::string& leaf) {
    fs::path dir = fs::temp_directory_path() / "voltron-cli-tests" / leaf;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string line_value(const std::string& output, const std::string& key) {
    std::istringstream is(output);
    std::string line;
    while (std::getline(is, line))
        if (line.rfind(key + "=", 0) == 0) return line.substr(key.size() + 1);
    return "";
}

void write_run_config(const fs::path& path, const std::string& variant,
                      const fs::path& corpus, const fs::path& out, int epochs,
                      uint64_t seed) {
    std::ofstream cfg(path);
    cfg << "[model]\n"
        << "variant = " << variant << "\n"
        << "alpha = " << (variant == "v-gen" ? "0.5" : "0") << "\n"
        << "k = " << (variant == "v-cond" || variant == "no-lang" ? 1 : 2) << "\n"
        << "caption_len = 8\n"
        << "seed = " << seed << "\n"
        << "[train]\n"
        << "corpus = " << corpus.string() << "\n"
        << "out_dir = " << out.string() << "\n"
        << "epochs = " << epochs << "\n"
        << "batch_size = 4\n"
        << "frames_per_clip = 2\n"
        << "lr = 0.001\n";
}

}  // namespace

TEST_CASE("usage problems exit with code 2") {
    CHECK(run_cli("").code == 2);
    CHECK(run_cli("--definitely-not-a-flag").code == 2);
    CHECK(run_cli("pretrain").code == 2);

    fs::path dir = scratch_dir("usage");
    CliResult bad_kind = run_cli("fixture --kind bogus --out " + (dir / "x").string());
    CHECK(bad_kind.code == 2);

    CliResult bad_corpus = run_cli("fixture --kind colors --out " +
                                   (dir / "c").string() + " --clips 0");
    CHECK(bad_corpus.code == 2);
}

TEST_CASE("fixture, pretrain, inspect, and score chain together") {
    fs::path dir = scratch_dir("pipeline");
    fs::path corpus = dir / "corpus";

    CliResult fx = run_cli("fixture --kind colors --out " + corpus.string() +
                           " --clips 3 --frames 3 --height 32 --width 32 --seed 7");
    CHECK(fx.code == 0);
    CHECK(fx.output.find("wrote colors fixture") != std::string::npos);
    CHECK(fs::exists(corpus / "clip0" / "0.png"));
    CHECK(fs::exists(corpus / "clip0" / "caption.txt"));

    fs::path cfg = dir / "run.cfg";
    write_run_config(cfg, "v-gen", corpus, dir / "run", 2, 3);
    CliResult pre = run_cli("pretrain --config " + cfg.string());
    REQUIRE(pre.code == 0);
    std::string ckpt = line_value(pre.output, "checkpoint");
    REQUIRE(!ckpt.empty());
    CHECK(fs::exists(ckpt));
    CHECK(fs::exists(line_value(pre.output, "metrics")));
    CHECK(!line_value(pre.output, "final_mse").empty());

    CliResult ins = run_cli("inspect --checkpoint " + ckpt);
    CHECK(ins.code == 0);
    CHECK(line_value(ins.output, "variant") == "v-gen");
    CHECK(line_value(ins.output, "optimizer") == "present");
    CHECK(ins.output.find("caption_len=8") != std::string::npos);

    CliResult sc = run_cli("score --checkpoint " + ckpt + " --frames " +
                           (corpus / "clip0").string() +
                           " --utterance \"the checker field\" --stride 2");
    CHECK(sc.code == 0);
    std::istringstream lines(sc.output);
    std::string line;
    int rows = 0;
    while (std::getline(lines, line)) {
        ++rows;
        CHECK(line.find('\t') != std::string::npos);
    }
    CHECK(rows == 2);  // frames 0 and 2 of three
}

TEST_CASE("score needs a generation head and reports its absence") {
    fs::path dir = scratch_dir("score-vcond");
    fs::path corpus = dir / "corpus";
    REQUIRE(run_cli("fixture --kind colors --out " + corpus.string() +
                    " --clips 2 --frames 2 --height 32 --width 32 --seed 1")
                .code == 0);

    fs::path cfg = dir / "run.cfg";
    write_run_config(cfg, "v-cond", corpus, dir / "run", 1, 5);
    CliResult pre = run_cli("pretrain --config " + cfg.string());
    REQUIRE(pre.code == 0);
    std::string ckpt = line_value(pre.output, "checkpoint");

    CliResult sc = run_cli("score --checkpoint " + ckpt + " --frames " +
                           (corpus / "clip0").string() + " --utterance \"field\"");
    CHECK(sc.code == 4);
    CHECK(sc.output.find("error:") != std::string::npos);
}

TEST_CASE("damaged checkpoints exit with code 3") {
    fs::path dir = scratch_dir("bad-ckpt");
    fs::path junk = dir / "junk.vckp";
    std::ofstream(junk, std::ios::binary) << "this is not a checkpoint";
    CliResult ins = run_cli("inspect --checkpoint " + junk.string());
    CHECK(ins.code == 3);
    CHECK(ins.output.find("error:") != std::string::npos);

    CliResult missing = run_cli("inspect --checkpoint " + (dir / "gone.vckp").string());
    CHECK(missing.code == 3);
}

TEST_CASE("self checks pass clean and catch an injected fault") {
    fs::path dir = scratch_dir("verify");

    CliResult ok = run_cli("verify --level fast --scratch " + (dir / "a").string());
    CHECK(ok.code == 0);
    CHECK(ok.output.find("[ ok ]") != std::string::npos);
    CHECK(ok.output.find("[FAIL]") == std::string::npos);

    CliResult bad = run_cli("verify --level fast --inject-causality-fault --scratch " +
                            (dir / "b").string());
    CHECK(bad.code == 5);
    CHECK(bad.output.find("[FAIL]") != std::string::npos);
    CHECK(bad.output.find("causality") != std::string::npos);
}

TEST_CASE("identical seeds reproduce identical training metrics") {
    fs::path dir = scratch_dir("repro");
    fs::path corpus = dir / "corpus";
    REQUIRE(run_cli("fixture --kind colors --out " + corpus.string() +
                    " --clips 2 --frames 2 --height 32 --width 32 --seed 9")
                .code == 0);

    fs::path cfg_a = dir / "a.cfg";
    fs::path cfg_b = dir / "b.cfg";
    write_run_config(cfg_a, "v-gen", corpus, dir / "run_a", 2, 17);
    write_run_config(cfg_b, "v-gen", corpus, dir / "run_b", 2, 17);

    CliResult a = run_cli("pretrain --config " + cfg_a.string());
    CliResult b = run_cli("pretrain --config " + cfg_b.string());
    REQUIRE(a.code == 0);
    REQUIRE(b.code == 0);
    CHECK(line_value(a.output, "steps") == line_value(b.output, "steps"));
    CHECK(line_value(a.output, "final_mse") == line_value(b.output, "final_mse"));
    CHECK(line_value(a.output, "final_nll") == line_value(b.output, "final_nll"));
}
