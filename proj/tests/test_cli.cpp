#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>
#include <unistd.h>

#include "usra/digest.hpp"

namespace fs = std::filesystem;

namespace {

struct RunResult {
    int exit_code = -1;
    std::string output;
};

std::string cli_bin() {
    const char* bin = std::getenv("USRA_CLI_BIN");
    REQUIRE_MESSAGE(bin != nullptr, "USRA_CLI_BIN must point at the usra binary");
    return bin;
}

RunResult run_cli(const std::string& args) {
    const std::string cmd = "'" + cli_bin() + "' " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    RunResult res;
    char buf[512];
    while (std::fgets(buf, sizeof(buf), pipe)) res.output += buf;
    const int status = pclose(pipe);
    res.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return res;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("usra_cli_test_" + std::to_string(::getpid()) + "_" +
                                            std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    static int& counter() {
        static int c = 0;
        return c;
    }
    std::string str() const { return path.string(); }
};

std::string write_tiny_config(const fs::path& dir, const std::string& method, const std::string& extra = "") {
    const fs::path p = dir / "config.txt";
    std::ofstream out(p);
    out << "# tiny test configuration\n"
        << "method = " << method << "\n"
        << "pretrain_frames = 24\n"
        << "pretrain_epochs = 2\n"
        << "batch_lusr = 4\n"
        << "batch_svea = 6\n"
        << "episodes = 2\n"
        << "episode_length = 24\n"
        << "warmup_steps = 12\n"
        << "update_every = 4\n"
        << "seed = 9\n"
        << extra;
    return p.string();
}

}  // namespace

TEST_CASE("cli: pretrain writes checkpoint, losses csv and manifest") {
    TempDir tmp;
    const std::string cfg = write_tiny_config(tmp.path, "usra");
    const RunResult r = run_cli("pretrain --config '" + cfg + "' --out '" + tmp.str() + "/run'");
    CHECK(r.exit_code == 0);
    CHECK(fs::exists(tmp.path / "run/pretrain.ckpt"));
    CHECK(fs::exists(tmp.path / "run/pretrain_losses.csv"));
    CHECK(fs::exists(tmp.path / "run/pretrain_manifest.txt"));

    const std::string manifest = slurp(tmp.path / "run/pretrain_manifest.txt");
    CHECK(manifest.find("method = usra") != std::string::npos);
    CHECK(manifest.find("checkpoint_sha1 = " + usra::sha1_file_hex((tmp.path / "run/pretrain.ckpt").string())) !=
          std::string::npos);
}

TEST_CASE("cli: out-of-range config value exits 2 and names the key") {
    TempDir tmp;
    const std::string cfg = write_tiny_config(tmp.path, "usra", "gamma = 1.5\n");
    const RunResult r = run_cli("pretrain --config '" + cfg + "' --out '" + tmp.str() + "/run'");
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("gamma") != std::string::npos);
}

TEST_CASE("cli: unknown config key exits 2 with its line number") {
    TempDir tmp;
    const fs::path cfg = tmp.path / "bad.txt";
    {
        std::ofstream out(cfg);
        out << "method = usra\n"
            << "gamme = 0.5\n";
    }
    const RunResult r = run_cli("pretrain --config '" + cfg.string() + "' --out '" + tmp.str() + "/run'");
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("gamme") != std::string::npos);
    CHECK(r.output.find(":2") != std::string::npos);
}

TEST_CASE("cli: duplicate config keys are rejected") {
    TempDir tmp;
    const std::string cfg = write_tiny_config(tmp.path, "usra", "seed = 10\n");
    const RunResult r = run_cli("pretrain --config '" + cfg + "' --out '" + tmp.str() + "/run'");
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("duplicate") != std::string::npos);
}

TEST_CASE("cli: identical config and seed reproduce byte-identical outputs") {
    TempDir tmp;
    const std::string cfg = write_tiny_config(tmp.path, "usra");
    CHECK(run_cli("pretrain --config '" + cfg + "' --out '" + tmp.str() + "/a'").exit_code == 0);
    CHECK(run_cli("pretrain --config '" + cfg + "' --out '" + tmp.str() + "/b'").exit_code == 0);
    CHECK(slurp(tmp.path / "a/pretrain_losses.csv") == slurp(tmp.path / "b/pretrain_losses.csv"));
    CHECK(slurp(tmp.path / "a/pretrain.ckpt") == slurp(tmp.path / "b/pretrain.ckpt"));
}

TEST_CASE("cli: train runs svea from scratch but demands a checkpoint for usra") {
    TempDir tmp;
    const std::string svea_cfg = write_tiny_config(tmp.path, "svea");
    const RunResult ok = run_cli("train --config '" + svea_cfg + "' --out '" + tmp.str() + "/svea'");
    CHECK(ok.exit_code == 0);
    CHECK(fs::exists(tmp.path / "svea/final.ckpt"));
    CHECK(fs::exists(tmp.path / "svea/metrics.csv"));
    const std::string metrics = slurp(tmp.path / "svea/metrics.csv");
    CHECK(metrics.rfind("episode,phase,train_return,loss_forward,loss_reverse,loss_svea,epsilon,env_steps,"
                        "wall_time_s\n",
                        0) == 0);

    const std::string usra_cfg = write_tiny_config(tmp.path, "usra");
    const RunResult missing = run_cli("train --config '" + usra_cfg + "' --out '" + tmp.str() + "/usra'");
    CHECK(missing.exit_code == 4);
}

TEST_CASE("cli: train resumes from a pretraining checkpoint and is byte-deterministic") {
    TempDir tmp;
    const std::string cfg = write_tiny_config(tmp.path, "usra");
    REQUIRE(run_cli("pretrain --config '" + cfg + "' --out '" + tmp.str() + "/run'").exit_code == 0);
    const RunResult t1 = run_cli("train --config '" + cfg + "' --out '" + tmp.str() + "/run'");
    CHECK(t1.exit_code == 0);
    const std::string m1 = slurp(tmp.path / "run/metrics.csv");
    const std::string c1 = slurp(tmp.path / "run/final.ckpt");

    const RunResult t2 = run_cli("train --config '" + cfg + "' --out '" + tmp.str() +
                                 "/run2' --resume '" + tmp.str() + "/run/pretrain.ckpt'");
    CHECK(t2.exit_code == 0);
    CHECK(slurp(tmp.path / "run2/metrics.csv") == m1);
    CHECK(slurp(tmp.path / "run2/final.ckpt") == c1);
}

TEST_CASE("cli: eval appends rows and rejects corrupt checkpoints") {
    TempDir tmp;
    const std::string cfg = write_tiny_config(tmp.path, "svea");
    REQUIRE(run_cli("train --config '" + cfg + "' --out '" + tmp.str() + "/run'").exit_code == 0);
    const std::string ckpt = tmp.str() + "/run/final.ckpt";
    const std::string csv = tmp.str() + "/eval.csv";

    const RunResult one = run_cli("eval --ckpt '" + ckpt + "' --domain train --episodes 1 --seed 4 --csv '" +
                                  csv + "'");
    CHECK(one.exit_code == 0);
    auto line_count = [&] {
        std::ifstream in(csv);
        int n = 0;
        std::string line;
        while (std::getline(in, line)) ++n;
        return n;
    };
    CHECK(line_count() == 2);  // header + one row

    const RunResult all = run_cli("eval --ckpt '" + ckpt + "' --domain all --episodes 1 --seed 4 --csv '" +
                                  csv + "'");
    CHECK(all.exit_code == 0);
    CHECK(line_count() == 7);  // + five domains

    // truncated checkpoint -> integrity failure
    const std::string broken = tmp.str() + "/broken.ckpt";
    {
        const std::string bytes = slurp(ckpt);
        std::ofstream out(broken, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 3));
    }
    const RunResult bad = run_cli("eval --ckpt '" + broken + "' --domain train --episodes 1 --seed 4 --csv '" +
                                  csv + "'");
    CHECK(bad.exit_code == 5);
    CHECK(line_count() == 7);
}

TEST_CASE("cli: ablate runs the full grid and records the divisor per cell") {
    TempDir tmp;
    const std::string cfg = write_tiny_config(tmp.path, "usra");
    const RunResult r = run_cli("ablate --config '" + cfg + "' --out '" + tmp.str() + "/grid'");
    CHECK(r.exit_code == 0);
    int metrics_files = 0;
    for (const char* cell : {"randconv_static", "randconv_differential", "jitter_static", "jitter_differential"}) {
        if (fs::exists(tmp.path / "grid" / cell / "metrics.csv")) ++metrics_files;
    }
    CHECK(metrics_files == 4);
    CHECK(fs::exists(tmp.path / "grid/ablation_comparison.csv"));
    const std::string comparison = slurp(tmp.path / "grid/ablation_comparison.csv");
    CHECK(comparison.rfind("aug,lr_mode,train_return\n", 0) == 0);

    const std::string diff_manifest = slurp(tmp.path / "grid/randconv_differential/train_manifest.txt");
    CHECK(diff_manifest.find("config.encoder_lr_divisor = 10") != std::string::npos);
    const std::string stat_manifest = slurp(tmp.path / "grid/randconv_static/train_manifest.txt");
    CHECK(stat_manifest.find("config.encoder_lr_divisor = 1") != std::string::npos);

    const RunResult bad = run_cli("ablate --config '" + cfg + "' --out '" + tmp.str() + "/g2' --aug blurry");
    CHECK(bad.exit_code == 2);
}

TEST_CASE("cli: single ablation cell selection") {
    TempDir tmp;
    const std::string cfg = write_tiny_config(tmp.path, "usra");
    const RunResult r =
        run_cli("ablate --config '" + cfg + "' --out '" + tmp.str() + "/one' --aug jitter --lr-mode static");
    CHECK(r.exit_code == 0);
    CHECK(fs::exists(tmp.path / "one/jitter_static/metrics.csv"));
    CHECK_FALSE(fs::exists(tmp.path / "one/randconv_static"));
}

TEST_CASE("cli: plot emits well-formed SVG with one path per series") {
    TempDir tmp;
    const fs::path log = tmp.path / "metrics.csv";
    {
        std::ofstream out(log);
        out << "episode,phase,train_return,loss_forward,loss_reverse,loss_svea,epsilon,env_steps,wall_time_s\n";
        out << "1,2,10.000000,0,0,0,0.5,200,0.000\n";
        out << "2,2,20.000000,0,0,0,0.4,400,0.000\n";
    }
    const fs::path svg = tmp.path / "curve.svg";
    const fs::path curve_csv = tmp.path / "curve.csv";
    const RunResult r = run_cli("plot --log '" + log.string() + "' --out '" + svg.string() +
                                "' --curve-csv '" + curve_csv.string() + "'");
    CHECK(r.exit_code == 0);
    const std::string body = slurp(svg);
    CHECK(body.find("<svg") != std::string::npos);
    CHECK(body.find("</svg>") != std::string::npos);
    std::size_t paths = 0, pos = 0;
    while ((pos = body.find("<path", pos)) != std::string::npos) {
        ++paths;
        ++pos;
    }
    CHECK(paths == 2);  // raw + smoothed
    // a two-point log produces a two-coordinate path: one M and one L
    const std::size_t d0 = body.find("d=\"M");
    REQUIRE(d0 != std::string::npos);
    const std::string d = body.substr(d0, body.find('"', d0 + 3) + 1 - d0);
    std::size_t l_count = 0;
    for (char ch : d)
        if (ch == 'L') ++l_count;
    CHECK(l_count == 1);

    const std::string curve = slurp(curve_csv);
    CHECK(curve.rfind("episode,raw_return,smoothed_return\n", 0) == 0);
}

TEST_CASE("cli: plot rejects malformed and empty logs") {
    TempDir tmp;
    const fs::path empty = tmp.path / "empty.csv";
    {
        std::ofstream out(empty);
        out << "episode,phase,train_return,loss_forward,loss_reverse,loss_svea,epsilon,env_steps,wall_time_s\n";
    }
    CHECK(run_cli("plot --log '" + empty.string() + "' --out '" + tmp.str() + "/x.svg'").exit_code == 2);

    const fs::path garbled = tmp.path / "garbled.csv";
    {
        std::ofstream out(garbled);
        out << "something,else\n1,2\n";
    }
    CHECK(run_cli("plot --log '" + garbled.string() + "' --out '" + tmp.str() + "/y.svg'").exit_code == 2);
}

TEST_CASE("cli: gradcheck passes stock and fails under fault injection") {
    const RunResult ok = run_cli("gradcheck --probes 6");
    CHECK(ok.exit_code == 0);
    for (const char* net : {"encoder", "projection", "decoder", "q_head"})
        CHECK(ok.output.find(net) != std::string::npos);

    const std::string cmd = "USRA_GRADCHECK_FAULT=1 '" + cli_bin() + "' gradcheck --probes 6 > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    CHECK(WEXITSTATUS(status) == 1);
}

TEST_CASE("cli: unknown flags exit 2") {
    CHECK(run_cli("pretrain --nonsense 1").exit_code == 2);
    CHECK(run_cli("").exit_code == 2);
}
