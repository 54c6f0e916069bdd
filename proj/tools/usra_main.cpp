// usra: pretrain / train / eval / ablate / plot / gradcheck driver around the
// StriderWorld representation-learning experiments.

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "usra/checkpoint.hpp"
#include "usra/config.hpp"
#include "usra/digest.hpp"
#include "usra/error.hpp"
#include "usra/evalharness.hpp"
#include "usra/gradsuite.hpp"
#include "usra/svgplot.hpp"
#include "usra/trainer.hpp"

namespace fs = std::filesystem;
using namespace usra;

namespace {

int exit_code_for(const Error& e) {
    switch (e.kind()) {
        case ErrorKind::config: return 2;
        case ErrorKind::filesystem: return 3;
        case ErrorKind::missing_artifact: return 4;
        case ErrorKind::corrupt_artifact: return 5;
        case ErrorKind::logic: return 1;
    }
    return 1;
}

std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void ensure_out_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) raise(ErrorKind::filesystem, "cannot create output dir '" + dir + "': " + ec.message());
    // fail fast on read-only targets rather than after a long run
    const std::string probe = dir + "/.write_probe";
    FILE* f = std::fopen(probe.c_str(), "w");
    if (!f) raise(ErrorKind::filesystem, "output dir '" + dir + "' is not writable");
    std::fclose(f);
    fs::remove(probe, ec);
}

std::vector<std::pair<std::string, std::string>> config_fields(const TrainConfig& cfg) {
    std::vector<std::pair<std::string, std::string>> fields;
    std::istringstream in(config_to_text(cfg));
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find(" = ");
        fields.emplace_back("config." + line.substr(0, eq), line.substr(eq + 3));
    }
    return fields;
}

void write_run_manifest(const std::string& path, const TrainConfig& cfg, const std::string& started,
                        const std::string& finished, double duration_s,
                        const std::vector<std::pair<std::string, std::string>>& outputs,
                        const std::string& ckpt_sha1) {
    std::vector<std::pair<std::string, std::string>> fields;
    fields.emplace_back("method", method_name(cfg.method));
    fields.emplace_back("seed", std::to_string(cfg.seed));
    fields.emplace_back("started_utc", started);
    fields.emplace_back("finished_utc", finished);
    char dur[32];
    std::snprintf(dur, sizeof(dur), "%.3f", duration_s);
    fields.emplace_back("duration_s", dur);
    for (const auto& [k, v] : outputs) fields.emplace_back(k, v);
    if (!ckpt_sha1.empty()) fields.emplace_back("checkpoint_sha1", ckpt_sha1);
    for (auto& f : config_fields(cfg)) fields.push_back(std::move(f));
    write_manifest_atomic(path, fields);
}

TrainConfig load_config(const std::string& path, uint64_t* seed_override) {
    TrainConfig cfg = parse_config_file(path);
    if (seed_override) cfg.seed = *seed_override;
    cfg.validate();
    return cfg;
}

void save_bundle(const std::string& path, ModelBundle& bundle, const TrainConfig& cfg, int phase,
                 long env_steps) {
    CheckpointData data = bundle_to_checkpoint(bundle);
    data.add_meta("method", static_cast<float>(static_cast<int>(cfg.method)));
    data.add_meta("phase", static_cast<float>(phase));
    data.add_meta("env_steps", static_cast<float>(env_steps));
    data.add_meta("seed_lo", static_cast<float>(cfg.seed & 0xFFFFFFu));
    save_checkpoint(path, data);
}

int run_pretrain(const std::string& config_path, uint64_t* seed, const std::string& out_dir) {
    TrainConfig cfg = load_config(config_path, seed);
    ensure_out_dir(out_dir);
    const std::string started = utc_now();
    const auto t0 = std::chrono::steady_clock::now();

    const FrameDataset ds = collect_random(make_domain(Variant::train, cfg.seed), cfg.pretrain_frames, cfg.seed);
    PretrainResult res = pretrain_phase1(ds, cfg);

    const std::string ckpt = out_dir + "/pretrain.ckpt";
    const std::string csv = out_dir + "/pretrain_losses.csv";
    save_bundle(ckpt, res.bundle, cfg, 1, cfg.pretrain_frames);
    write_metrics_csv(csv, res.log);
    const double dur = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_run_manifest(out_dir + "/pretrain_manifest.txt", cfg, started, utc_now(), dur,
                       {{"checkpoint", ckpt}, {"metrics", csv}}, sha1_file_hex(ckpt));
    std::printf("pretrain done: %s (%d epochs, first-epoch loss %.4f, last %.4f)\n", ckpt.c_str(),
                cfg.pretrain_epochs,
                res.log.empty() ? 0.0
                                : static_cast<double>(res.log.front().loss_forward + res.log.front().loss_reverse +
                                                      res.log.front().loss_svea),
                res.log.empty() ? 0.0
                                : static_cast<double>(res.log.back().loss_forward + res.log.back().loss_reverse +
                                                      res.log.back().loss_svea));
    return 0;
}

int run_train(const std::string& config_path, uint64_t* seed, const std::string& out_dir,
              const std::string& resume) {
    TrainConfig cfg = load_config(config_path, seed);
    ensure_out_dir(out_dir);
    const std::string started = utc_now();
    const auto t0 = std::chrono::steady_clock::now();

    ModelBundle bundle = [&] {
        if (cfg.method == Method::svea) return ModelBundle::init(cfg.seed, QInput::full_z);
        const std::string ckpt_path = resume.empty() ? out_dir + "/pretrain.ckpt" : resume;
        if (!fs::exists(ckpt_path))
            raise(ErrorKind::missing_artifact, std::string(method_name(cfg.method)) +
                                                   " needs a pretraining checkpoint; expected '" + ckpt_path +
                                                   "' (run pretrain or pass --resume)");
        ModelBundle b = bundle_from_checkpoint(load_checkpoint(ckpt_path));
        const QInput want = cfg.method == Method::lusr ? QInput::general_mu : QInput::full_z;
        if (b.q_input != want)
            raise(ErrorKind::config, "checkpoint '" + ckpt_path + "' was pretrained for a different method");
        return b;
    }();

    TrainResult res = finetune_phase2(bundle, cfg);

    const std::string ckpt = out_dir + "/final.ckpt";
    const std::string csv = out_dir + "/metrics.csv";
    save_bundle(ckpt, bundle, cfg, 2, static_cast<long>(cfg.episodes) * cfg.episode_length);
    write_metrics_csv(csv, res.log);
    const double dur = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_run_manifest(out_dir + "/train_manifest.txt", cfg, started, utc_now(), dur,
                       {{"checkpoint", ckpt}, {"metrics", csv}}, sha1_file_hex(ckpt));
    double last = res.log.empty() ? 0.0 : static_cast<double>(res.log.back().train_return);
    std::printf("train done: %s (%d episodes, last-episode return %.2f)\n", ckpt.c_str(), cfg.episodes, last);
    return 0;
}

int run_eval(const std::string& ckpt_path, const std::string& domain, int episodes, uint64_t seed,
             const std::string& csv_path) {
    const CheckpointData data = load_checkpoint(ckpt_path);
    const ModelBundle bundle = bundle_from_checkpoint(data);
    const int method_id = static_cast<int>(data.meta_or("method", 0.0f));
    const char* method = method_name(static_cast<Method>(method_id));

    std::vector<Variant> domains;
    if (domain == "all")
        domains.assign(all_variants().begin(), all_variants().end());
    else
        domains.push_back(variant_from_name(domain));

    const bool fresh = !fs::exists(csv_path);
    std::ofstream out(csv_path, std::ios::app);
    if (!out) raise(ErrorKind::filesystem, "cannot open '" + csv_path + "' for append");
    if (fresh) out << "method,domain,episodes,seed,mean_return\n";
    for (Variant v : domains) {
        const double mean = evaluate(bundle, v, episodes, seed);
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%s,%s,%d,%llu,%.6f", method, variant_name(v), episodes,
                      static_cast<unsigned long long>(seed), mean);
        out << buf << "\n";
        std::printf("%s\n", buf);
    }
    if (!out) raise(ErrorKind::filesystem, "short write to '" + csv_path + "'");
    return 0;
}

int run_ablate(const std::string& config_path, uint64_t* seed, const std::string& out_dir,
               const std::string& aug_sel, const std::string& lr_sel) {
    TrainConfig base = load_config(config_path, seed);
    ensure_out_dir(out_dir);

    std::vector<std::string> augs = aug_sel.empty() ? std::vector<std::string>{"randconv", "jitter"}
                                                    : std::vector<std::string>{aug_sel};
    std::vector<std::string> lr_modes = lr_sel.empty() ? std::vector<std::string>{"static", "differential"}
                                                       : std::vector<std::string>{lr_sel};

    std::vector<std::string> rows;
    for (const std::string& aug : augs) {
        for (const std::string& lr_mode : lr_modes) {
            TrainConfig cfg = base;
            cfg.method = Method::usra;
            cfg.aug_kind = aug_kind_from_name(aug);
            cfg.encoder_lr_divisor = lr_mode == "differential" ? 10 : 1;
            const std::string cell = out_dir + "/" + aug + "_" + lr_mode;
            ensure_out_dir(cell);
            const std::string started = utc_now();
            const auto t0 = std::chrono::steady_clock::now();

            const FrameDataset ds =
                collect_random(make_domain(Variant::train, cfg.seed), cfg.pretrain_frames, cfg.seed);
            PretrainResult pre = pretrain_phase1(ds, cfg);
            write_metrics_csv(cell + "/pretrain_losses.csv", pre.log);
            TrainResult fin = finetune_phase2(pre.bundle, cfg);
            write_metrics_csv(cell + "/metrics.csv", fin.log);
            const std::string ckpt = cell + "/final.ckpt";
            save_bundle(ckpt, pre.bundle, cfg, 2, static_cast<long>(cfg.episodes) * cfg.episode_length);
            const double ret = evaluate(pre.bundle, Variant::train, kDefaultEvalEpisodes, cfg.seed);
            const double dur = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            write_run_manifest(cell + "/train_manifest.txt", cfg, started, utc_now(), dur,
                               {{"checkpoint", ckpt},
                                {"metrics", cell + "/metrics.csv"},
                                {"pretrain_metrics", cell + "/pretrain_losses.csv"}},
                               sha1_file_hex(ckpt));
            char buf[128];
            std::snprintf(buf, sizeof(buf), "%s,%s,%.6f", aug.c_str(), lr_mode.c_str(), ret);
            rows.push_back(buf);
            std::printf("ablate cell %s: train return %.2f\n", cell.c_str(), ret);
        }
    }

    std::ofstream out(out_dir + "/ablation_comparison.csv", std::ios::trunc);
    if (!out) raise(ErrorKind::filesystem, "cannot open comparison csv");
    out << "aug,lr_mode,train_return\n";
    for (const std::string& r : rows) out << r << "\n";
    return 0;
}

int run_plot(const std::string& log_path, const std::string& out_path, int window,
             const std::string& curve_csv) {
    const std::vector<MetricsRow> rows = read_metrics_csv(log_path);
    if (rows.empty()) raise(ErrorKind::config, "metrics log '" + log_path + "' has no data rows");
    const std::vector<CurvePoint> curve = learning_curve(rows, window);
    if (!curve_csv.empty()) write_curve_csv(curve_csv, curve);

    Series raw{"raw", "#9aa5b1", {}};
    Series smooth{"smoothed", "#1f6fb2", {}};
    for (const CurvePoint& p : curve) {
        raw.points.emplace_back(p.episode, p.raw);
        smooth.points.emplace_back(p.episode, p.smoothed);
    }
    write_svg_chart(out_path, "Training return", "episode", "return", {raw, smooth});
    std::printf("wrote %s\n", out_path.c_str());
    return 0;
}

int run_gradcheck(int probes) {
    const GradSuiteReport report = run_grad_suite(42, probes);
    for (const GradSuiteEntry& e : report.entries)
        std::printf("%-14s %-10s max_rel_err=%.3e %s\n", e.loss.c_str(), e.network.c_str(),
                    static_cast<double>(e.max_rel_err), e.pass ? "PASS" : "FAIL");
    std::printf("gradcheck %s\n", report.pass ? "PASS" : "FAIL");
    return report.pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"StriderWorld representation-learning experiments (usra/lusr/svea)"};
    app.require_subcommand(1);

    std::string config_path, out_dir, resume, ckpt, domain = "all", csv_path, log_path, svg_path, curve_csv;
    std::string aug_sel, lr_sel;
    uint64_t seed = 0;
    bool seed_given = false;
    int episodes = kDefaultEvalEpisodes, window = 10, probes = 64;

    auto add_seed = [&](CLI::App* cmd) {
        cmd->add_option("--seed", seed, "override the config seed")->each([&](const std::string&) {
            seed_given = true;
        });
    };

    CLI::App* pre = app.add_subcommand("pretrain", "collect random frames and run the pretraining phase");
    pre->add_option("--config", config_path, "config file")->required();
    pre->add_option("--out", out_dir, "output directory")->required();
    add_seed(pre);

    CLI::App* train = app.add_subcommand("train", "run the agent-learning phase");
    train->add_option("--config", config_path, "config file")->required();
    train->add_option("--out", out_dir, "output directory")->required();
    train->add_option("--resume", resume, "pretraining checkpoint to start from");
    add_seed(train);

    CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint on one or all domains");
    ev->add_option("--ckpt", ckpt, "checkpoint file")->required();
    ev->add_option("--domain", domain, "train|color_easy|color_hard|video_easy|video_hard|all");
    ev->add_option("--episodes", episodes, "episodes per domain");
    ev->add_option("--seed", seed, "evaluation seed");
    ev->add_option("--csv", csv_path, "CSV to append results to")->required();

    CLI::App* ab = app.add_subcommand("ablate", "run the augmentation x learning-rate ablation grid");
    ab->add_option("--config", config_path, "config file")->required();
    ab->add_option("--out", out_dir, "output directory")->required();
    ab->add_option("--aug", aug_sel, "randconv|jitter (default: both)")
        ->check(CLI::IsMember({"randconv", "jitter"}));
    ab->add_option("--lr-mode", lr_sel, "static|differential (default: both)")
        ->check(CLI::IsMember({"static", "differential"}));
    add_seed(ab);

    CLI::App* plot = app.add_subcommand("plot", "emit an SVG learning curve from a metrics CSV");
    plot->add_option("--log", log_path, "metrics CSV")->required();
    plot->add_option("--out", svg_path, "output SVG")->required();
    plot->add_option("--window", window, "smoothing window");
    plot->add_option("--curve-csv", curve_csv, "also write the smoothed curve CSV");

    CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference check of every training objective");
    gc->add_option("--probes", probes, "probes per network");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        uint64_t* seed_ptr = seed_given ? &seed : nullptr;
        if (pre->parsed()) return run_pretrain(config_path, seed_ptr, out_dir);
        if (train->parsed()) return run_train(config_path, seed_ptr, out_dir, resume);
        if (ev->parsed()) return run_eval(ckpt, domain, episodes, seed, csv_path);
        if (ab->parsed()) return run_ablate(config_path, seed_ptr, out_dir, aug_sel, lr_sel);
        if (plot->parsed()) return run_plot(log_path, svg_path, window, curve_csv);
        if (gc->parsed()) return run_gradcheck(probes);
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return exit_code_for(e);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
