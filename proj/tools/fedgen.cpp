// fedgen: run experiments, convert IDX data, recompute reports.

#include "fedgen/config.hpp"
#include "fedgen/error.hpp"
#include "fedgen/run_io.hpp"
#include "fedgen/runtime.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>

namespace fs = std::filesystem;
using namespace fedgen;

namespace {

fs::path resolve_output(const std::string& out) {
    fs::path p(out);
    if (p.is_absolute()) return p;
    if (const char* root = std::getenv("FEDGEN_OUT"); root && *root) return fs::path(root) / p;
    return p;
}

std::pair<std::string, std::string> split_kv(const std::string& s, const std::string& flag) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError(flag + ": expected key=value, got '" + s + "'");
    return {s.substr(0, eq), s.substr(eq + 1)};
}

struct RunArgs {
    std::string config_path;
    std::string profile;
    std::string method;
    std::vector<std::string> ablate;
    std::vector<std::string> set;
    std::optional<std::uint64_t> seed;
    std::string out;
    bool no_plots = false;
    int workers = 0;
};

int cmd_run(const RunArgs& a) {
    // --profile takes precedence over a profile named inside the config file.
    RunConfig cfg = a.profile.empty() ? paper_profile() : profile_by_name(a.profile);
    if (!a.config_path.empty()) cfg = load_config(a.config_path, cfg, a.profile.empty());
    if (!a.profile.empty()) cfg.profile = a.profile;
    if (!a.method.empty()) apply_setting(cfg, "federation.method", a.method);
    for (const auto& s : a.ablate) {
        const auto [name, value] = split_kv(s, "--ablate");
        apply_setting(cfg, "ablation." + name, value);
    }
    for (const auto& s : a.set) {
        const auto [key, value] = split_kv(s, "--set");
        apply_setting(cfg, key, value);
    }
    if (a.seed) cfg.seed = *a.seed;
    if (!a.out.empty()) cfg.output = a.out;
    if (a.no_plots) cfg.plots = false;
    if (a.workers > 0) cfg.federation.workers = a.workers;
    validate(cfg);

    const fs::path dir = resolve_output(cfg.output);
    std::cout << "run: profile=" << cfg.profile << " method="
              << (cfg.federation.method == Method::dfeddgm ? "dfeddgm" : "fedavg_baseline") << " seed=" << cfg.seed
              << " -> " << dir.string() << std::endl;
    const RunResult r = execute_run(cfg, dir);
    std::printf("Acc=%.4f", average_accuracy(r.accuracy));
    if (r.accuracy.num_tasks >= 2) std::printf(" F=%.4f", average_forgetting(r.accuracy));
    std::printf(" comm_bytes=%llu\n", static_cast<unsigned long long>(r.ledger.total()));
    return 0;
}

int cmd_convert(const std::string& images, const std::string& labels, const std::string& out, int offset) {
    const Dataset d = read_idx(images, labels, offset);
    write_bundle(d, out);
    std::cout << "wrote " << d.size() << " examples (" << d.shape.channels << "x" << d.shape.height << "x"
              << d.shape.width << ", " << d.num_classes << " classes) to " << out << "\n";
    for (const auto& [c, n] : d.class_histogram()) std::cout << "  class " << c << ": " << n << "\n";
    return 0;
}

int cmd_report(const std::vector<std::string>& dirs, bool plots, const std::string& ablation_plot) {
    int status = 0;
    std::vector<std::pair<std::string, Report>> all;
    for (const auto& d : dirs) {
        const fs::path dir = resolve_output(d);
        const Report r = report_run(dir, plots);
        std::printf("%s: Acc=%.6f", dir.string().c_str(), r.acc);
        if (r.forgetting) std::printf(" F=%.6f", *r.forgetting);
        if (!r.summary_present) {
            std::printf(" (no summary.json)\n");
        } else if (r.matches_summary) {
            std::printf(" (matches summary.json)\n");
        } else {
            std::printf(" MISMATCH with summary.json\n");
            status = 1;
        }
        all.emplace_back(dir.filename().string(), r);
    }
    if (!ablation_plot.empty() || (plots && all.size() > 1)) {
        const fs::path out = ablation_plot.empty() ? fs::path("ablation.svg") : resolve_output(ablation_plot);
        std::ofstream(out) << ablation_svg(all);
        std::cout << "ablation plot: " << out.string() << "\n";
    }
    return status;
}

} // namespace

int main(int argc, char** argv) {
    tune_allocator();
    CLI::App app{"Federated class-incremental learning with diffusion replay"};
    app.require_subcommand(1);

    RunArgs ra;
    auto* run = app.add_subcommand("run", "run one experiment");
    run->add_option("-c,--config", ra.config_path, "INI config file")->check(CLI::ExistingFile);
    run->add_option("--profile", ra.profile, "base profile: paper or desk");
    run->add_option("--method", ra.method, "dfeddgm or fedavg_baseline");
    run->add_option("--ablate", ra.ablate, "component=off (balanced_sampler, entropy_filter, kd_loss, fd_loss)");
    run->add_option("--set", ra.set, "section.key=value override");
    run->add_option("--seed", ra.seed, "master seed");
    run->add_option("-o,--out", ra.out, "output directory (relative paths go under $FEDGEN_OUT)");
    run->add_option("--workers", ra.workers, "parallel client workers");
    run->add_flag("--no-plots", ra.no_plots, "skip SVG/PGM output");

    std::string images, labels, bundle;
    int offset = 0;
    auto* convert = app.add_subcommand("convert", "convert an IDX image/label pair into a bundle");
    convert->add_option("images", images, "IDX image file")->required()->check(CLI::ExistingFile);
    convert->add_option("labels", labels, "IDX label file")->required()->check(CLI::ExistingFile);
    convert->add_option("out", bundle, "output bundle")->required();
    convert->add_option("--label-offset", offset, "subtract from every label (EMNIST letters: 1)");

    std::vector<std::string> dirs;
    bool no_plots = false;
    std::string ablation_plot;
    auto* report = app.add_subcommand("report", "recompute Acc/F from run directories and render plots");
    report->add_option("dirs", dirs, "run directories")->required();
    report->add_flag("--no-plots", no_plots, "skip plots");
    report->add_option("--ablation-plot", ablation_plot, "bar chart across the given runs");

    CLI11_PARSE(app, argc, argv);
    try {
        if (*run) return cmd_run(ra);
        if (*convert) return cmd_convert(images, labels, bundle, offset);
        if (*report) return cmd_report(dirs, !no_plots, ablation_plot);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
