#include "fedgen/run_io.hpp"

#include "fedgen/error.hpp"
#include "fedgen/params.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace fedgen {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
    if (!out) throw Error("write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string fmt17(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::int64_t parse_int(const std::string& s) {
    std::size_t pos = 0;
    const long long v = std::stoll(s, &pos);
    if (pos != s.size()) throw FormatError("metrics.csv: bad integer '" + s + "'");
    return v;
}

// "0.875" -> 875/1000, exactly.
HitCount parse_decimal(const std::string& s) {
    const auto dot = s.find('.');
    std::string digits = s;
    std::int64_t scale = 1;
    if (dot != std::string::npos) {
        digits = s.substr(0, dot) + s.substr(dot + 1);
        for (std::size_t i = dot + 1; i < s.size(); ++i) scale *= 10;
    }
    if (digits.empty() || digits.size() > 15 || !std::all_of(digits.begin(), digits.end(), ::isdigit))
        throw FormatError("metrics.csv: bad accuracy '" + s + "'");
    return {parse_int(digits), scale};
}

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(line);
    while (std::getline(in, cur, sep)) out.push_back(cur);
    if (!line.empty() && line.back() == sep) out.emplace_back();
    return out;
}

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

} // namespace

PreparedData prepare_data(const RunConfig& config) {
    validate(config);
    const RunSeeds seeds = derive_run_seeds(config.seed);
    PreparedData p;
    if (config.data.bundle.empty())
        p.raw = synth_dataset(config.data.synth_classes, config.data.synth_per_class, config.data.synth_shape, seeds.data);
    else
        p.raw = ingest_bundle(config.data.bundle);
    PartitionConfig part;
    part.beta = config.beta;
    part.iid = config.iid;
    part.num_clients = config.num_clients;
    part.seed = seeds.partition;
    part.test_fraction = config.data.test_fraction;
    p.schedule = build_schedule(p.raw, config.num_tasks, part, seeds.class_order);
    p.slots = to_slot_labels(p.raw, p.schedule);
    return p;
}

std::string metrics_csv(const AccuracyRecord& record) {
    std::ostringstream out;
    out << "step,scope,hits,total,accuracy\n";
    for (std::size_t l = 0; l < record.steps.size(); ++l) {
        const auto& row = record.steps[l];
        for (std::size_t t = 0; t < row.per_task.size(); ++t)
            out << l + 1 << ',' << t + 1 << ',' << row.per_task[t].hits << ',' << row.per_task[t].total << ','
                << fmt17(row.per_task[t].value()) << '\n';
        out << l + 1 << ",all," << row.observed.hits << ',' << row.observed.total << ',' << fmt17(row.observed.value())
            << '\n';
    }
    return out.str();
}

AccuracyRecord parse_metrics_csv(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string line;
    if (!std::getline(in, line) || line.rfind("step,scope", 0) != 0) throw FormatError("metrics.csv: missing header");
    std::map<int, StepAccuracy> steps;
    std::map<int, std::map<int, HitCount>> cells;
    std::map<int, bool> has_observed;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto f = split(line, ',');
        if (f.size() != 5) throw FormatError("metrics.csv: expected 5 fields in '" + line + "'");
        const int step = static_cast<int>(parse_int(f[0]));
        HitCount h = (!f[2].empty() && !f[3].empty()) ? HitCount{parse_int(f[2]), parse_int(f[3])} : parse_decimal(f[4]);
        if (step < 1 || h.total <= 0 || h.hits < 0 || h.hits > h.total) throw FormatError("metrics.csv: bad row '" + line + "'");
        if (f[1] == "all") {
            steps[step].observed = h;
            has_observed[step] = true;
        } else {
            cells[step][static_cast<int>(parse_int(f[1]))] = h;
        }
    }
    AccuracyRecord record;
    record.num_tasks = static_cast<int>(steps.size());
    int expect = 1;
    for (auto& [step, row] : steps) {
        if (step != expect++) throw FormatError("metrics.csv: steps are not contiguous from 1");
        const auto& c = cells[step];
        for (int t = 1; t <= step; ++t) {
            auto it = c.find(t);
            if (it == c.end()) throw FormatError("metrics.csv: step " + std::to_string(step) + " lacks task " + std::to_string(t));
            row.per_task.push_back(it->second);
        }
        if (static_cast<int>(c.size()) != step) throw FormatError("metrics.csv: unexpected task column");
        record.add(row);
    }
    if (cells.size() != steps.size()) throw FormatError("metrics.csv: per-task rows without a pooled row");
    return record;
}

std::string round_json(const RoundRecord& r) {
    json j;
    j["task"] = r.task + 1;
    j["round"] = r.round + 1;
    j["selected"] = r.selected;
    j["bytes_up"] = r.bytes_up;
    j["bytes_down"] = r.bytes_down;
    json clients = json::array();
    for (const auto& c : r.clients) {
        clients.push_back({{"client", c.client},
                           {"real_samples", c.real_samples},
                           {"replay_generated", c.replay_generated},
                           {"replay_retained", c.replay_retained},
                           {"filter_enabled", c.filter_enabled},
                           {"skipped", c.skipped},
                           {"ce", c.last_epoch.ce},
                           {"kd", c.last_epoch.kd},
                           {"fd", c.last_epoch.fd},
                           {"total", c.last_epoch.total},
                           {"diffusion_steps", c.diffusion_steps},
                           {"diffusion_loss", c.diffusion_loss}});
    }
    j["clients"] = std::move(clients);
    return j.dump();
}

std::string summary_json(const RunConfig& config, const RunResult& result) {
    const auto& rec = result.accuracy;
    std::optional<double> f;
    std::vector<double> per_task_f;
    if (rec.num_tasks >= 2) {
        f = average_forgetting(rec);
        per_task_f = forgetting_per_task(rec);
    }
    std::vector<double> observed;
    for (const auto& s : rec.steps) observed.push_back(s.observed.value());
    json j;
    j["Acc"] = average_accuracy(rec);
    j["F"] = optional_number(f);
    j["method"] = config.federation.method == Method::dfeddgm ? "dfeddgm" : "fedavg_baseline";
    j["profile"] = config.profile;
    j["seed"] = config.seed;
    j["num_tasks"] = rec.num_tasks;
    j["observed_accuracy"] = observed;
    j["forgetting_per_task"] = per_task_f;
    j["comm_bytes_total"] = result.ledger.total();
    j["rounds_logged"] = result.rounds.size();
    return j.dump(2) + "\n";
}

RunResult execute_run(const RunConfig& config, const fs::path& dir) {
    validate(config);
    fs::create_directories(dir / "checkpoints");
    if (config.plots) fs::create_directories(dir / "plots");
    write_text(dir / "config.snapshot", config_to_ini(config));
    fs::remove(dir / "error.json");

    std::ofstream rounds(dir / "rounds.jsonl", std::ios::binary | std::ios::trunc);
    if (!rounds) throw Error("cannot write rounds.jsonl");
    int task = -1;
    try {
        const PreparedData data = prepare_data(config);
        FederationConfig fc = config.federation;
        fc.classifier.input = data.slots.shape;
        fc.seed = derive_run_seeds(config.seed).federation;
        Federation fed(data.slots, data.schedule, fc);
        for (task = 0; task < data.schedule.num_tasks; ++task) {
            fed.run_task(task, [&](const RoundRecord& r) { rounds << round_json(r) << '\n' << std::flush; });
            write_text(dir / "metrics.csv", metrics_csv(fed.result().accuracy));
            save_checkpoint(fed.global_model().params(), dir / "checkpoints" / ("global_task" + std::to_string(task + 1) + ".fgck"));
            if (config.plots && task < static_cast<int>(fed.result().sample_grids.size()))
                write_image_grid(fed.result().sample_grids[static_cast<std::size_t>(task)], data.slots.shape, 4,
                                 dir / "plots" / ("samples_task" + std::to_string(task + 1) + (data.slots.shape.channels == 3 ? ".ppm" : ".pgm")));
        }
        const auto& diffusion = fed.diffusion_models();
        for (std::size_t i = 0; i < diffusion.size(); ++i)
            save_checkpoint(diffusion[i].denoiser.params(), dir / "checkpoints" / ("diffusion_client" + std::to_string(i) + ".fgck"));
        RunResult result = fed.take_result();
        save_checkpoint(result.model.params(), dir / "checkpoints" / "global_final.fgck");
        write_text(dir / "summary.json", summary_json(config, result));
        if (config.plots) write_text(dir / "plots" / "accuracy.svg", accuracy_svg(result.accuracy, config.profile + " / " +
                                                                                    (fc.method == Method::dfeddgm ? "dfeddgm" : "fedavg_baseline")));
        return result;
    } catch (const std::exception& e) {
        json err{{"error", e.what()}, {"task", task >= 0 ? json(task + 1) : json(nullptr)}};
        write_text(dir / "error.json", err.dump(2) + "\n");
        throw;
    }
}

Report report_run(const fs::path& dir, bool render_plots) {
    if (!fs::is_directory(dir)) throw Error("not a run directory: " + dir.string());
    if (!fs::exists(dir / "metrics.csv")) throw Error("missing metrics.csv in " + dir.string());
    const AccuracyRecord rec = parse_metrics_csv(read_text(dir / "metrics.csv"));
    if (rec.num_tasks == 0) throw FormatError("metrics.csv has no rows");
    Report r;
    r.acc = average_accuracy(rec);
    if (rec.num_tasks >= 2) r.forgetting = average_forgetting(rec);
    if (fs::exists(dir / "summary.json")) {
        r.summary_present = true;
        const json s = json::parse(read_text(dir / "summary.json"));
        const bool f_ok = r.forgetting ? (s.at("F").is_number() && s.at("F").get<double>() == *r.forgetting) : s.at("F").is_null();
        r.matches_summary = s.at("Acc").get<double>() == r.acc && f_ok;
    }
    if (render_plots) {
        fs::create_directories(dir / "plots");
        write_text(dir / "plots" / "accuracy.svg", accuracy_svg(rec, dir.filename().string()));
    }
    return r;
}

namespace {

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

std::string svg_header(int w, int h) {
    return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(w) + "\" height=\"" +
           std::to_string(h) + "\" font-family=\"sans-serif\" font-size=\"11\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
}

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

} // namespace

std::string accuracy_svg(const AccuracyRecord& rec, const std::string& title) {
    const int w = 480, h = 320, left = 50, right = 110, top = 30, bottom = 40;
    const double pw = w - left - right, ph = h - top - bottom;
    const int n = std::max(rec.num_tasks, 1);
    auto x = [&](int step) { return left + (n == 1 ? pw / 2 : pw * step / (n - 1)); };
    auto y = [&](double acc) { return top + ph * (1 - acc); };
    std::string s = svg_header(w, h);
    s += "<text x=\"" + std::to_string(left) + "\" y=\"18\">" + title + "</text>\n";
    for (int k = 0; k <= 4; ++k) {
        const double v = k / 4.0;
        s += "<line x1=\"" + num(left) + "\" x2=\"" + num(left + pw) + "\" y1=\"" + num(y(v)) + "\" y2=\"" + num(y(v)) +
             "\" stroke=\"#ddd\"/>\n<text x=\"" + num(left - 30) + "\" y=\"" + num(y(v) + 4) + "\">" + num(v) + "</text>\n";
    }
    for (int l = 0; l < n; ++l)
        s += "<text x=\"" + num(x(l) - 8) + "\" y=\"" + num(top + ph + 18) + "\">T" + std::to_string(l + 1) + "</text>\n";
    auto line = [&](const std::vector<std::pair<int, double>>& pts, const std::string& color, const std::string& label,
                    int legend_row, double width) {
        std::string d;
        for (const auto& [l, v] : pts) d += (d.empty() ? "M" : " L") + num(x(l)) + "," + num(y(v));
        s += "<path d=\"" + d + "\" fill=\"none\" stroke=\"" + color + "\" stroke-width=\"" + num(width) + "\"/>\n";
        for (const auto& [l, v] : pts) s += "<circle cx=\"" + num(x(l)) + "\" cy=\"" + num(y(v)) + "\" r=\"2.5\" fill=\"" + color + "\"/>\n";
        const double ly = top + 14.0 * legend_row;
        s += "<rect x=\"" + num(w - right + 10) + "\" y=\"" + num(ly) + "\" width=\"10\" height=\"10\" fill=\"" + color +
             "\"/><text x=\"" + num(w - right + 25) + "\" y=\"" + num(ly + 9) + "\">" + label + "</text>\n";
    };
    std::vector<std::pair<int, double>> pooled;
    for (int l = 0; l < static_cast<int>(rec.steps.size()); ++l) pooled.emplace_back(l, rec.steps[l].observed.value());
    line(pooled, "#000", "observed", 0, 2.5);
    for (int t = 0; t < static_cast<int>(rec.steps.size()); ++t) {
        std::vector<std::pair<int, double>> pts;
        for (int l = t; l < static_cast<int>(rec.steps.size()); ++l) pts.emplace_back(l, rec.acc(t, l));
        line(pts, kPalette[t % 8], "task " + std::to_string(t + 1), t + 1, 1.2);
    }
    return s + "</svg>\n";
}

std::string ablation_svg(const std::vector<std::pair<std::string, Report>>& runs) {
    const int group = 70, left = 50, top = 30, ph = 200;
    const int w = left + group * static_cast<int>(std::max<std::size_t>(runs.size(), 1)) + 120, h = top + ph + 60;
    std::string s = svg_header(w, h);
    auto y = [&](double v) { return top + ph * (1 - v); };
    for (int k = 0; k <= 4; ++k) {
        const double v = k / 4.0;
        s += "<line x1=\"" + num(left) + "\" x2=\"" + num(w - 120) + "\" y1=\"" + num(y(v)) + "\" y2=\"" + num(y(v)) +
             "\" stroke=\"#ddd\"/>\n<text x=\"" + num(left - 30) + "\" y=\"" + num(y(v) + 4) + "\">" + num(v) + "</text>\n";
    }
    for (std::size_t i = 0; i < runs.size(); ++i) {
        const double gx = left + group * static_cast<double>(i) + 10;
        const auto& r = runs[i].second;
        s += "<rect x=\"" + num(gx) + "\" y=\"" + num(y(r.acc)) + "\" width=\"22\" height=\"" + num(ph * r.acc) +
             "\" fill=\"" + kPalette[0] + "\"/>\n";
        const double f = r.forgetting.value_or(0);
        s += "<rect x=\"" + num(gx + 24) + "\" y=\"" + num(y(f)) + "\" width=\"22\" height=\"" + num(ph * f) +
             "\" fill=\"" + kPalette[1] + "\"/>\n";
        s += "<text x=\"" + num(gx) + "\" y=\"" + num(top + ph + 16) + "\">" + runs[i].first.substr(0, 10) + "</text>\n";
    }
    s += "<rect x=\"" + num(w - 110) + "\" y=\"" + num(top) + "\" width=\"10\" height=\"10\" fill=\"" + kPalette[0] +
         "\"/><text x=\"" + num(w - 95) + "\" y=\"" + num(top + 9) + "\">Acc</text>\n";
    s += "<rect x=\"" + num(w - 110) + "\" y=\"" + num(top + 14) + "\" width=\"10\" height=\"10\" fill=\"" + kPalette[1] +
         "\"/><text x=\"" + num(w - 95) + "\" y=\"" + num(top + 23) + "\">F</text>\n";
    return s + "</svg>\n";
}

void write_image_grid(const nn::Act& images, ImageShape shape, int columns, const fs::path& path) {
    const int hw = shape.pixels();
    const int n = hw ? static_cast<int>(images.cols() / hw) : 0;
    if (n == 0) return;
    const int cols = std::max(1, std::min(columns, n));
    const int rows = (n + cols - 1) / cols;
    const bool colour = shape.channels == 3;
    const int W = cols * (shape.width + 1) + 1, H = rows * (shape.height + 1) + 1;
    const int depth = colour ? 3 : 1;
    std::string pix(static_cast<std::size_t>(W) * H * depth, static_cast<char>(64));
    for (int s = 0; s < n; ++s) {
        const int ox = 1 + (s % cols) * (shape.width + 1), oy = 1 + (s / cols) * (shape.height + 1);
        for (int yy = 0; yy < shape.height; ++yy)
            for (int xx = 0; xx < shape.width; ++xx)
                for (int c = 0; c < depth; ++c) {
                    const double v = std::clamp<double>(images(c, static_cast<Eigen::Index>(s) * hw + yy * shape.width + xx), 0, 1);
                    pix[(static_cast<std::size_t>(oy + yy) * W + ox + xx) * depth + c] = static_cast<char>(std::lround(v * 255));
                }
    }
    write_text(path, std::string(colour ? "P6\n" : "P5\n") + std::to_string(W) + " " + std::to_string(H) + "\n255\n" + pix);
}

} // namespace fedgen
