#include "fedgen/config.hpp"

#include "fedgen/error.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cstdio>
#include <functional>
#include <sstream>

namespace fedgen {

namespace {

namespace pt = boost::property_tree;

template <class T>
T parse_number(const std::string& key, const std::string& text) {
    T v{};
    const char* end = text.data() + text.size();
    auto [p, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || p != end) throw ConfigError(key + ": not a valid number: '" + text + "'");
    return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
    if (text == "on" || text == "true" || text == "1" || text == "yes") return true;
    if (text == "off" || text == "false" || text == "0" || text == "no") return false;
    throw ConfigError(key + ": expected on/off, got '" + text + "'");
}

// Shortest text that parses back to the same value of the field's own type.
template <class T>
std::string fmt(T v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

std::string onoff(bool b) { return b ? "on" : "off"; }

std::string cadence_name(Cadence c) { return c == Cadence::per_round ? "per_round" : "per_task"; }

Cadence parse_cadence(const std::string& key, const std::string& v) {
    if (v == "per_round") return Cadence::per_round;
    if (v == "per_task") return Cadence::per_task;
    throw ConfigError(key + ": expected per_round or per_task, got '" + v + "'");
}

struct Field {
    std::string key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&, const std::string&)> set;
};

#define FG_INT(KEY, EXPR)                                                                         \
    Field {                                                                                       \
        KEY, [](const RunConfig& c) { return std::to_string(c.EXPR); },                          \
            [](RunConfig& c, const std::string& k, const std::string& v) {                       \
                c.EXPR = parse_number<std::remove_cvref_t<decltype(c.EXPR)>>(k, v);               \
            }                                                                                     \
    }
#define FG_REAL(KEY, EXPR)                                                                        \
    Field {                                                                                       \
        KEY, [](const RunConfig& c) { return fmt(c.EXPR); },                                     \
            [](RunConfig& c, const std::string& k, const std::string& v) {                       \
                c.EXPR = parse_number<std::remove_cvref_t<decltype(c.EXPR)>>(k, v);               \
            }                                                                                     \
    }
#define FG_BOOL(KEY, EXPR)                                                                        \
    Field {                                                                                       \
        KEY, [](const RunConfig& c) { return onoff(c.EXPR); },                                   \
            [](RunConfig& c, const std::string& k, const std::string& v) { c.EXPR = parse_bool(k, v); } \
    }

const std::vector<Field>& fields() {
    static const std::vector<Field> table = {
        {"run.profile", [](const RunConfig& c) { return c.profile; },
         [](RunConfig& c, const std::string&, const std::string& v) { c.profile = v; }},
        FG_INT("run.seed", seed),
        {"run.output", [](const RunConfig& c) { return c.output; },
         [](RunConfig& c, const std::string&, const std::string& v) { c.output = v; }},
        FG_BOOL("run.plots", plots),

        {"data.bundle", [](const RunConfig& c) { return c.data.bundle; },
         [](RunConfig& c, const std::string&, const std::string& v) { c.data.bundle = v; }},
        FG_INT("data.synth_classes", data.synth_classes),
        FG_INT("data.synth_per_class", data.synth_per_class),
        FG_INT("data.channels", data.synth_shape.channels),
        FG_INT("data.height", data.synth_shape.height),
        FG_INT("data.width", data.synth_shape.width),
        FG_REAL("data.test_fraction", data.test_fraction),

        FG_INT("partition.tasks", num_tasks),
        FG_INT("partition.clients", num_clients),
        FG_REAL("partition.beta", beta),
        FG_BOOL("partition.iid", iid),

        {"federation.method",
         [](const RunConfig& c) {
             return std::string(c.federation.method == Method::dfeddgm ? "dfeddgm" : "fedavg_baseline");
         },
         [](RunConfig& c, const std::string& k, const std::string& v) {
             if (v == "dfeddgm") c.federation.method = Method::dfeddgm;
             else if (v == "fedavg_baseline" || v == "fedavg") c.federation.method = Method::fedavg_baseline;
             else throw ConfigError(k + ": expected dfeddgm or fedavg_baseline, got '" + v + "'");
         }},
        FG_INT("federation.rounds", federation.rounds),
        FG_INT("federation.clients_per_round", federation.clients_per_round),
        FG_BOOL("federation.count_weighted", federation.count_weighted),
        FG_INT("federation.workers", federation.workers),
        FG_INT("federation.wire_bytes_per_param", federation.wire_bytes_per_param),
        FG_INT("federation.head_capacity", federation.head_capacity),

        FG_INT("classifier.conv1", federation.classifier.conv1),
        FG_INT("classifier.conv2", federation.classifier.conv2),
        FG_INT("classifier.feature_dim", federation.classifier.feature_dim),

        FG_INT("local.epochs", federation.local.local_epochs),
        FG_INT("local.batch_size", federation.local.batch_size),
        FG_REAL("local.learning_rate", federation.local.sgd.learning_rate),
        FG_REAL("local.momentum", federation.local.sgd.momentum),
        FG_REAL("local.weight_decay", federation.local.sgd.weight_decay),
        FG_REAL("local.alpha", federation.local.alpha),
        FG_REAL("local.gamma", federation.local.gamma),
        FG_REAL("local.kd_temperature", federation.local.kd_temperature),
        {"local.kd_direction",
         [](const RunConfig& c) {
             return std::string(c.federation.local.kd_direction == KdDirection::student_to_teacher ? "student_to_teacher"
                                                                                                    : "teacher_to_student");
         },
         [](RunConfig& c, const std::string& k, const std::string& v) {
             if (v == "student_to_teacher") c.federation.local.kd_direction = KdDirection::student_to_teacher;
             else if (v == "teacher_to_student") c.federation.local.kd_direction = KdDirection::teacher_to_student;
             else throw ConfigError(k + ": expected student_to_teacher or teacher_to_student, got '" + v + "'");
         }},

        FG_INT("replay.samples", federation.replay.samples),
        FG_REAL("replay.lambda", federation.replay.lambda),
        {"replay.filter_direction",
         [](const RunConfig& c) {
             return std::string(c.federation.replay.direction == FilterDirection::high ? "high" : "low");
         },
         [](RunConfig& c, const std::string& k, const std::string& v) {
             if (v == "high") c.federation.replay.direction = FilterDirection::high;
             else if (v == "low") c.federation.replay.direction = FilterDirection::low;
             else throw ConfigError(k + ": expected high or low, got '" + v + "'");
         }},
        {"replay.cadence", [](const RunConfig& c) { return cadence_name(c.federation.replay_cadence); },
         [](RunConfig& c, const std::string& k, const std::string& v) { c.federation.replay_cadence = parse_cadence(k, v); }},

        FG_INT("diffusion.steps", federation.diffusion_steps),
        FG_INT("diffusion.epochs", federation.diffusion.epochs),
        FG_INT("diffusion.batch_size", federation.diffusion.batch_size),
        FG_REAL("diffusion.learning_rate", federation.diffusion.adam.learning_rate),
        FG_INT("diffusion.base_channels", federation.denoiser.base_channels),
        FG_INT("diffusion.time_embedding", federation.denoiser.time_embedding),
        FG_INT("diffusion.time_hidden", federation.denoiser.time_hidden),
        {"diffusion.cadence", [](const RunConfig& c) { return cadence_name(c.federation.diffusion_cadence); },
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.federation.diffusion_cadence = parse_cadence(k, v);
         }},

        FG_BOOL("ablation.balanced_sampler", federation.ablation.balanced_sampler),
        FG_BOOL("ablation.entropy_filter", federation.ablation.entropy_filter),
        FG_BOOL("ablation.kd_loss", federation.ablation.kd_loss),
        FG_BOOL("ablation.fd_loss", federation.ablation.fd_loss),
    };
    return table;
}

#undef FG_INT
#undef FG_REAL
#undef FG_BOOL

} // namespace

RunConfig paper_profile() {
    RunConfig c;
    c.profile = "paper";
    auto& f = c.federation;
    f.rounds = 100;
    f.local.local_epochs = 5;
    f.local.batch_size = 128;
    f.local.alpha = 3;
    f.local.gamma = 2;
    f.replay.samples = 2000;
    f.replay.lambda = 0.9;
    f.diffusion_steps = 1000;
    f.diffusion.epochs = 200;
    f.diffusion.batch_size = 16;
    f.diffusion.adam.learning_rate = 5e-5;
    f.diffusion_cadence = Cadence::per_round;
    f.replay_cadence = Cadence::per_round;
    return c;
}

RunConfig desk_profile() {
    RunConfig c = paper_profile();
    c.profile = "desk";
    c.output = "runs/desk";
    c.num_clients = 4;
    auto& f = c.federation;
    f.rounds = 10;
    f.local.local_epochs = 3;
    f.local.batch_size = 32;
    f.replay.samples = 200;
    f.diffusion_steps = 200;
    f.diffusion.epochs = 50;
    // At 2 the feature term pins the small network's representation and the
    // KD term has nothing left to do.
    f.local.gamma = 0.1;
    f.diffusion.adam.learning_rate = 1e-3;
    f.diffusion_cadence = Cadence::per_task;
    f.replay_cadence = Cadence::per_task;
    return c;
}

RunConfig profile_by_name(const std::string& name) {
    if (name == "paper") return paper_profile();
    if (name == "desk") return desk_profile();
    throw ConfigError("run.profile: unknown profile '" + name + "' (expected paper or desk)");
}

void apply_setting(RunConfig& config, const std::string& key, const std::string& value) {
    for (const auto& f : fields())
        if (f.key == key) return f.set(config, key, value);
    throw ConfigError(key + ": unknown setting");
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base, bool allow_profile_switch) {
    pt::ptree tree;
    try {
        pt::read_ini(path.string(), tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(std::string("cannot parse config: ") + e.what());
    }
    if (auto p = tree.get_optional<std::string>("run.profile"); p && allow_profile_switch) base = profile_by_name(*p);
    for (const auto& [section, entries] : tree) {
        if (entries.empty() && !entries.data().empty()) throw ConfigError(section + ": settings must live in a section");
        for (const auto& [key, value] : entries) apply_setting(base, section + "." + key, value.data());
    }
    return base;
}

std::string config_to_ini(const RunConfig& config) {
    pt::ptree tree;
    for (const auto& f : fields()) tree.put(pt::ptree::path_type(f.key, '.'), f.get(config));
    std::ostringstream out;
    pt::write_ini(out, tree);
    return out.str();
}

std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    for (const auto& f : fields()) keys.push_back(f.key);
    return keys;
}

void validate(const RunConfig& c) {
    std::vector<std::string> bad;
    auto need = [&](bool ok, const char* key, const char* what) {
        if (!ok) bad.push_back(std::string(key) + ": " + what);
    };
    const auto& f = c.federation;
    need(c.num_tasks >= 1, "partition.tasks", "must be >= 1");
    need(c.num_clients >= 1, "partition.clients", "must be >= 1");
    need(c.iid || c.beta > 0, "partition.beta", "must be > 0 for non-IID partitions");
    need(c.data.test_fraction >= 0 && c.data.test_fraction < 1, "data.test_fraction", "must be in [0, 1)");
    if (c.data.bundle.empty()) {
        need(c.data.synth_classes >= 2, "data.synth_classes", "must be >= 2");
        need(c.data.synth_per_class >= 1, "data.synth_per_class", "must be >= 1");
        need(c.data.synth_classes >= c.num_tasks, "partition.tasks", "cannot exceed the number of classes");
        need(c.data.synth_shape.channels >= 1, "data.channels", "must be >= 1");
        need(c.data.synth_shape.height >= 4 && c.data.synth_shape.height % 4 == 0, "data.height",
             "must be a positive multiple of 4");
        need(c.data.synth_shape.width >= 4 && c.data.synth_shape.width % 4 == 0, "data.width",
             "must be a positive multiple of 4");
    }
    need(f.rounds >= 0, "federation.rounds", "must be >= 0");
    need(f.clients_per_round >= 0 && f.clients_per_round <= c.num_clients, "federation.clients_per_round",
         "must be in [0, partition.clients] (0 = all)");
    need(f.workers >= 1, "federation.workers", "must be >= 1");
    need(f.wire_bytes_per_param >= 1, "federation.wire_bytes_per_param", "must be >= 1");
    need(f.head_capacity >= 0, "federation.head_capacity", "must be >= 0");
    need(f.classifier.conv1 >= 1, "classifier.conv1", "must be >= 1");
    need(f.classifier.conv2 >= 1, "classifier.conv2", "must be >= 1");
    need(f.classifier.feature_dim >= 1, "classifier.feature_dim", "must be >= 1");
    need(f.local.local_epochs >= 0, "local.epochs", "must be >= 0");
    need(f.local.batch_size >= 1, "local.batch_size", "must be >= 1");
    need(f.local.sgd.learning_rate > 0, "local.learning_rate", "must be > 0");
    need(f.local.sgd.momentum >= 0 && f.local.sgd.momentum < 1, "local.momentum", "must be in [0, 1)");
    need(f.local.sgd.weight_decay >= 0, "local.weight_decay", "must be >= 0");
    need(f.local.alpha >= 0, "local.alpha", "must be >= 0");
    need(f.local.gamma >= 0, "local.gamma", "must be >= 0");
    need(f.local.kd_temperature > 0, "local.kd_temperature", "must be > 0");
    need(f.replay.samples >= 0, "replay.samples", "must be >= 0");
    need(f.replay.lambda > 0 && f.replay.lambda <= 1, "replay.lambda", "must be in (0, 1]");
    need(f.diffusion_steps >= 1, "diffusion.steps", "must be >= 1");
    need(f.diffusion.epochs >= 0, "diffusion.epochs", "must be >= 0");
    need(f.diffusion.batch_size >= 1, "diffusion.batch_size", "must be >= 1");
    need(f.diffusion.adam.learning_rate > 0, "diffusion.learning_rate", "must be > 0");
    need(f.denoiser.base_channels >= 1, "diffusion.base_channels", "must be >= 1");
    need(f.denoiser.time_embedding >= 2 && f.denoiser.time_embedding % 2 == 0, "diffusion.time_embedding",
         "must be even and >= 2");
    need(f.denoiser.time_hidden >= 1, "diffusion.time_hidden", "must be >= 1");
    if (bad.empty()) return;
    std::string msg = "invalid configuration:";
    for (const auto& b : bad) msg += "\n  " + b;
    throw ConfigError(msg);
}

RunSeeds derive_run_seeds(std::uint64_t master) {
    return {derive_seed(master, {1}), derive_seed(master, {2}), derive_seed(master, {3}), derive_seed(master, {4})};
}

} // namespace fedgen
