#include "fedgen/federation.hpp"

#include "fedgen/error.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <numeric>
#include <thread>

namespace fedgen {

namespace {

// Seed-stream tags.
enum : std::uint64_t {
    kInit = 1,
    kHead,
    kSelect,
    kClient,
    kReplay,
    kDiffusion,
    kDiffusionInit,
    kGrid,
};

template <class F>
void parallel_for(int n, int workers, F&& fn) {
    if (workers <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
    std::vector<std::jthread> pool;
    for (int w = 0; w < std::min(workers, n); ++w)
        pool.emplace_back([&] {
            for (int i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    errors[static_cast<std::size_t>(i)] = std::current_exception();
                }
            }
        });
    pool.clear();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

[[noreturn]] void rethrow_with_context(const std::string& where) {
    try {
        throw;
    } catch (const FormatError& e) {
        throw FormatError(where + ": " + e.what());
    } catch (const CorruptionError& e) {
        throw CorruptionError(where + ": " + e.what());
    } catch (const ConfigError& e) {
        throw ConfigError(where + ": " + e.what());
    } catch (const ShapeError& e) {
        throw ShapeError(where + ": " + e.what());
    } catch (const IntegrityError& e) {
        throw IntegrityError(where + ": " + e.what());
    } catch (const NumericError& e) {
        throw NumericError(where + ": " + e.what());
    } catch (const Error& e) {
        throw Error(where + ": " + e.what());
    }
}

std::string where(int task, int round, int client = -1) {
    std::string s = "task " + std::to_string(task + 1) + " round " + std::to_string(round + 1);
    if (client >= 0) s += " client " + std::to_string(client);
    return s;
}

} // namespace

RoundPlan plan_round(int task, int round, int num_clients, int clients_per_round, std::uint64_t seed) {
    if (num_clients < 1) throw ConfigError("no clients to select from");
    const int m = clients_per_round == 0 ? num_clients : clients_per_round;
    if (m < 1 || m > num_clients) throw ConfigError("clients_per_round must be in [1, N]");
    RoundPlan plan{task, round, {}, {}};
    std::vector<int> ids(static_cast<std::size_t>(num_clients));
    std::iota(ids.begin(), ids.end(), 0);
    if (m < num_clients) {
        Rng rng(derive_seed(seed, {kSelect, static_cast<std::uint64_t>(task), static_cast<std::uint64_t>(round)}));
        std::shuffle(ids.begin(), ids.end(), rng);
        ids.resize(static_cast<std::size_t>(m));
        std::sort(ids.begin(), ids.end());
    }
    plan.selected = ids;
    for (int c : ids)
        plan.seeds.push_back(derive_seed(seed, {kClient, static_cast<std::uint64_t>(task),
                                                static_cast<std::uint64_t>(round), static_cast<std::uint64_t>(c)}));
    return plan;
}

void CommLedger::record_round(int task, int round, int clients, std::size_t model_params, int bytes_per_param) {
    const std::uint64_t model_bytes = static_cast<std::uint64_t>(model_params) * static_cast<std::uint64_t>(bytes_per_param);
    Entry e{task, round, clients, model_bytes * static_cast<std::uint64_t>(clients),
            model_bytes * static_cast<std::uint64_t>(clients)};
    total_ += e.bytes_up + e.bytes_down;
    entries_.push_back(e);
}

Dataset to_slot_labels(const Dataset& data, const TaskSchedule& schedule) {
    Dataset out = data;
    for (auto& ex : out.examples) {
        if (ex.label < 0 || ex.label >= static_cast<int>(schedule.class_slot.size()))
            throw IntegrityError("label has no output slot");
        ex.label = schedule.class_slot[static_cast<std::size_t>(ex.label)];
    }
    return out;
}

Federation::Federation(const Dataset& data, const TaskSchedule& schedule, FederationConfig config)
    : data_(data), schedule_(schedule), config_(std::move(config)) {
    if (config_.rounds < 0) throw ConfigError("rounds must be >= 0");
    if (config_.wire_bytes_per_param < 1) throw ConfigError("wire_bytes_per_param must be >= 1");
    if (!(config_.classifier.input == data.shape)) throw ShapeError("classifier input does not match the data");
    plan_round(0, 0, schedule.num_clients, config_.clients_per_round, config_.seed); // validates m

    global_ = Classifier(config_.classifier, std::max(0, config_.head_capacity), derive_seed(config_.seed, {kInit}));
    result_.accuracy.num_tasks = schedule.num_tasks;

    if (config_.method == Method::dfeddgm) {
        config_.denoiser.image = data.shape;
        const auto noise = NoiseSchedule::linear(config_.diffusion_steps);
        for (int i = 0; i < schedule.num_clients; ++i)
            diffusion_prev_.push_back(DiffusionModel::create(
                config_.denoiser, noise, derive_seed(config_.seed, {kDiffusionInit, static_cast<std::uint64_t>(i)})));
        diffusion_cur_ = diffusion_prev_;
        config_.diffusion.balanced_sampler = config_.ablation.balanced_sampler;
    }
    replay_cache_.resize(static_cast<std::size_t>(schedule.num_clients));
}

LossConfig Federation::effective_loss() const {
    LossConfig loss = config_.local;
    if (config_.method == Method::fedavg_baseline || !config_.ablation.kd_loss) loss.alpha = 0;
    if (config_.method == Method::fedavg_baseline || !config_.ablation.fd_loss) loss.gamma = 0;
    return loss;
}

Federation::Replay Federation::make_replay(int client, std::uint64_t seed) const {
    ReplayConfig rc = config_.replay;
    rc.filter = config_.ablation.entropy_filter;
    const ReplayBatch batch = build_replay(diffusion_prev_[static_cast<std::size_t>(client)], *teacher_, rc, seed);
    return {replay_as_dataset(batch, data_.num_classes), batch.generated(), batch.retained_count()};
}

DiffusionTrainReport Federation::train_diffusion(int client, int task, std::uint64_t seed) {
    const auto& shard = schedule_.shard(client, task);
    if (shard.empty() || config_.diffusion.epochs <= 0) return {};
    return train_epochs(diffusion_cur_[static_cast<std::size_t>(client)], data_, shard, config_.diffusion, seed);
}

std::uint64_t Federation::frozen_fingerprint() const {
    std::uint64_t h = teacher_ ? teacher_->params().fingerprint() : 0;
    for (const auto& d : diffusion_prev_) h = derive_seed(h, {d.denoiser.params().fingerprint()});
    return h;
}

StepAccuracy Federation::run_task(int task, const std::function<void(const RoundRecord&)>& on_round) {
    if (task != next_task_ || task >= schedule_.num_tasks) throw ConfigError("tasks must be run in order");
    const int n_clients = schedule_.num_clients;
    const bool generative = config_.method == Method::dfeddgm;
    const bool replay_on = generative && teacher_.has_value();
    const auto t64 = static_cast<std::uint64_t>(task);

    global_.expand_head(std::max(global_.current_classes(), schedule_.classes_through(task)),
                        derive_seed(config_.seed, {kHead, t64}));

    if (generative) {
        diffusion_cur_ = diffusion_prev_; // warm start from the previous task
        if (config_.diffusion_cadence == Cadence::per_task) {
            std::vector<DiffusionTrainReport> reports(static_cast<std::size_t>(n_clients));
            parallel_for(n_clients, config_.workers, [&](int i) {
                try {
                    reports[static_cast<std::size_t>(i)] =
                        train_diffusion(i, task, derive_seed(config_.seed, {kDiffusion, t64, static_cast<std::uint64_t>(i)}));
                } catch (const Error&) {
                    rethrow_with_context("task " + std::to_string(task + 1) + " client " + std::to_string(i) + " diffusion");
                }
            });
            for (int i = 0; i < n_clients; ++i) {
                const auto& l = reports[static_cast<std::size_t>(i)].step_losses;
                if (l.empty()) continue;
                result_.diffusion_tasks.push_back(
                    {task, i, static_cast<int>(l.size()), std::accumulate(l.begin(), l.end(), 0.0) / static_cast<double>(l.size())});
            }
        }
        for (auto& r : replay_cache_) r.reset();
        if (replay_on && config_.replay_cadence == Cadence::per_task) {
            parallel_for(n_clients, config_.workers, [&](int i) {
                replay_cache_[static_cast<std::size_t>(i)] =
                    make_replay(i, derive_seed(config_.seed, {kReplay, t64, static_cast<std::uint64_t>(i)}));
            });
        }
    }
    const LossConfig loss = effective_loss();

    for (int r = 0; r < config_.rounds; ++r) {
        const RoundPlan plan = plan_round(task, r, n_clients, config_.clients_per_round, config_.seed);
        const std::uint64_t frozen_before = frozen_fingerprint();
        const Classifier dispatched = global_;
        const int m = static_cast<int>(plan.selected.size());
        std::vector<Classifier> locals(static_cast<std::size_t>(m), dispatched);
        std::vector<ClientRoundLog> logs(static_cast<std::size_t>(m));
        std::vector<LossReport> reports(static_cast<std::size_t>(m));

        parallel_for(m, config_.workers, [&](int k) {
            const int i = plan.selected[static_cast<std::size_t>(k)];
            const auto seed = plan.seeds[static_cast<std::size_t>(k)];
            try {
                auto& log = logs[static_cast<std::size_t>(k)];
                log.client = i;
                const auto& shard = schedule_.shard(i, task);
                log.real_samples = shard.size();
                log.filter_enabled = replay_on && config_.ablation.entropy_filter;

                std::optional<Replay> fresh;
                const Replay* replay = nullptr;
                if (replay_on) {
                    if (config_.replay_cadence == Cadence::per_task) {
                        replay = &*replay_cache_[static_cast<std::size_t>(i)];
                    } else {
                        fresh = make_replay(i, derive_seed(seed, {kReplay}));
                        replay = &*fresh;
                    }
                    log.replay_generated = replay->generated;
                    log.replay_retained = replay->retained;
                }
                auto& rep = reports[static_cast<std::size_t>(k)];
                rep = client_update(locals[static_cast<std::size_t>(k)], data_, shard, replay ? &replay->data : nullptr,
                                    replay_on ? &*teacher_ : nullptr, loss, seed);
                log.skipped = rep.skipped;
                if (!rep.epochs.empty()) log.last_epoch = rep.epochs.back();

                if (generative && config_.diffusion_cadence == Cadence::per_round) {
                    const auto d = train_diffusion(i, task, derive_seed(seed, {kDiffusion}));
                    log.diffusion_steps = static_cast<int>(d.step_losses.size());
                    if (!d.step_losses.empty())
                        log.diffusion_loss = std::accumulate(d.step_losses.begin(), d.step_losses.end(), 0.0) /
                                             static_cast<double>(d.step_losses.size());
                }
            } catch (const Error&) {
                rethrow_with_context(where(task, r, i));
            }
        });

        std::vector<double> weights(static_cast<std::size_t>(m), 1.0);
        if (config_.count_weighted) {
            double total = 0;
            for (int k = 0; k < m; ++k) total += weights[static_cast<std::size_t>(k)] = static_cast<double>(logs[static_cast<std::size_t>(k)].real_samples);
            if (total == 0) std::fill(weights.begin(), weights.end(), 1.0);
        }
        global_ = aggregate(locals, weights);

        if (frozen_fingerprint() != frozen_before)
            throw IntegrityError(where(task, r) + ": a frozen teacher or diffusion snapshot was modified");

        result_.ledger.record_round(task, r, m, dispatched.params().scalar_count(), config_.wire_bytes_per_param);
        const auto& entry = result_.ledger.entries().back();
        RoundRecord rec{task, r, plan.selected, std::move(logs), entry.bytes_up, entry.bytes_down};
        for (auto& rep : reports) result_.loss_steps.insert(result_.loss_steps.end(), rep.steps.begin(), rep.steps.end());
        if (on_round) on_round(rec);
        result_.rounds.push_back(std::move(rec));
    }

    StepAccuracy acc = evaluate_step(global_, data_, schedule_, task);
    result_.accuracy.add(acc);

    if (generative) {
        teacher_ = global_;
        diffusion_prev_ = diffusion_cur_;
        int best = 0;
        for (int i = 1; i < n_clients; ++i)
            if (schedule_.shard(i, task).size() > schedule_.shard(best, task).size()) best = i;
        result_.sample_grids.push_back(
            sample(diffusion_prev_[static_cast<std::size_t>(best)], 16, derive_seed(config_.seed, {kGrid, t64})));
    }
    ++next_task_;
    return acc;
}

RunResult Federation::take_result() {
    result_.model = global_;
    return std::move(result_);
}

RunResult run_experiment(const Dataset& data, const TaskSchedule& schedule, const FederationConfig& config,
                         const std::function<void(const RoundRecord&)>& on_round) {
    Federation fed(data, schedule, config);
    for (int t = 0; t < schedule.num_tasks; ++t) fed.run_task(t, on_round);
    return fed.take_result();
}

} // namespace fedgen
