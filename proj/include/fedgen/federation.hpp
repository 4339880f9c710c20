#pragma once

#include "fedgen/classifier.hpp"
#include "fedgen/dataset.hpp"
#include "fedgen/diffusion.hpp"
#include "fedgen/evaluation.hpp"
#include "fedgen/generative_memory.hpp"
#include "fedgen/local_training.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace fedgen {

enum class Method { dfeddgm, fedavg_baseline };

/// When per-client work that only depends on frozen or task-level inputs is redone.
enum class Cadence { per_round, per_task };

/// Component switches for ablations. Off means: random diffusion batches,
/// no entropy filter (keep all n_s samples), alpha = 0, gamma = 0.
struct Ablation {
    bool balanced_sampler = true;
    bool entropy_filter = true;
    bool kd_loss = true;
    bool fd_loss = true;
};

struct FederationConfig {
    Method method = Method::dfeddgm;
    Ablation ablation;
    int rounds = 100;              ///< R
    int clients_per_round = 0;     ///< m; 0 selects every client
    bool count_weighted = true;    ///< FedAvg weights: current-task sample counts, else uniform
    int workers = 1;               ///< parallel client updates per round
    int wire_bytes_per_param = 4;  ///< bytes per classifier scalar on the wire
    int head_capacity = 0;         ///< pre-size the head to this many outputs (0: grow per task)

    ClassifierConfig classifier;
    LossConfig local;
    ReplayConfig replay;

    DenoiserConfig denoiser;
    int diffusion_steps = 1000;    ///< T_diff
    DiffusionTrainConfig diffusion;///< epochs = n_d
    Cadence diffusion_cadence = Cadence::per_round;
    Cadence replay_cadence = Cadence::per_round;

    std::uint64_t seed = 0;
};

struct RoundPlan {
    int task = 0;
    int round = 0;
    std::vector<int> selected;          ///< ascending client ids
    std::vector<std::uint64_t> seeds;   ///< one per selected client
};

/// Deterministic selection of m of N clients for (task, round).
RoundPlan plan_round(int task, int round, int num_clients, int clients_per_round, std::uint64_t seed);

/// Classifier traffic only: diffusion models and synthetic data never leave a client.
class CommLedger {
public:
    struct Entry {
        int task = 0;
        int round = 0;
        int clients = 0;
        std::uint64_t bytes_up = 0;
        std::uint64_t bytes_down = 0;
    };

    /// Every selected client downloads the global model and uploads its update.
    void record_round(int task, int round, int clients, std::size_t model_params, int bytes_per_param);
    const std::vector<Entry>& entries() const { return entries_; }
    std::uint64_t total() const { return total_; }

private:
    std::vector<Entry> entries_;
    std::uint64_t total_ = 0;
};

struct ClientRoundLog {
    int client = 0;
    std::size_t real_samples = 0;
    int replay_generated = 0;
    int replay_retained = 0;
    bool filter_enabled = false;
    bool skipped = false;
    LossTerms last_epoch;      ///< batch-averaged terms of the final local epoch
    int diffusion_steps = 0;   ///< optimizer steps spent on the diffusion model this round
    double diffusion_loss = 0; ///< mean loss over those steps
};

struct RoundRecord {
    int task = 0;
    int round = 0;
    std::vector<int> selected;
    std::vector<ClientRoundLog> clients;
    std::uint64_t bytes_up = 0;
    std::uint64_t bytes_down = 0;
};

struct DiffusionTaskLog {
    int task = 0;
    int client = 0;
    int steps = 0;
    double mean_loss = 0;
};

struct RunResult {
    Classifier model;
    AccuracyRecord accuracy;
    CommLedger ledger;
    std::vector<RoundRecord> rounds;
    /// Every logged local step, for the loss decomposition check.
    std::vector<LossTerms> loss_steps;
    /// Sixteen generated images per task, from the client with the largest shard.
    std::vector<nn::Act> sample_grids;
    /// Diffusion training done once per task (per-task cadence only).
    std::vector<DiffusionTaskLog> diffusion_tasks;
};

/// Copy of `data` with labels replaced by their output slots under `schedule`.
Dataset to_slot_labels(const Dataset& data, const TaskSchedule& schedule);

/// Server state across tasks. Tasks must be run in order.
class Federation {
public:
    /// `data` must carry slot labels and outlive the federation.
    Federation(const Dataset& data, const TaskSchedule& schedule, FederationConfig config);

    /// Expands the head, runs R rounds of selection / local update / aggregation,
    /// then evaluates and freezes the teacher and diffusion snapshots for the next task.
    StepAccuracy run_task(int task, const std::function<void(const RoundRecord&)>& on_round = {});

    const Classifier& global_model() const { return global_; }
    /// Client diffusion models as frozen at the end of the last finished task (empty for FedAvg).
    const std::vector<DiffusionModel>& diffusion_models() const { return diffusion_prev_; }
    const RunResult& result() const { return result_; }
    RunResult take_result();

private:
    struct Replay {
        Dataset data;
        int generated = 0;
        int retained = 0;
    };

    Replay make_replay(int client, std::uint64_t seed) const;
    DiffusionTrainReport train_diffusion(int client, int task, std::uint64_t seed);
    LossConfig effective_loss() const;
    std::uint64_t frozen_fingerprint() const;

    const Dataset& data_;
    const TaskSchedule& schedule_;
    FederationConfig config_;
    Classifier global_;
    std::optional<Classifier> teacher_;
    std::vector<DiffusionModel> diffusion_prev_; ///< frozen, end of the previous task
    std::vector<DiffusionModel> diffusion_cur_;  ///< being trained on the current task
    std::vector<std::optional<Replay>> replay_cache_;
    int next_task_ = 0;
    RunResult result_;
};

/// Trains over every task in order. `data` must carry slot labels.
/// `on_round` fires after each aggregation (used for streaming logs).
RunResult run_experiment(const Dataset& data, const TaskSchedule& schedule, const FederationConfig& config,
                         const std::function<void(const RoundRecord&)>& on_round = {});

} // namespace fedgen
