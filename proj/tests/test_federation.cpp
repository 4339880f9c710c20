#include "doctest.h"

#include "fedgen/dataset.hpp"
#include "fedgen/error.hpp"
#include "fedgen/federation.hpp"

#include <set>

using namespace fedgen;

namespace {

struct Setup {
    Dataset data;
    TaskSchedule schedule;
};

Setup small_setup(int classes = 4, int tasks = 2, int clients = 3, std::uint64_t seed = 1) {
    const Dataset raw = synth_dataset(classes, 20, {1, 8, 8}, seed);
    PartitionConfig pc;
    pc.num_clients = clients;
    pc.seed = seed;
    Setup s;
    s.schedule = build_schedule(raw, tasks, pc, seed + 1);
    s.data = to_slot_labels(raw, s.schedule);
    return s;
}

FederationConfig small_config(Method method) {
    FederationConfig c;
    c.method = method;
    c.rounds = 2;
    c.classifier.input = {1, 8, 8};
    c.classifier.conv1 = 4;
    c.classifier.conv2 = 6;
    c.classifier.feature_dim = 12;
    c.local.local_epochs = 1;
    c.local.batch_size = 16;
    c.replay.samples = 10;
    c.denoiser.base_channels = 4;
    c.diffusion_steps = 10;
    c.diffusion.epochs = 1;
    c.seed = 3;
    return c;
}

} // namespace

TEST_CASE("plan_round selection") {
    const auto all = plan_round(0, 0, 5, 0, 1);
    CHECK(all.selected == std::vector<int>{0, 1, 2, 3, 4});
    CHECK(all.seeds.size() == 5);
    CHECK(std::set<std::uint64_t>(all.seeds.begin(), all.seeds.end()).size() == 5);
    std::set<std::vector<int>> distinct;
    for (int r = 0; r < 20; ++r) {
        const auto p = plan_round(1, r, 10, 4, 9);
        CHECK(p.selected.size() == 4);
        CHECK(std::is_sorted(p.selected.begin(), p.selected.end()));
        CHECK(p.selected == plan_round(1, r, 10, 4, 9).selected);
        distinct.insert(p.selected);
    }
    CHECK(distinct.size() > 1);
    CHECK_THROWS_AS(plan_round(0, 0, 3, 4, 1), ConfigError);
    CHECK_THROWS_AS(plan_round(0, 0, 0, 0, 1), ConfigError);
    CHECK_THROWS_AS(plan_round(0, 0, 3, -1, 1), ConfigError);
}

TEST_CASE("ledger arithmetic") {
    CommLedger l;
    for (int t = 0; t < 2; ++t)
        for (int r = 0; r < 10; ++r) l.record_round(t, r, 4, 1000, 4);
    CHECK(l.total() == 640000);
    CHECK(l.entries().size() == 20);
    CHECK(l.entries()[0].bytes_up == 16000);
}

TEST_CASE("ledger of a run counts only classifier traffic") {
    const auto s = small_setup();
    for (Method m : {Method::dfeddgm, Method::fedavg_baseline}) {
        auto c = small_config(m);
        c.head_capacity = 6;
        c.rounds = 10;
        c.clients_per_round = 2;
        c.local.local_epochs = 0;
        c.diffusion.epochs = 0;
        const auto r = run_experiment(s.data, s.schedule, c);
        CHECK(r.model.params().scalar_count() == 1000);
        // T=2, R=10, m=2, 1000 params at 4 bytes, up and down
        CHECK(r.ledger.total() == 2u * 10 * 2 * 2 * 4000);
    }
}

TEST_CASE("zero rounds only expand the head") {
    const auto s = small_setup();
    auto c = small_config(Method::fedavg_baseline);
    c.rounds = 0;
    Federation fed(s.data, s.schedule, c);
    const ParamSet before = fed.global_model().params();
    fed.run_task(0);
    CHECK(fed.global_model().current_classes() == s.schedule.classes_through(0));
    CHECK(fed.global_model().params().at("conv1.weight") == before.at("conv1.weight"));
    CHECK(fed.result().ledger.total() == 0);
    CHECK_THROWS_AS(fed.run_task(0), ConfigError);
}

TEST_CASE("unchanged clients are a fixed point of aggregation") {
    const auto s = small_setup();
    auto c = small_config(Method::fedavg_baseline);
    c.local.local_epochs = 0;
    c.rounds = 3;
    Federation fed(s.data, s.schedule, c);
    fed.run_task(0);
    const ParamSet after_first = fed.global_model().params();
    Federation ref(s.data, s.schedule, [&] {
        auto z = c;
        z.rounds = 0;
        return z;
    }());
    ref.run_task(0);
    const auto& a = after_first;
    const auto& b = ref.global_model().params();
    for (std::size_t i = 0; i < a.size(); ++i) CHECK((a[i] - b[i]).cwiseAbs().maxCoeff() <= 1e-6);
}

TEST_CASE("fedavg on the 10-class, 5-task fixture") {
    const auto s = small_setup(10, 5, 3);
    auto c = small_config(Method::fedavg_baseline);
    const auto r = run_experiment(s.data, s.schedule, c);
    CHECK(r.accuracy.complete());
    CHECK(r.accuracy.steps.size() == 5);
    CHECK(r.model.current_classes() == 10);
    CHECK(r.sample_grids.empty());
    for (const auto& rec : r.rounds)
        for (const auto& cl : rec.clients) {
            CHECK(cl.replay_generated == 0);
            CHECK(cl.diffusion_steps == 0);
        }
}

TEST_CASE("dfeddgm: determinism, head growth, replay and frozen snapshots") {
    const auto s = small_setup(6, 3, 3);
    auto c = small_config(Method::dfeddgm);
    c.workers = 2;
    std::vector<int> heads;
    Federation fed(s.data, s.schedule, c);
    for (int t = 0; t < 3; ++t) {
        fed.run_task(t, [&](const RoundRecord& rec) {
            CHECK(rec.task == t);
            for (const auto& cl : rec.clients) {
                if (t == 0) {
                    CHECK(cl.replay_generated == 0);
                } else {
                    CHECK(cl.filter_enabled);
                    CHECK(cl.replay_generated == generation_count(10, 0.9));
                    CHECK(cl.replay_retained == retention_count(cl.replay_generated, 0.9));
                }
                if (cl.real_samples > 0) CHECK(cl.diffusion_steps > 0);
            }
        });
        heads.push_back(fed.global_model().current_classes());
        CHECK(heads.back() == s.schedule.classes_through(t));
    }
    CHECK(std::is_sorted(heads.begin(), heads.end()));
    CHECK(fed.diffusion_models().size() == 3);
    const RunResult a = fed.take_result();
    CHECK(a.sample_grids.size() == 3);

    c.workers = 1;
    const RunResult b = run_experiment(s.data, s.schedule, c);
    CHECK(b.model.params() == a.model.params());
    CHECK(b.ledger.total() == a.ledger.total());
    for (int l = 0; l < 3; ++l) CHECK(b.accuracy.steps[l].observed == a.accuracy.steps[l].observed);
    for (const auto& t : a.loss_steps)
        CHECK(std::abs(t.total - (t.ce + c.local.alpha * t.kd + c.local.gamma * t.fd)) <= 1e-6);

    auto f = small_config(Method::fedavg_baseline);
    CHECK(run_experiment(s.data, s.schedule, f).ledger.total() == a.ledger.total());
}

TEST_CASE("ablation flags reach the clients") {
    const auto s = small_setup();
    auto c = small_config(Method::dfeddgm);
    c.ablation.entropy_filter = false;
    c.replay_cadence = Cadence::per_task;
    c.diffusion_cadence = Cadence::per_task;
    const auto r = run_experiment(s.data, s.schedule, c);
    for (const auto& rec : r.rounds)
        for (const auto& cl : rec.clients) {
            CHECK(!cl.filter_enabled);
            CHECK(cl.replay_generated == cl.replay_retained);
            if (rec.task == 1) CHECK(cl.replay_generated == 10);
            CHECK(cl.diffusion_steps == 0);
        }
    CHECK(!r.diffusion_tasks.empty());

    c.ablation.kd_loss = c.ablation.fd_loss = false;
    for (const auto& t : run_experiment(s.data, s.schedule, c).loss_steps) {
        CHECK(t.kd == 0);
        CHECK(t.fd == 0);
    }
}

TEST_CASE("no real example crosses a client boundary") {
    // Tainting one client's images must not change any other client's diffusion model.
    auto s = small_setup();
    auto c = small_config(Method::dfeddgm);
    c.diffusion_cadence = Cadence::per_task;
    Federation clean(s.data, s.schedule, c);
    clean.run_task(0);

    int owner = 0;
    for (int i = 1; i < 3; ++i)
        if (s.schedule.shard(i, 0).size() > s.schedule.shard(owner, 0).size()) owner = i;
    Dataset tainted = s.data;
    for (auto i : s.schedule.shard(owner, 0))
        for (auto& v : tainted.examples[i].image) v = 1 - v;
    Federation dirty(tainted, s.schedule, c);
    dirty.run_task(0);
    for (int i = 0; i < 3; ++i) {
        const bool same = dirty.diffusion_models()[i].denoiser.params() == clean.diffusion_models()[i].denoiser.params();
        CHECK(same == (i != owner));
    }
}

TEST_CASE("configuration errors") {
    const auto s = small_setup();
    auto c = small_config(Method::fedavg_baseline);
    c.clients_per_round = 5;
    CHECK_THROWS_AS(Federation(s.data, s.schedule, c), ConfigError);
    c = small_config(Method::fedavg_baseline);
    c.classifier.input = {1, 16, 16};
    CHECK_THROWS_AS(Federation(s.data, s.schedule, c), ShapeError);
    c = small_config(Method::fedavg_baseline);
    c.rounds = -1;
    CHECK_THROWS_AS(Federation(s.data, s.schedule, c), ConfigError);
}

TEST_CASE("errors carry task, round and client context") {
    const auto s = small_setup();
    auto c = small_config(Method::fedavg_baseline);
    c.local.kd_temperature = 0;
    try {
        run_experiment(s.data, s.schedule, c);
        FAIL("expected an error");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("task 1 round 1 client") != std::string::npos);
    }
}
