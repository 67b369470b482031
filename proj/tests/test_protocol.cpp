#include <algorithm>
#include <cmath>
#include <memory>
#include <set>

#include "doctest.h"
#include "vcsfl/fixed_point.hpp"
#include "vcsfl/protocol.hpp"
#include "vcsfl/sponge.hpp"

using namespace vcsfl;

namespace {

// One shared small-model world: 4-feature, 3-class linear model, d = 15.
struct ProtoFixture {
    FieldPtr field = Field::create_default();
    FixedPointParams fp = FixedPointParams::defaults(field);
    SpongeParams sp = SpongeParams::derive(field);
    ModelShape shape{4, 0, 3};
    KeyPair keys;
    ServerConfig base_cfg;

    ProtoFixture() {
        auto cs = std::make_shared<ConstraintSystem>(
            build_metric_circuit(shape.param_count(), fp, sp));
        keys = keygen(cs, AttestationParams{BackendKind::kReplay, 128});
        base_cfg.shape = shape;
        base_cfg.n_select = 2;
        base_cfg.rounds = 2;
        base_cfg.root_dataset = synth_dataset(120, 4, 3, 9001);
        base_cfg.eval_dataset = synth_dataset(300, 4, 3, 9002);
        base_cfg.client_train.epochs = 2;
        base_cfg.client_train.batch_size = 16;
        base_cfg.client_train.lr = 0.3;
        base_cfg.benchmark_train.epochs = 1;
        base_cfg.benchmark_train.batch_size = 16;
        base_cfg.benchmark_train.lr = 0.3;
        base_cfg.fp = fp;
        base_cfg.sponge = sp;
        base_cfg.init_scale = 0.01;
        base_cfg.seed = 7;
    }

    ClientProfile client(std::uint64_t id, ClientBehavior behavior, double noise = 0.0,
                         std::size_t samples = 120) const {
        ClientProfile c;
        c.id = id;
        c.dataset = synth_dataset(samples, 4, 3, 500 + id);
        if (noise > 0.0) c.dataset = add_gaussian_noise(c.dataset, noise, 700 + id);
        c.behavior = behavior;
        return c;
    }
};

const ProtoFixture& fx() {
    static ProtoFixture f;
    return f;
}

ReportVerdict accepted_verdict(std::uint64_t id, double recomputed) {
    return ReportVerdict{id, Verdict::kAccepted, "", recomputed};
}

const ReportVerdict& verdict_for(const RoundRecord& rec, std::uint64_t id) {
    for (const auto& v : rec.verdicts)
        if (v.client_id == id) return v;
    throw std::runtime_error("no verdict for client");
}

bool contains(const std::vector<std::uint64_t>& v, std::uint64_t x) {
    return std::find(v.begin(), v.end(), x) != v.end();
}

}  // namespace

TEST_CASE("ranking orders by recomputed cosine with ties to the lower id") {
    std::vector<ReportVerdict> v = {accepted_verdict(1, 0.9), accepted_verdict(2, 0.5),
                                    accepted_verdict(3, 0.7)};
    CHECK(rank_accepted(v, 2) == std::vector<std::uint64_t>{1, 3});
    CHECK(rank_accepted(v, 10) == std::vector<std::uint64_t>{1, 3, 2});

    std::vector<ReportVerdict> tie = {accepted_verdict(2, 0.8), accepted_verdict(1, 0.8)};
    CHECK(rank_accepted(tie, 1) == std::vector<std::uint64_t>{1});

    v.push_back(ReportVerdict{0, Verdict::kProofRejected, "bad", 0.99});
    CHECK(rank_accepted(v, 2) == std::vector<std::uint64_t>{1, 3});  // rejected filtered
}

TEST_CASE("uniformly scaling every metric leaves the selection unchanged") {
    Rng rng(404);
    for (int rep = 0; rep < 50; ++rep) {
        std::vector<ReportVerdict> v;
        for (std::uint64_t id = 0; id < 8; ++id)
            v.push_back(accepted_verdict(id, rng.uniform(-1.0, 1.0)));
        for (double scale : {3.7, 0.01}) {
            std::vector<ReportVerdict> scaled = v;
            for (auto& s : scaled) s.recomputed *= scale;
            for (std::size_t n : {1u, 3u, 8u})
                CHECK(rank_accepted(scaled, n) == rank_accepted(v, n));
        }
    }
}

TEST_CASE("aggregation matches hand-computed weighted means") {
    ModelShape s{1, 0, 1};  // two parameters
    SUBCASE("counts 1 and 3 over values 0 and 4 give exactly 3") {
        ModelParams a{s, {0.0, 0.0}}, b{s, {4.0, 4.0}};
        const ModelParams* models[] = {&a, &b};
        std::size_t counts[] = {1, 3};
        AggregateResult r = aggregate(models, counts);
        CHECK(r.model.flat[0] == 3.0);
        CHECK(r.model.flat[1] == 3.0);
        CHECK(r.weights == std::vector<double>{0.25, 0.75});
    }
    SUBCASE("equal counts equal the plain mean within 1e-12") {
        Rng rng(5);
        std::vector<ModelParams> ms(5, ModelParams{s, {0, 0}});
        for (auto& m : ms)
            for (double& x : m.flat) x = rng.uniform(-10.0, 10.0);
        std::vector<const ModelParams*> ptrs;
        for (auto& m : ms) ptrs.push_back(&m);
        std::vector<std::size_t> counts(5, 7);
        AggregateResult r = aggregate(ptrs, counts);
        for (std::size_t i = 0; i < 2; ++i) {
            double mean = 0.0;
            for (auto& m : ms) mean += m.flat[i] / 5.0;
            CHECK(std::abs(r.model.flat[i] - mean) <= 1e-12);
        }
    }
    SUBCASE("identical models aggregate to that model bit for bit") {
        ModelParams m{s, {0.1 + 0.2, -1.0 / 3.0}};  // deliberately non-round values
        std::vector<const ModelParams*> ptrs(4, &m);
        std::vector<std::size_t> counts = {10, 20, 30, 40};
        AggregateResult r = aggregate(ptrs, counts);
        CHECK(r.model.flat == m.flat);
    }
    SUBCASE("shape and count mismatches raise") {
        ModelParams a{s, {0.0, 0.0}};
        ModelParams b{ModelShape{2, 0, 1}, {0, 0, 0}};
        const ModelParams* bad[] = {&a, &b};
        std::size_t counts[] = {1, 1};
        CHECK_THROWS_AS(aggregate(bad, counts), DimensionMismatch);
        const ModelParams* one[] = {&a};
        CHECK_THROWS_AS(aggregate(one, counts), DimensionMismatch);
        std::size_t zero_counts[] = {0};
        CHECK_THROWS_AS(aggregate(one, std::span<const std::size_t>(zero_counts, 1)),
                        ConfigError);
        CHECK_THROWS_AS(aggregate({}, {}), ConfigError);
    }
}

TEST_CASE("random subsets are uniform (chi-square over 1e4 draws)") {
    std::vector<std::uint64_t> ids(20);
    for (std::size_t i = 0; i < 20; ++i) ids[i] = i + 100;
    Rng rng(2718);
    std::vector<double> counts(20, 0.0);
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) {
        auto pick = random_subset(ids, 4, rng);
        CHECK(pick.size() == 4);
        CHECK(std::is_sorted(pick.begin(), pick.end()));
        CHECK(std::adjacent_find(pick.begin(), pick.end()) == pick.end());
        for (auto id : pick) counts[id - 100] += 1.0;
    }
    double expected = draws * 4.0 / 20.0;
    double chi2 = 0.0;
    for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
    // 19 degrees of freedom: mean 19, sigma sqrt(38); stay within 3 sigma.
    CHECK(chi2 < 19.0 + 3.0 * std::sqrt(38.0));

    SUBCASE("n >= population returns everyone") {
        Rng r2(1);
        CHECK(random_subset(ids, 25, r2) == ids);
    }
}

TEST_CASE("client step at zero epochs reproduces the benchmark cosine of one") {
    const auto& f = fx();
    ClientProfile c = f.client(1, ClientBehavior::kHonest);
    ModelParams w_prev = random_model(f.shape, 0.05, 42);
    TrainConfig tc = f.base_cfg.client_train;
    tc.epochs = 0;

    // Benchmark also trained zero epochs from the same state: w_k == w_s.
    TrainConfig bc = tc;
    BenchmarkState bench = server_benchmark_step(w_prev, f.base_cfg.root_dataset, bc, f.fp, f.sp);
    ClientStepResult res = client_step(c, w_prev, bench.model, f.keys.pk, tc);

    CHECK(res.report.cosine == doctest::Approx(1.0).epsilon(0x1p-10));
    SelectionResult sel = server_select({res.report}, f.keys.vk, bench, 1, kDefaultMetricTolerance);
    CHECK(sel.verdicts[0].verdict == Verdict::kAccepted);
    CHECK(sel.verdicts[0].recomputed == res.report.cosine);  // same arithmetic both sides
    CHECK(sel.candidate_set == std::vector<std::uint64_t>{1});
}

TEST_CASE("saturation warning fires above one percent of clipped weights") {
    const auto& f = fx();
    ClientProfile c = f.client(3, ClientBehavior::kHonest);
    TrainConfig tc = f.base_cfg.client_train;
    tc.epochs = 0;  // keep w_prev as the trained model

    ModelParams w_prev = random_model(f.shape, 0.05, 42);
    BenchmarkState bench =
        server_benchmark_step(w_prev, f.base_cfg.root_dataset, tc, f.fp, f.sp);
    CHECK_FALSE(client_step(c, w_prev, bench.model, f.keys.pk, tc).report.saturation_warning);

    ModelParams hot = w_prev;
    hot.flat[0] = 500.0;  // 1/15 of the weights saturate: ~6.7% > 1%
    ClientStepResult res = client_step(c, hot, bench.model, f.keys.pk, tc);
    CHECK(res.report.saturation_warning);
    // The saturated statement still proves and verifies.
    SelectionResult sel = server_select({res.report}, f.keys.vk, bench, 1, kDefaultMetricTolerance);
    CHECK(sel.verdicts[0].verdict == Verdict::kAccepted);
}

TEST_CASE("stale benchmark digests are rejected with a dedicated verdict") {
    const auto& f = fx();
    ClientProfile c = f.client(9, ClientBehavior::kHonest);
    ModelParams w_prev = random_model(f.shape, 0.05, 42);
    TrainConfig tc = f.base_cfg.client_train;

    TrainConfig bc = f.base_cfg.benchmark_train;
    bc.seed = 1;
    BenchmarkState fresh = server_benchmark_step(w_prev, f.base_cfg.root_dataset, bc, f.fp, f.sp);
    bc.seed = 2;
    BenchmarkState other = server_benchmark_step(w_prev, f.base_cfg.root_dataset, bc, f.fp, f.sp);
    REQUIRE(fresh.ws_digest != other.ws_digest);

    ClientStepResult res = client_step(c, w_prev, other.model, f.keys.pk, tc);
    // A lone stale report leaves zero survivors, so the throwing entry point
    // is the observable; the verdict itself is checked via a mixed batch.
    CHECK_THROWS_AS(server_select({res.report}, f.keys.vk, fresh, 1, kDefaultMetricTolerance),
                    EmptySelection);

    ClientStepResult good = client_step(c, w_prev, fresh.model, f.keys.pk, tc);
    SelectionResult mixed = server_select({res.report, good.report}, f.keys.vk, fresh, 2,
                                          kDefaultMetricTolerance);
    CHECK(mixed.verdicts[0].verdict == Verdict::kStaleBenchmark);
    CHECK(mixed.verdicts[1].verdict == Verdict::kAccepted);
    CHECK(mixed.candidate_set == std::vector<std::uint64_t>{9});

    // Against its own benchmark the same report is fine.
    SelectionResult ok = server_select({res.report}, f.keys.vk, other, 1, kDefaultMetricTolerance);
    CHECK(ok.verdicts[0].verdict == Verdict::kAccepted);
}

TEST_CASE("a full round sorts honest, forging, swapping, and invalid clients") {
    const auto& f = fx();
    ServerConfig cfg = f.base_cfg;
    cfg.n_select = 4;
    cfg.rounds = 2;
    std::vector<ClientProfile> clients = {
        f.client(1, ClientBehavior::kHonest),
        f.client(2, ClientBehavior::kHonest),
        f.client(3, ClientBehavior::kHonest),
        f.client(4, ClientBehavior::kMetricForger, 3.0),
        f.client(5, ClientBehavior::kModelSwapper),
        f.client(6, ClientBehavior::kInvalidProof),
    };

    TrainingResult result = run_training(clients, cfg, f.keys);
    REQUIRE(result.rounds.size() == 2);
    for (const RoundRecord& rec : result.rounds) {
        CAPTURE(rec.round_index);
        // Forger: consistency check must catch the 0.999 inflation, which
        // presumes its genuine cosine sits far enough away.
        const ReportVerdict& forger = verdict_for(rec, 4);
        REQUIRE(std::abs(0.999 - forger.recomputed) > kDefaultMetricTolerance);
        CHECK(forger.verdict == Verdict::kMetricMismatch);

        const ReportVerdict& invalid = verdict_for(rec, 6);
        CHECK(invalid.verdict == Verdict::kProofRejected);

        for (std::uint64_t id : {1ull, 2ull, 3ull, 5ull})
            CHECK(verdict_for(rec, id).verdict == Verdict::kAccepted);
        CHECK(rec.verified_ids == std::vector<std::uint64_t>{1, 2, 3, 5});
        CHECK(rec.candidate_set == std::vector<std::uint64_t>{1, 2, 3, 5});

        // Swapper survives selection but dies at the upload audit.
        CHECK(rec.removed_at_upload == std::vector<std::uint64_t>{5});
        for (const AuditEntry& a : rec.audits)
            CHECK(a.outcome ==
                  (a.client_id == 5 ? AuditOutcome::kHashMismatch : AuditOutcome::kOk));

        // Only honest models carry aggregation weight.
        REQUIRE(rec.weights.size() == 3);
        double weight_sum = 0.0;
        for (const auto& [id, weight] : rec.weights) {
            CHECK(contains({1, 2, 3}, id));
            weight_sum += weight;
        }
        CHECK(std::abs(weight_sum - 1.0) <= 1e-12);

        CHECK(rec.upload_bytes == 4 * f.shape.param_count() * 8);
        CHECK(rec.report_bytes == 6 * kReportWireBytes);
        CHECK_FALSE(rec.empty_selection);
    }
}

TEST_CASE("one round with everyone selected equals the weighted mean of uploads") {
    const auto& f = fx();
    ServerConfig cfg = f.base_cfg;
    cfg.rounds = 1;
    cfg.n_select = 3;
    std::vector<ClientProfile> clients = {
        f.client(1, ClientBehavior::kHonest, 0.0, 100),
        f.client(2, ClientBehavior::kHonest, 0.0, 300),
        f.client(3, ClientBehavior::kHonest, 0.0, 600),
    };
    clients[0].sample_count = 100;
    clients[1].sample_count = 300;
    clients[2].sample_count = 600;

    TrainingResult result = run_training(clients, cfg, f.keys);
    const RoundRecord& rec = result.rounds.at(0);
    REQUIRE(rec.candidate_set == std::vector<std::uint64_t>{1, 2, 3});
    REQUIRE(rec.uploads.size() == 3);

    // Independent direct-form oracle sum_k (n_k / n) w_k.
    double total = 100 + 300 + 600;
    for (std::size_t i = 0; i < f.shape.param_count(); ++i) {
        double expect = 0.0;
        for (const auto& [id, model] : rec.uploads)
            expect += double(id == 1 ? 100 : id == 2 ? 300 : 600) / total * model.flat[i];
        CHECK(std::abs(rec.global_after.flat[i] - expect) <= 1e-12);
    }
}

TEST_CASE("empty selection carries the previous model forward") {
    const auto& f = fx();
    ServerConfig cfg = f.base_cfg;
    cfg.rounds = 2;
    std::vector<ClientProfile> clients = {
        f.client(1, ClientBehavior::kInvalidProof),
        f.client(2, ClientBehavior::kInvalidProof),
    };
    TrainingResult result = run_training(clients, cfg, f.keys);
    for (const RoundRecord& rec : result.rounds) {
        CHECK(rec.empty_selection);
        CHECK(rec.candidate_set.empty());
        CHECK(rec.upload_bytes == 0);
        CHECK(rec.report_bytes == 2 * kReportWireBytes);
        for (const auto& v : rec.verdicts) CHECK(v.verdict == Verdict::kProofRejected);
        CHECK(rec.global_after.flat == result.initial_model.flat);
    }

    SUBCASE("direct server_select throws EmptySelection") {
        ModelParams w_prev = random_model(f.shape, 0.05, 42);
        TrainConfig tc = f.base_cfg.client_train;
        BenchmarkState bench = server_benchmark_step(w_prev, f.base_cfg.root_dataset,
                                                     f.base_cfg.benchmark_train, f.fp, f.sp);
        ClientStepResult res = client_step(clients[0], w_prev, bench.model, f.keys.pk, tc);
        CHECK_THROWS_AS(server_select({res.report}, f.keys.vk, bench, 1, kDefaultMetricTolerance),
                        EmptySelection);
    }
}

TEST_CASE("missing uploads are flagged and removed") {
    const auto& f = fx();
    ClientProfile c = f.client(1, ClientBehavior::kHonest);
    ModelParams w_prev = random_model(f.shape, 0.05, 42);
    TrainConfig tc = f.base_cfg.client_train;
    BenchmarkState bench = server_benchmark_step(w_prev, f.base_cfg.root_dataset,
                                                 f.base_cfg.benchmark_train, f.fp, f.sp);
    ClientStepResult res = client_step(c, w_prev, bench.model, f.keys.pk, tc);

    std::vector<ReportSummary> reports = {summarize(res.report)};
    std::vector<std::uint64_t> candidates = {1, 2};  // 2 never uploads
    std::vector<std::pair<std::uint64_t, ModelParams>> uploads;
    uploads.emplace_back(1, res.upload);
    AuditResult audit = upload_and_audit(candidates, uploads, reports, f.fp, f.sp);
    CHECK(audit.survivors == std::vector<std::uint64_t>{1});
    CHECK(audit.removed == std::vector<std::uint64_t>{2});
    REQUIRE(audit.entries.size() == 2);
    CHECK(audit.entries[1].outcome == AuditOutcome::kMissingUpload);
}

TEST_CASE("training runs are deterministic in the seed") {
    const auto& f = fx();
    ServerConfig cfg = f.base_cfg;
    cfg.rounds = 2;
    std::vector<ClientProfile> clients = {
        f.client(1, ClientBehavior::kHonest),
        f.client(2, ClientBehavior::kHonest, 0.5),
        f.client(3, ClientBehavior::kModelSwapper),
    };

    TrainingResult a = run_training(clients, cfg, f.keys);
    TrainingResult b = run_training(clients, cfg, f.keys);
    CHECK(a.final_model.flat == b.final_model.flat);
    REQUIRE(a.rounds.size() == b.rounds.size());
    for (std::size_t t = 0; t < a.rounds.size(); ++t) {
        CHECK(a.rounds[t].candidate_set == b.rounds[t].candidate_set);
        CHECK(a.rounds[t].accuracy == b.rounds[t].accuracy);
        CHECK(a.rounds[t].global_after.flat == b.rounds[t].global_after.flat);
    }

    ServerConfig other = cfg;
    other.seed = 8;
    CHECK(run_training(clients, other, f.keys).final_model.flat != a.final_model.flat);
}

TEST_CASE("random-selection baseline skips verdicts but still audits uploads") {
    const auto& f = fx();
    ServerConfig cfg = f.base_cfg;
    cfg.rounds = 3;
    cfg.n_select = 2;
    std::vector<ClientProfile> clients = {
        f.client(1, ClientBehavior::kHonest),
        f.client(2, ClientBehavior::kHonest),
        f.client(3, ClientBehavior::kModelSwapper),
        f.client(4, ClientBehavior::kMetricForger),
    };
    TrainingResult result = run_training_rand_cs(clients, cfg, f.keys);
    bool swapper_seen = false;
    for (const RoundRecord& rec : result.rounds) {
        CHECK(rec.verdicts.empty());
        CHECK(rec.candidate_set.size() == 2);
        CHECK(rec.upload_bytes == 2 * f.shape.param_count() * 8);
        CHECK(rec.report_bytes == 4 * kReportWireBytes);
        if (contains(rec.candidate_set, 3)) {
            swapper_seen = true;
            CHECK(contains(rec.removed_at_upload, 3));
        }
        // The forger's model passes the hash audit (its upload is genuine).
        if (contains(rec.candidate_set, 4)) CHECK_FALSE(contains(rec.removed_at_upload, 4));
    }
    CHECK(swapper_seen);  // seed chosen so the swapper gets picked at least once
}

TEST_CASE("config validation and key mismatch errors") {
    const auto& f = fx();
    ServerConfig cfg = f.base_cfg;
    cfg.n_select = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = f.base_cfg;
    cfg.rounds = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = f.base_cfg;
    cfg.eval_dataset = synth_dataset(10, 5, 3, 1);  // wrong input_dim
    CHECK_THROWS_AS(cfg.validate(), DimensionMismatch);
    cfg = f.base_cfg;
    cfg.metric_tolerance = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    std::vector<ClientProfile> clients = {f.client(1, ClientBehavior::kHonest)};
    SUBCASE("duplicate client ids") {
        auto dup = clients;
        dup.push_back(f.client(1, ClientBehavior::kHonest));
        CHECK_THROWS_AS(run_training(dup, f.base_cfg, f.keys), ConfigError);
    }
    SUBCASE("keys for the wrong model size") {
        auto cs = std::make_shared<ConstraintSystem>(build_metric_circuit(4, f.fp, f.sp));
        KeyPair small = keygen(cs, AttestationParams{BackendKind::kReplay, 128});
        CHECK_THROWS_AS(run_training(clients, f.base_cfg, small), DimensionMismatch);
    }
    SUBCASE("no clients") {
        CHECK_THROWS_AS(run_training({}, f.base_cfg, f.keys), ConfigError);
    }
}
