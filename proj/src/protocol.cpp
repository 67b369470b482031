#include "vcsfl/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_map>

#include "vcsfl/fixed_point.hpp"
#include "vcsfl/sponge.hpp"

namespace vcsfl {

namespace {

constexpr std::uint64_t kTagInit = 0x696e6974;     // global model init stream
constexpr std::uint64_t kTagBench = 0x62656e6368;  // per-round benchmark stream
constexpr std::uint64_t kTagRandSel = 0x72616e64;  // random-selection stream

}  // namespace

double quantized_norm_sq(const QuantizedVector& q) {
    __int128 acc = 0;
    for (const Fe& e : q.elems) {
        auto v = static_cast<__int128>(decode_signed(e, q.params));
        acc += v * v;
    }
    return static_cast<double>(acc);
}

double statement_cosine(const Field& field, const PublicStatement& st, double bench_norm_sq) {
    double dot = static_cast<double>(field.to_signed(st.dot));
    double norm = static_cast<double>(field.to_signed(st.norm_sq));
    if (!(norm > 0.0) || !(bench_norm_sq > 0.0))
        return std::numeric_limits<double>::quiet_NaN();
    return dot / std::sqrt(norm * bench_norm_sq);
}

namespace {

// No-throw core of server_select so the round loop can log verdicts even
// when everything was rejected.
SelectionResult select_reports(const std::vector<MetricReport>& reports,
                               const VerifyingKey& vk, const BenchmarkState& bench,
                               std::size_t n_select, double tolerance) {
    if (!vk.circuit) throw ConfigError("verifying key has no circuit");
    const Field& field = *vk.circuit->field();
    SelectionResult out;
    out.verdicts.reserve(reports.size());
    for (const MetricReport& rep : reports) {
        ReportVerdict v;
        v.client_id = rep.client_id;
        v.recomputed = std::numeric_limits<double>::quiet_NaN();
        auto reject = [&](Verdict code, std::string reason) {
            v.verdict = code;
            v.reason = std::move(reason);
        };
        if (rep.statement.ws_digest != bench.ws_digest) {
            reject(Verdict::kStaleBenchmark, "statement pins a stale benchmark digest");
        } else {
            bool decoded = false;
            try {
                v.recomputed = statement_cosine(field, rep.statement, bench.norm_sq);
                decoded = true;
            } catch (const Error& e) {
                reject(Verdict::kMetricOutOfRange,
                       std::string("statement does not decode: ") + e.what());
            }
            if (decoded) {
                // Tiny slack over 1.0 covers the sqrt rounding of an honest
                // statement at the Cauchy-Schwarz boundary.
                if (!std::isfinite(v.recomputed) || std::abs(v.recomputed) > 1.0 + 1e-9) {
                    reject(Verdict::kMetricOutOfRange, "recomputed cosine outside [-1, 1]");
                } else {
                    // Public inputs come from server state plus the claimed
                    // statement values, never from the proof body.
                    PublicStatement x{bench.ws_digest, rep.statement.model_digest,
                                      rep.statement.dot, rep.statement.norm_sq};
                    VerifyResult vr{false, ""};
                    try {
                        vr = verify(vk, x, rep.proof);
                    } catch (const Error& e) {
                        vr.reason = e.what();
                    }
                    if (!vr.accepted) {
                        reject(Verdict::kProofRejected, vr.reason);
                    } else if (!(std::abs(rep.cosine - v.recomputed) <= tolerance)) {
                        reject(Verdict::kMetricMismatch,
                               "reported cosine disagrees with proved statement");
                    }
                }
            }
        }
        if (v.verdict == Verdict::kAccepted) out.verified_ids.push_back(rep.client_id);
        out.verdicts.push_back(std::move(v));
    }
    std::sort(out.verified_ids.begin(), out.verified_ids.end());
    out.candidate_set = rank_accepted(out.verdicts, n_select);
    std::sort(out.candidate_set.begin(), out.candidate_set.end());
    return out;
}

enum class SelectionMode { kVerified, kRandom };

TrainingResult run_impl(const std::vector<ClientProfile>& clients, const ServerConfig& cfg,
                        const KeyPair& keys, SelectionMode mode) {
    cfg.validate();
    if (clients.empty()) throw ConfigError("no clients");
    if (!keys.pk.circuit || !keys.vk.circuit) throw ConfigError("keys carry no circuit");
    const std::uint64_t d = cfg.shape.param_count();
    if (keys.pk.circuit->d() != d)
        throw DimensionMismatch("keys were generated for a different model size");

    std::vector<const ClientProfile*> order;
    order.reserve(clients.size());
    for (const ClientProfile& c : clients) order.push_back(&c);
    std::sort(order.begin(), order.end(),
              [](const ClientProfile* a, const ClientProfile* b) { return a->id < b->id; });
    for (std::size_t i = 1; i < order.size(); ++i)
        if (order[i]->id == order[i - 1]->id) throw ConfigError("duplicate client id");

    TrainingResult result;
    ModelParams w = random_model(cfg.shape, cfg.init_scale, mix_seed(cfg.seed, kTagInit));
    result.initial_model = w;

    for (std::size_t t = 1; t <= cfg.rounds; ++t) {
        TrainConfig bench_cfg = cfg.benchmark_train;
        bench_cfg.seed = mix_seed(cfg.seed, kTagBench, t);
        BenchmarkState bench =
            server_benchmark_step(w, cfg.root_dataset, bench_cfg, cfg.fp, cfg.sponge);

        RoundRecord rec;
        rec.round_index = t;
        rec.benchmark = bench.model;
        rec.ws_digest = bench.ws_digest;

        std::unordered_map<std::uint64_t, ModelParams> steps;  // id -> upload
        steps.reserve(order.size());
        std::vector<MetricReport> full_reports;
        full_reports.reserve(order.size());
        for (const ClientProfile* c : order) {
            TrainConfig tc = cfg.client_train;
            tc.seed = mix_seed(cfg.seed, c->id, t);
            ClientStepResult res = client_step(*c, w, bench.model, keys.pk, tc);
            rec.reports.push_back(summarize(res.report));
            full_reports.push_back(std::move(res.report));
            steps.emplace(c->id, std::move(res.upload));
        }

        if (mode == SelectionMode::kVerified) {
            SelectionResult sel = select_reports(full_reports, keys.vk, bench, cfg.n_select,
                                                 cfg.metric_tolerance);
            rec.verdicts = std::move(sel.verdicts);
            rec.verified_ids = std::move(sel.verified_ids);
            rec.candidate_set = std::move(sel.candidate_set);
            rec.empty_selection = rec.candidate_set.empty();
        } else {
            std::vector<std::uint64_t> ids;
            ids.reserve(order.size());
            for (const ClientProfile* c : order) ids.push_back(c->id);
            Rng rng(mix_seed(cfg.seed, kTagRandSel, t));
            rec.candidate_set = random_subset(ids, cfg.n_select, rng);
        }

        full_reports.clear();  // proofs are no longer needed past selection

        for (std::uint64_t id : rec.candidate_set)
            rec.uploads.emplace_back(id, steps.at(id));

        AuditResult audit =
            upload_and_audit(rec.candidate_set, rec.uploads, rec.reports, cfg.fp, cfg.sponge);
        rec.audits = std::move(audit.entries);
        rec.removed_at_upload = std::move(audit.removed);

        if (!audit.survivors.empty()) {
            std::vector<const ModelParams*> models;
            std::vector<std::size_t> counts;
            for (std::uint64_t id : audit.survivors) {
                models.push_back(&steps.at(id));
                auto it = std::lower_bound(
                    order.begin(), order.end(), id,
                    [](const ClientProfile* c, std::uint64_t v) { return c->id < v; });
                counts.push_back((*it)->effective_samples());
            }
            AggregateResult agg = aggregate(models, counts);
            w = std::move(agg.model);
            for (std::size_t i = 0; i < audit.survivors.size(); ++i)
                rec.weights.emplace_back(audit.survivors[i], agg.weights[i]);
        }
        // else: nothing survived; the global model carries over unchanged.

        rec.global_after = w;
        rec.accuracy = evaluate_accuracy(w, cfg.eval_dataset);
        rec.upload_bytes = std::uint64_t(rec.candidate_set.size()) * d * 8;
        rec.report_bytes = std::uint64_t(clients.size()) * kReportWireBytes;
        result.rounds.push_back(std::move(rec));
    }

    result.final_model = std::move(w);
    result.final_accuracy = result.rounds.empty()
                                ? evaluate_accuracy(result.final_model, cfg.eval_dataset)
                                : result.rounds.back().accuracy;
    return result;
}

}  // namespace

const char* behavior_name(ClientBehavior b) {
    switch (b) {
        case ClientBehavior::kHonest: return "honest";
        case ClientBehavior::kMetricForger: return "metric-forger";
        case ClientBehavior::kModelSwapper: return "model-swapper";
        case ClientBehavior::kInvalidProof: return "invalid-proof";
    }
    return "unknown";
}

const char* verdict_name(Verdict v) {
    switch (v) {
        case Verdict::kAccepted: return "accepted";
        case Verdict::kStaleBenchmark: return "stale-benchmark";
        case Verdict::kMetricOutOfRange: return "metric-out-of-range";
        case Verdict::kProofRejected: return "proof-rejected";
        case Verdict::kMetricMismatch: return "metric-mismatch";
    }
    return "unknown";
}

const char* audit_name(AuditOutcome a) {
    switch (a) {
        case AuditOutcome::kOk: return "ok";
        case AuditOutcome::kHashMismatch: return "hash-mismatch";
        case AuditOutcome::kMissingUpload: return "missing-upload";
    }
    return "unknown";
}

void ServerConfig::validate() const {
    if (n_select == 0) throw ConfigError("n_select must be >= 1");
    if (rounds == 0) throw ConfigError("rounds must be >= 1");
    if (shape.param_count() == 0) throw ConfigError("empty model shape");
    root_dataset.validate();
    eval_dataset.validate();
    if (root_dataset.input_dim != shape.input_dim ||
        root_dataset.num_classes != shape.num_classes ||
        eval_dataset.input_dim != shape.input_dim ||
        eval_dataset.num_classes != shape.num_classes)
        throw DimensionMismatch("dataset shape disagrees with model shape");
    client_train.validate();
    benchmark_train.validate();
    fp.validate();
    if (!(metric_tolerance > 0.0)) throw ConfigError("metric_tolerance must be > 0");
    if (!(init_scale >= 0.0)) throw ConfigError("init_scale must be >= 0");
}

BenchmarkState server_benchmark_step(const ModelParams& w_prev, const Dataset& root,
                                     const TrainConfig& cfg, const FixedPointParams& fp,
                                     const SpongeParams& sponge) {
    BenchmarkState bench;
    bench.model = local_train(w_prev, root, cfg);
    bench.quantized = quantize(bench.model.flat, fp).vec;
    bench.ws_digest = sponge_hash(*fp.field, sponge, bench.quantized.elems);
    bench.norm_sq = quantized_norm_sq(bench.quantized);
    return bench;
}

ClientStepResult client_step(const ClientProfile& client, const ModelParams& w_prev,
                             const ModelParams& benchmark, const ProvingKey& pk,
                             const TrainConfig& train_cfg) {
    if (!pk.circuit) throw ConfigError("proving key has no circuit");
    const ConstraintSystem& cs = *pk.circuit;
    const FixedPointParams& fp = cs.fixed_point();
    const Field& field = *cs.field();

    ClientStepResult out;
    out.trained = local_train(w_prev, client.dataset, train_cfg);
    QuantizeResult qk = quantize(out.trained.flat, fp);
    QuantizeResult qs = quantize(benchmark.flat, fp);
    auto [wit, st] = generate_witness(cs, qk.vec, qs.vec);

    out.report.client_id = client.id;
    out.report.statement = st;
    out.report.proof = prove(pk, wit, st);
    out.report.saturation_warning = qk.saturated * 100 > cs.d();
    out.report.cosine = statement_cosine(field, st, quantized_norm_sq(qs.vec));
    if (!std::isfinite(out.report.cosine)) out.report.cosine = 0.0;  // zero-norm degenerate
    out.upload = out.trained;

    switch (client.behavior) {
        case ClientBehavior::kHonest:
            break;
        case ClientBehavior::kMetricForger:
            out.report.cosine = 0.999;
            break;
        case ClientBehavior::kModelSwapper:
            out.upload.flat[0] += 1.0;
            break;
        case ClientBehavior::kInvalidProof: {
            // Wire-equivalent of flipping a byte inside the proof payload:
            // nudge the last assignment element off its proved value.
            Fe& last = out.report.proof.assignment.back();
            last = field.add(last, field.one());
            break;
        }
    }
    return out;
}

SelectionResult server_select(const std::vector<MetricReport>& reports,
                              const VerifyingKey& vk, const BenchmarkState& bench,
                              std::size_t n_select, double tolerance) {
    SelectionResult out = select_reports(reports, vk, bench, n_select, tolerance);
    if (out.candidate_set.empty())
        throw EmptySelection("every report failed a selection check");
    return out;
}

std::vector<std::uint64_t> rank_accepted(const std::vector<ReportVerdict>& verdicts,
                                         std::size_t n_select) {
    std::vector<const ReportVerdict*> accepted;
    for (const ReportVerdict& v : verdicts)
        if (v.verdict == Verdict::kAccepted) accepted.push_back(&v);
    std::sort(accepted.begin(), accepted.end(),
              [](const ReportVerdict* a, const ReportVerdict* b) {
                  if (a->recomputed != b->recomputed) return a->recomputed > b->recomputed;
                  return a->client_id < b->client_id;
              });
    if (accepted.size() > n_select) accepted.resize(n_select);
    std::vector<std::uint64_t> ids;
    ids.reserve(accepted.size());
    for (const ReportVerdict* v : accepted) ids.push_back(v->client_id);
    return ids;
}

ReportSummary summarize(const MetricReport& report) {
    return ReportSummary{report.client_id, report.cosine, report.statement,
                         report.saturation_warning, report.proof.wire_size()};
}

AuditResult upload_and_audit(const std::vector<std::uint64_t>& candidates,
                             const std::vector<std::pair<std::uint64_t, ModelParams>>& uploads,
                             const std::vector<ReportSummary>& reports,
                             const FixedPointParams& fp, const SpongeParams& sponge) {
    fp.validate();
    const Field& field = *fp.field;
    std::unordered_map<std::uint64_t, const ModelParams*> by_id;
    for (const auto& [id, model] : uploads) by_id.emplace(id, &model);
    std::unordered_map<std::uint64_t, const ReportSummary*> report_by_id;
    for (const ReportSummary& r : reports) report_by_id.emplace(r.client_id, &r);

    AuditResult out;
    for (std::uint64_t id : candidates) {
        AuditEntry entry{id, AuditOutcome::kOk};
        auto up = by_id.find(id);
        auto rep = report_by_id.find(id);
        if (up == by_id.end()) {
            entry.outcome = AuditOutcome::kMissingUpload;
        } else if (rep == report_by_id.end()) {
            entry.outcome = AuditOutcome::kHashMismatch;  // nothing attested at all
        } else {
            QuantizedVector q = quantize(up->second->flat, fp).vec;
            Fe digest = sponge_hash(field, sponge, q.elems);
            if (digest != rep->second->statement.model_digest)
                entry.outcome = AuditOutcome::kHashMismatch;
        }
        (entry.outcome == AuditOutcome::kOk ? out.survivors : out.removed).push_back(id);
        out.entries.push_back(entry);
    }
    std::sort(out.survivors.begin(), out.survivors.end());
    std::sort(out.removed.begin(), out.removed.end());
    return out;
}

AggregateResult aggregate(std::span<const ModelParams* const> models,
                          std::span<const std::size_t> sample_counts) {
    if (models.empty()) throw ConfigError("nothing to aggregate");
    if (models.size() != sample_counts.size())
        throw DimensionMismatch("model/count lengths disagree");
    std::size_t total = 0;
    for (std::size_t n : sample_counts) total += n;
    if (total == 0) throw ConfigError("total sample count is zero");

    const ModelParams& base = *models[0];
    for (const ModelParams* m : models)
        if (m->shape != base.shape || m->flat.size() != base.flat.size())
            throw DimensionMismatch("aggregating models of different shapes");

    AggregateResult out;
    out.model = base;
    out.weights.reserve(models.size());
    for (std::size_t k = 0; k < models.size(); ++k) {
        double alpha = double(sample_counts[k]) / double(total);
        out.weights.push_back(alpha);
        if (k == 0) continue;  // base contributes via the carried copy
        const std::vector<double>& mk = models[k]->flat;
        for (std::size_t i = 0; i < mk.size(); ++i)
            out.model.flat[i] += alpha * (mk[i] - base.flat[i]);
    }
    // Fold the base's own weight: w = base + sum_{k>0} a_k (m_k - base)
    // assumes sum a = 1, which holds because a_0 covers the remainder.
    return out;
}

std::vector<std::uint64_t> random_subset(std::span<const std::uint64_t> ids, std::size_t n,
                                         Rng& rng) {
    std::vector<std::uint64_t> pool(ids.begin(), ids.end());
    n = std::min(n, pool.size());
    for (std::size_t i = 0; i < n; ++i)
        std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
    pool.resize(n);
    std::sort(pool.begin(), pool.end());
    return pool;
}

TrainingResult run_training(const std::vector<ClientProfile>& clients, const ServerConfig& cfg,
                            const KeyPair& keys) {
    return run_impl(clients, cfg, keys, SelectionMode::kVerified);
}

TrainingResult run_training_rand_cs(const std::vector<ClientProfile>& clients,
                                    const ServerConfig& cfg, const KeyPair& keys) {
    return run_impl(clients, cfg, keys, SelectionMode::kRandom);
}

}  // namespace vcsfl
