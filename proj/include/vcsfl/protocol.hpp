#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vcsfl/attestation.hpp"
#include "vcsfl/circuit.hpp"
#include "vcsfl/learning.hpp"

namespace vcsfl {

// Default bound on |reported - recomputed| cosine before a report is
// thrown out as inconsistent.
inline constexpr double kDefaultMetricTolerance = 0x1p-10;

// Modeled wire cost of one metric report in the succinct deployment:
// 8-byte client id + 8-byte cosine + 4 x 32-byte public statement +
// 128-byte proof.  Replay proofs are transcript-sized and are accounted
// separately (see ResultRow.proof_bytes); this constant is what the
// bandwidth ledger charges per report.
inline constexpr std::uint64_t kReportWireBytes = 8 + 8 + 4 * 32 + 128;

enum class ClientBehavior : std::uint8_t {
    kHonest = 0,
    kMetricForger = 1,   // inflates the reported cosine, keeps the real proof
    kModelSwapper = 2,   // honest report, uploads a different model
    kInvalidProof = 3,   // submits a proof that cannot verify
};
const char* behavior_name(ClientBehavior b);

struct ClientProfile {
    std::uint64_t id = 0;
    Dataset dataset;
    // Aggregation weight numerator; 0 means "use dataset.size()".
    std::size_t sample_count = 0;
    ClientBehavior behavior = ClientBehavior::kHonest;

    std::size_t effective_samples() const {
        return sample_count ? sample_count : dataset.size();
    }
};

struct MetricReport {
    std::uint64_t client_id = 0;
    double cosine = 0.0;
    PublicStatement statement;
    Proof proof;
    bool saturation_warning = false;  // >1% of weights clipped by quantization
};

// What a round archives per report: everything except the bulky replay
// proof payload, which is dropped once verification has run.
struct ReportSummary {
    std::uint64_t client_id = 0;
    double cosine = 0.0;
    PublicStatement statement;
    bool saturation_warning = false;
    std::uint64_t proof_wire_bytes = 0;
};
ReportSummary summarize(const MetricReport& report);

// Server-side per-round benchmark state: the model trained on the root
// dataset, its quantization, the sponge digest that pins this round's
// benchmark, and the decoded squared norm used to recompute cosines.
struct BenchmarkState {
    ModelParams model;
    QuantizedVector quantized;
    Fe ws_digest;
    double norm_sq = 0.0;
};

enum class Verdict : std::uint8_t {
    kAccepted = 0,
    kStaleBenchmark = 1,    // statement pins a digest other than this round's
    kMetricOutOfRange = 2,  // recomputed cosine not a number in [-1, 1]
    kProofRejected = 3,     // attestation failed to verify
    kMetricMismatch = 4,    // |reported - recomputed| above tolerance
};
const char* verdict_name(Verdict v);

struct ReportVerdict {
    std::uint64_t client_id = 0;
    Verdict verdict = Verdict::kAccepted;
    std::string reason;
    // Cosine the server recomputed from the proved statement (NaN when the
    // statement could not be decoded).
    double recomputed = 0.0;
};

enum class AuditOutcome : std::uint8_t {
    kOk = 0,
    kHashMismatch = 1,   // uploaded weights hash differently than attested
    kMissingUpload = 2,  // selected client never uploaded
};
const char* audit_name(AuditOutcome a);

struct AuditEntry {
    std::uint64_t client_id = 0;
    AuditOutcome outcome = AuditOutcome::kOk;
};

// Everything the server remembers about one round.
struct RoundRecord {
    std::size_t round_index = 0;  // 1-based
    ModelParams benchmark;
    Fe ws_digest;
    std::vector<ReportSummary> reports;
    std::vector<ReportVerdict> verdicts;  // empty under random selection
    std::vector<std::uint64_t> verified_ids;
    std::vector<std::uint64_t> candidate_set;  // notified clients, sorted by id
    std::vector<AuditEntry> audits;
    std::vector<std::uint64_t> removed_at_upload;
    bool empty_selection = false;
    // Uploads from notified clients (id, weights), id-sorted.
    std::vector<std::pair<std::uint64_t, ModelParams>> uploads;
    // Aggregation weights for audit survivors (id, n_k / sum n).
    std::vector<std::pair<std::uint64_t, double>> weights;
    ModelParams global_after;
    double accuracy = 0.0;
    std::uint64_t upload_bytes = 0;  // |candidate_set| * d * 8
    std::uint64_t report_bytes = 0;  // K * kReportWireBytes
};

struct ServerConfig {
    std::size_t n_select = 4;
    std::size_t rounds = 5;
    ModelShape shape;
    Dataset root_dataset;  // server-held benchmark data
    Dataset eval_dataset;  // held-out accuracy measurements
    TrainConfig client_train;
    TrainConfig benchmark_train;  // epochs defaults to 1
    FixedPointParams fp;
    SpongeParams sponge;
    double metric_tolerance = kDefaultMetricTolerance;
    double init_scale = 0.05;  // stddev of the round-0 global model
    std::uint64_t seed = 1;
    enum class Aggregation : std::uint8_t { kSampleSizeWeighted = 0 };
    Aggregation aggregation = Aggregation::kSampleSizeWeighted;

    void validate() const;
};

struct TrainingResult {
    ModelParams initial_model;  // seeded w^0 the first round trained from
    std::vector<RoundRecord> rounds;
    ModelParams final_model;
    double final_accuracy = 0.0;
};

struct ClientStepResult {
    MetricReport report;
    ModelParams trained;
    ModelParams upload;  // differs from trained only for kModelSwapper
};

// Decoded squared norm of a quantized vector, exact in 128-bit integers.
double quantized_norm_sq(const QuantizedVector& q);

// Server-side cosine recovery from the proved statement plus the server's
// own benchmark norm: D / sqrt(A * B).  Returns NaN whenever the decoded
// values cannot form a valid cosine.
double statement_cosine(const Field& field, const PublicStatement& st, double bench_norm_sq);

// Trains the benchmark from the previous global model on the root dataset
// and derives the round's digest and squared norm.
BenchmarkState server_benchmark_step(const ModelParams& w_prev, const Dataset& root,
                                     const TrainConfig& cfg, const FixedPointParams& fp,
                                     const SpongeParams& sponge);

// One client's round: local training from w_prev, quantization, witness +
// proof against the benchmark, cosine report, then the behavior twist.
ClientStepResult client_step(const ClientProfile& client, const ModelParams& w_prev,
                             const ModelParams& benchmark, const ProvingKey& pk,
                             const TrainConfig& train_cfg);

struct SelectionResult {
    std::vector<ReportVerdict> verdicts;
    std::vector<std::uint64_t> verified_ids;   // accepted, id-sorted
    std::vector<std::uint64_t> candidate_set;  // top n by recomputed cosine, id-sorted
};

// Checks every report (benchmark freshness, statement sanity, proof,
// metric consistency) and ranks survivors by recomputed cosine descending
// with ties to the lower client id.  Throws EmptySelection when nothing
// survives.  Never throws on adversarial report contents.
SelectionResult server_select(const std::vector<MetricReport>& reports,
                              const VerifyingKey& vk, const BenchmarkState& bench,
                              std::size_t n_select, double tolerance);

// Pure ranking rule used by server_select, exposed for property tests:
// accepted verdicts ordered by (recomputed desc, id asc), truncated to n.
std::vector<std::uint64_t> rank_accepted(const std::vector<ReportVerdict>& verdicts,
                                         std::size_t n_select);

struct AuditResult {
    std::vector<AuditEntry> entries;
    std::vector<std::uint64_t> survivors;  // id-sorted
    std::vector<std::uint64_t> removed;    // id-sorted
};

// Rehashes each candidate's uploaded weights and compares against the
// digest its verified statement committed to.
AuditResult upload_and_audit(const std::vector<std::uint64_t>& candidates,
                             const std::vector<std::pair<std::uint64_t, ModelParams>>& uploads,
                             const std::vector<ReportSummary>& reports,
                             const FixedPointParams& fp, const SpongeParams& sponge);

struct AggregateResult {
    ModelParams model;
    std::vector<double> weights;  // n_k / sum n, aligned with the input order
};

// Sample-size-weighted federated averaging.  Computed as
// base + sum_k alpha_k (w_k - base) so that aggregating identical models
// returns that model bit for bit.
AggregateResult aggregate(std::span<const ModelParams* const> models,
                          std::span<const std::size_t> sample_counts);

// Uniform n-subset of ids without replacement (partial Fisher-Yates),
// returned id-sorted.
std::vector<std::uint64_t> random_subset(std::span<const std::uint64_t> ids,
                                         std::size_t n, Rng& rng);

// Full verified-selection training loop.  Keys must be for a circuit whose
// dimension equals shape.param_count().  Deterministic in (clients, cfg).
TrainingResult run_training(const std::vector<ClientProfile>& clients,
                            const ServerConfig& cfg, const KeyPair& keys);

// Baseline: identical pipeline but the candidate set is a uniform random
// n-subset each round; reports are not checked for selection, yet uploads
// still face the hash audit.
TrainingResult run_training_rand_cs(const std::vector<ClientProfile>& clients,
                                    const ServerConfig& cfg, const KeyPair& keys);

}  // namespace vcsfl
