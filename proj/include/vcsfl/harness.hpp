#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "vcsfl/protocol.hpp"

namespace vcsfl {

enum class Scenario : std::uint8_t {
    kCircuitScaling = 0,  // size/time vs d sweep, no training
    kSelectionSweep = 1,  // final accuracy vs n_select
    kVeriVsRand = 2,      // verified vs random selection, paired seeds
    kAdversaryAudit = 3,  // adversarial mix exclusion accounting
};
const char* scenario_name(Scenario s);
Scenario parse_scenario(const std::string& name);  // throws ConfigError

// Experiment description, loadable from a JSON file.  Every field has a
// desk-scale default; unknown keys are rejected so typos surface early.
struct ExperimentConfig {
    int config_version = 1;
    Scenario scenario = Scenario::kCircuitScaling;

    // Field / circuit / attestation.
    std::string field_modulus;  // decimal; empty selects the default curve order
    unsigned frac_bits = 16;
    unsigned int_bits = 8;
    std::uint64_t d_max = 4096;
    std::uint32_t sponge_rounds = 110;
    std::uint32_t security_bits = 128;
    std::string backend = "replay";  // "replay" or "snark"

    // Sweep axes.
    std::vector<std::uint64_t> model_sizes = {8, 16, 32, 64, 128, 256, 512, 1024, 2048, 4096};
    std::vector<std::size_t> n_values = {4, 8, 12, 16, 20};
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
    int timing_reps = 5;  // median-of-5 with min/max

    // Federation model and data.
    std::size_t input_dim = 64;
    std::size_t hidden_dim = 14;
    std::size_t num_classes = 10;
    std::string dataset_source = "synthetic";  // "synthetic" or "idx"
    std::string idx_images;
    std::string idx_labels;
    std::size_t samples_per_client = 600;
    std::size_t root_samples = 400;
    std::size_t eval_samples = 1000;
    std::vector<double> noise_levels = {0.0, 0.3, 0.6, 1.0};
    std::size_t clients_per_level = 5;
    // Optional explicit per-client noise; overrides the level grid.
    std::vector<double> client_sigmas;
    // AdversaryAudit behavior mix.  Forgers take the noisiest (highest)
    // ids, swappers the cleanest (lowest) ids, invalid provers follow the
    // swappers; everyone else is honest.
    std::size_t forgers = 4;
    std::size_t swappers = 2;
    std::size_t invalid_provers = 1;

    std::size_t rounds = 10;
    std::size_t n_select = 4;  // used by VeriVsRand and AdversaryAudit
    TrainConfig client_train;
    TrainConfig benchmark_train;
    double init_scale = 0.02;
    double metric_tolerance = kDefaultMetricTolerance;
    std::size_t parallelism = 1;  // sweep points run in order; kept for config compatibility
    bool write_transcripts = false;

    ModelShape shape() const { return ModelShape{input_dim, hidden_dim, num_classes}; }
    void validate() const;

    static ExperimentConfig from_json(const std::string& text);
    static ExperimentConfig load(const std::string& path);
    std::string to_json() const;  // canonical form; digest() hashes exactly this
    std::string digest() const;   // SHA-256 hex of to_json()
};

struct TimingStats {
    double med_ms = 0.0;
    double min_ms = 0.0;
    double max_ms = 0.0;
};

// One measurement row.  Timing columns are wall-clock and therefore the
// only nondeterministic fields; everything else is a pure function of the
// config and seed.
struct ResultRow {
    std::string scenario;
    std::string mode;       // "veri", "rand", or "" when not applicable
    std::string sweep_key;  // "d=8", "n=4", or "seed=7"
    std::uint64_t seed = 0;
    std::string config_digest;
    std::string backend;
    std::uint64_t model_size = 0;
    std::size_t n_select = 0;
    std::uint64_t constraint_count = 0;
    std::uint64_t key_bytes = 0;
    std::uint64_t proof_bytes = 0;
    TimingStats keygen_ms, prove_ms, verify_ms;
    std::vector<double> round_accuracies;  // semicolon-joined in the CSV
    double final_accuracy = 0.0;
    bool has_accuracy = false;  // false leaves the accuracy cells empty
    std::uint64_t upload_bytes = 0;
    std::uint64_t report_bytes = 0;
    std::uint64_t adv_in_agg = 0;       // adversarial ids that reached aggregation
    std::uint64_t swapper_selected = 0;  // (round, swapper) selection events
    std::uint64_t swapper_removed = 0;   // (round, swapper) audit removals
};

// Fixed CSV schema; the header line is emitted verbatim.  The *_ms_* nine
// are the nondeterministic timing columns.
extern const char* const kCsvHeader;

void emit_csv(const std::vector<ResultRow>& rows, std::ostream& out);
void emit_csv_file(const std::vector<ResultRow>& rows, const std::string& path);
std::vector<ResultRow> parse_csv(std::istream& in);  // throws FormatError
std::vector<ResultRow> parse_csv_file(const std::string& path);

// Writes a matplotlib script that renders the four standard figures
// (size vs d, time vs d, accuracy vs N, verified-vs-random curves) from a
// results CSV sitting next to it.
void emit_plot_script(const std::string& path, const std::string& csv_name);

struct ExperimentOutput {
    std::vector<ResultRow> rows;
    std::vector<std::string> transcript_files;
    std::vector<std::string> warnings;
};

// Runs the configured scenario, writes results.csv and plots.py (plus
// transcripts when enabled) into out_dir, and returns the rows.
ExperimentOutput run_experiment(const ExperimentConfig& cfg, const std::string& out_dir,
                                std::ostream* log = nullptr);

// Client roster for one federation seed: ids 1..K, per-client noise from
// client_sigmas or the level grid, adversarial behaviors under
// AdversaryAudit only.  IDX sources shard one file pair round-robin
// across clients, root, and eval; on failure the synthetic generator
// takes over with a warning.
std::vector<ClientProfile> build_clients(const ExperimentConfig& cfg, std::uint64_t seed,
                                         std::vector<std::string>* warnings);

// Server-side config (root/eval data, shapes, training knobs) for one seed.
ServerConfig build_server_config(const ExperimentConfig& cfg, std::uint64_t seed,
                                 std::size_t n_select, std::vector<std::string>* warnings);

}  // namespace vcsfl
