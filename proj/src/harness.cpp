#include "vcsfl/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_set>

#include "json.hpp"

#include "vcsfl/attestation.hpp"
#include "vcsfl/errors.hpp"
#include "vcsfl/sponge.hpp"
#include "vcsfl/transcript.hpp"

namespace vcsfl {
namespace {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

constexpr std::uint64_t kTagData = 0x64617461;    // "data"
constexpr std::uint64_t kTagRoot = 0x726f6f74;    // "root"
constexpr std::uint64_t kTagEval = 0x6576616c;    // "eval"
constexpr std::uint64_t kTagNoise = 0x6e6f6973;   // "nois"
constexpr std::uint64_t kTagVectors = 0x76656373;  // "vecs"

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void logf(std::ostream* log, const std::string& line) {
    if (log) *log << line << std::endl;
}

template <class F>
TimingStats time_reps(int reps, F&& fn) {
    std::vector<double> ms;
    ms.reserve(static_cast<std::size_t>(reps));
    for (int i = 0; i < reps; ++i) {
        auto t0 = std::chrono::steady_clock::now();
        fn();
        auto t1 = std::chrono::steady_clock::now();
        ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    std::sort(ms.begin(), ms.end());
    const std::size_t n = ms.size();
    TimingStats st;
    st.med_ms = (n % 2 == 1) ? ms[n / 2] : 0.5 * (ms[n / 2 - 1] + ms[n / 2]);
    st.min_ms = ms.front();
    st.max_ms = ms.back();
    return st;
}

ordered_json train_to_json(const TrainConfig& t) {
    ordered_json j;
    j["epochs"] = t.epochs;
    j["batch_size"] = t.batch_size;
    j["lr"] = t.lr;
    j["sce_alpha"] = t.sce_alpha;
    j["sce_beta"] = t.sce_beta;
    j["log_clamp"] = t.log_clamp;
    return j;
}

TrainConfig train_from_json(const ordered_json& j, const std::string& where) {
    static const std::set<std::string> known = {"epochs",    "batch_size", "lr",
                                                "sce_alpha", "sce_beta",   "log_clamp"};
    if (!j.is_object()) throw ConfigError(where + " must be an object");
    for (const auto& item : j.items()) {
        if (!known.count(item.key()))
            throw ConfigError("unknown config key: " + where + "." + item.key());
    }
    TrainConfig t;
    if (j.contains("epochs")) t.epochs = j.at("epochs").get<std::size_t>();
    if (j.contains("batch_size")) t.batch_size = j.at("batch_size").get<std::size_t>();
    if (j.contains("lr")) t.lr = j.at("lr").get<double>();
    if (j.contains("sce_alpha")) t.sce_alpha = j.at("sce_alpha").get<double>();
    if (j.contains("sce_beta")) t.sce_beta = j.at("sce_beta").get<double>();
    if (j.contains("log_clamp")) t.log_clamp = j.at("log_clamp").get<double>();
    return t;
}

// Per-client noise levels, index 0 = client id 1.
std::vector<double> sigma_grid(const ExperimentConfig& cfg) {
    if (!cfg.client_sigmas.empty()) return cfg.client_sigmas;
    std::vector<double> grid;
    grid.reserve(cfg.noise_levels.size() * cfg.clients_per_level);
    for (double level : cfg.noise_levels)
        for (std::size_t i = 0; i < cfg.clients_per_level; ++i) grid.push_back(level);
    return grid;
}

Dataset shard_dataset(const Dataset& full, std::size_t slot, std::size_t stride, std::size_t cap,
                      const char* what) {
    Dataset out;
    out.input_dim = full.input_dim;
    out.num_classes = full.num_classes;
    out.noise_sigma = full.noise_sigma;
    for (std::size_t i = slot; i < full.size() && out.labels.size() < cap; i += stride) {
        const double* row = full.row(i);
        out.features.insert(out.features.end(), row, row + full.input_dim);
        out.labels.push_back(full.labels[i]);
    }
    if (out.labels.empty())
        throw ConfigError(std::string("idx shard for ") + what + " came up empty");
    return out;
}

// Loads the configured IDX pair once; returns false (after logging) when
// the files are unusable so the caller can fall back to synthetic data.
bool try_load_idx(const ExperimentConfig& cfg, Dataset* out, std::vector<std::string>* warnings) {
    if (cfg.dataset_source != "idx") return false;
    try {
        Dataset full = load_idx(cfg.idx_images, cfg.idx_labels, cfg.input_dim);
        if (full.num_classes > cfg.num_classes)
            throw ConfigError("idx labels use " + std::to_string(full.num_classes) +
                              " classes but the model has " + std::to_string(cfg.num_classes));
        full.num_classes = cfg.num_classes;
        *out = std::move(full);
        return true;
    } catch (const std::exception& e) {
        if (warnings)
            warnings->push_back(std::string("idx source unavailable (") + e.what() +
                                "); falling back to synthetic data");
        return false;
    }
}

std::string join_path(const std::string& dir, const std::string& name) {
    return (fs::path(dir) / name).string();
}

void require_no_comma(const std::string& s, const char* col) {
    if (s.find(',') != std::string::npos)
        throw FormatError(std::string("csv field ") + col + " may not contain a comma");
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        std::size_t pos = line.find(',', start);
        if (pos == std::string::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

std::uint64_t parse_u64_cell(const std::string& s, const char* col) {
    if (s.empty()) throw FormatError(std::string("empty numeric csv cell in column ") + col);
    std::size_t used = 0;
    std::uint64_t v = 0;
    try {
        v = std::stoull(s, &used, 10);
    } catch (const std::exception&) {
        throw FormatError(std::string("bad integer in csv column ") + col + ": " + s);
    }
    if (used != s.size())
        throw FormatError(std::string("bad integer in csv column ") + col + ": " + s);
    return v;
}

double parse_double_cell(const std::string& s, const char* col) {
    if (s.empty()) throw FormatError(std::string("empty numeric csv cell in column ") + col);
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        throw FormatError(std::string("bad number in csv column ") + col + ": " + s);
    }
    if (used != s.size())
        throw FormatError(std::string("bad number in csv column ") + col + ": " + s);
    return v;
}

}  // namespace

const char* scenario_name(Scenario s) {
    switch (s) {
        case Scenario::kCircuitScaling: return "circuit-scaling";
        case Scenario::kSelectionSweep: return "selection-sweep";
        case Scenario::kVeriVsRand: return "veri-vs-rand";
        case Scenario::kAdversaryAudit: return "adversary-audit";
    }
    throw ConfigError("unknown scenario value");
}

Scenario parse_scenario(const std::string& name) {
    for (Scenario s : {Scenario::kCircuitScaling, Scenario::kSelectionSweep,
                       Scenario::kVeriVsRand, Scenario::kAdversaryAudit}) {
        if (name == scenario_name(s)) return s;
    }
    throw ConfigError("unknown scenario \"" + name +
                      "\" (expected circuit-scaling, selection-sweep, veri-vs-rand, or "
                      "adversary-audit)");
}

void ExperimentConfig::validate() const {
    if (config_version != 1)
        throw ConfigError("unsupported config_version " + std::to_string(config_version));
    if (backend != "replay" && backend != "snark")
        throw ConfigError("backend must be \"replay\" or \"snark\", got \"" + backend + "\"");
    if (timing_reps < 1) throw ConfigError("timing_reps must be at least 1");
    if (frac_bits == 0 || int_bits == 0) throw ConfigError("fixed-point bit widths must be positive");
    if (dataset_source != "synthetic" && dataset_source != "idx")
        throw ConfigError("dataset_source must be \"synthetic\" or \"idx\"");
    if (dataset_source == "idx" && (idx_images.empty() || idx_labels.empty()))
        throw ConfigError("idx dataset_source needs idx_images and idx_labels paths");
    if (input_dim == 0 || num_classes < 2)
        throw ConfigError("model needs input_dim >= 1 and num_classes >= 2");
    if (samples_per_client == 0 || root_samples == 0 || eval_samples == 0)
        throw ConfigError("sample counts must be positive");
    if (rounds == 0) throw ConfigError("rounds must be at least 1");
    if (seeds.empty()) throw ConfigError("at least one seed is required");
    if (!(init_scale > 0.0)) throw ConfigError("init_scale must be positive");
    if (!(metric_tolerance > 0.0)) throw ConfigError("metric_tolerance must be positive");
    if (parallelism == 0) throw ConfigError("parallelism must be at least 1");
    for (double s : client_sigmas)
        if (!(s >= 0.0)) throw ConfigError("client_sigmas entries must be non-negative");
    for (double s : noise_levels)
        if (!(s >= 0.0)) throw ConfigError("noise_levels entries must be non-negative");
    client_train.validate();
    benchmark_train.validate();

    if (scenario == Scenario::kCircuitScaling) {
        if (model_sizes.empty()) throw ConfigError("circuit-scaling needs model_sizes");
        for (std::uint64_t d : model_sizes) {
            if (d == 0) throw ConfigError("model_sizes entries must be positive");
            if (d > d_max)
                throw ConfigError("model size " + std::to_string(d) + " exceeds d_max " +
                                  std::to_string(d_max));
        }
        return;  // the training knobs below are unused
    }

    const std::uint64_t d = shape().param_count();
    if (d > d_max)
        throw ConfigError("model shape needs d=" + std::to_string(d) + " but d_max is " +
                          std::to_string(d_max));
    const std::size_t clients = sigma_grid(*this).size();
    if (clients == 0) throw ConfigError("the client roster is empty");
    if (scenario == Scenario::kSelectionSweep) {
        if (n_values.empty()) throw ConfigError("selection-sweep needs n_values");
        for (std::size_t n : n_values) {
            if (n == 0 || n > clients)
                throw ConfigError("n_values entry " + std::to_string(n) +
                                  " is outside 1.." + std::to_string(clients));
        }
    } else {
        if (n_select == 0 || n_select > clients)
            throw ConfigError("n_select " + std::to_string(n_select) + " is outside 1.." +
                              std::to_string(clients));
    }
    if (scenario == Scenario::kAdversaryAudit) {
        if (forgers + swappers + invalid_provers > clients)
            throw ConfigError("adversary counts exceed the client roster");
        if (forgers + swappers + invalid_provers == clients)
            throw ConfigError("at least one honest client is required");
    }
}

std::string ExperimentConfig::to_json() const {
    ordered_json j;
    j["config_version"] = config_version;
    j["scenario"] = scenario_name(scenario);
    j["field_modulus"] = field_modulus;
    j["frac_bits"] = frac_bits;
    j["int_bits"] = int_bits;
    j["d_max"] = d_max;
    j["sponge_rounds"] = sponge_rounds;
    j["security_bits"] = security_bits;
    j["backend"] = backend;
    j["model_sizes"] = model_sizes;
    j["n_values"] = n_values;
    j["seeds"] = seeds;
    j["timing_reps"] = timing_reps;
    j["input_dim"] = input_dim;
    j["hidden_dim"] = hidden_dim;
    j["num_classes"] = num_classes;
    j["dataset_source"] = dataset_source;
    j["idx_images"] = idx_images;
    j["idx_labels"] = idx_labels;
    j["samples_per_client"] = samples_per_client;
    j["root_samples"] = root_samples;
    j["eval_samples"] = eval_samples;
    j["noise_levels"] = noise_levels;
    j["clients_per_level"] = clients_per_level;
    j["client_sigmas"] = client_sigmas;
    j["forgers"] = forgers;
    j["swappers"] = swappers;
    j["invalid_provers"] = invalid_provers;
    j["rounds"] = rounds;
    j["n_select"] = n_select;
    j["client_train"] = train_to_json(client_train);
    j["benchmark_train"] = train_to_json(benchmark_train);
    j["init_scale"] = init_scale;
    j["metric_tolerance"] = metric_tolerance;
    j["parallelism"] = parallelism;
    j["write_transcripts"] = write_transcripts;
    return j.dump();
}

std::string ExperimentConfig::digest() const {
    const std::string canon = to_json();
    return sha256_hex(std::span<const std::uint8_t>(
        reinterpret_cast<const std::uint8_t*>(canon.data()), canon.size()));
}

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config is not valid json: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config root must be a json object");
    static const std::set<std::string> known = {
        "config_version", "scenario",       "field_modulus",   "frac_bits",
        "int_bits",       "d_max",          "sponge_rounds",   "security_bits",
        "backend",        "model_sizes",    "n_values",        "seeds",
        "timing_reps",    "input_dim",      "hidden_dim",      "num_classes",
        "dataset_source", "idx_images",     "idx_labels",      "samples_per_client",
        "root_samples",   "eval_samples",   "noise_levels",    "clients_per_level",
        "client_sigmas",  "forgers",        "swappers",        "invalid_provers",
        "rounds",         "n_select",       "client_train",    "benchmark_train",
        "init_scale",     "metric_tolerance", "parallelism",   "write_transcripts"};
    for (const auto& item : j.items()) {
        if (!known.count(item.key())) throw ConfigError("unknown config key: " + item.key());
    }

    ExperimentConfig cfg;
    try {
        if (j.contains("config_version")) cfg.config_version = j.at("config_version").get<int>();
        if (j.contains("scenario")) cfg.scenario = parse_scenario(j.at("scenario").get<std::string>());
        if (j.contains("field_modulus")) cfg.field_modulus = j.at("field_modulus").get<std::string>();
        if (j.contains("frac_bits")) cfg.frac_bits = j.at("frac_bits").get<unsigned>();
        if (j.contains("int_bits")) cfg.int_bits = j.at("int_bits").get<unsigned>();
        if (j.contains("d_max")) cfg.d_max = j.at("d_max").get<std::uint64_t>();
        if (j.contains("sponge_rounds")) cfg.sponge_rounds = j.at("sponge_rounds").get<std::uint32_t>();
        if (j.contains("security_bits")) cfg.security_bits = j.at("security_bits").get<std::uint32_t>();
        if (j.contains("backend")) cfg.backend = j.at("backend").get<std::string>();
        if (j.contains("model_sizes"))
            cfg.model_sizes = j.at("model_sizes").get<std::vector<std::uint64_t>>();
        if (j.contains("n_values")) cfg.n_values = j.at("n_values").get<std::vector<std::size_t>>();
        if (j.contains("seeds")) cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
        if (j.contains("timing_reps")) cfg.timing_reps = j.at("timing_reps").get<int>();
        if (j.contains("input_dim")) cfg.input_dim = j.at("input_dim").get<std::size_t>();
        if (j.contains("hidden_dim")) cfg.hidden_dim = j.at("hidden_dim").get<std::size_t>();
        if (j.contains("num_classes")) cfg.num_classes = j.at("num_classes").get<std::size_t>();
        if (j.contains("dataset_source"))
            cfg.dataset_source = j.at("dataset_source").get<std::string>();
        if (j.contains("idx_images")) cfg.idx_images = j.at("idx_images").get<std::string>();
        if (j.contains("idx_labels")) cfg.idx_labels = j.at("idx_labels").get<std::string>();
        if (j.contains("samples_per_client"))
            cfg.samples_per_client = j.at("samples_per_client").get<std::size_t>();
        if (j.contains("root_samples")) cfg.root_samples = j.at("root_samples").get<std::size_t>();
        if (j.contains("eval_samples")) cfg.eval_samples = j.at("eval_samples").get<std::size_t>();
        if (j.contains("noise_levels"))
            cfg.noise_levels = j.at("noise_levels").get<std::vector<double>>();
        if (j.contains("clients_per_level"))
            cfg.clients_per_level = j.at("clients_per_level").get<std::size_t>();
        if (j.contains("client_sigmas"))
            cfg.client_sigmas = j.at("client_sigmas").get<std::vector<double>>();
        if (j.contains("forgers")) cfg.forgers = j.at("forgers").get<std::size_t>();
        if (j.contains("swappers")) cfg.swappers = j.at("swappers").get<std::size_t>();
        if (j.contains("invalid_provers"))
            cfg.invalid_provers = j.at("invalid_provers").get<std::size_t>();
        if (j.contains("rounds")) cfg.rounds = j.at("rounds").get<std::size_t>();
        if (j.contains("n_select")) cfg.n_select = j.at("n_select").get<std::size_t>();
        if (j.contains("client_train"))
            cfg.client_train = train_from_json(j.at("client_train"), "client_train");
        if (j.contains("benchmark_train"))
            cfg.benchmark_train = train_from_json(j.at("benchmark_train"), "benchmark_train");
        if (j.contains("init_scale")) cfg.init_scale = j.at("init_scale").get<double>();
        if (j.contains("metric_tolerance"))
            cfg.metric_tolerance = j.at("metric_tolerance").get<double>();
        if (j.contains("parallelism")) cfg.parallelism = j.at("parallelism").get<std::size_t>();
        if (j.contains("write_transcripts"))
            cfg.write_transcripts = j.at("write_transcripts").get<bool>();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config field has the wrong type: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return from_json(buf.str());
}

const char* const kCsvHeader =
    "scenario,mode,sweep_key,seed,config_digest,backend,model_size,n_select,"
    "constraint_count,key_bytes,proof_bytes,"
    "keygen_ms_med,keygen_ms_min,keygen_ms_max,"
    "prove_ms_med,prove_ms_min,prove_ms_max,"
    "verify_ms_med,verify_ms_min,verify_ms_max,"
    "round_accuracies,final_accuracy,upload_bytes,report_bytes,"
    "adv_in_agg,swapper_selected,swapper_removed";

void emit_csv(const std::vector<ResultRow>& rows, std::ostream& out) {
    out << kCsvHeader << '\n';
    for (const ResultRow& r : rows) {
        require_no_comma(r.scenario, "scenario");
        require_no_comma(r.mode, "mode");
        require_no_comma(r.sweep_key, "sweep_key");
        require_no_comma(r.backend, "backend");
        std::string accs;
        for (std::size_t i = 0; i < r.round_accuracies.size(); ++i) {
            if (i) accs += ';';
            accs += fmt_double(r.round_accuracies[i]);
        }
        out << r.scenario << ',' << r.mode << ',' << r.sweep_key << ',' << r.seed << ','
            << r.config_digest << ',' << r.backend << ',' << r.model_size << ',' << r.n_select
            << ',' << r.constraint_count << ',' << r.key_bytes << ',' << r.proof_bytes << ','
            << fmt_double(r.keygen_ms.med_ms) << ',' << fmt_double(r.keygen_ms.min_ms) << ','
            << fmt_double(r.keygen_ms.max_ms) << ',' << fmt_double(r.prove_ms.med_ms) << ','
            << fmt_double(r.prove_ms.min_ms) << ',' << fmt_double(r.prove_ms.max_ms) << ','
            << fmt_double(r.verify_ms.med_ms) << ',' << fmt_double(r.verify_ms.min_ms) << ','
            << fmt_double(r.verify_ms.max_ms) << ',' << accs << ','
            << (r.has_accuracy ? fmt_double(r.final_accuracy) : std::string()) << ','
            << r.upload_bytes << ',' << r.report_bytes << ',' << r.adv_in_agg << ','
            << r.swapper_selected << ',' << r.swapper_removed << '\n';
    }
}

void emit_csv_file(const std::vector<ResultRow>& rows, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open csv for writing: " + path);
    emit_csv(rows, out);
    if (!out.good()) throw IoError("csv write failed: " + path);
}

std::vector<ResultRow> parse_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw FormatError("csv input is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kCsvHeader) throw FormatError("csv header does not match the fixed schema");
    std::vector<ResultRow> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> f = split_csv_line(line);
        if (f.size() != 27)
            throw FormatError("csv line " + std::to_string(lineno) + " has " +
                              std::to_string(f.size()) + " fields, expected 27");
        ResultRow r;
        r.scenario = f[0];
        r.mode = f[1];
        r.sweep_key = f[2];
        r.seed = parse_u64_cell(f[3], "seed");
        r.config_digest = f[4];
        r.backend = f[5];
        r.model_size = parse_u64_cell(f[6], "model_size");
        r.n_select = static_cast<std::size_t>(parse_u64_cell(f[7], "n_select"));
        r.constraint_count = parse_u64_cell(f[8], "constraint_count");
        r.key_bytes = parse_u64_cell(f[9], "key_bytes");
        r.proof_bytes = parse_u64_cell(f[10], "proof_bytes");
        r.keygen_ms = {parse_double_cell(f[11], "keygen_ms_med"),
                       parse_double_cell(f[12], "keygen_ms_min"),
                       parse_double_cell(f[13], "keygen_ms_max")};
        r.prove_ms = {parse_double_cell(f[14], "prove_ms_med"),
                      parse_double_cell(f[15], "prove_ms_min"),
                      parse_double_cell(f[16], "prove_ms_max")};
        r.verify_ms = {parse_double_cell(f[17], "verify_ms_med"),
                       parse_double_cell(f[18], "verify_ms_min"),
                       parse_double_cell(f[19], "verify_ms_max")};
        if (!f[20].empty()) {
            std::size_t start = 0;
            while (start <= f[20].size()) {
                std::size_t pos = f[20].find(';', start);
                std::string cell = (pos == std::string::npos) ? f[20].substr(start)
                                                              : f[20].substr(start, pos - start);
                r.round_accuracies.push_back(parse_double_cell(cell, "round_accuracies"));
                if (pos == std::string::npos) break;
                start = pos + 1;
            }
        }
        r.has_accuracy = !f[21].empty();
        if (r.has_accuracy) r.final_accuracy = parse_double_cell(f[21], "final_accuracy");
        r.upload_bytes = parse_u64_cell(f[22], "upload_bytes");
        r.report_bytes = parse_u64_cell(f[23], "report_bytes");
        r.adv_in_agg = parse_u64_cell(f[24], "adv_in_agg");
        r.swapper_selected = parse_u64_cell(f[25], "swapper_selected");
        r.swapper_removed = parse_u64_cell(f[26], "swapper_removed");
        rows.push_back(std::move(r));
    }
    return rows;
}

std::vector<ResultRow> parse_csv_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open csv: " + path);
    return parse_csv(in);
}

void emit_plot_script(const std::string& path, const std::string& csv_name) {
    static const char* const kScript = R"PYEOF(#!/usr/bin/env python3
"""Renders the standard figures from a results CSV sitting next to this script.

Usage: python3 plots.py [results.csv]

The nine *_ms_* columns are wall-clock timings (median/min/max over
repetitions) and vary from run to run; every other column is a
deterministic function of the experiment config and seed.
"""
import csv
import os
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

HERE = os.path.dirname(os.path.abspath(__file__))
CSV = sys.argv[1] if len(sys.argv) > 1 else os.path.join(HERE, "__CSV__")

with open(CSV, newline="") as fh:
    rows = list(csv.DictReader(fh))


def save(fig, name):
    out = os.path.join(HERE, name)
    fig.savefig(out, dpi=144, bbox_inches="tight")
    plt.close(fig)
    print("wrote", out)


scaling = [r for r in rows if r["scenario"] == "circuit-scaling"]
if scaling:
    d = [int(r["model_size"]) for r in scaling]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(d, [int(r["constraint_count"]) for r in scaling], "o-", label="constraints")
    ax.plot(d, [int(r["key_bytes"]) for r in scaling], "s-", label="key bytes")
    ax.plot(d, [int(r["proof_bytes"]) for r in scaling], "^-", label="proof bytes")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("model size d")
    ax.set_ylabel("count / bytes")
    ax.set_title("Attestation size vs model size")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    save(fig, "scaling_size.png")

    fig, ax = plt.subplots(figsize=(6, 4))
    for op in ("keygen", "prove", "verify"):
        med = [float(r[op + "_ms_med"]) for r in scaling]
        lo = [m - float(r[op + "_ms_min"]) for m, r in zip(med, scaling)]
        hi = [float(r[op + "_ms_max"]) - m for m, r in zip(med, scaling)]
        ax.errorbar(d, med, yerr=[lo, hi], marker="o", capsize=3, label=op)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("model size d")
    ax.set_ylabel("wall time (ms)")
    ax.set_title("Attestation time vs model size (median of reps)")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    save(fig, "scaling_time.png")

sweep = [r for r in rows if r["scenario"] == "selection-sweep"]
if sweep:
    by_n = {}
    for r in sweep:
        by_n.setdefault(int(r["n_select"]), []).append(float(r["final_accuracy"]))
    ns = sorted(by_n)
    mean = [sum(by_n[n]) / len(by_n[n]) for n in ns]
    lo = [m - min(by_n[n]) for m, n in zip(mean, ns)]
    hi = [max(by_n[n]) - m for m, n in zip(mean, ns)]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.errorbar(ns, mean, yerr=[lo, hi], marker="o", capsize=3)
    ax.set_xlabel("clients selected per round (N)")
    ax.set_ylabel("final eval accuracy")
    ax.set_title("Accuracy vs selection width (mean over seeds, min/max whiskers)")
    ax.grid(True, alpha=0.3)
    save(fig, "selection_sweep.png")

vvr = [r for r in rows if r["scenario"] == "veri-vs-rand"]
if vvr:
    fig, ax = plt.subplots(figsize=(6, 4))
    for mode, style in (("veri", "o-"), ("rand", "s--")):
        curves = [
            [float(x) for x in r["round_accuracies"].split(";") if x]
            for r in vvr
            if r["mode"] == mode and r["round_accuracies"]
        ]
        if not curves:
            continue
        t = list(range(1, len(curves[0]) + 1))
        mean = [sum(c[i] for c in curves) / len(curves) for i in range(len(curves[0]))]
        ax.plot(t, mean, style, label="%s (mean of %d seeds)" % (mode, len(curves)))
    ax.set_xlabel("round")
    ax.set_ylabel("eval accuracy")
    ax.set_title("Verified vs random selection")
    ax.grid(True, alpha=0.3)
    ax.legend()
    save(fig, "veri_vs_rand.png")

audit = [r for r in rows if r["scenario"] == "adversary-audit"]
if audit:
    fig, ax = plt.subplots(figsize=(6, 4))
    x = list(range(len(audit)))
    ax.bar([i - 0.22 for i in x], [int(r["swapper_selected"]) for r in audit], 0.22,
           label="swapper selected")
    ax.bar(x, [int(r["swapper_removed"]) for r in audit], 0.22, label="swapper removed")
    ax.bar([i + 0.22 for i in x], [int(r["adv_in_agg"]) for r in audit], 0.22,
           label="adversary aggregated")
    ax.set_xticks(x)
    ax.set_xticklabels([r["seed"] for r in audit])
    ax.set_xlabel("seed")
    ax.set_ylabel("events across rounds")
    ax.set_title("Adversary exclusion accounting")
    ax.grid(True, axis="y", alpha=0.3)
    ax.legend()
    save(fig, "adversary_audit.png")

if not rows:
    print("no rows in", CSV)
)PYEOF";
    std::string script(kScript);
    const std::string needle = "__CSV__";
    std::size_t pos = script.find(needle);
    if (pos != std::string::npos) script.replace(pos, needle.size(), csv_name);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open plot script for writing: " + path);
    out << script;
    if (!out.good()) throw IoError("plot script write failed: " + path);
}

std::vector<ClientProfile> build_clients(const ExperimentConfig& cfg, std::uint64_t seed,
                                         std::vector<std::string>* warnings) {
    const std::vector<double> sigmas = sigma_grid(cfg);
    const std::size_t k = sigmas.size();

    Dataset pool;
    const bool idx = try_load_idx(cfg, &pool, warnings);

    std::vector<ClientProfile> clients;
    clients.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
        const std::uint64_t id = static_cast<std::uint64_t>(i) + 1;
        Dataset clean =
            idx ? shard_dataset(pool, i, k + 2, cfg.samples_per_client, "a client")
                : synth_dataset(cfg.samples_per_client, cfg.input_dim, cfg.num_classes,
                                mix_seed(seed, kTagData, id));
        ClientProfile p;
        p.id = id;
        p.dataset = sigmas[i] > 0.0
                        ? add_gaussian_noise(clean, sigmas[i], mix_seed(seed, kTagNoise, id))
                        : std::move(clean);
        p.behavior = ClientBehavior::kHonest;
        clients.push_back(std::move(p));
    }

    // AdversaryAudit roster: forgers sit on the noisiest (highest) ids so
    // their fabricated near-one cosine stays far from the truth; swappers
    // sit on the cleanest (lowest) ids so they actually win selection and
    // exercise the upload audit; invalid provers follow the swappers.
    if (cfg.scenario == Scenario::kAdversaryAudit) {
        for (std::size_t i = 0; i < cfg.forgers; ++i)
            clients[k - 1 - i].behavior = ClientBehavior::kMetricForger;
        for (std::size_t i = 0; i < cfg.swappers; ++i)
            clients[i].behavior = ClientBehavior::kModelSwapper;
        for (std::size_t i = 0; i < cfg.invalid_provers; ++i)
            clients[cfg.swappers + i].behavior = ClientBehavior::kInvalidProof;
    }
    return clients;
}

ServerConfig build_server_config(const ExperimentConfig& cfg, std::uint64_t seed,
                                 std::size_t n_select, std::vector<std::string>* warnings) {
    FieldPtr field =
        cfg.field_modulus.empty() ? Field::create_default() : Field::create(cfg.field_modulus);
    FixedPointParams fp;
    fp.frac_bits = static_cast<int>(cfg.frac_bits);
    fp.int_bits = static_cast<int>(cfg.int_bits);
    fp.d_max = static_cast<std::uint32_t>(cfg.d_max);
    fp.field = field;
    fp.validate();

    ServerConfig scfg;
    scfg.n_select = n_select;
    scfg.rounds = cfg.rounds;
    scfg.shape = cfg.shape();
    scfg.client_train = cfg.client_train;
    scfg.benchmark_train = cfg.benchmark_train;
    scfg.fp = fp;
    scfg.sponge = SpongeParams::derive(field, cfg.sponge_rounds);
    scfg.metric_tolerance = cfg.metric_tolerance;
    scfg.init_scale = cfg.init_scale;
    scfg.seed = seed;

    Dataset pool;
    const std::size_t k = sigma_grid(cfg).size();
    if (try_load_idx(cfg, &pool, warnings)) {
        scfg.root_dataset = shard_dataset(pool, k, k + 2, cfg.root_samples, "the root set");
        scfg.eval_dataset = shard_dataset(pool, k + 1, k + 2, cfg.eval_samples, "the eval set");
    } else {
        scfg.root_dataset = synth_dataset(cfg.root_samples, cfg.input_dim, cfg.num_classes,
                                          mix_seed(seed, kTagRoot, 0));
        scfg.eval_dataset = synth_dataset(cfg.eval_samples, cfg.input_dim, cfg.num_classes,
                                          mix_seed(seed, kTagEval, 0));
    }
    return scfg;
}

namespace {

// Shared bookkeeping for one finished federation run.
ResultRow training_row(const ExperimentConfig& cfg, const std::string& digest,
                       const std::vector<ClientProfile>& clients, const KeyPair& keys,
                       const TrainingResult& res, std::uint64_t seed, std::size_t n_select) {
    ResultRow row;
    row.scenario = scenario_name(cfg.scenario);
    row.seed = seed;
    row.config_digest = digest;
    row.backend = cfg.backend;
    row.model_size = keys.pk.circuit ? keys.pk.circuit->d() : 0;
    row.n_select = n_select;
    if (keys.pk.circuit) row.constraint_count = keys.pk.circuit->num_constraints();
    row.key_bytes = keys.pk.serialized_size();
    row.has_accuracy = true;
    row.final_accuracy = res.final_accuracy;

    std::unordered_set<std::uint64_t> adversaries;
    std::unordered_set<std::uint64_t> swappers;
    for (const ClientProfile& c : clients) {
        if (c.behavior != ClientBehavior::kHonest) adversaries.insert(c.id);
        if (c.behavior == ClientBehavior::kModelSwapper) swappers.insert(c.id);
    }
    for (const RoundRecord& rec : res.rounds) {
        row.round_accuracies.push_back(rec.accuracy);
        row.upload_bytes += rec.upload_bytes;
        row.report_bytes += rec.report_bytes;
        if (row.proof_bytes == 0 && !rec.reports.empty())
            row.proof_bytes = rec.reports.front().proof_wire_bytes;
        for (const auto& [id, alpha] : rec.weights) {
            (void)alpha;
            if (adversaries.count(id)) ++row.adv_in_agg;
        }
        for (std::uint64_t id : rec.candidate_set)
            if (swappers.count(id)) ++row.swapper_selected;
        for (std::uint64_t id : rec.removed_at_upload)
            if (swappers.count(id)) ++row.swapper_removed;
    }
    return row;
}

void run_circuit_scaling(const ExperimentConfig& cfg, const std::string& digest,
                         ExperimentOutput* out, std::ostream* log) {
    FieldPtr field =
        cfg.field_modulus.empty() ? Field::create_default() : Field::create(cfg.field_modulus);
    FixedPointParams fp;
    fp.frac_bits = static_cast<int>(cfg.frac_bits);
    fp.int_bits = static_cast<int>(cfg.int_bits);
    fp.d_max = static_cast<std::uint32_t>(cfg.d_max);
    fp.field = field;
    fp.validate();
    SpongeParams sp = SpongeParams::derive(field, cfg.sponge_rounds);
    AttestationParams att;
    att.backend = cfg.backend == "snark" ? BackendKind::kSnark : BackendKind::kReplay;
    att.security_bits = cfg.security_bits;
    att.validate();

    for (std::uint64_t d : cfg.model_sizes) {
        auto cs = std::make_shared<const ConstraintSystem>(build_metric_circuit(d, fp, sp));
        ResultRow row;
        row.scenario = scenario_name(cfg.scenario);
        row.sweep_key = "d=" + std::to_string(d);
        row.seed = cfg.seeds.front();
        row.config_digest = digest;
        row.backend = cfg.backend;
        row.model_size = d;
        row.constraint_count = cs->num_constraints();

        KeyPair keys;
        row.keygen_ms = time_reps(cfg.timing_reps, [&] { keys = keygen(cs, att); });
        row.key_bytes = keys.pk.serialized_size();

        Rng rng(mix_seed(cfg.seeds.front(), kTagVectors, d));
        std::vector<double> wk(d), ws(d);
        for (double& v : wk) v = rng.uniform() * 2.0 - 1.0;
        for (double& v : ws) v = rng.uniform() * 2.0 - 1.0;
        QuantizeResult qk = quantize(wk, fp);
        QuantizeResult qs = quantize(ws, fp);

        Proof proof;
        PublicStatement st{};
        row.prove_ms = time_reps(cfg.timing_reps, [&] {
            auto [w, x] = generate_witness(*cs, qk.vec, qs.vec);
            st = x;
            proof = prove(keys.pk, w, x);
        });
        row.verify_ms = time_reps(cfg.timing_reps, [&] {
            VerifyResult res = verify(keys.vk, st, proof);
            if (!res.accepted) throw Error("scaling sweep proof rejected: " + res.reason);
        });
        row.proof_bytes = proof.wire_size();
        out->rows.push_back(row);
        logf(log, "circuit-scaling d=" + std::to_string(d) +
                      " constraints=" + std::to_string(row.constraint_count) +
                      " key_bytes=" + std::to_string(row.key_bytes) +
                      " keygen_ms=" + fmt_double(row.keygen_ms.med_ms) +
                      " prove_ms=" + fmt_double(row.prove_ms.med_ms) +
                      " verify_ms=" + fmt_double(row.verify_ms.med_ms));
    }
}

KeyPair federation_keys(const ExperimentConfig& cfg, const ServerConfig& scfg) {
    auto cs = std::make_shared<const ConstraintSystem>(
        build_metric_circuit(scfg.shape.param_count(), scfg.fp, scfg.sponge));
    AttestationParams att;
    att.backend = cfg.backend == "snark" ? BackendKind::kSnark : BackendKind::kReplay;
    att.security_bits = cfg.security_bits;
    att.validate();
    return keygen(cs, att);
}

void run_federations(const ExperimentConfig& cfg, const std::string& digest,
                     const std::string& out_dir, ExperimentOutput* out, std::ostream* log) {
    // One circuit and key pair serve every sweep point: d is fixed by the
    // model shape and keys do not depend on the seed.
    ServerConfig probe = build_server_config(cfg, cfg.seeds.front(), 1, &out->warnings);
    const KeyPair keys = federation_keys(cfg, probe);

    auto one_run = [&](std::uint64_t seed, std::size_t n, bool verified,
                       const std::string& sweep_key, const std::string& mode,
                       const std::string& transcript_tag) {
        std::vector<ClientProfile> clients = build_clients(cfg, seed, &out->warnings);
        ServerConfig scfg = build_server_config(cfg, seed, n, nullptr);
        TrainingResult res = verified ? run_training(clients, scfg, keys)
                                      : run_training_rand_cs(clients, scfg, keys);
        ResultRow row = training_row(cfg, digest, clients, keys, res, seed, n);
        row.sweep_key = sweep_key;
        row.mode = mode;
        out->rows.push_back(row);
        if (cfg.write_transcripts) {
            const std::string name = "transcript-" + transcript_tag + ".jsonl";
            const std::string path = join_path(out_dir, name);
            write_transcript_file(path, clients, scfg, res, verified);
            out->transcript_files.push_back(name);
        }
        logf(log, std::string(scenario_name(cfg.scenario)) + " " + sweep_key +
                      (mode.empty() ? "" : " mode=" + mode) + " seed=" + std::to_string(seed) +
                      " final_accuracy=" + fmt_double(res.final_accuracy));
    };

    switch (cfg.scenario) {
        case Scenario::kSelectionSweep:
            for (std::size_t n : cfg.n_values)
                for (std::uint64_t seed : cfg.seeds)
                    one_run(seed, n, true, "n=" + std::to_string(n), "veri",
                            "selection-sweep-n" + std::to_string(n) + "-seed" +
                                std::to_string(seed));
            break;
        case Scenario::kVeriVsRand:
            for (std::uint64_t seed : cfg.seeds) {
                one_run(seed, cfg.n_select, true, "n=" + std::to_string(cfg.n_select), "veri",
                        "veri-vs-rand-veri-seed" + std::to_string(seed));
                one_run(seed, cfg.n_select, false, "n=" + std::to_string(cfg.n_select), "rand",
                        "veri-vs-rand-rand-seed" + std::to_string(seed));
            }
            break;
        case Scenario::kAdversaryAudit:
            for (std::uint64_t seed : cfg.seeds)
                one_run(seed, cfg.n_select, true, "seed=" + std::to_string(seed), "veri",
                        "adversary-audit-seed" + std::to_string(seed));
            break;
        case Scenario::kCircuitScaling:
            throw ConfigError("circuit-scaling does not run federations");
    }
}

}  // namespace

ExperimentOutput run_experiment(const ExperimentConfig& cfg, const std::string& out_dir,
                                std::ostream* log) {
    cfg.validate();
    fs::create_directories(out_dir);
    ExperimentOutput out;
    const std::string digest = cfg.digest();
    logf(log, std::string("scenario=") + scenario_name(cfg.scenario) + " config_digest=" + digest);

    if (cfg.scenario == Scenario::kCircuitScaling) {
        run_circuit_scaling(cfg, digest, &out, log);
    } else {
        run_federations(cfg, digest, out_dir, &out, log);
    }

    emit_csv_file(out.rows, join_path(out_dir, "results.csv"));
    emit_plot_script(join_path(out_dir, "plots.py"), "results.csv");
    for (const std::string& w : out.warnings) logf(log, "warning: " + w);
    logf(log, "wrote " + std::to_string(out.rows.size()) + " rows to " +
                  join_path(out_dir, "results.csv"));
    return out;
}

}  // namespace vcsfl
