#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "vcsfl/attestation.hpp"
#include "vcsfl/errors.hpp"
#include "vcsfl/harness.hpp"
#include "vcsfl/transcript.hpp"

namespace fs = std::filesystem;
using namespace vcsfl;

namespace {

void write_binary(const fs::path& path, const std::vector<std::uint8_t>& data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size()));
    if (!out.good()) throw IoError("write failed: " + path.string());
}

struct KeygenArgs {
    std::uint64_t model_size = 0;
    std::string out_dir = ".";
    std::string modulus;
    unsigned frac_bits = 16;
    unsigned int_bits = 8;
    std::uint64_t d_max = 4096;
    std::uint32_t sponge_rounds = 110;
    std::uint32_t security_bits = 128;
};

int cmd_keygen(const KeygenArgs& a) {
    FieldPtr field = a.modulus.empty() ? Field::create_default() : Field::create(a.modulus);
    FixedPointParams fp;
    fp.frac_bits = static_cast<int>(a.frac_bits);
    fp.int_bits = static_cast<int>(a.int_bits);
    fp.d_max = static_cast<std::uint32_t>(std::max(a.d_max, a.model_size));
    fp.field = field;
    fp.validate();
    SpongeParams sp = SpongeParams::derive(field, a.sponge_rounds);
    AttestationParams att;
    att.security_bits = a.security_bits;
    att.validate();

    auto cs = std::make_shared<const ConstraintSystem>(build_metric_circuit(a.model_size, fp, sp));
    KeyPair keys = keygen(cs, att);

    fs::create_directories(a.out_dir);
    const fs::path pk_path = fs::path(a.out_dir) / ("vcsfl-pk-d" + std::to_string(a.model_size) + ".key");
    const fs::path vk_path = fs::path(a.out_dir) / ("vcsfl-vk-d" + std::to_string(a.model_size) + ".key");
    const fs::path const_path = fs::path(a.out_dir) / "sponge-constants.txt";
    write_binary(pk_path, keys.pk.serialize_to_vector());
    write_binary(vk_path, keys.vk.serialize_to_vector());
    write_constants_file(const_path.string(), *field, sp);

    std::cout << "model size d      : " << a.model_size << '\n'
              << "constraints       : " << cs->num_constraints() << '\n'
              << "variables         : " << cs->num_vars() << '\n'
              << "circuit digest    : " << to_hex(cs->digest()) << '\n'
              << "proving key       : " << pk_path.string() << " (" << keys.pk.serialized_size()
              << " bytes)\n"
              << "verifying key     : " << vk_path.string() << " (" << keys.vk.serialized_size()
              << " bytes)\n"
              << "sponge constants  : " << const_path.string() << '\n';
    return 0;
}

struct RunArgs {
    std::string config_path;
    std::string scenario;
    std::string out_dir = "vcsfl-out";
    bool transcripts = false;
    bool quiet = false;
};

int cmd_run(const RunArgs& a) {
    if (!fs::exists(a.config_path)) {
        std::cerr << "error: config file not found: " << a.config_path << '\n';
        return 2;
    }
    ExperimentConfig cfg;
    try {
        cfg = ExperimentConfig::load(a.config_path);
        if (!a.scenario.empty()) {
            cfg.scenario = parse_scenario(a.scenario);
            cfg.validate();
        }
        if (a.transcripts) cfg.write_transcripts = true;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    ExperimentOutput out = run_experiment(cfg, a.out_dir, a.quiet ? nullptr : &std::cout);
    std::cout << "results: " << (fs::path(a.out_dir) / "results.csv").string() << " ("
              << out.rows.size() << " rows)\n"
              << "plots  : " << (fs::path(a.out_dir) / "plots.py").string() << '\n';
    for (const std::string& t : out.transcript_files)
        std::cout << "transcript: " << (fs::path(a.out_dir) / t).string() << '\n';
    return 0;
}

int cmd_verify_transcript(const std::string& path) {
    if (!fs::exists(path)) {
        std::cerr << "error: transcript file not found: " << path << '\n';
        return 2;
    }
    ReplayResult res = verify_transcript_file(path);
    if (res.ok) {
        std::cout << "transcript ok: every round replays bit-exactly\n";
        return 0;
    }
    if (res.failed_round == 0) {
        std::cerr << "replay failed in the header: " << res.reason << '\n';
    } else {
        std::cerr << "replay failed at round " << res.failed_round << ": " << res.reason << '\n';
    }
    return 1;
}

KeyPair make_federation_keys(const ServerConfig& scfg) {
    auto cs = std::make_shared<const ConstraintSystem>(
        build_metric_circuit(scfg.shape.param_count(), scfg.fp, scfg.sponge));
    return keygen(cs, AttestationParams{});
}

// Fast end-to-end invariant sweep over every module; each check prints one
// line so failures are attributable at a glance.
int cmd_selftest() {
    int failures = 0;
    auto step = [&](const char* label, auto&& fn) {
        try {
            fn();
            std::cout << "ok   " << label << '\n';
        } catch (const std::exception& e) {
            std::cout << "FAIL " << label << ": " << e.what() << '\n';
            ++failures;
        }
    };

    FieldPtr field = Field::create_default();
    FixedPointParams fp = FixedPointParams::defaults(field);
    SpongeParams sp = SpongeParams::derive(field);

    step("field arithmetic (inverses and distributivity)", [&] {
        Rng rng(42);
        for (int i = 0; i < 32; ++i) {
            Fe x = field->random(rng), y = field->random(rng), z = field->random(rng);
            if (!(field->mul(x, field->inv(x)) == field->one()))
                throw Error("x * x^-1 != 1");
            Fe lhs = field->mul(x, field->add(y, z));
            Fe rhs = field->add(field->mul(x, y), field->mul(x, z));
            if (!(lhs == rhs)) throw Error("x(y+z) != xy+xz");
        }
    });

    step("fixed point quantization (round-trip within half an lsb)", [&] {
        Rng rng(43);
        std::vector<double> v(64);
        for (double& x : v) x = rng.uniform() * 200.0 - 100.0;
        QuantizeResult q = quantize(v, fp);
        std::vector<double> back = dequantize(q.vec);
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (std::abs(back[i] - v[i]) > 0.5 / fp.scale() + 1e-12)
                throw Error("round-trip error above half an lsb");
        }
    });

    step("sponge digests (deterministic, input-sensitive)", [&] {
        std::vector<Fe> a = {field->from_u64(1), field->from_u64(2)};
        std::vector<Fe> b = {field->from_u64(1), field->from_u64(3)};
        Fe ha = sponge_hash(*field, sp, a);
        if (!(ha == sponge_hash(*field, sp, a))) throw Error("same input hashed differently");
        if (ha == sponge_hash(*field, sp, b)) throw Error("different inputs collided");
    });

    auto cs = std::make_shared<const ConstraintSystem>(build_metric_circuit(8, fp, sp));
    AttestationParams att;
    KeyPair keys = keygen(cs, att);
    step("metric circuit (honest witness satisfies, corrupt wire does not)", [&] {
        Rng rng(44);
        std::vector<double> wk(8), ws(8);
        for (double& x : wk) x = rng.uniform() * 2.0 - 1.0;
        for (double& x : ws) x = rng.uniform() * 2.0 - 1.0;
        auto [wit, x] = generate_witness(*cs, quantize(wk, fp).vec, quantize(ws, fp).vec);
        if (!check_satisfied(*cs, wit, x)) throw Error("honest witness rejected");
        Witness bad = wit;
        bad.assignment[ConstraintSystem::kNumPublic + 1] =
            field->add(bad.assignment[ConstraintSystem::kNumPublic + 1], field->one());
        if (check_satisfied(*cs, bad, x)) throw Error("corrupt witness accepted");
    });

    step("attestation (accepts honest proofs, rejects statement swaps)", [&] {
        Rng rng(45);
        std::vector<double> wk(8), ws(8);
        for (double& x : wk) x = rng.uniform() * 2.0 - 1.0;
        for (double& x : ws) x = rng.uniform() * 2.0 - 1.0;
        auto [wit, x] = generate_witness(*cs, quantize(wk, fp).vec, quantize(ws, fp).vec);
        Proof proof = prove(keys.pk, wit, x);
        if (!verify(keys.vk, x, proof)) throw Error("honest proof rejected");
        PublicStatement lie = x;
        lie.dot = field->add(lie.dot, field->one());
        if (verify(keys.vk, lie, proof)) throw Error("mutated statement accepted");
    });

    step("federation round (swapped uploads caught, invalid proofs rejected)", [&] {
        ExperimentConfig cfg;
        cfg.scenario = Scenario::kAdversaryAudit;
        cfg.input_dim = 4;
        cfg.hidden_dim = 0;
        cfg.num_classes = 3;
        cfg.samples_per_client = 45;
        cfg.root_samples = 30;
        cfg.eval_samples = 60;
        cfg.client_sigmas = {0.0, 0.0, 0.0, 1.0};
        cfg.forgers = 0;
        cfg.swappers = 1;
        cfg.invalid_provers = 1;
        cfg.rounds = 2;
        cfg.n_select = 2;
        cfg.seeds = {17};
        cfg.client_train.batch_size = 16;
        cfg.client_train.lr = 0.2;
        cfg.benchmark_train = cfg.client_train;
        cfg.validate();
        std::vector<ClientProfile> clients = build_clients(cfg, 17, nullptr);
        ServerConfig scfg = build_server_config(cfg, 17, cfg.n_select, nullptr);
        KeyPair fkeys = make_federation_keys(scfg);
        TrainingResult res = run_training(clients, scfg, fkeys);
        for (const RoundRecord& rec : res.rounds) {
            for (std::uint64_t id : rec.verified_ids)
                if (id == 2) throw Error("invalid prover passed verification");
            for (const auto& [id, alpha] : rec.weights) {
                (void)alpha;
                if (id == 1 || id == 2) throw Error("adversarial model reached aggregation");
            }
            if (rec.upload_bytes != rec.candidate_set.size() * scfg.shape.param_count() * 8)
                throw Error("upload byte identity violated");
        }
    });

    step("transcript replay (round-trips and detects tampering)", [&] {
        ExperimentConfig cfg;
        cfg.scenario = Scenario::kSelectionSweep;
        cfg.input_dim = 4;
        cfg.hidden_dim = 0;
        cfg.num_classes = 3;
        cfg.samples_per_client = 45;
        cfg.root_samples = 30;
        cfg.eval_samples = 60;
        cfg.client_sigmas = {0.0, 0.0, 0.3};
        cfg.rounds = 2;
        cfg.n_values = {2};
        cfg.seeds = {23};
        cfg.client_train.batch_size = 16;
        cfg.client_train.lr = 0.2;
        cfg.benchmark_train = cfg.client_train;
        cfg.validate();
        std::vector<ClientProfile> clients = build_clients(cfg, 23, nullptr);
        ServerConfig scfg = build_server_config(cfg, 23, 2, nullptr);
        KeyPair fkeys = make_federation_keys(scfg);
        TrainingResult res = run_training(clients, scfg, fkeys);
        std::ostringstream buf;
        write_transcript(buf, clients, scfg, res, true);
        std::string text = buf.str();
        std::istringstream clean(text);
        if (!verify_transcript(clean).ok) throw Error("clean transcript failed replay");
        std::size_t pos = text.rfind("\"accuracy_bits\"");
        if (pos == std::string::npos) throw Error("transcript layout changed");
        pos = text.find(':', pos) + 3;
        text[pos] = text[pos] == 'f' ? '0' : 'f';
        std::istringstream tampered(text);
        if (verify_transcript(tampered).ok) throw Error("tampered transcript passed replay");
    });

    if (failures) {
        std::cout << failures << " selftest step(s) failed\n";
        return 1;
    }
    std::cout << "all selftest steps passed\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"veri-cs-fl: verifiable cosine-similarity client selection for federated "
                 "learning"};
    app.require_subcommand(1);

    KeygenArgs ka;
    CLI::App* keygen_cmd =
        app.add_subcommand("keygen", "Build the metric circuit and write the key pair");
    keygen_cmd->add_option("--model-size", ka.model_size, "Model dimension d the circuit attests")
        ->required();
    keygen_cmd->add_option("--out", ka.out_dir, "Output directory (default .)");
    keygen_cmd->add_option("--modulus", ka.modulus, "Decimal field modulus (default built in)");
    keygen_cmd->add_option("--frac-bits", ka.frac_bits, "Fixed-point fractional bits (default 16)");
    keygen_cmd->add_option("--int-bits", ka.int_bits, "Fixed-point integer bits (default 8)");
    keygen_cmd->add_option("--d-max", ka.d_max, "Largest supported dimension (default 4096)");
    keygen_cmd->add_option("--sponge-rounds", ka.sponge_rounds, "Sponge rounds (default 110)");
    keygen_cmd->add_option("--security-bits", ka.security_bits,
                           "Attestation security level (default 128)");

    RunArgs ra;
    CLI::App* run_cmd = app.add_subcommand("run", "Run an experiment scenario from a config file");
    run_cmd->add_option("--config", ra.config_path, "Experiment config (json)")->required();
    run_cmd->add_option("--scenario", ra.scenario,
                        "Override the config's scenario (circuit-scaling, selection-sweep, "
                        "veri-vs-rand, adversary-audit)");
    run_cmd->add_option("--out", ra.out_dir, "Output directory (default vcsfl-out)");
    run_cmd->add_flag("--transcripts", ra.transcripts, "Also write per-run replay transcripts");
    run_cmd->add_flag("--quiet", ra.quiet, "Suppress progress lines");

    std::string transcript_path;
    CLI::App* verify_cmd = app.add_subcommand(
        "verify-transcript", "Replay a training transcript and check it bit for bit");
    verify_cmd->add_option("--in", transcript_path, "Transcript file (jsonl)")->required();

    app.add_subcommand("selftest", "Run fast cross-module invariant checks");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (keygen_cmd->parsed()) return cmd_keygen(ka);
        if (run_cmd->parsed()) return cmd_run(ra);
        if (verify_cmd->parsed()) return cmd_verify_transcript(transcript_path);
        return cmd_selftest();
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << '\n';
        return 1;
    }
}
