#include <bit>
#include <cmath>
#include <filesystem>
#include <memory>
#include <sstream>

#include "doctest.h"
#include "vcsfl/fixed_point.hpp"
#include "vcsfl/protocol.hpp"
#include "vcsfl/sponge.hpp"
#include "vcsfl/transcript.hpp"

using namespace vcsfl;

namespace {

// A three-round mixed-behavior run shared by the replay tests.
struct TranscriptFixture {
    FieldPtr field = Field::create_default();
    FixedPointParams fp = FixedPointParams::defaults(field);
    SpongeParams sp = SpongeParams::derive(field);
    ModelShape shape{4, 0, 3};
    KeyPair keys;
    ServerConfig cfg;
    std::vector<ClientProfile> clients;
    TrainingResult result;
    std::string veri_text;

    TranscriptFixture() {
        auto cs = std::make_shared<ConstraintSystem>(
            build_metric_circuit(shape.param_count(), fp, sp));
        keys = keygen(cs, AttestationParams{BackendKind::kReplay, 128});
        cfg.shape = shape;
        cfg.n_select = 3;
        cfg.rounds = 3;
        cfg.root_dataset = synth_dataset(100, 4, 3, 9101);
        cfg.eval_dataset = synth_dataset(200, 4, 3, 9102);
        cfg.client_train.epochs = 2;
        cfg.client_train.batch_size = 16;
        cfg.client_train.lr = 0.3;
        cfg.benchmark_train.epochs = 1;
        cfg.benchmark_train.batch_size = 16;
        cfg.benchmark_train.lr = 0.3;
        cfg.fp = fp;
        cfg.sponge = sp;
        cfg.init_scale = 0.01;
        cfg.seed = 19;

        auto client = [&](std::uint64_t id, ClientBehavior b, double noise) {
            ClientProfile c;
            c.id = id;
            c.dataset = synth_dataset(100, 4, 3, 600 + id);
            if (noise > 0.0) c.dataset = add_gaussian_noise(c.dataset, noise, 800 + id);
            c.behavior = b;
            return c;
        };
        clients = {client(1, ClientBehavior::kHonest, 0.0),
                   client(2, ClientBehavior::kHonest, 0.0),
                   client(3, ClientBehavior::kHonest, 0.3),
                   client(4, ClientBehavior::kMetricForger, 3.0),
                   client(5, ClientBehavior::kModelSwapper, 0.0)};
        result = run_training(clients, cfg, keys);

        std::ostringstream out;
        write_transcript(out, clients, cfg, result, true);
        veri_text = out.str();
    }
};

const TranscriptFixture& fx() {
    static TranscriptFixture f;
    return f;
}

ReplayResult replay(const std::string& text) {
    std::istringstream in(text);
    return verify_transcript(in);
}

// Replaces the first occurrence; fails the test if the needle is absent.
std::string replace_once(const std::string& text, const std::string& from,
                         const std::string& to) {
    auto pos = text.find(from);
    REQUIRE(pos != std::string::npos);
    std::string out = text;
    out.replace(pos, from.size(), to);
    return out;
}

}  // namespace

TEST_CASE("hex double codec round-trips every bit pattern class") {
    for (double v : {0.0, -0.0, 1.0, -1.0 / 3.0, 1e-310, 6.02e23,
                     std::numeric_limits<double>::infinity(),
                     -std::numeric_limits<double>::infinity()}) {
        std::string bits = hex_double(v);
        CHECK(bits.size() == 16);
        double back = parse_hex_double(bits);
        CHECK(std::bit_cast<std::uint64_t>(back) == std::bit_cast<std::uint64_t>(v));
    }
    double nan = std::numeric_limits<double>::quiet_NaN();
    CHECK(hex_double(parse_hex_double(hex_double(nan))) == hex_double(nan));
    CHECK(hex_double(-0.0) != hex_double(0.0));

    std::vector<double> v = {1.5, -2.25, 0.0};
    CHECK(parse_hex_vector(hex_vector(v)) == v);
    CHECK_THROWS_AS(parse_hex_double("xyz"), MalformedEncoding);
    CHECK_THROWS_AS(parse_hex_double("0123456789abcde"), MalformedEncoding);
    CHECK_THROWS_AS(parse_hex_vector("0123456789abcde"), MalformedEncoding);
}

TEST_CASE("a recorded run replays cleanly") {
    const auto& f = fx();
    ReplayResult r = replay(f.veri_text);
    CAPTURE(r.failed_round);
    CAPTURE(r.reason);
    CHECK(r.ok);

    // Sanity: the run exercised both rejection paths we want archived.
    bool saw_mismatch = false, saw_removal = false;
    for (const RoundRecord& rec : f.result.rounds) {
        for (const auto& v : rec.verdicts)
            saw_mismatch |= v.verdict == Verdict::kMetricMismatch;
        saw_removal |= !rec.removed_at_upload.empty();
    }
    CHECK(saw_mismatch);
    CHECK(saw_removal);
}

TEST_CASE("identical seeds produce byte-identical transcripts") {
    const auto& f = fx();
    TrainingResult again = run_training(f.clients, f.cfg, f.keys);
    std::ostringstream out;
    write_transcript(out, f.clients, f.cfg, again, true);
    CHECK(out.str() == f.veri_text);
}

TEST_CASE("random-selection transcripts replay cleanly too") {
    const auto& f = fx();
    TrainingResult rand_result = run_training_rand_cs(f.clients, f.cfg, f.keys);
    std::ostringstream out;
    write_transcript(out, f.clients, f.cfg, rand_result, false);
    ReplayResult r = replay(out.str());
    CAPTURE(r.reason);
    CHECK(r.ok);
}

TEST_CASE("tampering is detected and the offending round named") {
    const auto& f = fx();

    SUBCASE("flipped verdict code") {
        // Upgrade the forger's metric-mismatch verdict to accepted.
        std::string tampered = replace_once(f.veri_text, "\"code\":4", "\"code\":0");
        ReplayResult r = replay(tampered);
        CHECK_FALSE(r.ok);
        CHECK(r.failed_round == 1);
        CHECK_FALSE(r.reason.empty());
    }
    SUBCASE("tampered upload weights") {
        // Flip a digit inside the first upload payload of round 1.
        auto pos = f.veri_text.find("\"uploads\":[{\"id\":1,\"w\":\"");
        REQUIRE(pos != std::string::npos);
        std::string tampered = f.veri_text;
        std::size_t digit = pos + std::string("\"uploads\":[{\"id\":1,\"w\":\"").size() + 3;
        tampered[digit] = tampered[digit] == '0' ? '1' : '0';
        ReplayResult r = replay(tampered);
        CHECK_FALSE(r.ok);
        CHECK(r.failed_round == 1);
    }
    SUBCASE("tampered global model") {
        std::string tampered = replace_once(f.veri_text, "\"w_after\":\"", "\"w_after\":\"");
        // Flip one digit of the last round's w_after by editing the final line.
        auto pos = tampered.rfind("\"w_after\":\"");
        REQUIRE(pos != std::string::npos);
        std::size_t digit = pos + std::string("\"w_after\":\"").size() + 5;
        tampered[digit] = tampered[digit] == 'a' ? 'b' : 'a';
        ReplayResult r = replay(tampered);
        CHECK_FALSE(r.ok);
        CHECK(r.failed_round == f.cfg.rounds);
        CHECK(r.reason == "global model cannot be reproduced");
    }
    SUBCASE("broken bandwidth accounting") {
        std::string tampered = replace_once(f.veri_text, "\"upload_bytes\":", "\"upload_bytes\":1");
        ReplayResult r = replay(tampered);
        CHECK_FALSE(r.ok);
        CHECK(r.failed_round == 1);
        CHECK(r.reason == "upload byte count violates the accounting identity");
    }
    SUBCASE("truncated transcript") {
        auto pos = f.veri_text.rfind("{\"round\":3");
        REQUIRE(pos != std::string::npos);
        ReplayResult r = replay(f.veri_text.substr(0, pos));
        CHECK_FALSE(r.ok);
        CHECK(r.failed_round == 3);
        CHECK(r.reason == "transcript truncated");
    }
    SUBCASE("garbage header") {
        ReplayResult r = replay("not json at all\n");
        CHECK_FALSE(r.ok);
        CHECK(r.failed_round == 0);
    }
    SUBCASE("empty input") {
        ReplayResult r = replay("");
        CHECK_FALSE(r.ok);
        CHECK(r.failed_round == 0);
        CHECK(r.reason == "empty transcript");
    }
}

TEST_CASE("file round trip") {
    const auto& f = fx();
    auto path = (std::filesystem::temp_directory_path() / "vcsfl-transcript-test.jsonl").string();
    write_transcript_file(path, f.clients, f.cfg, f.result, true);
    ReplayResult r = verify_transcript_file(path);
    CAPTURE(r.reason);
    CHECK(r.ok);
    CHECK_FALSE(verify_transcript_file(path + ".missing").ok);
    std::filesystem::remove(path);
}
