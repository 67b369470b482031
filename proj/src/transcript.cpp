#include "vcsfl/transcript.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <unordered_map>

#include "json.hpp"
#include "vcsfl/bytes.hpp"
#include "vcsfl/fixed_point.hpp"
#include "vcsfl/sponge.hpp"

namespace vcsfl {

namespace {

using json = nlohmann::ordered_json;

constexpr int kTranscriptVersion = 1;

std::string fe_hex(const Field& field, const Fe& e) { return to_hex(field.to_bytes(e)); }

std::uint8_t hex_nibble(char c) {
    if (c >= '0' && c <= '9') return std::uint8_t(c - '0');
    if (c >= 'a' && c <= 'f') return std::uint8_t(c - 'a' + 10);
    if (c >= 'A' && c <= 'F') return std::uint8_t(c - 'A' + 10);
    throw MalformedEncoding("bad hex digit");
}

std::vector<std::uint8_t> parse_hex_bytes(const std::string& s) {
    if (s.size() % 2) throw MalformedEncoding("odd hex length");
    std::vector<std::uint8_t> out(s.size() / 2);
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = std::uint8_t(hex_nibble(s[2 * i]) << 4) | hex_nibble(s[2 * i + 1]);
    return out;
}

Fe parse_fe(const Field& field, const std::string& s) {
    auto bytes = parse_hex_bytes(s);
    if (bytes.size() != 32) throw MalformedEncoding("field element must be 32 bytes");
    return field.from_bytes(bytes);
}

json statement_json(const Field& field, const PublicStatement& st) {
    return json{{"ws_digest", fe_hex(field, st.ws_digest)},
                {"model_digest", fe_hex(field, st.model_digest)},
                {"dot", fe_hex(field, st.dot)},
                {"norm_sq", fe_hex(field, st.norm_sq)}};
}

PublicStatement parse_statement(const Field& field, const json& j) {
    return PublicStatement{parse_fe(field, j.at("ws_digest").get<std::string>()),
                           parse_fe(field, j.at("model_digest").get<std::string>()),
                           parse_fe(field, j.at("dot").get<std::string>()),
                           parse_fe(field, j.at("norm_sq").get<std::string>())};
}

}  // namespace

std::string hex_double(double v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(std::bit_cast<std::uint64_t>(v)));
    return std::string(buf, 16);
}

double parse_hex_double(const std::string& s) {
    if (s.size() != 16) throw MalformedEncoding("hex double must be 16 digits");
    std::uint64_t bits = 0;
    for (char c : s) bits = (bits << 4) | hex_nibble(c);
    return std::bit_cast<double>(bits);
}

std::string hex_vector(std::span<const double> v) {
    std::string out;
    out.reserve(v.size() * 16);
    for (double x : v) out += hex_double(x);
    return out;
}

std::vector<double> parse_hex_vector(const std::string& s) {
    if (s.size() % 16) throw MalformedEncoding("hex vector length not a multiple of 16");
    std::vector<double> out(s.size() / 16);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = parse_hex_double(s.substr(16 * i, 16));
    return out;
}

void write_transcript(std::ostream& out, const std::vector<ClientProfile>& clients,
                      const ServerConfig& cfg, const TrainingResult& result,
                      bool verified_selection) {
    const Field& field = *cfg.fp.field;
    json header{{"format", "vcsfl-transcript"},
                {"version", kTranscriptVersion},
                {"mode", verified_selection ? "verified" : "random"},
                {"field_modulus", field.modulus_decimal()},
                {"frac_bits", cfg.fp.frac_bits},
                {"int_bits", cfg.fp.int_bits},
                {"d_max", cfg.fp.d_max},
                {"sponge_rounds", cfg.sponge.rounds},
                {"sponge_hash", cfg.sponge.hash_name},
                {"input_dim", cfg.shape.input_dim},
                {"hidden_dim", cfg.shape.hidden_dim},
                {"num_classes", cfg.shape.num_classes},
                {"d", cfg.shape.param_count()},
                {"n_select", cfg.n_select},
                {"rounds", cfg.rounds},
                {"seed", cfg.seed},
                {"metric_tolerance", hex_double(cfg.metric_tolerance)},
                {"report_wire_bytes", kReportWireBytes}};
    json roster = json::array();
    for (const ClientProfile& c : clients)
        roster.push_back(json{{"id", c.id},
                              {"samples", c.effective_samples()},
                              {"behavior", behavior_name(c.behavior)}});
    header["clients"] = std::move(roster);
    header["w0"] = hex_vector(result.initial_model.flat);
    out << header.dump() << '\n';

    for (const RoundRecord& rec : result.rounds) {
        json r{{"round", rec.round_index},
               {"ws", hex_vector(rec.benchmark.flat)},
               {"ws_digest", fe_hex(field, rec.ws_digest)}};
        json reports = json::array();
        for (const ReportSummary& rep : rec.reports)
            reports.push_back(json{{"id", rep.client_id},
                                   {"cosine", hex_double(rep.cosine)},
                                   {"statement", statement_json(field, rep.statement)},
                                   {"saturation", rep.saturation_warning},
                                   {"proof_bytes", rep.proof_wire_bytes}});
        r["reports"] = std::move(reports);
        json verdicts = json::array();
        for (const ReportVerdict& v : rec.verdicts)
            verdicts.push_back(json{{"id", v.client_id},
                                    {"code", int(v.verdict)},
                                    {"name", verdict_name(v.verdict)},
                                    {"reason", v.reason},
                                    {"recomputed", hex_double(v.recomputed)}});
        r["verdicts"] = std::move(verdicts);
        r["verified"] = rec.verified_ids;
        r["candidates"] = rec.candidate_set;
        json audits = json::array();
        for (const AuditEntry& a : rec.audits)
            audits.push_back(json{{"id", a.client_id}, {"outcome", int(a.outcome)}});
        r["audits"] = std::move(audits);
        r["removed"] = rec.removed_at_upload;
        r["empty_selection"] = rec.empty_selection;
        json uploads = json::array();
        for (const auto& [id, model] : rec.uploads)
            uploads.push_back(json{{"id", id}, {"w", hex_vector(model.flat)}});
        r["uploads"] = std::move(uploads);
        json weights = json::array();
        for (const auto& [id, alpha] : rec.weights)
            weights.push_back(json{{"id", id}, {"alpha", hex_double(alpha)}});
        r["weights"] = std::move(weights);
        r["accuracy"] = rec.accuracy;
        r["accuracy_bits"] = hex_double(rec.accuracy);
        r["upload_bytes"] = rec.upload_bytes;
        r["report_bytes"] = rec.report_bytes;
        r["w_after"] = hex_vector(rec.global_after.flat);
        out << r.dump() << '\n';
    }
}

void write_transcript_file(const std::string& path, const std::vector<ClientProfile>& clients,
                           const ServerConfig& cfg, const TrainingResult& result,
                           bool verified_selection) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path);
    write_transcript(out, clients, cfg, result, verified_selection);
    if (!out) throw IoError("failed writing " + path);
}

namespace {

struct ReplayFail {
    std::size_t round;
    std::string reason;
};

// Throwing helpers keep the per-round replay readable.
[[noreturn]] void fail(std::size_t round, std::string reason) {
    throw ReplayFail{round, std::move(reason)};
}

}  // namespace

ReplayResult verify_transcript(std::istream& in) {
    std::string line;
    std::size_t current_round = 0;
    try {
        if (!std::getline(in, line)) fail(0, "empty transcript");
        json header = json::parse(line, nullptr, true);
        if (header.at("format").get<std::string>() != "vcsfl-transcript")
            fail(0, "not a transcript file");
        if (header.at("version").get<int>() != kTranscriptVersion)
            fail(0, "unsupported transcript version");
        const bool verified_mode = header.at("mode").get<std::string>() == "verified";

        FieldPtr field = Field::create(header.at("field_modulus").get<std::string>());
        FixedPointParams fp;
        fp.frac_bits = header.at("frac_bits").get<unsigned>();
        fp.int_bits = header.at("int_bits").get<unsigned>();
        fp.d_max = header.at("d_max").get<std::uint64_t>();
        fp.field = field;
        fp.validate();
        SpongeParams sponge = SpongeParams::derive(field, header.at("sponge_rounds").get<std::uint32_t>(),
                                                   header.at("sponge_hash").get<std::string>());
        ModelShape shape{header.at("input_dim").get<std::size_t>(),
                         header.at("hidden_dim").get<std::size_t>(),
                         header.at("num_classes").get<std::size_t>()};
        const std::uint64_t d = header.at("d").get<std::uint64_t>();
        if (d != shape.param_count()) fail(0, "model size disagrees with shape");
        const std::size_t n_select = header.at("n_select").get<std::size_t>();
        const std::size_t rounds = header.at("rounds").get<std::size_t>();
        const double tolerance = parse_hex_double(header.at("metric_tolerance").get<std::string>());
        const std::uint64_t report_wire = header.at("report_wire_bytes").get<std::uint64_t>();

        std::unordered_map<std::uint64_t, std::size_t> samples;
        for (const json& c : header.at("clients"))
            samples.emplace(c.at("id").get<std::uint64_t>(), c.at("samples").get<std::size_t>());
        if (samples.empty()) fail(0, "empty client roster");

        std::vector<double> w_prev = parse_hex_vector(header.at("w0").get<std::string>());
        if (w_prev.size() != d) fail(0, "initial model has wrong dimension");

        for (std::size_t t = 1; t <= rounds; ++t) {
            current_round = t;
            if (!std::getline(in, line)) fail(t, "transcript truncated");
            json r = json::parse(line, nullptr, true);
            if (r.at("round").get<std::size_t>() != t) fail(t, "round index out of order");

            // Benchmark digest re-derivation.
            std::vector<double> ws = parse_hex_vector(r.at("ws").get<std::string>());
            if (ws.size() != d) fail(t, "benchmark has wrong dimension");
            QuantizedVector qs = quantize(ws, fp).vec;
            Fe digest_s = sponge_hash(*field, sponge, qs.elems);
            if (fe_hex(*field, digest_s) != r.at("ws_digest").get<std::string>())
                fail(t, "benchmark digest mismatch");
            const double bench_norm = quantized_norm_sq(qs);

            struct ReplayReport {
                double cosine;
                PublicStatement statement;
            };
            std::unordered_map<std::uint64_t, ReplayReport> reports;
            for (const json& rj : r.at("reports")) {
                ReplayReport rep{parse_hex_double(rj.at("cosine").get<std::string>()),
                                 parse_statement(*field, rj.at("statement"))};
                reports.emplace(rj.at("id").get<std::uint64_t>(), std::move(rep));
            }

            std::vector<std::uint64_t> candidates =
                r.at("candidates").get<std::vector<std::uint64_t>>();

            if (verified_mode) {
                // Re-derive every proof-independent verdict and check the
                // recorded codes for internal consistency.
                std::vector<ReportVerdict> verdicts;
                for (const json& vj : r.at("verdicts")) {
                    ReportVerdict v;
                    v.client_id = vj.at("id").get<std::uint64_t>();
                    v.verdict = Verdict(vj.at("code").get<int>());
                    v.recomputed = parse_hex_double(vj.at("recomputed").get<std::string>());
                    auto rep = reports.find(v.client_id);
                    if (rep == reports.end()) fail(t, "verdict for unknown report");

                    double expect = std::numeric_limits<double>::quiet_NaN();
                    bool stale = rep->second.statement.ws_digest != digest_s;
                    if (stale != (v.verdict == Verdict::kStaleBenchmark))
                        fail(t, "stale-benchmark verdict disagrees with digest");
                    if (!stale) {
                        bool decoded = false;
                        try {
                            double dot = double(field->to_signed(rep->second.statement.dot));
                            double norm = double(field->to_signed(rep->second.statement.norm_sq));
                            expect = (norm > 0.0 && bench_norm > 0.0)
                                         ? dot / std::sqrt(norm * bench_norm)
                                         : std::numeric_limits<double>::quiet_NaN();
                            decoded = true;
                        } catch (const Error&) {
                        }
                        bool in_range =
                            decoded && std::isfinite(expect) && std::abs(expect) <= 1.0 + 1e-9;
                        if (!in_range && v.verdict != Verdict::kMetricOutOfRange)
                            fail(t, "out-of-range metric not rejected");
                        if (!decoded) expect = std::numeric_limits<double>::quiet_NaN();
                        if (in_range) {
                            bool consistent =
                                std::abs(rep->second.cosine - expect) <= tolerance;
                            if (v.verdict == Verdict::kAccepted && !consistent)
                                fail(t, "accepted report fails the metric tolerance");
                            if (v.verdict == Verdict::kMetricMismatch && consistent)
                                fail(t, "metric-mismatch verdict for a consistent report");
                            if (v.verdict == Verdict::kMetricOutOfRange)
                                fail(t, "in-range metric marked out of range");
                        }
                    }
                    if (hex_double(v.recomputed) != hex_double(expect))
                        fail(t, "recomputed cosine differs from the recorded one");
                    verdicts.push_back(std::move(v));
                }
                std::vector<std::uint64_t> expect_c = rank_accepted(verdicts, n_select);
                std::sort(expect_c.begin(), expect_c.end());
                if (expect_c != candidates) fail(t, "candidate set violates the selection rule");
                if (r.at("empty_selection").get<bool>() != candidates.empty())
                    fail(t, "empty-selection flag disagrees with the candidate set");
            }

            // Upload audit replay.
            std::unordered_map<std::uint64_t, std::vector<double>> uploads;
            for (const json& uj : r.at("uploads"))
                uploads.emplace(uj.at("id").get<std::uint64_t>(),
                                parse_hex_vector(uj.at("w").get<std::string>()));
            const json& audits = r.at("audits");
            if (audits.size() != candidates.size()) fail(t, "audit entry count mismatch");
            std::vector<std::uint64_t> survivors, removed;
            for (std::size_t i = 0; i < candidates.size(); ++i) {
                std::uint64_t id = candidates[i];
                AuditOutcome expect = AuditOutcome::kOk;
                auto up = uploads.find(id);
                auto rep = reports.find(id);
                if (up == uploads.end()) {
                    expect = AuditOutcome::kMissingUpload;
                } else if (up->second.size() != d) {
                    fail(t, "upload has wrong dimension");
                } else if (rep == reports.end()) {
                    expect = AuditOutcome::kHashMismatch;
                } else {
                    QuantizedVector q = quantize(up->second, fp).vec;
                    Fe h = sponge_hash(*field, sponge, q.elems);
                    if (h != rep->second.statement.model_digest)
                        expect = AuditOutcome::kHashMismatch;
                }
                if (audits[i].at("id").get<std::uint64_t>() != id)
                    fail(t, "audit entries out of order");
                if (AuditOutcome(audits[i].at("outcome").get<int>()) != expect)
                    fail(t, "upload audit outcome cannot be reproduced");
                (expect == AuditOutcome::kOk ? survivors : removed).push_back(id);
            }
            std::sort(removed.begin(), removed.end());
            if (removed != r.at("removed").get<std::vector<std::uint64_t>>())
                fail(t, "removed-at-upload list mismatch");

            // Aggregation weights and the global model chain, bit for bit.
            const json& weights = r.at("weights");
            std::vector<double> w_next;
            if (survivors.empty()) {
                if (!weights.empty()) fail(t, "weights recorded for an empty survivor set");
                w_next = w_prev;
            } else {
                std::size_t total = 0;
                for (std::uint64_t id : survivors) {
                    auto it = samples.find(id);
                    if (it == samples.end()) fail(t, "survivor not in the client roster");
                    total += it->second;
                }
                if (weights.size() != survivors.size()) fail(t, "weight entry count mismatch");
                std::vector<ModelParams> models;
                std::vector<const ModelParams*> ptrs;
                std::vector<std::size_t> counts;
                models.reserve(survivors.size());
                for (std::size_t i = 0; i < survivors.size(); ++i) {
                    std::uint64_t id = survivors[i];
                    if (weights[i].at("id").get<std::uint64_t>() != id)
                        fail(t, "weight entries out of order");
                    double alpha = double(samples.at(id)) / double(total);
                    if (weights[i].at("alpha").get<std::string>() != hex_double(alpha))
                        fail(t, "aggregation weight cannot be reproduced");
                    models.push_back(ModelParams{shape, uploads.at(id)});
                }
                for (const ModelParams& m : models) ptrs.push_back(&m);
                for (std::uint64_t id : survivors) counts.push_back(samples.at(id));
                w_next = aggregate(ptrs, counts).model.flat;
            }
            if (hex_vector(w_next) != r.at("w_after").get<std::string>())
                fail(t, "global model cannot be reproduced");

            // Bandwidth identity.
            if (r.at("upload_bytes").get<std::uint64_t>() != candidates.size() * d * 8)
                fail(t, "upload byte count violates the accounting identity");
            if (r.at("report_bytes").get<std::uint64_t>() != samples.size() * report_wire)
                fail(t, "report byte count violates the accounting identity");

            // Accuracy needs the (unarchived) eval set to recompute, but the
            // decimal and bit-pattern copies must agree with each other.
            if (hex_double(r.at("accuracy").get<double>()) !=
                r.at("accuracy_bits").get<std::string>())
                fail(t, "accuracy decimal and bit pattern disagree");

            w_prev = std::move(w_next);
        }
        current_round = rounds;
        if (std::getline(in, line) && !line.empty())
            fail(rounds + 1, "trailing data after the last round");
    } catch (const ReplayFail& f) {
        return ReplayResult{false, f.round, f.reason};
    } catch (const std::exception& e) {
        return ReplayResult{false, current_round, std::string("unreadable record: ") + e.what()};
    }
    return ReplayResult{};
}

ReplayResult verify_transcript_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return ReplayResult{false, 0, "cannot open " + path};
    return verify_transcript(in);
}

}  // namespace vcsfl
