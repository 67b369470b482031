#pragma once

#include <iosfwd>
#include <string>

#include "vcsfl/protocol.hpp"

namespace vcsfl {

// IEEE-754 bit-pattern codecs used so transcripts and CSVs replay doubles
// bit for bit.  hex_double renders the 64-bit pattern as 16 lowercase hex
// digits (big-endian); hex_vector concatenates one group per element.
std::string hex_double(double v);
double parse_hex_double(const std::string& s);
std::string hex_vector(std::span<const double> v);
std::vector<double> parse_hex_vector(const std::string& s);

// Append-only structured-text run log: line 1 is a JSON header (schema
// version, run mode, field/fixed-point/sponge parameters, model shape,
// client roster, initial model); each following line is one round record
// (benchmark weights, report statements, verdicts, candidate set, audits,
// uploads, aggregation weights, accuracy, byte counts, resulting model).
void write_transcript(std::ostream& out, const std::vector<ClientProfile>& clients,
                      const ServerConfig& cfg, const TrainingResult& result,
                      bool verified_selection);
void write_transcript_file(const std::string& path, const std::vector<ClientProfile>& clients,
                           const ServerConfig& cfg, const TrainingResult& result,
                           bool verified_selection);

struct ReplayResult {
    bool ok = true;
    std::size_t failed_round = 0;  // 1-based round index; 0 means the header
    std::string reason;

    explicit operator bool() const { return ok; }
};

// Replays a transcript: re-derives benchmark digests, selection from the
// recorded verdicts, upload audits, aggregation weights, and the global
// model chain (bit-exact), plus the bandwidth identity per round.  Verdicts
// that depend on discarded proofs are checked for internal consistency
// only.  The first violation is reported with its round index.
ReplayResult verify_transcript(std::istream& in);
ReplayResult verify_transcript_file(const std::string& path);

}  // namespace vcsfl
