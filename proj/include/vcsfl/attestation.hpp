#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "vcsfl/circuit.hpp"

namespace vcsfl {

enum class BackendKind : std::uint8_t {
    kReplay = 0,  // built in: proof transcript is the full assignment, NOT zero-knowledge
    kSnark = 1,   // external succinct backend, available only via a registered adapter
};

const char* backend_name(BackendKind kind);

struct AttestationParams {
    BackendKind backend = BackendKind::kReplay;
    std::uint32_t security_bits = 128;  // accepted levels: 80, 128, 256

    void validate() const;  // throws ConfigError on an unknown level
};

// Keys carry the circuit digest for binding plus, for the replay backend,
// the circuit itself; proving and verifying keys serialize to identical
// bytes. Serialized size therefore grows affinely with the model size.
struct ProvingKey {
    BackendKind backend = BackendKind::kReplay;
    std::uint32_t security_bits = 128;
    std::array<std::uint8_t, 32> circuit_digest{};
    std::shared_ptr<const ConstraintSystem> circuit;

    // "VCSFKEY1" | u8 backend | u32 security bits | 32-byte circuit digest |
    // u64 circuit length | serialized circuit
    void serialize(ByteSink& out) const;
    std::vector<std::uint8_t> serialize_to_vector() const;
    std::uint64_t serialized_size() const;
};

struct VerifyingKey {
    BackendKind backend = BackendKind::kReplay;
    std::uint32_t security_bits = 128;
    std::array<std::uint8_t, 32> circuit_digest{};
    std::shared_ptr<const ConstraintSystem> circuit;

    void serialize(ByteSink& out) const;
    std::vector<std::uint8_t> serialize_to_vector() const;
    std::uint64_t serialized_size() const;
};

struct KeyPair {
    ProvingKey pk;
    VerifyingKey vk;
};

struct Proof {
    BackendKind backend = BackendKind::kReplay;
    std::uint32_t security_bits = 128;
    std::array<std::uint8_t, 32> circuit_digest{};
    bool zero_knowledge = false;  // replay proofs reveal the witness
    PublicStatement statement{};
    std::vector<Fe> assignment;  // replay payload: full variable assignment

    // "VCSFPRF1" | u8 backend | u32 security bits | 32-byte circuit digest |
    // u8 zero-knowledge flag | statement (4 x 32 bytes) | u64 assignment
    // length | assignment elements
    std::vector<std::uint8_t> serialize(const Field& field) const;
    static Proof deserialize(std::span<const std::uint8_t> data, const FieldPtr& field);
    std::uint64_t wire_size() const;
};

struct VerifyResult {
    bool accepted = false;
    std::string reason;  // empty iff accepted

    explicit operator bool() const { return accepted; }
};

KeyPair keygen(std::shared_ptr<const ConstraintSystem> circuit, const AttestationParams& params);

// Packages (x, w) into a proof. Deliberately does not re-check the witness:
// soundness lives entirely in verify, which the mutation tests exercise.
Proof prove(const ProvingKey& pk, const Witness& w, const PublicStatement& x);

// Rejects (with a reason) on any statement or assignment inconsistency.
// Throws KeyCircuitMismatch when the proof was made for a different circuit
// than the key, and BackendUnavailable for an unregistered backend.
VerifyResult verify(const VerifyingKey& vk, const PublicStatement& x, const Proof& proof);

ProvingKey load_proving_key(std::span<const std::uint8_t> data, const FieldPtr& field);
VerifyingKey load_verifying_key(std::span<const std::uint8_t> data, const FieldPtr& field);

// Hook for plugging in a succinct proof system; nullptr when none is
// registered, in which case BackendKind::kSnark operations throw
// BackendUnavailable.
class SnarkAdapter {
public:
    virtual ~SnarkAdapter() = default;
    virtual std::string name() const = 0;
    virtual KeyPair keygen(std::shared_ptr<const ConstraintSystem> circuit,
                           const AttestationParams& params) = 0;
    virtual Proof prove(const ProvingKey& pk, const Witness& w, const PublicStatement& x) = 0;
    virtual VerifyResult verify(const VerifyingKey& vk, const PublicStatement& x,
                                const Proof& proof) = 0;
};

void register_snark_adapter(std::shared_ptr<SnarkAdapter> adapter);
std::shared_ptr<SnarkAdapter> snark_adapter();

}  // namespace vcsfl
