#include "vcsfl/attestation.hpp"

#include <mutex>

namespace vcsfl {

namespace {

constexpr char kKeyMagic[9] = "VCSFKEY1";
constexpr char kProofMagic[9] = "VCSFPRF1";

std::shared_ptr<SnarkAdapter>& adapter_slot() {
    static std::shared_ptr<SnarkAdapter> adapter;
    return adapter;
}

std::mutex& adapter_mutex() {
    static std::mutex m;
    return m;
}

BackendKind backend_from_byte(std::uint8_t b) {
    switch (b) {
        case 0: return BackendKind::kReplay;
        case 1: return BackendKind::kSnark;
        default: throw MalformedEncoding("unknown attestation backend tag");
    }
}

void check_security_bits(std::uint32_t bits) {
    if (bits != 80 && bits != 128 && bits != 256) {
        throw ConfigError("unsupported security level " + std::to_string(bits) +
                          ", expected 80, 128 or 256");
    }
}

template <typename Key>
void serialize_key(const Key& key, ByteSink& out) {
    if (!key.circuit) throw Error("key does not carry its circuit");
    out.magic(kKeyMagic);
    out.u8(static_cast<std::uint8_t>(key.backend));
    out.u32le(key.security_bits);
    out.bytes(key.circuit_digest);
    out.u64le(key.circuit->serialized_size());
    key.circuit->serialize(out);
}

template <typename Key>
Key parse_key(std::span<const std::uint8_t> data, const FieldPtr& field) {
    ByteReader r(data);
    r.expect_magic(kKeyMagic);
    Key key;
    key.backend = backend_from_byte(r.u8());
    key.security_bits = r.u32le();
    check_security_bits(key.security_bits);
    auto digest = r.bytes(32);
    std::copy(digest.begin(), digest.end(), key.circuit_digest.begin());
    std::uint64_t len = r.u64le();
    if (len != r.remaining()) throw MalformedEncoding("key circuit length disagrees with payload");
    auto cs = ConstraintSystem::deserialize(r.bytes(len), field);
    if (cs.digest() != key.circuit_digest) {
        throw MalformedEncoding("key circuit does not match its recorded digest");
    }
    key.circuit = std::make_shared<const ConstraintSystem>(std::move(cs));
    return key;
}

std::uint64_t key_size(const std::shared_ptr<const ConstraintSystem>& cs) {
    if (!cs) throw Error("key does not carry its circuit");
    return 8 + 1 + 4 + 32 + 8 + cs->serialized_size();
}

}  // namespace

const char* backend_name(BackendKind kind) {
    switch (kind) {
        case BackendKind::kReplay: return "replay";
        case BackendKind::kSnark: return "snark";
    }
    return "unknown";
}

void AttestationParams::validate() const { check_security_bits(security_bits); }

void ProvingKey::serialize(ByteSink& out) const { serialize_key(*this, out); }
void VerifyingKey::serialize(ByteSink& out) const { serialize_key(*this, out); }

std::vector<std::uint8_t> ProvingKey::serialize_to_vector() const {
    VectorSink sink;
    sink.buf.reserve(serialized_size());
    serialize(sink);
    return std::move(sink.buf);
}

std::vector<std::uint8_t> VerifyingKey::serialize_to_vector() const {
    VectorSink sink;
    sink.buf.reserve(serialized_size());
    serialize(sink);
    return std::move(sink.buf);
}

std::uint64_t ProvingKey::serialized_size() const { return key_size(circuit); }
std::uint64_t VerifyingKey::serialized_size() const { return key_size(circuit); }

ProvingKey load_proving_key(std::span<const std::uint8_t> data, const FieldPtr& field) {
    return parse_key<ProvingKey>(data, field);
}

VerifyingKey load_verifying_key(std::span<const std::uint8_t> data, const FieldPtr& field) {
    return parse_key<VerifyingKey>(data, field);
}

KeyPair keygen(std::shared_ptr<const ConstraintSystem> circuit, const AttestationParams& params) {
    params.validate();
    if (!circuit) throw ConfigError("keygen requires a circuit");
    if (params.backend == BackendKind::kSnark) {
        auto adapter = snark_adapter();
        if (!adapter) throw BackendUnavailable("no snark adapter registered");
        return adapter->keygen(std::move(circuit), params);
    }
    const auto digest = circuit->digest();
    KeyPair keys;
    keys.pk = ProvingKey{params.backend, params.security_bits, digest, circuit};
    keys.vk = VerifyingKey{params.backend, params.security_bits, digest, circuit};
    return keys;
}

Proof prove(const ProvingKey& pk, const Witness& w, const PublicStatement& x) {
    if (pk.backend == BackendKind::kSnark) {
        auto adapter = snark_adapter();
        if (!adapter) throw BackendUnavailable("no snark adapter registered");
        return adapter->prove(pk, w, x);
    }
    if (!pk.circuit) throw Error("proving key does not carry its circuit");
    if (w.assignment.size() != pk.circuit->num_vars()) {
        throw DimensionMismatch("witness has " + std::to_string(w.assignment.size()) +
                                " variables, key circuit expects " +
                                std::to_string(pk.circuit->num_vars()));
    }
    Proof proof;
    proof.backend = pk.backend;
    proof.security_bits = pk.security_bits;
    proof.circuit_digest = pk.circuit_digest;
    proof.zero_knowledge = false;
    proof.statement = x;
    proof.assignment = w.assignment;
    return proof;
}

VerifyResult verify(const VerifyingKey& vk, const PublicStatement& x, const Proof& proof) {
    if (vk.backend == BackendKind::kSnark || proof.backend == BackendKind::kSnark) {
        auto adapter = snark_adapter();
        if (!adapter) throw BackendUnavailable("no snark adapter registered");
        return adapter->verify(vk, x, proof);
    }
    if (proof.circuit_digest != vk.circuit_digest) {
        throw KeyCircuitMismatch("proof was produced for a different circuit than this key");
    }
    if (proof.security_bits != vk.security_bits) {
        return {false, "security level disagrees with the verifying key"};
    }
    const PublicStatement& e = proof.statement;
    if (!(e.ws_digest == x.ws_digest) || !(e.model_digest == x.model_digest) ||
        !(e.dot == x.dot) || !(e.norm_sq == x.norm_sq)) {
        return {false, "embedded statement disagrees with the claimed statement"};
    }
    if (!vk.circuit) throw Error("verifying key does not carry its circuit");
    Witness w{proof.assignment};
    std::string diag;
    if (!check_satisfied(*vk.circuit, w, x, &diag)) return {false, diag};
    return {true, {}};
}

std::vector<std::uint8_t> Proof::serialize(const Field& field) const {
    VectorSink sink;
    sink.buf.reserve(wire_size());
    sink.magic(kProofMagic);
    sink.u8(static_cast<std::uint8_t>(backend));
    sink.u32le(security_bits);
    sink.bytes(circuit_digest);
    sink.u8(zero_knowledge ? 1 : 0);
    const Fe* slots[4] = {&statement.ws_digest, &statement.model_digest, &statement.dot,
                          &statement.norm_sq};
    for (const Fe* s : slots) sink.bytes(field.to_bytes(*s));
    sink.u64le(assignment.size());
    for (const Fe& e : assignment) sink.bytes(field.to_bytes(e));
    return std::move(sink.buf);
}

Proof Proof::deserialize(std::span<const std::uint8_t> data, const FieldPtr& field) {
    ByteReader r(data);
    r.expect_magic(kProofMagic);
    Proof proof;
    proof.backend = backend_from_byte(r.u8());
    proof.security_bits = r.u32le();
    auto digest = r.bytes(32);
    std::copy(digest.begin(), digest.end(), proof.circuit_digest.begin());
    proof.zero_knowledge = r.u8() != 0;
    Fe* slots[4] = {&proof.statement.ws_digest, &proof.statement.model_digest,
                    &proof.statement.dot, &proof.statement.norm_sq};
    for (Fe* s : slots) *s = field->from_bytes(r.bytes(32));
    std::uint64_t n = r.u64le();
    if (n != r.remaining() / 32 || n * 32 != r.remaining()) {
        throw MalformedEncoding("proof assignment length disagrees with payload");
    }
    proof.assignment.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) proof.assignment.push_back(field->from_bytes(r.bytes(32)));
    return proof;
}

std::uint64_t Proof::wire_size() const {
    return 8 + 1 + 4 + 32 + 1 + 4 * 32 + 8 + 32ull * assignment.size();
}

void register_snark_adapter(std::shared_ptr<SnarkAdapter> adapter) {
    std::lock_guard<std::mutex> lock(adapter_mutex());
    adapter_slot() = std::move(adapter);
}

std::shared_ptr<SnarkAdapter> snark_adapter() {
    std::lock_guard<std::mutex> lock(adapter_mutex());
    return adapter_slot();
}

}  // namespace vcsfl
