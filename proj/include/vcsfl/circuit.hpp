#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vcsfl/bytes.hpp"
#include "vcsfl/field.hpp"
#include "vcsfl/fixed_point.hpp"
#include "vcsfl/sponge.hpp"

namespace vcsfl {

// One linear-combination term: coeff is an index into the interned
// coefficient pool (pool id 0 is always +1, id 1 always -1), var is a
// variable index. Keeping terms at 8 bytes is what makes the d=4096
// circuit fit comfortably in memory.
struct Term {
    std::uint32_t var;
    std::uint32_t coeff;
};

// Half-open window into the shared term arena.
struct LcSpan {
    std::uint32_t off = 0;
    std::uint32_t len = 0;
};

// <a,z> * <b,z> = <c,z>
struct Constraint {
    LcSpan a, b, c;
};

// The four non-constant public inputs, in slot order 1..4. Slot 0 is the
// constant one.
struct PublicStatement {
    Fe ws_digest;      // sponge hash of the quantized benchmark vector
    Fe model_digest;   // sponge hash of the quantized client vector (h_k)
    Fe dot;            // field encoding of <w_k, w_s>
    Fe norm_sq;        // field encoding of <w_k, w_k>
};

struct Witness {
    std::vector<Fe> assignment;  // full vector z, including the public slots
};

class ConstraintSystem {
public:
    static constexpr std::uint32_t kVarOne = 0;
    static constexpr std::uint32_t kVarWsDigest = 1;
    static constexpr std::uint32_t kVarModelDigest = 2;
    static constexpr std::uint32_t kVarDot = 3;
    static constexpr std::uint32_t kVarNormSq = 4;
    static constexpr std::size_t kNumPublic = 5;

    std::uint64_t d() const { return d_; }
    std::uint64_t num_vars() const { return num_vars_; }
    std::uint64_t num_constraints() const { return constraints_.size(); }
    const FieldPtr& field() const { return field_; }
    std::span<const std::uint32_t> public_indices() const;

    std::span<const Constraint> constraints() const { return constraints_; }
    std::span<const Term> terms(LcSpan s) const { return {terms_.data() + s.off, s.len}; }
    const Fe& coeff(std::uint32_t id) const { return coeffs_[id]; }

    // Present when the system was produced by build_metric_circuit; absent
    // after deserialize (the wire format carries only the constraints).
    bool has_generator_params() const { return gen_.has_value(); }
    const FixedPointParams& fixed_point() const;
    const SpongeParams& sponge() const;

    // Wire layout of generated circuits (requires generator params). slot:
    // 0 = u^2, 1 = u^4, 2 = u^5 of the round input u.
    std::uint64_t var_bit(std::uint64_t i, std::uint32_t j) const;
    std::uint64_t var_inverse(std::uint64_t i) const;
    std::uint64_t var_benchmark(std::uint64_t i) const;
    std::uint64_t var_product(std::uint64_t i) const;
    std::uint64_t var_square(std::uint64_t i) const;
    std::uint64_t var_sponge_client(std::uint64_t i, std::uint32_t j, int slot) const;
    std::uint64_t var_sponge_benchmark(std::uint64_t i, std::uint32_t j, int slot) const;

    // Wire format: "VCSR1CS1" | u64 d | u64 num_vars | u64 num_constraints |
    // per constraint: u32 len(a), len(b), len(c), then the terms of a, b, c,
    // each as u32 variable index (LE) + 32-byte canonical coefficient.
    void serialize(ByteSink& out) const;
    std::vector<std::uint8_t> serialize_to_vector() const;
    std::uint64_t serialized_size() const;
    std::array<std::uint8_t, 32> digest() const;
    static ConstraintSystem deserialize(std::span<const std::uint8_t> data, FieldPtr field);

    // Documented cost model; exact, so key/constraint growth is affine in d
    // by construction.
    static std::uint64_t constraints_for(std::uint64_t d, const FixedPointParams& fp,
                                         const SpongeParams& sp);
    static std::uint64_t vars_for(std::uint64_t d, const FixedPointParams& fp,
                                  const SpongeParams& sp);

private:
    friend class CircuitBuilder;
    friend ConstraintSystem build_metric_circuit(std::uint64_t, const FixedPointParams&,
                                                 const SpongeParams&);

    struct GeneratorParams {
        FixedPointParams fp;
        SpongeParams sp;
    };

    FieldPtr field_;
    std::uint64_t d_ = 0;
    std::uint64_t num_vars_ = 0;
    std::vector<Term> terms_;
    std::vector<Constraint> constraints_;
    std::vector<Fe> coeffs_;  // Montgomery form
    std::optional<GeneratorParams> gen_;
};

// Builds the attestation circuit for a d-element model: every element of
// the client vector is range-decomposed, the dot product against the
// benchmark wires and the client norm are accumulated, and both vectors
// are absorbed into sponge digests that terminate on public wires (so the
// verifier pins the benchmark by its digest, not by baking it into keys).
ConstraintSystem build_metric_circuit(std::uint64_t d, const FixedPointParams& fp,
                                      const SpongeParams& sp);

// Fills in every intermediate wire for honest inputs. Throws
// DimensionMismatch if vector lengths disagree with the circuit and
// RangeViolation if any element is outside the signed fixed-point range.
std::pair<Witness, PublicStatement> generate_witness(const ConstraintSystem& cs,
                                                     const QuantizedVector& wk,
                                                     const QuantizedVector& ws);

// Evaluates every constraint; on failure optionally reports the first
// offending constraint index in *diag.
bool check_satisfied(const ConstraintSystem& cs, const Witness& w, const PublicStatement& x,
                     std::string* diag = nullptr);

}  // namespace vcsfl
