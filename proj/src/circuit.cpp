#include "vcsfl/circuit.hpp"

#include <unordered_map>

namespace vcsfl {
namespace {

// Static wire layout shared by the builder and the witness generator.
//
//   0..4                          public slots [one, ws_digest, h_k, D, A]
//   per element i (stride b+f+5): b+f+1 bits of (q_i + 2^{b+f}),
//                                 inverse of the shifted value,
//                                 benchmark element wire,
//                                 product wire t_i, square wire s_i
//   sponge over w_k:              3 wires (u^2, u^4, u^5) per round per
//                                 element; the final u^5 lands on public
//                                 slot 2 instead of a fresh wire
//   sponge over w_s:              same shape, final u^5 lands on slot 1
struct Layout {
    std::uint64_t d;
    std::uint32_t bits;
    std::uint32_t rounds;

    std::uint64_t elem_stride() const { return bits + 4ull; }
    std::uint64_t elem_base(std::uint64_t i) const {
        return ConstraintSystem::kNumPublic + i * elem_stride();
    }
    std::uint64_t bit(std::uint64_t i, std::uint32_t j) const { return elem_base(i) + j; }
    std::uint64_t inv(std::uint64_t i) const { return elem_base(i) + bits; }
    std::uint64_t wsv(std::uint64_t i) const { return elem_base(i) + bits + 1; }
    std::uint64_t prod(std::uint64_t i) const { return elem_base(i) + bits + 2; }
    std::uint64_t sq(std::uint64_t i) const { return elem_base(i) + bits + 3; }

    std::uint64_t sponge_block() const { return 3ull * rounds * d - 1; }
    std::uint64_t sponge_k_base() const { return elem_base(d); }
    std::uint64_t sponge_s_base() const { return sponge_k_base() + sponge_block(); }

    // slot: 0 = u^2, 1 = u^4, 2 = u^5
    std::uint64_t sp_k(std::uint64_t i, std::uint32_t j, int slot) const {
        if (i == d - 1 && j == rounds - 1 && slot == 2) return ConstraintSystem::kVarModelDigest;
        return sponge_k_base() + (i * rounds + j) * 3 + static_cast<std::uint32_t>(slot);
    }
    std::uint64_t sp_s(std::uint64_t i, std::uint32_t j, int slot) const {
        if (i == d - 1 && j == rounds - 1 && slot == 2) return ConstraintSystem::kVarWsDigest;
        return sponge_s_base() + (i * rounds + j) * 3 + static_cast<std::uint32_t>(slot);
    }
    std::uint64_t num_vars() const { return sponge_s_base() + sponge_block(); }
};

Layout layout_of(std::uint64_t d, const FixedPointParams& fp, const SpongeParams& sp) {
    // the shifted value q + 2^{b+f} spans [1, 2^{b+f+1}-1], one more bit
    // than the signed magnitude
    return Layout{d, static_cast<std::uint32_t>(fp.signed_bits()) + 1, sp.rounds};
}

}  // namespace

// Defined at namespace scope so it can be the friend named in the header.
class CircuitBuilder {
public:
    explicit CircuitBuilder(FieldPtr field) {
        cs_.field_ = std::move(field);
        intern(cs_.field_->one());              // pool id 0
        intern(cs_.field_->neg(cs_.field_->one()));  // pool id 1
    }

    std::uint32_t intern(const Fe& c) {
        auto it = pool_.find(c);
        if (it != pool_.end()) return it->second;
        auto id = static_cast<std::uint32_t>(cs_.coeffs_.size());
        cs_.coeffs_.push_back(c);
        pool_.emplace(c, id);
        return id;
    }

    std::uint32_t begin() const { return static_cast<std::uint32_t>(cs_.terms_.size()); }
    void push(std::uint64_t var, std::uint32_t coeff) {
        cs_.terms_.push_back(Term{static_cast<std::uint32_t>(var), coeff});
    }
    LcSpan end(std::uint32_t off) const {
        return LcSpan{off, static_cast<std::uint32_t>(cs_.terms_.size()) - off};
    }
    LcSpan single(std::uint64_t var, std::uint32_t coeff) {
        auto off = begin();
        push(var, coeff);
        return end(off);
    }
    void add(LcSpan a, LcSpan b, LcSpan c) { cs_.constraints_.push_back(Constraint{a, b, c}); }

    ConstraintSystem cs_;
    std::unordered_map<Fe, std::uint32_t, FeHash> pool_;
};

std::span<const std::uint32_t> ConstraintSystem::public_indices() const {
    static constexpr std::uint32_t kPublic[kNumPublic] = {0, 1, 2, 3, 4};
    return kPublic;
}

const FixedPointParams& ConstraintSystem::fixed_point() const {
    if (!gen_) throw Error("constraint system carries no generator parameters");
    return gen_->fp;
}

const SpongeParams& ConstraintSystem::sponge() const {
    if (!gen_) throw Error("constraint system carries no generator parameters");
    return gen_->sp;
}

std::uint64_t ConstraintSystem::var_bit(std::uint64_t i, std::uint32_t j) const {
    return layout_of(d_, fixed_point(), sponge()).bit(i, j);
}
std::uint64_t ConstraintSystem::var_inverse(std::uint64_t i) const {
    return layout_of(d_, fixed_point(), sponge()).inv(i);
}
std::uint64_t ConstraintSystem::var_benchmark(std::uint64_t i) const {
    return layout_of(d_, fixed_point(), sponge()).wsv(i);
}
std::uint64_t ConstraintSystem::var_product(std::uint64_t i) const {
    return layout_of(d_, fixed_point(), sponge()).prod(i);
}
std::uint64_t ConstraintSystem::var_square(std::uint64_t i) const {
    return layout_of(d_, fixed_point(), sponge()).sq(i);
}
std::uint64_t ConstraintSystem::var_sponge_client(std::uint64_t i, std::uint32_t j,
                                                  int slot) const {
    return layout_of(d_, fixed_point(), sponge()).sp_k(i, j, slot);
}
std::uint64_t ConstraintSystem::var_sponge_benchmark(std::uint64_t i, std::uint32_t j,
                                                     int slot) const {
    return layout_of(d_, fixed_point(), sponge()).sp_s(i, j, slot);
}

std::uint64_t ConstraintSystem::constraints_for(std::uint64_t d, const FixedPointParams& fp,
                                                const SpongeParams& sp) {
    // per element: signed_bits+1 bit constraints + nonzero + product +
    // square, plus 3 constraints per sponge round for each of the two
    // digests; base: the two accumulation constraints for D and A.
    return d * (static_cast<std::uint64_t>(fp.signed_bits()) + 4 + 6ull * sp.rounds) + 2;
}

std::uint64_t ConstraintSystem::vars_for(std::uint64_t d, const FixedPointParams& fp,
                                         const SpongeParams& sp) {
    return kNumPublic + d * (static_cast<std::uint64_t>(fp.signed_bits()) + 5) +
           6ull * sp.rounds * d - 2;
}

ConstraintSystem build_metric_circuit(std::uint64_t d, const FixedPointParams& fp,
                                      const SpongeParams& sp) {
    fp.validate();
    if (d == 0) throw ConfigError("model size must be positive");
    if (d > fp.d_max) {
        throw CircuitTooLarge("model size " + std::to_string(d) + " exceeds configured maximum " +
                              std::to_string(fp.d_max));
    }
    if (sp.constants.size() != sp.rounds) {
        throw ConfigError("sponge constants not derived for the configured round count");
    }

    const Field& F = *fp.field;
    const Layout L = layout_of(d, fp, sp);
    if (L.num_vars() > 0xffffffffull) throw CircuitTooLarge("variable index would overflow");

    CircuitBuilder b(fp.field);
    b.cs_.d_ = d;
    b.cs_.num_vars_ = L.num_vars();
    b.cs_.terms_.reserve(1240 * d + 8);
    b.cs_.constraints_.reserve(ConstraintSystem::constraints_for(d, fp, sp));

    const std::uint32_t kOne = 0;
    const std::uint32_t kMinusOne = 1;
    const std::uint64_t shift = static_cast<std::uint64_t>(fp.magnitude_limit()) + 1;
    const std::uint32_t kMinusShift = b.intern(F.neg(F.from_u64(shift)));

    std::vector<std::uint32_t> pow2(L.bits);
    {
        Fe two = F.from_u64(2);
        Fe p = F.one();
        for (std::uint32_t j = 0; j < L.bits; ++j) {
            pow2[j] = b.intern(p);
            p = F.mul(p, two);
        }
    }

    const LcSpan empty{};
    std::vector<LcSpan> wk_spans(d);

    // Per-element range decomposition and metric accumulators. The client
    // element never gets its own wire: it is always the linear combination
    // sum_j 2^j bit_j - 2^{b+f}, which is what makes the range bound sound
    // rather than merely checked.
    for (std::uint64_t i = 0; i < d; ++i) {
        auto off = b.begin();
        for (std::uint32_t j = 0; j < L.bits; ++j) b.push(L.bit(i, j), pow2[j]);
        LcSpan shifted{off, L.bits};
        b.push(ConstraintSystem::kVarOne, kMinusShift);
        LcSpan wk = b.end(off);
        wk_spans[i] = wk;

        for (std::uint32_t j = 0; j < L.bits; ++j) {
            LcSpan bit_a = b.single(L.bit(i, j), kOne);
            auto boff = b.begin();
            b.push(L.bit(i, j), kOne);
            b.push(ConstraintSystem::kVarOne, kMinusOne);
            b.add(bit_a, b.end(boff), empty);  // bit * (bit - 1) = 0
        }
        // shifted value is nonzero, so the all-zero bit pattern (which would
        // alias magnitude 2^{b+f}) is unsatisfiable
        LcSpan inv_s = b.single(L.inv(i), kOne);
        LcSpan one_s = b.single(ConstraintSystem::kVarOne, kOne);
        b.add(shifted, inv_s, one_s);
        LcSpan wsv_s = b.single(L.wsv(i), kOne);
        LcSpan prod_s = b.single(L.prod(i), kOne);
        b.add(wk, wsv_s, prod_s);
        b.add(wk, wk, b.single(L.sq(i), kOne));
    }

    // Sponge over the client vector. Round input u is a linear combination,
    // so only the three power wires per round are materialized.
    std::vector<std::uint32_t> round_const(sp.rounds);
    for (std::uint32_t j = 0; j < sp.rounds; ++j) round_const[j] = b.intern(sp.constants[j]);
    const std::uint32_t kC0MinusShift = b.intern(F.add(sp.constants[0], F.neg(F.from_u64(shift))));

    auto sponge_rounds = [&](std::uint64_t i, auto wire, LcSpan u0) {
        LcSpan u = u0;
        for (std::uint32_t j = 0; j < sp.rounds; ++j) {
            if (j > 0) {
                auto off = b.begin();
                b.push(wire(i, j - 1, 2), kOne);
                b.push(ConstraintSystem::kVarOne, round_const[j]);
                u = b.end(off);
            }
            LcSpan t2 = b.single(wire(i, j, 0), kOne);
            LcSpan t4 = b.single(wire(i, j, 1), kOne);
            b.add(u, u, t2);
            b.add(t2, t2, t4);
            b.add(t4, u, b.single(wire(i, j, 2), kOne));
        }
    };

    for (std::uint64_t i = 0; i < d; ++i) {
        // u = state + w_k[i] + c_0; the element's constant -2^{b+f} is folded
        // into the round constant so the combination stays one term shorter
        auto off = b.begin();
        if (i > 0) b.push(L.sp_k(i - 1, sp.rounds - 1, 2), kOne);
        for (std::uint32_t j = 0; j < L.bits; ++j) b.push(L.bit(i, j), pow2[j]);
        b.push(ConstraintSystem::kVarOne, kC0MinusShift);
        sponge_rounds(i, [&](std::uint64_t a, std::uint32_t r, int s) { return L.sp_k(a, r, s); },
                      b.end(off));
    }
    for (std::uint64_t i = 0; i < d; ++i) {
        auto off = b.begin();
        if (i > 0) b.push(L.sp_s(i - 1, sp.rounds - 1, 2), kOne);
        b.push(L.wsv(i), kOne);
        b.push(ConstraintSystem::kVarOne, round_const[0]);
        sponge_rounds(i, [&](std::uint64_t a, std::uint32_t r, int s) { return L.sp_s(a, r, s); },
                      b.end(off));
    }

    // D = sum_i t_i and A = sum_i s_i, bound to the public slots. Spans are
    // hoisted into locals: building one inside an argument list would
    // interleave arena pushes in unspecified order.
    {
        auto off = b.begin();
        for (std::uint64_t i = 0; i < d; ++i) b.push(L.prod(i), kOne);
        LcSpan dsum = b.end(off);
        LcSpan one_d = b.single(ConstraintSystem::kVarOne, kOne);
        LcSpan dot = b.single(ConstraintSystem::kVarDot, kOne);
        b.add(dsum, one_d, dot);
        off = b.begin();
        for (std::uint64_t i = 0; i < d; ++i) b.push(L.sq(i), kOne);
        LcSpan asum = b.end(off);
        LcSpan one_a = b.single(ConstraintSystem::kVarOne, kOne);
        LcSpan norm = b.single(ConstraintSystem::kVarNormSq, kOne);
        b.add(asum, one_a, norm);
    }

    b.cs_.gen_ = ConstraintSystem::GeneratorParams{fp, sp};
    return std::move(b.cs_);
}

std::pair<Witness, PublicStatement> generate_witness(const ConstraintSystem& cs,
                                                     const QuantizedVector& wk,
                                                     const QuantizedVector& ws) {
    const FixedPointParams& fp = cs.fixed_point();
    const SpongeParams& sp = cs.sponge();
    const Field& F = *cs.field();
    if (wk.elems.size() != cs.d() || ws.elems.size() != cs.d()) {
        throw DimensionMismatch("witness input has " + std::to_string(wk.elems.size()) + "/" +
                                std::to_string(ws.elems.size()) + " elements, circuit expects " +
                                std::to_string(cs.d()));
    }
    const Layout L = layout_of(cs.d(), fp, sp);

    Witness w;
    w.assignment.assign(cs.num_vars(), F.zero());
    auto& z = w.assignment;
    z[ConstraintSystem::kVarOne] = F.one();

    const std::int64_t limit = fp.magnitude_limit();
    auto decode = [&](const Fe& e, const char* which, std::uint64_t i) -> std::int64_t {
        std::int64_t v;
        try {
            v = static_cast<std::int64_t>(F.to_signed(e));
        } catch (const Error&) {
            throw RangeViolation(std::string(which) + " element " + std::to_string(i) +
                                 " is outside the signed fixed-point range");
        }
        if (v < -limit || v > limit) {
            throw RangeViolation(std::string(which) + " element " + std::to_string(i) +
                                 " is outside the signed fixed-point range");
        }
        return v;
    };

    Fe dot = F.zero();
    Fe norm = F.zero();
    std::vector<Fe> shifted(cs.d());
    for (std::uint64_t i = 0; i < cs.d(); ++i) {
        std::int64_t qk = decode(wk.elems[i], "client", i);
        decode(ws.elems[i], "benchmark", i);
        auto sh = static_cast<std::uint64_t>(qk + limit + 1);
        for (std::uint32_t j = 0; j < L.bits; ++j) {
            if ((sh >> j) & 1u) z[L.bit(i, j)] = F.one();
        }
        shifted[i] = F.from_u64(sh);
        z[L.wsv(i)] = ws.elems[i];
        z[L.prod(i)] = F.mul(wk.elems[i], ws.elems[i]);
        z[L.sq(i)] = F.square(wk.elems[i]);
        dot = F.add(dot, z[L.prod(i)]);
        norm = F.add(norm, z[L.sq(i)]);
    }
    std::vector<Fe> inverses = batch_inverse(F, shifted);
    for (std::uint64_t i = 0; i < cs.d(); ++i) z[L.inv(i)] = inverses[i];
    z[ConstraintSystem::kVarDot] = dot;
    z[ConstraintSystem::kVarNormSq] = norm;

    auto run_sponge = [&](const std::vector<Fe>& elems, auto wire) {
        Fe state = F.zero();
        for (std::uint64_t i = 0; i < elems.size(); ++i) {
            Fe x = F.add(state, elems[i]);
            for (std::uint32_t j = 0; j < sp.rounds; ++j) {
                Fe u = F.add(x, sp.constants[j]);
                Fe t2 = F.square(u);
                Fe t4 = F.square(t2);
                x = F.mul(t4, u);
                z[wire(i, j, 0)] = t2;
                z[wire(i, j, 1)] = t4;
                z[wire(i, j, 2)] = x;
            }
            state = x;
        }
        return state;
    };
    Fe hk = run_sponge(wk.elems,
                       [&](std::uint64_t i, std::uint32_t j, int s) { return L.sp_k(i, j, s); });
    Fe hs = run_sponge(ws.elems,
                       [&](std::uint64_t i, std::uint32_t j, int s) { return L.sp_s(i, j, s); });

    return {std::move(w), PublicStatement{hs, hk, dot, norm}};
}

namespace {

Fe eval_lc(const ConstraintSystem& cs, const Field& F, LcSpan s, std::span<const Fe> z) {
    Fe acc = F.zero();
    for (const Term& t : cs.terms(s)) {
        if (t.coeff == 0) {
            acc = F.add(acc, z[t.var]);
        } else if (t.coeff == 1) {
            acc = F.sub(acc, z[t.var]);
        } else {
            acc = F.add(acc, F.mul(cs.coeff(t.coeff), z[t.var]));
        }
    }
    return acc;
}

}  // namespace

bool check_satisfied(const ConstraintSystem& cs, const Witness& w, const PublicStatement& x,
                     std::string* diag) {
    const Field& F = *cs.field();
    auto fail = [&](const std::string& why) {
        if (diag != nullptr) *diag = why;
        return false;
    };
    if (w.assignment.size() != cs.num_vars()) {
        return fail("assignment has " + std::to_string(w.assignment.size()) +
                    " variables, circuit expects " + std::to_string(cs.num_vars()));
    }
    std::span<const Fe> z = w.assignment;
    if (!(z[ConstraintSystem::kVarOne] == F.one())) return fail("constant slot is not one");
    const Fe* slots[4] = {&x.ws_digest, &x.model_digest, &x.dot, &x.norm_sq};
    for (int i = 0; i < 4; ++i) {
        if (!(z[i + 1] == *slots[i])) {
            return fail("public slot " + std::to_string(i + 1) +
                        " disagrees with the claimed statement");
        }
    }
    const auto constraints = cs.constraints();
    for (std::size_t idx = 0; idx < constraints.size(); ++idx) {
        const Constraint& c = constraints[idx];
        Fe va = eval_lc(cs, F, c.a, z);
        Fe vb = (c.b.off == c.a.off && c.b.len == c.a.len) ? va : eval_lc(cs, F, c.b, z);
        Fe vc = eval_lc(cs, F, c.c, z);
        if (!(F.mul(va, vb) == vc)) {
            return fail("constraint " + std::to_string(idx) + " unsatisfied");
        }
    }
    return true;
}

void ConstraintSystem::serialize(ByteSink& out) const {
    out.magic("VCSR1CS1");
    out.u64le(d_);
    out.u64le(num_vars_);
    out.u64le(constraints_.size());
    // coefficient pool is small; convert out of Montgomery form once
    std::vector<std::array<std::uint8_t, 32>> enc(coeffs_.size());
    for (std::size_t i = 0; i < coeffs_.size(); ++i) enc[i] = field_->to_bytes(coeffs_[i]);
    auto emit = [&](LcSpan s) {
        for (const Term& t : terms(s)) {
            out.u32le(t.var);
            out.bytes(enc[t.coeff]);
        }
    };
    for (const Constraint& c : constraints_) {
        out.u32le(c.a.len);
        out.u32le(c.b.len);
        out.u32le(c.c.len);
        emit(c.a);
        emit(c.b);
        emit(c.c);
    }
}

std::vector<std::uint8_t> ConstraintSystem::serialize_to_vector() const {
    VectorSink sink;
    sink.buf.reserve(serialized_size());
    serialize(sink);
    return std::move(sink.buf);
}

std::uint64_t ConstraintSystem::serialized_size() const {
    std::uint64_t n = 8 + 3 * 8;
    for (const Constraint& c : constraints_) {
        n += 12 + 36ull * (static_cast<std::uint64_t>(c.a.len) + c.b.len + c.c.len);
    }
    return n;
}

std::array<std::uint8_t, 32> ConstraintSystem::digest() const {
    DigestSink sink;
    serialize(sink);
    return sink.finish();
}

ConstraintSystem ConstraintSystem::deserialize(std::span<const std::uint8_t> data,
                                               FieldPtr field) {
    ByteReader r(data);
    r.expect_magic("VCSR1CS1");
    ConstraintSystem cs;
    cs.field_ = field;
    const Field& F = *field;
    cs.d_ = r.u64le();
    cs.num_vars_ = r.u64le();
    std::uint64_t n_constraints = r.u64le();
    if (cs.d_ == 0 || cs.num_vars_ < kNumPublic) {
        throw MalformedEncoding("constraint system header out of range");
    }
    if (cs.num_vars_ > 0xffffffffull) throw MalformedEncoding("variable count overflows");
    // 12 bytes of lengths per constraint at minimum
    if (n_constraints > data.size() / 12) throw MalformedEncoding("constraint count overflows");

    cs.coeffs_.push_back(F.one());
    cs.coeffs_.push_back(F.neg(F.one()));
    std::unordered_map<Fe, std::uint32_t, FeHash> pool;
    pool.emplace(cs.coeffs_[0], 0u);
    pool.emplace(cs.coeffs_[1], 1u);
    auto intern = [&](const Fe& c) {
        auto it = pool.find(c);
        if (it != pool.end()) return it->second;
        auto id = static_cast<std::uint32_t>(cs.coeffs_.size());
        cs.coeffs_.push_back(c);
        pool.emplace(c, id);
        return id;
    };

    cs.constraints_.reserve(n_constraints);
    std::array<std::uint8_t, 32> buf{};
    auto read_lc = [&](std::uint32_t len) {
        auto off = static_cast<std::uint32_t>(cs.terms_.size());
        for (std::uint32_t i = 0; i < len; ++i) {
            std::uint32_t var = r.u32le();
            if (var >= cs.num_vars_) throw MalformedEncoding("term references unknown variable");
            auto raw = r.bytes(32);
            std::copy(raw.begin(), raw.end(), buf.begin());
            cs.terms_.push_back(Term{var, intern(F.from_bytes(buf))});
        }
        return LcSpan{off, len};
    };
    auto spans_equal = [&](LcSpan a, LcSpan b) {
        if (a.len != b.len) return false;
        for (std::uint32_t i = 0; i < a.len; ++i) {
            const Term& ta = cs.terms_[a.off + i];
            const Term& tb = cs.terms_[b.off + i];
            if (ta.var != tb.var || ta.coeff != tb.coeff) return false;
        }
        return true;
    };
    for (std::uint64_t i = 0; i < n_constraints; ++i) {
        std::uint32_t la = r.u32le();
        std::uint32_t lb = r.u32le();
        std::uint32_t lc = r.u32le();
        LcSpan a = read_lc(la);
        LcSpan b = read_lc(lb);
        // restore a == b sharing (squarings) so evaluation skips the re-walk
        if (spans_equal(a, b)) b = a;
        LcSpan c = read_lc(lc);
        cs.constraints_.push_back(Constraint{a, b, c});
    }
    if (!r.done()) throw MalformedEncoding("trailing bytes after constraint system");
    return cs;
}

}  // namespace vcsfl
