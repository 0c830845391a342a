#pragma once

// Qubit physics for the simulator: rotations about equatorial axes whose
// phase follows the single-sideband carrier, CZ, T1 relaxation and
// projective or expectation-value measurement.

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>

#include <fmt/format.h>

#include "quma/adi.hpp"
#include "quma/error.hpp"

namespace quma {

using Complex = std::complex<double>;

/// Row-major 2x2 matrix.
using Matrix2 = std::array<Complex, 4>;

/// Qubit and resonator frequencies of the reference device. They only set
/// the analog chain, which is not simulated; kept for documentation.
inline constexpr double kQubitFrequencyHz = 6.466e9;
inline constexpr double kResonatorFrequencyHz = 6.850e9;
inline constexpr double kDefaultSsbHz = -50e6;
inline constexpr double kDefaultT1Ns = 20000.0;

enum class SimMode { Sample, Expectation };

inline std::string_view to_string(SimMode m) { return m == SimMode::Sample ? "sample" : "expectation"; }

/// exp(-i theta/2 (cos(phi) X + sin(phi) Y))
inline Matrix2 rotation_matrix(double axis, double angle) {
    const double c = std::cos(angle / 2);
    const double s = std::sin(angle / 2);
    const Complex mi{0.0, -1.0};
    return {Complex{c, 0.0}, mi * s * std::polar(1.0, -axis), mi * s * std::polar(1.0, axis), Complex{c, 0.0}};
}

/// Dense state vector over N qubits; bit k of the basis index is qubit slot k.
template <std::size_t N>
class StateVector {
public:
    static constexpr std::size_t kDim = std::size_t{1} << N;

    StateVector() { amps_[0] = 1.0; }
    explicit StateVector(const std::array<Complex, kDim>& amps) : amps_(amps) {}

    static StateVector basis(std::size_t index) {
        std::array<Complex, kDim> a{};
        a.at(index) = 1.0;
        return StateVector(a);
    }

    const std::array<Complex, kDim>& amplitudes() const { return amps_; }
    Complex operator[](std::size_t i) const { return amps_[i]; }

    void apply(std::size_t slot, const Matrix2& u) {
        const std::size_t bit = std::size_t{1} << slot;
        for (std::size_t i = 0; i < kDim; ++i) {
            if ((i & bit) != 0) continue;
            Complex a0 = amps_[i];
            Complex a1 = amps_[i | bit];
            amps_[i] = u[0] * a0 + u[1] * a1;
            amps_[i | bit] = u[2] * a0 + u[3] * a1;
        }
    }

    void apply_cz(std::size_t a, std::size_t b) {
        const std::size_t mask = (std::size_t{1} << a) | (std::size_t{1} << b);
        for (std::size_t i = 0; i < kDim; ++i) {
            if ((i & mask) == mask) amps_[i] = -amps_[i];
        }
    }

    double prob1(std::size_t slot) const {
        const std::size_t bit = std::size_t{1} << slot;
        double p = 0.0;
        for (std::size_t i = 0; i < kDim; ++i) {
            if ((i & bit) != 0) p += std::norm(amps_[i]);
        }
        return p;
    }

    double norm() const {
        double n = 0.0;
        for (const auto& a : amps_) n += std::norm(a);
        return std::sqrt(n);
    }

    void normalize() {
        const double n = norm();
        if (n == 0.0) throw runtime_fault("qsim", "cannot normalise a zero state");
        for (auto& a : amps_) a /= n;
    }

    /// Collapses slot to `value` and renormalises.
    void project(std::size_t slot, int value) {
        const std::size_t bit = std::size_t{1} << slot;
        for (std::size_t i = 0; i < kDim; ++i) {
            bool is_one = (i & bit) != 0;
            if (is_one != (value == 1)) amps_[i] = 0.0;
        }
        normalize();
    }

    /// Moves the |1> component of `slot` onto |0> (lowering operator), then renormalises.
    void lower(std::size_t slot) {
        const std::size_t bit = std::size_t{1} << slot;
        for (std::size_t i = 0; i < kDim; ++i) {
            if ((i & bit) != 0) continue;
            amps_[i] = amps_[i | bit];
            amps_[i | bit] = 0.0;
        }
        normalize();
    }

    /// Population-exact amplitude damping on a pure state: the excited
    /// population becomes p1 * decay and the ground components are rescaled to
    /// keep unit norm, preserving relative phases.
    void damp(std::size_t slot, double decay) {
        const std::size_t bit = std::size_t{1} << slot;
        double p0 = 0.0;
        double p1 = 0.0;
        for (std::size_t i = 0; i < kDim; ++i) ((i & bit) != 0 ? p1 : p0) += std::norm(amps_[i]);
        if (p1 == 0.0 || decay == 1.0) return;
        const double total = p0 + p1;
        p0 /= total;
        p1 /= total;
        const double new_p1 = p1 * decay;
        if (p0 < 1e-20) {
            // Effectively pure excited: the ground part is the lowered excited part.
            const double scale = 1.0 / std::sqrt(total);
            for (std::size_t i = 0; i < kDim; ++i) {
                if ((i & bit) != 0) continue;
                amps_[i] = amps_[i | bit] * scale * std::sqrt(1.0 - new_p1);
                amps_[i | bit] *= scale * std::sqrt(decay);
            }
            return;
        }
        const double g = std::sqrt((1.0 - new_p1) / p0 / total);
        const double e = std::sqrt(decay / total);
        for (std::size_t i = 0; i < kDim; ++i) {
            amps_[i] *= (i & bit) != 0 ? e : g;
        }
    }

    bool operator==(const StateVector&) const = default;

private:
    std::array<Complex, kDim> amps_{};
};

/// |<a|b>|, insensitive to global phase.
template <std::size_t N>
double fidelity(const StateVector<N>& a, const StateVector<N>& b) {
    Complex overlap = 0.0;
    for (std::size_t i = 0; i < StateVector<N>::kDim; ++i) overlap += std::conj(a[i]) * b[i];
    return std::abs(overlap);
}

/// Density matrix over N qubits. Expectation-mode pipeline runs use it so
/// that T1 decay damps populations and coherences like the amplitude-damping
/// channel instead of inventing coherence on a pure state.
template <std::size_t N>
class DensityMatrix {
public:
    static constexpr std::size_t kDim = std::size_t{1} << N;

    DensityMatrix() { rho_[0] = 1.0; }
    explicit DensityMatrix(const StateVector<N>& psi) {
        for (std::size_t i = 0; i < kDim; ++i) {
            for (std::size_t j = 0; j < kDim; ++j) at(i, j) = psi[i] * std::conj(psi[j]);
        }
    }

    Complex operator()(std::size_t i, std::size_t j) const { return rho_[i * kDim + j]; }

    /// rho -> U rho U^dagger with U acting on `slot`.
    void apply(std::size_t slot, const Matrix2& u) {
        const std::size_t bit = std::size_t{1} << slot;
        for (std::size_t j = 0; j < kDim; ++j) {
            for (std::size_t i = 0; i < kDim; ++i) {
                if ((i & bit) != 0) continue;
                Complex a0 = at(i, j);
                Complex a1 = at(i | bit, j);
                at(i, j) = u[0] * a0 + u[1] * a1;
                at(i | bit, j) = u[2] * a0 + u[3] * a1;
            }
        }
        for (std::size_t i = 0; i < kDim; ++i) {
            for (std::size_t j = 0; j < kDim; ++j) {
                if ((j & bit) != 0) continue;
                Complex a0 = at(i, j);
                Complex a1 = at(i, j | bit);
                at(i, j) = a0 * std::conj(u[0]) + a1 * std::conj(u[1]);
                at(i, j | bit) = a0 * std::conj(u[2]) + a1 * std::conj(u[3]);
            }
        }
    }

    void apply_cz(std::size_t a, std::size_t b) {
        const std::size_t mask = (std::size_t{1} << a) | (std::size_t{1} << b);
        for (std::size_t i = 0; i < kDim; ++i) {
            for (std::size_t j = 0; j < kDim; ++j) {
                if (((i & mask) == mask) != ((j & mask) == mask)) at(i, j) = -at(i, j);
            }
        }
    }

    double prob1(std::size_t slot) const {
        const std::size_t bit = std::size_t{1} << slot;
        double p = 0.0;
        for (std::size_t i = 0; i < kDim; ++i) {
            if ((i & bit) != 0) p += at(i, i).real();
        }
        return p;
    }

    double trace() const {
        double t = 0.0;
        for (std::size_t i = 0; i < kDim; ++i) t += at(i, i).real();
        return t;
    }

    /// Amplitude damping on `slot`: excited population scales by `decay`,
    /// coherences with the excited level by sqrt(decay).
    void damp(std::size_t slot, double decay) {
        if (decay == 1.0) return;
        const std::size_t bit = std::size_t{1} << slot;
        const double gamma = 1.0 - decay;
        const double half = std::sqrt(decay);
        for (std::size_t i = 0; i < kDim; ++i) {
            if ((i & bit) != 0) continue;
            for (std::size_t j = 0; j < kDim; ++j) {
                if ((j & bit) != 0) continue;
                at(i, j) += gamma * at(i | bit, j | bit);
                at(i | bit, j | bit) *= decay;
                at(i, j | bit) *= half;
                at(i | bit, j) *= half;
            }
        }
    }

    /// <psi|rho|psi>.
    double overlap(const StateVector<N>& psi) const {
        Complex acc = 0.0;
        for (std::size_t i = 0; i < kDim; ++i) {
            for (std::size_t j = 0; j < kDim; ++j) acc += std::conj(psi[i]) * at(i, j) * psi[j];
        }
        return acc.real();
    }

private:
    Complex& at(std::size_t i, std::size_t j) { return rho_[i * kDim + j]; }
    const Complex& at(std::size_t i, std::size_t j) const { return rho_[i * kDim + j]; }

    std::array<Complex, kDim * kDim> rho_{};
};

using TwoQubitRegister = StateVector<2>;

/// Single qubit with timing bookkeeping for carrier phase and relaxation.
struct QubitState {
    StateVector<1> amps;
    TimePs last_start_ps = 0;
    TimePs last_end_ps = 0;
    TimePs t_ref_ps = 0;
    double t1_ns = kDefaultT1Ns;

    double p1() const { return amps.prob1(0); }
};

// ---------------------------------------------------------------------------
// Randomness

using Rng = std::mt19937_64;

/// splitmix64 finaliser.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

/// Independent generator for (seed, index), e.g. one per measurement segment.
inline Rng substream(std::uint64_t seed, std::uint64_t index) { return Rng(mix64(mix64(seed) ^ index)); }

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

// ---------------------------------------------------------------------------
// Carrier phase

/// 2*pi*f*t reduced modulo 2*pi. Exact when f is an integral number of Hz.
inline double carrier_phase(double ssb_hz, TimePs t_ps) {
    constexpr std::int64_t kPsPerSecond = 1'000'000'000'000;
    double turns = 0.0;
    if (std::nearbyint(ssb_hz) == ssb_hz && std::abs(ssb_hz) < 9.0e15) {
        __int128 product = static_cast<__int128>(static_cast<std::int64_t>(ssb_hz)) * t_ps;
        __int128 rem = product % kPsPerSecond;
        if (rem < 0) rem += kPsPerSecond;
        turns = static_cast<double>(static_cast<std::int64_t>(rem)) / static_cast<double>(kPsPerSecond);
    } else {
        long double x = static_cast<long double>(ssb_hz) * static_cast<long double>(t_ps) * 1e-12L;
        turns = static_cast<double>(x - std::floor(x));
    }
    return 2.0 * std::numbers::pi * turns;
}

// ---------------------------------------------------------------------------
// Operations

inline void apply_rotation(QubitState& q, double axis, double angle) {
    q.amps.apply(0, rotation_matrix(axis, angle));
}

/// Effective axis of a pulse starting at `start_ps`: phi0 + 2*pi*f*(t_s - t_ref).
inline double effective_axis(const GateSemantics& gate, TimePs start_ps, TimePs t_ref_ps, double ssb_hz) {
    return gate.axis + carrier_phase(ssb_hz, start_ps - t_ref_ps);
}

inline void apply_pulse_event(QubitState& q, const PulseEvent& ev, double ssb_hz) {
    if (ev.start_ps < q.last_start_ps) {
        throw runtime_fault("qsim", fmt::format("pulse at {} ps precedes previous pulse at {} ps",
                                                ev.start_ps, q.last_start_ps));
    }
    switch (ev.gate.kind) {
        case GateKind::Rotation:
            apply_rotation(q, effective_axis(ev.gate, ev.start_ps, q.t_ref_ps, ssb_hz), ev.gate.angle);
            break;
        case GateKind::Identity: break;
        case GateKind::CZ: throw runtime_fault("qsim", "CZ requires a two-qubit register");
        case GateKind::Measurement: throw runtime_fault("qsim", "measurement pulse is not a gate");
    }
    q.last_start_ps = ev.start_ps;
    q.last_end_ps = ev.start_ps + ev.duration_ps;
}

/// T1 relaxation over an idle period. Sample mode draws a quantum-jump
/// trajectory (decay to |0> with probability p1 * (1 - e^{-t/T1})); expectation
/// mode scales the excited population deterministically.
template <std::size_t N>
void relax(StateVector<N>& s, std::size_t slot, double idle_ns, double t1_ns, SimMode mode, Rng* rng) {
    if (idle_ns <= 0.0 || !(t1_ns > 0.0) || std::isinf(t1_ns)) return;
    const double decay = std::exp(-idle_ns / t1_ns);
    if (mode == SimMode::Expectation) {
        s.damp(slot, decay);
        return;
    }
    if (rng == nullptr) throw runtime_fault("qsim", "sample-mode relaxation needs a random stream");
    const double p1 = s.prob1(slot);
    if (p1 == 0.0) return;
    if (uniform01(*rng) < p1 * (1.0 - decay)) {
        s.lower(slot);
    } else {
        // No-jump evolution: excited amplitudes shrink by e^{-t/2T1}.
        const std::size_t bit = std::size_t{1} << slot;
        std::array<Complex, StateVector<N>::kDim> a = s.amplitudes();
        for (std::size_t i = 0; i < a.size(); ++i) {
            if ((i & bit) != 0) a[i] *= std::sqrt(decay);
        }
        s = StateVector<N>(a);
        s.normalize();
    }
}

inline void relax(QubitState& q, double idle_ns, SimMode mode, Rng* rng) {
    relax(q.amps, 0, idle_ns, q.t1_ns, mode, rng);
}

struct ReadoutModel {
    double mu0 = 0.1;
    double mu1 = 0.9;
    double sigma = 0.0;
};

struct MeasureResult {
    std::optional<int> outcome;  // sample mode only
    double p1 = 0.0;
    double level = 0.0;          // analog readout level handed to the MDU
};

/// Sample mode projects; expectation mode reports p1 and leaves the state as is.
template <std::size_t N>
MeasureResult measure(StateVector<N>& s, std::size_t slot, SimMode mode, Rng& rng, const ReadoutModel& readout) {
    MeasureResult r;
    r.p1 = s.prob1(slot);
    if (mode == SimMode::Sample) {
        int bit = uniform01(rng) < r.p1 ? 1 : 0;
        s.project(slot, bit);
        r.outcome = bit;
        r.level = bit == 1 ? readout.mu1 : readout.mu0;
    } else {
        r.level = r.p1 * readout.mu1 + (1.0 - r.p1) * readout.mu0;
    }
    if (readout.sigma > 0.0) r.level += std::normal_distribution<double>(0.0, readout.sigma)(rng);
    return r;
}

inline MeasureResult measure(QubitState& q, SimMode mode, Rng& rng, const ReadoutModel& readout) {
    return measure(q.amps, 0, mode, rng, readout);
}

inline void apply_cz(TwoQubitRegister& reg) { reg.apply_cz(0, 1); }

// ---------------------------------------------------------------------------
// Pipeline backend

struct BackendConfig {
    SimMode mode = SimMode::Expectation;
    double ssb_hz = kDefaultSsbHz;
    double t1_ns = kDefaultT1Ns;
    ReadoutModel readout;
    /// Reset the measured qubit to |0> once its readout is taken, modelling a
    /// perfect initialisation by waiting.
    bool ideal_init = true;
    std::uint64_t seed = 0;
    std::uint64_t measurement_offset = 0;  // first substream index
    TimePs time_offset_ps = 0;             // shifts the carrier reference
};

/// Holds the state of up to two qubits, allocated to register slots on first use.
class QubitBackend {
public:
    static constexpr std::size_t kSlots = 2;

    explicit QubitBackend(BackendConfig cfg)
        : cfg_(cfg), measurement_index_(cfg.measurement_offset), rng_(substream(cfg.seed, measurement_index_)) {
        slot_of_.fill(-1);
    }

    void apply(const PulseEvent& ev) {
        auto qubits = ev.qubits.members();
        std::array<std::size_t, kSlots> slots{};
        if (qubits.size() > kSlots) throw runtime_fault("qsim", "pulse addresses more than two qubits");
        for (std::size_t i = 0; i < qubits.size(); ++i) {
            slots[i] = slot(qubits[i]);
            auto& t = timing_[slots[i]];
            if (ev.start_ps < t.last_start_ps) {
                throw runtime_fault("qsim", fmt::format("pulse on q{} at {} ps precedes previous pulse at {} ps",
                                                        qubits[i], ev.start_ps, t.last_start_ps));
            }
            idle(slots[i], ev.start_ps);
        }
        switch (ev.gate.kind) {
            case GateKind::Identity: break;
            case GateKind::Rotation: {
                double axis = effective_axis(ev.gate, ev.start_ps + cfg_.time_offset_ps, 0, cfg_.ssb_hz);
                auto u = rotation_matrix(axis, ev.gate.angle);
                for (std::size_t i = 0; i < qubits.size(); ++i) {
                    if (mixed()) {
                        rho_.apply(slots[i], u);
                    } else {
                        state_.apply(slots[i], u);
                    }
                }
                break;
            }
            case GateKind::CZ:
                if (qubits.size() != 2) throw runtime_fault("qsim", "CZ needs exactly two qubits");
                if (mixed()) {
                    rho_.apply_cz(slots[0], slots[1]);
                } else {
                    state_.apply_cz(slots[0], slots[1]);
                }
                break;
            case GateKind::Measurement: throw runtime_fault("qsim", "measurement codeword on a drive channel");
        }
        for (std::size_t i = 0; i < qubits.size(); ++i) {
            timing_[slots[i]].last_start_ps = ev.start_ps;
            timing_[slots[i]].last_end_ps = ev.start_ps + ev.duration_ps;
        }
    }

    /// Measurement pulse starting at `start_ps` on every qubit in the set.
    /// Each call is one measurement segment and advances the random substream.
    void measure_pulse(QubitSet qubits, TimePs start_ps, TimePs duration_ps) {
        for (auto q : qubits.members()) {
            auto s = slot(q);
            idle(s, start_ps);
            MeasureResult r;
            if (mixed()) {
                r.p1 = rho_.prob1(s);
                r.level = r.p1 * cfg_.readout.mu1 + (1.0 - r.p1) * cfg_.readout.mu0;
                if (cfg_.readout.sigma > 0.0) {
                    r.level += std::normal_distribution<double>(0.0, cfg_.readout.sigma)(rng_);
                }
                if (cfg_.ideal_init) rho_.damp(s, 0.0);
            } else {
                r = measure(state_, s, cfg_.mode, rng_, cfg_.readout);
                if (cfg_.ideal_init) state_.damp(s, 0.0);
            }
            readouts_[q] = r;
            timing_[s].last_end_ps = std::max(timing_[s].last_end_ps, start_ps + duration_ps);
        }
        ++measurement_index_;
        rng_ = substream(cfg_.seed, measurement_index_);
    }

    /// Consumes the latest readout of `q`.
    MeasureResult take_readout(unsigned q) {
        auto r = readouts_.at(q);
        if (!r) throw runtime_fault("qsim", fmt::format("MD on q{} without a preceding measurement pulse", q));
        readouts_[q].reset();
        return *r;
    }

    double prob1(unsigned q) const {
        auto s = slot_of_.at(q);
        if (s < 0) return 0.0;
        return mixed() ? rho_.prob1(static_cast<std::size_t>(s)) : state_.prob1(static_cast<std::size_t>(s));
    }

    /// Pure state (sample mode) and density matrix (expectation mode).
    const TwoQubitRegister& state() const { return state_; }
    const DensityMatrix<2>& density() const { return rho_; }
    bool mixed() const { return cfg_.mode == SimMode::Expectation; }
    std::optional<std::size_t> slot_of(unsigned q) const {
        auto s = slot_of_.at(q);
        if (s < 0) return std::nullopt;
        return static_cast<std::size_t>(s);
    }

private:
    struct SlotTiming {
        TimePs last_start_ps = 0;
        TimePs last_end_ps = 0;
    };

    std::size_t slot(unsigned q) {
        if (slot_of_.at(q) < 0) {
            if (used_ == kSlots) throw runtime_fault("qsim", fmt::format("q{}: backend holds at most two qubits", q));
            slot_of_[q] = static_cast<int>(used_++);
        }
        return static_cast<std::size_t>(slot_of_[q]);
    }

    void idle(std::size_t s, TimePs until_ps) {
        auto& t = timing_[s];
        if (until_ps > t.last_end_ps) {
            const double idle_ns = static_cast<double>(until_ps - t.last_end_ps) / 1000.0;
            if (mixed()) {
                if (cfg_.t1_ns > 0.0 && !std::isinf(cfg_.t1_ns)) rho_.damp(s, std::exp(-idle_ns / cfg_.t1_ns));
            } else {
                relax(state_, s, idle_ns, cfg_.t1_ns, cfg_.mode, &rng_);
            }
            t.last_end_ps = until_ps;
        }
    }

    BackendConfig cfg_;
    TwoQubitRegister state_;
    DensityMatrix<2> rho_;
    std::array<int, kMaxQubits> slot_of_{};
    std::size_t used_ = 0;
    std::array<SlotTiming, kSlots> timing_{};
    std::array<std::optional<MeasureResult>, kMaxQubits> readouts_{};
    std::uint64_t measurement_index_ = 0;
    Rng rng_;
};

}  // namespace quma
