#pragma once

// Analog-digital interface: micro-operation units (codeword sequences),
// codeword-triggered pulse generation, measurement pulse output and the
// measurement discrimination unit.

#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "quma/error.hpp"
#include "quma/isa.hpp"

namespace quma {

/// Picoseconds. All analog times are integral picoseconds so that carrier
/// phase arithmetic stays exact.
using TimePs = std::int64_t;

enum class GateKind { Identity, Rotation, CZ, Measurement };

struct GateSemantics {
    GateKind kind = GateKind::Identity;
    double axis = 0.0;   // radians in the equatorial plane, 0 = x
    double angle = 0.0;  // rotation angle, radians

    static GateSemantics identity() { return {}; }
    static GateSemantics rotation(double axis, double angle) { return {GateKind::Rotation, axis, angle}; }
    static GateSemantics cz() { return {GateKind::CZ, 0.0, 0.0}; }
    static GateSemantics measurement() { return {GateKind::Measurement, 0.0, 0.0}; }

    bool is_x_axis() const {
        return kind == GateKind::Rotation && std::abs(std::sin(axis)) < 1e-12;
    }
    bool operator==(const GateSemantics&) const = default;
};

enum class EnvelopeShape { Gaussian, Samples };

struct PulseDefinition {
    std::uint32_t codeword = 0;
    std::string name;
    GateSemantics gate;
    double duration_ns = 20.0;
    EnvelopeShape envelope = EnvelopeShape::Gaussian;
    std::vector<double> samples_i;  // only for EnvelopeShape::Samples
    std::vector<double> samples_q;
    /// Measurement pulses gate an external carrier and occupy no wave memory.
    bool stored = true;

    static PulseDefinition make(std::uint32_t cw, std::string name, GateSemantics gate, double duration_ns = 20.0) {
        PulseDefinition d;
        d.codeword = cw;
        d.name = std::move(name);
        d.gate = gate;
        d.duration_ns = duration_ns;
        return d;
    }
};

class LookupTable {
public:
    LookupTable() = default;
    LookupTable(double sample_rate_gsps, unsigned resolution_bits)
        : sample_rate_gsps_(sample_rate_gsps), resolution_bits_(resolution_bits) {}

    void add(PulseDefinition def) {
        if (entries_.contains(def.codeword)) {
            throw Error(ErrorKind::Parse, fmt::format("duplicate codeword {} in lookup table", def.codeword));
        }
        if (!(def.duration_ns > 0.0)) {
            throw Error(ErrorKind::Parse, fmt::format("codeword {}: duration must be positive", def.codeword));
        }
        entries_.emplace(def.codeword, std::move(def));
    }

    bool contains(std::uint32_t cw) const { return entries_.contains(cw); }

    const PulseDefinition& at(std::uint32_t cw) const {
        auto it = entries_.find(cw);
        if (it == entries_.end()) throw runtime_fault("adi", fmt::format("unknown codeword {}", cw));
        return it->second;
    }

    const std::map<std::uint32_t, PulseDefinition>& entries() const { return entries_; }
    double sample_rate_gsps() const { return sample_rate_gsps_; }
    unsigned resolution_bits() const { return resolution_bits_; }

    /// N_s = 2 * T_d * R_s: I and Q channels, one sample each per tick.
    std::size_t samples_for(const PulseDefinition& def) const {
        return static_cast<std::size_t>(std::llround(2.0 * def.duration_ns * sample_rate_gsps_));
    }

    std::size_t total_samples() const {
        std::size_t n = 0;
        for (const auto& [cw, def] : entries_) {
            if (def.stored) n += samples_for(def);
        }
        return n;
    }

    /// Wave memory footprint in bytes at the table's vertical resolution.
    double footprint_bytes() const {
        return static_cast<double>(total_samples()) * resolution_bits_ / 8.0;
    }

private:
    double sample_rate_gsps_ = 1.0;
    unsigned resolution_bits_ = 12;
    std::map<std::uint32_t, PulseDefinition> entries_;
};

/// Memory needed when every operation combination is uploaded as its own
/// waveform instead of being assembled from codeword-triggered primitives.
inline double combined_waveform_bytes(std::size_t combinations, std::size_t pulses_per_combination,
                                      double pulse_ns, double sample_rate_gsps, unsigned resolution_bits) {
    double samples = static_cast<double>(combinations * pulses_per_combination) * 2.0 * pulse_ns * sample_rate_gsps;
    return samples * resolution_bits / 8.0;
}

/// The seven single-qubit primitives: I, Rx(pi), Rx(pi/2), Rx(-pi/2),
/// Ry(pi), Ry(pi/2), Ry(-pi/2) on codewords 0..6, 20 ns each.
inline LookupTable single_qubit_lookup_table(double sample_rate_gsps = 1.0, unsigned resolution_bits = 12) {
    using std::numbers::pi;
    LookupTable lut(sample_rate_gsps, resolution_bits);
    const double y = pi / 2;
    lut.add(PulseDefinition::make(0, "I", GateSemantics::identity()));
    lut.add(PulseDefinition::make(1, "X180", GateSemantics::rotation(0, pi)));
    lut.add(PulseDefinition::make(2, "X90", GateSemantics::rotation(0, pi / 2)));
    lut.add(PulseDefinition::make(3, "Xm90", GateSemantics::rotation(0, -pi / 2)));
    lut.add(PulseDefinition::make(4, "Y180", GateSemantics::rotation(y, pi)));
    lut.add(PulseDefinition::make(5, "Y90", GateSemantics::rotation(y, pi / 2)));
    lut.add(PulseDefinition::make(6, "Ym90", GateSemantics::rotation(y, -pi / 2)));
    return lut;
}

inline constexpr std::uint32_t kMeasurementCodeword = 7;
inline constexpr std::uint32_t kCzCodeword = 8;

/// Single-qubit primitives plus the measurement pulse (codeword 7) and a
/// 40 ns flux pulse for CZ (codeword 8).
inline LookupTable default_lookup_table() {
    auto lut = single_qubit_lookup_table();
    auto msmt = PulseDefinition::make(kMeasurementCodeword, "Msmt", GateSemantics::measurement(), 1500.0);
    msmt.stored = false;
    lut.add(std::move(msmt));
    lut.add(PulseDefinition::make(kCzCodeword, "CZ", GateSemantics::cz(), 40.0));
    return lut;
}

// ---------------------------------------------------------------------------
// Micro-operation unit

struct SeqStep {
    std::uint32_t delay = 0;  // cycles since the previous codeword
    std::uint32_t codeword = 0;
    bool operator==(const SeqStep&) const = default;
};

using Seq = std::vector<SeqStep>;

class SeqTable {
public:
    void add(const std::string& name, Seq seq) {
        if (seq.empty()) throw Error(ErrorKind::Parse, fmt::format("micro-op '{}': empty sequence", name));
        if (seq.front().delay != 0) {
            throw Error(ErrorKind::Parse, fmt::format("micro-op '{}': first offset must be 0", name));
        }
        for (std::size_t j = 1; j < seq.size(); ++j) {
            if (seq[j].delay < 1) {
                throw Error(ErrorKind::Parse, fmt::format("micro-op '{}': offset {} must be at least 1", name, j));
            }
        }
        seqs_[name] = std::move(seq);
    }

    bool contains(const std::string& name) const { return seqs_.contains(name); }

    const Seq& at(const std::string& name) const {
        auto it = seqs_.find(name);
        if (it == seqs_.end()) throw runtime_fault("adi", fmt::format("unknown micro-operation '{}'", name));
        return it->second;
    }

    /// Every codeword must exist in the target lookup table.
    void validate_against(const LookupTable& lut) const {
        for (const auto& [name, seq] : seqs_) {
            for (const auto& s : seq) {
                if (!lut.contains(s.codeword)) {
                    throw Error(ErrorKind::Parse,
                                fmt::format("micro-op '{}' references codeword {} missing from the lookup table",
                                            name, s.codeword));
                }
            }
        }
    }

    const std::map<std::string, Seq>& entries() const { return seqs_; }

private:
    std::map<std::string, Seq> seqs_;
};

/// Primitive micro-ops forward a single codeword; Z is emulated as
/// Rx(pi) followed 4 cycles later by Ry(pi).
inline SeqTable default_seq_table() {
    SeqTable t;
    const std::pair<const char*, std::uint32_t> primitives[] = {
        {"I", 0}, {"X180", 1}, {"X90", 2}, {"Xm90", 3}, {"Y180", 4}, {"Y90", 5}, {"Ym90", 6}, {"CZ", kCzCodeword},
    };
    for (const auto& [name, cw] : primitives) t.add(name, {{0, cw}});
    t.add("Z", {{0, 1}, {4, 4}});
    return t;
}

struct CodewordTrigger {
    std::uint64_t cycle = 0;
    unsigned unit = 0;  // target CTPG id
    std::uint32_t codeword = 0;
    QubitSet qubits;

    bool operator==(const CodewordTrigger&) const = default;
};

/// Expands a micro-operation fired at `cycle` into its timed codeword triggers.
inline std::vector<CodewordTrigger> emit_codewords(const SeqTable& table, const std::string& uop,
                                                   std::uint64_t cycle, unsigned unit, QubitSet qubits) {
    const auto& seq = table.at(uop);
    std::vector<CodewordTrigger> out;
    out.reserve(seq.size());
    std::uint64_t t = cycle;
    for (const auto& s : seq) {
        t += s.delay;
        out.push_back({t, unit, s.codeword, qubits});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Codeword-triggered pulse generation

struct PulseEvent {
    std::uint64_t trigger_cycle = 0;
    unsigned unit = 0;
    std::uint32_t codeword = 0;
    QubitSet qubits;
    GateSemantics gate;
    TimePs start_ps = 0;
    TimePs duration_ps = 0;
};

struct Ctpg {
    unsigned id = 0;
    const LookupTable* table = nullptr;
    std::uint32_t delay_cycles = 16;  // fixed trigger-to-output latency
    TimePs cycle_ps = 5000;
    /// Fault injection: extra latency applied to x-axis rotations only.
    std::uint32_t x_axis_extra_delay_cycles = 0;
};

inline PulseEvent generate_pulse(const Ctpg& ctpg, const CodewordTrigger& trigger) {
    if (ctpg.table == nullptr) throw runtime_fault("adi", fmt::format("CTPG{} has no lookup table", ctpg.id));
    const auto& def = ctpg.table->at(trigger.codeword);
    std::uint64_t start_cycle = trigger.cycle + ctpg.delay_cycles;
    if (def.gate.is_x_axis()) start_cycle += ctpg.x_axis_extra_delay_cycles;
    PulseEvent ev;
    ev.trigger_cycle = trigger.cycle;
    ev.unit = ctpg.id;
    ev.codeword = trigger.codeword;
    ev.qubits = trigger.qubits;
    ev.gate = def.gate;
    ev.start_ps = static_cast<TimePs>(start_cycle) * ctpg.cycle_ps;
    ev.duration_ps = static_cast<TimePs>(std::llround(def.duration_ns * 1000.0));
    return ev;
}

struct WaveformSample {
    double time_ns = 0.0;
    double i = 0.0;
    double q = 0.0;
};

/// Renders the I/Q samples of a pulse played at `start_ns` with single-sideband
/// modulation at `ssb_hz`, quantised to the table's vertical resolution.
/// Gaussian envelopes use sigma = duration / 4 and are scaled by angle / pi.
inline std::vector<WaveformSample> render_waveform(const LookupTable& lut, std::uint32_t codeword,
                                                   double start_ns, double ssb_hz) {
    const auto& def = lut.at(codeword);
    const auto n = static_cast<std::size_t>(std::llround(def.duration_ns * lut.sample_rate_gsps()));
    const double dt = 1.0 / lut.sample_rate_gsps();
    const double full_scale = std::ldexp(1.0, static_cast<int>(lut.resolution_bits()) - 1) - 1.0;
    auto quantise = [&](double x) { return std::round(std::clamp(x, -1.0, 1.0) * full_scale) / full_scale; };

    std::vector<WaveformSample> out;
    out.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
        double local = static_cast<double>(k) * dt;
        double t = start_ns + local;
        double env_i = 0.0;
        double env_q = 0.0;
        if (def.envelope == EnvelopeShape::Samples) {
            env_i = k < def.samples_i.size() ? def.samples_i[k] : 0.0;
            env_q = k < def.samples_q.size() ? def.samples_q[k] : 0.0;
        } else if (def.gate.kind == GateKind::Rotation || def.gate.kind == GateKind::CZ) {
            double sigma = def.duration_ns / 4.0;
            double mid = def.duration_ns / 2.0;
            double g = std::exp(-0.5 * (local - mid) * (local - mid) / (sigma * sigma));
            double amp = def.gate.kind == GateKind::CZ ? 1.0 : def.gate.angle / std::numbers::pi;
            double phase = 2.0 * std::numbers::pi * ssb_hz * t * 1e-9 + def.gate.axis;
            env_i = amp * g * std::cos(phase);
            env_q = amp * g * std::sin(phase);
        }
        out.push_back({t, quantise(env_i), quantise(env_q)});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Measurement pulse generation

struct MeasurementWindow {
    QubitSet qubits;
    std::uint64_t start_cycle = 0;
    std::uint64_t end_cycle = 0;  // exclusive
};

/// Digital measurement-pulse output. Tracks per-qubit busy windows so that
/// overlapping pulses on one qubit are rejected.
class MeasurementPulseUnit {
public:
    MeasurementWindow fire(std::uint64_t cycle, QubitSet qubits, std::uint32_t duration) {
        if (duration < 1) throw runtime_fault("adi", "MPG duration must be at least 1 cycle");
        for (auto q : qubits.members()) {
            if (cycle < busy_until_[q]) {
                throw runtime_fault("adi", fmt::format("overlapping MPG windows on q{} at cycle {} (busy until {})",
                                                       q, cycle, busy_until_[q]));
            }
        }
        for (auto q : qubits.members()) busy_until_[q] = cycle + duration;
        return {qubits, cycle, cycle + duration};
    }

private:
    std::array<std::uint64_t, kMaxQubits> busy_until_{};
};

// ---------------------------------------------------------------------------
// Measurement discrimination

struct MduConfig {
    std::vector<double> weights;
    double threshold = 0.0;

    /// Uniform weights 1/n: the integration result equals the mean signal level.
    static MduConfig uniform(std::size_t window, double threshold) {
        if (window == 0) throw Error(ErrorKind::Parse, "MDU window must be at least one sample");
        return {std::vector<double>(window, 1.0 / static_cast<double>(window)), threshold};
    }
};

struct Discrimination {
    double integral = 0.0;  // S_q, in sample units
    int bit = 0;            // M_q
};

/// S_q = sum_k V_a[k] W_q[k] (discrete integral in sample units); M_q = 1 iff S_q > T_q.
inline Discrimination discriminate(const MduConfig& mdu, std::span<const double> signal) {
    if (signal.size() != mdu.weights.size()) {
        throw runtime_fault("adi", fmt::format("MDU signal length {} does not match weight length {}",
                                               signal.size(), mdu.weights.size()));
    }
    double s = 0.0;
    for (std::size_t k = 0; k < signal.size(); ++k) s += signal[k] * mdu.weights[k];
    return {s, s > mdu.threshold ? 1 : 0};
}

}  // namespace quma
