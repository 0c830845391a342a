#pragma once

// AllXY experiment: program generation, the data-collection averaging unit,
// readout-corrected fidelities, and serial or round-parallel execution.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <fmt/format.h>

#include "quma/error.hpp"
#include "quma/isa.hpp"
#include "quma/machine.hpp"
#include "quma/qsim.hpp"

namespace quma {

// ---------------------------------------------------------------------------
// Gate-pair table

struct AllXYGate {
    char axis = 'I';     // 'I', 'X' or 'Y'
    double turns = 0.0;  // rotation angle in units of pi
};

/// The 21 combinations in experiment order. Entries 7 and 8 are both
/// {Rx(pi/2), Ry(pi/2)}.
inline constexpr std::array<std::array<AllXYGate, 2>, 21> kAllXYPairs{{
    {{{'I', 0}, {'I', 0}}},
    {{{'X', 1}, {'X', 1}}},
    {{{'Y', 1}, {'Y', 1}}},
    {{{'X', 1}, {'Y', 1}}},
    {{{'Y', 1}, {'X', 1}}},
    {{{'X', 0.5}, {'I', 0}}},
    {{{'Y', 0.5}, {'I', 0}}},
    {{{'X', 0.5}, {'Y', 0.5}}},
    {{{'X', 0.5}, {'Y', 0.5}}},
    {{{'X', 0.5}, {'Y', 1}}},
    {{{'Y', 0.5}, {'X', 1}}},
    {{{'X', 1}, {'Y', 0.5}}},
    {{{'Y', 1}, {'X', 0.5}}},
    {{{'X', 0.5}, {'X', 1}}},
    {{{'X', 1}, {'X', 0.5}}},
    {{{'Y', 0.5}, {'Y', 1}}},
    {{{'Y', 1}, {'Y', 0.5}}},
    {{{'X', 1}, {'I', 0}}},
    {{{'Y', 1}, {'I', 0}}},
    {{{'X', 0.5}, {'X', 0.5}}},
    {{{'Y', 0.5}, {'Y', 0.5}}},
}};

inline constexpr std::size_t kAllXYCombinations = kAllXYPairs.size();

/// Micro-op name in the default lookup table, e.g. X90, Y180, I.
inline std::string micro_op_name(const AllXYGate& g) {
    if (g.axis == 'I' || g.turns == 0.0) return "I";
    const double deg = g.turns * 180.0;
    return fmt::format("{}{}{}", g.axis, deg < 0 ? "m" : "", static_cast<int>(std::lround(std::abs(deg))));
}

/// X/Y for pi rotations, x/y for pi/2, I for identity.
inline char gate_letter(const AllXYGate& g) {
    if (g.axis == 'I' || g.turns == 0.0) return 'I';
    return std::abs(g.turns) == 1.0 ? g.axis : static_cast<char>(g.axis - 'A' + 'a');
}

inline std::string combination_label(std::size_t combination) {
    const auto& p = kAllXYPairs.at(combination);
    return {gate_letter(p[0]), gate_letter(p[1])};
}

/// Ideal excited-state population after the pair, from the rotation algebra.
inline double ideal_population(std::size_t combination) {
    StateVector<1> s;
    for (const auto& g : kAllXYPairs.at(combination)) {
        if (g.axis == 'I') continue;
        s.apply(0, rotation_matrix(g.axis == 'X' ? 0.0 : std::numbers::pi / 2, g.turns * std::numbers::pi));
    }
    return s.prob1(0);
}

/// 0 for combinations 0-4, 0.5 for 5-16, 1 for 17-20.
inline double ideal_staircase(std::size_t combination) {
    if (combination < 5) return 0.0;
    if (combination < 17) return 0.5;
    return 1.0;
}

// ---------------------------------------------------------------------------
// Program generation

struct AllXYSpec {
    unsigned repetitions = 2;
    std::uint32_t rounds = 25600;
    std::uint32_t init_wait = 40000;
    unsigned qubit = 2;
    std::uint32_t gate_interval = 4;
    std::uint32_t measurement_duration = 300;
    /// MD destination register; left out, MD only feeds the collector.
    std::optional<Register> md_dest;

    std::size_t slots() const { return kAllXYCombinations * repetitions; }
    std::uint32_t segment_cycles() const { return init_wait + 2 * gate_interval; }

    void validate() const {
        if (repetitions == 0) throw Error(ErrorKind::Parse, "repetitions must be positive");
        if (rounds == 0 || rounds > 0x7FFF'FFFFu) throw Error(ErrorKind::Parse, "rounds must be in [1, 2^31)");
        if (init_wait == 0 || gate_interval == 0 || measurement_duration == 0) {
            throw Error(ErrorKind::Parse, "init wait, gate interval and measurement duration must be positive");
        }
        if (qubit >= 64) throw Error(ErrorKind::Parse, "qubit address out of range");
    }
};

/// QuMIS source: register setup, the unrolled combinations x repetitions
/// body, and an outer loop over rounds.
inline std::string allxy_source(const AllXYSpec& spec) {
    spec.validate();
    std::string out;
    auto line = [&](std::string_view s) {
        out += s;
        out += '\n';
    };
    line(fmt::format("mov r15, {}    # initialization interval", spec.init_wait));
    line("mov r1, 0         # loop counter");
    line(fmt::format("mov r2, {}    # number of averages", spec.rounds));
    line("");
    line("Outer_Loop:");
    const auto q = fmt::format("{{q{}}}", spec.qubit);
    const auto md = spec.md_dest ? fmt::format("MD {}, {}", q, to_string(*spec.md_dest)) : fmt::format("MD {}", q);
    for (std::size_t c = 0; c < kAllXYCombinations; ++c) {
        const auto& pair = kAllXYPairs[c];
        for (unsigned r = 0; r < spec.repetitions; ++r) {
            line(fmt::format("QNopReg r15    # {}, {}", micro_op_name(pair[0]), micro_op_name(pair[1])));
            line(fmt::format("Pulse {}, {}", q, micro_op_name(pair[0])));
            line(fmt::format("Wait {}", spec.gate_interval));
            line(fmt::format("Pulse {}, {}", q, micro_op_name(pair[1])));
            line(fmt::format("Wait {}", spec.gate_interval));
            line(fmt::format("MPG {}, {}", q, spec.measurement_duration));
            line(md);
        }
    }
    line("");
    line("addi r1, r1, 1");
    line("bne r1, r2, Outer_Loop");
    return out;
}

inline Program generate_allxy_program(const AllXYSpec& spec) { return parse_program(allxy_source(spec)); }

// ---------------------------------------------------------------------------
// Data collection

/// Exactly rounded floating-point sum (Shewchuk partials), independent of
/// the order values arrive in.
class ExactSum {
public:
    void add(double x) {
        std::size_t i = 0;
        for (std::size_t j = 0; j < partials_.size(); ++j) {
            double y = partials_[j];
            if (std::abs(x) < std::abs(y)) std::swap(x, y);
            double hi = x + y;
            double lo = y - (hi - x);
            if (lo != 0.0) partials_[i++] = lo;
            x = hi;
        }
        partials_.resize(i);
        partials_.push_back(x);
    }

    void merge(const ExactSum& other) {
        for (double p : other.partials_) add(p);
    }

    double value() const {
        std::size_t n = partials_.size();
        if (n == 0) return 0.0;
        double hi = partials_[--n];
        double lo = 0.0;
        while (n > 0) {
            double x = hi;
            double y = partials_[--n];
            hi = x + y;
            lo = y - (hi - x);
            if (lo != 0.0) break;
        }
        if (n > 0 && ((lo < 0.0 && partials_[n - 1] < 0.0) || (lo > 0.0 && partials_[n - 1] > 0.0))) {
            double y = lo * 2.0;
            double x = hi + y;
            if (y == x - hi) hi = x;
        }
        return hi;
    }

private:
    std::vector<double> partials_;
};

/// K running sums of integration results, one per measurement slot.
class DataCollector {
public:
    DataCollector(std::size_t slots, std::uint64_t rounds) : sums_(slots), counts_(slots, 0), rounds_(rounds) {
        if (slots == 0 || rounds == 0) throw Error(ErrorKind::Parse, "collector needs at least one slot and round");
    }

    void collect(std::size_t slot, double value) {
        if (slot >= sums_.size()) {
            throw runtime_fault("collector", fmt::format("slot {} out of range [0, {})", slot, sums_.size()));
        }
        if (counts_[slot] >= rounds_) {
            throw runtime_fault("collector", fmt::format("slot {} received more than {} values", slot, rounds_));
        }
        sums_[slot].add(value);
        ++counts_[slot];
    }

    void merge(const DataCollector& other) {
        if (other.sums_.size() != sums_.size()) throw runtime_fault("collector", "merging collectors of different K");
        for (std::size_t i = 0; i < sums_.size(); ++i) {
            if (counts_[i] + other.counts_[i] > rounds_) throw runtime_fault("collector", "merge exceeds round count");
            sums_[i].merge(other.sums_[i]);
            counts_[i] += other.counts_[i];
        }
    }

    std::size_t slots() const { return sums_.size(); }
    std::uint64_t rounds() const { return rounds_; }
    std::uint64_t completed_rounds() const { return *std::min_element(counts_.begin(), counts_.end()); }
    bool complete() const { return completed_rounds() == rounds_; }
    double sum(std::size_t slot) const { return sums_.at(slot).value(); }

    double average(std::size_t slot) const {
        if (!complete()) {
            throw runtime_fault("collector", fmt::format("average requested after {} of {} rounds",
                                                         completed_rounds(), rounds_));
        }
        return sums_.at(slot).value() / static_cast<double>(rounds_);
    }

    std::vector<double> averages() const {
        std::vector<double> out(slots());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = average(i);
        return out;
    }

private:
    std::vector<ExactSum> sums_;
    std::vector<std::uint64_t> counts_;
    std::uint64_t rounds_;
};

// ---------------------------------------------------------------------------
// Fidelity

struct Calibration {
    double zero = 0.0;
    double one = 0.0;
};

/// Slots of combination 0 calibrate |0>; combinations 18 and 19 calibrate |1>.
inline Calibration calibration_points(const std::vector<double>& averages, unsigned repetitions) {
    if (repetitions == 0 || averages.size() != kAllXYCombinations * repetitions) {
        throw runtime_fault("fidelity", fmt::format("expected {} slots, got {}", kAllXYCombinations * repetitions,
                                                    averages.size()));
    }
    auto mean_of = [&](std::initializer_list<std::size_t> combos) {
        ExactSum s;
        std::size_t n = 0;
        for (auto c : combos) {
            for (unsigned r = 0; r < repetitions; ++r, ++n) s.add(averages[c * repetitions + r]);
        }
        return s.value() / static_cast<double>(n);
    };
    return {mean_of({0}), mean_of({18, 19})};
}

inline std::vector<double> rescale_fidelity(const std::vector<double>& averages, unsigned repetitions) {
    auto cal = calibration_points(averages, repetitions);
    const double span = cal.one - cal.zero;
    if (std::abs(span) < 1e-12) {
        throw runtime_fault("fidelity", fmt::format("degenerate calibration: |1> level {} vs |0> level {}", cal.one,
                                                    cal.zero));
    }
    std::vector<double> f(averages.size());
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = (averages[i] - cal.zero) / span;
    return f;
}

// ---------------------------------------------------------------------------
// Experiment

/// FNV-1a, 64-bit.
inline std::uint64_t fnv1a(std::string_view data) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

/// Canonical text of every setting that influences results.
inline std::string describe(const MachineConfig& c) {
    std::string s = fmt::format(
        "cycle_ps={};queue={};delta={};x_delay={};mctpg={};mcw={};flux={};md_latency={};window={};threshold={};"
        "mode={};ssb={};t1={};mu0={};mu1={};sigma={};ideal_init={};seed={};max_steps={};memory={}",
        c.cycle_ps, c.queue_capacity, c.ctpg_delay_cycles, c.x_pulse_delay_cycles, c.measurement_ctpg,
        c.measurement_codeword, c.flux_ctpg, c.md_latency_cycles, c.mdu_window, c.threshold(),
        to_string(c.backend.mode), c.backend.ssb_hz, c.backend.t1_ns, c.backend.readout.mu0, c.backend.readout.mu1,
        c.backend.readout.sigma, c.backend.ideal_init, c.backend.seed, c.max_steps, c.memory_words);
    for (const auto& [cw, p] : c.lookup_table.entries()) {
        s += fmt::format(";cw{}={}:{}:{}:{}", cw, p.name, p.gate.axis, p.gate.angle, p.duration_ns);
    }
    for (const auto& [name, seq] : c.seq_table.entries()) {
        s += ";seq " + name;
        for (const auto& st : seq) s += fmt::format(" {}:{}", st.delay, st.codeword);
    }
    for (const auto& [name, mp] : c.control_store.programs()) {
        s += ";def " + name;
        for (const auto& l : mp.body) s += "|" + l.text;
    }
    return s;
}

inline std::uint64_t config_hash(const MachineConfig& c) { return fnv1a(describe(c)); }

struct ExperimentRecord {
    AllXYSpec spec;
    std::vector<double> averages;
    std::vector<double> fidelities;
    std::uint64_t seed = 0;
    SimMode mode = SimMode::Expectation;
    std::uint64_t config_hash = 0;
    std::uint64_t final_cycle = 0;
};

/// Runs `program` and bins every discriminated result into slot index % K.
/// Returns the collector and the final machine state.
inline std::pair<DataCollector, RunResult> collect_results(const Program& program, const MachineConfig& cfg,
                                                           std::size_t slots, std::uint64_t rounds,
                                                           TraceSink* trace = nullptr) {
    DataCollector dc(slots, rounds);
    Machine m(cfg, trace, [&](const MeasurementRecord& r) { dc.collect(r.index % slots, r.integral); });
    auto result = m.run(program);
    return {std::move(dc), std::move(result)};
}

/// End-to-end AllXY. With threads > 1, rounds are split into contiguous
/// chunks that replay with the substreams and clock offsets they would have
/// had in a serial run; the exact sums make the merge order irrelevant.
inline ExperimentRecord run_experiment(const AllXYSpec& spec, const MachineConfig& cfg, unsigned threads = 1,
                                       TraceSink* trace = nullptr) {
    spec.validate();
    const std::size_t k = spec.slots();
    threads = std::max(1u, std::min<unsigned>(threads, spec.rounds));
    if (threads > 1 && trace) throw Error(ErrorKind::Parse, "a trace requires a serial run");

    ExperimentRecord rec;
    rec.spec = spec;
    rec.seed = cfg.backend.seed;
    rec.mode = cfg.backend.mode;
    rec.config_hash = config_hash(cfg);

    DataCollector total(k, spec.rounds);
    if (threads == 1) {
        auto [dc, result] = collect_results(generate_allxy_program(spec), cfg, k, spec.rounds, trace);
        total = std::move(dc);
        rec.final_cycle = result.final_cycle;
    } else {
        struct Chunk {
            std::uint32_t first = 0;
            std::uint32_t rounds = 0;
            std::optional<DataCollector> dc;
            std::uint64_t final_cycle = 0;
            std::exception_ptr error;
        };
        std::vector<Chunk> chunks(threads);
        std::uint32_t next = 0;
        for (unsigned t = 0; t < threads; ++t) {
            chunks[t].first = next;
            chunks[t].rounds = spec.rounds / threads + (t < spec.rounds % threads ? 1 : 0);
            next += chunks[t].rounds;
        }
        std::vector<std::thread> pool;
        for (auto& ch : chunks) {
            pool.emplace_back([&ch, &spec, &cfg, k] {
                try {
                    AllXYSpec sub = spec;
                    sub.rounds = ch.rounds;
                    MachineConfig c = cfg;
                    const std::uint64_t segments = std::uint64_t{ch.first} * k;
                    c.backend.measurement_offset += segments;
                    c.backend.time_offset_ps +=
                        static_cast<TimePs>(segments * spec.segment_cycles()) * cfg.cycle_ps;
                    auto [dc, result] = collect_results(generate_allxy_program(sub), c, k, spec.rounds);
                    ch.dc = std::move(dc);
                    ch.final_cycle = result.final_cycle;
                } catch (...) {
                    ch.error = std::current_exception();
                }
            });
        }
        for (auto& th : pool) th.join();
        for (auto& ch : chunks) {
            if (ch.error) std::rethrow_exception(ch.error);
            total.merge(*ch.dc);
        }
        const auto& last = chunks.back();
        rec.final_cycle = last.final_cycle + std::uint64_t{last.first} * k * spec.segment_cycles();
    }
    rec.averages = total.averages();
    rec.fidelities = rescale_fidelity(rec.averages, spec.repetitions);
    return rec;
}

// ---------------------------------------------------------------------------
// Output

inline std::string results_csv(const ExperimentRecord& rec) {
    std::string out = fmt::format("# seed={} mode={} config_hash={:016x} rounds={} repetitions={}\n", rec.seed,
                                  to_string(rec.mode), rec.config_hash, rec.spec.rounds, rec.spec.repetitions);
    out += "slot,label,S_avg,F\n";
    for (std::size_t i = 0; i < rec.averages.size(); ++i) {
        out += fmt::format("{},{},{},{}\n", i, combination_label(i / rec.spec.repetitions), rec.averages[i],
                           rec.fidelities[i]);
    }
    return out;
}

/// F against slot index with the ideal staircase, in the usual AllXY layout.
inline std::string fidelity_svg(const ExperimentRecord& rec) {
    const double w = 900, h = 420, left = 60, right = 20, top = 20, bottom = 60;
    const double pw = w - left - right, ph = h - top - bottom;
    const std::size_t n = rec.fidelities.size();
    const double lo = -0.1, hi = 1.1;
    auto x = [&](double i) { return left + (i + 0.5) * pw / static_cast<double>(n); };
    auto y = [&](double f) { return top + (hi - std::clamp(f, lo, hi)) / (hi - lo) * ph; };

    std::string s = fmt::format(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" font-family=\"sans-serif\" "
        "font-size=\"11\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
        w, h);
    s += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n", left,
                     top, pw, ph);
    for (double t : {0.0, 0.5, 1.0}) {
        s += fmt::format("<line x1=\"{}\" x2=\"{}\" y1=\"{:.2f}\" y2=\"{:.2f}\" stroke=\"#ddd\"/>\n", left, left + pw,
                         y(t), y(t));
        s += fmt::format("<text x=\"{}\" y=\"{:.2f}\" text-anchor=\"end\">{}</text>\n", left - 6, y(t) + 4, t);
    }
    std::string stair;
    for (std::size_t i = 0; i < n; ++i) {
        const double f = ideal_staircase(i / rec.spec.repetitions);
        stair += fmt::format("{:.2f},{:.2f} {:.2f},{:.2f} ", x(i) - pw / (2.0 * n), y(f), x(i) + pw / (2.0 * n), y(f));
    }
    s += fmt::format("<polyline points=\"{}\" fill=\"none\" stroke=\"red\" stroke-width=\"2\"/>\n", stair);
    for (std::size_t i = 0; i < n; ++i) {
        s += fmt::format("<circle cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"3\" fill=\"#1f4e9c\"/>\n", x(i), y(rec.fidelities[i]));
        if (i % rec.spec.repetitions == 0) {
            s += fmt::format("<text x=\"{:.2f}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
                             x(i + (rec.spec.repetitions - 1) / 2.0), top + ph + 16,
                             combination_label(i / rec.spec.repetitions));
        }
    }
    s += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">combination</text>\n", left + pw / 2, h - 15);
    s += fmt::format("<text x=\"15\" y=\"{}\" transform=\"rotate(-90 15 {})\" text-anchor=\"middle\">"
                     "F_|1&gt;</text>\n</svg>\n",
                     top + ph / 2, top + ph / 2);
    return s;
}

}  // namespace quma
