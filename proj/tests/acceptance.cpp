// Acceptance checks; one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <numbers>
#include <random>
#include <thread>

#include <unistd.h>

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <json.hpp>

#include "quma/config.hpp"
#include "quma/harness.hpp"

using namespace quma;
using nlohmann::json;

namespace {

struct Check {
    bool ok = true;
    std::string detail;

    void expect(bool cond, const std::string& what) {
        if (!cond && ok) detail = what;
        ok = ok && cond;
    }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

MachineConfig lossless() {
    MachineConfig c;
    c.backend.t1_ns = std::numeric_limits<double>::infinity();
    return c;
}

/// AllXY with one repetition per combination and results written to r7.
AllXYSpec two_round_spec() {
    AllXYSpec s;
    s.repetitions = 1;
    s.rounds = 1;
    s.md_dest = Register{7};
    return s;
}

// ---------------------------------------------------------------------------

Check golden_queues() {
    Check c;
    auto program = generate_allxy_program(two_round_spec());
    ExecState exec;
    LabelAssigner assigner;
    QueueSet qs(kDefaultQueueCapacity);
    auto store = default_control_store();
    int mds = 0;
    while (mds < 2) {
        auto r = step(exec, program);
        if (r.status == StepStatus::Halted || r.status == StepStatus::Stalled) {
            c.expect(false, "program ended before two rounds");
            return c;
        }
        if (!r.emitted) continue;
        for (const auto& q : expand(*r.emitted, store)) {
            for (auto& item : assigner.assign(q)) {
                if (const auto* ev = std::get_if<TimedEvent>(&item); ev && ev->kind() == EventKind::Md) ++mds;
                c.expect(qs.enqueue(item), "queue overflow");
            }
        }
    }

    auto pulses = [&] {
        std::vector<std::pair<std::string, TimingLabel>> out;
        for (const auto& e : qs.pulse.snapshot()) out.emplace_back(std::get<PulsePayload>(e.payload).op, e.label);
        return out;
    };
    auto labels = [](const EventQueue& q) {
        std::vector<TimingLabel> out;
        for (const auto& e : q.snapshot()) out.push_back(e.label);
        return out;
    };
    using P = std::vector<std::pair<std::string, TimingLabel>>;
    using L = std::vector<TimingLabel>;
    using T = std::vector<TimingEntry>;

    TimingController tc;
    c.expect(tc.start(qs).empty(), "events fired at T_D=0");
    c.expect(qs.timing.snapshot() == T{{40000, 1}, {4, 2}, {4, 3}, {40000, 4}, {4, 5}, {4, 6}}, "timing queue at 0");
    c.expect(pulses() == P{{"I", 1}, {"I", 2}, {"X180", 4}, {"X180", 5}}, "pulse queue at 0");
    c.expect(labels(qs.mpg) == L{3, 6} && labels(qs.md) == L{3, 6}, "MPG/MD queues at 0");

    tc.run_until(qs, 40000);
    c.expect(qs.timing.snapshot() == T{{4, 2}, {4, 3}, {40000, 4}, {4, 5}, {4, 6}}, "timing queue at 40000");
    c.expect(pulses() == P{{"I", 2}, {"X180", 4}, {"X180", 5}}, "pulse queue at 40000");
    c.expect(labels(qs.mpg) == L{3, 6} && labels(qs.md) == L{3, 6}, "MPG/MD queues at 40000");

    tc.run_until(qs, 40008);
    c.expect(qs.timing.snapshot() == T{{40000, 4}, {4, 5}, {4, 6}}, "timing queue at 40008");
    c.expect(pulses() == P{{"X180", 4}, {"X180", 5}}, "pulse queue at 40008");
    c.expect(labels(qs.mpg) == L{6} && labels(qs.md) == L{6}, "MPG/MD queues at 40008");
    c.expect(!qs.md.empty() && std::get<MdPayload>(qs.md.front().payload).dest == Register{7}, "MD destination");
    if (c.ok) c.detail = "snapshots at T_D = 0, 40000, 40008 match";
    return c;
}

Check codeword_timing() {
    Check c;
    VectorTraceSink sink;
    Machine m(lossless(), &sink);
    m.run(generate_allxy_program(two_round_spec()));
    std::vector<std::uint64_t> ctpg, mpg, md;
    for (const auto& line : sink.lines) {
        auto j = json::parse(line);
        const auto& q = j["queue"];
        if (q == "pulse") {
            for (const auto& t : j["payload"]["triggers"]) ctpg.push_back(t["cycle"]);
        } else if (q == "mpg") {
            mpg.push_back(j["payload"]["trigger"]["cycle"]);
            c.expect(j["payload"]["trigger"]["start_ns"].get<double>() ==
                         static_cast<double>((mpg.back() + 16) * 5),
                     "measurement pulse not delta after its trigger");
        } else if (q == "md") {
            md.push_back(j["cycle"]);
        }
    }
    auto first = [](const std::vector<std::uint64_t>& v, std::size_t n) {
        return std::vector<std::uint64_t>(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(std::min(n, v.size())));
    };
    c.expect(first(ctpg, 4) == std::vector<std::uint64_t>{40000, 40004, 80008, 80012},
             fmt::format("CTPG triggers {}", fmt::join(first(ctpg, 4), ",")));
    c.expect(first(mpg, 2) == std::vector<std::uint64_t>{40008, 80016}, "MPG firings");
    c.expect(first(md, 2) == std::vector<std::uint64_t>{40008, 80016}, "MD firings");
    if (c.ok) c.detail = fmt::format("CTPG {}; MPG/MD {}", fmt::join(first(ctpg, 4), ","), fmt::join(first(mpg, 2), ","));
    return c;
}

Check ideal_staircase_exact() {
    Check c;
    AllXYSpec spec;
    spec.rounds = 256;
    auto cfg = lossless();
    cfg.backend.mode = SimMode::Expectation;
    cfg.backend.readout.sigma = 0.0;
    auto rec = run_experiment(spec, cfg);
    double worst = 0.0;
    for (std::size_t i = 0; i < rec.fidelities.size(); ++i) {
        worst = std::max(worst, std::abs(rec.fidelities[i] - ideal_staircase(i / spec.repetitions)));
    }
    c.expect(worst <= 1e-9, fmt::format("max |F - ideal| = {:.3g}", worst));
    c.detail = c.ok ? fmt::format("max |F - ideal| = {:.3g}", worst) : c.detail;
    return c;
}

Check sampled_staircase() {
    Check c;
    AllXYSpec spec;  // N = 25600
    MachineConfig cfg;
    cfg.backend.mode = SimMode::Sample;
    cfg.backend.readout.sigma = 0.0;
    cfg.backend.seed = 2017;
    auto rec = run_experiment(spec, cfg, std::max(1u, std::thread::hardware_concurrency()));
    double worst = 0.0;
    for (std::size_t i = 0; i < rec.fidelities.size(); ++i) {
        worst = std::max(worst, std::abs(rec.fidelities[i] - ideal_staircase(i / spec.repetitions)));
    }
    c.expect(worst <= 0.016, fmt::format("max |F - ideal| = {:.4f}", worst));
    if (c.ok) c.detail = fmt::format("max |F - ideal| = {:.4f}", worst);
    return c;
}

double pure_fidelity(const RunResult& a, const RunResult& b) {
    return fidelity(a.qubits->state(), b.qubits->state());
}

RunResult run_pure(const std::string& src, double ssb_hz, std::uint32_t x_delay) {
    auto cfg = lossless();
    cfg.backend.mode = SimMode::Sample;
    cfg.backend.ssb_hz = ssb_hz;
    cfg.x_pulse_delay_cycles = x_delay;
    return Machine(cfg).run(parse_program(src));
}

Check ssb_sensitivity() {
    Check c;
    const double f = 50e6;
    double worst_shift = 1.0;
    double worst_restore = 1.0;
    std::mt19937 rng(7);
    const std::vector<std::pair<std::string, std::string>> xy{{"X90", "Y90"}, {"Xm90", "Ym90"}, {"X180", "Y180"}};
    for (int trial = 0; trial < 20; ++trial) {
        // Random prefix of y pulses, then the x pulse under test.
        std::string prefix = fmt::format("Wait {}\n", 1 + rng() % 1000);
        for (unsigned k = rng() % 3; k > 0; --k) prefix += "Pulse {q0}, Y90\nWait 4\n";
        const auto& [x, y] = xy[trial % xy.size()];
        auto with = [&](const std::string& op) { return prefix + "Pulse {q0}, " + op + "\nWait 8\n"; };
        auto shifted = run_pure(with(x), f, 1);
        auto as_y = run_pure(with(y), f, 0);
        worst_shift = std::min(worst_shift, pure_fidelity(shifted, as_y));
        auto restored = run_pure(with(x), f, 4);
        auto original = run_pure(with(x), f, 0);
        worst_restore = std::min(worst_restore, pure_fidelity(restored, original));
    }
    // Sanity: without the delay, x and y differ.
    double distinct = pure_fidelity(run_pure("Wait 4\nPulse {q0}, X90\nWait 4\n", f, 0),
                                    run_pure("Wait 4\nPulse {q0}, Y90\nWait 4\n", f, 0));
    c.expect(worst_shift >= 1.0 - 1e-12, fmt::format("5 ns shift fidelity {:.15f}", worst_shift));
    c.expect(worst_restore >= 1.0 - 1e-12, fmt::format("20 ns shift fidelity {:.15f}", worst_restore));
    c.expect(distinct < 0.9, "x and y pulses indistinguishable");
    if (c.ok) c.detail = fmt::format("min fidelity {:.15f} / {:.15f}", worst_shift, worst_restore);
    return c;
}

Check cnot_oracle() {
    Check c;
    double worst = 1.0;
    for (int control = 0; control < 2; ++control) {
        for (int target = 0; target < 2; ++target) {
            // q0 is the target, q1 the control; backend slots follow first use.
            std::string src = "Wait 100\nPulse {q0}, I\nPulse {q1}, I\nWait 4\n";
            if (target) src += "Pulse {q0}, X180\n";
            if (control) src += "Pulse {q1}, X180\n";
            src += "Wait 4\nCNOT q0, q1\n";
            VectorTraceSink sink;
            auto cfg = lossless();
            cfg.backend.mode = SimMode::Sample;
            auto r = Machine(cfg, &sink).run(parse_program(src));
            const auto& be = *r.qubits;
            const std::size_t st = *be.slot_of(0);
            const std::size_t sc = *be.slot_of(1);
            const std::size_t expected =
                (static_cast<std::size_t>(target ^ control) << st) | (static_cast<std::size_t>(control) << sc);
            worst = std::min(worst, fidelity(be.state(), TwoQubitRegister::basis(expected)));

            std::vector<std::pair<std::uint64_t, std::uint32_t>> trig;
            for (const auto& line : sink.lines) {
                auto j = json::parse(line);
                if (j["queue"] != "pulse") continue;
                const std::string op = j["payload"]["op"];
                if (op != "Ym90" && op != "CZ" && op != "Y90") continue;
                for (const auto& t : j["payload"]["triggers"]) trig.emplace_back(t["cycle"], t["codeword"]);
            }
            c.expect(trig.size() == 3 && trig[0].second == 6 && trig[1].second == kCzCodeword && trig[2].second == 5,
                     "unexpected CNOT trigger sequence");
            if (trig.size() == 3) {
                c.expect(trig[1].first - trig[0].first == 4, "CZ not 4 cycles after Ym90");
                c.expect(trig[2].first - trig[1].first == 8, "Y90 not 8 cycles after CZ");
            }
        }
    }
    c.expect(worst >= 1.0 - 1e-12, fmt::format("min fidelity {:.15f}", worst));
    if (c.ok) c.detail = fmt::format("min fidelity {:.15f}", worst);
    return c;
}

Check seq_z() {
    Check c;
    auto lut = default_lookup_table();
    auto seq = default_seq_table();
    std::mt19937_64 rng(31);
    std::normal_distribution<double> n;
    double worst = 1.0;
    for (int i = 0; i < 100; ++i) {
        StateVector<1> psi({Complex{n(rng), n(rng)}, Complex{n(rng), n(rng)}});
        psi.normalize();
        QubitState q;
        q.amps = psi;
        const std::uint64_t cycle = 1 + rng() % 100000;
        auto triggers = emit_codewords(seq, "Z", cycle, 0, QubitSet{0});
        c.expect(triggers.size() == 2, "Seq_Z is not two codewords");
        for (const auto& t : triggers) {
            Ctpg ctpg;
            ctpg.id = t.unit;
            ctpg.table = &lut;
            apply_pulse_event(q, generate_pulse(ctpg, t), kDefaultSsbHz);
        }
        StateVector<1> z({psi[0], -psi[1]});
        worst = std::min(worst, fidelity(q.amps, z));
    }
    c.expect(worst >= 1.0 - 1e-12, fmt::format("min fidelity {:.15f}", worst));
    if (c.ok) c.detail = fmt::format("min fidelity {:.15f}", worst);
    return c;
}

Check memory_accounting() {
    Check c;
    const double table = single_qubit_lookup_table(1.0, 12).footprint_bytes();
    const double baseline = combined_waveform_bytes(21, 2, 20.0, 1.0, 12);
    c.expect(table == 420.0, fmt::format("table footprint {}", table));
    c.expect(baseline == 2520.0, fmt::format("baseline footprint {}", baseline));
    if (c.ok) c.detail = fmt::format("{} vs {} bytes", table, baseline);
    return c;
}

Check throttle_invariance() {
    Check c;
    AllXYSpec spec;
    spec.rounds = 2;
    spec.md_dest = Register{7};
    auto program = generate_allxy_program(spec);
    auto trace_with = [&](std::optional<std::uint64_t> throttle) {
        MachineConfig cfg;
        cfg.throttle_ticks = throttle;
        cfg.backend.mode = SimMode::Sample;
        cfg.backend.seed = 3;
        VectorTraceSink sink;
        Machine(cfg, &sink).run(program);
        return sink.lines;
    };
    auto reference = trace_with(std::nullopt);
    for (std::uint64_t t : {1u, 10u, 1000u}) {
        c.expect(trace_with(t) == reference, fmt::format("trace differs at 1 instruction per {} ticks", t));
    }
    if (c.ok) c.detail = fmt::format("{} trace lines identical", reference.size());
    return c;
}

Check discrimination() {
    Check c;
    std::mt19937_64 rng(10);
    std::normal_distribution<double> n;
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const std::size_t len = 1 + rng() % 512;
        MduConfig mdu{std::vector<double>(len), n(rng)};
        std::vector<double> v(len);
        for (std::size_t k = 0; k < len; ++k) {
            mdu.weights[k] = n(rng);
            v[k] = n(rng);
        }
        long double oracle = 0.0L;
        for (std::size_t k = 0; k < len; ++k) oracle += static_cast<long double>(v[k]) * mdu.weights[k];
        auto d = discriminate(mdu, v);
        const double rel = static_cast<double>(std::abs(d.integral - oracle) / std::abs(oracle));
        worst = std::max(worst, rel);
        c.expect(d.bit == (oracle > mdu.threshold ? 1 : 0) || std::abs(oracle - mdu.threshold) < 1e-9,
                 "bit disagrees with oracle");
    }
    c.expect(worst <= 1e-9, fmt::format("max relative error {:.3g}", worst));

    MduConfig at{std::vector<double>(8, 0.25), 1.0};
    std::vector<double> halves(8, 0.5);
    auto d = discriminate(at, halves);
    c.expect(d.integral == at.threshold && d.bit == 0, "S = T must give M = 0");
    MduConfig unit{{1.0}, 0.7};
    const double above = std::nextafter(0.7, 1.0);
    c.expect(discriminate(unit, std::vector<double>{0.7}).bit == 0, "S = T must give M = 0");
    c.expect(discriminate(unit, std::vector<double>{above}).bit == 1, "S just above T must give M = 1");
    if (c.ok) c.detail = fmt::format("max relative error {:.3g}", worst);
    return c;
}

/// Streams a trace to a file, or compares it byte for byte against one.
class FileTraceSink : public TraceSink {
public:
    FileTraceSink(const std::filesystem::path& p, bool compare) : compare_(compare) {
        if (compare_) {
            in_.open(p, std::ios::binary);
        } else {
            out_.open(p, std::ios::binary);
        }
    }
    void write(std::string_view line) override {
        ++lines_;
        if (!compare_) {
            out_ << line << '\n';
            return;
        }
        if (!std::getline(in_, buf_) || buf_ != line) mismatch_ = mismatch_ ? mismatch_ : lines_;
    }
    /// 0 when every line matched and the reference has nothing left over.
    std::uint64_t finish() {
        if (!compare_) {
            out_.flush();
            return out_ ? 0 : 1;
        }
        if (!mismatch_ && std::getline(in_, buf_)) mismatch_ = lines_ + 1;
        return mismatch_;
    }
    std::uint64_t lines() const { return lines_; }

private:
    bool compare_;
    std::ifstream in_;
    std::ofstream out_;
    std::string buf_;
    std::uint64_t lines_ = 0;
    std::uint64_t mismatch_ = 0;
};

Check determinism() {
    Check c;
    const auto dir = std::filesystem::temp_directory_path() / fmt::format("quma_acceptance_{}", ::getpid());
    std::filesystem::create_directories(dir);
    AllXYSpec spec;  // full N = 25600
    MachineConfig cfg;
    cfg.backend.mode = SimMode::Sample;
    cfg.backend.readout.sigma = 0.05;
    cfg.backend.seed = 2017;

    FileTraceSink first(dir / "trace.jsonl", false);
    auto a = run_experiment(spec, cfg, 1, &first);
    c.expect(first.finish() == 0, "could not write the reference trace");
    write_file(dir / "results_a.csv", results_csv(a));

    FileTraceSink second(dir / "trace.jsonl", true);
    auto b = run_experiment(spec, cfg, 1, &second);
    const auto mismatch = second.finish();
    c.expect(mismatch == 0, fmt::format("trace differs at line {}", mismatch));
    write_file(dir / "results_b.csv", results_csv(b));
    c.expect(read_file(dir / "results_a.csv") == read_file(dir / "results_b.csv"), "results files differ");
    const auto bytes = std::filesystem::file_size(dir / "trace.jsonl");
    std::filesystem::remove_all(dir);
    if (c.ok) c.detail = fmt::format("{} trace lines ({} MB) and results identical", second.lines(), bytes >> 20);
    return c;
}

}  // namespace

int main() {
    struct Criterion {
        int id;
        const char* name;
        std::function<Check()> run;
        double limit_s;  // 0 means untimed
    };
    const std::vector<Criterion> criteria{
        {1, "golden queue states", golden_queues, 1.0},
        {2, "codeword trigger cycles", codeword_timing, 0.0},
        {3, "ideal staircase (expectation)", ideal_staircase_exact, 5.0},
        {4, "sampled staircase N=25600", sampled_staircase, 60.0},
        {5, "SSB timing sensitivity", ssb_sensitivity, 0.0},
        {6, "CNOT microprogram oracle", cnot_oracle, 0.0},
        {7, "Seq_Z emulation", seq_z, 0.0},
        {8, "lookup-table memory", memory_accounting, 0.0},
        {9, "throttle invariance", throttle_invariance, 0.0},
        {10, "measurement discrimination", discrimination, 0.0},
        {11, "determinism", determinism, 0.0},
    };
    int failures = 0;
    for (const auto& cr : criteria) {
        auto t0 = Clock::now();
        Check result;
        try {
            result = cr.run();
        } catch (const std::exception& e) {
            result.ok = false;
            result.detail = fmt::format("exception: {}", e.what());
        }
        const double elapsed = seconds_since(t0);
        if (cr.limit_s > 0.0 && elapsed >= cr.limit_s) {
            result.ok = false;
            result.detail += fmt::format(" (took {:.2f} s, limit {:.0f} s)", elapsed, cr.limit_s);
        }
        failures += result.ok ? 0 : 1;
        std::cout << fmt::format("criterion {:2} {}: {} - {} [{:.3f} s]\n", cr.id, result.ok ? "PASS" : "FAIL",
                                 cr.name, result.detail, elapsed)
                  << std::flush;
    }
    std::cout << fmt::format("{} of {} criteria passed\n", criteria.size() - static_cast<std::size_t>(failures),
                             criteria.size());
    return failures == 0 ? 0 : 1;
}
