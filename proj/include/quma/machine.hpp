#pragma once

// The full control pipeline: execution controller -> physical microcode
// unit -> quantum microinstruction buffer -> timing control unit ->
// micro-operation units / CTPGs / MPG / MDU -> qubit backend.
//
// The non-deterministic domain (producer) and the deterministic domain
// (consumer) are interleaved on one thread. The consumer only broadcasts a
// time point once every event carrying its label has been enqueued (a later
// Wait was seen, or the producer halted or stalled on a pending register),
// and never lets T_D run past an empty timing queue while the producer can
// still make progress. Under those rules the fired-event trace depends only
// on the program, not on how fast the producer runs.

#include <algorithm>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <queue>
#include <string>
#include <variant>
#include <vector>

#include <fmt/format.h>

#include "quma/adi.hpp"
#include "quma/error.hpp"
#include "quma/execution.hpp"
#include "quma/isa.hpp"
#include "quma/microcode.hpp"
#include "quma/qsim.hpp"
#include "quma/timing.hpp"

namespace quma {

struct MachineConfig {
    TimePs cycle_ps = 5000;
    std::size_t queue_capacity = kDefaultQueueCapacity;
    std::uint32_t ctpg_delay_cycles = 16;
    /// Fault injection: delays x-axis rotation pulses by this many cycles.
    std::uint32_t x_pulse_delay_cycles = 0;
    unsigned measurement_ctpg = 5;
    std::uint32_t measurement_codeword = kMeasurementCodeword;
    unsigned flux_ctpg = 6;
    /// Cycles from MD firing to the discriminated result reaching the register file.
    std::uint32_t md_latency_cycles = 316;
    std::size_t mdu_window = 16;
    std::optional<double> mdu_threshold;  // defaults to (mu0 + mu1) / 2
    BackendConfig backend;
    std::uint64_t max_steps = kDefaultStepBudget;
    std::size_t memory_words = DataMemory::kDefaultWords;
    /// When set, the producer executes one instruction per this many cycles.
    std::optional<std::uint64_t> throttle_ticks;
    LookupTable lookup_table = default_lookup_table();
    SeqTable seq_table = default_seq_table();
    QControlStore control_store = default_control_store();

    double threshold() const { return mdu_threshold.value_or((backend.readout.mu0 + backend.readout.mu1) / 2.0); }

    void validate() const {
        if (cycle_ps <= 0) throw Error(ErrorKind::Parse, "cycle period must be positive");
        if (md_latency_cycles < ctpg_delay_cycles) {
            throw Error(ErrorKind::Parse, "MD latency must not be shorter than the CTPG delay");
        }
        if (mdu_window == 0) throw Error(ErrorKind::Parse, "MDU window must be positive");
        if (throttle_ticks && *throttle_ticks == 0) throw Error(ErrorKind::Parse, "throttle must be positive");
        if (!lookup_table.contains(measurement_codeword)) {
            throw Error(ErrorKind::Parse, fmt::format("measurement codeword {} missing from lookup table",
                                                      measurement_codeword));
        }
        seq_table.validate_against(lookup_table);
    }
};

/// One discriminated qubit result, in firing order.
struct MeasurementRecord {
    std::uint64_t index = 0;  // running count of results
    std::uint64_t cycle = 0;  // cycle at which the result is available
    unsigned qubit = 0;
    double integral = 0.0;
    int bit = 0;
    std::optional<Register> dest;
};

class TraceSink {
public:
    virtual ~TraceSink() = default;
    virtual void write(std::string_view json_line) = 0;
};

class StreamTraceSink : public TraceSink {
public:
    explicit StreamTraceSink(std::ostream& out) : out_(out) {}
    void write(std::string_view line) override {
        out_.write(line.data(), static_cast<std::streamsize>(line.size()));
        out_.put('\n');
    }

private:
    std::ostream& out_;
};

class VectorTraceSink : public TraceSink {
public:
    void write(std::string_view line) override { lines.emplace_back(line); }
    std::vector<std::string> lines;
};

struct RunResult {
    ExecState state;
    std::uint64_t final_cycle = 0;
    std::uint64_t enqueued_events = 0;
    std::uint64_t fired_events = 0;
    std::vector<TimedEvent> stranded;
    std::optional<QubitBackend> qubits;  // analog state at the end of the run
};

namespace detail {

inline std::string json_qubits(QubitSet s) {
    std::string out = "[";
    bool first = true;
    for (auto q : s.members()) {
        if (!first) out += ',';
        out += fmt::format("{}", q);
        first = false;
    }
    return out + "]";
}

inline std::string json_dest(const std::optional<Register>& r) {
    return r ? fmt::format("\"{}\"", to_string(*r)) : std::string("null");
}

}  // namespace detail

class Machine {
public:
    using ResultCallback = std::function<void(const MeasurementRecord&)>;

    explicit Machine(MachineConfig config, TraceSink* trace = nullptr, ResultCallback on_result = {})
        : cfg_(std::move(config)), trace_(trace), on_result_(std::move(on_result)) {
        cfg_.validate();
    }

    const MachineConfig& config() const { return cfg_; }

    RunResult run(const Program& program) {
        Session s(cfg_, program, trace_, on_result_);
        return s.run();
    }

private:
    struct MeasureAction {
        QubitSet qubits;
        TimePs start_ps = 0;
        TimePs duration_ps = 0;
    };
    struct DiscriminateAction {
        QubitSet qubits;
        std::optional<Register> dest;
        TimingLabel label = 0;
    };
    using Action = std::variant<PulseEvent, MeasureAction, DiscriminateAction>;

    struct Scheduled {
        TimePs time = 0;
        std::uint64_t seq = 0;
        Action action;
        bool operator>(const Scheduled& o) const { return time != o.time ? time > o.time : seq > o.seq; }
    };

    class Session {
    public:
        Session(const MachineConfig& cfg, const Program& program, TraceSink* trace, const ResultCallback& on_result)
            : cfg_(cfg),
              program_(program),
              trace_(trace),
              on_result_(on_result),
              exec_(cfg.memory_words),
              queues_(cfg.queue_capacity),
              backend_(cfg.backend),
              mdu_(MduConfig::uniform(cfg.mdu_window, cfg.threshold())),
              signal_(cfg.mdu_window, 0.0) {}

        RunResult run() {
            const std::optional<std::uint64_t> producer_slice =
                cfg_.throttle_ticks ? std::optional<std::uint64_t>(1) : std::nullopt;
            while (true) {
                bool produced = produce(producer_slice);
                bool consumed = consume(cfg_.throttle_ticks);
                if (done()) break;
                if (!produced && !consumed) deadlock();
            }
            RunResult r;
            r.final_cycle = controller_.now();
            r.enqueued_events = enqueued_events_;
            r.fired_events = fired_events_;
            for (auto kind : {EventKind::Pulse, EventKind::Mpg, EventKind::Md}) {
                for (auto& ev : queues_.events(kind).snapshot()) r.stranded.push_back(ev);
            }
            r.state = std::move(exec_);
            r.qubits = backend_;
            return r;
        }

    private:
        // ---- non-deterministic domain ------------------------------------

        bool settled() const { return exec_.halted || stalled_; }

        bool flush() {
            while (!staged_.empty()) {
                if (!queues_.enqueue(staged_.front())) return false;
                if (std::holds_alternative<TimedEvent>(staged_.front())) ++enqueued_events_;
                staged_.pop_front();
                progress_ = true;
            }
            return true;
        }

        bool produce(std::optional<std::uint64_t> limit) {
            progress_ = false;
            std::uint64_t executed = 0;
            while (true) {
                if (!flush()) return progress_;
                if (exec_.halted) return progress_;
                if (limit && executed >= *limit) return progress_;
                if (exec_.steps >= cfg_.max_steps && exec_.pc < program_.instructions.size()) {
                    throw Error(ErrorKind::Budget,
                                fmt::format("step budget of {} exhausted at pc {}", cfg_.max_steps, exec_.pc));
                }
                auto r = step(exec_, program_);
                if (r.status == StepStatus::Halted) {
                    progress_ = true;
                    return progress_;
                }
                if (r.status == StepStatus::Stalled) {
                    stalled_ = true;
                    return progress_;
                }
                stalled_ = false;
                progress_ = true;
                ++executed;
                if (!r.emitted) continue;
                for (const auto& q : expand(*r.emitted, cfg_.control_store)) {
                    for (auto& item : assigner_.assign(q)) {
                        if (const auto* ev = std::get_if<TimedEvent>(&item)) {
                            if (const auto* md = std::get_if<MdPayload>(&ev->payload); md && md->dest) {
                                exec_.registers.mark_pending(*md->dest);
                            }
                        }
                        staged_.push_back(std::move(item));
                    }
                }
            }
        }

        // ---- deterministic domain ----------------------------------------

        std::uint64_t cycle_of(TimePs t) const {
            return static_cast<std::uint64_t>((t + cfg_.cycle_ps - 1) / cfg_.cycle_ps);
        }

        bool consume(std::optional<std::uint64_t> budget) {
            bool progressed = false;
            if (!controller_.started()) {
                if (assigner_.current() == 0 && !settled()) return false;
                handle_fired(controller_.start(queues_));
                process_due();
                progressed = true;
            }
            std::uint64_t used = 0;
            while (true) {
                if (budget && used >= *budget) return progressed;
                const std::uint64_t now = controller_.now();
                std::optional<std::uint64_t> heap_cycle;
                if (!heap_.empty()) heap_cycle = cycle_of(heap_.top().time);

                std::uint64_t target = 0;
                if (auto to_broadcast = controller_.cycles_to_next_broadcast(queues_)) {
                    const auto label = queues_.timing.front().label;
                    const bool sealed = assigner_.current() > label || settled();
                    target = now + *to_broadcast - (sealed ? 0 : 1);
                    if (heap_cycle) target = std::min(target, *heap_cycle);
                } else {
                    if (!settled() || !heap_cycle) return progressed;
                    target = *heap_cycle;
                }
                if (budget) target = std::min(target, now + (*budget - used));
                if (target <= now) return progressed;

                auto fired = controller_.run_until(queues_, target);
                used += target - now;
                progressed = true;
                handle_fired(fired);
                if (process_due()) return progressed;
            }
        }

        bool done() const {
            return exec_.halted && staged_.empty() && queues_.timing.empty() && heap_.empty();
        }

        [[noreturn]] void deadlock() const {
            std::string why;
            if (stalled_) {
                why = fmt::format("execution stalled at pc {} on a register whose MD result can never arrive",
                                  exec_.pc);
            } else if (!staged_.empty()) {
                why = "more events share one time point than the event queues can hold";
            } else {
                why = "no component can make progress";
            }
            throw runtime_fault("pipeline", fmt::format("deadlock at T_D={}: {}", controller_.now(), why));
        }

        void schedule(TimePs t, Action a) { heap_.push(Scheduled{t, next_seq_++, std::move(a)}); }

        Ctpg ctpg(unsigned id) const {
            Ctpg c;
            c.id = id;
            c.table = &cfg_.lookup_table;
            c.delay_cycles = cfg_.ctpg_delay_cycles;
            c.cycle_ps = cfg_.cycle_ps;
            c.x_axis_extra_delay_cycles = cfg_.x_pulse_delay_cycles;
            return c;
        }

        bool is_two_qubit(const std::string& op) const {
            for (const auto& s : cfg_.seq_table.at(op)) {
                if (cfg_.lookup_table.at(s.codeword).gate.kind == GateKind::CZ) return true;
            }
            return false;
        }

        double ns(std::uint64_t cycle) const {
            return static_cast<double>(static_cast<TimePs>(cycle) * cfg_.cycle_ps) / 1000.0;
        }
        double ns(TimePs ps) const { return static_cast<double>(ps) / 1000.0; }

        void handle_fired(const std::vector<FiredEvent>& fired) {
            for (const auto& f : fired) {
                ++fired_events_;
                std::visit([&](const auto& p) { on_fire(f.cycle, f.event.label, p); }, f.event.payload);
            }
        }

        void on_fire(std::uint64_t cycle, TimingLabel label, const PulsePayload& p) {
            std::vector<CodewordTrigger> triggers;
            if (is_two_qubit(p.op)) {
                if (p.qubits.size() != 2) {
                    throw runtime_fault("adi", fmt::format("two-qubit micro-op {} on {}", p.op, to_string(p.qubits)));
                }
                triggers = emit_codewords(cfg_.seq_table, p.op, cycle, cfg_.flux_ctpg, p.qubits);
            } else {
                for (auto q : p.qubits.members()) {
                    auto t = emit_codewords(cfg_.seq_table, p.op, cycle, q, QubitSet{q});
                    triggers.insert(triggers.end(), t.begin(), t.end());
                }
            }
            fmt::memory_buffer trig;
            bool first = true;
            for (const auto& t : triggers) {
                auto ev = generate_pulse(ctpg(t.unit), t);
                if (trace_) {
                    fmt::format_to(std::back_inserter(trig),
                                   "{}{{\"cycle\":{},\"unit\":\"CTPG{}\",\"codeword\":{},\"start_ns\":{}}}",
                                   first ? "" : ",", t.cycle, t.unit, t.codeword, ns(ev.start_ps));
                }
                first = false;
                schedule(ev.start_ps, ev);
            }
            if (trace_) {
                trace_->write(fmt::format(
                    "{{\"cycle\":{},\"ns\":{},\"queue\":\"pulse\",\"label\":{},\"payload\":{{\"op\":\"{}\","
                    "\"qubits\":{},\"triggers\":[{}]}}}}",
                    cycle, ns(cycle), label, p.op, detail::json_qubits(p.qubits), fmt::to_string(trig)));
            }
        }

        void on_fire(std::uint64_t cycle, TimingLabel label, const MpgPayload& p) {
            auto window = mpg_.fire(cycle, p.qubits, p.duration);
            const TimePs start = static_cast<TimePs>(cycle + cfg_.ctpg_delay_cycles) * cfg_.cycle_ps;
            schedule(start, MeasureAction{p.qubits, start, static_cast<TimePs>(p.duration) * cfg_.cycle_ps});
            if (trace_) {
                trace_->write(fmt::format(
                    "{{\"cycle\":{},\"ns\":{},\"queue\":\"mpg\",\"label\":{},\"payload\":{{\"qubits\":{},"
                    "\"duration\":{},\"window\":[{},{}],\"trigger\":{{\"cycle\":{},\"unit\":\"CTPG{}\","
                    "\"codeword\":{},\"start_ns\":{}}}}}}}",
                    cycle, ns(cycle), label, detail::json_qubits(p.qubits), p.duration, window.start_cycle,
                    window.end_cycle, cycle, cfg_.measurement_ctpg, cfg_.measurement_codeword, ns(start)));
            }
        }

        void on_fire(std::uint64_t cycle, TimingLabel label, const MdPayload& p) {
            const std::uint64_t ready = cycle + cfg_.md_latency_cycles;
            schedule(static_cast<TimePs>(ready) * cfg_.cycle_ps, DiscriminateAction{p.qubits, p.dest, label});
            if (trace_) {
                trace_->write(fmt::format(
                    "{{\"cycle\":{},\"ns\":{},\"queue\":\"md\",\"label\":{},\"payload\":{{\"qubits\":{},"
                    "\"dest\":{},\"unit\":\"MDU{}\",\"result_cycle\":{}}}}}",
                    cycle, ns(cycle), label, detail::json_qubits(p.qubits), detail::json_dest(p.dest),
                    p.qubits.members().front(), ready));
            }
        }

        /// Applies analog actions that are due by the current cycle. Returns
        /// true when an MD result was written back to the register file.
        bool process_due() {
            bool wrote_back = false;
            const TimePs now_ps = static_cast<TimePs>(controller_.now()) * cfg_.cycle_ps;
            while (!heap_.empty() && heap_.top().time <= now_ps) {
                Scheduled item = heap_.top();
                heap_.pop();
                if (const auto* pulse = std::get_if<PulseEvent>(&item.action)) {
                    backend_.apply(*pulse);
                } else if (const auto* m = std::get_if<MeasureAction>(&item.action)) {
                    backend_.measure_pulse(m->qubits, m->start_ps, m->duration_ps);
                } else {
                    wrote_back |= discriminate_now(std::get<DiscriminateAction>(item.action), cycle_of(item.time));
                }
            }
            return wrote_back;
        }

        bool discriminate_now(const DiscriminateAction& a, std::uint64_t cycle) {
            std::int32_t bits = 0;
            std::string integrals;
            std::string outcomes;
            int i = 0;
            for (auto q : a.qubits.members()) {
                auto readout = backend_.take_readout(q);
                std::fill(signal_.begin(), signal_.end(), readout.level);
                auto d = discriminate(mdu_, signal_);
                bits |= d.bit << i;
                MeasurementRecord rec{result_index_++, cycle, q, d.integral, d.bit, a.dest};
                if (on_result_) on_result_(rec);
                if (trace_) {
                    integrals += fmt::format("{}{}", i == 0 ? "" : ",", d.integral);
                    outcomes += fmt::format("{}{}", i == 0 ? "" : ",", d.bit);
                }
                ++i;
            }
            if (trace_) {
                trace_->write(fmt::format(
                    "{{\"cycle\":{},\"ns\":{},\"queue\":\"mdu\",\"label\":{},\"payload\":{{\"qubits\":{},"
                    "\"dest\":{},\"S\":[{}],\"M\":[{}]}}}}",
                    cycle, ns(cycle), a.label, detail::json_qubits(a.qubits), detail::json_dest(a.dest), integrals,
                    outcomes));
            }
            if (a.dest) {
                exec_.registers.write_back(*a.dest, bits);
                return true;
            }
            return false;
        }

        const MachineConfig& cfg_;
        const Program& program_;
        TraceSink* trace_;
        const ResultCallback& on_result_;

        ExecState exec_;
        QueueSet queues_;
        TimingController controller_;
        LabelAssigner assigner_;
        std::deque<QueueItem> staged_;
        std::priority_queue<Scheduled, std::vector<Scheduled>, std::greater<>> heap_;
        std::uint64_t next_seq_ = 0;
        QubitBackend backend_;
        MeasurementPulseUnit mpg_;
        MduConfig mdu_;
        std::vector<double> signal_;

        bool stalled_ = false;
        bool progress_ = false;
        std::uint64_t enqueued_events_ = 0;
        std::uint64_t fired_events_ = 0;
        std::uint64_t result_index_ = 0;
    };

    MachineConfig cfg_;
    TraceSink* trace_;
    ResultCallback on_result_;
};

}  // namespace quma
