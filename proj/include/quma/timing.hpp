#pragma once

// Queue-based event timing control: a timing queue of (interval, label)
// time points, per-kind event queues, and the timing controller that owns
// the deterministic clock T_D and broadcasts labels as time points elapse.

#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <fmt/format.h>

#include "quma/error.hpp"
#include "quma/isa.hpp"

namespace quma {

using TimingLabel = std::uint64_t;
inline constexpr TimingLabel kMaxTimingLabel = 0xFFFF'FFFFull;

struct TimingEntry {
    std::uint32_t interval = 1;
    TimingLabel label = 0;
    bool operator==(const TimingEntry&) const = default;
};

enum class EventKind { Pulse, Mpg, Md };

inline std::string_view to_string(EventKind k) {
    switch (k) {
        case EventKind::Pulse: return "pulse";
        case EventKind::Mpg: return "mpg";
        case EventKind::Md: return "md";
    }
    return "?";
}

/// Micro-operation: one (qubit set, operation) pair of a Pulse instruction.
struct PulsePayload {
    QubitSet qubits;
    std::string op;
    bool operator==(const PulsePayload&) const = default;
};

struct MpgPayload {
    QubitSet qubits;
    std::uint32_t duration = 1;
    bool operator==(const MpgPayload&) const = default;
};

struct MdPayload {
    QubitSet qubits;
    std::optional<Register> dest;
    bool operator==(const MdPayload&) const = default;
};

using EventPayload = std::variant<PulsePayload, MpgPayload, MdPayload>;

struct TimedEvent {
    TimingLabel label = 0;
    EventPayload payload;

    EventKind kind() const { return static_cast<EventKind>(payload.index()); }
    bool operator==(const TimedEvent&) const = default;
};

/// Output of label assignment: either a time point or an event.
using QueueItem = std::variant<TimingEntry, TimedEvent>;

/// FIFO with a fixed capacity. push() refuses when full so the producer can
/// apply backpressure instead of losing entries.
template <typename T>
class BoundedFifo {
public:
    explicit BoundedFifo(std::size_t capacity) : capacity_(capacity) {
        if (capacity == 0) throw Error(ErrorKind::Parse, "queue capacity must be positive");
    }

    [[nodiscard]] bool push(T value) {
        if (full()) return false;
        items_.push_back(std::move(value));
        return true;
    }

    const T& front() const { return items_.front(); }
    T pop() {
        T v = std::move(items_.front());
        items_.pop_front();
        return v;
    }

    bool empty() const { return items_.empty(); }
    bool full() const { return items_.size() >= capacity_; }
    std::size_t size() const { return items_.size(); }
    std::size_t capacity() const { return capacity_; }

    /// Front-to-back copy.
    std::vector<T> snapshot() const { return {items_.begin(), items_.end()}; }

private:
    std::size_t capacity_;
    std::deque<T> items_;
};

inline constexpr std::size_t kDefaultQueueCapacity = 4096;

using TimingQueue = BoundedFifo<TimingEntry>;
using EventQueue = BoundedFifo<TimedEvent>;

struct QueueSet {
    TimingQueue timing;
    EventQueue pulse;
    EventQueue mpg;
    EventQueue md;

    explicit QueueSet(std::size_t capacity = kDefaultQueueCapacity)
        : timing(capacity), pulse(capacity), mpg(capacity), md(capacity) {}

    EventQueue& events(EventKind k) {
        switch (k) {
            case EventKind::Pulse: return pulse;
            case EventKind::Mpg: return mpg;
            case EventKind::Md: return md;
        }
        return pulse;
    }
    const EventQueue& events(EventKind k) const { return const_cast<QueueSet*>(this)->events(k); }

    bool events_empty() const { return pulse.empty() && mpg.empty() && md.empty(); }

    /// Appends the item; returns false (and leaves the queues untouched) when
    /// the target queue is full.
    [[nodiscard]] bool enqueue(const QueueItem& item) {
        if (const auto* t = std::get_if<TimingEntry>(&item)) return timing.push(*t);
        const auto& ev = std::get<TimedEvent>(item);
        return events(ev.kind()).push(ev);
    }
};

struct FiredEvent {
    std::uint64_t cycle = 0;
    TimedEvent event;
};

enum class StartSource { Instruction, External };

/// Owns T_D. The interval counter resets on the same cycle as each
/// broadcast, so consecutive intervals add with no dead cycles.
class TimingController {
public:
    bool started() const { return started_; }
    std::uint64_t now() const { return t_d_; }
    std::uint64_t counter() const { return counter_; }
    std::optional<TimingLabel> last_broadcast() const { return last_label_; }
    StartSource start_source() const { return source_; }

    /// T_D = 0; label-0 events fire immediately.
    std::vector<FiredEvent> start(QueueSet& queues, StartSource source = StartSource::Instruction) {
        if (started_) throw runtime_fault("timing", "timing controller started twice");
        started_ = true;
        source_ = source;
        t_d_ = 0;
        counter_ = 0;
        std::vector<FiredEvent> fired;
        broadcast(queues, 0, fired);
        return fired;
    }

    /// Advances T_D by one cycle.
    std::vector<FiredEvent> tick(QueueSet& queues) {
        std::vector<FiredEvent> fired;
        tick_into(queues, fired);
        return fired;
    }

    /// Cycles until the front time point is reached, if any is queued.
    std::optional<std::uint64_t> cycles_to_next_broadcast(const QueueSet& queues) const {
        if (queues.timing.empty()) return std::nullopt;
        const auto interval = queues.timing.front().interval;
        if (interval <= counter_) {
            throw runtime_fault("timing", fmt::format("time point (interval {}, label {}) arrived after {} cycles "
                                                      "had already elapsed at T_D={}",
                                                      interval, queues.timing.front().label, counter_, t_d_));
        }
        return interval - counter_;
    }

    /// Equivalent to ticking until T_D == target, but skips idle stretches.
    std::vector<FiredEvent> run_until(QueueSet& queues, std::uint64_t target) {
        require_started();
        std::vector<FiredEvent> fired;
        while (t_d_ < target) {
            auto next = cycles_to_next_broadcast(queues);
            if (!next || t_d_ + *next > target) {
                counter_ += target - t_d_;
                t_d_ = target;
                break;
            }
            counter_ += *next - 1;
            t_d_ += *next - 1;
            tick_into(queues, fired);
        }
        return fired;
    }

private:
    void require_started() const {
        if (!started_) throw runtime_fault("timing", "timing controller not started");
    }

    void tick_into(QueueSet& queues, std::vector<FiredEvent>& fired) {
        require_started();
        ++t_d_;
        ++counter_;
        if (queues.timing.empty()) return;
        const auto& front = queues.timing.front();
        if (counter_ > front.interval) {
            throw runtime_fault("timing", fmt::format("time point label {} missed at T_D={}", front.label, t_d_));
        }
        if (counter_ == front.interval) {
            auto entry = queues.timing.pop();
            counter_ = 0;
            broadcast(queues, entry.label, fired);
        }
    }

    void broadcast(QueueSet& queues, TimingLabel label, std::vector<FiredEvent>& fired) {
        last_label_ = label;
        for (auto kind : {EventKind::Pulse, EventKind::Mpg, EventKind::Md}) {
            auto& q = queues.events(kind);
            while (!q.empty() && q.front().label <= label) {
                if (q.front().label < label) {
                    throw runtime_fault("timing", fmt::format("{} event with label {} missed its time point "
                                                              "(broadcast label {} at T_D={})",
                                                              to_string(kind), q.front().label, label, t_d_));
                }
                fired.push_back({t_d_, q.pop()});
            }
        }
    }

    std::uint64_t t_d_ = 0;
    std::uint64_t counter_ = 0;
    bool started_ = false;
    StartSource source_ = StartSource::Instruction;
    std::optional<TimingLabel> last_label_;
};

}  // namespace quma
