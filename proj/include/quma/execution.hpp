#pragma once

// Execution controller: runs the auxiliary classical instructions in the
// non-deterministic timing domain and streams quantum instructions onward.

#include <array>
#include <cstdint>
#include <optional>
#include <variant>
#include <vector>

#include <fmt/format.h>

#include "quma/error.hpp"
#include "quma/isa.hpp"

namespace quma {

/// 16 x 32-bit signed registers with a scoreboard of outstanding MD writebacks.
class RegisterFile {
public:
    std::int32_t read(Register r) const { return values_.at(r.index); }
    void write(Register r, std::int32_t v) { values_.at(r.index) = v; }

    bool pending(Register r) const { return pending_.at(r.index) != 0; }
    void mark_pending(Register r) { ++pending_.at(r.index); }

    /// Delivers an MD result and retires one outstanding writeback.
    void write_back(Register r, std::int32_t v) {
        values_.at(r.index) = v;
        if (pending_.at(r.index) == 0) {
            throw runtime_fault("execution", fmt::format("writeback to {} with no outstanding MD", to_string(r)));
        }
        --pending_.at(r.index);
    }

    bool any_pending() const {
        for (auto p : pending_) {
            if (p != 0) return true;
        }
        return false;
    }

    const std::array<std::int32_t, kRegisterCount>& values() const { return values_; }

private:
    std::array<std::int32_t, kRegisterCount> values_{};
    std::array<std::uint32_t, kRegisterCount> pending_{};
};

class DataMemory {
public:
    static constexpr std::size_t kDefaultWords = 65536;

    explicit DataMemory(std::size_t words = kDefaultWords) : words_(words, 0) {}

    std::int32_t load(std::int64_t address) const { return words_[checked(address)]; }
    void store(std::int64_t address, std::int32_t value) { words_[checked(address)] = value; }
    std::size_t size() const { return words_.size(); }
    const std::vector<std::int32_t>& words() const { return words_; }

private:
    std::size_t checked(std::int64_t address) const {
        if (address < 0 || static_cast<std::uint64_t>(address) >= words_.size()) {
            throw runtime_fault("execution",
                                fmt::format("memory access at address {} outside [0, {})", address, words_.size()));
        }
        return static_cast<std::size_t>(address);
    }

    std::vector<std::int32_t> words_;
};

struct ExecState {
    std::size_t pc = 0;
    RegisterFile registers;
    DataMemory memory;
    bool halted = false;
    std::uint64_t steps = 0;

    ExecState() = default;
    explicit ExecState(std::size_t memory_words) : memory(memory_words) {}
};

/// What the execution controller hands to the physical microcode unit.
using QuantumInstr = std::variant<QumisInstr, QisInstr>;

inline std::string to_string(const QuantumInstr& q) {
    return std::visit([](const auto& i) { return to_string(i); }, q);
}

enum class StepStatus { Executed, Emitted, Stalled, Halted };

struct StepResult {
    StepStatus status = StepStatus::Executed;
    std::optional<QuantumInstr> emitted;
    std::optional<Register> stalled_on;
};

namespace detail {

inline std::int32_t wrapping_add(std::int32_t a, std::int32_t b) {
    return static_cast<std::int32_t>(static_cast<std::uint32_t>(a) + static_cast<std::uint32_t>(b));
}
inline std::int32_t wrapping_sub(std::int32_t a, std::int32_t b) {
    return static_cast<std::int32_t>(static_cast<std::uint32_t>(a) - static_cast<std::uint32_t>(b));
}

}  // namespace detail

/// Executes one instruction. A classical read or overwrite of a register
/// with an outstanding MD writeback leaves the state untouched and reports
/// Stalled. Further MDs to the same register queue up behind it.
inline StepResult step(ExecState& state, const Program& program) {
    if (state.halted) return {StepStatus::Halted, std::nullopt, std::nullopt};
    if (state.pc >= program.instructions.size()) {
        state.halted = true;
        return {StepStatus::Halted, std::nullopt, std::nullopt};
    }

    auto& regs = state.registers;
    auto stall_on = [&](std::initializer_list<Register> used) -> std::optional<Register> {
        for (auto r : used) {
            if (regs.pending(r)) return r;
        }
        return std::nullopt;
    };

    const auto& instr = program.instructions[state.pc];
    std::size_t next_pc = state.pc + 1;
    StepResult result;

    if (const auto* c = std::get_if<ClassicalInstr>(&instr)) {
        std::optional<Register> blocked;
        switch (c->op) {
            case ClassicalOp::Mov: blocked = stall_on({c->rd}); break;
            case ClassicalOp::Add:
            case ClassicalOp::Sub: blocked = stall_on({c->rd, c->rs, c->rt}); break;
            case ClassicalOp::Addi:
            case ClassicalOp::Load: blocked = stall_on({c->rd, c->rs}); break;
            case ClassicalOp::Store: blocked = stall_on({c->rd, c->rs}); break;
            case ClassicalOp::Bne:
            case ClassicalOp::Beq: blocked = stall_on({c->rs, c->rt}); break;
            case ClassicalOp::Jump: break;
            case ClassicalOp::QNopReg: blocked = stall_on({c->rs}); break;
        }
        if (blocked) return {StepStatus::Stalled, std::nullopt, blocked};

        result.status = StepStatus::Executed;
        switch (c->op) {
            case ClassicalOp::Mov: regs.write(c->rd, c->imm); break;
            case ClassicalOp::Add: regs.write(c->rd, detail::wrapping_add(regs.read(c->rs), regs.read(c->rt))); break;
            case ClassicalOp::Sub: regs.write(c->rd, detail::wrapping_sub(regs.read(c->rs), regs.read(c->rt))); break;
            case ClassicalOp::Addi: regs.write(c->rd, detail::wrapping_add(regs.read(c->rs), c->imm)); break;
            case ClassicalOp::Load:
                regs.write(c->rd, state.memory.load(std::int64_t{regs.read(c->rs)} + c->imm));
                break;
            case ClassicalOp::Store:
                state.memory.store(std::int64_t{regs.read(c->rs)} + c->imm, regs.read(c->rd));
                break;
            case ClassicalOp::Bne:
                if (regs.read(c->rs) != regs.read(c->rt)) next_pc = program.labels.at(c->target);
                break;
            case ClassicalOp::Beq:
                if (regs.read(c->rs) == regs.read(c->rt)) next_pc = program.labels.at(c->target);
                break;
            case ClassicalOp::Jump: next_pc = program.labels.at(c->target); break;
            case ClassicalOp::QNopReg: {
                auto interval = regs.read(c->rs);
                if (interval < 1) {
                    throw runtime_fault("execution", fmt::format("QNopReg {} at pc {} read non-positive interval {}",
                                                                 to_string(c->rs), state.pc, interval));
                }
                result.status = StepStatus::Emitted;
                result.emitted = QuantumInstr{QumisInstr{WaitInstr{static_cast<std::uint32_t>(interval)}}};
                break;
            }
        }
    } else if (const auto* q = std::get_if<QumisInstr>(&instr)) {
        result.status = StepStatus::Emitted;
        result.emitted = QuantumInstr{*q};
    } else {
        result.status = StepStatus::Emitted;
        result.emitted = QuantumInstr{std::get<QisInstr>(instr)};
    }

    state.pc = next_pc;
    ++state.steps;
    return result;
}

struct ExecutionOutput {
    std::vector<QuantumInstr> stream;
    ExecState state;
};

inline constexpr std::uint64_t kDefaultStepBudget = 1'000'000'000;

/// Runs the classical program alone, with no deterministic timing domain
/// attached, and returns every emitted quantum instruction in program order.
inline ExecutionOutput run_to_completion(const Program& program, std::uint64_t budget = kDefaultStepBudget,
                                         std::size_t memory_words = DataMemory::kDefaultWords) {
    if (budget == 0) throw Error(ErrorKind::Budget, "step budget must be positive");
    ExecutionOutput out{{}, ExecState(memory_words)};
    while (true) {
        if (out.state.steps >= budget && !out.state.halted && out.state.pc < program.instructions.size()) {
            throw Error(ErrorKind::Budget,
                        fmt::format("step budget of {} exhausted at pc {}", budget, out.state.pc));
        }
        auto r = step(out.state, program);
        if (r.status == StepStatus::Halted) break;
        if (r.status == StepStatus::Stalled) {
            throw runtime_fault("execution", fmt::format("stalled on {} with no timing domain attached",
                                                         to_string(*r.stalled_on)));
        }
        if (r.emitted) out.stream.push_back(std::move(*r.emitted));
    }
    return out;
}

}  // namespace quma
