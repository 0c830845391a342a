#pragma once

// Physical microcode unit and quantum microinstruction buffer. QIS quantum
// instructions expand through microprograms in the Q control store into
// QuMIS; the buffer then assigns timing labels and splits microinstructions
// into queue entries.

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>

#include "quma/error.hpp"
#include "quma/execution.hpp"
#include "quma/isa.hpp"
#include "quma/timing.hpp"

namespace quma {

struct MicroprogramLine {
    std::string text;
    std::size_t source_line = 0;
};

struct Microprogram {
    std::string name;
    std::vector<std::string> params;
    std::vector<MicroprogramLine> body;
};

class QControlStore {
public:
    void add(Microprogram mp) {
        if (mp.body.empty()) {
            throw Error(ErrorKind::Parse, fmt::format("microprogram '{}' has an empty body", mp.name));
        }
        if (programs_.contains(mp.name)) {
            throw Error(ErrorKind::Parse, fmt::format("microprogram '{}' defined twice", mp.name));
        }
        programs_.emplace(mp.name, std::move(mp));
    }

    bool contains(std::string_view name) const { return programs_.find(std::string(name)) != programs_.end(); }

    const Microprogram& at(std::string_view name) const {
        auto it = programs_.find(std::string(name));
        if (it == programs_.end()) {
            throw runtime_fault("microcode", fmt::format("no microprogram for quantum instruction '{}'", name));
        }
        return it->second;
    }

    const std::map<std::string, Microprogram>& programs() const { return programs_; }

    /// Parser options accepting exactly this store's mnemonics.
    ParseOptions parse_options() const {
        ParseOptions opts;
        opts.quantum_mnemonics.clear();
        for (const auto& [name, mp] : programs_) opts.quantum_mnemonics.insert(name);
        return opts;
    }

private:
    std::map<std::string, Microprogram> programs_;
};

/// Loads a `.qmp` file: `def NAME(p0, p1):` headers followed by QuMIS body
/// lines in `.qumis` syntax, where parameters stand for qubits, registers,
/// micro-op names or immediates.
inline QControlStore parse_microprograms(std::string_view source) {
    using detail::trim;
    QControlStore store;
    std::optional<Microprogram> current;
    auto flush = [&] {
        if (current) store.add(std::move(*current));
        current.reset();
    };

    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= source.size()) {
        auto nl = source.find('\n', pos);
        auto raw = source.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? source.size() + 1 : nl + 1;
        ++line_no;
        auto text = trim(raw.substr(0, raw.find('#')));
        if (text.empty()) continue;

        if (text.starts_with("def ") || text.starts_with("def\t")) {
            flush();
            auto open = text.find('(');
            auto close = text.rfind(')');
            if (open == std::string_view::npos || close == std::string_view::npos || close < open ||
                trim(text.substr(close + 1)) != ":") {
                throw ParseError(line_no, "malformed microprogram header, expected 'def NAME(params):'");
            }
            Microprogram mp;
            mp.name = std::string(trim(text.substr(4, open - 4)));
            if (!detail::is_identifier(mp.name)) {
                throw ParseError(line_no, fmt::format("malformed microprogram name '{}'", mp.name));
            }
            auto params = trim(text.substr(open + 1, close - open - 1));
            if (!params.empty()) {
                for (auto p : detail::split_operands(params, line_no)) {
                    if (!detail::is_identifier(p)) {
                        throw ParseError(line_no, fmt::format("malformed parameter '{}'", p));
                    }
                    mp.params.emplace_back(p);
                }
            }
            current = std::move(mp);
            continue;
        }
        if (!current) throw ParseError(line_no, "instruction outside of a microprogram definition");
        auto mnemonic = text.substr(0, text.find_first_of(" \t"));
        if (mnemonic != "Wait" && mnemonic != "Pulse" && mnemonic != "MPG" && mnemonic != "MD") {
            throw ParseError(line_no, fmt::format("microprogram bodies hold QuMIS only, got '{}'", mnemonic));
        }
        current->body.push_back({std::string(text), line_no});
    }
    flush();
    return store;
}

/// Shipped defaults: the CNOT decomposition Ry(pi/2)_t . CZ . Ry(-pi/2)_t,
/// measurement as MPG + MD, and Apply for single micro-ops.
inline constexpr std::string_view kDefaultMicroprograms = R"(# Q control store defaults
def CNOT(qt, qc):
    Pulse {qt}, Ym90
    Wait 4
    Pulse {qt, qc}, CZ
    Wait 8
    Pulse {qt}, Y90
    Wait 4

def Measure(q, rd):
    MPG {q}, 300
    MD {q}, rd

def Apply(op, q):
    Pulse {q}, op
    Wait 4
)";

inline QControlStore default_control_store() { return parse_microprograms(kDefaultMicroprograms); }

namespace detail {

/// Replaces whole identifier tokens that name a formal parameter.
inline std::string substitute(std::string_view text, const std::map<std::string, std::string, std::less<>>& bindings) {
    std::string out;
    std::size_t i = 0;
    while (i < text.size()) {
        if (is_ident_start(text[i])) {
            std::size_t j = i;
            while (j < text.size() && is_ident_char(text[j])) ++j;
            auto token = text.substr(i, j - i);
            auto it = bindings.find(token);
            out += it == bindings.end() ? std::string(token) : it->second;
            i = j;
        } else {
            out += text[i++];
        }
    }
    return out;
}

}  // namespace detail

/// Expands one quantum instruction into QuMIS. Native QuMIS passes through.
inline std::vector<QumisInstr> expand(const QuantumInstr& instr, const QControlStore& store) {
    if (const auto* q = std::get_if<QumisInstr>(&instr)) return {*q};
    const auto& qis = std::get<QisInstr>(instr);
    const auto& mp = store.at(qis.mnemonic);
    if (mp.params.size() != qis.operands.size()) {
        throw runtime_fault("microcode", fmt::format("'{}' expects {} operand(s), got {}", qis.mnemonic,
                                                     mp.params.size(), qis.operands.size()));
    }
    std::map<std::string, std::string, std::less<>> bindings;
    for (std::size_t i = 0; i < mp.params.size(); ++i) bindings[mp.params[i]] = qis.operands[i];

    ParseOptions no_qis;
    no_qis.quantum_mnemonics.clear();
    std::vector<QumisInstr> out;
    QubitSet pulsed_since_wait;
    for (const auto& line : mp.body) {
        auto text = detail::substitute(line.text, bindings);
        Instruction parsed;
        try {
            parsed = parse_instruction(text, line.source_line, no_qis);
        } catch (const ParseError& e) {
            throw runtime_fault("microcode", fmt::format("expanding '{}': {}", to_string(qis), e.what()));
        }
        const auto* qumis = std::get_if<QumisInstr>(&parsed);
        if (qumis == nullptr) {
            throw runtime_fault("microcode", fmt::format("'{}' body line '{}' is not QuMIS", mp.name, text));
        }
        if (std::holds_alternative<WaitInstr>(*qumis)) {
            pulsed_since_wait = {};
        } else if (const auto* p = std::get_if<PulseInstr>(qumis)) {
            for (const auto& pair : p->pairs) {
                if (pulsed_since_wait.intersects(pair.qubits)) {
                    throw runtime_fault("microcode", fmt::format("'{}' applies two pulses to {} with no Wait between",
                                                                 mp.name, to_string(pair.qubits)));
                }
                pulsed_since_wait = QubitSet::from_mask(pulsed_since_wait.mask() | pair.qubits.mask());
            }
        }
        out.push_back(*qumis);
    }
    return out;
}

/// Quantum microinstruction buffer: each Wait opens a new time point; events
/// carry the label of the most recent Wait (0 before the first one).
class LabelAssigner {
public:
    TimingLabel current() const { return label_; }

    std::vector<QueueItem> assign(const QumisInstr& instr) {
        std::vector<QueueItem> out;
        std::visit(
            [&](const auto& i) {
                using T = std::decay_t<decltype(i)>;
                if constexpr (std::is_same_v<T, WaitInstr>) {
                    if (label_ >= kMaxTimingLabel) {
                        throw runtime_fault("microcode", "timing label overflow beyond 2^32 - 1");
                    }
                    ++label_;
                    out.emplace_back(TimingEntry{i.interval, label_});
                } else if constexpr (std::is_same_v<T, PulseInstr>) {
                    for (const auto& pair : i.pairs) {
                        out.emplace_back(TimedEvent{label_, PulsePayload{pair.qubits, pair.op}});
                    }
                } else if constexpr (std::is_same_v<T, MpgInstr>) {
                    out.emplace_back(TimedEvent{label_, MpgPayload{i.qubits, i.duration}});
                } else {
                    out.emplace_back(TimedEvent{label_, MdPayload{i.qubits, i.dest}});
                }
            },
            instr);
        return out;
    }

private:
    TimingLabel label_ = 0;
};

}  // namespace quma
