#pragma once

// Instruction set of the control stack: auxiliary classical instructions,
// the QuMIS microinstructions (Wait, Pulse, MPG, MD) and QIS quantum
// instructions that the microcode unit expands. Also the `.qumis` text
// assembler and its canonical disassembler.

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <fmt/format.h>

#include "quma/error.hpp"

namespace quma {

inline constexpr std::size_t kRegisterCount = 16;
inline constexpr unsigned kMaxQubits = 64;

struct Register {
    std::uint8_t index = 0;

    auto operator<=>(const Register&) const = default;
};

inline std::string to_string(Register r) { return fmt::format("r{}", r.index); }

/// Set of qubit addresses. Stored as a bitmask so the set is always sorted
/// and deduplicated; equality is structural.
class QubitSet {
public:
    constexpr QubitSet() = default;
    QubitSet(std::initializer_list<unsigned> qubits) {
        for (auto q : qubits) insert(q);
    }

    static constexpr QubitSet from_mask(std::uint64_t mask) {
        QubitSet s;
        s.bits_ = mask;
        return s;
    }

    void insert(unsigned q) {
        if (q >= kMaxQubits) throw std::out_of_range("qubit index out of range");
        bits_ |= std::uint64_t{1} << q;
    }

    constexpr bool contains(unsigned q) const {
        return q < kMaxQubits && ((bits_ >> q) & 1U) != 0;
    }
    constexpr bool empty() const { return bits_ == 0; }
    constexpr std::size_t size() const { return static_cast<std::size_t>(std::popcount(bits_)); }
    constexpr bool intersects(QubitSet other) const { return (bits_ & other.bits_) != 0; }
    constexpr std::uint64_t mask() const { return bits_; }

    std::vector<unsigned> members() const {
        std::vector<unsigned> out;
        for (unsigned q = 0; q < kMaxQubits; ++q) {
            if (contains(q)) out.push_back(q);
        }
        return out;
    }

    constexpr bool operator==(const QubitSet&) const = default;

private:
    std::uint64_t bits_ = 0;
};

inline std::string to_string(QubitSet s) {
    std::string out = "{";
    bool first = true;
    for (auto q : s.members()) {
        if (!first) out += ", ";
        out += fmt::format("q{}", q);
        first = false;
    }
    return out + "}";
}

enum class ClassicalOp { Mov, Add, Addi, Sub, Load, Store, Bne, Beq, Jump, QNopReg };

/// Operand usage by opcode:
///   Mov rd, imm          Add/Sub rd, rs, rt     Addi rd, rs, imm
///   Load rd, rs[imm]     Store rd, rs[imm]      (rd is the stored value)
///   Bne/Beq rs, rt, label                       Jump label
///   QNopReg rs
/// Unused fields stay value-initialised so equality is structural.
struct ClassicalInstr {
    ClassicalOp op = ClassicalOp::Mov;
    Register rd{};
    Register rs{};
    Register rt{};
    std::int32_t imm = 0;
    std::string target;

    bool operator==(const ClassicalInstr&) const = default;
};

struct WaitInstr {
    std::uint32_t interval = 1;
    bool operator==(const WaitInstr&) const = default;
};

struct PulsePair {
    QubitSet qubits;
    std::string op;
    bool operator==(const PulsePair&) const = default;
};

struct PulseInstr {
    std::vector<PulsePair> pairs;
    bool operator==(const PulseInstr&) const = default;
};

struct MpgInstr {
    QubitSet qubits;
    std::uint32_t duration = 1;
    bool operator==(const MpgInstr&) const = default;
};

struct MdInstr {
    QubitSet qubits;
    std::optional<Register> dest;
    bool operator==(const MdInstr&) const = default;
};

using QumisInstr = std::variant<WaitInstr, PulseInstr, MpgInstr, MdInstr>;

/// QIS quantum instruction (e.g. `CNOT q1, q0`, `Measure q0, r7`), kept
/// textual until the microcode unit binds it to a microprogram.
struct QisInstr {
    std::string mnemonic;
    std::vector<std::string> operands;
    bool operator==(const QisInstr&) const = default;
};

using Instruction = std::variant<ClassicalInstr, QumisInstr, QisInstr>;

struct Program {
    std::vector<Instruction> instructions;
    std::map<std::string, std::size_t> labels;

    bool operator==(const Program&) const = default;
};

struct ParseOptions {
    /// QIS quantum mnemonics accepted by the parser; normally the names in
    /// the Q control store.
    std::set<std::string, std::less<>> quantum_mnemonics{"Apply", "Measure", "CNOT"};
    /// Accept a source with no instructions instead of reporting an error.
    bool allow_empty = false;
};

// ---------------------------------------------------------------------------
// Disassembly

namespace detail {

inline std::string_view classical_mnemonic(ClassicalOp op) {
    switch (op) {
        case ClassicalOp::Mov: return "mov";
        case ClassicalOp::Add: return "add";
        case ClassicalOp::Addi: return "addi";
        case ClassicalOp::Sub: return "sub";
        case ClassicalOp::Load: return "load";
        case ClassicalOp::Store: return "store";
        case ClassicalOp::Bne: return "bne";
        case ClassicalOp::Beq: return "beq";
        case ClassicalOp::Jump: return "jump";
        case ClassicalOp::QNopReg: return "QNopReg";
    }
    return "?";
}

}  // namespace detail

inline std::string to_string(const ClassicalInstr& c) {
    auto m = detail::classical_mnemonic(c.op);
    switch (c.op) {
        case ClassicalOp::Mov: return fmt::format("{} {}, {}", m, to_string(c.rd), c.imm);
        case ClassicalOp::Add:
        case ClassicalOp::Sub:
            return fmt::format("{} {}, {}, {}", m, to_string(c.rd), to_string(c.rs), to_string(c.rt));
        case ClassicalOp::Addi:
            return fmt::format("{} {}, {}, {}", m, to_string(c.rd), to_string(c.rs), c.imm);
        case ClassicalOp::Load:
        case ClassicalOp::Store:
            return fmt::format("{} {}, {}[{}]", m, to_string(c.rd), to_string(c.rs), c.imm);
        case ClassicalOp::Bne:
        case ClassicalOp::Beq:
            return fmt::format("{} {}, {}, {}", m, to_string(c.rs), to_string(c.rt), c.target);
        case ClassicalOp::Jump: return fmt::format("{} {}", m, c.target);
        case ClassicalOp::QNopReg: return fmt::format("{} {}", m, to_string(c.rs));
    }
    return {};
}

inline std::string to_string(const QumisInstr& q) {
    struct Printer {
        std::string operator()(const WaitInstr& w) const { return fmt::format("Wait {}", w.interval); }
        std::string operator()(const PulseInstr& p) const {
            std::string out = "Pulse ";
            for (std::size_t i = 0; i < p.pairs.size(); ++i) {
                if (i > 0) out += ", ";
                out += to_string(p.pairs[i].qubits) + ", " + p.pairs[i].op;
            }
            return out;
        }
        std::string operator()(const MpgInstr& m) const {
            return fmt::format("MPG {}, {}", to_string(m.qubits), m.duration);
        }
        std::string operator()(const MdInstr& m) const {
            if (m.dest) return fmt::format("MD {}, {}", to_string(m.qubits), to_string(*m.dest));
            return fmt::format("MD {}", to_string(m.qubits));
        }
    };
    return std::visit(Printer{}, q);
}

inline std::string to_string(const QisInstr& q) {
    std::string out = q.mnemonic;
    for (std::size_t i = 0; i < q.operands.size(); ++i) {
        out += (i == 0 ? " " : ", ");
        out += q.operands[i];
    }
    return out;
}

inline std::string to_string(const Instruction& instr) {
    return std::visit([](const auto& i) { return to_string(i); }, instr);
}

/// Canonical text form. parse_program(disassemble(p)) == p for every valid p.
inline std::string disassemble(const Program& program) {
    std::multimap<std::size_t, std::string> by_index;
    for (const auto& [name, index] : program.labels) by_index.emplace(index, name);

    std::string out;
    for (std::size_t i = 0; i <= program.instructions.size(); ++i) {
        auto [lo, hi] = by_index.equal_range(i);
        for (auto it = lo; it != hi; ++it) out += it->second + ":\n";
        if (i < program.instructions.size()) out += to_string(program.instructions[i]) + "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// Parsing

namespace detail {

inline std::string_view trim(std::string_view s) {
    constexpr std::string_view ws = " \t\r\n\f\v";
    auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
}

inline bool is_ident_start(char c) {
    return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || c == '_';
}
inline bool is_ident_char(char c) { return is_ident_start(c) || (c >= '0' && c <= '9'); }

inline bool is_identifier(std::string_view s) {
    if (s.empty() || !is_ident_start(s.front())) return false;
    return std::all_of(s.begin(), s.end(), is_ident_char);
}

/// Splits on commas that are not nested inside braces or brackets.
inline std::vector<std::string_view> split_operands(std::string_view text, std::size_t line) {
    std::vector<std::string_view> out;
    text = trim(text);
    if (text.empty()) return out;
    int depth = 0;
    std::size_t start = 0;
    for (std::size_t i = 0; i < text.size(); ++i) {
        char c = text[i];
        if (c == '{' || c == '[') ++depth;
        if (c == '}' || c == ']') {
            if (--depth < 0) throw ParseError(line, "unbalanced brackets");
        }
        if (c == ',' && depth == 0) {
            out.push_back(trim(text.substr(start, i - start)));
            start = i + 1;
        }
    }
    if (depth != 0) throw ParseError(line, "unbalanced brackets");
    out.push_back(trim(text.substr(start)));
    for (auto op : out) {
        if (op.empty()) throw ParseError(line, "empty operand");
    }
    return out;
}

template <typename Int>
std::optional<Int> parse_int(std::string_view s) {
    Int value{};
    if (s.empty()) return std::nullopt;
    if (s.front() == '+') s.remove_prefix(1);
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
    return value;
}

inline Register parse_register(std::string_view s, std::size_t line) {
    if (s.size() >= 2 && s.front() == 'r') {
        if (auto n = parse_int<unsigned>(s.substr(1)); n && *n < kRegisterCount) {
            return Register{static_cast<std::uint8_t>(*n)};
        }
    }
    throw ParseError(line, fmt::format("expected register r0..r{}, got '{}'", kRegisterCount - 1, s));
}

inline std::int32_t parse_imm(std::string_view s, std::size_t line) {
    if (auto v = parse_int<std::int32_t>(s)) return *v;
    throw ParseError(line, fmt::format("expected decimal immediate, got '{}'", s));
}

inline std::uint32_t parse_positive(std::string_view s, std::size_t line, std::string_view what) {
    auto v = parse_int<std::uint32_t>(s);
    if (!v) throw ParseError(line, fmt::format("expected positive integer {}, got '{}'", what, s));
    if (*v == 0) throw ParseError(line, fmt::format("{} must be at least 1", what));
    return *v;
}

inline unsigned parse_qubit(std::string_view s, std::size_t line) {
    s = trim(s);
    if (s.size() >= 2 && s.front() == 'q') {
        if (auto n = parse_int<unsigned>(s.substr(1)); n && *n < kMaxQubits) return *n;
    }
    throw ParseError(line, fmt::format("malformed qubit address '{}'", s));
}

inline QubitSet parse_qubit_set(std::string_view s, std::size_t line) {
    s = trim(s);
    if (s.size() < 2 || s.front() != '{' || s.back() != '}') {
        throw ParseError(line, fmt::format("malformed qubit set '{}'", s));
    }
    auto inner = trim(s.substr(1, s.size() - 2));
    if (inner.empty()) throw ParseError(line, "malformed qubit set: empty");
    QubitSet set;
    std::size_t start = 0;
    while (start <= inner.size()) {
        auto comma = inner.find(',', start);
        auto item = inner.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
        set.insert(parse_qubit(item, line));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return set;
}

/// `rX[imm]` base+offset memory operand.
inline std::pair<Register, std::int32_t> parse_memory(std::string_view s, std::size_t line) {
    auto open = s.find('[');
    if (open == std::string_view::npos || s.back() != ']') {
        throw ParseError(line, fmt::format("expected memory operand rX[imm], got '{}'", s));
    }
    auto base = parse_register(trim(s.substr(0, open)), line);
    auto offset = parse_imm(trim(s.substr(open + 1, s.size() - open - 2)), line);
    return {base, offset};
}

inline std::string parse_label_ref(std::string_view s, std::size_t line) {
    if (!is_identifier(s)) throw ParseError(line, fmt::format("malformed label '{}'", s));
    return std::string(s);
}

inline void expect_count(const std::vector<std::string_view>& ops, std::size_t n,
                         std::string_view mnemonic, std::size_t line) {
    if (ops.size() != n) {
        throw ParseError(line, fmt::format("'{}' expects {} operand(s), got {}", mnemonic, n, ops.size()));
    }
}

inline std::optional<ClassicalOp> lookup_classical(std::string_view m) {
    static const std::map<std::string_view, ClassicalOp> table{
        {"mov", ClassicalOp::Mov},     {"Mov", ClassicalOp::Mov},
        {"add", ClassicalOp::Add},     {"Add", ClassicalOp::Add},
        {"addi", ClassicalOp::Addi},   {"Addi", ClassicalOp::Addi},
        {"sub", ClassicalOp::Sub},     {"Sub", ClassicalOp::Sub},
        {"load", ClassicalOp::Load},   {"Load", ClassicalOp::Load},
        {"store", ClassicalOp::Store}, {"Store", ClassicalOp::Store},
        {"bne", ClassicalOp::Bne},     {"Bne", ClassicalOp::Bne},
        {"beq", ClassicalOp::Beq},     {"Beq", ClassicalOp::Beq},
        {"jump", ClassicalOp::Jump},   {"Jump", ClassicalOp::Jump},
        {"QNopReg", ClassicalOp::QNopReg},
    };
    auto it = table.find(m);
    if (it == table.end()) return std::nullopt;
    return it->second;
}

inline ClassicalInstr parse_classical(ClassicalOp op, std::string_view mnemonic,
                                      const std::vector<std::string_view>& ops, std::size_t line) {
    ClassicalInstr c;
    c.op = op;
    switch (op) {
        case ClassicalOp::Mov:
            expect_count(ops, 2, mnemonic, line);
            c.rd = parse_register(ops[0], line);
            c.imm = parse_imm(ops[1], line);
            break;
        case ClassicalOp::Add:
        case ClassicalOp::Sub:
            expect_count(ops, 3, mnemonic, line);
            c.rd = parse_register(ops[0], line);
            c.rs = parse_register(ops[1], line);
            // `add r1, r1, 1` with an immediate is accepted as addi.
            if (op == ClassicalOp::Add && !ops[2].empty() && ops[2].front() != 'r') {
                c.op = ClassicalOp::Addi;
                c.imm = parse_imm(ops[2], line);
            } else {
                c.rt = parse_register(ops[2], line);
            }
            break;
        case ClassicalOp::Addi:
            expect_count(ops, 3, mnemonic, line);
            c.rd = parse_register(ops[0], line);
            c.rs = parse_register(ops[1], line);
            c.imm = parse_imm(ops[2], line);
            break;
        case ClassicalOp::Load:
        case ClassicalOp::Store: {
            expect_count(ops, 2, mnemonic, line);
            c.rd = parse_register(ops[0], line);
            auto [base, offset] = parse_memory(ops[1], line);
            c.rs = base;
            c.imm = offset;
            break;
        }
        case ClassicalOp::Bne:
        case ClassicalOp::Beq:
            expect_count(ops, 3, mnemonic, line);
            c.rs = parse_register(ops[0], line);
            c.rt = parse_register(ops[1], line);
            c.target = parse_label_ref(ops[2], line);
            break;
        case ClassicalOp::Jump:
            expect_count(ops, 1, mnemonic, line);
            c.target = parse_label_ref(ops[0], line);
            break;
        case ClassicalOp::QNopReg:
            expect_count(ops, 1, mnemonic, line);
            c.rs = parse_register(ops[0], line);
            break;
    }
    return c;
}

inline QumisInstr parse_pulse(const std::vector<std::string_view>& ops, std::size_t line) {
    if (ops.empty() || ops.size() % 2 != 0) {
        throw ParseError(line, "'Pulse' expects (qubit-set, micro-op) pairs");
    }
    PulseInstr p;
    QubitSet seen;
    for (std::size_t i = 0; i < ops.size(); i += 2) {
        PulsePair pair{parse_qubit_set(ops[i], line), std::string(ops[i + 1])};
        if (!is_identifier(pair.op)) {
            throw ParseError(line, fmt::format("malformed micro-operation name '{}'", pair.op));
        }
        if (seen.intersects(pair.qubits)) {
            throw ParseError(line, "qubit sets within one Pulse must be disjoint");
        }
        seen = QubitSet::from_mask(seen.mask() | pair.qubits.mask());
        p.pairs.push_back(std::move(pair));
    }
    return p;
}

}  // namespace detail

/// Parses one instruction (no label, no comment). Throws ParseError.
inline Instruction parse_instruction(std::string_view text, std::size_t line,
                                     const ParseOptions& options = {}) {
    using namespace detail;
    text = trim(text);
    auto space = text.find_first_of(" \t");
    auto mnemonic = text.substr(0, space);
    auto rest = space == std::string_view::npos ? std::string_view{} : text.substr(space + 1);
    auto ops = split_operands(rest, line);

    if (auto op = lookup_classical(mnemonic)) return parse_classical(*op, mnemonic, ops, line);

    if (mnemonic == "Wait") {
        expect_count(ops, 1, mnemonic, line);
        return QumisInstr{WaitInstr{parse_positive(ops[0], line, "Wait interval")}};
    }
    if (mnemonic == "Pulse") return parse_pulse(ops, line);
    if (mnemonic == "MPG") {
        expect_count(ops, 2, mnemonic, line);
        return QumisInstr{MpgInstr{parse_qubit_set(ops[0], line), parse_positive(ops[1], line, "MPG duration")}};
    }
    if (mnemonic == "MD") {
        if (ops.size() != 1 && ops.size() != 2) {
            throw ParseError(line, fmt::format("'MD' expects 1 or 2 operands, got {}", ops.size()));
        }
        MdInstr md{parse_qubit_set(ops[0], line), std::nullopt};
        if (ops.size() == 2) md.dest = parse_register(ops[1], line);
        return QumisInstr{md};
    }
    if (options.quantum_mnemonics.contains(mnemonic)) {
        QisInstr q{std::string(mnemonic), {}};
        for (auto o : ops) q.operands.emplace_back(o);
        return q;
    }
    throw ParseError(line, fmt::format("unknown mnemonic '{}'", mnemonic));
}

inline Program parse_program(std::string_view source, const ParseOptions& options = {}) {
    using namespace detail;
    Program program;
    std::map<std::string, std::size_t> label_lines;
    std::vector<std::pair<std::string, std::size_t>> references;

    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= source.size()) {
        auto nl = source.find('\n', pos);
        auto raw = source.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? source.size() + 1 : nl + 1;
        ++line_no;

        auto text = raw.substr(0, raw.find('#'));
        text = trim(text);

        // Leading `Name:` labels.
        while (!text.empty()) {
            std::size_t i = 0;
            while (i < text.size() && is_ident_char(text[i])) ++i;
            if (i == 0 || i >= text.size() || text[i] != ':' || !is_ident_start(text[0])) break;
            std::string name(text.substr(0, i));
            if (label_lines.contains(name)) {
                throw ParseError(line_no, fmt::format("duplicate label '{}' (first defined on line {})",
                                                      name, label_lines[name]));
            }
            label_lines[name] = line_no;
            program.labels[name] = program.instructions.size();
            text = trim(text.substr(i + 1));
        }
        if (text.empty()) continue;

        auto instr = parse_instruction(text, line_no, options);
        if (const auto* c = std::get_if<ClassicalInstr>(&instr); c && !c->target.empty()) {
            references.emplace_back(c->target, line_no);
        }
        program.instructions.push_back(std::move(instr));
    }

    for (const auto& [name, line] : references) {
        if (!program.labels.contains(name)) {
            throw ParseError(line, fmt::format("undefined label '{}'", name));
        }
    }
    if (program.instructions.empty() && !options.allow_empty) {
        throw ParseError(0, "program is empty");
    }
    return program;
}

}  // namespace quma
