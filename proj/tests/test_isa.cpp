#include <random>

#include <gtest/gtest.h>

#include "quma/harness.hpp"
#include "quma/isa.hpp"

using namespace quma;

namespace {

template <typename T>
const T& only_qumis(const Program& p, std::size_t i) {
    return std::get<T>(std::get<QumisInstr>(p.instructions.at(i)));
}

}  // namespace

TEST(Parse, AllXYStyleProgram) {
    auto p = parse_program(R"(
mov r15, 40000   # init interval
mov r1, 0
mov r2, 25600
Outer_Loop:
  QNopReg r15
  Pulse {q2}, I
  Wait 4
  Pulse {q2}, X180
  Wait 4
  MPG {q2}, 300
  MD {q2}
  addi r1, r1, 1
  bne r1, r2, Outer_Loop
)");
    ASSERT_EQ(p.instructions.size(), 12u);
    EXPECT_EQ(p.labels.at("Outer_Loop"), 3u);
    const auto& pulse = only_qumis<PulseInstr>(p, 4);
    ASSERT_EQ(pulse.pairs.size(), 1u);
    EXPECT_EQ(pulse.pairs[0].qubits, (QubitSet{2}));
    EXPECT_EQ(pulse.pairs[0].op, "I");
    EXPECT_EQ(only_qumis<WaitInstr>(p, 5).interval, 4u);
    EXPECT_EQ(only_qumis<MpgInstr>(p, 8).duration, 300u);
    EXPECT_FALSE(only_qumis<MdInstr>(p, 9).dest.has_value());
    const auto& bne = std::get<ClassicalInstr>(p.instructions[11]);
    EXPECT_EQ(bne.op, ClassicalOp::Bne);
    EXPECT_EQ(bne.target, "Outer_Loop");
}

TEST(Parse, MultiPairPulse) {
    auto p = parse_program("Pulse {q0}, Ym90, {q1}, CZ\n");
    const auto& pulse = only_qumis<PulseInstr>(p, 0);
    ASSERT_EQ(pulse.pairs.size(), 2u);
    EXPECT_EQ(pulse.pairs[0].op, "Ym90");
    EXPECT_EQ(pulse.pairs[1].qubits, (QubitSet{1}));
}

TEST(Parse, OverlappingPulsePairsRejected) {
    EXPECT_THROW(parse_program("Pulse {q0, q1}, X180, {q1}, Y90\n"), ParseError);
}

TEST(Parse, MdWithDestination) {
    auto p = parse_program("MD {q0}, r7\n");
    EXPECT_EQ(only_qumis<MdInstr>(p, 0).dest, Register{7});
}

TEST(Parse, QisInstructions) {
    auto p = parse_program("Measure q0, r7\nCNOT q1, q0\nApply X180, q3\n");
    const auto& m = std::get<QisInstr>(p.instructions[0]);
    EXPECT_EQ(m.mnemonic, "Measure");
    EXPECT_EQ(m.operands, (std::vector<std::string>{"q0", "r7"}));
    EXPECT_EQ(std::get<QisInstr>(p.instructions[1]).mnemonic, "CNOT");
}

TEST(Parse, ClassicalForms) {
    auto p = parse_program("Mov r1, -5\nAdd r9, r9, r7\nadd r2, r2, 3\nload r3, r4[8]\nstore r3, r4[-1]\nl:\nbeq r1, r2, l\njump l\n");
    EXPECT_EQ(std::get<ClassicalInstr>(p.instructions[0]).imm, -5);
    EXPECT_EQ(std::get<ClassicalInstr>(p.instructions[1]).op, ClassicalOp::Add);
    EXPECT_EQ(std::get<ClassicalInstr>(p.instructions[2]).op, ClassicalOp::Addi);
    const auto& ld = std::get<ClassicalInstr>(p.instructions[3]);
    EXPECT_EQ(ld.op, ClassicalOp::Load);
    EXPECT_EQ(ld.rs, Register{4});
    EXPECT_EQ(ld.imm, 8);
    EXPECT_EQ(std::get<ClassicalInstr>(p.instructions[4]).imm, -1);
}

TEST(ParseErrors, UnknownMnemonicReportsLine) {
    try {
        parse_program("mov r1, 0\n\nPlse {q0}, X180\n");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 3u);
        EXPECT_NE(std::string(e.what()).find("unknown mnemonic 'Plse'"), std::string::npos);
        EXPECT_EQ(e.kind(), ErrorKind::Parse);
    }
}

TEST(ParseErrors, Rejections) {
    EXPECT_THROW(parse_program(""), ParseError);
    EXPECT_THROW(parse_program("# only a comment\n"), ParseError);
    EXPECT_THROW(parse_program("Wait 0\n"), ParseError);
    EXPECT_THROW(parse_program("Wait -3\n"), ParseError);
    EXPECT_THROW(parse_program("MPG {q0}, 0\n"), ParseError);
    EXPECT_THROW(parse_program("mov r16, 1\n"), ParseError);
    EXPECT_THROW(parse_program("bne r1, r2, nowhere\n"), ParseError);
    EXPECT_THROW(parse_program("a:\na:\nWait 1\n"), ParseError);
    EXPECT_THROW(parse_program("Pulse {q64}, X180\n"), ParseError);
    EXPECT_THROW(parse_program("Pulse {q0} X180\n"), ParseError);
    EXPECT_THROW(parse_program("mov r1\n"), ParseError);
}

TEST(ParseErrors, QisMnemonicsFollowControlStore) {
    ParseOptions opts;
    opts.quantum_mnemonics = {"Foo"};
    EXPECT_NO_THROW(parse_program("Foo q0\n", opts));
    EXPECT_THROW(parse_program("CNOT q0, q1\n", opts), ParseError);
}

TEST(RoundTrip, AllXYProgram) {
    AllXYSpec spec;
    auto p = generate_allxy_program(spec);
    EXPECT_EQ(parse_program(disassemble(p)), p);
}

TEST(RoundTrip, DisassemblyIsCanonical) {
    auto p = parse_program("  mov r1 , 3 # c\nL:   Pulse {q1,q0},X90\nWait 2\nbne r1,r0,L\n");
    auto text = disassemble(p);
    EXPECT_EQ(text, "mov r1, 3\nL:\nPulse {q0, q1}, X90\nWait 2\nbne r1, r0, L\n");
    EXPECT_EQ(disassemble(parse_program(text)), text);
}

TEST(RoundTrip, RandomPrograms) {
    std::mt19937 rng(1234);
    const std::vector<std::string> ops{"I", "X180", "X90", "Y90", "Ym90", "CZ", "Z"};
    for (int trial = 0; trial < 200; ++trial) {
        std::string src = "top:\n";
        int n = 1 + static_cast<int>(rng() % 20);
        for (int i = 0; i < n; ++i) {
            switch (rng() % 9) {
                case 0: src += fmt::format("Wait {}\n", 1 + rng() % 50000); break;
                case 1: src += fmt::format("Pulse {{q{}}}, {}\n", rng() % 8, ops[rng() % ops.size()]); break;
                case 2: src += fmt::format("Pulse {{q0}}, X90, {{q{}, q{}}}, CZ\n", 1 + rng() % 3, 4 + rng() % 3); break;
                case 3: src += fmt::format("MPG {{q{}}}, {}\n", rng() % 4, 1 + rng() % 400); break;
                case 4: src += fmt::format("MD {{q{}}}, r{}\n", rng() % 4, rng() % 16); break;
                case 5: src += fmt::format("addi r{}, r{}, {}\n", rng() % 16, rng() % 16, static_cast<int>(rng() % 200) - 100); break;
                case 6: src += fmt::format("bne r{}, r{}, top\n", rng() % 16, rng() % 16); break;
                case 7: src += fmt::format("store r{}, r{}[{}]\n", rng() % 16, rng() % 16, rng() % 100); break;
                default: src += fmt::format("QNopReg r{}\n", rng() % 16); break;
            }
        }
        auto p = parse_program(src);
        EXPECT_EQ(parse_program(disassemble(p)), p) << src;
    }
}

TEST(QubitSetType, SortedAndDeduplicated) {
    QubitSet s{3, 1, 3};
    EXPECT_EQ(s.size(), 2u);
    EXPECT_EQ(s.members(), (std::vector<unsigned>{1, 3}));
    EXPECT_EQ(to_string(s), "{q1, q3}");
    EXPECT_TRUE(s.intersects(QubitSet{3}));
    EXPECT_FALSE(s.intersects(QubitSet{2}));
}
