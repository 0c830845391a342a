#include <algorithm>
#include <random>

#include <gtest/gtest.h>

#include "quma/harness.hpp"

using namespace quma;

namespace {

MachineConfig exact_config() {
    MachineConfig c;
    c.backend.mode = SimMode::Expectation;
    c.backend.t1_ns = std::numeric_limits<double>::infinity();
    return c;
}

AllXYSpec small_spec(std::uint32_t rounds) {
    AllXYSpec s;
    s.rounds = rounds;
    return s;
}

std::size_t count_lines_starting(const std::string& text, std::string_view prefix) {
    std::size_t n = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto end = text.find('\n', pos);
        if (end == std::string::npos) end = text.size();
        if (std::string_view(text).substr(pos, end - pos).starts_with(prefix)) ++n;
        pos = end + 1;
    }
    return n;
}

}  // namespace

TEST(AllXY, TableAndLabels) {
    EXPECT_EQ(kAllXYCombinations, 21u);
    EXPECT_EQ(combination_label(0), "II");
    EXPECT_EQ(combination_label(3), "XY");
    EXPECT_EQ(combination_label(7), "xy");
    EXPECT_EQ(combination_label(8), "xy");
    EXPECT_EQ(combination_label(20), "yy");
    EXPECT_EQ(micro_op_name(kAllXYPairs[5][0]), "X90");
    EXPECT_EQ(micro_op_name(kAllXYPairs[2][1]), "Y180");
}

TEST(AllXY, AlgebraGivesStaircase) {
    for (std::size_t c = 0; c < kAllXYCombinations; ++c) {
        EXPECT_NEAR(ideal_population(c), ideal_staircase(c), 1e-12) << combination_label(c);
    }
}

TEST(AllXY, ProgramStructure) {
    AllXYSpec spec;
    auto src = allxy_source(spec);
    EXPECT_EQ(count_lines_starting(src, "MPG"), 42u);
    EXPECT_EQ(count_lines_starting(src, "MD"), 42u);
    EXPECT_EQ(count_lines_starting(src, "QNopReg r15"), 42u);
    EXPECT_EQ(count_lines_starting(src, "Pulse {q2}"), 84u);
    EXPECT_NE(src.find("mov r2, 25600"), std::string::npos);
    EXPECT_NO_THROW(generate_allxy_program(spec));

    AllXYSpec one;
    one.repetitions = 1;
    one.rounds = 1;
    auto s1 = allxy_source(one);
    EXPECT_EQ(count_lines_starting(s1, "MPG"), 21u);
    EXPECT_NE(s1.find("mov r2, 1 "), std::string::npos);
}

TEST(AllXY, SpecValidation) {
    AllXYSpec s;
    s.repetitions = 0;
    EXPECT_THROW(s.validate(), Error);
    s = {};
    s.rounds = 0;
    EXPECT_THROW(s.validate(), Error);
}

TEST(Collector, Averages) {
    DataCollector dc(2, 2);
    dc.collect(0, 0.1);
    dc.collect(1, 0.9);
    EXPECT_FALSE(dc.complete());
    EXPECT_THROW(dc.average(0), Error);
    dc.collect(0, 0.3);
    dc.collect(1, 0.7);
    EXPECT_DOUBLE_EQ(dc.average(0), 0.2);
    EXPECT_DOUBLE_EQ(dc.average(1), 0.8);
    EXPECT_THROW(dc.collect(0, 1.0), Error);
    EXPECT_THROW(dc.collect(2, 1.0), Error);
}

TEST(Collector, ConstantInputs) {
    DataCollector dc(1, 25600);
    for (int i = 0; i < 25600; ++i) dc.collect(0, 0.1);
    EXPECT_NEAR(dc.average(0), 0.1, 1e-15);
}

TEST(Collector, OrderAndPartitionInvariant) {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> n(0.0, 1e3);
    std::vector<double> values(1000);
    for (auto& v : values) v = n(rng) * std::pow(10.0, static_cast<int>(rng() % 12) - 6);
    DataCollector a(1, values.size());
    for (double v : values) a.collect(0, v);
    std::shuffle(values.begin(), values.end(), rng);
    DataCollector b(1, values.size());
    DataCollector c(1, values.size());
    for (std::size_t i = 0; i < values.size(); ++i) (i % 3 == 0 ? b : c).collect(0, values[i]);
    c.merge(b);
    EXPECT_EQ(a.average(0), c.average(0));
}

TEST(ExactSum, Cancellation) {
    ExactSum s;
    for (double v : {1e100, 1.0, -1e100, 1e-100}) s.add(v);
    EXPECT_EQ(s.value(), 1.0);
}

TEST(Fidelity, RescaleEndpoints) {
    std::vector<double> avg(42, 0.5);
    for (int r = 0; r < 2; ++r) {
        avg[0 + r] = 0.1;
        avg[36 + r] = 0.9;
        avg[38 + r] = 0.9;
    }
    auto f = rescale_fidelity(avg, 2);
    EXPECT_DOUBLE_EQ(f[0], 0.0);
    EXPECT_DOUBLE_EQ(f[37], 1.0);
    EXPECT_DOUBLE_EQ(f[10], 0.5);
}

TEST(Fidelity, DegenerateCalibrationFaults) {
    std::vector<double> avg(42, 0.4);
    EXPECT_THROW(rescale_fidelity(avg, 2), Error);
    EXPECT_THROW(rescale_fidelity(std::vector<double>(41, 0.0), 2), Error);
}

TEST(Experiment, ExactStaircase) {
    auto rec = run_experiment(small_spec(4), exact_config());
    ASSERT_EQ(rec.fidelities.size(), 42u);
    for (std::size_t i = 0; i < rec.fidelities.size(); ++i) {
        EXPECT_NEAR(rec.fidelities[i], ideal_staircase(i / 2), 1e-9) << i;
    }
}

TEST(Experiment, AffineReadoutInvariance) {
    auto base = run_experiment(small_spec(2), exact_config());
    auto cfg = exact_config();
    cfg.backend.readout = {-3.0, 5.0, 0.0};
    auto moved = run_experiment(small_spec(2), cfg);
    for (std::size_t i = 0; i < base.fidelities.size(); ++i) {
        EXPECT_NEAR(moved.fidelities[i], base.fidelities[i], 1e-12);
    }
}

TEST(Experiment, DecayLowersExcitedLevels) {
    auto cfg = exact_config();
    cfg.backend.t1_ns = 20000.0;
    auto rec = run_experiment(small_spec(2), cfg);
    for (std::size_t i = 0; i < 42; ++i) EXPECT_NEAR(rec.fidelities[i], ideal_staircase(i / 2), 0.05) << i;
}

TEST(Experiment, ParallelEqualsSerial) {
    auto cfg = exact_config();
    cfg.backend.mode = SimMode::Sample;
    cfg.backend.t1_ns = 20000.0;
    cfg.backend.readout.sigma = 0.05;
    cfg.backend.seed = 17;
    auto serial = run_experiment(small_spec(12), cfg, 1);
    auto parallel = run_experiment(small_spec(12), cfg, 4);
    EXPECT_EQ(results_csv(serial), results_csv(parallel));
    EXPECT_EQ(serial.final_cycle, parallel.final_cycle);
}

TEST(Experiment, SeedReproducibility) {
    auto cfg = exact_config();
    cfg.backend.mode = SimMode::Sample;
    cfg.backend.seed = 5;
    auto a = results_csv(run_experiment(small_spec(8), cfg));
    auto b = results_csv(run_experiment(small_spec(8), cfg));
    EXPECT_EQ(a, b);
    cfg.backend.seed = 6;
    EXPECT_NE(a, results_csv(run_experiment(small_spec(8), cfg)));
}

TEST(Experiment, TraceNeedsSerialRun) {
    VectorTraceSink sink;
    EXPECT_THROW(run_experiment(small_spec(2), exact_config(), 2, &sink), Error);
}

TEST(Experiment, ConfigHashTracksChanges) {
    auto a = exact_config();
    auto b = exact_config();
    EXPECT_EQ(config_hash(a), config_hash(b));
    b.backend.ssb_hz = 50e6;
    EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(Output, CsvAndSvg) {
    auto rec = run_experiment(small_spec(1), exact_config());
    auto csv = results_csv(rec);
    EXPECT_TRUE(csv.starts_with("# seed=0 mode=expectation config_hash="));
    EXPECT_NE(csv.find("slot,label,S_avg,F\n"), std::string::npos);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 44);
    auto svg = fidelity_svg(rec);
    EXPECT_TRUE(svg.starts_with("<svg"));
    EXPECT_NE(svg.find("</svg>"), std::string::npos);
}
