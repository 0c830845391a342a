// quma: assemble, run and analyse QuMIS programs on the simulated control stack.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "quma/config.hpp"
#include "quma/harness.hpp"
#include "quma/machine.hpp"

namespace {

using namespace quma;

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string mode;
};

MachineConfig load(const Common& c) {
    MachineConfig cfg = c.config.empty() ? parse_config(kDefaultConfigIni) : load_config(c.config);
    if (c.seed) cfg.backend.seed = *c.seed;
    if (!c.mode.empty()) cfg.backend.mode = parse_mode(c.mode);
    return cfg;
}

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("-c,--config", c.config, "INI configuration file")->check(CLI::ExistingFile);
    cmd->add_option("--seed", c.seed, "random seed");
    cmd->add_option("--mode", c.mode, "sample or expectation")->check(CLI::IsMember({"sample", "expectation"}));
}

/// Writes to `path`, or stdout when the path is "-".
void emit(const std::string& path, std::string_view text) {
    if (path == "-") {
        std::cout << text;
        std::cout.flush();
        if (!std::cout) throw Error(ErrorKind::Io, "write to stdout failed");
    } else {
        write_file(path, text);
    }
}

std::uint32_t cycles_from_ns(double ns, TimePs cycle_ps) {
    const double cycles = ns * 1000.0 / static_cast<double>(cycle_ps);
    if (ns < 0 || std::abs(cycles - std::round(cycles)) > 1e-9) {
        throw Error(ErrorKind::Parse, fmt::format("shift of {} ns is not a whole number of cycles", ns));
    }
    return static_cast<std::uint32_t>(std::llround(cycles));
}

double parse_ns(std::string text) {
    if (text.ends_with("ns")) text.resize(text.size() - 2);
    try {
        std::size_t used = 0;
        double v = std::stod(text, &used);
        if (used != text.size()) throw std::invalid_argument(text);
        return v;
    } catch (const std::exception&) {
        throw Error(ErrorKind::Parse, fmt::format("malformed duration '{}'", text));
    }
}

std::string register_dump(const RunResult& r) {
    std::string out = fmt::format("# final_cycle={} steps={} fired={} stranded={}\n", r.final_cycle, r.state.steps,
                                  r.fired_events, r.stranded.size());
    for (std::size_t i = 0; i < kRegisterCount; ++i) {
        out += fmt::format("r{} = {}\n", i, r.state.registers.values()[i]);
    }
    const auto& words = r.state.memory.words();
    for (std::size_t a = 0; a < words.size(); ++a) {
        if (words[a] != 0) out += fmt::format("mem[{}] = {}\n", a, words[a]);
    }
    return out;
}

int cmd_assemble(const std::string& input, const std::string& output, const std::string& microprograms) {
    auto store = microprograms.empty() ? default_control_store() : parse_microprograms(read_file(microprograms));
    auto program = parse_program(read_file(input), store.parse_options());
    emit(output, disassemble(program));
    return 0;
}

struct RunArgs {
    Common common;
    std::string program;
    std::string trace;
    std::string results;
    std::string dump;
    std::optional<std::uint64_t> max_steps;
    std::size_t slots = kAllXYCombinations * 2;
    std::optional<std::uint64_t> throttle;
};

int cmd_run(const RunArgs& a) {
    auto cfg = load(a.common);
    if (a.max_steps) cfg.max_steps = *a.max_steps;
    if (a.throttle) cfg.throttle_ticks = *a.throttle;
    auto program = parse_program(read_file(a.program), cfg.control_store.parse_options());

    std::optional<std::ofstream> trace_file;
    std::optional<StreamTraceSink> sink;
    if (!a.trace.empty()) {
        trace_file.emplace(a.trace, std::ios::binary);
        if (!*trace_file) throw Error(ErrorKind::Io, fmt::format("cannot write '{}'", a.trace));
        sink.emplace(*trace_file);
    }
    std::vector<MeasurementRecord> results;
    Machine m(cfg, sink ? &*sink : nullptr, [&](const MeasurementRecord& r) { results.push_back(r); });
    auto r = m.run(program);
    if (trace_file) {
        trace_file->flush();
        if (!*trace_file) throw Error(ErrorKind::Io, fmt::format("write to '{}' failed", a.trace));
    }

    if (!a.results.empty()) {
        if (a.slots == 0 || results.empty() || results.size() % a.slots != 0) {
            throw runtime_fault("collector", fmt::format("{} results do not fill {} slots evenly", results.size(),
                                                         a.slots));
        }
        ExperimentRecord rec;
        rec.spec.repetitions = static_cast<unsigned>(a.slots / kAllXYCombinations);
        rec.spec.rounds = static_cast<std::uint32_t>(results.size() / a.slots);
        rec.seed = cfg.backend.seed;
        rec.mode = cfg.backend.mode;
        rec.config_hash = config_hash(cfg);
        DataCollector dc(a.slots, rec.spec.rounds);
        for (const auto& x : results) dc.collect(x.index % a.slots, x.integral);
        rec.averages = dc.averages();
        if (a.slots % kAllXYCombinations == 0) {
            rec.fidelities = rescale_fidelity(rec.averages, rec.spec.repetitions);
            emit(a.results, results_csv(rec));
        } else {
            std::string out = fmt::format("# seed={} mode={} config_hash={:016x} rounds={}\nslot,S_avg\n", rec.seed,
                                          to_string(rec.mode), rec.config_hash, rec.spec.rounds);
            for (std::size_t i = 0; i < rec.averages.size(); ++i) out += fmt::format("{},{}\n", i, rec.averages[i]);
            emit(a.results, out);
        }
    }
    if (!a.dump.empty()) emit(a.dump, register_dump(r));
    std::cerr << fmt::format("halted at T_D={} after {} steps, {} events fired, {} results\n", r.final_cycle,
                             r.state.steps, r.fired_events, results.size());
    if (!r.stranded.empty()) {
        std::cerr << fmt::format("warning: {} events never fired\n", r.stranded.size());
    }
    return 0;
}

struct AllXYArgs {
    Common common;
    AllXYSpec spec;
    std::optional<double> noise;
    std::optional<double> t1;
    std::optional<double> ssb_mhz;
    std::string ssb_shift;
    unsigned threads = 1;
    std::string plot;
    std::string results = "-";
    std::string trace;
    std::string program_out;
};

int cmd_allxy(const AllXYArgs& a) {
    auto cfg = load(a.common);
    if (a.noise) {
        if (*a.noise < 0) throw Error(ErrorKind::Parse, "noise must be >= 0");
        cfg.backend.readout.sigma = *a.noise;
    }
    if (a.t1) cfg.backend.t1_ns = *a.t1;
    if (a.ssb_mhz) cfg.backend.ssb_hz = *a.ssb_mhz * 1e6;
    if (!a.ssb_shift.empty()) cfg.x_pulse_delay_cycles = cycles_from_ns(parse_ns(a.ssb_shift), cfg.cycle_ps);
    cfg.validate();

    if (!a.program_out.empty()) emit(a.program_out, allxy_source(a.spec));

    std::optional<std::ofstream> trace_file;
    std::optional<StreamTraceSink> sink;
    if (!a.trace.empty()) {
        trace_file.emplace(a.trace, std::ios::binary);
        if (!*trace_file) throw Error(ErrorKind::Io, fmt::format("cannot write '{}'", a.trace));
        sink.emplace(*trace_file);
    }
    auto rec = run_experiment(a.spec, cfg, a.threads, sink ? &*sink : nullptr);
    if (trace_file) {
        trace_file->flush();
        if (!*trace_file) throw Error(ErrorKind::Io, fmt::format("write to '{}' failed", a.trace));
    }
    emit(a.results, results_csv(rec));
    if (!a.plot.empty()) emit(a.plot, fidelity_svg(rec));
    return 0;
}

int cmd_lut_report(const Common& c) {
    auto cfg = load(c);
    const auto& lut = cfg.lookup_table;
    std::cout << fmt::format("# sample rate {} GS/s, {}-bit\n", lut.sample_rate_gsps(), lut.resolution_bits());
    std::cout << "codeword,name,duration_ns,stored,samples,bytes\n";
    std::size_t primitive_samples = 0;
    for (const auto& [cw, def] : lut.entries()) {
        const auto n = def.stored ? lut.samples_for(def) : 0;
        std::cout << fmt::format("{},{},{},{},{},{}\n", cw, def.name, def.duration_ns, def.stored ? "yes" : "no", n,
                                 static_cast<double>(n) * lut.resolution_bits() / 8.0);
        if (def.stored && (def.gate.kind == GateKind::Rotation || def.gate.kind == GateKind::Identity)) {
            primitive_samples += n;
        }
    }
    std::cout << fmt::format("total,{} bytes\n", lut.footprint_bytes());
    std::cout << fmt::format("single-qubit primitives,{} bytes\n",
                             static_cast<double>(primitive_samples) * lut.resolution_bits() / 8.0);
    std::cout << fmt::format("per-combination baseline (21 x 2 pulses of 20 ns),{} bytes\n",
                             combined_waveform_bytes(kAllXYCombinations, 2, 20.0, lut.sample_rate_gsps(),
                                                     lut.resolution_bits()));
    return 0;
}

int cmd_waveform(const Common& c, std::uint32_t codeword, double start_ns, std::optional<double> ssb_mhz,
                 const std::string& output) {
    auto cfg = load(c);
    const double ssb = ssb_mhz ? *ssb_mhz * 1e6 : cfg.backend.ssb_hz;
    std::string out = "time_ns,I,Q\n";
    for (const auto& s : render_waveform(cfg.lookup_table, codeword, start_ns, ssb)) {
        out += fmt::format("{},{},{}\n", s.time_ns, s.i, s.q);
    }
    emit(output, out);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cycle-level simulator of a queue-timed quantum control microarchitecture"};
    app.require_subcommand(1);

    std::string asm_in;
    std::string asm_out = "-";
    std::string asm_qmp;
    auto* assemble = app.add_subcommand("assemble", "parse a .qumis file and write its canonical form");
    assemble->add_option("input", asm_in, "source file")->required();
    assemble->add_option("-o,--output", asm_out, "output path, - for stdout");
    assemble->add_option("--microprograms", asm_qmp, "microprogram (.qmp) file")->check(CLI::ExistingFile);

    RunArgs run_args;
    auto* run = app.add_subcommand("run", "execute a program through the full pipeline");
    run->add_option("program", run_args.program, "program file")->required();
    add_common(run, run_args.common);
    run->add_option("--trace", run_args.trace, "JSON Lines event trace");
    run->add_option("--results", run_args.results, "averaged results CSV, - for stdout");
    run->add_option("--dump", run_args.dump, "final register and memory dump, - for stdout");
    run->add_option("--max-steps", run_args.max_steps, "instruction budget");
    run->add_option("--slots", run_args.slots, "measurement slots per round (K)");
    run->add_option("--throttle", run_args.throttle, "producer issues one instruction per this many cycles");

    AllXYArgs ax;
    auto* allxy = app.add_subcommand("allxy", "generate, run and analyse the AllXY experiment");
    add_common(allxy, ax.common);
    allxy->add_option("--rounds", ax.spec.rounds, "rounds N");
    allxy->add_option("--reps", ax.spec.repetitions, "repetitions of each combination per round");
    allxy->add_option("--qubit", ax.spec.qubit, "qubit address");
    allxy->add_option("--noise", ax.noise, "readout noise sigma");
    allxy->add_option("--t1", ax.t1, "T1 in ns");
    allxy->add_option("--ssb", ax.ssb_mhz, "single-sideband frequency in MHz");
    allxy->add_option("--ssb-shift", ax.ssb_shift, "delay x-rotation pulses, e.g. 5ns");
    allxy->add_option("--threads", ax.threads, "replay rounds on this many threads");
    allxy->add_option("--plot", ax.plot, "SVG plot of F per slot");
    allxy->add_option("--results", ax.results, "results CSV, - for stdout");
    allxy->add_option("--trace", ax.trace, "JSON Lines event trace");
    allxy->add_option("--program", ax.program_out, "also write the generated .qumis program");

    Common lut_common;
    auto* lut = app.add_subcommand("lut-report", "lookup-table memory footprint");
    add_common(lut, lut_common);

    Common wf_common;
    std::uint32_t wf_cw = 1;
    double wf_start = 0.0;
    std::optional<double> wf_ssb;
    std::string wf_out = "-";
    auto* wf = app.add_subcommand("waveform", "render one codeword's I/Q samples as CSV");
    add_common(wf, wf_common);
    wf->add_option("codeword", wf_cw, "codeword")->required();
    wf->add_option("--start-ns", wf_start, "pulse start time");
    wf->add_option("--ssb", wf_ssb, "single-sideband frequency in MHz");
    wf->add_option("-o,--output", wf_out, "output path, - for stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : exit_code(ErrorKind::Parse);
    }

    try {
        if (*assemble) return cmd_assemble(asm_in, asm_out, asm_qmp);
        if (*run) return cmd_run(run_args);
        if (*allxy) return cmd_allxy(ax);
        if (*lut) return cmd_lut_report(lut_common);
        if (*wf) return cmd_waveform(wf_common, wf_cw, wf_start, wf_ssb, wf_out);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code(ErrorKind::Runtime);
    }
    return 0;
}
