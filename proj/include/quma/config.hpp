#pragma once

// Configuration files: an INI file with every default pre-filled, a JSON
// lookup table (codewords and micro-operation sequences) and a `.qmp`
// microprogram file. Relative paths resolve against the INI's directory.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "quma/adi.hpp"
#include "quma/error.hpp"
#include "quma/machine.hpp"
#include "quma/microcode.hpp"

namespace quma {

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::Io, fmt::format("cannot open '{}'", path.string()));
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::Io, fmt::format("cannot write '{}'", path.string()));
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error(ErrorKind::Io, fmt::format("write to '{}' failed", path.string()));
}

// ---------------------------------------------------------------------------
// Lookup table JSON
//
// {
//   "sample_rate_gsps": 1, "resolution_bits": 12,
//   "codewords": [ {"codeword": 1, "name": "X180",
//                   "gate": {"axis_deg": 0, "angle_deg": 180},
//                   "duration_ns": 20, "envelope": "gaussian"}, ... ],
//   "micro_ops": { "Z": [[0, 1], [4, 4]], ... }
// }
//
// "gate" is either an object as above or one of "I", "CZ", "measure".
// "envelope" is "gaussian" or {"i": [...], "q": [...]}.

struct LutConfig {
    LookupTable lookup_table;
    SeqTable seq_table;
};

inline LutConfig parse_lut_json(std::string_view text) {
    using nlohmann::json;
    auto fail = [](const std::string& msg) { return Error(ErrorKind::Parse, "lookup table: " + msg); };
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw fail(e.what());
    }
    try {
        LutConfig out;
        out.lookup_table = LookupTable(doc.value("sample_rate_gsps", 1.0), doc.value("resolution_bits", 12u));
        for (const auto& e : doc.at("codewords")) {
            auto def = PulseDefinition::make(e.at("codeword").get<std::uint32_t>(), e.at("name").get<std::string>(),
                                             GateSemantics::identity(), e.value("duration_ns", 20.0));
            const auto& g = e.at("gate");
            if (g.is_string()) {
                auto s = g.get<std::string>();
                if (s == "CZ") {
                    def.gate = GateSemantics::cz();
                } else if (s == "measure") {
                    def.gate = GateSemantics::measurement();
                    def.stored = false;
                } else if (s != "I") {
                    throw fail(fmt::format("codeword {}: unknown gate '{}'", def.codeword, s));
                }
            } else {
                def.gate = GateSemantics::rotation(g.at("axis_deg").get<double>() * std::numbers::pi / 180.0,
                                                   g.at("angle_deg").get<double>() * std::numbers::pi / 180.0);
            }
            if (e.contains("envelope")) {
                const auto& env = e.at("envelope");
                if (env.is_object()) {
                    def.envelope = EnvelopeShape::Samples;
                    def.samples_i = env.at("i").get<std::vector<double>>();
                    def.samples_q = env.value("q", std::vector<double>{});
                } else if (env.get<std::string>() != "gaussian") {
                    throw fail(fmt::format("codeword {}: unknown envelope", def.codeword));
                }
            }
            def.stored = e.value("stored", def.stored);
            out.lookup_table.add(std::move(def));
        }
        for (const auto& [name, steps] : doc.at("micro_ops").items()) {
            Seq seq;
            for (const auto& s : steps) seq.push_back({s.at(0).get<std::uint32_t>(), s.at(1).get<std::uint32_t>()});
            out.seq_table.add(name, std::move(seq));
        }
        out.seq_table.validate_against(out.lookup_table);
        return out;
    } catch (const json::exception& e) {
        throw fail(e.what());
    }
}

// ---------------------------------------------------------------------------
// INI

inline constexpr std::string_view kDefaultConfigIni = R"(# quma configuration; every value shown is the built-in default.

[timing]
cycle_ns = 5
ctpg_delay_cycles = 16
md_latency_cycles = 316
queue_capacity = 4096
# fault injection: extra delay for x-axis rotation pulses
x_pulse_delay_cycles = 0

[adi]
ssb_mhz = -50
# empty means the built-in table (7 primitives, measurement, CZ)
lookup_table =
measurement_ctpg = 5
flux_ctpg = 6

[microcode]
# empty means the built-in Apply / Measure / CNOT microprograms
microprograms =

[readout]
mu0 = 0.1
mu1 = 0.9
sigma = 0
# empty means (mu0 + mu1) / 2
threshold =
window_samples = 16

[qubit]
t1_ns = 20000
ideal_init = true

[execution]
mode = expectation
seed = 0
max_steps = 1000000000
memory_words = 65536
)";

inline SimMode parse_mode(std::string_view s) {
    if (s == "sample") return SimMode::Sample;
    if (s == "expectation") return SimMode::Expectation;
    throw Error(ErrorKind::Parse, fmt::format("mode must be 'sample' or 'expectation', got '{}'", s));
}

/// Parses INI text; `base_dir` anchors relative table and microprogram paths.
inline MachineConfig parse_config(std::string_view text, const std::filesystem::path& base_dir = {}) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try {
        std::istringstream in{std::string(text)};
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ParseError(e.line(), e.message());
    }

    static const std::map<std::string, std::set<std::string>> known{
        {"timing", {"cycle_ns", "ctpg_delay_cycles", "md_latency_cycles", "queue_capacity", "x_pulse_delay_cycles"}},
        {"adi", {"ssb_mhz", "lookup_table", "measurement_ctpg", "flux_ctpg"}},
        {"microcode", {"microprograms"}},
        {"readout", {"mu0", "mu1", "sigma", "threshold", "window_samples"}},
        {"qubit", {"t1_ns", "ideal_init"}},
        {"execution", {"mode", "seed", "max_steps", "memory_words"}},
    };
    for (const auto& [section, body] : tree) {
        auto it = known.find(section);
        if (it == known.end()) throw Error(ErrorKind::Parse, fmt::format("config: unknown section [{}]", section));
        for (const auto& [key, value] : body) {
            if (!it->second.contains(key)) {
                throw Error(ErrorKind::Parse, fmt::format("config: unknown key '{}' in [{}]", key, section));
            }
        }
    }

    MachineConfig c;
    auto get = [&]<typename T>(const char* path, T fallback) -> T {
        try {
            return tree.get_child_optional(path) ? tree.get<T>(path) : fallback;
        } catch (const pt::ptree_bad_data&) {
            throw Error(ErrorKind::Parse, fmt::format("config: '{}' has a malformed value", path));
        }
    };
    auto path_of = [&](const char* key) -> std::optional<std::filesystem::path> {
        auto v = tree.get<std::string>(key, "");
        if (v.empty()) return std::nullopt;
        std::filesystem::path p(v);
        return p.is_relative() ? base_dir / p : p;
    };

    const double cycle_ns = get("timing.cycle_ns", 5.0);
    c.cycle_ps = static_cast<TimePs>(std::llround(cycle_ns * 1000.0));
    c.ctpg_delay_cycles = get("timing.ctpg_delay_cycles", c.ctpg_delay_cycles);
    c.md_latency_cycles = get("timing.md_latency_cycles", c.md_latency_cycles);
    c.queue_capacity = get("timing.queue_capacity", c.queue_capacity);
    c.x_pulse_delay_cycles = get("timing.x_pulse_delay_cycles", c.x_pulse_delay_cycles);

    c.backend.ssb_hz = get("adi.ssb_mhz", c.backend.ssb_hz / 1e6) * 1e6;
    c.measurement_ctpg = get("adi.measurement_ctpg", c.measurement_ctpg);
    c.flux_ctpg = get("adi.flux_ctpg", c.flux_ctpg);
    if (auto p = path_of("adi.lookup_table")) {
        auto lut = parse_lut_json(read_file(*p));
        c.lookup_table = std::move(lut.lookup_table);
        c.seq_table = std::move(lut.seq_table);
    }
    if (auto p = path_of("microcode.microprograms")) c.control_store = parse_microprograms(read_file(*p));

    c.backend.readout.mu0 = get("readout.mu0", c.backend.readout.mu0);
    c.backend.readout.mu1 = get("readout.mu1", c.backend.readout.mu1);
    c.backend.readout.sigma = get("readout.sigma", c.backend.readout.sigma);
    if (!tree.get<std::string>("readout.threshold", "").empty()) c.mdu_threshold = get("readout.threshold", 0.0);
    c.mdu_window = get("readout.window_samples", c.mdu_window);

    c.backend.t1_ns = get("qubit.t1_ns", c.backend.t1_ns);
    c.backend.ideal_init = get("qubit.ideal_init", c.backend.ideal_init);

    c.backend.mode = parse_mode(tree.get<std::string>("execution.mode", "expectation"));
    c.backend.seed = get("execution.seed", c.backend.seed);
    c.max_steps = get("execution.max_steps", c.max_steps);
    c.memory_words = get("execution.memory_words", c.memory_words);

    if (c.backend.readout.sigma < 0.0) throw Error(ErrorKind::Parse, "config: readout.sigma must be >= 0");
    if (!(c.backend.t1_ns > 0.0)) throw Error(ErrorKind::Parse, "config: qubit.t1_ns must be positive");
    c.validate();
    return c;
}

inline MachineConfig load_config(const std::filesystem::path& path) {
    return parse_config(read_file(path), path.parent_path());
}

}  // namespace quma
