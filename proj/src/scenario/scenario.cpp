#include "wpt/scenario/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <regex>
#include <sstream>

namespace wpt::scenario {

using circuit::Coil;
using circuit::CoupledCoilSet;
using circuit::FixedCap;
using circuit::SwitchedCapBranch;
using circuit::SwitchTopology;

double Scenario::default_r(double l_h) {
    return 2.0 * std::numbers::pi * 85e3 * l_h / 100.0;
}

int Scenario::controlled_receiver() const {
    for (std::size_t k = 0; k < receivers.size(); ++k)
        if (receivers[k].controller != ControllerKind::None) return static_cast<int>(k);
    return -1;
}

std::vector<std::string> Scenario::receiver_names() const {
    std::vector<std::string> names;
    names.reserve(receivers.size());
    for (const auto& r : receivers) names.push_back(r.name);
    return names;
}

circuit::SimSystem Scenario::build_system() const {
    std::vector<Coil> rx_coils;
    rx_coils.reserve(receivers.size());
    for (const auto& r : receivers)
        rx_coils.push_back({r.l_h, r.r_ohm >= 0.0 ? r.r_ohm : default_r(r.l_h)});
    std::optional<Coil> aux = auxiliary;
    CoupledCoilSet coils({tx_l_h, tx_r_ohm >= 0.0 ? tx_r_ohm : default_r(tx_l_h)}, rx_coils, aux);
    for (std::size_t k = 0; k < receivers.size(); ++k) {
        const auto& r = receivers[k];
        coils.set_mutual(coils.transmitter_index(), coils.receiver_index(static_cast<int>(k)),
                         r.m_tx_h);
        if (aux) {
            coils.set_mutual(coils.receiver_index(static_cast<int>(k)), *coils.auxiliary_index(),
                             r.m_aux_h);
        }
        for (const auto& [peer, m] : r.m_peers) {
            if (peer < 0 || peer >= static_cast<int>(receivers.size()))
                throw ValidationError("receiver " + r.name + ": peer mutual index out of range");
            if (peer != static_cast<int>(k))
                coils.set_mutual(coils.receiver_index(static_cast<int>(k)),
                                 coils.receiver_index(peer), m);
        }
    }
    if (aux) coils.set_mutual(coils.transmitter_index(), *coils.auxiliary_index(), aux_m_tx_h);

    std::vector<circuit::Compensation> comps;
    std::vector<circuit::LoadModel> loads;
    for (const auto& r : receivers) {
        comps.push_back(r.compensation);
        loads.push_back(r.load);
    }
    return circuit::build_system(std::move(coils), std::move(comps), std::move(loads), source);
}

std::vector<ctrl::HopSegment> Scenario::hop_program() const {
    if (!hops.empty()) return hops;
    if (const auto* ic = std::get_if<circuit::IdealCurrentSource>(&source))
        return {{0.0, ic->frequency_hz, ic->amplitude_a}};
    const auto& vd = std::get<circuit::VoltageDrivenSource>(source);
    return {{0.0, vd.frequency_hz, vd.amplitude_v}};
}

ctrl::RunOptions Scenario::run_options() const {
    ctrl::RunOptions opts;
    opts.solver.step_divisor = step_divisor;
    opts.seed = seed;
    opts.noise_amplitude_v = noise_v;
    const int rx = controlled_receiver();
    if (rx >= 0 && receivers[static_cast<std::size_t>(rx)].controller == ControllerKind::CoarseOnly)
        opts.coarse_only = true;
    return opts;
}

namespace {

struct RawEntry {
    std::string value;
    std::size_t line = 0;
    bool used = false;
};

class KeyTable {
public:
    KeyTable(std::map<std::string, RawEntry> entries, std::string origin)
        : entries_(std::move(entries)), origin_(std::move(origin)) {}

    bool has(const std::string& key) const { return entries_.count(key) > 0; }

    std::optional<std::string> get_string(const std::string& key) {
        auto it = entries_.find(key);
        if (it == entries_.end()) return std::nullopt;
        it->second.used = true;
        return it->second.value;
    }

    std::optional<double> get_double(const std::string& key) {
        auto s = get_string(key);
        if (!s) return std::nullopt;
        try {
            std::size_t pos = 0;
            const double v = std::stod(*s, &pos);
            while (pos < s->size() && std::isspace(static_cast<unsigned char>((*s)[pos]))) ++pos;
            if (pos != s->size()) throw std::invalid_argument("trailing characters");
            return v;
        } catch (const std::exception&) {
            throw ParseError(origin_ + ":" + std::to_string(entries_.at(key).line) +
                             ": key '" + key + "' has a non-numeric value '" + *s + "'");
        }
    }

    double need_double(const std::string& key) {
        auto v = get_double(key);
        if (!v) throw ParseError(origin_ + ": missing required key '" + key + "'");
        return *v;
    }

    void reject_unused() const {
        for (const auto& [key, e] : entries_) {
            if (!e.used)
                throw ParseError(origin_ + ":" + std::to_string(e.line) + ": unknown key '" +
                                 key + "'");
        }
    }

    int max_index(const std::string& prefix) const {
        const std::regex re("^" + prefix + "\\[(\\d+)\\]\\..*$");
        int max_idx = -1;
        for (const auto& [key, e] : entries_) {
            std::smatch m;
            if (std::regex_match(key, m, re)) max_idx = std::max(max_idx, std::stoi(m[1]));
        }
        return max_idx;
    }

    const std::string& origin() const { return origin_; }

private:
    std::map<std::string, RawEntry> entries_;
    std::string origin_;
};

std::map<std::string, RawEntry> tokenize(const std::string& text, const std::string& origin) {
    std::map<std::string, RawEntry> entries;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto pos = line.find('#'); pos != std::string::npos) line.erase(pos);
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t\r");
            if (a == std::string::npos) return std::string();
            const auto b = s.find_last_not_of(" \t\r");
            return s.substr(a, b - a + 1);
        };
        const std::string t = trim(line);
        if (t.empty()) continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ParseError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        if (key.empty())
            throw ParseError(origin + ":" + std::to_string(lineno) + ": empty key");
        if (entries.count(key))
            throw ParseError(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key +
                             "'");
        entries[key] = {value, lineno, false};
    }
    if (entries.empty()) throw ParseError(origin + ": empty scenario file");
    return entries;
}

SwitchTopology parse_topology(const std::string& s, const std::string& origin) {
    if (s == "single_transistor") return SwitchTopology::SingleTransistorWithBodyDiode;
    if (s == "back_to_back") return SwitchTopology::BackToBackPair;
    if (s == "transistor_diode_pair") return SwitchTopology::TransistorDiodePair;
    throw ParseError(origin + ": unknown topology '" + s +
                     "' (single_transistor | back_to_back | transistor_diode_pair)");
}

ControllerKind parse_controller(const std::string& s, const std::string& origin) {
    if (s == "none") return ControllerKind::None;
    if (s == "time_counting") return ControllerKind::TimeCounting;
    if (s == "coarse_only") return ControllerKind::CoarseOnly;
    if (s == "voltage_comparison") return ControllerKind::VoltageComparison;
    throw ParseError(origin + ": unknown controller '" + s +
                     "' (none | time_counting | coarse_only | voltage_comparison)");
}

}  // namespace

Scenario parse_scenario(const std::string& text, const std::string& origin) {
    KeyTable keys(tokenize(text, origin), origin);
    Scenario sc;

    // source
    const std::string src_type = keys.get_string("source.type").value_or("ideal_current");
    const double amplitude = keys.get_double("source.amplitude").value_or(3.4);
    const double f0 = keys.get_double("source.frequency_hz").value_or(79e3);
    const double phase = keys.get_double("source.phase_rad").value_or(0.0);
    if (src_type == "ideal_current") {
        sc.source = circuit::IdealCurrentSource{amplitude, f0, phase};
    } else if (src_type == "voltage_driven") {
        circuit::VoltageDrivenSource vd;
        vd.amplitude_v = amplitude;
        vd.frequency_hz = f0;
        vd.phase_rad = phase;
        vd.r_internal_ohm = keys.get_double("source.r_internal_ohm").value_or(1.0);
        vd.c_series_f = keys.get_double("source.c_series_f").value_or(0.0);
        sc.source = vd;
    } else {
        throw ParseError(origin + ": unknown source.type '" + src_type +
                         "' (ideal_current | voltage_driven)");
    }
    // consume voltage-only keys when ideal (they are unknown keys then)
    if (src_type == "ideal_current" &&
        (keys.has("source.r_internal_ohm") || keys.has("source.c_series_f")))
        throw ParseError(origin + ": source.r_internal_ohm/c_series_f require voltage_driven");

    // coils
    sc.tx_l_h = keys.get_double("coils.transmitter.l_h").value_or(150e-6);
    sc.tx_r_ohm = keys.get_double("coils.transmitter.r_ohm").value_or(-1.0);
    if (keys.has("coils.auxiliary.l_h")) {
        Coil aux;
        aux.l_h = keys.need_double("coils.auxiliary.l_h");
        aux.r_ohm = keys.get_double("coils.auxiliary.r_ohm")
                        .value_or(Scenario::default_r(aux.l_h));
        sc.auxiliary = aux;
        sc.aux_m_tx_h = keys.get_double("coils.auxiliary.m_tx_h").value_or(3e-6);
    }

    // receivers
    const int n_rx = keys.max_index("receivers") + 1;
    if (n_rx <= 0) throw ValidationError(origin + ": scenario declares no receivers");
    for (int k = 0; k < n_rx; ++k) {
        const std::string p = "receivers[" + std::to_string(k) + "].";
        ReceiverSpec r;
        r.name = keys.get_string(p + "name").value_or("receiver_" + std::to_string(k));
        r.l_h = keys.get_double(p + "l_h").value_or(80e-6);
        r.r_ohm = keys.get_double(p + "r_ohm").value_or(-1.0);
        r.m_tx_h = keys.get_double(p + "m_tx_h").value_or(15e-6);
        r.m_aux_h = keys.get_double(p + "m_aux_h").value_or(0.0);
        for (int j = 0; j < n_rx; ++j) {
            if (auto m = keys.get_double(p + "m_rx" + std::to_string(j) + "_h"))
                r.m_peers.emplace_back(j, *m);
        }

        const std::string comp = keys.get_string(p + "compensation").value_or("fixed");
        if (comp == "fixed") {
            r.compensation = FixedCap{keys.get_double(p + "c_f").value_or(50.73e-9)};
        } else if (comp == "switched") {
            SwitchedCapBranch br;
            br.c1_f = keys.get_double(p + "c1_f").value_or(10e-9);
            br.c2_f = keys.get_double(p + "c2_f").value_or(44e-9);
            br.topology = parse_topology(
                keys.get_string(p + "topology").value_or("transistor_diode_pair"), origin);
            br.leak_conductance_s = keys.get_double(p + "leak_conductance_s").value_or(0.0);
            br.forward_drop_v = keys.get_double(p + "forward_drop_v").value_or(0.0);
            r.compensation = br;
        } else {
            throw ParseError(origin + ": unknown compensation '" + comp +
                             "' (fixed | switched)");
        }

        const std::string load = keys.get_string(p + "load").value_or("resistor");
        if (load == "resistor") {
            r.load = circuit::ResistorLoad{keys.get_double(p + "load_r_ohm").value_or(25.0)};
        } else if (load == "rectifier_rc") {
            circuit::RectifierRCLoad rc;
            rc.r_ohm = keys.get_double(p + "load_r_ohm").value_or(25.0);
            rc.c_f = keys.get_double(p + "load_c_f").value_or(10e-6);
            rc.diode_drop_v = keys.get_double(p + "load_diode_drop_v").value_or(0.0);
            r.load = rc;
        } else if (load == "rectifier_battery") {
            circuit::RectifierBatteryLoad b;
            b.v_bat = keys.need_double(p + "load_v_bat");
            b.r_series = keys.get_double(p + "load_r_series_ohm").value_or(1.0);
            b.diode_drop_v = keys.get_double(p + "load_diode_drop_v").value_or(0.0);
            r.load = b;
        } else {
            throw ParseError(origin + ": unknown load '" + load +
                             "' (resistor | rectifier_rc | rectifier_battery)");
        }

        r.controller =
            parse_controller(keys.get_string(p + "controller").value_or("none"), origin);
        if (r.controller != ControllerKind::None &&
            !std::holds_alternative<SwitchedCapBranch>(r.compensation))
            throw ValidationError(origin + ": receiver " + r.name +
                                  " has a controller but fixed compensation");
        sc.receivers.push_back(std::move(r));
    }

    int controllers = 0;
    for (const auto& r : sc.receivers)
        if (r.controller != ControllerKind::None) ++controllers;
    if (controllers > 1)
        throw ValidationError(origin + ": at most one controlled receiver per scenario");

    // hops
    const int n_hops = keys.max_index("hops") + 1;
    for (int i = 0; i < n_hops; ++i) {
        const std::string p = "hops[" + std::to_string(i) + "].";
        ctrl::HopSegment h;
        h.t_start = keys.need_double(p + "t_s");
        h.frequency_hz = keys.need_double(p + "f_hz");
        h.amplitude_a = keys.get_double(p + "amplitude").value_or(amplitude);
        if (h.frequency_hz <= 0.0)
            throw ValidationError(origin + ": hop frequency must be positive");
        sc.hops.push_back(h);
    }
    for (std::size_t i = 1; i < sc.hops.size(); ++i)
        if (sc.hops[i].t_start <= sc.hops[i - 1].t_start)
            throw ValidationError(origin + ": hop times must be strictly increasing");
    if (!sc.hops.empty() && sc.hops.front().t_start != 0.0)
        throw ValidationError(origin + ": the first hop must start at t = 0");

    // sim block
    sc.duration_s = keys.get_double("sim.duration_s").value_or(0.0);
    if (sc.duration_s < 0.0) throw ValidationError(origin + ": sim.duration_s must be >= 0");
    sc.step_divisor = static_cast<int>(keys.get_double("sim.step_divisor").value_or(2000.0));
    if (sc.step_divisor < 100)
        throw ValidationError(origin + ": sim.step_divisor must be at least 100");
    sc.seed = static_cast<std::uint64_t>(keys.get_double("sim.seed").value_or(1.0));
    sc.noise_v = keys.get_double("sim.noise_v").value_or(0.0);
    sc.sample_every = static_cast<int>(keys.get_double("sim.sample_every").value_or(64.0));
    sc.sweep_duration_s = keys.get_double("sim.sweep_duration_s").value_or(0.0);
    if (auto probes = keys.get_string("sim.probes")) {
        std::istringstream ps(*probes);
        std::string item;
        while (std::getline(ps, item, ',')) {
            if (!item.empty()) sc.probes.push_back(item);
        }
    }

    keys.reject_unused();

    // full physical validation happens in build_system; run it now so load
    // errors surface at parse time with the scenario origin attached
    sc.build_system();
    return sc;
}

Scenario load_scenario(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ParseError("cannot open scenario file " + path);
    std::stringstream buf;
    buf << f.rdbuf();
    return parse_scenario(buf.str(), path);
}

}  // namespace wpt::scenario
