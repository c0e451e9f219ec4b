#include "wpt/scenario/harness.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <future>
#include <numbers>

#include <json.hpp>

#include "wpt/io/csv.hpp"
#include "wpt/swcap.hpp"

namespace wpt::scenario {

namespace fs = std::filesystem;
using circuit::Stepper;
using circuit::SwitchTopology;
using nlohmann::ordered_json;

std::string topology_name(SwitchTopology topo) {
    switch (topo) {
        case SwitchTopology::SingleTransistorWithBodyDiode:
            return "single_transistor";
        case SwitchTopology::BackToBackPair:
            return "back_to_back";
        case SwitchTopology::TransistorDiodePair:
            return "transistor_diode_pair";
    }
    return "?";
}

namespace {

const char* mode_name(ctrl::Mode m) {
    switch (m) {
        case ctrl::Mode::Detect:
            return "detect";
        case ctrl::Mode::Coarse:
            return "coarse";
        case ctrl::Mode::Fine:
            return "fine";
        case ctrl::Mode::Track:
            return "track";
    }
    return "?";
}

/// Anchor (a negative receiver-current peak) for open-loop schedules driven
/// straight from the known source phase.
double source_anchor(const Scenario& sc) {
    double f = 0.0, phase = 0.0;
    if (const auto* ic = std::get_if<circuit::IdealCurrentSource>(&sc.source)) {
        f = ic->frequency_hz;
        phase = ic->phase_rad;
    } else {
        const auto& vd = std::get<circuit::VoltageDrivenSource>(sc.source);
        f = vd.frequency_hz;
        phase = vd.phase_rad;
    }
    const double two_pi = 2.0 * std::numbers::pi;
    double ph = std::fmod(phase, two_pi);
    if (ph < 0.0) ph += two_pi;
    return (two_pi - ph) / (two_pi * f);
}

/// Plain (uncontrolled) run mirroring run_decryption's measurement tails.
ctrl::DecryptionResult run_uncontrolled(const Scenario& sc) {
    auto system = sc.build_system();
    ctrl::RunOptions opts = sc.run_options();
    Stepper stepper(system, opts.solver);
    auto hops = sc.hop_program();
    std::vector<circuit::SourceSegment> program;
    for (const auto& h : hops) program.push_back({h.t_start, h.frequency_hz, h.amplitude_a, 0.0});
    stepper.set_program(program);

    ctrl::DecryptionResult res;
    res.duration_s = sc.duration_s;
    const auto n_rx = static_cast<std::size_t>(system.receiver_count());

    if (!sc.probes.empty()) {
        res.trace_data.cycle_hz = hops.front().frequency_hz;
        res.trace_data.sample_dt = sc.sample_every / (hops.front().frequency_hz * sc.step_divisor);
        res.trace_data.names = sc.probes;
        res.trace_data.cols.resize(sc.probes.size());
        std::vector<Stepper::ProbeId> ids;
        for (const auto& n : sc.probes) ids.push_back(stepper.resolve_probe(n));
        stepper.add_tap(sc.sample_every, [&res, ids](const Stepper& s, double t) {
            res.trace_data.t.push_back(t);
            for (std::size_t i = 0; i < ids.size(); ++i)
                res.trace_data.cols[i].push_back(s.probe(ids[i]));
        });
    }
    std::vector<double> i2_acc(n_rx, 0.0);
    double last_t = 0.0;
    bool first = true;
    stepper.add_tap(8, [&](const Stepper& s, double t) {
        const double dt = first ? 0.0 : t - last_t;
        first = false;
        last_t = t;
        for (std::size_t k = 0; k < n_rx; ++k) {
            const double ik = s.state().x(system.slots(static_cast<int>(k)).current);
            i2_acc[k] += ik * ik * dt;
        }
    });

    res.tails.resize(hops.size());
    for (std::size_t seg = 0; seg < hops.size() && sc.duration_s > 0.0; ++seg) {
        const double t_begin = hops[seg].t_start;
        if (t_begin >= sc.duration_s) break;
        const double t_end =
            seg + 1 < hops.size() ? std::min(hops[seg + 1].t_start, sc.duration_s) : sc.duration_s;
        const double tail0 = t_end - 0.25 * (t_end - t_begin);
        const double tail_mid = 0.5 * (tail0 + t_end);
        stepper.advance_to(tail0);
        auto e0 = stepper.state().energy.receiver_load;
        auto q0 = i2_acc;
        const double s0 = stepper.time();
        stepper.advance_to(tail_mid);
        auto em = stepper.state().energy.receiver_load;
        const double sm = stepper.time();
        stepper.advance_to(t_end);
        auto e1 = stepper.state().energy.receiver_load;
        auto q1 = i2_acc;
        const double s1 = stepper.time();

        auto& tail = res.tails[seg];
        tail.t0 = s0;
        tail.t1 = s1;
        tail.receiver_power_w.resize(n_rx);
        tail.receiver_rms_a.resize(n_rx);
        tail.receiver_power_half1_w.resize(n_rx);
        tail.receiver_power_half2_w.resize(n_rx);
        for (std::size_t k = 0; k < n_rx; ++k) {
            tail.receiver_power_w[k] = (e1[k] - e0[k]) / (s1 - s0);
            tail.receiver_rms_a[k] = std::sqrt(std::max(0.0, (q1[k] - q0[k]) / (s1 - s0)));
            tail.receiver_power_half1_w[k] = (em[k] - e0[k]) / (sm - s0);
            tail.receiver_power_half2_w[k] = (e1[k] - em[k]) / (s1 - sm);
        }
    }
    res.ledger = ctrl::ledger_from_state(system, stepper.state(), sc.duration_s,
                                         sc.receiver_names());
    return res;
}

void write_controller_csv(const std::string& path,
                          const std::vector<ctrl::ControllerTraceRow>& rows) {
    std::ofstream f(path);
    if (!f) throw Error("cannot open " + path + " for writing");
    f << "t_s,mode,f_hat_hz,t_on_s,rms_a\n";
    for (const auto& r : rows) {
        f << io::format_value(r.t) << ',' << mode_name(r.mode) << ','
          << io::format_value(r.f_hat) << ',' << io::format_value(r.t_on) << ','
          << io::format_value(r.rms_a) << '\n';
    }
}

}  // namespace

std::string ledger_json(const ctrl::EnergyLedger& ledger) {
    ordered_json j;
    j["receivers"] = ordered_json::array();
    for (const auto& e : ledger.receivers) {
        j["receivers"].push_back({{"name", e.name},
                                  {"energy_j", e.energy_j},
                                  {"power_w", e.power_w},
                                  {"ratio", e.ratio}});
    }
    return j.dump(2) + "\n";
}

std::string report_json(const RunReport& report) {
    ordered_json j;
    j["duration_s"] = report.duration_s;
    j["final_t_on_s"] = report.final_t_on;
    j["ledger"] = ordered_json::parse(ledger_json(report.ledger));
    j["hops"] = ordered_json::array();
    for (const auto& h : report.hops) {
        ordered_json hj;
        hj["t_hop_s"] = h.t_hop;
        hj["frequency_hz"] = h.frequency_hz;
        if (h.t_detected) hj["t_detected_s"] = *h.t_detected;
        if (h.t_coarse_applied) {
            hj["t_coarse_applied_s"] = *h.t_coarse_applied;
            hj["coarse_t_on_s"] = h.coarse_t_on;
            hj["coarse_clamped"] = h.coarse_clamped;
        }
        if (h.t_track_entered) {
            hj["t_track_entered_s"] = *h.t_track_entered;
            hj["final_t_on_s"] = h.final_t_on;
        }
        j["hops"].push_back(hj);
    }
    j["segments"] = ordered_json::array();
    for (std::size_t i = 0; i < report.tails.size(); ++i) {
        const auto& t = report.tails[i];
        ordered_json tj;
        tj["tail_t0_s"] = t.t0;
        tj["tail_t1_s"] = t.t1;
        tj["receiver_power_w"] = t.receiver_power_w;
        tj["receiver_rms_a"] = t.receiver_rms_a;
        tj["settled"] = i < report.segment_settled.size() ? report.segment_settled[i] : false;
        j["segments"].push_back(tj);
    }
    j["traces"] = report.trace_files;
    if (!report.controller_file.empty()) j["controller"] = report.controller_file;
    return j.dump(2) + "\n";
}

RunReport run_scenario(const Scenario& scenario, const std::string& out_dir) {
    RunReport report;
    report.duration_s = scenario.duration_s;
    if (scenario.duration_s <= 0.0) return report;  // nothing to simulate

    ctrl::DecryptionResult res;
    const int controlled = scenario.controlled_receiver();
    if (controlled >= 0) {
        auto system = scenario.build_system();
        ctrl::RunOptions opts = scenario.run_options();
        opts.trace_probes = scenario.probes;
        opts.trace_sample_every = scenario.sample_every;
        const auto kind = scenario.receivers[static_cast<std::size_t>(controlled)].controller;
        const auto strategy = kind == ControllerKind::VoltageComparison
                                  ? ctrl::Strategy::VoltageComparison
                                  : ctrl::Strategy::TimeCounting;
        res = ctrl::run_decryption(system, controlled, scenario.hop_program(),
                                   scenario.duration_s, strategy, opts,
                                   scenario.receiver_names());
    } else {
        res = run_uncontrolled(scenario);
    }

    report.ledger = std::move(res.ledger);
    report.hops = std::move(res.hops);
    report.tails = std::move(res.tails);
    report.final_t_on = res.final_t_on;
    for (const auto& t : report.tails) {
        bool settled = !t.receiver_power_half1_w.empty();
        for (std::size_t k = 0; k < t.receiver_power_half1_w.size(); ++k) {
            const double a = t.receiver_power_half1_w[k];
            const double b = t.receiver_power_half2_w[k];
            const double scale = std::max({std::abs(a), std::abs(b), 1e-12});
            if (std::abs(a - b) > 0.04 * scale) settled = false;
        }
        report.segment_settled.push_back(settled);
    }

    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        {
            std::ofstream f(fs::path(out_dir) / "ledger.json");
            f << ledger_json(report.ledger);
        }
        for (std::size_t c = 0; c < res.trace_data.names.size(); ++c) {
            circuit::Trace single;
            single.sample_dt = res.trace_data.sample_dt;
            single.cycle_hz = res.trace_data.cycle_hz;
            single.names = {res.trace_data.names[c]};
            single.t = res.trace_data.t;
            single.cols = {res.trace_data.cols[c]};
            const auto path =
                (fs::path(out_dir) / ("trace_" + res.trace_data.names[c] + ".csv")).string();
            io::write_trace_csv(path, single);
            report.trace_files.push_back(path);
        }
        if (controlled >= 0) {
            report.controller_file = (fs::path(out_dir) / "controller.csv").string();
            write_controller_csv(report.controller_file, res.trace);
        }
        {
            std::ofstream f(fs::path(out_dir) / "report.json");
            f << report_json(report);
        }
    }
    return report;
}

SweepResult sweep_frequency(const Scenario& scenario, const std::vector<double>& grid_hz,
                            const std::string& out_csv) {
    if (grid_hz.empty()) throw ValidationError("sweep_frequency: empty grid");
    SweepResult result;
    result.receiver_names = scenario.receiver_names();

    auto run_point = [&scenario](double f) {
        Scenario point = scenario;
        double amplitude = point.hop_program().front().amplitude_a;
        point.hops = {{0.0, f, amplitude}};
        if (point.sweep_duration_s > 0.0) point.duration_s = point.sweep_duration_s;
        // keep the source frequency metadata coherent with the hop
        if (auto* ic = std::get_if<circuit::IdealCurrentSource>(&point.source))
            ic->frequency_hz = f;
        else
            std::get<circuit::VoltageDrivenSource>(point.source).frequency_hz = f;
        return run_scenario(point);
    };

    std::vector<std::future<RunReport>> futures;
    futures.reserve(grid_hz.size());
    for (double f : grid_hz)
        futures.push_back(std::async(std::launch::async, run_point, f));
    for (std::size_t i = 0; i < grid_hz.size(); ++i) {
        RunReport rep = futures[i].get();
        SweepRow row;
        row.frequency_hz = grid_hz[i];
        if (!rep.tails.empty()) {
            row.receiver_power_w = rep.tails.back().receiver_power_w;
            double max_p = 0.0;
            for (double p : row.receiver_power_w) max_p = std::max(max_p, p);
            for (double p : row.receiver_power_w)
                row.receiver_ratio.push_back(max_p > 0.0 ? p / max_p : 0.0);
        }
        result.rows.push_back(std::move(row));
    }

    if (!out_csv.empty()) {
        io::Table table;
        table.header = {"f_hz"};
        for (const auto& n : result.receiver_names) table.header.push_back(n + "_power_w");
        for (const auto& n : result.receiver_names) table.header.push_back(n + "_ratio");
        for (const auto& row : result.rows) {
            std::vector<double> r = {row.frequency_hz};
            r.insert(r.end(), row.receiver_power_w.begin(), row.receiver_power_w.end());
            r.insert(r.end(), row.receiver_ratio.begin(), row.receiver_ratio.end());
            table.rows.push_back(std::move(r));
        }
        io::write_table_csv(out_csv, table);
    }
    return result;
}

std::vector<TopologyRow> compare_topologies(const Scenario& scenario,
                                            const std::vector<SwitchTopology>& topologies,
                                            const std::string& out_csv) {
    int switched = -1;
    for (std::size_t k = 0; k < scenario.receivers.size(); ++k)
        if (std::holds_alternative<circuit::SwitchedCapBranch>(scenario.receivers[k].compensation)) {
            switched = static_cast<int>(k);
            break;
        }
    if (switched < 0)
        throw ValidationError("compare_topologies: scenario has no switched-capacitor receiver");

    const auto hops = scenario.hop_program();
    const double f = hops.front().frequency_hz;
    const double period = 1.0 / f;
    const double anchor = source_anchor(scenario);

    struct RunStats {
        circuit::ReceiverStats stats;
        double mean_v2 = 0.0;
        double peak_v2 = 0.0;
        double rms_i = 0.0;
    };
    auto run_one = [&](SwitchTopology topo, double t_on, bool gated,
                       double delay) -> RunStats {
        Scenario variant = scenario;
        auto& branch =
            std::get<circuit::SwitchedCapBranch>(variant.receivers[static_cast<std::size_t>(switched)].compensation);
        branch.topology = topo;
        variant.receivers[static_cast<std::size_t>(switched)].controller = ControllerKind::None;
        auto system = variant.build_system();
        Stepper stepper(system, variant.run_options().solver);
        std::vector<circuit::SourceSegment> program;
        for (const auto& h : hops) program.push_back({h.t_start, h.frequency_hz, h.amplitude_a, 0.0});
        stepper.set_program({program.front()});

        ctrl::GateSchedule sched;
        if (gated) {
            sched = ctrl::GateSchedule(f, anchor, t_on, topo);
            if (delay > 0.0) sched.delay_turn_on(1, delay);
        }
        auto advance_cycles = [&](int n) {
            const double t_base = stepper.time();
            for (int c = 0; c < n; ++c) {
                const double t1 = t_base + (c + 1) * period;
                if (gated)
                    stepper.advance_to(t1, sched.commands_in(stepper.time(), t1, switched));
                else
                    stepper.advance_to(t1);
            }
        };
        advance_cycles(25);
        stepper.mutable_state().reset_stats();
        RunStats out;
        const auto& s = system.slots(switched);
        double acc_v2 = 0.0, acc_i2 = 0.0;
        long n_samp = 0;
        stepper.add_tap(4, [&](const Stepper& st, double) {
            const double v2 = st.state().x(s.v2);
            acc_v2 += v2;
            out.peak_v2 = std::max(out.peak_v2, std::abs(v2));
            const double i = st.state().x(s.current);
            acc_i2 += i * i;
            ++n_samp;
        });
        advance_cycles(15);
        out.stats = stepper.state().stats[static_cast<std::size_t>(switched)];
        out.mean_v2 = acc_v2 / static_cast<double>(n_samp);
        out.rms_i = std::sqrt(acc_i2 / static_cast<double>(n_samp));
        return out;
    };

    const auto& branch = std::get<circuit::SwitchedCapBranch>(
        scenario.receivers[static_cast<std::size_t>(switched)].compensation);
    const double l_r = scenario.receivers[static_cast<std::size_t>(switched)].l_h;
    const auto design = swcap::CompensationDesign::from_lc(l_r, branch.c1_f, branch.c2_f);
    const double t_on = ctrl::coarse_tune({f, 0.0, 10}, design);

    std::vector<TopologyRow> rows;
    for (auto topo : topologies) {
        TopologyRow row;
        row.topology = topo;
        if (topo == SwitchTopology::SingleTransistorWithBodyDiode) {
            // gate held off: the body diode alone rectifies V_CR2
            auto off = run_one(topo, 0.0, false, 0.0);
            auto on = run_one(topo, t_on, true, 0.0);
            row.rms_i_r_a = on.rms_i;
            row.mean_v_cr2_v = off.mean_v2;
            row.peak_v_cr2_v = off.peak_v2;
            row.spike_metric = on.stats.peak_i2 > 0.0
                                   ? std::max(on.stats.spike_i2, on.stats.peak_i2) /
                                         on.stats.peak_i2
                                   : 0.0;
            row.zvs_metric =
                on.stats.peak_v1 > 0.0 ? on.stats.zvs_worst_v / on.stats.peak_v1 : 0.0;
        } else {
            auto clean = run_one(topo, t_on, true, 0.0);
            row.rms_i_r_a = clean.rms_i;
            row.mean_v_cr2_v = clean.mean_v2;
            row.peak_v_cr2_v = clean.peak_v2;
            row.zvs_metric =
                clean.stats.peak_v1 > 0.0 ? clean.stats.zvs_worst_v / clean.stats.peak_v1 : 0.0;
            if (topo == SwitchTopology::BackToBackPair) {
                auto late = run_one(topo, t_on, true, 0.05 * period);
                row.spike_metric = clean.stats.peak_i2 > 0.0
                                       ? std::max(late.stats.spike_i2, clean.stats.peak_i2) /
                                             clean.stats.peak_i2
                                       : 0.0;
            } else {
                row.spike_metric = clean.stats.peak_i2 > 0.0
                                       ? std::max(clean.stats.spike_i2, clean.stats.peak_i2) /
                                             clean.stats.peak_i2
                                       : 0.0;
            }
        }
        rows.push_back(row);
    }

    if (!out_csv.empty()) {
        std::ofstream fcsv(out_csv);
        if (!fcsv) throw Error("cannot open " + out_csv + " for writing");
        fcsv << "topology,rms_i_r_a,mean_v_cr2_v,spike_metric,zvs_metric\n";
        for (const auto& r : rows) {
            fcsv << topology_name(r.topology) << ',' << io::format_value(r.rms_i_r_a) << ','
                 << io::format_value(r.mean_v_cr2_v) << ',' << io::format_value(r.spike_metric)
                 << ',' << io::format_value(r.zvs_metric) << '\n';
        }
    }
    return rows;
}

}  // namespace wpt::scenario
