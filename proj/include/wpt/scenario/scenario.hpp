#pragma once

// Flat key/value scenario files: parsing, schema validation, defaults, and
// construction of the simulation system + controller configuration.

#include <optional>
#include <string>
#include <vector>

#include "wpt/circuit/system.hpp"
#include "wpt/controller/decryption.hpp"

namespace wpt::scenario {

enum class ControllerKind { None, TimeCounting, CoarseOnly, VoltageComparison };

struct ReceiverSpec {
    std::string name;
    double l_h = 80e-6;
    double r_ohm = -1.0;  ///< < 0: default to Q = 100 at 85 kHz
    double m_tx_h = 15e-6;
    double m_aux_h = 0.0;
    std::vector<std::pair<int, double>> m_peers;  ///< (peer index, mutual H)
    circuit::Compensation compensation = circuit::FixedCap{50.73e-9};
    circuit::LoadModel load = circuit::ResistorLoad{25.0};
    ControllerKind controller = ControllerKind::None;
};

struct Scenario {
    // coils
    double tx_l_h = 150e-6;
    double tx_r_ohm = -1.0;
    std::optional<circuit::Coil> auxiliary;
    double aux_m_tx_h = 3e-6;
    std::vector<ReceiverSpec> receivers;

    circuit::SourceModel source = circuit::IdealCurrentSource{3.4, 79e3, 0.0};
    std::vector<ctrl::HopSegment> hops;  ///< empty: single segment from the source

    // sim block
    double duration_s = 0.0;
    int step_divisor = 2000;
    std::uint64_t seed = 1;
    double noise_v = 0.0;
    int sample_every = 64;
    double sweep_duration_s = 0.0;  ///< 0: reuse duration_s
    std::vector<std::string> probes;

    /// Default series resistance: quality factor 100 at 85 kHz.
    static double default_r(double l_h);

    int controlled_receiver() const;  ///< -1 when no controller configured
    circuit::SimSystem build_system() const;
    std::vector<ctrl::HopSegment> hop_program() const;
    ctrl::RunOptions run_options() const;
    std::vector<std::string> receiver_names() const;
};

/// Parses and validates a scenario file. Unknown keys and malformed values
/// raise ParseError with file:line diagnostics; violated physical invariants
/// raise ValidationError (or a subclass naming the invariant).
Scenario load_scenario(const std::string& path);

/// Same parser over an in-memory buffer (used by tests and round trips).
Scenario parse_scenario(const std::string& text, const std::string& origin = "<memory>");

}  // namespace wpt::scenario
