#pragma once

// JSON persistence of estimator states.
//
// ReER:      {"format_version":1,"tau":..,"p":..,"n_seen":..,"batches_seen":..,
//             "beta":[p],"h":[p*p row-major]}
// PAER/DCER: same envelope plus "kind":"paer"|"dcer", "acc_mat":[p*p],
//            "acc_vec":[p]; PAER also carries "weight_mode".
//
// Doubles are written in shortest round-trip form, so load(save(s)) == s
// bit-for-bit.

#include <filesystem>
#include <string>
#include <variant>

#include "reer/baselines.hpp"
#include "reer/renewable.hpp"

namespace reer {

inline constexpr int kStateFormatVersion = 1;

using AnyState = std::variant<SummaryStated, PaerStated, DcerStated>;

/// "reer", "paer" or "dcer".
std::string state_kind(const AnyState& state);
Index state_dim(const AnyState& state);
ExpectileLevel state_tau(const AnyState& state);

/// Current coefficient estimate of any state (finalizes the one-shot ones).
Coefficientsd state_estimate(const AnyState& state);

std::string dump_state(const AnyState& state);
AnyState parse_state(const std::string& text);

void save_state(const AnyState& state, const std::filesystem::path& path);
AnyState load_state(const std::filesystem::path& path);

}  // namespace reer
