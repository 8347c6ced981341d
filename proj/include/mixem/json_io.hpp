#pragma once

// JSON schema for parameters and fit results.
//
//   {
//     "family": "gaussian" | "t" | "cfust",
//     "q": <int, cfust only>,
//     "pi": [g],
//     "mu": [g][p],
//     "sigma": [g][p][p],
//     "delta": [g][p][q]          (cfust only),
//     "nu": [g]                   (t and cfust only),
//     "loglik_trace": [...],      (fit results only, from here down)
//     "labels": [n],
//     "n_iter": <int>,
//     "converged": <bool>,
//     "wall_time_s": <seconds>
//   }
//
// Floats are written with 17 significant digits, which round-trips every
// finite double exactly. Non-finite values are written as null.

#include <string>
#include <string_view>

#include "mixem/model.hpp"

namespace mixem {

std::string to_json(const MixtureParams& params);
std::string to_json(const FitResult& result);

/// Throws Parse on malformed JSON or a schema violation.
MixtureParams params_from_json(std::string_view text);
FitResult fit_result_from_json(std::string_view text);

}  // namespace mixem
