#pragma once

#include <functional>
#include <string>
#include <vector>

#include "attnseg/tensor.hpp"

namespace attnseg {

struct GradCheckResult {
    std::string name;
    double max_rel_error = 0.0;
    double threshold = 0.0;
    bool passed() const { return max_rel_error < threshold; }
};

// Compares the tape gradient of loss_fn with central finite differences over
// the given leaf tensors. loss_fn must rebuild its computation on every call.
// Per tensor the error is ‖g_tape − g_fd‖∞ / max(1, ‖g_tape‖∞, ‖g_fd‖∞) over
// the probed coordinates; the maximum across tensors is returned.
// max_coords = 0 probes every coordinate, otherwise that many per tensor,
// sampled deterministically from `seed`.
double gradcheck_max_rel_error(const std::function<Tensor()>& loss_fn, std::vector<Tensor> inputs,
                               double step, int64_t max_coords = 0, uint64_t seed = 0);

// The fixed-shape finite-difference suite over every layer, every attention
// block, and the full model; `elapsed_seconds`, when given, receives the wall
// time of the run.
std::vector<GradCheckResult> run_gradcheck_suite(double* elapsed_seconds = nullptr);

bool all_passed(const std::vector<GradCheckResult>& results);

} // namespace attnseg
