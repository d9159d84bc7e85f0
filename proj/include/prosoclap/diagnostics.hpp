#pragma once

// Finite-difference gradient suites and fast invariant sweeps, shared by the
// CLI (gradcheck, selftest) and the test binaries.

#include "prosoclap/model.hpp"
#include "prosoclap/synth_corpus.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace prosoclap::diagnostics {

struct CheckResult {
    std::string name;
    bool pass = false;
    std::string detail;
};

// ||a - b|| / max(||a|| + ||b||, floor)
double relative_error(const ag::Matrix& a, const ag::Matrix& b, double floor = 1e-12);

// Central differences of f() with respect to every entry of `x` (modified in place, restored).
ag::Matrix numeric_gradient(ag::Matrix& x, const std::function<double()>& f, double h = 1e-6);

struct GradcheckReport {
    double err_text = 0.0;   // dL/dT
    double err_speech = 0.0; // dL/dS
    double err_log_tau = 0.0;
    double worst() const;
};

// Symmetric CE on C = T S^T with tau = exp(log_tau); T, S are random unit rows.
GradcheckReport gradcheck_clip_loss(int n, int dim, std::uint64_t seed);

struct ModelGradcheckReport {
    double global_error = 0.0;             // over all parameters jointly
    std::string worst_tensor;
    double worst_tensor_error = 0.0;       // tensors with non-negligible gradient only
    std::size_t parameters = 0;
};

// Tiny encoders on a tiny synthetic batch, all parameters perturbed.
ModelGradcheckReport gradcheck_model(std::uint64_t seed, corpus::Scale scale = corpus::Scale::Phoneme);

// Small configs used by gradient checks and unit tests.
synth::SynthSpec tiny_synth_spec(std::uint64_t seed = 7);
model::ModelConfig tiny_model_config(corpus::Scale scale = corpus::Scale::Phoneme);

std::vector<CheckResult> run_gradchecks(std::uint64_t seed);

// Invariant sweeps over in-memory data. Checks that need files run only when `work_dir` is given.
std::vector<CheckResult> run_selftest(std::uint64_t seed, const std::optional<std::filesystem::path>& work_dir);

}  // namespace prosoclap::diagnostics
