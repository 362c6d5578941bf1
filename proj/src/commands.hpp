#pragma once

#include <iosfwd>

#include "kdiff/experiment.hpp"

namespace kdiff::cli {

// Each returns a process exit status; module errors propagate as exceptions tagged with the stage.
int cmd_coeffs(const ExperimentConfig& c, std::ostream& log);
int cmd_simulate_kinetic(const ExperimentConfig& c, std::ostream& log);
int cmd_simulate_spde(const ExperimentConfig& c, std::ostream& log);
int cmd_converge(const ExperimentConfig& c, std::ostream& log);
int cmd_validate(const ExperimentConfig& c, std::ostream& log);

struct StageError : std::runtime_error
{
  StageError(const std::string& stage, const std::string& what) : std::runtime_error(stage + ": " + what) {}
};

}  // namespace kdiff::cli
