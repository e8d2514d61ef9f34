#pragma once

#include <string>
#include <vector>

#include "cotforge/corpus.hpp"
#include "cotforge/model.hpp"
#include "cotforge/trainer.hpp"

namespace cotforge {

// Named hyperparameter presets. The paper-* presets echo the published
// hyperparameters for the full-scale models; the desk-* presets are the
// scaled equivalents used by the desk-scale experiment (same structure,
// learning rates rescaled for a model trained from scratch).
TrainConfig preset(const std::string& name);
std::vector<std::string> preset_names();

// Desk-scale model and task defaults for the end-to-end experiment.
ModelConfig desk_model_config();
SyntheticSpec desk_synth_spec(std::uint64_t seed, int count);

}  // namespace cotforge
