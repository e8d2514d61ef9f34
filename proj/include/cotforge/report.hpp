#pragma once

#include <string>
#include <vector>

#include "json.hpp"

namespace cotforge {

struct EvalSummary {
    std::string model;
    std::string dataset;
    int k_shot = 0;
    int n = 0;
    double accuracy = 0;
};

EvalSummary load_eval_summary(const std::string& report_path);

// Comparison table grouped by dataset; model rows keep first-seen order.
// Both renderings are produced from the same grouping, including which model
// leads each dataset and whether that leader is a DPO run.
nlohmann::json comparison_json(const std::vector<EvalSummary>& rows);
std::string comparison_markdown(const std::vector<EvalSummary>& rows);

}  // namespace cotforge
