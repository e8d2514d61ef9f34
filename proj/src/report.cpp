#include "cotforge/report.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>

#include "cotforge/corpus.hpp"
#include "cotforge/jsonl.hpp"

namespace cotforge {

EvalSummary load_eval_summary(const std::string& report_path) {
    const nlohmann::json j = nlohmann::json::parse(read_file(report_path));
    const auto& s = j.at("summary");
    EvalSummary out;
    out.model = s.value("model", report_path);
    out.dataset = s.value("dataset", "unknown");
    out.k_shot = s.at("k_shot").get<int>();
    out.n = s.at("n").get<int>();
    out.accuracy = s.at("accuracy").get<double>();
    return out;
}

namespace {

bool label_is_dpo(const std::string& label) {
    std::string low(label);
    std::transform(low.begin(), low.end(), low.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return low.find("dpo") != std::string::npos;
}

struct Group {
    std::string dataset;
    std::vector<EvalSummary> rows;
};

std::vector<Group> group_rows(const std::vector<EvalSummary>& rows) {
    std::vector<Group> groups;
    for (const auto& r : rows) {
        auto it = std::find_if(groups.begin(), groups.end(),
                               [&](const Group& g) { return g.dataset == r.dataset; });
        if (it == groups.end()) {
            groups.push_back({r.dataset, {r}});
        } else {
            it->rows.push_back(r);
        }
    }
    return groups;
}

std::string fmt_pct(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

}  // namespace

nlohmann::json comparison_json(const std::vector<EvalSummary>& rows) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& g : group_rows(rows)) {
        nlohmann::json table = nlohmann::json::array();
        const EvalSummary* best = nullptr;
        for (const auto& r : g.rows) {
            table.push_back({{"model", r.model},
                             {"accuracy", r.accuracy},
                             {"n", r.n},
                             {"k_shot", r.k_shot}});
            if (!best || r.accuracy > best->accuracy) best = &r;
        }
        out.push_back({{"dataset", g.dataset},
                       {"rows", table},
                       {"leader", best ? best->model : ""},
                       {"dpo_leads", best ? label_is_dpo(best->model) : false}});
    }
    return out;
}

std::string comparison_markdown(const std::vector<EvalSummary>& rows) {
    std::string out;
    for (const auto& entry : comparison_json(rows)) {
        out += "## " + entry.at("dataset").get<std::string>() + "\n\n";
        out += "| model | accuracy (%) | n | k-shot |\n";
        out += "|---|---|---|---|\n";
        for (const auto& r : entry.at("rows")) {
            out += "| " + r.at("model").get<std::string>() + " | " +
                   fmt_pct(r.at("accuracy").get<double>()) + " | " +
                   std::to_string(r.at("n").get<int>()) + " | " +
                   std::to_string(r.at("k_shot").get<int>()) + " |\n";
        }
        out += "\nleader: " + entry.at("leader").get<std::string>() +
               (entry.at("dpo_leads").get<bool>() ? " (DPO leads)" : " (DPO does not lead)") +
               "\n\n";
    }
    return out;
}

}  // namespace cotforge
