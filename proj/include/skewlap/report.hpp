#pragma once

// Serialization of fit results: the strategy-vs-oracle comparison table as
// CSV, and FitReport as versioned JSON. Timings stay out of the JSON so
// identical inputs produce byte-identical files.

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "skewlap/inla.hpp"

namespace skewlap {

inline constexpr int kReportSchemaVersion = 1;

struct ComparisonRow {
    std::string parameter;
    std::string statistic; // mean | sd | skewness | time-seconds
    std::string strategy;
    double value = 0.0;
    std::optional<double> rel_error; // vs the oracle reference, when defined
};

struct ComparisonTable {
    std::vector<ComparisonRow> rows;
};

namespace detail {

inline std::string csv_double(double x) {
    char buffer[40];
    std::snprintf(buffer, sizeof(buffer), "%.17g", x);
    return buffer;
}

} // namespace detail

inline void write_comparison_csv(std::ostream& os, const ComparisonTable& table) {
    os << "parameter,statistic,strategy,value,rel-error-vs-oracle\n";
    for (const auto& row : table.rows) {
        os << row.parameter << ',' << row.statistic << ',' << row.strategy << ','
           << detail::csv_double(row.value) << ',';
        if (row.rel_error) os << detail::csv_double(*row.rel_error);
        os << '\n';
    }
}

inline void write_timings_csv(std::ostream& os,
                              const std::vector<std::pair<std::string, double>>& timings) {
    os << "method,seconds\n";
    for (const auto& [method, seconds] : timings) {
        os << method << ',' << detail::csv_double(seconds) << '\n';
    }
}

inline nlohmann::json fit_report_to_json(const FitReport& report) {
    nlohmann::json out;
    out["schema_version"] = kReportSchemaVersion;
    out["strategy"] = report.strategy;

    nlohmann::json grid;
    grid["points"] = nlohmann::json::array();
    for (int i = 0; i < report.grid.points.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (int j = 0; j < report.grid.points.cols(); ++j) row.push_back(report.grid.points(i, j));
        grid["points"].push_back(row);
    }
    grid["log_weights"] = std::vector<double>(
        report.grid.log_weights.data(), report.grid.log_weights.data() + report.grid.log_weights.size());
    grid["mode"] = std::vector<double>(report.grid.mode.data(),
                                       report.grid.mode.data() + report.grid.mode.size());
    grid["curvature"] = nlohmann::json::array();
    for (int i = 0; i < report.grid.curvature.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (int j = 0; j < report.grid.curvature.cols(); ++j) row.push_back(report.grid.curvature(i, j));
        grid["curvature"].push_back(row);
    }
    out["theta_grid"] = grid;

    out["marginals"] = nlohmann::json::array();
    for (const auto& marg : report.marginals) {
        nlohmann::json m;
        m["index"] = marg.index;
        m["name"] = marg.name;
        m["mean"] = marg.mean;
        m["sd"] = marg.sd;
        m["skewness"] = marg.skewness;
        m["x"] = std::vector<double>(marg.density.x.data(),
                                     marg.density.x.data() + marg.density.x.size());
        m["pdf"] = std::vector<double>(marg.density.pdf.data(),
                                       marg.density.pdf.data() + marg.density.pdf.size());
        out["marginals"].push_back(m);
    }

    out["warnings"] = report.warnings;
    nlohmann::json objectives = nlohmann::json::object();
    if (std::isfinite(report.vb_mean_objective)) objectives["vb_mean"] = report.vb_mean_objective;
    if (std::isfinite(report.vb_var_objective)) objectives["vb_var"] = report.vb_var_objective;
    if (std::isfinite(report.skew_objective)) objectives["skew"] = report.skew_objective;
    out["objectives"] = objectives;
    return out;
}

inline void write_fit_report_json(std::ostream& os, const FitReport& report) {
    os << fit_report_to_json(report).dump(2) << '\n';
}

} // namespace skewlap
