#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "pchmm/data.hpp"
#include "pchmm/error.hpp"

namespace pchmm {

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::stringstream ss(line);
    while (std::getline(ss, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

inline double parse_double(const std::string& field, long line_no, const std::string& column) {
    try {
        std::size_t pos = 0;
        const double value = std::stod(field, &pos);
        if (pos != field.size()) throw std::invalid_argument(field);
        return value;
    } catch (const std::exception&) {
        throw DataSchemaError("line " + std::to_string(line_no) + ": cannot parse '" + field +
                              "' in column " + column);
    }
}

}  // namespace detail

/// Reads a survival dataset from CSV. Header row required, with columns
/// `group`, `time`, `status`; every remaining column is a covariate in file
/// order. Comma-delimited, '.' decimal separator.
inline SurvivalDataset read_survival_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw DataSchemaError(path + ": empty file");
    const auto header = detail::split_csv_line(line);
    int group_col = -1, time_col = -1, status_col = -1;
    std::vector<int> covariate_cols;
    SurvivalDataset data;
    for (int c = 0; c < static_cast<int>(header.size()); ++c) {
        const std::string name = detail::trim(header[c]);
        if (name == "group")
            group_col = c;
        else if (name == "time")
            time_col = c;
        else if (name == "status")
            status_col = c;
        else {
            covariate_cols.push_back(c);
            data.covariate_names.push_back(name);
        }
    }
    if (group_col < 0) throw DataSchemaError(path + ": missing required column 'group'");
    if (time_col < 0) throw DataSchemaError(path + ": missing required column 'time'");
    if (status_col < 0) throw DataSchemaError(path + ": missing required column 'status'");

    std::unordered_map<std::string, int> label_index;
    std::vector<double> times;
    std::vector<int> status, groups;
    std::vector<double> covariates;  // row-major
    long line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        const auto fields = detail::split_csv_line(line);
        if (fields.size() != header.size())
            throw DataSchemaError("line " + std::to_string(line_no) + ": expected " +
                                  std::to_string(header.size()) + " fields, found " +
                                  std::to_string(fields.size()));
        const std::string label = detail::trim(fields[group_col]);
        auto [it, inserted] = label_index.try_emplace(label, static_cast<int>(data.group_labels.size()));
        if (inserted) data.group_labels.push_back(label);
        groups.push_back(it->second);
        times.push_back(detail::parse_double(detail::trim(fields[time_col]), line_no, "time"));
        const double st = detail::parse_double(detail::trim(fields[status_col]), line_no, "status");
        if (st != 0.0 && st != 1.0)
            throw DataSchemaError("line " + std::to_string(line_no) + ": status must be 0 or 1");
        status.push_back(static_cast<int>(st));
        for (int c : covariate_cols)
            covariates.push_back(
                detail::parse_double(detail::trim(fields[c]), line_no, detail::trim(header[c])));
    }
    const int n = static_cast<int>(times.size());
    if (n == 0) throw DataSchemaError(path + ": no data rows");
    const int p = static_cast<int>(covariate_cols.size());
    data.group = std::move(groups);
    data.time = Eigen::Map<VectorXd>(times.data(), n);
    data.status = Eigen::Map<VectorXi>(status.data(), n);
    data.X.resize(n, p);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < p; ++j) data.X(i, j) = covariates[static_cast<std::size_t>(i) * p + j];
    return data;
}

/// Writes a dataset in the same schema `group,time,status,<covariates...>`.
/// Values use %.17g so a write/read round trip is lossless.
inline void write_survival_csv(const SurvivalDataset& data, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << "group,time,status";
    for (int j = 0; j < data.n_covariates(); ++j) {
        out << ',';
        out << (j < static_cast<int>(data.covariate_names.size()) ? data.covariate_names[j]
                                                                  : "x" + std::to_string(j + 1));
    }
    out << '\n';
    char buf[64];
    for (int i = 0; i < data.n_subjects(); ++i) {
        out << data.group_labels[data.group[i]];
        std::snprintf(buf, sizeof(buf), "%.17g", data.time[i]);
        out << ',' << buf << ',' << data.status[i];
        for (int j = 0; j < data.n_covariates(); ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g", data.X(i, j));
            out << ',' << buf;
        }
        out << '\n';
    }
    if (!out) throw IoError("write failed for " + path);
}

}  // namespace pchmm
