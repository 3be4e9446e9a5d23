#pragma once

#include "drum/baselines.hpp"  // Task
#include "drum/common.hpp"

#include <nlohmann/json_fwd.hpp>
#include <optional>
#include <string>

namespace drum::dataset {

enum class Role { stable_X, missing_A, outcome_Y, ignore };

Role role_from_name(const std::string& s);
std::string role_name(Role r);

struct ColumnSchema {
    std::vector<std::pair<std::string, Role>> roles;  // declared columns, in order
    Task task = Task::regression;

    // Undeclared columns default to ignore.
    Role role_for(const std::string& column) const;
    std::vector<std::string> columns_with(Role r) const;
};

ColumnSchema schema_from_json(const nlohmann::json& j);
void schema_to_json(nlohmann::json& j, const ColumnSchema& schema);

// Columns named x1..xd / a1..ad / y / fbar, as written by the simulate command.
ColumnSchema simulated_schema(int d_X, int d_A, bool labeled);

struct Dataset {
    std::vector<std::string> x_names, a_names;
    Mat X;
    Mat A;      // empty when unlabeled
    Vec Y;      // empty when unlabeled
    bool has_A = false, has_Y = false;
    std::optional<Vec> fbar;  // noiseless truth column, when present
};

// target files must not carry any declared A or Y column; undeclared columns are
// stripped before anything downstream can see them.
Dataset read_csv(const std::string& path, const ColumnSchema& schema, bool is_target);

void write_labeled_csv(const std::string& path, const Mat& X, const Mat& A, const Vec& Y,
                       const Vec* fbar = nullptr);
void write_unlabeled_csv(const std::string& path, const Mat& X);
void write_prediction_csv(const std::string& path, const Vec& pred);

// Per-column mean/sd from the source population; applied everywhere downstream.
struct Standardizer {
    Vec x_mean, x_sd;
    Vec a_mean, a_sd;

    Mat apply_x(const Mat& X) const;
    Mat apply_a(const Mat& A) const;
};

Standardizer fit_standardizer(const Mat& X, const Mat& A);
void standardizer_to_json(nlohmann::json& j, const Standardizer& s);
Standardizer standardizer_from_json(const nlohmann::json& j);

}  // namespace drum::dataset
