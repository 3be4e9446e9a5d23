#include "drum/dataset.hpp"

#include <charconv>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

namespace drum::dataset {

Role role_from_name(const std::string& s) {
    if (s == "x" || s == "stable_X") return Role::stable_X;
    if (s == "a" || s == "missing_A") return Role::missing_A;
    if (s == "y" || s == "outcome_Y") return Role::outcome_Y;
    if (s == "ignore") return Role::ignore;
    throw ConfigError("unknown column role: " + s);
}

std::string role_name(Role r) {
    switch (r) {
        case Role::stable_X: return "x";
        case Role::missing_A: return "a";
        case Role::outcome_Y: return "y";
        case Role::ignore: return "ignore";
    }
    return "?";
}

Role ColumnSchema::role_for(const std::string& column) const {
    for (const auto& [name, role] : roles)
        if (name == column) return role;
    return Role::ignore;
}

std::vector<std::string> ColumnSchema::columns_with(Role r) const {
    std::vector<std::string> out;
    for (const auto& [name, role] : roles)
        if (role == r) out.push_back(name);
    return out;
}

ColumnSchema schema_from_json(const nlohmann::json& j) {
    ColumnSchema schema;
    schema.task = j.value("task", std::string("regression")) == "binary" ? Task::binary
                                                                         : Task::regression;
    if (!j.contains("columns")) throw ConfigError("schema: missing 'columns'");
    for (const auto& [name, role] : j.at("columns").items())
        schema.roles.emplace_back(name, role_from_name(role.get<std::string>()));
    if (schema.columns_with(Role::stable_X).empty())
        throw ConfigError("schema: at least one x column is required");
    return schema;
}

void schema_to_json(nlohmann::json& j, const ColumnSchema& schema) {
    j = nlohmann::json::object();
    j["task"] = schema.task == Task::binary ? "binary" : "regression";
    auto cols = nlohmann::json::object();
    for (const auto& [name, role] : schema.roles) cols[name] = role_name(role);
    j["columns"] = cols;
}

ColumnSchema simulated_schema(int d_X, int d_A, bool labeled) {
    ColumnSchema schema;
    for (int i = 1; i <= d_X; ++i) schema.roles.emplace_back("x" + std::to_string(i), Role::stable_X);
    if (labeled) {
        for (int i = 1; i <= d_A; ++i)
            schema.roles.emplace_back("a" + std::to_string(i), Role::missing_A);
        schema.roles.emplace_back("y", Role::outcome_Y);
    }
    return schema;
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::stringstream ss(line);
    while (std::getline(ss, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.push_back("");
    return out;
}

double parse_number(const std::string& s, long line_no, const std::string& col) {
    double v;
    const char* begin = s.data();
    const char* end = s.data() + s.size();
    while (begin < end && (*begin == ' ' || *begin == '\t')) ++begin;
    auto r = std::from_chars(begin, end, v);
    if (r.ec != std::errc() )
        throw InputError("csv: cannot parse '" + s + "' in column " + col + " at line " +
                         std::to_string(line_no));
    return v;
}

}  // namespace

Dataset read_csv(const std::string& path, const ColumnSchema& schema, bool is_target) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open csv: " + path);
    std::string line;
    if (!std::getline(in, line)) throw InputError("csv is empty: " + path);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto header = split_line(line);

    std::vector<Role> col_roles(header.size(), Role::ignore);
    std::vector<long> x_pos, a_pos;
    long y_pos = -1, fbar_pos = -1;
    for (std::size_t c = 0; c < header.size(); ++c) {
        Role role = schema.role_for(header[c]);
        col_roles[c] = role;
        if (role == Role::stable_X) x_pos.push_back(static_cast<long>(c));
        if (role == Role::missing_A) {
            if (is_target)
                throw ConfigError("target file carries structurally missing column '" +
                                  header[c] + "'");
            a_pos.push_back(static_cast<long>(c));
        }
        if (role == Role::outcome_Y) {
            if (is_target)
                throw ConfigError("target file carries outcome column '" + header[c] +
                                  "' (unsupervised contract)");
            if (y_pos >= 0) throw ConfigError("csv declares two outcome columns");
            y_pos = static_cast<long>(c);
        }
        if (header[c] == "fbar") fbar_pos = static_cast<long>(c);
    }
    if (x_pos.empty()) throw ConfigError("csv has no stable covariate column: " + path);
    // every declared column must be present on labeled (source) files
    if (!is_target) {
        for (const auto& [name, role] : schema.roles) {
            if (role == Role::ignore) continue;
            bool found = false;
            for (const auto& h : header) found |= h == name;
            if (!found) throw ConfigError("source file is missing declared column '" + name + "'");
        }
    }

    Dataset ds;
    for (long c : x_pos) ds.x_names.push_back(header[c]);
    for (long c : a_pos) ds.a_names.push_back(header[c]);
    ds.has_A = !a_pos.empty();
    ds.has_Y = y_pos >= 0;

    std::vector<double> xs, as, ys, fbars;
    long rows = 0;
    long line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto fields = split_line(line);
        if (fields.size() != header.size())
            throw InputError("csv: row " + std::to_string(line_no) + " has " +
                             std::to_string(fields.size()) + " fields, header has " +
                             std::to_string(header.size()));
        for (long c : x_pos) xs.push_back(parse_number(fields[c], line_no, header[c]));
        for (long c : a_pos) as.push_back(parse_number(fields[c], line_no, header[c]));
        if (y_pos >= 0) ys.push_back(parse_number(fields[y_pos], line_no, header[y_pos]));
        if (fbar_pos >= 0) fbars.push_back(parse_number(fields[fbar_pos], line_no, "fbar"));
        ++rows;
    }
    if (rows == 0) throw InputError("csv has no data rows: " + path);

    ds.X = Eigen::Map<Mat>(xs.data(), rows, static_cast<long>(x_pos.size()));
    if (ds.has_A) ds.A = Eigen::Map<Mat>(as.data(), rows, static_cast<long>(a_pos.size()));
    if (ds.has_Y) ds.Y = Eigen::Map<Vec>(ys.data(), rows);
    if (fbar_pos >= 0) ds.fbar = Eigen::Map<Vec>(fbars.data(), rows);
    if (!ds.X.allFinite()) throw InputError("csv contains non-finite covariates: " + path);
    if (schema.task == Task::binary && ds.has_Y)
        for (long i = 0; i < ds.Y.size(); ++i)
            if (ds.Y(i) != 0.0 && ds.Y(i) != 1.0)
                throw InputError("binary task requires 0/1 outcomes, got " +
                                 format_double(ds.Y(i)) + " at data row " + std::to_string(i + 1));
    return ds;
}

namespace {

void write_rows(std::ofstream& out, const std::vector<const Mat*>& mats,
                const std::vector<const Vec*>& vecs) {
    long rows = mats.empty() ? vecs.front()->size() : mats.front()->rows();
    for (long i = 0; i < rows; ++i) {
        bool first = true;
        std::string line;
        for (const Mat* m : mats)
            for (long j = 0; j < m->cols(); ++j) {
                if (!first) line += ',';
                line += format_double((*m)(i, j));
                first = false;
            }
        for (const Vec* v : vecs) {
            if (!first) line += ',';
            line += format_double((*v)(i));
            first = false;
        }
        line += '\n';
        out << line;
    }
}

}  // namespace

void write_labeled_csv(const std::string& path, const Mat& X, const Mat& A, const Vec& Y,
                       const Vec* fbar) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write csv: " + path);
    std::string header;
    for (long j = 1; j <= X.cols(); ++j) header += (j > 1 ? "," : "") + std::string("x") + std::to_string(j);
    for (long j = 1; j <= A.cols(); ++j) header += ",a" + std::to_string(j);
    header += ",y";
    if (fbar) header += ",fbar";
    out << header << '\n';
    std::vector<const Vec*> vecs{&Y};
    if (fbar) vecs.push_back(fbar);
    write_rows(out, {&X, &A}, vecs);
}

void write_unlabeled_csv(const std::string& path, const Mat& X) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write csv: " + path);
    std::string header;
    for (long j = 1; j <= X.cols(); ++j) header += (j > 1 ? "," : "") + std::string("x") + std::to_string(j);
    out << header << '\n';
    write_rows(out, {&X}, {});
}

void write_prediction_csv(const std::string& path, const Vec& pred) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write csv: " + path);
    out << "pred\n";
    write_rows(out, {}, {&pred});
}

Mat Standardizer::apply_x(const Mat& X) const {
    if (X.cols() != x_mean.size()) throw InputError("standardizer: x width mismatch");
    return (X.rowwise() - x_mean.transpose()).array().rowwise() / x_sd.transpose().array();
}

Mat Standardizer::apply_a(const Mat& A) const {
    if (A.cols() != a_mean.size()) throw InputError("standardizer: a width mismatch");
    return (A.rowwise() - a_mean.transpose()).array().rowwise() / a_sd.transpose().array();
}

Standardizer fit_standardizer(const Mat& X, const Mat& A) {
    Standardizer s;
    auto fit_cols = [](const Mat& m, Vec& mean, Vec& sd) {
        mean = m.colwise().mean();
        sd.resize(m.cols());
        for (long j = 0; j < m.cols(); ++j) {
            double v = (m.col(j).array() - mean(j)).square().sum() /
                       std::max<long>(1, m.rows() - 1);
            sd(j) = std::sqrt(v);
            if (sd(j) < 1e-12) sd(j) = 1.0;  // constant column
        }
    };
    fit_cols(X, s.x_mean, s.x_sd);
    if (A.cols() > 0) fit_cols(A, s.a_mean, s.a_sd);
    return s;
}

void standardizer_to_json(nlohmann::json& j, const Standardizer& s) {
    auto vec = [](const Vec& v) {
        return std::vector<double>(v.data(), v.data() + v.size());
    };
    j = nlohmann::json{{"x_mean", vec(s.x_mean)},
                       {"x_sd", vec(s.x_sd)},
                       {"a_mean", vec(s.a_mean)},
                       {"a_sd", vec(s.a_sd)}};
}

Standardizer standardizer_from_json(const nlohmann::json& j) {
    Standardizer s;
    auto vec = [&](const char* key) {
        auto v = j.at(key).get<std::vector<double>>();
        return Eigen::Map<Vec>(v.data(), static_cast<long>(v.size())).eval();
    };
    s.x_mean = vec("x_mean");
    s.x_sd = vec("x_sd");
    s.a_mean = vec("a_mean");
    s.a_sd = vec("a_sd");
    return s;
}

}  // namespace drum::dataset
