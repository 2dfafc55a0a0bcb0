#include "io.hpp"

#include "config.hpp"
#include "lsocv/errors.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

namespace lsocv::cli {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    std::string t = s.substr(b, e - b + 1);
    if (t.size() >= 2 && t.front() == '"' && t.back() == '"') t = t.substr(1, t.size() - 2);
    return t;
}

std::vector<std::string> fields(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) out.push_back(trim(cell));
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

}  // namespace

ParsedDataset read_dataset(std::istream& in, int min_obs) {
    std::string line;
    std::size_t line_no = 0;
    std::vector<std::string> header;
    while (std::getline(in, line)) {
        ++line_no;
        if (line_no == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
        if (!trim(line).empty()) {
            header = fields(line);
            break;
        }
    }
    if (header.empty()) throw InvalidArgument("dataset is empty");

    int id_col = -1, y_col = -1, time_col = -1;
    std::vector<int> cov_cols;
    std::vector<std::string> cov_names;
    for (std::size_t c = 0; c < header.size(); ++c) {
        const std::string& h = header[c];
        const int ci = static_cast<int>(c);
        if (h.empty()) throw InvalidArgument("dataset header has an empty column name");
        if (std::count(header.begin(), header.end(), h) > 1)
            throw InvalidArgument("dataset header repeats column '" + h + "'");
        if (h == "subject_id")
            id_col = ci;
        else if (h == "y")
            y_col = ci;
        else if (h == "time")
            time_col = ci;
        else {
            cov_cols.push_back(ci);
            cov_names.push_back(h);
        }
    }
    if (id_col < 0) throw InvalidArgument("dataset is missing the subject_id column");
    if (y_col < 0) throw InvalidArgument("dataset is missing the y column");

    struct Rows {
        std::vector<double> y, t;
        std::vector<std::vector<double>> x;
    };
    std::vector<std::string> order;
    std::map<std::string, Rows> groups;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto f = fields(line);
        if (f.size() != header.size())
            throw InvalidArgument("line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                                  " fields, found " + std::to_string(f.size()));
        const std::string& id = f[static_cast<std::size_t>(id_col)];
        if (id.empty()) throw InvalidArgument("line " + std::to_string(line_no) + ": empty subject_id");
        auto [it, inserted] = groups.try_emplace(id);
        if (inserted) order.push_back(id);
        const std::string where = "line " + std::to_string(line_no);
        it->second.y.push_back(parse_double(f[static_cast<std::size_t>(y_col)], where + ", column y"));
        if (time_col >= 0)
            it->second.t.push_back(parse_double(f[static_cast<std::size_t>(time_col)], where + ", column time"));
        std::vector<double> x;
        for (std::size_t k = 0; k < cov_cols.size(); ++k)
            x.push_back(parse_double(f[static_cast<std::size_t>(cov_cols[k])], where + ", column " + cov_names[k]));
        it->second.x.push_back(std::move(x));
    }
    if (order.empty()) throw InvalidArgument("dataset has a header but no rows");

    ParsedDataset out;
    std::vector<Subject> subjects;
    for (const auto& id : order) {
        const Rows& r = groups.at(id);
        const auto k = static_cast<Eigen::Index>(r.y.size());
        if (k < min_obs) {
            out.dropped.push_back(id);
            continue;
        }
        Subject s;
        s.id = id;
        s.y = Eigen::Map<const Eigen::VectorXd>(r.y.data(), k);
        if (time_col >= 0) s.times = Eigen::Map<const Eigen::VectorXd>(r.t.data(), k);
        s.covariates.resize(k, static_cast<Eigen::Index>(cov_cols.size()));
        for (Eigen::Index j = 0; j < k; ++j)
            for (std::size_t c = 0; c < cov_cols.size(); ++c)
                s.covariates(j, static_cast<Eigen::Index>(c)) = r.x[static_cast<std::size_t>(j)][c];
        subjects.push_back(std::move(s));
    }
    if (subjects.empty()) throw InvalidArgument("no subjects left after the min-obs filter");
    out.data = LongitudinalDataset(cov_names, std::move(subjects));
    return out;
}

ParsedDataset read_dataset(const std::string& path, int min_obs) {
    std::ifstream in(path);
    if (!in) throw InvalidArgument("cannot open dataset '" + path + "'");
    return read_dataset(in, min_obs);
}

void write_dataset(std::ostream& out, const LongitudinalDataset& data) {
    out.precision(17);
    out << "subject_id,y";
    if (data.has_times()) out << ",time";
    for (const auto& name : data.covariate_names()) out << ',' << name;
    out << '\n';
    for (const auto& s : data.subjects()) {
        for (Eigen::Index j = 0; j < s.size(); ++j) {
            out << s.id << ',' << s.y(j);
            if (data.has_times()) out << ',' << s.times(j);
            for (Eigen::Index c = 0; c < s.covariates.cols(); ++c) out << ',' << s.covariates(j, c);
            out << '\n';
        }
    }
}

void write_dataset(const std::string& path, const LongitudinalDataset& data) {
    std::ofstream out(path);
    if (!out) throw InvalidArgument("cannot write '" + path + "'");
    write_dataset(out, data);
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InvalidArgument("cannot write '" + path + "'");
    out << text;
}

}  // namespace lsocv::cli
