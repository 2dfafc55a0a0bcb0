#include "lsocv/dataset.hpp"

#include "lsocv/errors.hpp"

#include <algorithm>

namespace lsocv {

LongitudinalDataset::LongitudinalDataset(std::vector<std::string> covariate_names,
                                         std::vector<Subject> subjects)
    : covariate_names_(std::move(covariate_names)), subjects_(std::move(subjects)) {
    if (subjects_.empty())
        throw InvalidArgument("dataset has no subjects");
    has_times_ = subjects_.front().times.size() > 0;
    const auto ncov = static_cast<Eigen::Index>(covariate_names_.size());
    offsets_.reserve(subjects_.size() + 1);
    for (const auto& s : subjects_) {
        if (s.y.size() < 1)
            throw InvalidArgument("subject '" + s.id + "' has no observations");
        if (s.covariates.rows() != s.y.size() || s.covariates.cols() != ncov)
            throw InvalidArgument("subject '" + s.id + "' covariate block is not " +
                                  std::to_string(s.y.size()) + " x " + std::to_string(ncov));
        if ((s.times.size() > 0) != has_times_ || (has_times_ && s.times.size() != s.y.size()))
            throw InvalidArgument("subject '" + s.id + "' has inconsistent observation times");
        offsets_.push_back(offsets_.back() + s.y.size());
    }
}

std::vector<Eigen::Index> LongitudinalDataset::cluster_sizes() const {
    std::vector<Eigen::Index> sizes;
    sizes.reserve(subjects_.size());
    for (const auto& s : subjects_) sizes.push_back(s.size());
    return sizes;
}

bool LongitudinalDataset::has_covariate(const std::string& name) const {
    if (name == "time") return has_times_;
    return std::find(covariate_names_.begin(), covariate_names_.end(), name) != covariate_names_.end();
}

Eigen::VectorXd LongitudinalDataset::response() const {
    Eigen::VectorXd out(total_obs());
    for (std::size_t i = 0; i < subjects_.size(); ++i)
        out.segment(offsets_[i], subjects_[i].size()) = subjects_[i].y;
    return out;
}

Eigen::VectorXd LongitudinalDataset::column(const std::string& name) const {
    Eigen::VectorXd out(total_obs());
    if (name == "time") {
        if (!has_times_) throw InvalidArgument("dataset has no time column");
        for (std::size_t i = 0; i < subjects_.size(); ++i)
            out.segment(offsets_[i], subjects_[i].size()) = subjects_[i].times;
        return out;
    }
    const auto it = std::find(covariate_names_.begin(), covariate_names_.end(), name);
    if (it == covariate_names_.end())
        throw InvalidArgument("missing covariate '" + name + "'");
    const auto c = static_cast<Eigen::Index>(it - covariate_names_.begin());
    for (std::size_t i = 0; i < subjects_.size(); ++i)
        out.segment(offsets_[i], subjects_[i].size()) = subjects_[i].covariates.col(c);
    return out;
}

LongitudinalDataset LongitudinalDataset::subset(std::span<const std::size_t> indices) const {
    std::vector<Subject> picked;
    picked.reserve(indices.size());
    for (auto i : indices) picked.push_back(subjects_.at(i));
    return LongitudinalDataset(covariate_names_, std::move(picked));
}

std::vector<Eigen::VectorXd> split_by_subject(const Eigen::VectorXd& stacked,
                                              const std::vector<Eigen::Index>& offsets) {
    if (offsets.empty() || stacked.size() != offsets.back())
        throw InvalidArgument("stacked vector does not match subject offsets");
    std::vector<Eigen::VectorXd> out;
    out.reserve(offsets.size() - 1);
    for (std::size_t i = 0; i + 1 < offsets.size(); ++i)
        out.emplace_back(stacked.segment(offsets[i], offsets[i + 1] - offsets[i]));
    return out;
}

}  // namespace lsocv
