#pragma once

#include "lsocv/dataset.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace lsocv::cli {

struct ParsedDataset {
    LongitudinalDataset data;
    std::vector<std::string> dropped;  // subject ids removed by the min-obs filter
};

// CSV with a header. Required columns subject_id and y, optional time; every
// other column is a numeric covariate. Rows are grouped by subject_id in order of
// first appearance, keeping file order within a subject.
ParsedDataset read_dataset(std::istream& in, int min_obs = 1);
ParsedDataset read_dataset(const std::string& path, int min_obs = 1);

// Writes the same layout with enough digits to reproduce every value exactly.
void write_dataset(std::ostream& out, const LongitudinalDataset& data);
void write_dataset(const std::string& path, const LongitudinalDataset& data);

void write_text(const std::string& path, const std::string& text);

}  // namespace lsocv::cli
