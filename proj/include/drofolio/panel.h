#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "drofolio/types.h"

namespace drofolio {

/// p x T matrix of per-period excess returns. Row i is asset_ids[i],
/// column t is time_index[t].
struct ReturnPanel {
    Matrix returns;
    std::vector<std::string> asset_ids;
    std::vector<std::string> time_index;

    Index num_assets() const { return returns.rows(); }
    Index num_periods() const { return returns.cols(); }

    /// Throws DataError unless p >= 2, T >= 4, all entries are finite, labels
    /// match the matrix shape and time_index is strictly increasing.
    void validate() const;

    /// Columns [begin, end) as a new panel.
    ReturnPanel slice_periods(Index begin, Index end) const;
};

/// Panel with generated labels: assets "A1".."Ap", periods "1".."T".
ReturnPanel make_panel(Matrix returns);

/// Orders two time labels: numerically when both parse as numbers,
/// lexicographically otherwise (ISO-8601 dates sort correctly that way).
bool time_label_less(const std::string& a, const std::string& b);

enum class MissingPolicy {
    reject,       // any empty/NA cell aborts ingestion with the line number
    drop_assets,  // assets with any missing cell are removed from the panel
};

/// CSV layout: header row "<time label>,<asset id>,...", then one row per
/// period with the timestamp in the first column. Lines starting with '#'
/// are ignored.
ReturnPanel parse_panel_csv(std::istream& in, MissingPolicy policy = MissingPolicy::reject);
ReturnPanel read_panel_csv(const std::filesystem::path& path,
                           MissingPolicy policy = MissingPolicy::reject);
void write_panel_csv(std::ostream& out, const ReturnPanel& panel);

}  // namespace drofolio
