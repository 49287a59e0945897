#include "drofolio/panel.h"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <string_view>

#include "drofolio/report_io.h"

namespace drofolio {

namespace {

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        fields.push_back(trim(line.substr(start, comma - start)));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return fields;
}

std::optional<double> parse_number(std::string_view s) {
    if (s.empty()) return std::nullopt;
    if (s.front() == '+') s.remove_prefix(1);
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
    return value;
}

bool is_missing(std::string_view cell) {
    return cell.empty() || cell == "NA" || cell == "na" || cell == "NaN" || cell == "nan" ||
           cell == "null";
}

}  // namespace

void ReturnPanel::validate() const {
    const Index p = num_assets();
    const Index t = num_periods();
    if (p < 2) throw DataError("panel needs at least 2 assets, got " + std::to_string(p));
    if (t < 4) throw DataError("panel needs at least 4 periods, got " + std::to_string(t));
    if (static_cast<Index>(asset_ids.size()) != p)
        throw DataError("panel has " + std::to_string(asset_ids.size()) + " asset ids for " +
                        std::to_string(p) + " rows");
    if (static_cast<Index>(time_index.size()) != t)
        throw DataError("panel has " + std::to_string(time_index.size()) + " time labels for " +
                        std::to_string(t) + " columns");
    if (!returns.allFinite()) throw DataError("panel contains non-finite returns");
    for (std::size_t i = 1; i < time_index.size(); ++i) {
        if (!time_label_less(time_index[i - 1], time_index[i]))
            throw DataError("time index not strictly increasing at '" + time_index[i] + "'");
    }
}

ReturnPanel ReturnPanel::slice_periods(Index begin, Index end) const {
    if (begin < 0 || end > num_periods() || begin >= end)
        throw std::out_of_range("slice_periods: bad range [" + std::to_string(begin) + ", " +
                                std::to_string(end) + ")");
    ReturnPanel out;
    out.returns = returns.middleCols(begin, end - begin);
    out.asset_ids = asset_ids;
    out.time_index.assign(time_index.begin() + begin, time_index.begin() + end);
    return out;
}

ReturnPanel make_panel(Matrix returns) {
    ReturnPanel panel;
    panel.asset_ids.reserve(returns.rows());
    for (Index i = 0; i < returns.rows(); ++i) panel.asset_ids.push_back("A" + std::to_string(i + 1));
    panel.time_index.reserve(returns.cols());
    for (Index t = 0; t < returns.cols(); ++t) panel.time_index.push_back(std::to_string(t + 1));
    panel.returns = std::move(returns);
    return panel;
}

bool time_label_less(const std::string& a, const std::string& b) {
    const auto na = parse_number(a);
    const auto nb = parse_number(b);
    if (na && nb) return *na < *nb;
    return a < b;
}

ReturnPanel parse_panel_csv(std::istream& in, MissingPolicy policy) {
    std::string line;
    std::size_t line_no = 0;
    std::vector<std::string> ids;
    bool have_header = false;

    std::vector<std::string> times;
    std::vector<std::vector<double>> rows;  // per period
    std::vector<bool> asset_missing;

    while (std::getline(in, line)) {
        ++line_no;
        const auto view = trim(line);
        if (view.empty() || view.front() == '#') continue;
        const auto fields = split_fields(view);
        if (!have_header) {
            if (fields.size() < 2)
                throw DataError("line " + std::to_string(line_no) + ": header needs a time column and asset ids");
            for (std::size_t j = 1; j < fields.size(); ++j) {
                if (fields[j].empty())
                    throw DataError("line " + std::to_string(line_no) + ": empty asset id in column " +
                                    std::to_string(j + 1));
                ids.emplace_back(fields[j]);
            }
            asset_missing.assign(ids.size(), false);
            have_header = true;
            continue;
        }
        if (fields.size() > ids.size() + 1)
            throw DataError("line " + std::to_string(line_no) + ": " + std::to_string(fields.size()) +
                            " cells but header has " + std::to_string(ids.size() + 1));
        if (fields[0].empty()) throw DataError("line " + std::to_string(line_no) + ": missing timestamp");

        std::vector<double> values(ids.size(), std::numeric_limits<double>::quiet_NaN());
        for (std::size_t j = 0; j < ids.size(); ++j) {
            const std::string_view cell = j + 1 < fields.size() ? fields[j + 1] : std::string_view{};
            if (is_missing(cell)) {
                if (policy == MissingPolicy::reject)
                    throw DataError("line " + std::to_string(line_no) + ": missing value for asset '" +
                                    ids[j] + "'");
                asset_missing[j] = true;
                continue;
            }
            const auto v = parse_number(cell);
            if (!v || !std::isfinite(*v))
                throw DataError("line " + std::to_string(line_no) + ": cannot parse '" + std::string(cell) +
                                "' for asset '" + ids[j] + "'");
            values[j] = *v;
        }
        times.emplace_back(fields[0]);
        rows.push_back(std::move(values));
    }
    if (!have_header) throw DataError("CSV input is empty");

    std::vector<std::size_t> keep;
    for (std::size_t j = 0; j < ids.size(); ++j)
        if (!asset_missing[j]) keep.push_back(j);

    ReturnPanel panel;
    panel.returns.resize(static_cast<Index>(keep.size()), static_cast<Index>(rows.size()));
    for (std::size_t k = 0; k < keep.size(); ++k) {
        panel.asset_ids.push_back(ids[keep[k]]);
        for (std::size_t t = 0; t < rows.size(); ++t)
            panel.returns(static_cast<Index>(k), static_cast<Index>(t)) = rows[t][keep[k]];
    }
    panel.time_index = std::move(times);
    panel.validate();
    return panel;
}

ReturnPanel read_panel_csv(const std::filesystem::path& path, MissingPolicy policy) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path.string() + "'");
    return parse_panel_csv(in, policy);
}

void write_panel_csv(std::ostream& out, const ReturnPanel& panel) {
    out << "time";
    for (const auto& id : panel.asset_ids) out << ',' << id;
    out << '\n';
    for (Index t = 0; t < panel.num_periods(); ++t) {
        out << panel.time_index[static_cast<std::size_t>(t)];
        for (Index i = 0; i < panel.num_assets(); ++i) out << ',' << format_double(panel.returns(i, t));
        out << '\n';
    }
}

}  // namespace drofolio
