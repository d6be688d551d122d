#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dcpl/config.hpp"
#include "dcpl/harness.hpp"

namespace dcpl::report {

inline constexpr const char* kLibraryVersion = "dcpl 0.1.0";

using config::Json;
using harness::RunRecord;

// Self-describing run record. Wall-clock time is deliberately absent so that
// records are byte-stable.
Json record_to_json(const RunRecord& record, const Json& config, const std::string& config_hash);
RunRecord record_from_json(const Json& doc);

// protocol,dataset,variant,seed,acc_base,acc_novel,hm; one row per cell.
// Transfer protocols have no novel split: acc_novel and hm are "NA".
void write_csv(std::ostream& os, std::span<const RunRecord> records);

struct CsvRow {
    std::string protocol, dataset, variant;
    std::uint64_t seed = 0;
    double acc_base = 0.0;
    std::optional<double> acc_novel, hm;
};
std::vector<CsvRow> read_csv(std::istream& is);

// The headline per-dataset number: HM for base-to-novel, accuracy otherwise.
double headline(const harness::Metrics& m, const std::string& protocol);

// Grouped bars of per-dataset headline deltas of every record against the
// record labelled `baseline`; absolute values when there is no such record.
std::string delta_svg(std::span<const RunRecord> records, const std::string& baseline, const std::string& title);

struct TableRow {
    std::string name;
    const RunRecord* record = nullptr;
};
// method,<dataset>...,acc_base,acc_novel,hm from seed-averaged metrics.
void write_table(std::ostream& os, std::span<const TableRow> rows);

struct TrendCheck {
    std::string name;
    double lhs = 0.0, rhs = 0.0;
    bool pass() const { return lhs >= rhs; }
};
void write_checks(std::ostream& os, std::span<const TrendCheck> checks);

std::string record_filename(const RunRecord& record);

// metrics.csv, one run_<protocol>_<label>.json per record and chart.svg.
void write_report(std::span<const RunRecord> records, const Json& config, const std::string& config_hash,
                  const std::filesystem::path& dir, const std::string& baseline, const std::string& title);

// Writes `text` to `path`; IO failures are data errors naming the path.
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace dcpl::report
