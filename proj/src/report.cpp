#include "dcpl/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "dcpl/errors.hpp"

namespace dcpl::report {

namespace {

Json metrics_json(const harness::Metrics& m, bool has_novel) {
    Json j{{"acc_base", m.acc_base}};
    j["acc_novel"] = has_novel ? Json(m.acc_novel) : Json(nullptr);
    j["hm"] = has_novel ? Json(m.hm) : Json(nullptr);
    return j;
}

harness::Metrics metrics_from(const Json& j) {
    harness::Metrics m;
    m.acc_base = j.at("acc_base").get<double>();
    if (!j.at("acc_novel").is_null()) m.acc_novel = j.at("acc_novel").get<double>();
    if (!j.at("hm").is_null()) m.hm = j.at("hm").get<double>();
    return m;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

std::string fmt2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

bool has_novel(const RunRecord& r) { return r.cells.empty() || r.cells.front().has_novel; }

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

}  // namespace

Json record_to_json(const RunRecord& r, const Json& config, const std::string& config_hash) {
    const bool novel = has_novel(r);
    Json cells = Json::array();
    std::vector<std::uint64_t> seeds;
    for (const auto& c : r.cells) {
        Json j = metrics_json(c.metrics, c.has_novel);
        j["dataset"] = c.dataset;
        j["seed"] = c.seed;
        j["epoch_loss"] = c.epoch_loss;
        cells.push_back(std::move(j));
        if (std::find(seeds.begin(), seeds.end(), c.seed) == seeds.end()) seeds.push_back(c.seed);
    }
    Json datasets = Json::array();
    for (const auto& name : r.dataset_order) {
        Json j = metrics_json(r.per_dataset.at(name), novel);
        j["name"] = name;
        datasets.push_back(std::move(j));
    }
    return Json{{"format", "dcpl-run-record"},
                {"library", kLibraryVersion},
                {"config_hash", config_hash},
                {"config", config},
                {"protocol", r.protocol},
                {"label", r.label},
                {"variant", r.variant},
                {"seeds", seeds},
                {"datasets", datasets},
                {"aggregate", metrics_json(r.aggregate, novel)},
                {"cells", cells},
                {"audit",
                 {{"steps", r.audit.steps},
                  {"samples", r.audit.samples},
                  {"novel_samples", r.audit.novel_samples},
                  {"frozen_with_grad", r.audit.frozen_with_grad}}}};
}

RunRecord record_from_json(const Json& doc) {
    try {
        if (doc.at("format") != "dcpl-run-record") throw FormatError("not a run record");
        RunRecord r;
        r.protocol = doc.at("protocol").get<std::string>();
        r.label = doc.at("label").get<std::string>();
        r.variant = doc.at("variant").get<std::string>();
        for (const auto& d : doc.at("datasets")) {
            const auto name = d.at("name").get<std::string>();
            r.dataset_order.push_back(name);
            r.per_dataset[name] = metrics_from(d);
        }
        r.aggregate = metrics_from(doc.at("aggregate"));
        for (const auto& c : doc.at("cells")) {
            harness::CellResult cell;
            cell.dataset = c.at("dataset").get<std::string>();
            cell.seed = c.at("seed").get<std::uint64_t>();
            cell.metrics = metrics_from(c);
            cell.has_novel = !c.at("acc_novel").is_null();
            cell.epoch_loss = c.at("epoch_loss").get<std::vector<double>>();
            r.cells.push_back(std::move(cell));
        }
        const Json& a = doc.at("audit");
        r.audit.steps = a.at("steps").get<std::size_t>();
        r.audit.samples = a.at("samples").get<std::size_t>();
        r.audit.novel_samples = a.at("novel_samples").get<std::size_t>();
        r.audit.frozen_with_grad = a.at("frozen_with_grad").get<std::size_t>();
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("run record: ") + e.what());
    }
}

void write_csv(std::ostream& os, std::span<const RunRecord> records) {
    os << "protocol,dataset,variant,seed,acc_base,acc_novel,hm\n";
    for (const auto& r : records)
        for (const auto& c : r.cells) {
            os << r.protocol << ',' << c.dataset << ',' << r.label << ',' << c.seed << ',' << fmt(c.metrics.acc_base) << ',';
            if (c.has_novel)
                os << fmt(c.metrics.acc_novel) << ',' << fmt(c.metrics.hm) << '\n';
            else
                os << "NA,NA\n";
        }
}

std::vector<CsvRow> read_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line != "protocol,dataset,variant,seed,acc_base,acc_novel,hm")
        throw FormatError("metrics CSV: bad header");
    std::vector<CsvRow> rows;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        if (f.size() != 7) throw FormatError("metrics CSV: expected 7 fields in '" + line + "'");
        auto num = [&](const std::string& s) -> std::optional<double> {
            if (s == "NA") return std::nullopt;
            try {
                return std::stod(s);
            } catch (const std::exception&) {
                throw FormatError("metrics CSV: bad number '" + s + "'");
            }
        };
        CsvRow r{f[0], f[1], f[2], std::stoull(f[3]), 0.0, num(f[5]), num(f[6])};
        const auto base = num(f[4]);
        if (!base) throw FormatError("metrics CSV: acc_base missing");
        r.acc_base = *base;
        rows.push_back(std::move(r));
    }
    return rows;
}

double headline(const harness::Metrics& m, const std::string& protocol) {
    return protocol == "base_to_novel" ? m.hm : m.acc_base;
}

std::string delta_svg(std::span<const RunRecord> records, const std::string& baseline, const std::string& title) {
    const RunRecord* base = nullptr;
    for (const auto& r : records)
        if (r.label == baseline) base = &r;
    std::vector<const RunRecord*> series;
    for (const auto& r : records)
        if (&r != base) series.push_back(&r);
    std::vector<std::string> datasets;
    for (const auto* r : series)
        for (const auto& d : r->dataset_order)
            if (std::find(datasets.begin(), datasets.end(), d) == datasets.end()) datasets.push_back(d);
    datasets.push_back("average");

    auto value = [&](const RunRecord& r, const std::string& d) -> std::optional<double> {
        if (d == "average") return headline(r.aggregate, r.protocol);
        auto it = r.per_dataset.find(d);
        if (it == r.per_dataset.end()) return std::nullopt;
        return headline(it->second, r.protocol);
    };
    std::vector<std::vector<std::optional<double>>> v(series.size(), std::vector<std::optional<double>>(datasets.size()));
    double lo = 0.0, hi = 0.0;
    for (std::size_t s = 0; s < series.size(); ++s)
        for (std::size_t d = 0; d < datasets.size(); ++d) {
            auto x = value(*series[s], datasets[d]);
            if (x && base) {
                auto b = value(*base, datasets[d]);
                x = b ? std::optional<double>(*x - *b) : std::nullopt;
            }
            v[s][d] = x;
            if (x) lo = std::min(lo, *x), hi = std::max(hi, *x);
        }
    if (hi - lo < 1e-9) hi = lo + 1.0;
    const double pad = 0.1 * (hi - lo);
    lo -= lo < 0.0 ? pad : 0.0;
    hi += pad;

    const int left = 60, top = 40, plot_h = 240, group_w = std::max<int>(40, 24 * static_cast<int>(series.size()) + 16);
    const int width = left + group_w * static_cast<int>(datasets.size()) + 180, height = top + plot_h + 80;
    auto y_of = [&](double x) { return top + plot_h * (hi - x) / (hi - lo); };
    static const char* colours[] = {"#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#ff9da7", "#9c755f"};

    std::ostringstream os;
    os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\" viewBox=\"0 0 "
       << width << ' ' << height << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    const std::string metric = !records.empty() && records.front().protocol == "base_to_novel" ? "HM" : "accuracy";
    os << "<text x=\"" << left << "\" y=\"20\" font-size=\"14\">" << xml_escape(title) << "</text>\n";
    os << "<text x=\"12\" y=\"" << top + plot_h / 2 << "\" transform=\"rotate(-90 12 " << top + plot_h / 2
       << ")\" text-anchor=\"middle\">" << (base ? "\xce\x94 " : "") << metric << (base ? " vs " + xml_escape(baseline) : "")
       << "</text>\n";
    const double zero = y_of(0.0);
    os << "<line x1=\"" << left << "\" y1=\"" << fmt2(zero) << "\" x2=\"" << left + group_w * static_cast<int>(datasets.size())
       << "\" y2=\"" << fmt2(zero) << "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double x = lo + (hi - lo) * t / 4.0;
        os << "<text x=\"" << left - 4 << "\" y=\"" << fmt2(y_of(x) + 4) << "\" text-anchor=\"end\">" << fmt2(x) << "</text>\n";
    }
    for (std::size_t d = 0; d < datasets.size(); ++d) {
        const int gx = left + group_w * static_cast<int>(d) + 8;
        for (std::size_t s = 0; s < series.size(); ++s) {
            if (!v[s][d]) continue;
            const double y = y_of(*v[s][d]);
            os << "<rect x=\"" << gx + 24 * static_cast<int>(s) << "\" y=\"" << fmt2(std::min(y, zero)) << "\" width=\"20\" height=\""
               << fmt2(std::abs(zero - y)) << "\" fill=\"" << colours[s % 9] << "\"><title>" << xml_escape(series[s]->label)
               << " " << xml_escape(datasets[d]) << ": " << fmt2(*v[s][d]) << "</title></rect>\n";
        }
        os << "<text x=\"" << gx + group_w / 2 - 8 << "\" y=\"" << top + plot_h + 16 << "\" text-anchor=\"middle\">"
           << xml_escape(datasets[d]) << "</text>\n";
    }
    const int lx = left + group_w * static_cast<int>(datasets.size()) + 20;
    for (std::size_t s = 0; s < series.size(); ++s) {
        const int ly = top + 16 * static_cast<int>(s);
        os << "<rect x=\"" << lx << "\" y=\"" << ly << "\" width=\"10\" height=\"10\" fill=\"" << colours[s % 9] << "\"/>\n";
        os << "<text x=\"" << lx + 14 << "\" y=\"" << ly + 9 << "\">" << xml_escape(series[s]->label) << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

void write_table(std::ostream& os, std::span<const TableRow> rows) {
    std::vector<std::string> datasets;
    for (const auto& row : rows)
        for (const auto& d : row.record->dataset_order)
            if (std::find(datasets.begin(), datasets.end(), d) == datasets.end()) datasets.push_back(d);
    os << "method";
    for (const auto& d : datasets) os << ',' << d;
    os << ",acc_base,acc_novel,hm\n";
    for (const auto& row : rows) {
        const RunRecord& r = *row.record;
        os << row.name;
        for (const auto& d : datasets) {
            auto it = r.per_dataset.find(d);
            os << ',' << (it == r.per_dataset.end() ? std::string("NA") : fmt2(headline(it->second, r.protocol)));
        }
        os << ',' << fmt2(r.aggregate.acc_base) << ',' << fmt2(r.aggregate.acc_novel) << ',' << fmt2(r.aggregate.hm) << '\n';
    }
}

void write_checks(std::ostream& os, std::span<const TrendCheck> checks) {
    os << "check,lhs,rhs,status\n";
    for (const auto& c : checks) os << c.name << ',' << fmt(c.lhs) << ',' << fmt(c.rhs) << ',' << (c.pass() ? "ok" : "VIOLATED") << '\n';
}

std::string record_filename(const RunRecord& r) { return "run_" + r.protocol + "_" + r.label + ".json"; }

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot write " + path.string());
    os << text;
    if (!os) throw DataError("write failed for " + path.string());
}

void write_report(std::span<const RunRecord> records, const Json& config, const std::string& config_hash,
                  const std::filesystem::path& dir, const std::string& baseline, const std::string& title) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
    std::ostringstream csv;
    write_csv(csv, records);
    write_text(dir / "metrics.csv", csv.str());
    for (const auto& r : records) write_text(dir / record_filename(r), record_to_json(r, config, config_hash).dump(2) + "\n");
    write_text(dir / "chart.svg", delta_svg(records, baseline, title));
}

}  // namespace dcpl::report
