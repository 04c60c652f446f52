#pragma once

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtif/dataset.hpp"
#include "mtif/errors.hpp"
#include "mtif/random.hpp"

namespace mtif {

/// Shortest round-trippable decimal form of a double.
inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

/// 16-hex-digit fingerprint of a canonical (sorted-key, compact) JSON dump.
inline std::string config_hash_hex(const nlohmann::json& j) {
    std::uint64_t h = fnv1a64(j.dump());
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    size_t start = 0;
    while (true) {
        size_t pos = line.find(',', start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

inline double parse_double(std::string_view f, long line_no) {
    double v;
    auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
    if (ec != std::errc() || p != f.data() + f.size())
        throw ParseError(line_no, "expected a number, got '" + std::string(f) + "'");
    return v;
}

inline int parse_int(std::string_view f, long line_no) {
    int v;
    auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
    if (ec != std::errc() || p != f.data() + f.size())
        throw ParseError(line_no, "expected an integer, got '" + std::string(f) + "'");
    return v;
}

inline std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw MissingInput("cannot open for writing: " + path);
    return out;
}

inline std::ifstream open_in(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MissingInput("cannot open: " + path);
    return in;
}

}  // namespace detail

/// Dataset CSV: header `task_id,split,label,f0..f{d-1}`, one row per sample,
/// tasks in index order with splits in train/val/test order. Lines starting
/// with '#' are comments; a `# config_hash=<hex>` comment records the run
/// fingerprint. Full `%.17g` precision makes save/load an exact round trip.
inline void save_dataset_csv(const MtlDataset& ds, const std::string& path,
                             const std::string& config_hash = "") {
    auto out = detail::open_out(path);
    if (!config_hash.empty()) out << "# config_hash=" << config_hash << "\n";
    out << "task_id,split,label";
    for (int j = 0; j < ds.dim; ++j) out << ",f" << j;
    out << "\n";
    for (int k = 0; k < ds.task_count(); ++k)
        for (SplitKind s : {SplitKind::train, SplitKind::val, SplitKind::test})
            for (const auto& z : ds.tasks[k].split(s)) {
                out << k << ',' << split_name(s) << ',' << format_double(z.y);
                for (int j = 0; j < ds.dim; ++j) out << ',' << format_double(z.x[j]);
                out << "\n";
            }
}

inline MtlDataset load_dataset_csv(const std::string& path) {
    auto in = detail::open_in(path);
    std::string line;
    long line_no = 0;
    std::string config_hash;

    auto next_content_line = [&]() -> bool {
        while (std::getline(in, line)) {
            ++line_no;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;
            if (line[0] == '#') {
                constexpr std::string_view tag = "# config_hash=";
                if (line.rfind(tag, 0) == 0) config_hash = line.substr(tag.size());
                continue;
            }
            return true;
        }
        return false;
    };

    if (!next_content_line()) throw SchemaError("empty dataset file: " + path);
    auto header = detail::split_fields(line);
    if (header.size() < 4 || header[0] != "task_id" || header[1] != "split" ||
        header[2] != "label")
        throw SchemaError("dataset header must start with task_id,split,label,f0,...");
    const int dim = static_cast<int>(header.size()) - 3;

    std::map<int, TaskData> tasks;
    while (next_content_line()) {
        auto f = detail::split_fields(line);
        if (static_cast<int>(f.size()) != dim + 3)
            throw SchemaError("row at line " + std::to_string(line_no) + " has " +
                              std::to_string(f.size()) + " fields, expected " +
                              std::to_string(dim + 3));
        int task_id = detail::parse_int(f[0], line_no);
        if (task_id < 0) throw ParseError(line_no, "negative task_id");
        Sample z;
        z.y = detail::parse_double(f[2], line_no);
        z.x.resize(dim);
        for (int j = 0; j < dim; ++j) z.x[j] = detail::parse_double(f[3 + j], line_no);

        auto& t = tasks[task_id];
        if (f[1] == "train")
            t.train.push_back(std::move(z));
        else if (f[1] == "val")
            t.val.push_back(std::move(z));
        else if (f[1] == "test")
            t.test.push_back(std::move(z));
        else
            throw ParseError(line_no, "split must be train/val/test, got '" + std::string(f[1]) +
                                          "'");
    }
    if (tasks.empty()) throw SchemaError("dataset file has no sample rows: " + path);

    MtlDataset ds;
    ds.dim = dim;
    for (auto& [id, t] : tasks) {
        t.name = "task" + std::to_string(id);
        ds.tasks.push_back(std::move(t));
    }
    ds.provenance["source_csv"] = path;
    if (!config_hash.empty()) ds.provenance["config_hash"] = config_hash;
    return ds;
}

inline MtlDataset load_csv(const std::string& path) { return load_dataset_csv(path); }

/// CSV plus a `<path>.meta.json` sidecar carrying the provenance record.
inline void save_dataset(const MtlDataset& ds, const std::string& path,
                         const std::string& config_hash = "") {
    save_dataset_csv(ds, path, config_hash);
    auto out = detail::open_out(path + ".meta.json");
    out << ds.provenance.dump(2) << "\n";
}

inline MtlDataset load_dataset(const std::string& path) {
    MtlDataset ds = load_dataset_csv(path);
    std::string meta = path + ".meta.json";
    if (std::filesystem::exists(meta)) {
        auto in = detail::open_in(meta);
        nlohmann::json prov = nlohmann::json::parse(in, nullptr, false);
        if (prov.is_discarded()) throw SchemaError("invalid JSON in " + meta);
        prov["source_csv"] = path;
        if (ds.provenance.contains("config_hash"))
            prov["config_hash"] = ds.provenance["config_hash"];
        ds.provenance = std::move(prov);
    }
    return ds;
}

/// One scored (source sample, target task) pair. `source` tags the producer
/// ("mtif", "oracle", ...) so mixed files stay unambiguous.
struct ScoreRow {
    int source_task = 0;
    int source_index = 0;
    int target_task = 0;
    double score = 0.0;
    std::string source = "mtif";

    friend bool operator==(const ScoreRow&, const ScoreRow&) = default;
};

inline void save_scores_csv(const std::vector<ScoreRow>& rows, const std::string& path,
                            const std::string& config_hash = "") {
    auto out = detail::open_out(path);
    if (!config_hash.empty()) out << "# config_hash=" << config_hash << "\n";
    out << "source_task,source_index,target_task,score,source\n";
    for (const auto& r : rows)
        out << r.source_task << ',' << r.source_index << ',' << r.target_task << ','
            << format_double(r.score) << ',' << r.source << "\n";
}

inline std::vector<ScoreRow> load_scores_csv(const std::string& path) {
    auto in = detail::open_in(path);
    std::string line;
    long line_no = 0;
    bool saw_header = false;
    std::vector<ScoreRow> rows;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        auto f = detail::split_fields(line);
        if (!saw_header) {
            if (f.size() < 4 || f[0] != "source_task")
                throw SchemaError("scores header must start with source_task,...");
            saw_header = true;
            continue;
        }
        if (f.size() < 4 || f.size() > 5)
            throw SchemaError("score row at line " + std::to_string(line_no) +
                              " has wrong field count");
        ScoreRow r;
        r.source_task = detail::parse_int(f[0], line_no);
        r.source_index = detail::parse_int(f[1], line_no);
        r.target_task = detail::parse_int(f[2], line_no);
        r.score = detail::parse_double(f[3], line_no);
        if (f.size() == 5) r.source = std::string(f[4]);
        rows.push_back(std::move(r));
    }
    if (!saw_header) throw SchemaError("empty scores file: " + path);
    return rows;
}

}  // namespace mtif
