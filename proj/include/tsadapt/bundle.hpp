#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "tsadapt/checkpoint.hpp"
#include "tsadapt/dataio.hpp"
#include "tsadapt/series.hpp"

namespace tsadapt {

inline constexpr const char* kBundleVersion = "tsadapt-bundle-1";

/// Canonical on-disk dataset: an index.json plus one CSV per episode in the
/// `Hours,<channels...>` layout; all values numeric, doubles written with
/// shortest round-trip precision so a bundle reloads bit-exactly.
inline void save_bundle(const DatasetSplit& split, const std::filesystem::path& dir,
                        std::uint64_t seed, const std::string& cfg_hash) {
    std::filesystem::create_directories(dir / "series");
    json episodes = json::array();
    auto dump_part = [&](const std::vector<EpisodeRecord>& recs, const char* part) {
        for (const auto& r : recs) {
            const std::string file =
                "series/" + r.patient_id + "_e" + std::to_string(r.episode_index) + ".csv";
            std::string csv = "Hours";
            for (const auto& name : r.series.channel_names) csv += "," + name;
            csv += "\n";
            for (std::size_t t = 0; t < r.series.length(); ++t) {
                csv += std::to_string(t);
                for (std::size_t j = 0; j < r.series.num_channels(); ++j)
                    csv += "," + fmt_double(r.series.values(j, t));
                csv += "\n";
            }
            write_text_file(dir / file, csv);
            json labels = json::object();
            for (const auto& [task, y] : r.labels) labels[task] = y;
            episodes.push_back(json{{"patient_id", r.patient_id},
                                    {"episode_index", r.episode_index},
                                    {"split", part},
                                    {"labels", labels},
                                    {"file", file}});
        }
    };
    dump_part(split.train, "train");
    dump_part(split.validation, "validation");
    dump_part(split.test, "test");

    const auto& sample = !split.train.empty()
                             ? split.train.front()
                             : (!split.validation.empty() ? split.validation.front()
                                                          : split.test.front());
    json index{{"schema_version", kBundleVersion},
               {"seed", seed},
               {"config_hash", cfg_hash},
               {"channels", sample.series.channel_names},
               {"mask_channels", sample.series.mask_channels},
               {"tasks", json{{"source", split.source_tasks}, {"target", split.target_tasks}}},
               {"episodes", std::move(episodes)}};
    write_text_file(dir / "index.json", index.dump());
}

inline DatasetSplit load_bundle(const std::filesystem::path& dir) {
    const auto index_path = dir / "index.json";
    if (!std::filesystem::exists(index_path))
        throw ConfigError("missing dataset bundle index: " + index_path.string());
    const json index = load_json_file(index_path);
    if (index.value("schema_version", "") != kBundleVersion)
        throw DataError(index_path.string() + ": unknown bundle schema version");

    DatasetSplit split;
    split.split_seed = index.value("seed", 0ULL);
    split.config_hash = index.value("config_hash", "");
    split.source_tasks = index.at("tasks").at("source").get<std::vector<std::string>>();
    split.target_tasks = index.at("tasks").at("target").get<std::vector<std::string>>();
    const auto channel_names = index.at("channels").get<std::vector<std::string>>();
    const auto mask_channels = index.at("mask_channels").get<std::vector<std::size_t>>();

    for (const auto& e : index.at("episodes")) {
        EpisodeRecord rec;
        rec.patient_id = e.at("patient_id").get<std::string>();
        rec.episode_index = e.at("episode_index").get<int>();
        for (auto it = e.at("labels").begin(); it != e.at("labels").end(); ++it)
            rec.labels[it.key()] = it.value().get<int>();

        const auto file = dir / e.at("file").get<std::string>();
        std::ifstream in(file);
        if (!in) throw DataError("cannot open series file " + file.string());
        std::string line;
        if (!std::getline(in, line)) throw ParseError(file.string() + ":1: empty series file");
        std::vector<Vec> rows;
        std::size_t line_no = 1;
        while (std::getline(in, line)) {
            ++line_no;
            if (detail::trim(line).empty()) continue;
            const auto cells = detail::split_csv_line(line);
            if (cells.size() != channel_names.size() + 1)
                throw ParseError(file.string() + ":" + std::to_string(line_no) +
                                 ": wrong cell count");
            Vec row(channel_names.size());
            for (std::size_t j = 0; j < row.size(); ++j) row[j] = std::stod(cells[j + 1]);
            rows.push_back(std::move(row));
        }
        if (rows.empty()) throw ParseError(file.string() + ": no data rows");
        rec.series.channel_names = channel_names;
        rec.series.mask_channels = mask_channels;
        rec.series.values = Matrix(channel_names.size(), rows.size());
        for (std::size_t t = 0; t < rows.size(); ++t)
            for (std::size_t j = 0; j < channel_names.size(); ++j)
                rec.series.values(j, t) = rows[t][j];

        const std::string part = e.at("split").get<std::string>();
        if (part == "train")
            split.train.push_back(std::move(rec));
        else if (part == "validation")
            split.validation.push_back(std::move(rec));
        else if (part == "test")
            split.test.push_back(std::move(rec));
        else
            throw DataError(index_path.string() + ": unknown split '" + part + "'");
    }
    validate_split(split);
    return split;
}

} // namespace tsadapt
