#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tsadapt/errors.hpp"
#include "tsadapt/rng.hpp"
#include "tsadapt/series.hpp"

#include "json.hpp"

namespace tsadapt {

// ---------------------------------------------------------------------------
// Preprocessing operations
// ---------------------------------------------------------------------------

/// First tau_target steps; shorter series are zero-post-padded with the mask
/// channels set to 1 on the padded region.
inline MultivariateSeries truncate_and_pad(const MultivariateSeries& s, std::size_t tau_target = 48) {
    if (tau_target == 0) throw DomainError("truncate_and_pad: tau_target must be >= 1");
    const std::size_t tau = s.length();
    if (tau == tau_target) return s;

    MultivariateSeries out;
    out.channel_names = s.channel_names;
    out.mask_channels = s.mask_channels;
    out.values = Matrix(s.num_channels(), tau_target);
    const std::size_t copy_len = std::min(tau, tau_target);
    for (std::size_t j = 0; j < s.num_channels(); ++j) {
        for (std::size_t t = 0; t < copy_len; ++t) out.values(j, t) = s.values(j, t);
        if (s.is_mask_channel(j))
            for (std::size_t t = copy_len; t < tau_target; ++t) out.values(j, t) = 1.0;
    }
    return out;
}

/// Overlapping windows starting at 0, shift, 2*shift, ... while start < tau;
/// each is zero-padded to the window length.
inline std::vector<MultivariateSeries> enumerate_windows(const MultivariateSeries& s,
                                                         std::size_t window = 48,
                                                         std::size_t shift = 24) {
    if (window == 0 || shift == 0) throw DomainError("enumerate_windows: window and shift must be >= 1");
    std::vector<MultivariateSeries> out;
    const std::size_t tau = s.length();
    for (std::size_t start = 0; start < tau; start += shift) {
        MultivariateSeries w;
        w.channel_names = s.channel_names;
        w.mask_channels = s.mask_channels;
        w.values = Matrix(s.num_channels(), window);
        const std::size_t real = std::min(window, tau - start);
        for (std::size_t j = 0; j < s.num_channels(); ++j) {
            for (std::size_t t = 0; t < real; ++t) w.values(j, t) = s.values(j, start + t);
            if (s.is_mask_channel(j))
                for (std::size_t t = real; t < window; ++t) w.values(j, t) = 1.0;
        }
        out.push_back(std::move(w));
    }
    return out;
}

enum class EpisodeFeatureMode { train, test };

/// Previous-episode feature for one patient's chronologically ordered
/// episodes: the ground-truth previous label in train mode, the prior model's
/// predicted probability in test mode, 0 when there is no previous episode.
inline Vec episode_feature(const std::vector<const EpisodeRecord*>& episodes,
                           const std::string& task, EpisodeFeatureMode mode,
                           const std::function<double(const EpisodeRecord&)>& prior_score) {
    Vec out;
    out.reserve(episodes.size());
    int last_index = 0;
    for (std::size_t i = 0; i < episodes.size(); ++i) {
        const EpisodeRecord* ep = episodes[i];
        if (ep->episode_index <= last_index)
            throw DataError("episode_feature: episodes for patient " + ep->patient_id +
                            " are not in chronological order");
        last_index = ep->episode_index;
        if (i == 0) {
            out.push_back(0.0);
            continue;
        }
        const EpisodeRecord* prev = episodes[i - 1];
        if (mode == EpisodeFeatureMode::train) {
            auto it = prev->labels.find(task);
            if (it == prev->labels.end())
                throw DataError("episode_feature: previous episode lacks label " + task);
            out.push_back(static_cast<double>(it->second));
        } else {
            out.push_back(prior_score(*prev));
        }
    }
    return out;
}

/// Group split records by patient, preserving chronological episode order.
inline std::map<std::string, std::vector<const EpisodeRecord*>> group_by_patient(
    const std::vector<EpisodeRecord>& records) {
    std::map<std::string, std::vector<const EpisodeRecord*>> grouped;
    for (const auto& r : records) grouped[r.patient_id].push_back(&r);
    for (auto& [id, eps] : grouped)
        std::sort(eps.begin(), eps.end(), [](const EpisodeRecord* a, const EpisodeRecord* b) {
            return a->episode_index < b->episode_index;
        });
    return grouped;
}

namespace detail {

/// Largest-remainder allocation of `total` picks across per-class counts.
inline std::vector<std::size_t> stratified_quota(const std::vector<std::size_t>& class_counts,
                                                 std::size_t total) {
    std::size_t n = 0;
    for (auto c : class_counts) n += c;
    std::vector<std::size_t> take(class_counts.size(), 0);
    std::vector<double> remainder(class_counts.size(), 0.0);
    std::size_t assigned = 0;
    for (std::size_t c = 0; c < class_counts.size(); ++c) {
        const double exact =
            static_cast<double>(total) * static_cast<double>(class_counts[c]) / static_cast<double>(n);
        take[c] = static_cast<std::size_t>(exact);
        take[c] = std::min(take[c], class_counts[c]);
        remainder[c] = exact - static_cast<double>(take[c]);
        assigned += take[c];
    }
    while (assigned < total) {
        std::size_t best = class_counts.size();
        for (std::size_t c = 0; c < class_counts.size(); ++c) {
            if (take[c] >= class_counts[c]) continue;
            if (best == class_counts.size() || remainder[c] > remainder[best]) best = c;
        }
        if (best == class_counts.size()) break;
        take[best] += 1;
        remainder[best] -= 1.0;
        assigned += 1;
    }
    return take;
}

inline std::vector<EpisodeRecord> subsample_records(const std::vector<EpisodeRecord>& records,
                                                    double fraction, const std::string& task,
                                                    Rng rng) {
    if (records.empty()) return {};
    const std::size_t total =
        static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(records.size())));
    std::vector<std::size_t> pos_idx, neg_idx;
    for (std::size_t i = 0; i < records.size(); ++i) {
        auto it = records[i].labels.find(task);
        if (it == records[i].labels.end())
            throw DataError("subsample_training: record lacks label " + task);
        (it->second ? pos_idx : neg_idx).push_back(i);
    }
    const auto quota = stratified_quota({pos_idx.size(), neg_idx.size()}, total);
    shuffle(pos_idx, rng);
    shuffle(neg_idx, rng);
    std::vector<std::size_t> chosen(pos_idx.begin(), pos_idx.begin() + quota[0]);
    chosen.insert(chosen.end(), neg_idx.begin(), neg_idx.begin() + quota[1]);
    std::sort(chosen.begin(), chosen.end());
    std::vector<EpisodeRecord> out;
    out.reserve(chosen.size());
    for (auto i : chosen) out.push_back(records[i]);
    return out;
}

} // namespace detail

/// Stratified subsample of train and validation to ceil(fraction*N) records
/// each; the test set is untouched. Deterministic per seed.
inline DatasetSplit subsample_training(const DatasetSplit& split, double fraction,
                                       std::uint64_t seed, const std::string& task) {
    if (fraction <= 0.0 || fraction > 1.0)
        throw DomainError("subsample_training: fraction must be in (0,1]");
    if (fraction == 1.0) return split;
    DatasetSplit out = split;
    Rng rng(seed);
    out.train = detail::subsample_records(split.train, fraction, task, rng.fork(1));
    out.validation = detail::subsample_records(split.validation, fraction, task, rng.fork(2));

    bool has_pos = false, has_neg = false;
    for (const auto& r : out.train) (r.labels.at(task) ? has_pos : has_neg) = true;
    if (!has_pos || !has_neg)
        throw DomainError("subsample_training: fraction " + std::to_string(fraction) +
                          " yields a single-class training set for task " + task);
    return out;
}

/// Drop every patient with a positive label for any target task from train
/// and validation; the multitask pre-training set must not see target-task
/// positives.
inline DatasetSplit apply_leakage_rule(const DatasetSplit& split) {
    std::set<std::string> tainted;
    auto mark = [&](const std::vector<EpisodeRecord>& recs) {
        for (const auto& r : recs)
            for (const auto& task : split.target_tasks) {
                auto it = r.labels.find(task);
                if (it != r.labels.end() && it->second != 0) tainted.insert(r.patient_id);
            }
    };
    mark(split.train);
    mark(split.validation);
    DatasetSplit out = split;
    auto filter = [&](std::vector<EpisodeRecord>& recs) {
        std::vector<EpisodeRecord> kept;
        for (auto& r : recs)
            if (!tainted.count(r.patient_id)) kept.push_back(std::move(r));
        recs = std::move(kept);
    };
    filter(out.train);
    filter(out.validation);

    for (const auto& r : out.train)
        for (const auto& task : out.target_tasks)
            if (r.labels.count(task) && r.labels.at(task) != 0)
                throw DataError("leakage rule violated for patient " + r.patient_id);
    return out;
}

// ---------------------------------------------------------------------------
// Benchmark-layout CSV loading
// ---------------------------------------------------------------------------

struct ChannelSpec {
    std::string name;
    bool categorical = false;
    std::vector<std::string> categories; // empty for real channels
};

struct ChannelSchema {
    std::vector<ChannelSpec> channels;

    std::size_t expanded_count() const {
        std::size_t n = 0;
        for (const auto& c : channels) n += c.categorical ? c.categories.size() : 1;
        return n;
    }

    /// Expanded value channels followed by one mask channel per source channel.
    std::size_t total_count() const { return expanded_count() + channels.size(); }

    /// The 17-channel ICU benchmark schema: 12 real-valued channels and 5
    /// categorical ones that one-hot to 47 columns, 59 value channels plus 17
    /// mask channels in total.
    static ChannelSchema icu_benchmark() {
        ChannelSchema s;
        auto real = [&](const char* n) { s.channels.push_back({n, false, {}}); };
        auto cat = [&](const char* n, std::vector<std::string> cats) {
            s.channels.push_back({n, true, std::move(cats)});
        };
        cat("Capillary refill rate", {"0.0", "1.0"});
        real("Diastolic blood pressure");
        real("Fraction inspired oxygen");
        cat("Glascow coma scale eye opening",
            {"To Pain", "3 To speech", "1 No Response", "4 Spontaneously", "None", "To Speech",
             "Spontaneously", "2 To pain"});
        cat("Glascow coma scale motor response",
            {"1 No Response", "3 Abnorm flexion", "Abnormal extension", "No response",
             "4 Flex-withdraws", "Localizes Pain", "Flex-withdraws", "Obeys Commands",
             "Abnormal Flexion", "6 Obeys Commands", "5 Localizes Pain", "2 Abnorm extensn"});
        cat("Glascow coma scale total",
            {"11", "10", "13", "12", "15", "14", "3", "5", "4", "7", "6", "9", "8"});
        cat("Glascow coma scale verbal response",
            {"1 No Response", "No Response", "Confused", "Inappropriate Words", "Oriented",
             "No Response-ETT", "5 Oriented", "Incomprehensible sounds", "1.0 ET/Trach",
             "4 Confused", "2 Incomp sounds", "3 Inapprop words"});
        real("Glucose");
        real("Heart Rate");
        real("Height");
        real("Mean blood pressure");
        real("Oxygen saturation");
        real("Respiratory rate");
        real("Systolic blood pressure");
        real("Temperature");
        real("Weight");
        real("pH");
        return s;
    }

    static ChannelSchema from_json(const nlohmann::json& j) {
        ChannelSchema s;
        for (const auto& c : j.at("channels")) {
            ChannelSpec spec;
            spec.name = c.at("name").get<std::string>();
            const std::string kind = c.value("kind", "real");
            if (kind == "categorical") {
                spec.categorical = true;
                for (const auto& cat : c.at("categories")) spec.categories.push_back(cat.get<std::string>());
                if (spec.categories.empty())
                    throw DataError("schema channel " + spec.name + " has no categories");
            } else if (kind != "real") {
                throw DataError("schema channel " + spec.name + ": unknown kind " + kind);
            }
            s.channels.push_back(std::move(spec));
        }
        if (s.channels.empty()) throw DataError("channel schema is empty");
        return s;
    }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.push_back("");
    return cells;
}

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

} // namespace detail

/// Parse one benchmark-layout episode CSV (`Hours,<channels...>`, one row per
/// hour). Missing entries are forward-filled, then zero-filled (real) or
/// filled with the schema's first category (categorical, so one-hot groups
/// keep summing to 1); the per-source-channel mask is 1 wherever a value was
/// imputed.
inline MultivariateSeries parse_episode_csv(const std::filesystem::path& file,
                                            const ChannelSchema& schema) {
    std::ifstream in(file);
    if (!in) throw DataError("cannot open " + file.string());
    std::string line;
    if (!std::getline(in, line)) throw ParseError(file.string() + ":1: empty file");
    auto header = detail::split_csv_line(line);
    if (header.empty() || detail::trim(header[0]) != "Hours")
        throw ParseError(file.string() + ":1: malformed header, expected leading 'Hours' column");

    // Map CSV columns to schema channels.
    std::map<std::string, std::size_t> name_to_channel;
    for (std::size_t c = 0; c < schema.channels.size(); ++c)
        name_to_channel[schema.channels[c].name] = c;
    std::vector<std::size_t> col_channel(header.size(), SIZE_MAX);
    for (std::size_t col = 1; col < header.size(); ++col) {
        const std::string name = detail::trim(header[col]);
        auto it = name_to_channel.find(name);
        if (it == name_to_channel.end())
            throw DataError(file.string() + ": unknown channel '" + name + "'");
        col_channel[col] = it->second;
    }

    // Raw per-source-channel cell strings, empty = missing.
    std::vector<std::vector<std::string>> raw(schema.channels.size());
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        auto cells = detail::split_csv_line(line);
        if (cells.size() != header.size())
            throw ParseError(file.string() + ":" + std::to_string(line_no) + ": expected " +
                             std::to_string(header.size()) + " cells, got " +
                             std::to_string(cells.size()));
        for (auto& r : raw) r.emplace_back();
        for (std::size_t col = 1; col < cells.size(); ++col)
            raw[col_channel[col]].back() = detail::trim(cells[col]);
    }
    const std::size_t tau = raw.empty() ? 0 : raw[0].size();
    if (tau == 0) throw ParseError(file.string() + ": no data rows");

    MultivariateSeries out;
    out.values = Matrix(schema.total_count(), tau);
    const std::size_t n_expanded = schema.expanded_count();

    std::size_t row = 0;
    for (std::size_t c = 0; c < schema.channels.size(); ++c) {
        const ChannelSpec& spec = schema.channels[c];
        const std::size_t mask_row = n_expanded + c;
        std::string last_seen; // forward-fill buffer
        for (std::size_t t = 0; t < tau; ++t) {
            std::string cell = raw[c][t];
            bool imputed = false;
            if (cell.empty()) {
                imputed = true;
                cell = last_seen; // may still be empty: never observed
            } else {
                last_seen = cell;
            }
            if (spec.categorical) {
                std::size_t cat_idx = 0;
                if (cell.empty()) {
                    cat_idx = 0; // never observed: schema's first category
                } else {
                    auto it = std::find(spec.categories.begin(), spec.categories.end(), cell);
                    if (it == spec.categories.end())
                        throw DataError(file.string() + ": channel '" + spec.name +
                                        "' has unknown category '" + cell + "'");
                    cat_idx = static_cast<std::size_t>(it - spec.categories.begin());
                }
                out.values(row + cat_idx, t) = 1.0;
            } else {
                double v = 0.0;
                if (!cell.empty()) {
                    try {
                        std::size_t pos = 0;
                        v = std::stod(cell, &pos);
                        if (pos != cell.size()) throw std::invalid_argument(cell);
                    } catch (const std::exception&) {
                        throw ParseError(file.string() + ": channel '" + spec.name +
                                         "' has non-numeric value '" + cell + "'");
                    }
                }
                out.values(row, t) = v;
            }
            if (imputed) out.values(mask_row, t) = 1.0;
        }
        // Channel names for the expanded block.
        if (spec.categorical) {
            for (const auto& cat : spec.categories) out.channel_names.push_back(spec.name + "->" + cat);
            row += spec.categories.size();
        } else {
            out.channel_names.push_back(spec.name);
            row += 1;
        }
    }
    for (const auto& spec : schema.channels) out.channel_names.push_back("mask:" + spec.name);
    for (std::size_t c = 0; c < schema.channels.size(); ++c) out.mask_channels.push_back(n_expanded + c);
    return out;
}

struct LoadResult {
    DatasetSplit split;
    std::vector<std::string> warnings;
};

/// Load a benchmark-layout dataset: a manifest JSON naming per-episode CSV
/// files, labels and split membership, plus the channel schema.
inline LoadResult load_csv_dataset(const std::filesystem::path& root,
                                   const std::filesystem::path& manifest_file) {
    std::ifstream in(manifest_file);
    if (!in) throw ConfigError("cannot open manifest " + manifest_file.string());
    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(manifest_file.string() + ": " + e.what());
    }

    ChannelSchema schema;
    if (manifest.contains("schema") && manifest["schema"].is_string()) {
        const std::string name = manifest["schema"].get<std::string>();
        if (name == "icu-benchmark" || name == "mimic3-benchmark")
            schema = ChannelSchema::icu_benchmark();
        else
            throw ConfigError("unknown named schema '" + name + "'");
    } else if (manifest.contains("schema")) {
        schema = ChannelSchema::from_json(manifest["schema"]);
    } else {
        schema = ChannelSchema::icu_benchmark();
    }

    LoadResult result;
    if (manifest.contains("tasks") && manifest["tasks"].is_object()) {
        for (const auto& t : manifest["tasks"].value("source", nlohmann::json::array()))
            result.split.source_tasks.push_back(t.get<std::string>());
        for (const auto& t : manifest["tasks"].value("target", nlohmann::json::array()))
            result.split.target_tasks.push_back(t.get<std::string>());
    } else if (manifest.contains("tasks")) {
        for (const auto& t : manifest["tasks"]) result.split.source_tasks.push_back(t.get<std::string>());
    }

    const auto episodes = manifest.value("episodes", nlohmann::json::array());
    if (episodes.empty()) {
        result.warnings.push_back("manifest lists no episodes; returning an empty split");
        return result;
    }
    for (const auto& e : episodes) {
        EpisodeRecord rec;
        rec.patient_id = e.at("patient_id").get<std::string>();
        rec.episode_index = e.value("episode_index", 1);
        rec.series = parse_episode_csv(root / e.at("file").get<std::string>(), schema);
        for (auto it = e.at("labels").begin(); it != e.at("labels").end(); ++it)
            rec.labels[it.key()] = it.value().get<int>();
        const std::string split_name = e.value("split", "train");
        if (split_name == "train")
            result.split.train.push_back(std::move(rec));
        else if (split_name == "validation" || split_name == "val")
            result.split.validation.push_back(std::move(rec));
        else if (split_name == "test")
            result.split.test.push_back(std::move(rec));
        else
            throw DataError("episode for patient " + rec.patient_id + " has unknown split '" +
                            split_name + "'");
    }
    validate_split(result.split);
    return result;
}

} // namespace tsadapt
