#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tsadapt/matrix.hpp"

namespace tsadapt {

/// An n-channel real-valued series sampled on a fixed unit interval.
/// Channels are rows of `values`; mask_channels lists the indices of the 0/1
/// missingness indicator channels.
struct MultivariateSeries {
    std::vector<std::string> channel_names;
    Matrix values; // n x tau, channel-major
    std::vector<std::size_t> mask_channels;

    std::size_t num_channels() const { return values.rows; }
    std::size_t length() const { return values.cols; }

    Vec channel(std::size_t j) const {
        return Vec(values.row(j), values.row(j) + values.cols);
    }

    /// tau x n layout expected by stack_forward.
    Matrix to_input() const {
        Matrix x(values.cols, values.rows);
        for (std::size_t j = 0; j < values.rows; ++j)
            for (std::size_t t = 0; t < values.cols; ++t) x(t, j) = values(j, t);
        return x;
    }

    bool is_mask_channel(std::size_t j) const {
        return std::find(mask_channels.begin(), mask_channels.end(), j) != mask_channels.end();
    }
};

/// One hospital/ICU stay of one patient: a single data instance.
struct EpisodeRecord {
    std::string patient_id;
    int episode_index = 1; // chronological, >= 1, unique per patient
    MultivariateSeries series;
    std::map<std::string, int> labels; // task name -> {0,1}
};

enum class SplitKind { train, validation, test };

/// Train/validation/test episode sets plus the source/target task partition.
struct DatasetSplit {
    std::vector<EpisodeRecord> train;
    std::vector<EpisodeRecord> validation;
    std::vector<EpisodeRecord> test;
    std::vector<std::string> source_tasks;
    std::vector<std::string> target_tasks;
    std::uint64_t split_seed = 0;
    std::string config_hash;

    std::vector<std::string> all_tasks() const {
        std::vector<std::string> t = source_tasks;
        t.insert(t.end(), target_tasks.begin(), target_tasks.end());
        return t;
    }

    const std::vector<EpisodeRecord>& part(SplitKind k) const {
        switch (k) {
            case SplitKind::train: return train;
            case SplitKind::validation: return validation;
            default: return test;
        }
    }
};

/// No patient may appear in more than one split and the source/target task
/// partition must be disjoint.
inline void validate_split(const DatasetSplit& split) {
    std::map<std::string, int> owner;
    auto scan = [&](const std::vector<EpisodeRecord>& recs, int which) {
        for (const auto& r : recs) {
            auto it = owner.find(r.patient_id);
            if (it != owner.end() && it->second != which)
                throw DataError("patient " + r.patient_id + " appears in more than one split");
            owner[r.patient_id] = which;
        }
    };
    scan(split.train, 0);
    scan(split.validation, 1);
    scan(split.test, 2);
    for (const auto& s : split.source_tasks)
        for (const auto& t : split.target_tasks)
            if (s == t) throw DataError("task " + s + " is both source and target");
}

} // namespace tsadapt
