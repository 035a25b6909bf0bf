#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "subseg/grid.hpp"

namespace subseg {

inline constexpr int kNumClasses = 32;

struct LabelEntry {
    int class_index = 0;
    int freesurfer_id = 0;
    std::string region_name;

    bool operator==(const LabelEntry&) const = default;
};

/// Bijection between contiguous class indices 0..31 and FreeSurfer segmentation IDs.
class LabelTable {
public:
    /// Validates: 32 entries, class indices 0..31 each once, class 0 <-> ID 0, distinct IDs.
    explicit LabelTable(std::vector<LabelEntry> entries);

    /// The 31 subcortical regions plus background that ship with the package.
    static const LabelTable& builtin();
    static LabelTable parse_tsv(std::string_view text);
    static LabelTable load(const std::filesystem::path& path);

    std::string to_tsv() const;
    void save(const std::filesystem::path& path) const;
    /// FNV-1a 64 over the canonical TSV form, as 16 lowercase hex digits.
    std::string fingerprint() const;

    const std::vector<LabelEntry>& entries() const noexcept { return entries_; }
    int size() const noexcept { return static_cast<int>(entries_.size()); }

    /// Throws UnknownClassIndex outside 0..31.
    int freesurfer_id(int class_index) const;
    std::optional<int> class_index(int freesurfer_id) const;
    const std::string& name_of_class(int class_index) const;

    bool operator==(const LabelTable& other) const { return entries_ == other.entries_; }

private:
    std::vector<LabelEntry> entries_;
    std::vector<int> id_to_class_;  // dense lookup, -1 for unmapped IDs
};

/// Value-wise class index -> FreeSurfer ID. Throws UnknownClassIndex.
LabelGrid map_to_freesurfer(const LabelGrid& classes, const LabelTable& table);
/// Value-wise FreeSurfer ID -> class index. Throws UnknownClassIndex for IDs not in the table.
LabelGrid map_to_class_index(const LabelGrid& ids, const LabelTable& table);

}  // namespace subseg
