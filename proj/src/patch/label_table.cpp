#include "subseg/label_table.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace subseg {

namespace {

const std::vector<LabelEntry>& builtin_entries() {
    static const std::vector<LabelEntry> entries = {
        {0, 0, "Unknown"},
        {1, 4, "Left-Lateral-Ventricle"},
        {2, 5, "Left-Inf-Lat-Vent"},
        {3, 7, "Left-Cerebellum-White-Matter"},
        {4, 8, "Left-Cerebellum-Cortex"},
        {5, 10, "Left-Thalamus"},
        {6, 11, "Left-Caudate"},
        {7, 12, "Left-Putamen"},
        {8, 13, "Left-Pallidum"},
        {9, 14, "3rd-Ventricle"},
        {10, 15, "4th-Ventricle"},
        {11, 16, "Brain-Stem"},
        {12, 17, "Left-Hippocampus"},
        {13, 18, "Left-Amygdala"},
        {14, 24, "CSF"},
        {15, 26, "Left-Accumbens-area"},
        {16, 28, "Left-VentralDC"},
        {17, 31, "Left-choroid-plexus"},
        {18, 43, "Right-Lateral-Ventricle"},
        {19, 44, "Right-Inf-Lat-Vent"},
        {20, 46, "Right-Cerebellum-White-Matter"},
        {21, 47, "Right-Cerebellum-Cortex"},
        {22, 49, "Right-Thalamus"},
        {23, 50, "Right-Caudate"},
        {24, 51, "Right-Putamen"},
        {25, 52, "Right-Pallidum"},
        {26, 53, "Right-Hippocampus"},
        {27, 54, "Right-Amygdala"},
        {28, 58, "Right-Accumbens-area"},
        {29, 60, "Right-VentralDC"},
        {30, 63, "Right-choroid-plexus"},
        {31, 77, "WM-hypointensities"},
    };
    return entries;
}

std::string trim(std::string s) {
    const auto not_space = [](unsigned char c) { return !std::isspace(c); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
    s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
    return s;
}

}  // namespace

LabelTable::LabelTable(std::vector<LabelEntry> entries) : entries_(std::move(entries)) {
    if (static_cast<int>(entries_.size()) != kNumClasses) {
        throw Error(ErrorCode::InvalidLabelTable, "expected 32 entries, got " + std::to_string(entries_.size()));
    }
    std::sort(entries_.begin(), entries_.end(),
              [](const LabelEntry& a, const LabelEntry& b) { return a.class_index < b.class_index; });
    std::set<int> ids;
    int max_id = 0;
    for (int c = 0; c < kNumClasses; ++c) {
        const auto& e = entries_[static_cast<std::size_t>(c)];
        if (e.class_index != c) throw Error(ErrorCode::InvalidLabelTable, "class indices must be exactly 0..31");
        if (e.freesurfer_id < 0) throw Error(ErrorCode::InvalidLabelTable, "negative FreeSurfer ID");
        if ((c == 0) != (e.freesurfer_id == 0)) {
            throw Error(ErrorCode::InvalidLabelTable, "class 0 must map to FreeSurfer ID 0 and only class 0");
        }
        if (!ids.insert(e.freesurfer_id).second) {
            throw Error(ErrorCode::InvalidLabelTable, "duplicate FreeSurfer ID " + std::to_string(e.freesurfer_id));
        }
        max_id = std::max(max_id, e.freesurfer_id);
    }
    id_to_class_.assign(static_cast<std::size_t>(max_id) + 1, -1);
    for (const auto& e : entries_) id_to_class_[static_cast<std::size_t>(e.freesurfer_id)] = e.class_index;
}

const LabelTable& LabelTable::builtin() {
    static const LabelTable table(builtin_entries());
    return table;
}

LabelTable LabelTable::parse_tsv(std::string_view text) {
    std::vector<LabelEntry> entries;
    std::istringstream is{std::string(text)};
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        line = trim(line);
        if (line.empty() || line.front() == '#') continue;
        std::vector<std::string> fields;
        std::stringstream ls(line);
        std::string field;
        while (std::getline(ls, field, '\t')) fields.push_back(trim(field));
        if (fields.size() == 3 && fields[0] == "class_index") continue;
        if (fields.size() != 3) {
            throw Error(ErrorCode::InvalidLabelTable, "line " + std::to_string(line_no) + ": expected 3 tab-separated fields");
        }
        try {
            std::size_t used0 = 0, used1 = 0;
            LabelEntry e{std::stoi(fields[0], &used0), std::stoi(fields[1], &used1), fields[2]};
            if (used0 != fields[0].size() || used1 != fields[1].size()) throw std::invalid_argument("trailing");
            entries.push_back(std::move(e));
        } catch (const std::logic_error&) {
            throw Error(ErrorCode::InvalidLabelTable, "line " + std::to_string(line_no) + ": non-integer index or ID");
        }
    }
    return LabelTable(std::move(entries));
}

LabelTable LabelTable::load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw Error(ErrorCode::Io, "cannot open label table '" + path.string() + "'");
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_tsv(ss.str());
}

std::string LabelTable::to_tsv() const {
    std::string out = "class_index\tfreesurfer_id\tregion_name\n";
    for (const auto& e : entries_) {
        out += std::to_string(e.class_index) + "\t" + std::to_string(e.freesurfer_id) + "\t" + e.region_name + "\n";
    }
    return out;
}

void LabelTable::save(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary);
    os << to_tsv();
    if (!os) throw Error(ErrorCode::Io, "cannot write label table '" + path.string() + "'");
}

std::string LabelTable::fingerprint() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : to_tsv()) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

int LabelTable::freesurfer_id(int class_index) const {
    if (class_index < 0 || class_index >= kNumClasses) {
        throw Error(ErrorCode::UnknownClassIndex, "class index " + std::to_string(class_index) + " outside 0..31");
    }
    return entries_[static_cast<std::size_t>(class_index)].freesurfer_id;
}

std::optional<int> LabelTable::class_index(int freesurfer_id) const {
    if (freesurfer_id < 0 || freesurfer_id >= static_cast<int>(id_to_class_.size())) return std::nullopt;
    const int c = id_to_class_[static_cast<std::size_t>(freesurfer_id)];
    if (c < 0) return std::nullopt;
    return c;
}

const std::string& LabelTable::name_of_class(int class_index) const {
    freesurfer_id(class_index);
    return entries_[static_cast<std::size_t>(class_index)].region_name;
}

LabelGrid map_to_freesurfer(const LabelGrid& classes, const LabelTable& table) {
    std::array<std::int32_t, kNumClasses> lut{};
    for (int c = 0; c < kNumClasses; ++c) lut[static_cast<std::size_t>(c)] = table.freesurfer_id(c);
    LabelGrid out(classes.dims());
    for (std::size_t n = 0; n < classes.size(); ++n) {
        const auto c = classes[n];
        if (c < 0 || c >= kNumClasses) {
            throw Error(ErrorCode::UnknownClassIndex, "class index " + std::to_string(c) + " outside 0..31");
        }
        out[n] = lut[static_cast<std::size_t>(c)];
    }
    return out;
}

LabelGrid map_to_class_index(const LabelGrid& ids, const LabelTable& table) {
    LabelGrid out(ids.dims());
    for (std::size_t n = 0; n < ids.size(); ++n) {
        const auto c = table.class_index(ids[n]);
        if (!c) throw Error(ErrorCode::UnknownClassIndex, "FreeSurfer ID " + std::to_string(ids[n]) + " is not in the label table");
        out[n] = *c;
    }
    return out;
}

}  // namespace subseg
