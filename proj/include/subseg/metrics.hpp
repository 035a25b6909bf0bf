#pragma once

#include <optional>
#include <string>
#include <vector>

#include "subseg/grid.hpp"
#include "subseg/label_table.hpp"

namespace subseg::metrics {

/// 2|A n B| / (|A| + |B|); 1.0 when both masks are empty. Throws ShapeMismatch.
double dsc(const MaskGrid& a, const MaskGrid& b);

/// Mask voxels with at least one of the 6 face neighbours outside the mask (grid border counts as outside).
std::vector<Index3> surface_voxels(const MaskGrid& mask);

/// Average symmetric surface distance in mm between voxel centres of the two surfaces,
/// computed with an exact Euclidean distance transform. nullopt when either surface is empty.
std::optional<double> assd(const MaskGrid& a, const MaskGrid& b, const Vec3& spacing);

/// Squared anisotropic Euclidean distance from every voxel to the nearest seed voxel.
/// Voxels are unreachable (infinity) only when there are no seeds.
std::vector<double> squared_distance_transform(const MaskGrid& seeds, const Vec3& spacing);

MaskGrid binarize(const LabelGrid& labels, int value);

enum class RegionStatus {
    Scored,   // present in both
    Missing,  // in the reference only
    Spurious, // in the prediction only
    Absent,   // in neither; excluded from everything
};

struct RegionMetrics {
    int freesurfer_id = 0;
    std::string name;
    std::optional<double> dsc;
    std::optional<double> assd;
    std::int64_t pred_voxels = 0;
    std::int64_t ref_voxels = 0;
    RegionStatus status = RegionStatus::Absent;
};

struct CaseReport {
    std::string case_id;
    std::string dataset;
    std::string model;
    std::vector<RegionMetrics> regions;
    /// Uniform means over regions present in the reference, with the number of terms.
    double mean_dsc = 0.0;
    int n_dsc = 0;
    std::optional<double> mean_assd;
    int n_assd = 0;
    int missing_regions = 0;

    std::string to_json() const;
    static CaseReport from_json(const std::string& text);
};

/// Scores every non-background table region. Throws ShapeMismatch.
CaseReport evaluate_segmentation(const LabelGrid& pred, const LabelGrid& ref, const LabelTable& table,
                                 const Vec3& spacing, std::string case_id = {});

struct Grouping {
    bool by_dataset = true;
    bool by_model = true;
};

struct SummaryRow {
    std::string dataset;
    std::string model;
    int cases = 0;
    double dsc_mean = 0.0;
    double dsc_sd = 0.0;
    /// Cases without any defined ASSD are left out of the ASSD columns.
    int assd_cases = 0;
    double assd_mean = 0.0;
    double assd_sd = 0.0;
};

/// Mean and population SD of case-level means per group, in first-seen group order. Throws EmptyInput.
std::vector<SummaryRow> aggregate_reports(const std::vector<CaseReport>& reports, const Grouping& grouping = {});

/// "0.872 ± 0.023"
std::string format_mean_sd(double mean, double sd);
/// Aligned plain-text table: Dataset, Model, DSC ↑, ASSD ↓.
std::string format_table(const std::vector<SummaryRow>& rows);
std::string format_csv(const std::vector<SummaryRow>& rows);

}  // namespace subseg::metrics
