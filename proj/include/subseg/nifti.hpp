#pragma once

#include <filesystem>

#include "subseg/volume.hpp"

namespace subseg::nifti {

/// Reads a NIfTI-1 volume (.nii or .nii.gz). Only the first frame of 4D data is kept.
/// The sform is used when present, then the qform, then pixdim. Throws Io on failure.
Volume read(const std::filesystem::path& path);

enum class StoredType { Float32, Int32 };

/// Writes a NIfTI-1 single file; gzip-compressed when the name ends in ".gz".
/// Label volumes are stored as Int32 unless `type` says otherwise.
void write(const std::filesystem::path& path, const Volume& v);
void write(const std::filesystem::path& path, const Volume& v, StoredType type);

}  // namespace subseg::nifti
