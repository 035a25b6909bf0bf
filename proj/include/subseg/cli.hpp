#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "subseg/error.hpp"

namespace subseg::cli {

/// Process exit codes.
enum ExitCode : int {
    kOk = 0,
    kFailure = 1,
    kIoError = 2,
    kDegenerateData = 3,
    kCheckpointMismatch = 4,
    kInvalidConfig = 5,
};

int exit_code_for(ErrorCode code);

struct ConformArgs {
    std::string input;
    std::string output;
    /// Resample report JSON; defaults to the output stem + ".resample.json".
    std::string report;
};

struct SegmentArgs {
    std::string input;
    std::string output;
    std::string checkpoint;
    std::string labels;  // label table TSV; built-in table when empty
    int stride = 16;
    bool force = false;
    /// "cpu" or "accelerator"; empty means $SUBSEG_DEVICE, then cpu.
    std::string device;
    std::uint64_t seed = 0;
};

struct TrainArgs {
    std::string config;
    std::string labels;
};

struct EvaluateArgs {
    std::string pred_dir;
    std::string ref_dir;
    std::string out_dir;
    std::string labels;
    std::string dataset;  // defaults to the reference directory name
    std::string model;    // defaults to the prediction directory name
};

struct ReportArgs {
    std::string reports_dir;
    std::string output;  // "-" for stdout
    std::string csv;
    bool by_dataset = true;
    bool by_model = true;
};

struct PhantomArgs {
    std::string out_dir;
    std::uint64_t seed = 0;
    int count = 1;
};

int cmd_conform(const ConformArgs& args, std::ostream& log);
int cmd_segment(const SegmentArgs& args, std::ostream& log);
int cmd_train(const TrainArgs& args, std::ostream& log);
int cmd_evaluate(const EvaluateArgs& args, std::ostream& log);
int cmd_report(const ReportArgs& args, std::ostream& out, std::ostream& log);
int cmd_phantom(const PhantomArgs& args, std::ostream& log);

/// Parses `tool <conform|segment|train|evaluate|report|phantom> [flags]` and dispatches.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& log);

}  // namespace subseg::cli
