#include "subseg/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "subseg/checkpoint.hpp"
#include "subseg/metrics.hpp"

namespace subseg::training {

namespace fs = std::filesystem;

torch::Tensor dice_loss(const torch::Tensor& probs, const torch::Tensor& target, double eps, bool include_background) {
    if (probs.sizes() != target.sizes() || probs.dim() < 2) {
        throw Error(ErrorCode::ShapeMismatch, "dice_loss needs equal [B, C, ...] shapes");
    }
    if (!include_background && probs.size(1) < 2) throw Error(ErrorCode::ShapeMismatch, "no foreground classes");
    std::vector<std::int64_t> dims;
    for (std::int64_t d = 0; d < probs.dim(); ++d)
        if (d != 1) dims.push_back(d);
    auto inter = (probs * target).sum(dims);
    auto denom = probs.sum(dims) + target.sum(dims);
    auto per_class = (2.0 * inter + eps) / (denom + eps);
    if (!include_background) per_class = per_class.slice(0, 1);
    return 1.0 - per_class.mean();
}

torch::Tensor one_hot(const LabelGrid& class_labels, int classes) {
    for (std::int32_t v : class_labels.values()) {
        if (v < 0 || v >= classes) throw Error(ErrorCode::UnknownClassIndex, "class index " + std::to_string(v) + " out of range");
    }
    const auto& d = class_labels.dims();
    auto idx = torch::from_blob(const_cast<std::int32_t*>(class_labels.storage().data()), {d[2], d[1], d[0]}, torch::kInt32)
                   .to(torch::kInt64);
    return torch::one_hot(idx, classes).permute({3, 0, 1, 2}).unsqueeze(0).to(torch::kFloat32).contiguous();
}

TrainCase prepare_case(const FloatGrid& conformed, const LabelGrid& freesurfer_labels, const LabelTable& table, std::string id) {
    if (conformed.dims() != freesurfer_labels.dims()) {
        throw Error(ErrorCode::ShapeMismatch, "image " + to_string(conformed.dims()) + " and labels " +
                                                  to_string(freesurfer_labels.dims()) + " differ");
    }
    Cropped cropped = prepare_crop(conformed);
    TrainCase c;
    c.id = std::move(id);
    c.labels = copy_box(map_to_class_index(freesurfer_labels, table), cropped.frame.offset, cropped.frame.dims);
    c.intensity = std::move(cropped.data);
    c.frame = cropped.frame;
    return c;
}

TrainCase center_patch_case(const TrainCase& c) {
    Index3 at{};
    for (int a = 0; a < 3; ++a) at[a] = (c.frame.dims[a] - kPatchSide) / (2 * kCropGranularity) * kCropGranularity;
    const Index3 side{kPatchSide, kPatchSide, kPatchSide};
    TrainCase out;
    out.id = c.id;
    out.intensity = copy_box(c.intensity, at, side);
    out.labels = copy_box(c.labels, at, side);
    out.frame = {{c.frame.offset[0] + at[0], c.frame.offset[1] + at[1], c.frame.offset[2] + at[2]}, side};
    return out;
}

void TrainConfig::validate() const {
    const auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidConfig, "train config: " + what); };
    if (!(learning_rate > 0.0)) fail("learning_rate must be > 0");
    if (weight_decay < 0.0) fail("weight_decay must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) fail("betas must lie in [0, 1)");
    if (!(adam_eps > 0.0) || !(dice_eps > 0.0)) fail("eps values must be > 0");
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (max_steps < 0) fail("max_steps must be >= 0");
    if (val_every < 1) fail("val_every must be >= 1");
    if (checkpoint_every < 0) fail("checkpoint_every must be >= 0");
    if (output_dir.empty()) fail("output_dir must be set");
    augment.validate();
    model.validate();
}

std::string TrainConfig::to_json() const {
    nlohmann::ordered_json j;
    j["learning_rate"] = learning_rate;
    j["weight_decay"] = weight_decay;
    j["beta1"] = beta1;
    j["beta2"] = beta2;
    j["adam_eps"] = adam_eps;
    j["batch_size"] = batch_size;
    j["augment"] = {{"probability", augment.probability},
                    {"max_rotation_deg", augment.max_rotation_deg},
                    {"min_scale", augment.min_scale},
                    {"max_scale", augment.max_scale},
                    {"max_translation", augment.max_translation},
                    {"max_noise_fraction", augment.max_noise_fraction},
                    {"min_blur_sigma", augment.min_blur_sigma},
                    {"max_blur_sigma", augment.max_blur_sigma}};
    j["seed"] = seed;
    j["max_steps"] = max_steps;
    j["val_every"] = val_every;
    j["checkpoint_every"] = checkpoint_every;
    j["include_background"] = include_background;
    j["dice_eps"] = dice_eps;
    j["model"] = nlohmann::ordered_json::parse(model.to_json());
    j["output_dir"] = output_dir;
    j["resume_from"] = resume_from;
    return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
    TrainConfig c;
    try {
        const auto j = nlohmann::json::parse(text);
        if (!j.is_object()) throw Error(ErrorCode::InvalidConfig, "train config must be a JSON object");
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        c.beta1 = j.value("beta1", c.beta1);
        c.beta2 = j.value("beta2", c.beta2);
        c.adam_eps = j.value("adam_eps", c.adam_eps);
        c.batch_size = j.value("batch_size", c.batch_size);
        if (j.contains("augment")) {
            const auto& a = j.at("augment");
            c.augment.probability = a.value("probability", c.augment.probability);
            c.augment.max_rotation_deg = a.value("max_rotation_deg", c.augment.max_rotation_deg);
            c.augment.min_scale = a.value("min_scale", c.augment.min_scale);
            c.augment.max_scale = a.value("max_scale", c.augment.max_scale);
            c.augment.max_translation = a.value("max_translation", c.augment.max_translation);
            c.augment.max_noise_fraction = a.value("max_noise_fraction", c.augment.max_noise_fraction);
            c.augment.min_blur_sigma = a.value("min_blur_sigma", c.augment.min_blur_sigma);
            c.augment.max_blur_sigma = a.value("max_blur_sigma", c.augment.max_blur_sigma);
        }
        c.seed = j.value("seed", c.seed);
        c.max_steps = j.value("max_steps", c.max_steps);
        c.val_every = j.value("val_every", c.val_every);
        c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
        c.include_background = j.value("include_background", c.include_background);
        c.dice_eps = j.value("dice_eps", c.dice_eps);
        if (j.contains("model")) {
            c.model = j.at("model").is_string() && j.at("model").get<std::string>() == "reduced"
                          ? model::ModelConfig::reduced()
                          : model::ModelConfig::from_json(j.at("model").dump());
        }
        c.output_dir = j.value("output_dir", c.output_dir);
        c.resume_from = j.value("resume_from", c.resume_from);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::InvalidConfig, std::string("train config: ") + e.what());
    }
    c.validate();
    return c;
}

double validation_dsc(model::NetworkImpl& net, const std::vector<TrainCase>& cases) {
    if (cases.empty()) throw Error(ErrorCode::EmptyDataset, "no validation cases");
    const bool was_training = net.is_training();
    net.eval();
    torch::NoGradGuard no_grad;
    double total = 0.0;
    for (const auto& c : cases) {
        const TrainCase window = center_patch_case(c);
        auto pred = net.forward(model::patch_to_tensor(window.intensity)).argmax(1).to(torch::kInt32).contiguous();
        LabelGrid labels(window.labels.dims(), std::vector<std::int32_t>(pred.data_ptr<std::int32_t>(),
                                                                          pred.data_ptr<std::int32_t>() + pred.numel()));
        double sum = 0.0;
        int n = 0;
        for (int cls = 1; cls < net.config().num_classes; ++cls) {
            const MaskGrid ref = metrics::binarize(window.labels, cls);
            if (std::none_of(ref.storage().begin(), ref.storage().end(), [](std::uint8_t v) { return v != 0; })) continue;
            sum += metrics::dsc(metrics::binarize(labels, cls), ref);
            ++n;
        }
        total += n > 0 ? sum / n : 1.0;
    }
    net.train(was_training);
    return total / static_cast<double>(cases.size());
}

namespace {

std::string encode_state(const std::mt19937_64& rng, const std::optional<double>& best, std::int64_t best_step, double elapsed) {
    std::ostringstream os;
    os << rng;
    nlohmann::ordered_json j;
    j["rng"] = os.str();
    j["best_val_dsc"] = best ? nlohmann::ordered_json(*best) : nlohmann::ordered_json(nullptr);
    j["best_step"] = best_step;
    j["elapsed"] = elapsed;
    return j.dump();
}

void decode_state(const std::string& text, std::mt19937_64& rng, std::optional<double>& best, std::int64_t& best_step,
                  double& elapsed) {
    try {
        const auto j = nlohmann::json::parse(text);
        std::istringstream is(j.at("rng").get<std::string>());
        is >> rng;
        if (!is) throw Error(ErrorCode::CorruptCheckpoint, "unreadable RNG state");
        best = j.at("best_val_dsc").is_null() ? std::nullopt : std::optional<double>(j.at("best_val_dsc").get<double>());
        best_step = j.at("best_step").get<std::int64_t>();
        elapsed = j.at("elapsed").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::CorruptCheckpoint, std::string("trainer state: ") + e.what());
    }
}

// Keeps only the lines whose leading step number is <= `last`.
void truncate_log(const fs::path& path, std::int64_t last, bool json) {
    std::ifstream in(path);
    if (!in) return;
    std::vector<std::string> kept;
    for (std::string line; std::getline(in, line);) {
        if (line.empty()) continue;
        std::int64_t step = 0;
        if (json) {
            step = nlohmann::json::parse(line).at("step").get<std::int64_t>();
        } else {
            step = std::stoll(line.substr(0, line.find('\t')));
        }
        if (step <= last) kept.push_back(line);
    }
    in.close();
    std::ofstream out(path, std::ios::trunc);
    for (const auto& line : kept) out << line << '\n';
}

std::string format_loss(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const std::vector<TrainCase>& train_cases, const std::vector<TrainCase>& val_cases,
                  const LabelTable& table, const std::function<void(const StepLog&)>& on_step) {
    cfg.validate();
    if (train_cases.empty()) throw Error(ErrorCode::EmptyDataset, "no training cases");
    std::vector<PatchPlan> plans;
    for (const auto& c : train_cases) {
        if (c.intensity.dims() != c.labels.dims()) throw Error(ErrorCode::ShapeMismatch, "case " + c.id + " is misaligned");
        plans.push_back(plan_patches(c.intensity.dims(), kDefaultStride));
    }
    const fs::path out_dir(cfg.output_dir);
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw Error(ErrorCode::Io, "cannot create " + out_dir.string() + ": " + ec.message());

    TrainResult result;
    std::mt19937_64 rng(cfg.seed);
    std::int64_t start = 0;
    double elapsed = 0.0;
    if (!cfg.resume_from.empty()) {
        auto loaded = model::load_checkpoint(cfg.resume_from, table, {cfg.model, false});
        result.net = loaded.net;
        start = loaded.info.step;
        decode_state(loaded.info.train_state, rng, result.best_val_dsc, result.best_step, elapsed);
    } else {
        result.net = model::make_network(cfg.model, cfg.seed);
    }
    result.net->train();

    torch::optim::AdamW optimizer(result.net->parameters(), torch::optim::AdamWOptions(cfg.learning_rate)
                                                                .betas({cfg.beta1, cfg.beta2})
                                                                .eps(cfg.adam_eps)
                                                                .weight_decay(cfg.weight_decay));
    if (!cfg.resume_from.empty()) model::load_optimizer_state(cfg.resume_from, optimizer);

    const fs::path metrics_path = out_dir / "metrics.jsonl", loss_path = out_dir / "loss.tsv";
    if (start > 0) {
        truncate_log(metrics_path, start, true);
        truncate_log(loss_path, start, false);
    }
    std::ofstream metrics_log(metrics_path, start > 0 ? std::ios::app : std::ios::trunc);
    std::ofstream loss_log(loss_path, start > 0 ? std::ios::app : std::ios::trunc);
    if (!metrics_log || !loss_log) throw Error(ErrorCode::Io, "cannot write logs under " + out_dir.string());

    const auto clock_start = std::chrono::steady_clock::now();
    const auto wall = [&] { return elapsed + std::chrono::duration<double>(std::chrono::steady_clock::now() - clock_start).count(); };
    const auto save = [&](const fs::path& path, std::int64_t step) {
        model::save_checkpoint(path.string(), *result.net, table,
                               {step, &optimizer, encode_state(rng, result.best_val_dsc, result.best_step, wall())});
    };

    std::uniform_int_distribution<std::size_t> pick_case(0, train_cases.size() - 1);
    for (std::int64_t step = start + 1; step <= cfg.max_steps; ++step) {
        std::vector<torch::Tensor> xs, ys;
        for (int b = 0; b < cfg.batch_size; ++b) {
            const std::size_t ci = pick_case(rng);
            const TrainCase& c = train_cases[ci];
            TrainingPatch patch = sample_training_patch(c.intensity, c.labels, plans[ci], rng);
            augment(patch, rng, cfg.augment);
            xs.push_back(model::patch_to_tensor(patch.intensity));
            ys.push_back(one_hot(patch.labels, cfg.model.num_classes));
        }
        const auto x = torch::cat(xs, 0), y = torch::cat(ys, 0);
        auto loss = dice_loss(result.net->forward(x), y, cfg.dice_eps, cfg.include_background);
        const double value = loss.item<double>();
        if (!std::isfinite(value)) {
            throw Error(ErrorCode::NonFiniteLoss, "loss is " + std::to_string(value) + " at step " + std::to_string(step));
        }
        optimizer.zero_grad();
        loss.backward();
        optimizer.step();

        StepLog entry{step, value, std::nullopt, 0.0};
        if (!val_cases.empty() && (step % cfg.val_every == 0 || step == cfg.max_steps)) {
            entry.val_dsc = validation_dsc(*result.net, val_cases);
            if (!result.best_val_dsc || *entry.val_dsc > *result.best_val_dsc) {
                result.best_val_dsc = entry.val_dsc;
                result.best_step = step;
                save(out_dir / "best.ckpt", step);
            }
        }
        entry.wall_time = wall();
        nlohmann::ordered_json line;
        line["step"] = entry.step;
        line["loss"] = entry.loss;
        line["val_dsc"] = entry.val_dsc ? nlohmann::ordered_json(*entry.val_dsc) : nlohmann::ordered_json(nullptr);
        line["wall_time"] = entry.wall_time;
        metrics_log << line.dump() << '\n' << std::flush;
        loss_log << step << '\t' << format_loss(value) << '\n' << std::flush;
        result.log.push_back(entry);
        if (on_step) on_step(entry);
        if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) save(out_dir / ("step_" + std::to_string(step) + ".ckpt"), step);
    }
    save(out_dir / "last.ckpt", std::max(start, cfg.max_steps));
    return result;
}

}  // namespace subseg::training
