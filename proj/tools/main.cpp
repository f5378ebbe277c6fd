#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "patchnet/dataset.hpp"
#include "patchnet/eval.hpp"
#include "patchnet/netpbm.hpp"
#include "patchnet/patch_engine.hpp"
#include "patchnet/saliency.hpp"
#include "patchnet/train.hpp"

namespace fs = std::filesystem;
using namespace patchnet;

namespace {

// Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric
// failure (non-finite values detected).
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

void require_fresh(const std::string& path, bool force) {
    if (!force && fs::exists(path)) {
        throw ConfigError(path + " already exists; pass --force to overwrite");
    }
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw IoError(path + ": cannot open for writing");
    out << text;
    if (!out) throw IoError(path + ": write failed");
}

SyntheticSpec synthetic_spec_from_kv(const KvConfig& kv) {
    SyntheticSpec spec;
    spec.image_side = kv.get_int("image_side", spec.image_side);
    spec.num_classes = kv.get_int("num_classes", spec.num_classes);
    if (kv.has("signatures")) {
        std::istringstream in(kv.get_string("signatures", ""));
        std::string item;
        spec.signatures.clear();
        while (std::getline(in, item, ',')) spec.signatures.push_back(signature_from_name(item));
    } else {
        kv.get_string("signatures", "");
        spec.signatures.resize(spec.num_classes, SignatureKind::blob);
        const SyntheticSpec defaults;
        for (int c = 0; c < spec.num_classes && c < 4; ++c) {
            spec.signatures[c] = defaults.signatures[c];
        }
        if (spec.num_classes < 3) spec.shortcut_class = -1;
    }
    spec.prevalence = kv.get_double("prevalence", spec.prevalence);
    spec.noise_sigma = kv.get_double("noise_sigma", spec.noise_sigma);
    spec.background_level = kv.get_double("background_level", spec.background_level);
    spec.blob_radius_min = kv.get_double("blob_radius_min", spec.blob_radius_min);
    spec.blob_radius_max = kv.get_double("blob_radius_max", spec.blob_radius_max);
    spec.blob_amplitude = kv.get_double("blob_amplitude", spec.blob_amplitude);
    spec.ridge_width = kv.get_double("ridge_width", spec.ridge_width);
    spec.ridge_amplitude = kv.get_double("ridge_amplitude", spec.ridge_amplitude);
    spec.marker_side = kv.get_int("marker_side", spec.marker_side);
    spec.marker_value = kv.get_double("marker_value", spec.marker_value);
    spec.texture_side = kv.get_int("texture_side", spec.texture_side);
    spec.texture_amplitude = kv.get_double("texture_amplitude", spec.texture_amplitude);
    spec.shortcut_class = kv.get_int("shortcut_class", spec.shortcut_class);
    kv.finish();
    spec.validate();
    return spec;
}

std::string synthetic_spec_to_kv(const SyntheticSpec& spec) {
    std::ostringstream out;
    out.precision(17);
    out << "image_side = " << spec.image_side << "\n";
    out << "num_classes = " << spec.num_classes << "\n";
    out << "signatures = ";
    for (size_t i = 0; i < spec.signatures.size(); ++i) {
        if (i) out << ",";
        out << signature_name(spec.signatures[i]);
    }
    out << "\n";
    out << "prevalence = " << spec.prevalence << "\n";
    out << "noise_sigma = " << spec.noise_sigma << "\n";
    out << "background_level = " << spec.background_level << "\n";
    out << "blob_radius_min = " << spec.blob_radius_min << "\n";
    out << "blob_radius_max = " << spec.blob_radius_max << "\n";
    out << "blob_amplitude = " << spec.blob_amplitude << "\n";
    out << "ridge_width = " << spec.ridge_width << "\n";
    out << "ridge_amplitude = " << spec.ridge_amplitude << "\n";
    out << "marker_side = " << spec.marker_side << "\n";
    out << "marker_value = " << spec.marker_value << "\n";
    out << "texture_side = " << spec.texture_side << "\n";
    out << "texture_amplitude = " << spec.texture_amplitude << "\n";
    out << "shortcut_class = " << spec.shortcut_class << "\n";
    return out.str();
}

int cmd_generate(const std::string& config_path, const std::string& out_dir, int n_train,
                 int n_valid, int n_test, uint64_t seed, bool force) {
    SyntheticSpec spec;
    if (!config_path.empty()) {
        spec = synthetic_spec_from_kv(KvConfig::parse_file(config_path));
    } else {
        spec.validate();
    }
    const std::string manifest_path = (fs::path(out_dir) / "manifest.csv").string();
    require_fresh(manifest_path, force);

    Dataset dataset;
    dataset.image_side = spec.image_side;
    dataset.class_names = spec.class_names();
    dataset.samples = generate_dataset(spec, DatasetCounts{n_train, n_valid, n_test}, seed);
    write_dataset(dataset, out_dir);
    write_text((fs::path(out_dir) / "generate.config.txt").string(),
               synthetic_spec_to_kv(spec) + "n_train = " + std::to_string(n_train) +
                   "\nn_valid = " + std::to_string(n_valid) +
                   "\nn_test = " + std::to_string(n_test) + "\nseed = " + std::to_string(seed) +
                   "\n");

    std::cout << "wrote " << dataset.samples.size() << " samples to " << out_dir << "\n";
    for (size_t c = 0; c < dataset.class_names.size(); ++c) {
        size_t positives = 0;
        for (const Sample& s : dataset.samples) positives += s.labels[c];
        std::cout << "prevalence " << dataset.class_names[c] << " " << positives << "/"
                  << dataset.samples.size() << "\n";
    }
    return 0;
}

struct TrainFlags {
    int epochs = 20;
    int batch_images = 16;
    double peak_lr = 1e-4;
    double warmup_fraction = 0.05;
    double weight_decay = 0.01;
    uint64_t seed = 0;
    bool augment_crop = true;
    bool augment_rotation = true;
    bool augment_brightness = true;
    double crop_area_min = 0.5, crop_area_max = 1.0;
    double rotation_deg_min = -5.0, rotation_deg_max = 5.0;
    double brightness_min = 0.7, brightness_max = 1.3;
    bool no_augment = false;
};

int cmd_train(const std::string& manifest, const std::string& config_path, int patches,
              const std::vector<int>& stage_channels, int kernel_size,
              const std::string& out_path, const CLI::App* sub, const TrainFlags& flags,
              bool force) {
    TrainConfig config;
    if (!config_path.empty()) {
        const KvConfig kv = KvConfig::parse_file(config_path);
        config = TrainConfig::from_kv(kv);
        kv.finish();
    }
    // Flags override file values when they were given on the command line.
    if (sub->count("--epochs")) config.epochs = flags.epochs;
    if (sub->count("--batch-images")) config.batch_images = flags.batch_images;
    if (sub->count("--peak-lr")) config.peak_lr = flags.peak_lr;
    if (sub->count("--warmup-fraction")) config.warmup_fraction = flags.warmup_fraction;
    if (sub->count("--weight-decay")) config.weight_decay = flags.weight_decay;
    if (sub->count("--seed")) config.seed = flags.seed;
    if (sub->count("--augment-crop")) config.augment_crop = flags.augment_crop;
    if (sub->count("--augment-rotation")) config.augment_rotation = flags.augment_rotation;
    if (sub->count("--augment-brightness")) config.augment_brightness = flags.augment_brightness;
    if (sub->count("--crop-area-min")) config.augment.crop_area_min = flags.crop_area_min;
    if (sub->count("--crop-area-max")) config.augment.crop_area_max = flags.crop_area_max;
    if (sub->count("--rotation-deg-min")) config.augment.rotation_deg_min = flags.rotation_deg_min;
    if (sub->count("--rotation-deg-max")) config.augment.rotation_deg_max = flags.rotation_deg_max;
    if (sub->count("--brightness-min")) config.augment.brightness_min = flags.brightness_min;
    if (sub->count("--brightness-max")) config.augment.brightness_max = flags.brightness_max;
    if (flags.no_augment) {
        config.augment_crop = false;
        config.augment_rotation = false;
        config.augment_brightness = false;
    }
    config.validate();
    require_fresh(out_path, force);

    const Dataset dataset = load_manifest(manifest);
    const PatchGridSpec grid(dataset.image_side, patches);

    BackboneConfig bcfg;
    bcfg.num_classes = static_cast<int>(dataset.class_names.size());
    bcfg.stage_channels = stage_channels;
    bcfg.kernel_size = kernel_size;
    bcfg.input_side = grid.patch_side;
    bcfg.validate();

    std::vector<TrainSample> train_set, valid_set;
    for (const Sample& s : dataset.samples) {
        if (s.split == Split::train) train_set.push_back({s.image, s.labels});
        if (s.split == Split::valid) valid_set.push_back({s.image, s.labels});
    }

    Backbone model = Backbone::build(bcfg, config.seed);
    TrainResult result = train(std::move(model), train_set, valid_set, grid, config);

    save_checkpoint(result.model, grid, dataset.class_names,
                    CheckpointMeta{config.epochs, config.seed}, out_path);

    std::ostringstream log;
    for (const EpochLog& e : result.log) {
        nlohmann::json train_line{{"epoch", e.epoch}, {"split", "train"}, {"loss", e.train_loss}};
        log << train_line.dump() << "\n";
        nlohmann::json valid_line{{"epoch", e.epoch}, {"split", "valid"}, {"loss", e.valid_loss}};
        valid_line["auroc"] = e.valid_auroc ? nlohmann::json(*e.valid_auroc) : nlohmann::json();
        log << valid_line.dump() << "\n";
    }
    write_text(out_path + ".metrics.jsonl", log.str());

    std::ostringstream cfg_text;
    cfg_text << config.to_kv_text();
    cfg_text << "patches = " << patches << "\n";
    cfg_text << "stage_channels = ";
    for (size_t i = 0; i < stage_channels.size(); ++i) {
        if (i) cfg_text << ",";
        cfg_text << stage_channels[i];
    }
    cfg_text << "\nkernel_size = " << kernel_size << "\n";
    write_text(out_path + ".config.txt", cfg_text.str());

    std::cout << "trained " << config.epochs << " epochs, checkpoint written to " << out_path
              << "\n";
    if (!result.log.empty() && result.log.back().valid_auroc) {
        std::cout << "final valid auroc " << *result.log.back().valid_auroc << "\n";
    }
    return 0;
}

int cmd_eval(const std::string& manifest, const std::string& checkpoint_path,
             const std::string& method_name, int shift_offset, int bootstrap_n, uint64_t seed,
             int threads, const std::string& out_prefix, bool force) {
    const Dataset dataset = load_manifest(manifest);
    const Checkpoint ck = load_checkpoint(checkpoint_path);
    const Backbone model = backbone_from_checkpoint(ck);
    if (dataset.class_names != ck.class_names) {
        std::string want;
        for (const auto& n : ck.class_names) want += (want.empty() ? "" : ",") + n;
        std::string got;
        for (const auto& n : dataset.class_names) got += (got.empty() ? "" : ",") + n;
        throw ConfigError("eval: checkpoint classes [" + want + "] do not match manifest [" +
                          got + "]");
    }
    if (dataset.image_side != ck.grid.image_side) {
        throw ConfigError("eval: dataset image side " + std::to_string(dataset.image_side) +
                          " != checkpoint image side " + std::to_string(ck.grid.image_side));
    }

    EvalOptions options;
    options.method = saliency_method_from_name(method_name);
    options.shift_offset = shift_offset;
    options.bootstrap_resamples = bootstrap_n;
    options.seed = seed;
    options.threads = threads;

    require_fresh(out_prefix + ".json", force);
    require_fresh(out_prefix + ".txt", force);

    const EvalReport report = evaluate(dataset, model, ck.grid, options);
    write_text(out_prefix + ".json", report_to_json(report).dump(2) + "\n");
    write_text(out_prefix + ".txt", report_to_table(report));

    std::ostringstream cfg_text;
    cfg_text << "manifest = " << manifest << "\n";
    cfg_text << "checkpoint = " << checkpoint_path << "\n";
    cfg_text << "method = " << method_name << "\n";
    cfg_text << "shift_offset = " << report.shift_offset << "\n";
    cfg_text << "bootstrap_n = " << bootstrap_n << "\n";
    cfg_text << "seed = " << seed << "\n";
    write_text(out_prefix + ".config.txt", cfg_text.str());

    std::cout << report_to_table(report);
    return 0;
}

int cmd_explain(const std::string& image_path, const std::string& checkpoint_path,
                const std::string& class_name, const std::string& method_name, int shift_offset,
                const std::string& out_prefix, bool force) {
    const Checkpoint ck = load_checkpoint(checkpoint_path);
    const Backbone model = backbone_from_checkpoint(ck);
    const SaliencyMethod method = saliency_method_from_name(method_name);

    int class_id = -1;
    for (size_t c = 0; c < ck.class_names.size(); ++c) {
        if (ck.class_names[c] == class_name) class_id = static_cast<int>(c);
    }
    if (class_id < 0) {
        std::string valid;
        for (const auto& n : ck.class_names) valid += (valid.empty() ? "" : ", ") + n;
        throw ConfigError("unknown class '" + class_name + "'; valid classes: " + valid);
    }

    const Image image = pgm_to_image(read_pgm(image_path));
    if (image.side != ck.grid.image_side) {
        throw ConfigError("explain: image side " + std::to_string(image.side) +
                          " != checkpoint image side " + std::to_string(ck.grid.image_side));
    }
    const Tensor image_t = image_to_tensor(image);

    require_fresh(out_prefix + ".ppm", force);
    require_fresh(out_prefix + ".pgm", force);
    require_fresh(out_prefix + ".json", force);

    const PatchLogitGrid grid = predict(image_t, model, ck.grid);
    const int offset = shift_offset > 0 ? shift_offset : ck.grid.patch_side;

    SaliencyMap map;
    if (method == SaliencyMethod::gradcam) {
        if (ck.grid.patches_per_side != 1) {
            throw ConfigError("explain: gradcam requires a P=1 checkpoint");
        }
        map = gradcam(image_t, model, class_id);
    } else {
        map = shifted_saliency(image_t, model, ck.grid, ShiftSpec(offset), class_id,
                               method == SaliencyMethod::patch_scaled);
    }

    render_overlay(image, map, out_prefix + ".ppm");
    write_saliency_pgm(map, out_prefix + ".pgm");

    nlohmann::json z = nlohmann::json::array();
    for (int r = 0; r < ck.grid.patches_per_side; ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (int c = 0; c < ck.grid.patches_per_side; ++c) {
            nlohmann::json cell = nlohmann::json::array();
            for (int k = 0; k < model.config().num_classes; ++k) cell.push_back(grid.z(r, c, k));
            row.push_back(std::move(cell));
        }
        z.push_back(std::move(row));
    }
    nlohmann::json summary{{"class", class_name},
                           {"class_index", class_id},
                           {"method", method_name},
                           {"shift_offset", method == SaliencyMethod::gradcam ? 0 : offset},
                           {"global_logits", grid.global_logits},
                           {"probabilities", grid.probabilities},
                           {"patch_logits", z}};
    write_text(out_prefix + ".json", summary.dump(2) + "\n");

    std::ostringstream cfg_text;
    cfg_text << "image = " << image_path << "\n";
    cfg_text << "checkpoint = " << checkpoint_path << "\n";
    cfg_text << "class = " << class_name << "\n";
    cfg_text << "method = " << method_name << "\n";
    cfg_text << "shift_offset = " << (method == SaliencyMethod::gradcam ? 0 : offset) << "\n";
    write_text(out_prefix + ".config.txt", cfg_text.str());

    std::cout << "class " << class_name << ": Z=" << grid.global_logits[class_id]
              << " yhat=" << grid.probabilities[class_id] << "\n";
    std::cout << "wrote " << out_prefix << ".ppm, .pgm, .json\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"patchnet: patch-averaged image classifier with decomposable saliency maps"};
    app.require_subcommand(1);

    // generate
    auto* gen = app.add_subcommand("generate", "Generate a synthetic dataset with ground-truth masks");
    std::string gen_config, gen_out;
    int gen_train = 2000, gen_valid = 200, gen_test = 200;
    uint64_t gen_seed = 0;
    bool gen_force = false;
    gen->add_option("--config", gen_config, "Generator config file (key = value)");
    gen->add_option("--out", gen_out, "Output directory")->required();
    gen->add_option("--n-train", gen_train, "Training samples");
    gen->add_option("--n-valid", gen_valid, "Validation samples");
    gen->add_option("--n-test", gen_test, "Test samples");
    gen->add_option("--seed", gen_seed, "Generator seed");
    gen->add_flag("--force", gen_force, "Overwrite existing outputs");

    // train
    auto* tr = app.add_subcommand("train", "Train the patch model on a dataset manifest");
    std::string tr_manifest, tr_config, tr_out;
    int tr_patches = 8, tr_kernel = 3;
    std::vector<int> tr_stages = {16, 32, 64};
    TrainFlags tf;
    bool tr_force = false;
    tr->add_option("--manifest", tr_manifest, "Dataset manifest.csv")->required();
    tr->add_option("--config", tr_config, "Training config file (key = value)");
    tr->add_option("--patches", tr_patches, "Patches per side P (1 trains the full-image baseline)");
    tr->add_option("--stage-channels", tr_stages, "Backbone stage channels")->delimiter(',');
    tr->add_option("--kernel-size", tr_kernel, "Backbone conv kernel size");
    tr->add_option("--out", tr_out, "Output checkpoint path")->required();
    tr->add_option("--epochs", tf.epochs, "Training epochs");
    tr->add_option("--batch-images", tf.batch_images, "Images per batch");
    tr->add_option("--peak-lr", tf.peak_lr, "Peak learning rate");
    tr->add_option("--warmup-fraction", tf.warmup_fraction, "Warmup fraction of total steps");
    tr->add_option("--weight-decay", tf.weight_decay, "Decoupled weight decay");
    tr->add_option("--seed", tf.seed, "Training seed");
    tr->add_option("--augment-crop", tf.augment_crop, "Enable crop augmentation");
    tr->add_option("--augment-rotation", tf.augment_rotation, "Enable rotation augmentation");
    tr->add_option("--augment-brightness", tf.augment_brightness, "Enable brightness augmentation");
    tr->add_option("--crop-area-min", tf.crop_area_min, "Crop area fraction lower bound");
    tr->add_option("--crop-area-max", tf.crop_area_max, "Crop area fraction upper bound");
    tr->add_option("--rotation-deg-min", tf.rotation_deg_min, "Rotation lower bound (degrees)");
    tr->add_option("--rotation-deg-max", tf.rotation_deg_max, "Rotation upper bound (degrees)");
    tr->add_option("--brightness-min", tf.brightness_min, "Brightness factor lower bound");
    tr->add_option("--brightness-max", tf.brightness_max, "Brightness factor upper bound");
    tr->add_flag("--no-augment", tf.no_augment, "Disable all augmentation");
    tr->add_flag("--force", tr_force, "Overwrite existing outputs");

    // eval
    auto* ev = app.add_subcommand("eval", "Evaluate classification and localization metrics");
    std::string ev_manifest, ev_checkpoint, ev_method = "patch_raw", ev_out;
    int ev_shift = 0, ev_bootstrap = 1000, ev_threads = 1;
    uint64_t ev_seed = 0;
    bool ev_force = false;
    ev->add_option("--manifest", ev_manifest, "Dataset manifest.csv")->required();
    ev->add_option("--checkpoint", ev_checkpoint, "Model checkpoint")->required();
    ev->add_option("--method", ev_method, "Saliency method: patch_raw|patch_scaled|gradcam");
    ev->add_option("--shift-offset", ev_shift, "Shift offset o (default: patch side)");
    ev->add_option("--bootstrap-n", ev_bootstrap, "Bootstrap resamples (0: point estimates only)");
    ev->add_option("--seed", ev_seed, "Bootstrap seed");
    ev->add_option("--threads", ev_threads, "Worker threads (results identical for any count)");
    ev->add_option("--out", ev_out, "Output prefix for .json/.txt")->required();
    ev->add_flag("--force", ev_force, "Overwrite existing outputs");

    // explain
    auto* ex = app.add_subcommand("explain", "Render the saliency map for one image");
    std::string ex_image, ex_checkpoint, ex_class, ex_method = "patch_raw", ex_out;
    int ex_shift = 0;
    bool ex_force = false;
    ex->add_option("--image", ex_image, "Input image (PGM)")->required();
    ex->add_option("--checkpoint", ex_checkpoint, "Model checkpoint")->required();
    ex->add_option("--class", ex_class, "Class name")->required();
    ex->add_option("--method", ex_method, "Saliency method: patch_raw|patch_scaled|gradcam");
    ex->add_option("--shift-offset", ex_shift, "Shift offset o (default: patch side)");
    ex->add_option("--out", ex_out, "Output prefix for .ppm/.pgm/.json")->required();
    ex->add_flag("--force", ex_force, "Overwrite existing outputs");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : kExitUsage;
    }

    try {
        if (gen->parsed()) {
            return cmd_generate(gen_config, gen_out, gen_train, gen_valid, gen_test, gen_seed,
                                gen_force);
        }
        if (tr->parsed()) {
            return cmd_train(tr_manifest, tr_config, tr_patches, tr_stages, tr_kernel, tr_out, tr,
                             tf, tr_force);
        }
        if (ev->parsed()) {
            return cmd_eval(ev_manifest, ev_checkpoint, ev_method, ev_shift, ev_bootstrap, ev_seed,
                            ev_threads, ev_out, ev_force);
        }
        if (ex->parsed()) {
            return cmd_explain(ex_image, ex_checkpoint, ex_class, ex_method, ex_shift, ex_out,
                               ex_force);
        }
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    return 0;
}
