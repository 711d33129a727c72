#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "texstat/data.hpp"
#include "texstat/gradsuite.hpp"
#include "texstat/image_io.hpp"
#include "texstat/metrics.hpp"
#include "texstat/model.hpp"
#include "texstat/ops.hpp"
#include "texstat/train.hpp"

namespace {

constexpr const char* kToolVersion = "texstat 1.0.0";

using texstat::ConfigError;
using texstat::DataError;
using texstat::ModelConfig;
using texstat::NumericError;
using texstat::ShapeError;
using texstat::Tensor;
using texstat::TrainConfig;

std::string read_text_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot read file: " + path);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("cannot write file: " + path);
    os << text;
    if (!os) throw DataError("failed writing file: " + path);
}

// Merges config-file keys with --set overrides and splits them into the
// model and training configs; leftover keys are rejected.
void resolve_configs(const std::string& config_path, const std::vector<std::string>& sets,
                     ModelConfig& mc, TrainConfig& tc) {
    std::map<std::string, std::string> kv;
    if (!config_path.empty()) kv = texstat::parse_kv_text(read_text_file(config_path));
    for (const std::string& s : sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos || eq == 0)
            throw ConfigError("--set expects key=value, got '" + s + "'");
        std::string key = s.substr(0, eq), value = s.substr(eq + 1);
        while (!key.empty() && key.back() == ' ') key.pop_back();
        while (!value.empty() && value.front() == ' ') value.erase(value.begin());
        kv[key] = value;
    }
    mc.apply_kv(kv);
    tc.apply_kv(kv);
    if (!kv.empty()) throw ConfigError("unknown config key '" + kv.begin()->first + "'");
}

std::string train_config_to_manifest_text(const TrainConfig& tc) {
    std::ostringstream os;
    os.precision(17);
    os << "batch_size = " << tc.batch_size << "\n";
    os << "epochs = " << tc.epochs << "\n";
    os << "learning_rate = " << tc.learning_rate << "\n";
    os << "weight_decay = " << tc.weight_decay << "\n";
    os << "decay_factor = " << tc.decay_factor << "\n";
    os << "decay_every_epochs = " << tc.decay_every_epochs << "\n";
    os << "augment = " << (tc.augment ? "true" : "false") << "\n";
    os << "train_seed = " << tc.seed << "\n";
    return os.str();
}

unsigned char to_u8(double v) {
    const long r = std::lround(std::clamp(v, 0.0, 1.0) * 255.0);
    return static_cast<unsigned char>(std::clamp(r, 0L, 255L));
}

template <typename T>
texstat::ImageU8 tensor_to_rgb_u8(const Tensor<T>& t) {
    texstat::ImageU8 img;
    img.height = t.dim(1);
    img.width = t.dim(2);
    img.channels = 3;
    const std::int64_t hw = img.height * img.width;
    img.pixels.resize(static_cast<std::size_t>(hw * 3));
    const T* d = t.data();
    for (std::int64_t i = 0; i < hw; ++i)
        for (int c = 0; c < 3; ++c)
            img.pixels[static_cast<std::size_t>(3 * i + c)] =
                to_u8(static_cast<double>(d[c * hw + i]));
    return img;
}

template <typename T>
texstat::ImageU8 tensor_to_gray_u8(const Tensor<T>& t, double scale) {
    texstat::ImageU8 img;
    img.height = t.dim(1);
    img.width = t.dim(2);
    img.channels = 1;
    const std::int64_t hw = img.height * img.width;
    img.pixels.resize(static_cast<std::size_t>(hw));
    const T* d = t.data();
    for (std::int64_t i = 0; i < hw; ++i)
        img.pixels[static_cast<std::size_t>(i)] = to_u8(static_cast<double>(d[i]) * scale);
    return img;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

struct SynthArgs {
    std::string out;
    texstat::SynthParams params;
};

int cmd_synth(const SynthArgs& a) {
    namespace fs = std::filesystem;
    a.params.validate();
    const auto samples = texstat::synth<float>(a.params);
    fs::create_directories(fs::path(a.out) / "images");
    fs::create_directories(fs::path(a.out) / "masks");
    for (const auto& s : samples) {
        texstat::write_png((fs::path(a.out) / "images" / (s.id + ".png")).string(),
                           tensor_to_rgb_u8(s.image));
        texstat::write_png((fs::path(a.out) / "masks" / (s.id + ".png")).string(),
                           tensor_to_gray_u8(s.mask, 255.0));
    }
    std::cout << "wrote " << samples.size() << " image/mask pairs under " << a.out << "\n";
    return 0;
}

struct TrainArgs {
    std::string data, val_data, config, out;
    std::vector<std::string> sets;
};

int cmd_train(const TrainArgs& a) {
    namespace fs = std::filesystem;
    ModelConfig mc;
    TrainConfig tc;
    resolve_configs(a.config, a.sets, mc, tc);
    mc.validate();
    tc.checkpoint_dir = a.out;
    tc.validate();

    fs::create_directories(a.out);
    std::ostringstream manifest;
    manifest << "# " << kToolVersion << " training manifest\n";
    manifest << "# data: " << a.data << "\n";
    if (!a.val_data.empty()) manifest << "# val-data: " << a.val_data << "\n";
    manifest << "# artifacts: manifest.txt trace.csv best.ckpt final.ckpt\n";
    manifest << texstat::model_config_to_text(mc);
    manifest << train_config_to_manifest_text(tc);
    const std::string manifest_path = (fs::path(a.out) / "manifest.txt").string();
    write_text_file(manifest_path, manifest.str());

    const auto samples = texstat::load_dir<float>((fs::path(a.data) / "images").string(),
                                                  (fs::path(a.data) / "masks").string(),
                                                  mc.input_h, mc.input_w);
    std::vector<texstat::SamplePair<float>> val;
    if (!a.val_data.empty())
        val = texstat::load_dir<float>((fs::path(a.val_data) / "images").string(),
                                       (fs::path(a.val_data) / "masks").string(), mc.input_h,
                                       mc.input_w);

    auto model = texstat::build_model<float>(mc);
    std::cout << "model parameters: " << texstat::parameter_count(model) << "\n";
    const auto result = texstat::train(model, samples, val, tc, &std::cout);
    write_text_file((fs::path(a.out) / "trace.csv").string(),
                    texstat::trace_to_csv(result.trace));
    std::cout << "best val dice " << result.best_val_dice << " at epoch " << result.best_epoch
              << "\n";
    std::cout << "artifacts: " << manifest_path << " " << (fs::path(a.out) / "trace.csv").string()
              << " " << result.best_checkpoint << " " << result.final_checkpoint << "\n";
    return 0;
}

struct EvalArgs {
    std::string data, checkpoint, out;
    double threshold = 0.5;
    bool geometric_ge = false;
};

int cmd_eval(const EvalArgs& a) {
    namespace fs = std::filesystem;
    auto model = texstat::load_checkpoint<float>(a.checkpoint);
    const auto samples = texstat::load_dir<float>((fs::path(a.data) / "images").string(),
                                                  (fs::path(a.data) / "masks").string(),
                                                  model.config.input_h, model.config.input_w);
    if (samples.empty()) throw DataError("no samples found under " + a.data);
    std::vector<texstat::EvalRow> rows;
    for (const auto& s : samples) {
        Tensor<float> prob = texstat::sigmoid(model.forward(s.image));
        Tensor<float> pred = Tensor<float>::zeros(prob.shape());
        const float* p = prob.data();
        float* b = pred.data();
        for (std::int64_t i = 0; i < prob.numel(); ++i)
            b[i] = static_cast<double>(p[i]) >= a.threshold ? 1.0f : 0.0f;
        rows.push_back(texstat::evaluate_sample(s.id, pred, s.mask, a.geometric_ge));
    }
    const auto report = texstat::summarize(std::move(rows));
    const std::string csv = texstat::report_to_csv(report);
    std::cout << csv;
    if (report.hd95_undefined > 0)
        std::cout << "# hd95 undefined for " << report.hd95_undefined << " sample(s)\n";
    if (!a.out.empty()) write_text_file(a.out, csv);
    return 0;
}

struct PredictArgs {
    std::string image, checkpoint, out, mask_out;
    double threshold = 0.5;
};

int cmd_predict(const PredictArgs& a) {
    auto model = texstat::load_checkpoint<float>(a.checkpoint);
    const texstat::ImageU8 raw = texstat::to_rgb(texstat::read_image(a.image), a.image);
    Tensor<float> img = Tensor<float>::zeros({3, raw.height, raw.width});
    {
        float* d = img.data();
        const std::int64_t hw = raw.height * raw.width;
        for (std::int64_t i = 0; i < hw; ++i)
            for (int c = 0; c < 3; ++c)
                d[c * hw + i] =
                    static_cast<float>(raw.pixels[static_cast<std::size_t>(3 * i + c)]) / 255.0f;
    }
    Tensor<float> prob = texstat::sigmoid(model.forward(
        texstat::resize_bilinear(img, model.config.input_h, model.config.input_w)));
    prob = texstat::resize_bilinear(prob, raw.height, raw.width);

    texstat::write_png(a.out, tensor_to_gray_u8(prob, 255.0));
    Tensor<float> mask = Tensor<float>::zeros(prob.shape());
    const float* p = prob.data();
    float* m = mask.data();
    for (std::int64_t i = 0; i < prob.numel(); ++i)
        m[i] = static_cast<double>(p[i]) >= a.threshold ? 1.0f : 0.0f;
    std::string mask_path = a.mask_out;
    if (mask_path.empty()) {
        std::filesystem::path pth(a.out);
        mask_path = (pth.parent_path() / (pth.stem().string() + "_mask.png")).string();
    }
    texstat::write_png(mask_path, tensor_to_gray_u8(mask, 255.0));
    std::cout << "wrote " << a.out << " and " << mask_path << "\n";
    return 0;
}

int cmd_gradcheck(const std::string& module) {
    const auto cases = texstat::gradcheck_cases(module);
    bool all_pass = true;
    std::cout << "module      case                               max_rel_err   result\n";
    for (const auto& c : cases) {
        const auto rep = c.run();
        all_pass = all_pass && rep.pass;
        std::ostringstream line;
        line.setf(std::ios::left);
        line.width(12);
        line << c.module;
        line.width(35);
        line << c.name;
        line.unsetf(std::ios::left);
        line.precision(3);
        line << std::scientific << rep.max_rel_err << "   " << (rep.pass ? "pass" : "FAIL");
        std::cout << line.str() << "\n";
        if (!rep.pass) std::cout << "    " << rep.str() << "\n";
    }
    std::cout << (all_pass ? "all gradient checks passed\n" : "gradient check FAILURES\n");
    return all_pass ? 0 : 3;
}

int dispatch_error() {
    try {
        throw;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const ShapeError& e) {
        std::cerr << "shape error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{std::string(kToolVersion) +
                 " - statistical-texture lesion segmentation toolkit"};
    app.require_subcommand(1);

    SynthArgs sy;
    auto* synth = app.add_subcommand("synth", "generate a synthetic dermoscopy-style dataset");
    synth->add_option("--out", sy.out, "output directory (images/ and masks/ created inside)")
        ->required();
    synth->add_option("--count", sy.params.count, "number of samples");
    synth->add_option("--size", sy.params.size, "square image size in pixels");
    synth->add_option("--seed", sy.params.seed, "generator seed");
    synth->add_option("--tail-weight", sy.params.tail_weight,
                      "probability of the heavy-tailed lesion speckle component");
    synth->add_option("--blobs-min", sy.params.blobs_min, "minimum lesion lobe count");
    synth->add_option("--blobs-max", sy.params.blobs_max, "maximum lesion lobe count");
    synth->add_option("--roughness", sy.params.boundary_roughness,
                      "boundary perturbation amplitude in [0,1)");
    synth->add_option("--contrast", sy.params.contrast, "lesion darkening in [0,1]");

    TrainArgs tr;
    auto* train = app.add_subcommand("train", "train a model");
    train->add_option("--data", tr.data, "dataset directory with images/ and masks/")->required();
    train->add_option("--val-data", tr.val_data, "separate validation dataset directory");
    train->add_option("--config", tr.config, "key=value config file (manifests work too)");
    train->add_option("--out", tr.out, "output directory for manifest/trace/checkpoints")
        ->required();
    train->add_option("--set", tr.sets, "override a config key, e.g. --set epochs=20")
        ->take_all();
    // Common overrides as first-class flags; applied after --set.
    std::map<std::string, std::string> flag_kv;
    std::string v_stft, v_stet, v_epochs, v_batch, v_lr, v_seed, v_augment;
    train->add_option("--enable-stft", v_stft, "toggle the bottleneck fusion transformer");
    train->add_option("--enable-stet", v_stet, "toggle the skip-path enhance transformer");
    train->add_option("--epochs", v_epochs, "training epochs");
    train->add_option("--batch-size", v_batch, "mini-batch size");
    train->add_option("--lr", v_lr, "base learning rate");
    train->add_option("--seed", v_seed, "weight initialization seed");
    train->add_option("--augment", v_augment, "toggle flip augmentation");

    EvalArgs ev;
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    eval->add_option("--data", ev.data, "dataset directory with images/ and masks/")->required();
    eval->add_option("--checkpoint", ev.checkpoint, "checkpoint file")->required();
    eval->add_option("--out", ev.out, "also write the report CSV here");
    eval->add_option("--threshold", ev.threshold, "probability threshold");
    eval->add_flag("--geometric-ge", ev.geometric_ge,
                   "use the geometric instead of arithmetic sensitivity/specificity mean");

    PredictArgs pr;
    auto* predict = app.add_subcommand("predict", "segment one image");
    predict->add_option("--image", pr.image, "input image (PNG or JPEG)")->required();
    predict->add_option("--checkpoint", pr.checkpoint, "checkpoint file")->required();
    predict->add_option("--out", pr.out, "probability map PNG")->required();
    predict->add_option("--mask-out", pr.mask_out, "binary mask PNG (default: <out>_mask.png)");
    predict->add_option("--threshold", pr.threshold, "probability threshold");

    std::string gc_module = "all";
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    gradcheck->add_option("--module", gc_module, "all|ops|ksco|attention|stft|stet|loss");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (synth->parsed()) return cmd_synth(sy);
        if (train->parsed()) {
            auto push = [&tr](const char* key, const std::string& v) {
                if (!v.empty()) tr.sets.push_back(std::string(key) + "=" + v);
            };
            push("enable_stft", v_stft);
            push("enable_stet", v_stet);
            push("epochs", v_epochs);
            push("batch_size", v_batch);
            push("learning_rate", v_lr);
            push("seed", v_seed);
            push("augment", v_augment);
            return cmd_train(tr);
        }
        if (eval->parsed()) return cmd_eval(ev);
        if (predict->parsed()) return cmd_predict(pr);
        if (gradcheck->parsed()) return cmd_gradcheck(gc_module);
    } catch (...) {
        return dispatch_error();
    }
    return 1;
}
