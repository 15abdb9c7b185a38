#include "attnseg/cli.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "attnseg/data.hpp"
#include "attnseg/gradcheck.hpp"
#include "attnseg/metrics.hpp"
#include "attnseg/model.hpp"
#include "attnseg/serialize.hpp"
#include "attnseg/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace attnseg {

namespace {

struct RunSpec {
    std::string config_path;
    std::string out_dir;
    uint64_t seed = 0;
    std::vector<std::string> overrides;
    std::string ckpt_path;
    std::string image_path;
};

void apply_override(json& cfg, const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("override must look like key=value, got: " + kv);
    const std::string key = kv.substr(0, eq);
    const std::string value = kv.substr(eq + 1);

    json* node = &cfg;
    std::istringstream path(key);
    std::string part, prev;
    std::vector<std::string> parts;
    while (std::getline(path, part, '.')) parts.push_back(part);
    if (parts.empty()) throw ConfigError("empty override key in: " + kv);
    for (size_t i = 0; i + 1 < parts.size(); ++i) node = &((*node)[parts[i]]);

    json parsed = json::parse(value, nullptr, false);
    (*node)[parts.back()] = parsed.is_discarded() ? json(value) : parsed;
}

json load_config(const RunSpec& spec) {
    if (spec.config_path.empty()) throw ConfigError("--config is required for this subcommand");
    std::ifstream is(spec.config_path);
    if (!is) throw ConfigError("cannot open config file: " + spec.config_path);
    json cfg = json::parse(is, nullptr, false);
    if (cfg.is_discarded()) throw ConfigError("config is not valid JSON: " + spec.config_path);
    for (const std::string& kv : spec.overrides) apply_override(cfg, kv);
    return cfg;
}

std::string manifest_path_from(const json& cfg, const RunSpec& spec) {
    if (!cfg.contains("data") || !cfg["data"].contains("manifest")) {
        throw ConfigError("config has no data.manifest entry");
    }
    fs::path p = cfg["data"]["manifest"].get<std::string>();
    if (p.is_relative()) p = fs::path(spec.config_path).parent_path() / p;
    return p.string();
}

void ensure_out_dir(const RunSpec& spec) {
    if (spec.out_dir.empty()) throw ConfigError("--out is required for this subcommand");
    fs::create_directories(spec.out_dir);
}

std::string out_file(const RunSpec& spec, const std::string& name) {
    return (fs::path(spec.out_dir) / name).string();
}

uint8_t to_byte(double v) {
    v = std::clamp(v, 0.0, 1.0);
    return static_cast<uint8_t>(std::lround(v * 255.0));
}

// one channel of an N×C×H×W (or N×1×H×W) tensor, sample 0, as a PGM
void write_map_pgm(const std::string& path, const Tensor& t, int64_t channel) {
    const int64_t h = t.dim(2), w = t.dim(3);
    std::vector<uint8_t> bytes(static_cast<size_t>(h * w));
    const double* p = t.data().data() + channel * h * w;
    for (int64_t i = 0; i < h * w; ++i) bytes[static_cast<size_t>(i)] = to_byte(p[i]);
    write_pgm(path, h, w, bytes);
}

void write_mask_pgm(const std::string& path, const MaskBatch& mask, int64_t image,
                    const DatasetManifest& manifest) {
    std::map<int, int> label_to_value;
    for (const auto& [value, label] : manifest.value_to_label) label_to_value[label] = value;
    const int64_t hw = mask.h * mask.w;
    std::vector<uint8_t> bytes(static_cast<size_t>(hw));
    for (int64_t i = 0; i < hw; ++i) {
        const int32_t label = mask.labels[static_cast<size_t>(image * hw + i)];
        auto it = label_to_value.find(label);
        const int value = it != label_to_value.end()
                              ? it->second
                              : static_cast<int>(255 * label / std::max<int64_t>(1, manifest.classes - 1));
        bytes[static_cast<size_t>(i)] = static_cast<uint8_t>(value);
    }
    write_pgm(path, mask.h, mask.w, bytes);
}

std::vector<int32_t> foreground_classes(int64_t num_classes) {
    std::vector<int32_t> out;
    for (int32_t c = 1; c < num_classes; ++c) out.push_back(c);
    return out;
}

MetricsReport evaluate_split(CANetModel& model, const std::vector<Sample>& samples) {
    MaskBatch pred, truth;
    std::vector<std::string> ids;
    for (const Sample& s : samples) {
        Tensor x = stack_images({s}, {0});
        Tensor logits = model.forward(x, /*training=*/false);
        MaskBatch one = predict_mask(logits);
        if (pred.n == 0) {
            pred.h = truth.h = one.h;
            pred.w = truth.w = one.w;
        } else if (one.h != pred.h || one.w != pred.w) {
            throw ContractError("evaluation currently requires uniformly sized images");
        }
        pred.labels.insert(pred.labels.end(), one.labels.begin(), one.labels.end());
        truth.labels.insert(truth.labels.end(), s.mask.begin(), s.mask.end());
        ++pred.n;
        ++truth.n;
        ids.push_back(s.id);
    }
    return report(pred, truth, foreground_classes(model.config.num_classes), ids);
}

void write_metrics(const RunSpec& spec, const MetricsReport& rep) {
    std::ofstream js(out_file(spec, "metrics.json"));
    js << rep.to_json().dump(2) << "\n";
    std::ofstream cs(out_file(spec, "metrics.csv"));
    cs << rep.to_csv();
}

std::pair<CANetModel, json> load_model_checkpoint(const RunSpec& spec) {
    std::string path = spec.ckpt_path.empty() ? out_file(spec, "best.ckpt") : spec.ckpt_path;
    if (!fs::exists(path)) throw ConfigError("checkpoint not found: " + path);
    CheckpointData ck = load_checkpoint(path);
    if (!ck.config.contains("model")) throw FormatError("checkpoint has no model config block");
    ModelConfig mc = ModelConfig::from_json(ck.config["model"]);
    CANetModel model = CANetModel::build(mc, 0);
    model.load_state(ck.tensors);
    return {std::move(model), ck.config};
}

// ---- subcommands ----

int cmd_train(const RunSpec& spec) {
    ensure_out_dir(spec);
    json cfg = load_config(spec);
    ModelConfig model_cfg = ModelConfig::from_json(cfg.value("model", json::object()));
    TrainConfig train_cfg = TrainConfig::from_json(cfg.value("train", json::object()));
    train_cfg.seed = spec.seed;

    const std::string manifest_path = manifest_path_from(cfg, spec);
    if (!fs::exists(manifest_path)) throw ConfigError("manifest not found: " + manifest_path);
    DatasetManifest manifest = DatasetManifest::load(manifest_path);

    cfg["run"] = {{"seed", spec.seed}, {"manifest", manifest_path}};
    {
        std::ofstream snap(out_file(spec, "config.snapshot.json"));
        snap << cfg.dump(2) << "\n";
    }

    std::vector<Sample> train_set = load_split(manifest, "train");
    std::vector<Sample> val_set = load_split(manifest, "val");

    CANetModel model = CANetModel::build(model_cfg, spec.seed);
    std::ofstream epochs(out_file(spec, "epochs.jsonl"));
    TrainResult result = train(model, train_set, val_set, train_cfg, &epochs);

    json ckpt_cfg = {{"model", model_cfg.to_json()}, {"train", train_cfg.to_json()}};
    save_checkpoint(out_file(spec, "best.ckpt"), result.best_state, ckpt_cfg);

    model.load_state(result.best_state);
    write_metrics(spec, evaluate_split(model, val_set));

    std::cout << "train: best val dice " << result.best_val_dice << " at epoch " << result.best_epoch
              << " (" << result.log.size() << " epochs)\n";
    return 0;
}

int cmd_eval(const RunSpec& spec) {
    ensure_out_dir(spec);
    json cfg = load_config(spec);
    auto [model, ckpt_cfg] = load_model_checkpoint(spec);
    DatasetManifest manifest = DatasetManifest::load(manifest_path_from(cfg, spec));
    std::vector<Sample> test_set = load_split(manifest, "test");
    MetricsReport rep = evaluate_split(model, test_set);
    write_metrics(spec, rep);
    for (int32_t cls : rep.classes) {
        const ClassSummary& s = rep.summary.at(cls);
        std::cout << "eval: class " << cls << " dice " << 100.0 * s.dice_mean << "% +/- "
                  << 100.0 * s.dice_std << ", assd ";
        if (s.assd_mean) {
            std::cout << *s.assd_mean << " +/- " << *s.assd_std << " px";
        } else {
            std::cout << "undefined";
        }
        if (s.assd_undefined > 0) std::cout << " (" << s.assd_undefined << " undefined)";
        std::cout << "\n";
    }
    return 0;
}

int cmd_infer(const RunSpec& spec) {
    ensure_out_dir(spec);
    json cfg = load_config(spec);
    auto [model, ckpt_cfg] = load_model_checkpoint(spec);
    DatasetManifest manifest = DatasetManifest::load(manifest_path_from(cfg, spec));

    json timings = json::array();
    auto run_one = [&](const Tensor& image, const std::string& id) {
        Tensor x = reshape(image, {1, image.dim(0), image.dim(1), image.dim(2)});
        const auto t0 = std::chrono::steady_clock::now();
        Tensor logits = model.forward(x, /*training=*/false);
        MaskBatch mask = predict_mask(logits);
        const double ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        write_mask_pgm(out_file(spec, "pred_" + id + ".pgm"), mask, 0, manifest);
        timings.push_back({{"id", id}, {"ms", ms}});
        std::cout << "infer: " << id << " " << ms << " ms\n";
    };

    if (!spec.image_path.empty()) {
        run_one(load_image(spec.image_path, manifest), fs::path(spec.image_path).stem().string());
    } else {
        for (const auto& entry : manifest.split("test")) {
            run_one(load_image(manifest.resolve(entry.image), manifest), entry.id);
        }
    }
    std::ofstream ts(out_file(spec, "timings.json"));
    ts << timings.dump(2) << "\n";
    return 0;
}

int cmd_explain(const RunSpec& spec) {
    ensure_out_dir(spec);
    json cfg = load_config(spec);
    if (spec.image_path.empty()) throw ConfigError("explain requires --image <path>");
    auto [model, ckpt_cfg] = load_model_checkpoint(spec);
    DatasetManifest manifest = DatasetManifest::load(manifest_path_from(cfg, spec));

    Tensor image = load_image(spec.image_path, manifest);
    Tensor x = reshape(image, {1, image.dim(0), image.dim(1), image.dim(2)});
    Tensor logits = model.forward(x, /*training=*/false);
    write_mask_pgm(out_file(spec, "pred.pgm"), predict_mask(logits), 0, manifest);

    const std::string maps_dir = out_file(spec, "maps");
    fs::create_directories(maps_dir);
    const auto& set = model.attention();
    std::vector<NamedTensor> maps = export_attention_maps(set);

    int64_t written = 0;
    for (const auto& [name, t] : maps) {
        if (name.rfind("sa", 0) == 0) {
            Tensor map = t;
            if (name == "sa1" && set->sa1_map.defined()) {
                // column means hover near 1/HW; rescale by the peak so the map is visible
                double peak = 0.0;
                for (double v : map.data()) peak = std::max(peak, v);
                if (peak > 0.0) map = affine(map, 1.0 / peak, 0.0);
            }
            write_map_pgm((fs::path(maps_dir) / (name + ".pgm")).string(), map, 0);
            ++written;
        } else if (name.rfind("ca", 0) == 0) {
            // β as a 1×C strip
            const int64_t c = t.dim(1);
            std::vector<uint8_t> strip(static_cast<size_t>(c));
            for (int64_t i = 0; i < c; ++i) strip[static_cast<size_t>(i)] = to_byte(t.data()[static_cast<size_t>(i)]);
            write_pgm((fs::path(maps_dir) / (name + ".pgm")).string(), 1, c, strip);
            ++written;
        } else if (name == "la") {
            for (int64_t s = 0; s < t.dim(1); ++s) {
                write_map_pgm((fs::path(maps_dir) / ("la_scale" + std::to_string(s + 1) + ".pgm")).string(),
                              t, s);
                ++written;
            }
        }
    }
    if (set->gamma.defined()) {
        json jg;
        std::vector<double> gamma(set->gamma.data());
        double sum = 0.0;
        for (double v : gamma) sum += v;
        jg["gamma"] = gamma;
        jg["sum"] = sum;
        std::ofstream os((fs::path(maps_dir) / "gamma.json").string());
        os << jg.dump(2) << "\n";
    }
    std::cout << "explain: wrote " << written << " attention maps to " << maps_dir << "\n";
    return 0;
}

int cmd_gradcheck(const RunSpec& spec) {
    (void)spec;
    double seconds = 0.0;
    std::vector<GradCheckResult> results = run_gradcheck_suite(&seconds);
    bool ok = true;
    for (const GradCheckResult& r : results) {
        std::cout << (r.passed() ? "pass" : "FAIL") << "  " << r.name << "  worst rel err "
                  << r.max_rel_error << "  (threshold " << r.threshold << ")\n";
        ok = ok && r.passed();
    }
    std::cout << "gradcheck: " << results.size() << " blocks in " << seconds << " s\n";
    if (!ok) {
        for (const GradCheckResult& r : results) {
            if (!r.passed()) std::cerr << "ERROR: gradient check failed for " << r.name << "\n";
        }
        return 1;
    }
    return 0;
}

int cmd_params(const RunSpec& spec) {
    ensure_out_dir(spec);
    json cfg = load_config(spec);
    ModelConfig model_cfg = ModelConfig::from_json(cfg.value("model", json::object()));
    CANetModel model = CANetModel::build(model_cfg, spec.seed);

    const int64_t total = model.parameter_total();
    json jp;
    jp["total"] = total;
    json modules;
    int64_t module_sum = 0;
    for (const auto& [name, count] : model.parameter_counts_by_module()) {
        modules[name] = count;
        module_sum += count;
        std::cout << "params: " << name << " " << count << "\n";
    }
    jp["modules"] = modules;
    jp["module_sum"] = module_sum;
    std::ofstream os(out_file(spec, "params.json"));
    os << jp.dump(2) << "\n";
    std::cout << "params: total " << total << "\n";
    return 0;
}

} // namespace

int run_cli(const std::vector<std::string>& args) {
    std::vector<const char*> argv;
    argv.push_back("attnseg");
    for (const std::string& a : args) argv.push_back(a.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data());
}

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"comprehensive-attention segmentation workbench"};
    app.require_subcommand(1);

    RunSpec spec;
    std::string chosen;
    for (const std::string name : {"train", "eval", "infer", "explain", "gradcheck", "params"}) {
        CLI::App* sub = app.add_subcommand(name);
        sub->add_option("--config", spec.config_path, "JSON config file");
        sub->add_option("--out", spec.out_dir, "output directory (created if absent)");
        sub->add_option("--seed", spec.seed, "run seed");
        sub->add_option("--set", spec.overrides, "dotted-key overrides, key=value");
        sub->add_option("--ckpt", spec.ckpt_path, "checkpoint path (default: <out>/best.ckpt)");
        sub->add_option("--image", spec.image_path, "single input image (infer/explain)");
        sub->callback([&chosen, name]() { chosen = name; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (chosen == "train") return cmd_train(spec);
        if (chosen == "eval") return cmd_eval(spec);
        if (chosen == "infer") return cmd_infer(spec);
        if (chosen == "explain") return cmd_explain(spec);
        if (chosen == "gradcheck") return cmd_gradcheck(spec);
        if (chosen == "params") return cmd_params(spec);
        std::cerr << "ERROR: unknown subcommand\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "ERROR: " << e.what() << "\n";
        return 2;
    }
}

} // namespace attnseg
