#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "lsvis/checkpoint.hpp"
#include "lsvis/gemm.hpp"
#include "lsvis/harness.hpp"
#include "lsvis/metrics.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace lsvis;

namespace {

int cmd_generate_data(const std::string& dataset, int64_t n, uint64_t seed,
                      const std::string& images, const std::string& labels) {
    harness::DatasetSpec spec;
    spec.kind = dataset == "channels"  ? harness::DatasetKind::Channels
                : dataset == "splash"  ? harness::DatasetKind::Splash
                : dataset == "digits"  ? harness::DatasetKind::Digits
                                       : throw harness::HarnessError(
                                             "generate-data: unknown dataset '" + dataset + "'");
    spec.n = n;
    auto set = harness::load_dataset(spec, seed);
    data::write_idx(set, images, labels);
    std::cout << json{{"written", n},
                      {"images", images},
                      {"labels", labels},
                      {"classes", set.class_count}}
                     .dump()
              << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& output_dir) {
    harness::ExperimentConfig cfg = harness::load_config(config_path);
    if (!output_dir.empty()) cfg.output_dir = output_dir;
    harness::RunResult res = harness::run_experiment(cfg);
    std::cout << json{{"silhouette", res.silhouette},
                      {"classifier_accuracy", res.classifier_accuracy},
                      {"final_train_total", res.epochs.back().train.total},
                      {"aux_skipped_batches", res.aux_skipped_batches},
                      {"output_dir", harness::resolve_output_dir(cfg.output_dir)},
                      {"wall_seconds", res.wall_seconds}}
                     .dump()
              << "\n";
    return 0;
}

int cmd_grid_search(const std::string& config_path) {
    std::ifstream f(config_path);
    if (!f) throw harness::HarnessError("cannot open config file: " + config_path);
    json j;
    f >> j;
    if (!j.contains("grid") || !j.at("grid").is_object())
        throw harness::HarnessError("grid-search config needs a 'grid' object");
    std::map<std::string, std::vector<json>> grid;
    for (auto it = j.at("grid").begin(); it != j.at("grid").end(); ++it) {
        if (!it.value().is_array())
            throw harness::HarnessError("grid key '" + it.key() + "' must map to a list");
        grid[it.key()] = std::vector<json>(it.value().begin(), it.value().end());
    }
    j.erase("grid");
    harness::ExperimentConfig base = harness::parse_config(j);
    auto results = harness::grid_search(base, grid);
    std::cout << json{{"runs", results.size()},
                      {"summary",
                       (fs::path(harness::resolve_output_dir(base.output_dir)) / "summary.csv")
                           .string()}}
                     .dump()
              << "\n";
    return 0;
}

int cmd_project(const std::string& config_path, const std::string& checkpoint_path,
                const std::string& out_dir) {
    harness::ExperimentConfig cfg = harness::load_config(config_path);
    Rng root(cfg.seed);
    auto full = harness::load_dataset(cfg.dataset, root.stream(1).next_u64());
    cfg.model.input_h = full.height();
    cfg.model.input_w = full.width();

    // same stratified label split and global normalization as run_experiment
    auto [manual, rest] =
        data::split(full, {cfg.dataset.labeled_fraction, root.stream(2).next_u64()});
    (void)rest;
    // the training pipeline normalizes manual+pseudo together, which is the
    // whole dataset, so the full-set statistics reproduce its scaling
    auto [full_norm, stats] = data::normalize(full);
    data::LabeledImageSet manual_norm = manual;
    for (auto& v : manual_norm.images.data)
        v = static_cast<float>((static_cast<double>(v) - stats.mean) / stats.stddev);

    models::Model model;
    Rng init_rng = root.stream(5);
    model = models::build_model<float>(cfg.model, init_rng);
    auto loaded = ckpt::load_checkpoint(checkpoint_path);
    for (auto& [name, arr] : model.params) {
        auto it = loaded.find(name);
        if (it == loaded.end())
            throw harness::HarnessError("checkpoint missing parameter '" + name + "'");
        if (it->second.shape != arr.shape)
            throw harness::HarnessError("checkpoint shape mismatch for '" + name + "'");
        arr = it->second;
    }

    Rng eval_rng = root.stream(7);
    nd::Array latents = models::encode_latents(model, manual_norm.images, 256, eval_rng);
    proj::ProjectionConfig pcfg;
    pcfg.seed = root.stream(8).next_u64();
    auto embedding = proj::project(latents, manual_norm.labels, pcfg);

    std::string dir = harness::resolve_output_dir(out_dir);
    fs::create_directories(dir);
    proj::write_embedding_csv(embedding, (fs::path(dir) / "embedding.csv").string());
    harness::write_projection_svg(embedding, full.class_count,
                                  (fs::path(dir) / "projection.svg").string());
    auto report = metrics::evaluate_projection({embedding.coords, embedding.labels});
    std::cout << json{{"silhouette", report.silhouette},
                      {"n", report.n},
                      {"embedding", (fs::path(dir) / "embedding.csv").string()}}
                     .dump()
              << "\n";
    return 0;
}

int cmd_evaluate(const std::string& embedding_path) {
    auto e = proj::read_embedding_csv(embedding_path);
    auto report = metrics::evaluate_projection({e.coords, e.labels});
    json per_class;
    for (const auto& [label, mean] : report.per_class_mean)
        per_class[std::to_string(label)] = mean;
    std::cout << json{{"silhouette", report.silhouette},
                      {"n", report.n},
                      {"k", report.k},
                      {"per_class_mean", per_class}}
                     .dump()
              << "\n";
    return 0;
}

int cmd_plot(const std::string& run_dir) {
    std::string dir = harness::resolve_output_dir(run_dir);
    auto curves_csv = fs::path(dir) / "loss_curves.csv";
    auto embedding_csv = fs::path(dir) / "embedding.csv";
    bool any = false;
    if (fs::exists(curves_csv)) {
        auto epochs = harness::read_loss_curves_csv(curves_csv.string());
        harness::write_loss_curves_svg(epochs, (fs::path(dir) / "loss_curves.svg").string());
        any = true;
    }
    if (fs::exists(embedding_csv)) {
        auto e = proj::read_embedding_csv(embedding_csv.string());
        int classes = 0;
        for (int l : e.labels) classes = std::max(classes, l + 1);
        harness::write_projection_svg(e, classes, (fs::path(dir) / "projection.svg").string());
        any = true;
    }
    if (!any)
        throw harness::HarnessError("plot: no loss_curves.csv or embedding.csv in " + dir);
    std::cout << json{{"plotted", dir}}.dump() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    nd::pin_blas_threads();
    CLI::App app{"latent-space visualization pipeline"};
    app.require_subcommand(1);

    std::string dataset = "channels", images, labels;
    int64_t n = 2000;
    uint64_t seed = 0;
    auto* gen = app.add_subcommand("generate-data", "write a synthetic dataset as IDX files");
    gen->add_option("--dataset", dataset, "channels|splash|digits");
    gen->add_option("--n", n, "number of images");
    gen->add_option("--seed", seed, "generator seed");
    gen->add_option("--images", images, "output images path")->required();
    gen->add_option("--labels", labels, "output labels path")->required();

    std::string config_path, output_dir;
    auto* train = app.add_subcommand("train", "run one experiment from a JSON config");
    train->add_option("--config", config_path, "config JSON path")->required();
    train->add_option("--output-dir", output_dir, "override the config's output directory");

    std::string gs_config;
    auto* gs = app.add_subcommand("grid-search", "Cartesian sweep from a config with a 'grid' map");
    gs->add_option("--config", gs_config, "config JSON path with a grid object")->required();

    std::string p_config, p_ckpt, p_out = "projection";
    auto* project = app.add_subcommand("project", "project a checkpointed model's latents to 2D");
    project->add_option("--config", p_config, "config JSON path")->required();
    project->add_option("--checkpoint", p_ckpt, "checkpoint path")->required();
    project->add_option("--out", p_out, "output directory");

    std::string e_embedding;
    auto* eval = app.add_subcommand("evaluate", "silhouette report for an embedding CSV");
    eval->add_option("--embedding", e_embedding, "embedding CSV path")->required();

    std::string plot_dir;
    auto* plot = app.add_subcommand("plot", "regenerate SVG plots from a run directory's CSVs");
    plot->add_option("--run", plot_dir, "run directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_generate_data(dataset, n, seed, images, labels);
        if (train->parsed()) return cmd_train(config_path, output_dir);
        if (gs->parsed()) return cmd_grid_search(gs_config);
        if (project->parsed()) return cmd_project(p_config, p_ckpt, p_out);
        if (eval->parsed()) return cmd_evaluate(e_embedding);
        if (plot->parsed()) return cmd_plot(plot_dir);
    } catch (const std::exception& e) {
        // machine-readable failure line
        std::cerr << json{{"error", e.what()}}.dump() << "\n";
        return 1;
    }
    return 2;
}
