#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lsvis/datasets.hpp"
#include "lsvis/losses.hpp"
#include "lsvis/models.hpp"
#include "lsvis/projection.hpp"
#include "lsvis/pseudolabel.hpp"

namespace lsvis::harness {

struct HarnessError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class DatasetKind { Channels, Splash, Digits, Idx };

struct DatasetSpec {
    DatasetKind kind = DatasetKind::Channels;
    int64_t n = 2000;              // generated datasets only
    std::string images_path;       // idx only
    std::string labels_path;       // idx only
    double labeled_fraction = 0.25;  // manually labelled share; rest is pseudo-labelled
};

struct ExperimentConfig {
    DatasetSpec dataset;
    models::ModelConfig model;       // input_h/input_w filled from the dataset
    losses::LossConfig loss;
    pseudo::ClassifierConfig classifier;  // class_count filled from the dataset
    int epochs = 100;
    int64_t batch_size = 128;
    double lr = 5e-4;
    bool lr_step = false;  // step decay x0.5 every 30 epochs when true
    uint64_t seed = 0;
    std::string output_dir = "run";
};

struct EpochRecord {
    losses::LossReport train;
    losses::LossReport val;
};

struct RunResult {
    ExperimentConfig config;
    std::vector<EpochRecord> epochs;
    double classifier_accuracy = 0.0;
    double silhouette = 0.0;
    int64_t aux_skipped_batches = 0;   // batches where the aux term was undefined
    int64_t aux_evaluations = 0;       // times any aux loss was computed
    double wall_seconds = 0.0;
    std::string checkpoint_path;
    proj::Embedding2D embedding;
};

// Resolves a run directory against the LSVIS_OUTPUT_ROOT env var; absolute
// paths pass through untouched.
std::string resolve_output_dir(const std::string& dir);

ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);
nlohmann::json config_to_json(const ExperimentConfig& cfg);

data::LabeledImageSet load_dataset(const DatasetSpec& spec, uint64_t seed);

// Full pipeline: label split -> classifier + pseudo-labels -> normalize ->
// 80/20 split -> train -> encode manual subset -> project -> evaluate.
// Writes result.json, checkpoint.bin, embedding.csv and the plot files into
// the resolved output directory.
RunResult run_experiment(const ExperimentConfig& cfg);

// Cartesian product over the grid values; keys name ExperimentConfig fields.
// Writes one run directory per combination plus summary.csv.
std::vector<RunResult> grid_search(const ExperimentConfig& base,
                                   const std::map<std::string, std::vector<nlohmann::json>>& grid);

// loss_curves.csv, loss_curves.svg and projection.svg for a finished run
void emit_plots(const RunResult& result, const std::string& dir);

// plot emission pieces, reusable by the CLI `plot` subcommand
void write_loss_curves_csv(const std::vector<EpochRecord>& epochs, const std::string& path);
std::vector<EpochRecord> read_loss_curves_csv(const std::string& path);
void write_loss_curves_svg(const std::vector<EpochRecord>& epochs, const std::string& path);
void write_projection_svg(const proj::Embedding2D& e, int class_count, const std::string& path);

}  // namespace lsvis::harness
