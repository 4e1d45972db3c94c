#include "lsvis/harness.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "lsvis/checkpoint.hpp"
#include "lsvis/metrics.hpp"

namespace lsvis::harness {

namespace fs = std::filesystem;
using nlohmann::json;

std::string resolve_output_dir(const std::string& dir) {
    fs::path p(dir);
    if (p.is_absolute()) return p.string();
    if (const char* root = std::getenv("LSVIS_OUTPUT_ROOT"); root && *root)
        return (fs::path(root) / p).string();
    return p.string();
}

// ---------------------------------------------------------------------------
// config parsing
// ---------------------------------------------------------------------------

namespace {

DatasetKind parse_dataset_kind(const std::string& s) {
    if (s == "channels") return DatasetKind::Channels;
    if (s == "splash") return DatasetKind::Splash;
    if (s == "digits") return DatasetKind::Digits;
    if (s == "idx") return DatasetKind::Idx;
    throw HarnessError("unknown dataset kind '" + s + "'");
}

std::string dataset_kind_name(DatasetKind k) {
    switch (k) {
        case DatasetKind::Channels: return "channels";
        case DatasetKind::Splash: return "splash";
        case DatasetKind::Digits: return "digits";
        case DatasetKind::Idx: return "idx";
    }
    return "?";
}

models::ModelKind parse_model_kind(const std::string& s) {
    if (s == "ae") return models::ModelKind::AE;
    if (s == "vae") return models::ModelKind::VAE;
    throw HarnessError("unknown model kind '" + s + "' (expected ae|vae)");
}

losses::AuxKind parse_aux_kind(const std::string& s) {
    if (s == "none") return losses::AuxKind::None;
    if (s == "clustering") return losses::AuxKind::Clustering;
    if (s == "contrastive") return losses::AuxKind::Contrastive;
    throw HarnessError("unknown aux kind '" + s + "' (expected none|clustering|contrastive)");
}

std::string aux_kind_name(losses::AuxKind k) {
    switch (k) {
        case losses::AuxKind::None: return "none";
        case losses::AuxKind::Clustering: return "clustering";
        case losses::AuxKind::Contrastive: return "contrastive";
    }
    return "?";
}

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* a : allowed) ok |= it.key() == a;
        if (!ok) throw HarnessError("unknown config key '" + it.key() + "' in " + where);
    }
}

}  // namespace

ExperimentConfig parse_config(const json& j) {
    check_keys(j,
               {"dataset", "model", "loss", "classifier", "epochs", "batch_size", "lr", "lr_step",
                "seed", "output_dir"},
               "config root");
    ExperimentConfig c;
    if (j.contains("dataset")) {
        const json& d = j.at("dataset");
        check_keys(d, {"kind", "n", "images_path", "labels_path", "labeled_fraction"}, "dataset");
        c.dataset.kind = parse_dataset_kind(d.value("kind", "channels"));
        c.dataset.n = d.value("n", c.dataset.n);
        c.dataset.images_path = d.value("images_path", "");
        c.dataset.labels_path = d.value("labels_path", "");
        c.dataset.labeled_fraction = d.value("labeled_fraction", c.dataset.labeled_fraction);
        if (c.dataset.labeled_fraction <= 0.0 || c.dataset.labeled_fraction > 1.0)
            throw HarnessError("labeled_fraction must be in (0,1]");
    }
    if (j.contains("model")) {
        const json& m = j.at("model");
        check_keys(m, {"kind", "latent_dim", "dropout_p", "beta"}, "model");
        c.model.kind = parse_model_kind(m.value("kind", "ae"));
        c.model.latent_dim = m.value("latent_dim", c.model.latent_dim);
        c.model.dropout_p = m.value("dropout_p", c.model.dropout_p);
        c.model.beta = m.value("beta", c.model.beta);
    }
    if (j.contains("loss")) {
        const json& l = j.at("loss");
        check_keys(l, {"aux", "lambda_cl", "lambda_con", "margin", "adaptive", "pretrain_epochs"},
                   "loss");
        c.loss.aux = parse_aux_kind(l.value("aux", "none"));
        c.loss.lambda_cl = l.value("lambda_cl", c.loss.lambda_cl);
        c.loss.lambda_con = l.value("lambda_con", c.loss.lambda_con);
        c.loss.margin = l.value("margin", c.loss.margin);
        c.loss.adaptive = l.value("adaptive", c.loss.adaptive);
        c.loss.pretrain_epochs = l.value("pretrain_epochs", c.loss.pretrain_epochs);
    }
    if (j.contains("classifier")) {
        const json& p = j.at("classifier");
        check_keys(p, {"epochs", "lr", "batch_size", "accuracy_gate"}, "classifier");
        c.classifier.epochs = p.value("epochs", c.classifier.epochs);
        c.classifier.lr = p.value("lr", c.classifier.lr);
        c.classifier.batch_size = p.value("batch_size", c.classifier.batch_size);
        c.classifier.accuracy_gate = p.value("accuracy_gate", c.classifier.accuracy_gate);
    }
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.lr_step = j.value("lr_step", c.lr_step);
    c.seed = j.value("seed", c.seed);
    c.output_dir = j.value("output_dir", c.output_dir);
    if (c.epochs < 1 || c.batch_size < 2) throw HarnessError("need epochs >= 1, batch_size >= 2");
    c.loss.beta = c.model.beta;
    return c;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw HarnessError("cannot open config file: " + path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw HarnessError("config parse error in " + path + ": " + e.what());
    }
    return parse_config(j);
}

json config_to_json(const ExperimentConfig& c) {
    return json{
        {"dataset",
         {{"kind", dataset_kind_name(c.dataset.kind)},
          {"n", c.dataset.n},
          {"images_path", c.dataset.images_path},
          {"labels_path", c.dataset.labels_path},
          {"labeled_fraction", c.dataset.labeled_fraction}}},
        {"model",
         {{"kind", c.model.kind == models::ModelKind::AE ? "ae" : "vae"},
          {"latent_dim", c.model.latent_dim},
          {"dropout_p", c.model.dropout_p},
          {"beta", c.model.beta}}},
        {"loss",
         {{"aux", aux_kind_name(c.loss.aux)},
          {"lambda_cl", c.loss.lambda_cl},
          {"lambda_con", c.loss.lambda_con},
          {"margin", c.loss.margin},
          {"adaptive", c.loss.adaptive},
          {"pretrain_epochs", c.loss.pretrain_epochs}}},
        {"classifier",
         {{"epochs", c.classifier.epochs},
          {"lr", c.classifier.lr},
          {"batch_size", c.classifier.batch_size},
          {"accuracy_gate", c.classifier.accuracy_gate}}},
        {"epochs", c.epochs},
        {"batch_size", c.batch_size},
        {"lr", c.lr},
        {"lr_step", c.lr_step},
        {"seed", c.seed},
        {"output_dir", c.output_dir},
    };
}

data::LabeledImageSet load_dataset(const DatasetSpec& spec, uint64_t seed) {
    switch (spec.kind) {
        case DatasetKind::Channels: return data::generate_channels(spec.n, seed);
        case DatasetKind::Splash: return data::generate_splash(spec.n, seed);
        case DatasetKind::Digits: return data::generate_digits(spec.n, seed);
        case DatasetKind::Idx:
            if (spec.images_path.empty() || spec.labels_path.empty())
                throw HarnessError("idx dataset needs images_path and labels_path");
            return data::load_idx(spec.images_path, spec.labels_path);
    }
    throw HarnessError("unreachable dataset kind");
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

namespace {

// whether the batch's labels can support the configured aux loss
bool batch_supports_aux(const std::vector<int>& labels, losses::AuxKind aux, int class_count) {
    if (aux == losses::AuxKind::None) return false;
    std::vector<int64_t> counts(static_cast<size_t>(class_count), 0);
    for (int l : labels) counts[static_cast<size_t>(l)]++;
    int represented = 0;
    for (int64_t c : counts) represented += c >= 2 ? 1 : 0;
    return represented >= 2;
}

struct BatchOutcome {
    losses::LossReport report;
    bool aux_evaluated = false;
};

// One forward pass (plus backward in train mode) over a single batch.
BatchOutcome run_batch(models::Model& model, const ExperimentConfig& cfg,
                       const data::LabeledImageSet& set, const std::vector<int64_t>& order,
                       int64_t from, int64_t to, int epoch, bool train,
                       nd::AdamState<float>* opt, Rng& rng, int64_t* aux_skipped) {
    nd::Tape<float> t;
    auto bound = models::bind_params(t, model, train);
    int x = nd::constant(t, pseudo::detail::gather_batch(set, order, from, to));
    std::vector<int> labels;
    for (int64_t i = from; i < to; ++i)
        labels.push_back(set.labels[static_cast<size_t>(order[static_cast<size_t>(i)])]);

    auto enc = models::encode(t, model, bound, x, train, rng);
    bool is_vae = model.cfg.kind == models::ModelKind::VAE;
    int z;
    if (!is_vae)
        z = enc.z;
    else if (train)
        z = models::reparameterize(t, enc.mu, enc.log_var, rng);
    else
        z = enc.mu;  // deterministic evaluation
    int x_hat = models::decode(t, model, bound, z);

    BatchOutcome out;
    int rec_side = losses::mse_loss(t, x, x_hat);
    out.report.l_rec = static_cast<double>(t.val(rec_side)[0]);
    if (is_vae) {
        int kl = losses::kl_loss(t, enc.mu, enc.log_var, model.cfg.beta, model.cfg.latent_dim,
                                 model.cfg.input_h, model.cfg.input_w);
        out.report.l_kl = static_cast<double>(t.val(kl)[0]);
        rec_side = nd::add(t, rec_side, kl);
    }

    auto [w_rec, w_aux] = losses::loss_weights(cfg.loss, epoch);
    int total = nd::mul_scalar(t, rec_side, static_cast<float>(w_rec));
    if (cfg.loss.aux != losses::AuxKind::None && w_aux > 0.0) {
        if (!batch_supports_aux(labels, cfg.loss.aux, set.class_count)) {
            if (train && aux_skipped) ++*aux_skipped;
        } else {
            int aux_node;
            if (cfg.loss.aux == losses::AuxKind::Clustering) {
                auto sil = losses::soft_silhouette_loss(t, z, labels, set.class_count);
                aux_node = sil.loss;
                out.report.l_cl = static_cast<double>(t.val(sil.loss)[0]);
                out.report.soft_silhouette = static_cast<double>(t.val(sil.soft_silhouette)[0]);
            } else {
                aux_node = losses::contrastive_loss(t, z, labels, cfg.loss.margin);
                out.report.l_con = static_cast<double>(t.val(aux_node)[0]);
            }
            out.report.aux_active = true;
            out.aux_evaluated = true;
            total = nd::add(t, total, nd::mul_scalar(t, aux_node, static_cast<float>(w_aux)));
        }
    }
    out.report.total = static_cast<double>(t.val(total)[0]);
    if (!std::isfinite(out.report.total))
        throw HarnessError("non-finite loss at epoch " + std::to_string(epoch) + ", batch starting at " +
                           std::to_string(from));

    if (train) {
        t.backward(total);
        nd::ParamMap<float> grads;
        for (auto& [name, id] : bound) grads.emplace(name, t.grad(id));
        try {
            adam_update(model.params, grads, *opt);
        } catch (const nd::OptimError& e) {
            throw HarnessError("epoch " + std::to_string(epoch) + ", batch starting at " +
                               std::to_string(from) + ": " + e.what());
        }
    }
    return out;
}

losses::LossReport accumulate(const std::vector<std::pair<losses::LossReport, int64_t>>& parts) {
    losses::LossReport mean;
    int64_t total_n = 0, aux_n = 0;
    for (const auto& [r, n] : parts) {
        mean.l_rec += r.l_rec * static_cast<double>(n);
        mean.l_kl += r.l_kl * static_cast<double>(n);
        mean.total += r.total * static_cast<double>(n);
        total_n += n;
        if (r.aux_active) {
            mean.l_cl += r.l_cl * static_cast<double>(n);
            mean.l_con += r.l_con * static_cast<double>(n);
            mean.soft_silhouette += r.soft_silhouette * static_cast<double>(n);
            aux_n += n;
            mean.aux_active = true;
        }
    }
    if (total_n > 0) {
        mean.l_rec /= static_cast<double>(total_n);
        mean.l_kl /= static_cast<double>(total_n);
        mean.total /= static_cast<double>(total_n);
    }
    if (aux_n > 0) {
        mean.l_cl /= static_cast<double>(aux_n);
        mean.l_con /= static_cast<double>(aux_n);
        mean.soft_silhouette /= static_cast<double>(aux_n);
    }
    return mean;
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& cfg_in) {
    auto t_start = std::chrono::steady_clock::now();
    ExperimentConfig cfg = cfg_in;
    Rng root(cfg.seed);

    data::LabeledImageSet full = load_dataset(cfg.dataset, root.stream(1).next_u64());
    cfg.model.input_h = full.height();
    cfg.model.input_w = full.width();
    cfg.model.validate();
    cfg.classifier.class_count = full.class_count;
    cfg.classifier.seed = root.stream(3).next_u64();

    // label split: a stratified labeled_fraction keeps manual labels, the
    // rest is stripped and pseudo-labelled by the gated classifier;
    // fraction 1.0 means fully supervised, no classifier stage
    data::LabeledImageSet manual, rest;
    if (cfg.dataset.labeled_fraction >= 1.0) {
        manual = full;
        rest.class_count = full.class_count;
    } else {
        std::tie(manual, rest) =
            data::split(full, {cfg.dataset.labeled_fraction, root.stream(2).next_u64()});
    }
    RunResult res;
    res.config = cfg;

    data::LabeledImageSet combined;
    if (rest.count() > 0) {
        auto cls = pseudo::train_classifier(manual, cfg.classifier);
        res.classifier_accuracy = cls.val_accuracy;
        data::LabeledImageSet unlabeled = rest;
        std::fill(unlabeled.labels.begin(), unlabeled.labels.end(), -1);
        std::fill(unlabeled.provenance.begin(), unlabeled.provenance.end(),
                  data::Provenance::Unlabeled);
        data::LabeledImageSet pseudo_set = pseudo::predict_labels(cls, unlabeled);

        // manual images first so the projection subset is a simple prefix
        combined = manual;
        combined.images = nd::Array({full.count(), 1, full.height(), full.width()});
        std::copy(manual.images.data.begin(), manual.images.data.end(),
                  combined.images.data.begin());
        std::copy(pseudo_set.images.data.begin(), pseudo_set.images.data.end(),
                  combined.images.data.begin() + manual.images.size());
        combined.labels.insert(combined.labels.end(), pseudo_set.labels.begin(),
                               pseudo_set.labels.end());
        combined.provenance.insert(combined.provenance.end(), pseudo_set.provenance.begin(),
                                   pseudo_set.provenance.end());
    } else {
        combined = manual;
        res.classifier_accuracy = 1.0;
    }
    int64_t n_manual = manual.count();

    auto [normalized, stats] = data::normalize(combined);
    auto [train_set, val_set] = data::split(normalized, {0.8, root.stream(4).next_u64()});

    Rng model_rng = root.stream(5);
    models::Model model = models::build_model<float>(cfg.model, model_rng);
    nd::AdamState<float> opt;
    Rng train_rng = root.stream(6);

    std::vector<int64_t> train_order(static_cast<size_t>(train_set.count()));
    std::vector<int64_t> val_order(static_cast<size_t>(val_set.count()));
    for (int64_t i = 0; i < train_set.count(); ++i) train_order[static_cast<size_t>(i)] = i;
    for (int64_t i = 0; i < val_set.count(); ++i) val_order[static_cast<size_t>(i)] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        opt.lr = static_cast<float>(cfg.lr * (cfg.lr_step ? std::pow(0.5, epoch / 30) : 1.0));
        train_rng.shuffle(train_order);

        std::vector<std::pair<losses::LossReport, int64_t>> train_parts, val_parts;
        for (int64_t from = 0; from < train_set.count(); from += cfg.batch_size) {
            int64_t to = std::min(from + cfg.batch_size, train_set.count());
            auto out = run_batch(model, cfg, train_set, train_order, from, to, epoch, true, &opt,
                                 train_rng, &res.aux_skipped_batches);
            if (out.aux_evaluated) ++res.aux_evaluations;
            train_parts.push_back({out.report, to - from});
        }
        for (int64_t from = 0; from < val_set.count(); from += cfg.batch_size) {
            int64_t to = std::min(from + cfg.batch_size, val_set.count());
            auto out = run_batch(model, cfg, val_set, val_order, from, to, epoch, false, nullptr,
                                 train_rng, nullptr);
            if (out.aux_evaluated) ++res.aux_evaluations;
            val_parts.push_back({out.report, to - from});
        }
        res.epochs.push_back({accumulate(train_parts), accumulate(val_parts)});
    }

    // encode the manually labelled subset (already normalized, prefix of
    // `normalized`) and project it with the true labels
    data::LabeledImageSet manual_norm;
    std::vector<int64_t> manual_idx(static_cast<size_t>(n_manual));
    for (int64_t i = 0; i < n_manual; ++i) manual_idx[static_cast<size_t>(i)] = i;
    manual_norm = normalized.subset(manual_idx);

    Rng eval_rng = root.stream(7);
    nd::Array latents = models::encode_latents(model, manual_norm.images, 256, eval_rng);
    proj::ProjectionConfig pcfg;
    pcfg.seed = root.stream(8).next_u64();
    res.embedding = proj::project(latents, manual_norm.labels, pcfg);
    res.silhouette = metrics::evaluate_projection({res.embedding.coords, res.embedding.labels})
                         .silhouette;

    // artifacts
    std::string dir = resolve_output_dir(cfg.output_dir);
    fs::create_directories(dir);
    res.checkpoint_path = (fs::path(dir) / "checkpoint.bin").string();
    ckpt::save_checkpoint(model.params, res.checkpoint_path);
    proj::write_embedding_csv(res.embedding, (fs::path(dir) / "embedding.csv").string());
    emit_plots(res, dir);

    auto t_end = std::chrono::steady_clock::now();
    res.wall_seconds = std::chrono::duration<double>(t_end - t_start).count();

    json result_json{
        {"config", config_to_json(cfg)},
        {"classifier_accuracy", res.classifier_accuracy},
        {"silhouette", res.silhouette},
        {"aux_skipped_batches", res.aux_skipped_batches},
        {"aux_evaluations", res.aux_evaluations},
        {"checkpoint", "checkpoint.bin"},
        {"final_train", {{"l_rec", res.epochs.back().train.l_rec},
                         {"l_cl", res.epochs.back().train.l_cl},
                         {"l_con", res.epochs.back().train.l_con},
                         {"l_kl", res.epochs.back().train.l_kl},
                         {"total", res.epochs.back().train.total}}},
    };
    std::ofstream rf(fs::path(dir) / "result.json");
    rf << result_json.dump(2) << "\n";
    if (!rf) throw HarnessError("failed to write result.json in " + dir);
    return res;
}

// ---------------------------------------------------------------------------
// grid search
// ---------------------------------------------------------------------------

namespace {

void apply_grid_value(ExperimentConfig& c, const std::string& key, const json& v) {
    if (key == "latent_dim") c.model.latent_dim = v.get<int>();
    else if (key == "dropout_p") c.model.dropout_p = v.get<double>();
    else if (key == "beta") { c.model.beta = v.get<double>(); c.loss.beta = c.model.beta; }
    else if (key == "kind") c.model.kind = parse_model_kind(v.get<std::string>());
    else if (key == "aux") c.loss.aux = parse_aux_kind(v.get<std::string>());
    else if (key == "adaptive") c.loss.adaptive = v.get<bool>();
    else if (key == "pretrain_epochs") c.loss.pretrain_epochs = v.get<int>();
    else if (key == "lambda_cl") c.loss.lambda_cl = v.get<double>();
    else if (key == "lambda_con") c.loss.lambda_con = v.get<double>();
    else if (key == "margin") c.loss.margin = v.get<double>();
    else if (key == "epochs") c.epochs = v.get<int>();
    else if (key == "batch_size") c.batch_size = v.get<int64_t>();
    else if (key == "lr") c.lr = v.get<double>();
    else if (key == "lr_step") c.lr_step = v.get<bool>();
    else if (key == "seed") c.seed = v.get<uint64_t>();
    else if (key == "labeled_fraction") c.dataset.labeled_fraction = v.get<double>();
    else throw HarnessError("unknown grid key '" + key + "'");
}

}  // namespace

std::vector<RunResult> grid_search(const ExperimentConfig& base,
                                   const std::map<std::string, std::vector<json>>& grid) {
    // validate every key (and that value lists are nonempty) before any run
    for (const auto& [key, values] : grid) {
        ExperimentConfig probe = base;
        if (values.empty()) throw HarnessError("empty value list for grid key '" + key + "'");
        apply_grid_value(probe, key, values.front());
    }

    std::vector<std::string> keys;
    for (const auto& [key, values] : grid) keys.push_back(key);
    int64_t total = 1;
    for (const auto& [key, values] : grid) total *= static_cast<int64_t>(values.size());

    std::string root_dir = resolve_output_dir(base.output_dir);
    fs::create_directories(root_dir);
    std::ofstream summary(fs::path(root_dir) / "summary.csv");
    summary << "run";
    for (const auto& k : keys) summary << "," << k;
    summary << ",silhouette,classifier_accuracy,final_train_rec,final_train_total\n";

    std::vector<RunResult> results;
    for (int64_t run = 0; run < total; ++run) {
        ExperimentConfig c = base;
        c.output_dir = (fs::path(base.output_dir) / ("grid_" + std::to_string(run))).string();
        int64_t rem = run;
        std::vector<std::string> cells;
        for (const auto& [key, values] : grid) {
            const json& v = values[static_cast<size_t>(rem % static_cast<int64_t>(values.size()))];
            rem /= static_cast<int64_t>(values.size());
            apply_grid_value(c, key, v);
            cells.push_back(v.is_string() ? v.get<std::string>() : v.dump());
        }
        RunResult r = run_experiment(c);
        summary << run;
        for (const auto& cell : cells) summary << "," << cell;
        char buf[128];
        std::snprintf(buf, sizeof(buf), ",%.9g,%.9g,%.9g,%.9g", r.silhouette,
                      r.classifier_accuracy, r.epochs.back().train.l_rec,
                      r.epochs.back().train.total);
        summary << buf << "\n";
        results.push_back(std::move(r));
    }
    if (!summary) throw HarnessError("failed to write summary.csv in " + root_dir);
    return results;
}

}  // namespace lsvis::harness
