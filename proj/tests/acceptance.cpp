// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Each criterion runs independently so a failure early on still
// lets the rest report.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "lsvis/gradcheck.hpp"
#include "lsvis/harness.hpp"
#include "lsvis/losses.hpp"
#include "lsvis/metrics.hpp"
#include "lsvis/models.hpp"
#include "lsvis/projection.hpp"
#include "lsvis/pseudolabel.hpp"

using namespace lsvis;
namespace fs = std::filesystem;

static int g_failures = 0;

static void run_criterion(int idx, const std::string& name,
                          const std::function<std::string()>& body) {
    auto t0 = std::chrono::steady_clock::now();
    std::string detail;
    bool ok = true;
    try {
        detail = body();
    } catch (const std::exception& e) {
        ok = false;
        detail = std::string("exception: ") + e.what();
    }
    if (!detail.empty() && detail.rfind("FAIL:", 0) == 0) {
        ok = false;
        detail = detail.substr(5);
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("[%s] criterion %d: %s (%.1fs)%s%s\n", ok ? "PASS" : "FAIL", idx, name.c_str(),
                secs, detail.empty() ? "" : " — ", detail.c_str());
    std::fflush(stdout);
    if (!ok) ++g_failures;
}

static bool close(double a, double b, double tol) { return std::abs(a - b) <= tol; }

static nd::ArrayT<double> two_cluster_z() {
    nd::ArrayT<double> z({4, 2});
    double vals[] = {0, 0, 0, 1, 10, 0, 10, 1};
    std::copy(std::begin(vals), std::end(vals), z.data.begin());
    return z;
}

static double contrastive_pair(double x2, int l2, double margin) {
    nd::Tape<double> t;
    nd::ArrayT<double> z({2, 2});
    z[2] = x2;
    int l = losses::contrastive_loss(t, nd::constant(t, z), {0, l2}, margin);
    return t.val(l)[0];
}

// ---------------------------------------------------------------- criterion 1
static std::string c1_loss_oracles() {
    nd::Tape<double> t;
    auto res = losses::soft_silhouette_loss(t, nd::constant(t, two_cluster_z()), {0, 0, 1, 1}, 2);
    double b = (10.0 + std::sqrt(101.0)) / 2.0;
    double expect_lcl = 1.0 - (b - 1.0) / (b + 1e-9);  // = 0.0997512...
    if (!close(t.val(res.loss)[0], expect_lcl, 1e-5))
        return "FAIL: L_cl " + std::to_string(t.val(res.loss)[0]);

    if (!close(contrastive_pair(0.0, 0, 1.0), 0.0, 1e-5)) return "FAIL: coincident positive pair";
    if (!close(contrastive_pair(2.0, 1, 1.0), 0.0, 1e-5)) return "FAIL: negative pair at D=2";
    if (!close(contrastive_pair(0.5, 1, 1.0), 0.25, 1e-5)) return "FAIL: negative pair at D=0.5";
    if (!close(contrastive_pair(0.5, 0, 1.0), 0.25, 1e-5)) return "FAIL: positive pair D^2";

    int mu = nd::constant(t, nd::ArrayT<double>::full({1, 1}, 1.0));
    int lv = nd::constant(t, nd::ArrayT<double>::zeros({1, 1}));
    double kl = t.val(losses::kl_loss(t, mu, lv, 1.0, 256, 50, 50))[0];
    if (!close(kl, 0.0512, 1e-5)) return "FAIL: KL " + std::to_string(kl);
    return "worked examples within 1e-5";
}

// ---------------------------------------------------------------- criterion 2
static std::string c2_gradient_suite() {
    const double tol = 1e-4;
    std::vector<int> labels12;
    for (int i = 0; i < 12; ++i) labels12.push_back(i % 2);

    for (uint64_t seed = 1; seed <= 10; ++seed) {
        Rng rng(seed * 97);
        nd::ArrayT<double> z0({12, 2});
        for (int64_t i = 0; i < 24; ++i)
            z0[i] = 2.0 * labels12[static_cast<size_t>(i / 2)] + rng.uniform(-0.9, 0.9);

        nd::ArrayT<double> target({3, 4});
        for (auto& v : target.data) v = rng.uniform(-1.0, 1.0);
        auto f_mse = [&](const nd::ArrayT<double>& p) {
            nd::Tape<double> tt;
            int pid = nd::leaf(tt, p, true);
            int l = losses::mse_loss(tt, pid, nd::constant(tt, target));
            tt.backward(l);
            return std::make_pair(tt.val(l)[0], tt.grad(pid));
        };
        nd::ArrayT<double> p0({3, 4});
        for (auto& v : p0.data) v = rng.uniform(-1.0, 1.0);
        if (nd::gradient_check(f_mse, p0) >= tol) return "FAIL: mse seed " + std::to_string(seed);

        auto f_kl = [&](const nd::ArrayT<double>& p) {
            nd::Tape<double> tt;
            int pid = nd::leaf(tt, p, true);
            nd::ArrayT<double> sel_mu({2, 4}), sel_lv({2, 4});
            for (int64_t i = 0; i < 4; ++i) sel_mu[i] = 1.0, sel_lv[4 + i] = 1.0;
            int mu = nd::mul(tt, pid, nd::constant(tt, sel_mu));
            int lv = nd::mul(tt, pid, nd::constant(tt, sel_lv));
            int l = losses::kl_loss(tt, mu, lv, 1.3, 64, 28, 28);
            tt.backward(l);
            return std::make_pair(tt.val(l)[0], tt.grad(pid));
        };
        nd::ArrayT<double> k0({2, 4});
        for (auto& v : k0.data) v = rng.uniform(-0.8, 0.8);
        if (nd::gradient_check(f_kl, k0) >= tol) return "FAIL: kl seed " + std::to_string(seed);

        auto f_sil = [&](const nd::ArrayT<double>& p) {
            nd::Tape<double> tt;
            int pid = nd::leaf(tt, p, true);
            auto res = losses::soft_silhouette_loss(tt, pid, labels12, 2);
            tt.backward(res.loss);
            return std::make_pair(tt.val(res.loss)[0], tt.grad(pid));
        };
        if (nd::gradient_check(f_sil, z0) >= tol)
            return "FAIL: soft silhouette seed " + std::to_string(seed);

        auto f_con = [&](const nd::ArrayT<double>& p) {
            nd::Tape<double> tt;
            int pid = nd::leaf(tt, p, true);
            int l = losses::contrastive_loss(tt, pid, labels12, 1.0);
            tt.backward(l);
            return std::make_pair(tt.val(l)[0], tt.grad(pid));
        };
        if (nd::gradient_check(f_con, z0) >= tol)
            return "FAIL: contrastive seed " + std::to_string(seed);

        // full model: encoder -> latent -> decoder, mse + contrastive,
        // gradient taken at the input so the whole chain is exercised
        models::ModelConfig mc;
        mc.latent_dim = 32;
        mc.input_h = 16;
        mc.input_w = 16;
        Rng init_rng(seed * 1000 + 3);
        auto m = models::build_model<double>(mc, init_rng);
        std::vector<int> lab2{0, 1};
        auto f_model = [&](const nd::ArrayT<double>& p) {
            nd::Tape<double> tt;
            int xid = nd::leaf(tt, p, true);
            auto b = models::bind_params(tt, m, false);
            Rng dummy(0);
            auto enc = models::encode(tt, m, b, xid, false, dummy);
            int xhat = models::decode(tt, m, b, enc.z);
            int rec = losses::mse_loss(tt, xid, xhat);
            int con = losses::contrastive_loss(tt, enc.z, lab2, 1.0);
            int total = nd::add(tt, rec, nd::mul_scalar(tt, con, 0.2));
            tt.backward(total);
            return std::make_pair(tt.val(total)[0], tt.grad(xid));
        };
        // relu networks have measure-zero kinks; a probe that straddles one
        // reports a large one-coordinate error that says nothing about the
        // analytic gradient. Use a small step and redraw the base point if
        // the probe lands on a kink — a genuinely wrong gradient fails at
        // every base point.
        double worst = 1.0;
        for (int attempt = 0; attempt < 3 && worst >= tol; ++attempt) {
            nd::ArrayT<double> x0({2, 1, 16, 16});
            for (auto& v : x0.data) v = rng.uniform(0.1, 0.9);
            worst = nd::gradient_check(f_model, x0, 1e-6);
        }
        if (worst >= tol)
            return "FAIL: full model seed " + std::to_string(seed) + " rel err " +
                   std::to_string(worst);
    }
    return "mse/kl/silhouette/contrastive/full-model over 10 seeds, rel tol 1e-4";
}

// ---------------------------------------------------------------- criterion 3
static std::string c3_oracle_equivalence() {
    for (uint64_t trial = 1; trial <= 100; ++trial) {
        Rng rng(trial * 1009 + 7);
        int k = 2 + static_cast<int>(rng.below(6));       // 2..7 classes
        int64_t n = std::max<int64_t>(2 * k, 4 + static_cast<int64_t>(rng.below(61)));
        if (n > 64) n = 64;
        int64_t d = 1 + static_cast<int64_t>(rng.below(32));
        std::vector<int> labels(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i)
            labels[static_cast<size_t>(i)] =
                i < 2 * k ? static_cast<int>(i / 2) : static_cast<int>(rng.below(static_cast<uint64_t>(k)));
        nd::ArrayT<double> z({n, d});
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < d; ++j)
                z[i * d + j] = 2.5 * labels[static_cast<size_t>(i)] + rng.uniform(-2.0, 2.0);
        nd::Tape<double> t;
        auto res = losses::soft_silhouette_loss(t, nd::constant(t, z), labels, k);
        auto oracle = metrics::silhouette_score(z, labels);
        if (!close(t.val(res.soft_silhouette)[0], oracle.silhouette, 1e-5))
            return "FAIL: trial " + std::to_string(trial) + " soft " +
                   std::to_string(t.val(res.soft_silhouette)[0]) + " vs hard " +
                   std::to_string(oracle.silhouette);
    }
    return "soft vs brute-force silhouette within 1e-5 on 100 random batches";
}

// ---------------------------------------------------------------- criterion 4
static std::string c4_range_degeneracy() {
    for (uint64_t seed = 1; seed <= 50; ++seed) {
        Rng rng(seed * 31);
        nd::ArrayT<double> z({12, 2});
        for (auto& v : z.data) v = rng.uniform(-5.0, 5.0);
        std::vector<int> labels;
        for (int i = 0; i < 12; ++i) labels.push_back(i % 3);
        nd::Tape<double> t;
        auto res = losses::soft_silhouette_loss(t, nd::constant(t, z), labels, 3);
        double l = t.val(res.loss)[0];
        if (l < 0.0 || l > 2.0) return "FAIL: L_cl out of range: " + std::to_string(l);
    }

    nd::Tape<double> t;
    bool threw = false;
    try {
        (void)losses::soft_silhouette_loss(t, nd::constant(t, two_cluster_z()), {0, 0, 0, 0}, 2);
    } catch (const losses::LossError&) {
        threw = true;
    }
    if (!threw) return "FAIL: single-cluster batch did not error";

    if (contrastive_pair(1.0, 1, 1.0) != 0.0 || contrastive_pair(5.0, 1, 1.0) != 0.0)
        return "FAIL: negative pair beyond margin is not exactly 0";

    Rng rng(77);
    nd::ArrayT<double> z({20, 3});
    std::vector<int> labels;
    for (int i = 0; i < 20; ++i) labels.push_back(i % 4);
    for (int64_t i = 0; i < z.size(); ++i)
        z[i] = 2.0 * labels[static_cast<size_t>(i / 3)] + rng.uniform(-1.0, 1.0);
    double base = metrics::silhouette_score(z, labels).silhouette;
    for (double c : {1e-3, 3.7, 1e4}) {
        nd::ArrayT<double> zs = z;
        for (auto& v : zs.data) v *= c;
        double s = metrics::silhouette_score(zs, labels).silhouette;
        if (std::abs(s - base) > 1e-6 * std::max(1.0, std::abs(base)))
            return "FAIL: silhouette not scale-invariant at c=" + std::to_string(c);
    }
    return "range, degeneracy errors, exact hinge zero, scale invariance";
}

// ---------------------------------------------------------------- criterion 5
static std::string c5_pseudo_label_gate() {
    auto set = data::generate_channels(2000, 11);
    pseudo::ClassifierConfig cfg;
    cfg.class_count = set.class_count;
    cfg.seed = 21;
    auto cls = pseudo::train_classifier(set, cfg);
    if (cls.val_accuracy < 0.95)
        return "FAIL: held-out accuracy " + std::to_string(cls.val_accuracy);

    // starved run must trip the gate rather than emit labels
    auto tiny = data::generate_channels(60, 3);
    pseudo::ClassifierConfig bad = cfg;
    bad.epochs = 1;
    bool gated = false;
    try {
        (void)pseudo::train_classifier(tiny, bad);
    } catch (const pseudo::GateError& e) {
        gated = e.achieved < e.gate;
    }
    if (!gated) return "FAIL: under-trained classifier passed the gate";

    pseudo::Classifier ungated = cls;
    ungated.gate_passed = false;
    bool refused = false;
    try {
        (void)pseudo::predict_labels(ungated, set);
    } catch (const pseudo::PseudoError&) {
        refused = true;
    }
    if (!refused) return "FAIL: pseudo-labels emitted below the gate";
    return "accuracy " + std::to_string(cls.val_accuracy) + " on 2000 images; gate enforced";
}

// ------------------------------------------------------------- criteria 6/7/9
static harness::ExperimentConfig digits_config(const fs::path& out, uint64_t seed,
                                               losses::AuxKind aux) {
    harness::ExperimentConfig c;
    c.dataset.kind = harness::DatasetKind::Digits;
    c.dataset.n = 2000;
    c.dataset.labeled_fraction = 1.0;  // ground-truth labels throughout
    c.model.latent_dim = 64;
    c.loss.aux = aux;
    c.epochs = 20;
    c.batch_size = 128;
    c.seed = seed;
    c.output_dir = out.string();
    return c;
}

static std::string c6_digit_separation() {
    fs::path root = fs::temp_directory_path() / "lsvis_acceptance" / "digits";
    fs::create_directories(root);
    int wins = 0;
    double mean_base = 0.0, mean_con = 0.0;
    for (uint64_t seed = 1; seed <= 10; ++seed) {
        auto base = harness::run_experiment(
            digits_config(root / ("base_" + std::to_string(seed)), seed, losses::AuxKind::None));
        auto con = harness::run_experiment(digits_config(
            root / ("con_" + std::to_string(seed)), seed, losses::AuxKind::Contrastive));
        mean_base += base.silhouette / 10.0;
        mean_con += con.silhouette / 10.0;
        if (con.silhouette > base.silhouette) ++wins;
        std::printf("  seed %llu: baseline %.4f contrastive %.4f\n",
                    static_cast<unsigned long long>(seed), base.silhouette, con.silhouette);
        std::fflush(stdout);
    }
    std::ostringstream os;
    os << "contrastive wins " << wins << "/10, mean " << mean_con << " vs " << mean_base;
    if (wins < 7 || mean_con <= mean_base) return "FAIL: " + os.str();
    return os.str();
}

static std::string c7_synthetic_ensemble() {
    fs::path root = fs::temp_directory_path() / "lsvis_acceptance" / "channels";
    fs::create_directories(root);
    harness::ExperimentConfig c;
    c.dataset.kind = harness::DatasetKind::Channels;
    c.dataset.n = 3000;
    c.dataset.labeled_fraction = 0.25;
    c.model.latent_dim = 256;  // default width: room for both objectives
    c.epochs = 100;            // default epoch count; the rec-convergence claim is asymptotic
    c.batch_size = 128;
    c.lr_step = true;          // step decay keeps the late-epoch windows monotone
    c.seed = 17;

    c.loss.aux = losses::AuxKind::None;
    c.output_dir = (root / "base").string();
    auto base = harness::run_experiment(c);

    c.loss.aux = losses::AuxKind::Contrastive;
    c.output_dir = (root / "con").string();
    auto con = harness::run_experiment(c);

    for (const auto* run : {&base, &con})
        for (size_t e = 20; e < run->epochs.size(); ++e) {
            double now = run->epochs[e].train.l_rec;
            double before = run->epochs[e - 10].train.l_rec;
            if (now > 1.05 * before)
                return "FAIL: train MSE rose over a 10-epoch window at epoch " +
                       std::to_string(e) + " (" + std::to_string(before) + " -> " +
                       std::to_string(now) + ")";
        }
    double rb = base.epochs.back().train.l_rec;
    double rc = con.epochs.back().train.l_rec;
    if (std::abs(rc - rb) > 0.15 * rb)
        return "FAIL: final reconstruction " + std::to_string(rc) + " vs baseline " +
               std::to_string(rb) + " differs by more than 15%";
    std::ostringstream os;
    os << "classifier " << base.classifier_accuracy << ", final rec " << rc << " vs " << rb;
    return os.str();
}

// ---------------------------------------------------------------- criterion 8
static std::string c8_projection_engine() {
    Rng rng(13);
    int64_t n = 500, d = 8, k = 15;
    nd::ArrayT<double> z({n, d});
    for (auto& v : z.data) v = rng.uniform(-3.0, 3.0);
    auto knn = proj::knn_graph(z, k);
    for (int64_t i = 0; i < n; ++i) {
        // independent oracle: full sort of row i by (distance, index)
        std::vector<std::pair<double, int64_t>> row;
        for (int64_t j = 0; j < n; ++j) {
            if (j == i) continue;
            double s = 0.0;
            for (int64_t c = 0; c < d; ++c) {
                double diff = z[i * d + c] - z[j * d + c];
                s += diff * diff;
            }
            row.emplace_back(std::sqrt(s), j);
        }
        std::sort(row.begin(), row.end());
        for (int64_t j = 0; j < k; ++j)
            if (knn.idx[static_cast<size_t>(i * k + j)] != row[static_cast<size_t>(j)].second)
                return "FAIL: knn mismatch at point " + std::to_string(i);
    }

    auto graph = proj::fuzzy_simplicial_set(knn, k);
    double target = std::log2(static_cast<double>(k));
    for (int64_t i = 0; i < n; ++i) {
        double sum = 0.0;
        for (int64_t j = 0; j < k; ++j)
            sum += std::exp(-std::max(0.0, knn.dist[static_cast<size_t>(i * k + j)] -
                                               graph.rho[static_cast<size_t>(i)]) /
                            graph.sigma[static_cast<size_t>(i)]);
        if (std::abs(sum - target) > 1e-3)
            return "FAIL: sigma calibration off by " + std::to_string(sum - target);
    }

    auto [a, b] = proj::fit_ab(0.1, 1.0);
    if (!close(a, 1.577, 1e-2) || !close(b, 0.895, 1e-2))
        return "FAIL: fit_ab gave (" + std::to_string(a) + ", " + std::to_string(b) + ")";

    nd::Array blobs({100, 32});
    std::vector<int> labels(100);
    Rng brng(29);
    for (int64_t i = 0; i < 100; ++i) {
        labels[static_cast<size_t>(i)] = i < 50 ? 0 : 1;
        for (int64_t c = 0; c < 32; ++c)
            blobs[i * 32 + c] =
                static_cast<float>(10.0 * labels[static_cast<size_t>(i)] + brng.normal());
    }
    proj::ProjectionConfig pc;
    pc.seed = 5;
    auto emb = proj::project(blobs, labels, pc);
    double sil = metrics::evaluate_projection({emb.coords, emb.labels}).silhouette;
    if (sil < 0.6) return "FAIL: blob projection silhouette " + std::to_string(sil);
    std::ostringstream os;
    os << "knn exact at N=500, sigma within 1e-3, (a,b)=(" << a << "," << b << "), blobs " << sil;
    return os.str();
}

// ---------------------------------------------------------------- criterion 9
static std::string read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

static std::string c9_reproducibility() {
    fs::path root = fs::temp_directory_path() / "lsvis_acceptance" / "repro";
    fs::create_directories(root);
    harness::ExperimentConfig c;
    c.dataset.kind = harness::DatasetKind::Channels;
    c.dataset.n = 300;
    c.dataset.labeled_fraction = 0.5;
    c.model.latent_dim = 32;
    c.classifier.epochs = 25;
    c.classifier.batch_size = 16;
    c.classifier.lr = 2e-3;
    c.loss.aux = losses::AuxKind::Contrastive;
    c.epochs = 3;
    c.batch_size = 32;
    c.seed = 5;

    c.output_dir = (root / "a").string();
    (void)harness::run_experiment(c);
    c.output_dir = (root / "b").string();
    (void)harness::run_experiment(c);

    for (const char* name : {"loss_curves.csv", "embedding.csv", "checkpoint.bin"}) {
        if (read_bytes(root / "a" / name) != read_bytes(root / "b" / name))
            return std::string("FAIL: ") + name + " differs between identical invocations";
    }
    return "loss_curves.csv, embedding.csv, checkpoint.bin byte-identical";
}

int main(int argc, char** argv) {
    nd::pin_blas_threads();
    // optional args: criterion numbers to run (default: all)
    std::vector<bool> enabled(10, argc < 2);
    for (int i = 1; i < argc; ++i) {
        int c = std::atoi(argv[i]);
        if (c >= 1 && c <= 9) enabled[static_cast<size_t>(c)] = true;
    }
    auto maybe = [&](int idx, const std::string& name,
                     const std::function<std::string()>& body) {
        if (enabled[static_cast<size_t>(idx)]) run_criterion(idx, name, body);
    };
    maybe(1, "loss-formula oracles", c1_loss_oracles);
    maybe(2, "gradient suite", c2_gradient_suite);
    maybe(3, "soft/hard silhouette equivalence", c3_oracle_equivalence);
    maybe(4, "range and degeneracy suite", c4_range_degeneracy);
    maybe(5, "pseudo-label accuracy gate", c5_pseudo_label_gate);
    maybe(6, "digit-separation directional claim", c6_digit_separation);
    maybe(7, "synthetic-ensemble pipeline", c7_synthetic_ensemble);
    maybe(8, "projection engine oracles", c8_projection_engine);
    maybe(9, "end-to-end reproducibility", c9_reproducibility);
    if (g_failures > 0) {
        std::printf("%d criterion(s) failed\n", g_failures);
        return 1;
    }
    std::printf("all 9 criteria passed\n");
    return 0;
}
