#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "lsvis/harness.hpp"

namespace lsvis::harness {

namespace fs = std::filesystem;

void write_loss_curves_csv(const std::vector<EpochRecord>& epochs, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw HarnessError("cannot open " + path);
    f << "epoch,train_total,train_rec,train_cl,train_con,train_kl,"
         "val_total,val_rec,val_cl,val_con,val_kl\n";
    for (size_t e = 0; e < epochs.size(); ++e) {
        const auto& r = epochs[e];
        char buf[320];
        std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                      e, r.train.total, r.train.l_rec, r.train.l_cl, r.train.l_con, r.train.l_kl,
                      r.val.total, r.val.l_rec, r.val.l_cl, r.val.l_con, r.val.l_kl);
        f << buf;
    }
    if (!f) throw HarnessError("write failed: " + path);
}

std::vector<EpochRecord> read_loss_curves_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw HarnessError("cannot open " + path);
    std::string line;
    if (!std::getline(f, line) || line.rfind("epoch,", 0) != 0)
        throw HarnessError("bad loss-curve header in " + path);
    std::vector<EpochRecord> out;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        EpochRecord r;
        size_t e = 0;
        if (std::sscanf(line.c_str(), "%zu,%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf", &e,
                        &r.train.total, &r.train.l_rec, &r.train.l_cl, &r.train.l_con,
                        &r.train.l_kl, &r.val.total, &r.val.l_rec, &r.val.l_cl, &r.val.l_con,
                        &r.val.l_kl) != 11)
            throw HarnessError("bad loss-curve row '" + line + "'");
        out.push_back(r);
    }
    return out;
}

namespace {

// 10-color palette (distinct for up to 10 classes)
const char* kPalette[10] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                            "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

struct Mapper {
    double lo, hi, plot_lo, plot_hi;
    double operator()(double v) const {
        double t = hi > lo ? (v - lo) / (hi - lo) : 0.5;
        return plot_lo + t * (plot_hi - plot_lo);
    }
};

void polyline(std::ofstream& f, const std::vector<double>& ys, const Mapper& mx, const Mapper& my,
              const char* color) {
    f << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (size_t i = 0; i < ys.size(); ++i) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.2f,%.2f ", mx(static_cast<double>(i)), my(ys[i]));
        f << buf;
    }
    f << "\"/>\n";
}

}  // namespace

void write_loss_curves_svg(const std::vector<EpochRecord>& epochs, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw HarnessError("cannot open " + path);
    std::vector<double> tt, vt, tr, vr;
    double lo = 0.0, hi = 1e-9;
    for (const auto& r : epochs) {
        tt.push_back(r.train.total);
        vt.push_back(r.val.total);
        tr.push_back(r.train.l_rec);
        vr.push_back(r.val.l_rec);
        hi = std::max({hi, r.train.total, r.val.total, r.train.l_rec, r.val.l_rec});
    }
    const double w = 640, h = 400;
    Mapper mx{0.0, static_cast<double>(std::max<size_t>(epochs.size() - 1, 1)), 50, w - 20};
    Mapper my{lo, hi, h - 40, 20};  // y flipped
    f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    f << "<line x1=\"50\" y1=\"" << h - 40 << "\" x2=\"" << w - 20 << "\" y2=\"" << h - 40
      << "\" stroke=\"black\"/>\n";
    f << "<line x1=\"50\" y1=\"20\" x2=\"50\" y2=\"" << h - 40 << "\" stroke=\"black\"/>\n";
    polyline(f, tt, mx, my, kPalette[0]);
    polyline(f, vt, mx, my, kPalette[1]);
    polyline(f, tr, mx, my, kPalette[2]);
    polyline(f, vr, mx, my, kPalette[3]);
    const char* names[4] = {"train total", "val total", "train rec", "val rec"};
    for (int i = 0; i < 4; ++i)
        f << "<text x=\"60\" y=\"" << 34 + 16 * i << "\" font-size=\"12\" fill=\"" << kPalette[i]
          << "\">" << names[i] << "</text>\n";
    f << "<text x=\"" << w / 2 << "\" y=\"" << h - 10
      << "\" font-size=\"12\" text-anchor=\"middle\">epoch</text>\n</svg>\n";
    if (!f) throw HarnessError("write failed: " + path);
}

void write_projection_svg(const proj::Embedding2D& e, int class_count, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw HarnessError("cannot open " + path);
    int64_t n = e.coords.shape.empty() ? 0 : e.coords.shape[0];
    double xlo = 1e300, xhi = -1e300, ylo = 1e300, yhi = -1e300;
    for (int64_t i = 0; i < n; ++i) {
        xlo = std::min(xlo, static_cast<double>(e.coords[i * 2]));
        xhi = std::max(xhi, static_cast<double>(e.coords[i * 2]));
        ylo = std::min(ylo, static_cast<double>(e.coords[i * 2 + 1]));
        yhi = std::max(yhi, static_cast<double>(e.coords[i * 2 + 1]));
    }
    const double w = 560, h = 560;
    Mapper mx{xlo, xhi, 30, w - 110};
    Mapper my{ylo, yhi, h - 30, 30};  // y flipped
    f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    for (int64_t i = 0; i < n; ++i) {
        int label = i < static_cast<int64_t>(e.labels.size()) ? e.labels[static_cast<size_t>(i)] : 0;
        const char* color = kPalette[((label % 10) + 10) % 10];
        char buf[160];
        std::snprintf(buf, sizeof(buf),
                      "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"2.5\" fill=\"%s\" fill-opacity=\"0.8\"/>\n",
                      mx(static_cast<double>(e.coords[i * 2])),
                      my(static_cast<double>(e.coords[i * 2 + 1])), color);
        f << buf;
    }
    for (int c = 0; c < std::min(class_count, 10); ++c) {
        double y = 30 + 18.0 * c;
        f << "<circle cx=\"" << w - 90 << "\" cy=\"" << y << "\" r=\"4\" fill=\"" << kPalette[c]
          << "\"/>\n<text x=\"" << w - 80 << "\" y=\"" << y + 4
          << "\" font-size=\"12\">class " << c << "</text>\n";
    }
    f << "</svg>\n";
    if (!f) throw HarnessError("write failed: " + path);
}

void emit_plots(const RunResult& result, const std::string& dir) {
    fs::create_directories(dir);
    write_loss_curves_csv(result.epochs, (fs::path(dir) / "loss_curves.csv").string());
    write_loss_curves_svg(result.epochs, (fs::path(dir) / "loss_curves.svg").string());
    write_projection_svg(result.embedding, result.config.classifier.class_count,
                         (fs::path(dir) / "projection.svg").string());
}

}  // namespace lsvis::harness
