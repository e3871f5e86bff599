#include "disro/eval/plot.hpp"

#include "disro/eval/evaluator.hpp"

#include <Eigen/Eigenvalues>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace disro::eval {

namespace fs = std::filesystem;

Tensor pca_2d(const Tensor& rows) {
    const int64_t n = rows.dim(0), d = rows.dim(1);
    Eigen::MatrixXd x(n, d);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < d; ++j) x(i, j) = rows.at(i, j);
    Eigen::RowVectorXd mean = x.colwise().mean();
    x.rowwise() -= mean;
    Eigen::MatrixXd cov = (x.transpose() * x) / std::max<double>(1.0, static_cast<double>(n - 1));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    // Columns are sorted ascending; take the last two.
    Eigen::MatrixXd basis(d, 2);
    basis.col(0) = eig.eigenvectors().col(d - 1);
    basis.col(1) = d >= 2 ? eig.eigenvectors().col(d - 2) : eig.eigenvectors().col(d - 1);
    Eigen::MatrixXd proj = x * basis;
    Tensor out({n, 2});
    for (int64_t i = 0; i < n; ++i) {
        out.at(i, 0) = proj(i, 0);
        out.at(i, 1) = proj(i, 1);
    }
    return out;
}

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
constexpr int kPaletteSize = 10;
constexpr double kW = 720, kH = 480, kMargin = 58;

struct Range {
    double lo = 0, hi = 1;
    void fit(double v) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    static Range of(const std::vector<double>& vs) {
        Range r{1e300, -1e300};
        for (double v : vs) r.fit(v);
        if (!(r.lo < r.hi)) {
            r.lo -= 1.0;
            r.hi += 1.0;
        }
        return r;
    }
    double map(double v, double a, double b) const { return a + (v - lo) / (hi - lo) * (b - a); }
};

class Svg {
public:
    explicit Svg(const std::string& title) {
        os_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
            << "\" viewBox=\"0 0 " << kW << " " << kH << "\">\n";
        os_ << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
        text(kW / 2, 22, title, 16, "middle");
    }
    void line(double x1, double y1, double x2, double y2, const std::string& color, double width = 1.0) {
        os_ << "<line x1=\"" << x1 << "\" y1=\"" << y1 << "\" x2=\"" << x2 << "\" y2=\"" << y2
            << "\" stroke=\"" << color << "\" stroke-width=\"" << width << "\"/>\n";
    }
    void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& color) {
        os_ << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.6\" points=\"";
        for (const auto& [x, y] : pts) os_ << x << "," << y << " ";
        os_ << "\"/>\n";
    }
    void circle(double x, double y, double r, const std::string& color) {
        os_ << "<circle cx=\"" << x << "\" cy=\"" << y << "\" r=\"" << r << "\" fill=\"" << color
            << "\" fill-opacity=\"0.65\"/>\n";
    }
    void text(double x, double y, const std::string& s, int size = 12,
              const std::string& anchor = "start") {
        os_ << "<text x=\"" << x << "\" y=\"" << y << "\" font-size=\"" << size
            << "\" font-family=\"sans-serif\" text-anchor=\"" << anchor << "\">" << s << "</text>\n";
    }
    void axes(const Range& rx, const Range& ry) {
        line(kMargin, kH - kMargin, kW - kMargin, kH - kMargin, "#333");
        line(kMargin, kMargin, kMargin, kH - kMargin, "#333");
        char buf[64];
        for (int i = 0; i <= 4; ++i) {
            const double fx = rx.lo + (rx.hi - rx.lo) * i / 4.0;
            const double px = kMargin + (kW - 2 * kMargin) * i / 4.0;
            snprintf(buf, sizeof(buf), "%.3g", fx);
            text(px, kH - kMargin + 18, buf, 11, "middle");
            const double fy = ry.lo + (ry.hi - ry.lo) * i / 4.0;
            const double py = kH - kMargin - (kH - 2 * kMargin) * i / 4.0;
            snprintf(buf, sizeof(buf), "%.3g", fy);
            text(kMargin - 6, py + 4, buf, 11, "end");
        }
    }
    double px(const Range& r, double v) const { return r.map(v, kMargin, kW - kMargin); }
    double py(const Range& r, double v) const { return r.map(v, kH - kMargin, kMargin); }
    void save(const std::string& path) {
        os_ << "</svg>\n";
        std::ofstream f(path);
        if (!f) throw EvalError("cannot write figure: " + path);
        f << os_.str();
    }

private:
    std::ostringstream os_;
};

}  // namespace

void write_line_chart(const std::string& path, const std::string& title,
                      const std::vector<Series>& series, const std::string& x_label,
                      const std::string& y_label) {
    Svg svg(title);
    Range rx{1e300, -1e300}, ry{1e300, -1e300};
    for (const auto& s : series) {
        for (double v : s.x) rx.fit(v);
        for (double v : s.y) ry.fit(v);
    }
    if (!(rx.lo < rx.hi)) rx = {rx.lo - 1, rx.hi + 1};
    if (!(ry.lo < ry.hi)) ry = {ry.lo - 1, ry.hi + 1};
    svg.axes(rx, ry);
    int color = 0;
    double legend_y = kMargin;
    for (const auto& s : series) {
        std::vector<std::pair<double, double>> pts;
        for (size_t i = 0; i < s.x.size(); ++i)
            pts.emplace_back(svg.px(rx, s.x[i]), svg.py(ry, s.y[i]));
        const char* c = kPalette[color++ % kPaletteSize];
        svg.polyline(pts, c);
        svg.line(kW - kMargin - 130, legend_y, kW - kMargin - 110, legend_y, c, 2.0);
        svg.text(kW - kMargin - 104, legend_y + 4, s.name, 11);
        legend_y += 16;
    }
    if (!x_label.empty()) svg.text(kW / 2, kH - 12, x_label, 12, "middle");
    if (!y_label.empty()) svg.text(14, kH / 2, y_label, 12, "middle");
    svg.save(path);
}

void write_scatter(const std::string& path, const std::string& title,
                   const std::vector<PointGroup>& groups) {
    Svg svg(title);
    Range rx{1e300, -1e300}, ry{1e300, -1e300};
    for (const auto& g : groups)
        for (const auto& [x, y] : g.points) {
            rx.fit(x);
            ry.fit(y);
        }
    if (!(rx.lo < rx.hi)) rx = {rx.lo - 1, rx.hi + 1};
    if (!(ry.lo < ry.hi)) ry = {ry.lo - 1, ry.hi + 1};
    svg.axes(rx, ry);
    int color = 0;
    double legend_y = kMargin;
    for (const auto& g : groups) {
        const char* c = kPalette[color++ % kPaletteSize];
        for (const auto& [x, y] : g.points) svg.circle(svg.px(rx, x), svg.py(ry, y), 2.4, c);
        svg.circle(kW - kMargin - 124, legend_y, 4, c);
        svg.text(kW - kMargin - 114, legend_y + 4, g.name, 11);
        legend_y += 16;
    }
    svg.save(path);
}

void write_value_histogram(const std::string& path, const std::string& title,
                           const std::map<std::string, std::vector<double>>& series, int bins) {
    Svg svg(title);
    Range rv{1e300, -1e300};
    for (const auto& [_, vs] : series)
        for (double v : vs) rv.fit(v);
    if (!(rv.lo < rv.hi)) rv = {rv.lo - 1, rv.hi + 1};
    double max_count = 1.0;
    std::map<std::string, std::vector<double>> counts;
    for (const auto& [name, vs] : series) {
        std::vector<double> c(static_cast<size_t>(bins), 0.0);
        for (double v : vs) {
            int b = static_cast<int>((v - rv.lo) / (rv.hi - rv.lo) * bins);
            b = std::clamp(b, 0, bins - 1);
            c[static_cast<size_t>(b)] += 1.0;
        }
        for (double v : c) max_count = std::max(max_count, v);
        counts[name] = std::move(c);
    }
    Range ry{0.0, max_count};
    svg.axes(rv, ry);
    int color = 0;
    double legend_y = kMargin;
    for (const auto& [name, c] : counts) {
        std::vector<std::pair<double, double>> pts;
        for (int b = 0; b < bins; ++b) {
            const double v = rv.lo + (rv.hi - rv.lo) * (b + 0.5) / bins;
            pts.emplace_back(svg.px(rv, v), svg.py(ry, c[static_cast<size_t>(b)]));
        }
        const char* col = kPalette[color++ % kPaletteSize];
        svg.polyline(pts, col);
        svg.line(kW - kMargin - 130, legend_y, kW - kMargin - 110, legend_y, col, 2.0);
        svg.text(kW - kMargin - 104, legend_y + 4, name, 11);
        legend_y += 16;
    }
    svg.save(path);
}

namespace {

std::vector<std::string> plot_loss_log(const std::string& input, const std::string& out_dir) {
    std::ifstream is(input);
    std::string line;
    std::map<std::string, Series> per_loss;
    const char* keys[] = {"dist", "ce", "bce", "adv", "res", "kl", "total"};
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        auto j = nlohmann::json::parse(line);
        const double step = j.value("step", 0.0);
        for (const char* k : keys) {
            if (!j.contains(k)) continue;
            auto& s = per_loss[k];
            s.name = k;
            s.x.push_back(step);
            s.y.push_back(j[k].get<double>());
        }
    }
    std::vector<Series> series;
    for (auto& [_, s] : per_loss)
        if (!s.y.empty()) series.push_back(std::move(s));
    const std::string path = out_dir + "/loss_curves.svg";
    write_line_chart(path, "training losses", series, "step", "loss");
    return {path};
}

struct EmbeddingRows {
    std::vector<std::string> domain, branch;
    std::vector<int> label;
    Tensor dims;
};

EmbeddingRows read_embeddings_csv(const std::string& input) {
    std::ifstream is(input);
    std::string line;
    if (!std::getline(is, line)) throw EvalError("empty embeddings file: " + input);
    const int64_t d = static_cast<int64_t>(std::count(line.begin(), line.end(), ',')) - 3;
    if (d < 1) throw EvalError("not an embeddings CSV: " + input);
    EmbeddingRows rows;
    std::vector<double> flat;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string cell;
        std::getline(ls, cell, ',');  // id
        std::getline(ls, cell, ',');
        rows.label.push_back(std::stoi(cell));
        std::getline(ls, cell, ',');
        rows.domain.push_back(cell);
        std::getline(ls, cell, ',');
        rows.branch.push_back(cell);
        for (int64_t j = 0; j < d; ++j) {
            std::getline(ls, cell, ',');
            flat.push_back(std::stod(cell));
        }
    }
    rows.dims = Tensor::from_vector({static_cast<int64_t>(rows.label.size()), d}, flat);
    return rows;
}

std::vector<std::string> plot_embeddings(const std::string& input, const std::string& out_dir) {
    auto rows = read_embeddings_csv(input);
    std::vector<std::string> written;
    std::vector<std::string> branches;
    for (const auto& b : rows.branch)
        if (std::find(branches.begin(), branches.end(), b) == branches.end()) branches.push_back(b);
    const std::string stem = fs::path(input).stem().string();
    for (const auto& b : branches) {
        std::vector<int64_t> keep;
        for (int64_t i = 0; i < rows.dims.dim(0); ++i)
            if (rows.branch[static_cast<size_t>(i)] == b) keep.push_back(i);
        Tensor sub({static_cast<int64_t>(keep.size()), rows.dims.dim(1)});
        for (size_t i = 0; i < keep.size(); ++i)
            for (int64_t j = 0; j < rows.dims.dim(1); ++j)
                sub.at(static_cast<int64_t>(i), j) = rows.dims.at(keep[i], j);
        Tensor proj = pca_2d(sub);
        std::map<std::string, PointGroup> groups;
        for (size_t i = 0; i < keep.size(); ++i) {
            const auto key = rows.domain[static_cast<size_t>(keep[i])] + "-c" +
                             std::to_string(rows.label[static_cast<size_t>(keep[i])]);
            auto& g = groups[key];
            g.name = key;
            g.points.emplace_back(proj.at(static_cast<int64_t>(i), 0), proj.at(static_cast<int64_t>(i), 1));
        }
        std::vector<PointGroup> glist;
        for (auto& [_, g] : groups) glist.push_back(std::move(g));
        const std::string path = out_dir + "/" + stem + "_" + b + "_scatter.svg";
        write_scatter(path, "branch " + b + " embeddings (2-component projection)", glist);
        written.push_back(path);
        if (b == "ds") {
            std::map<std::string, std::vector<double>> hist;
            for (size_t i = 0; i < keep.size(); ++i) {
                auto& vs = hist[rows.domain[static_cast<size_t>(keep[i])]];
                for (int64_t j = 0; j < rows.dims.dim(1); ++j) vs.push_back(rows.dims.at(keep[i], j));
            }
            const std::string hpath = out_dir + "/" + stem + "_ds_intensity.svg";
            write_value_histogram(hpath, "domain-specific feature intensities", hist);
            written.push_back(hpath);
        }
    }
    return written;
}

std::vector<std::string> plot_report(const std::string& input, const std::string& out_dir) {
    std::ifstream is(input);
    auto j = nlohmann::json::parse(is);
    std::vector<std::string> written;
    if (j.contains("iteration_sweep")) {
        Series s;
        s.name = "robust accuracy";
        for (const auto& v : j["iteration_sweep"]["iterations"]) s.x.push_back(v.get<double>());
        for (const auto& v : j["iteration_sweep"]["accuracies"]) s.y.push_back(v.get<double>());
        const std::string path = out_dir + "/iteration_sweep.svg";
        write_line_chart(path, "accuracy vs attack iterations", {s}, "iterations", "accuracy (%)");
        written.push_back(path);
    }
    return written;
}

}  // namespace

std::vector<std::string> plot_file(const std::string& input_path, const std::string& out_dir) {
    fs::create_directories(out_dir);
    std::ifstream is(input_path);
    if (!is) throw EvalError("cannot open plot input: " + input_path);
    std::string first;
    std::getline(is, first);
    is.close();
    if (first.rfind("id,label,domain,branch", 0) == 0) return plot_embeddings(input_path, out_dir);
    if (!first.empty() && first[0] == '{' && first.find("\"step\"") != std::string::npos)
        return plot_loss_log(input_path, out_dir);
    return plot_report(input_path, out_dir);
}

}  // namespace disro::eval
