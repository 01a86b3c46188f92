#include "coca/app/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <regex>
#include <stdexcept>

#include "coca/checkpoint.hpp"
#include "coca/config.hpp"

namespace coca::app {

namespace {

constexpr double kWidth = 640, kHeight = 400;
constexpr double kLeft = 70, kRight = 20, kTop = 40, kBottom = 50;

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    return buf;
}

std::string tick_label(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

const char* axis_label(Metric m) {
    switch (m) {
        case Metric::loss: return "mean NT-Xent loss";
        case Metric::top1: return "top-1 accuracy (%)";
        case Metric::top5: return "top-5 accuracy (%)";
    }
    return "";
}

std::vector<std::pair<double, double>> series(const std::vector<train::MetricsRow>& rows, Metric m) {
    std::vector<std::pair<double, double>> pts;
    for (const auto& r : rows) {
        const double e = static_cast<double>(r.epoch);
        if (m == Metric::loss) pts.emplace_back(e, r.loss);
        else if (m == Metric::top1 && r.top1) pts.emplace_back(e, *r.top1);
        else if (m == Metric::top5 && r.top5) pts.emplace_back(e, *r.top5);
    }
    return pts;
}

}  // namespace

const char* metric_name(Metric m) {
    switch (m) {
        case Metric::loss: return "loss";
        case Metric::top1: return "top1";
        case Metric::top5: return "top5";
    }
    return "";
}

std::string render_svg(const std::vector<train::MetricsRow>& rows, Metric metric) {
    const auto pts = series(rows, metric);
    double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (!pts.empty()) {
        x0 = x1 = pts.front().first;
        y0 = y1 = pts.front().second;
        for (const auto& [x, y] : pts) {
            x0 = std::min(x0, x), x1 = std::max(x1, x);
            y0 = std::min(y0, y), y1 = std::max(y1, y);
        }
        if (x1 == x0) x0 -= 1, x1 += 1;
        if (y1 == y0) y0 -= 0.5, y1 += 0.5;
        const double pad = 0.05 * (y1 - y0);
        y0 -= pad, y1 += pad;
    }
    const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
    auto px = [&](double x) { return kLeft + (x - x0) / (x1 - x0) * pw; };
    auto py = [&](double y) { return kTop + (1.0 - (y - y0) / (y1 - y0)) * ph; };

    std::string s;
    s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" viewBox=\"0 0 640 400\">\n";
    s += "<rect width=\"640\" height=\"400\" fill=\"white\"/>\n";
    s += std::string("<text x=\"320\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">") +
         axis_label(metric) + " vs epoch</text>\n";
    s += "<g stroke=\"black\" stroke-width=\"1\">\n";
    s += "<line x1=\"" + num(kLeft) + "\" y1=\"" + num(kTop + ph) + "\" x2=\"" + num(kLeft + pw) + "\" y2=\"" +
         num(kTop + ph) + "\"/>\n";
    s += "<line x1=\"" + num(kLeft) + "\" y1=\"" + num(kTop) + "\" x2=\"" + num(kLeft) + "\" y2=\"" +
         num(kTop + ph) + "\"/>\n";
    s += "</g>\n<g font-family=\"sans-serif\" font-size=\"11\">\n";
    for (int i = 0; i <= 4; ++i) {
        const double xv = x0 + (x1 - x0) * i / 4.0, yv = y0 + (y1 - y0) * i / 4.0;
        s += "<text x=\"" + num(px(xv)) + "\" y=\"" + num(kTop + ph + 16) + "\" text-anchor=\"middle\">" +
             tick_label(xv) + "</text>\n";
        s += "<text x=\"" + num(kLeft - 6) + "\" y=\"" + num(py(yv) + 4) + "\" text-anchor=\"end\">" +
             tick_label(yv) + "</text>\n";
    }
    s += "</g>\n";
    s += "<text x=\"" + num(kLeft + pw / 2) +
         "\" y=\"392\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">epoch</text>\n";
    s += std::string("<text x=\"16\" y=\"") + num(kTop + ph / 2) + "\" transform=\"rotate(-90 16 " +
         num(kTop + ph / 2) + ")\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">" +
         axis_label(metric) + "</text>\n";
    if (pts.empty()) {
        s += "<text x=\"320\" y=\"200\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">"
             "no evaluated epochs</text>\n";
    } else {
        s += "<polyline fill=\"none\" stroke=\"#1f5fa8\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < pts.size(); ++i)
            s += (i ? " " : "") + num(px(pts[i].first)) + "," + num(py(pts[i].second));
        s += "\"/>\n<g fill=\"#1f5fa8\">\n";
        for (const auto& [x, y] : pts)
            s += "<circle cx=\"" + num(px(x)) + "\" cy=\"" + num(py(y)) + "\" r=\"3\" data-epoch=\"" +
                 format_double(x) + "\" data-value=\"" + format_double(y) + "\"/>\n";
        s += "</g>\n";
    }
    s += "</svg>\n";
    return s;
}

std::vector<std::pair<double, double>> extract_points(const std::string& svg) {
    static const std::regex point(R"re(data-epoch="([^"]+)" data-value="([^"]+)")re");
    std::vector<std::pair<double, double>> out;
    for (auto it = std::sregex_iterator(svg.begin(), svg.end(), point); it != std::sregex_iterator(); ++it)
        out.emplace_back(parse_double("data-epoch", (*it)[1].str()), parse_double("data-value", (*it)[2].str()));
    return out;
}

std::vector<std::filesystem::path> plot_metrics(const std::string& csv_text, const std::filesystem::path& out_dir) {
    const auto rows = train::parse_metrics_csv(csv_text);
    if (rows.empty()) throw std::runtime_error("metrics CSV has a header but no rows: nothing to plot");
    std::filesystem::create_directories(out_dir);
    std::vector<std::filesystem::path> written;
    for (Metric m : {Metric::loss, Metric::top1, Metric::top5}) {
        const auto path = out_dir / (std::string(metric_name(m)) + ".svg");
        write_file_atomic(path, render_svg(rows, m));
        written.push_back(path);
    }
    return written;
}

}  // namespace coca::app
