#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "coca/trainer.hpp"

namespace coca::app {

enum class Metric { loss, top1, top5 };

const char* metric_name(Metric m);

// Static SVG of one metric against epoch. Identical rows give identical bytes.
// Each point carries its exact values in data-epoch / data-value attributes.
std::string render_svg(const std::vector<train::MetricsRow>& rows, Metric metric);

// (epoch, value) pairs recovered from render_svg output.
std::vector<std::pair<double, double>> extract_points(const std::string& svg);

// Writes loss.svg, top1.svg and top5.svg into `out_dir`. Throws for a CSV with no rows.
std::vector<std::filesystem::path> plot_metrics(const std::string& csv_text, const std::filesystem::path& out_dir);

}  // namespace coca::app
