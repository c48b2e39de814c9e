#pragma once

// Figure emission for finished runs: annual sample overlays, monthly hourly
// profiles, weekly heatmaps, training curves, and per-slice metric breakdowns,
// written as SVG and PNG files whose bytes depend only on the inputs.

#include <energen/evaluation.hpp>
#include <energen/training.hpp>

#include <string>
#include <utility>
#include <vector>

namespace energen {

enum class PlotKind {
    annual_overlay,
    monthly_average,
    weekly_heatmap,
    epoch_curves,
    metric_breakdown,
};

const char* to_string(PlotKind k);
PlotKind plot_kind_from_string(const std::string& s);

struct PlotSpec {
    PlotKind kind = PlotKind::annual_overlay;
    std::string meter_type;     // empty = any, else a canonical meter type name
    std::string building_type;  // empty = any, else a canonical building type name
    int samples = 5;            // synthetic draws per model, heatmap files
    std::string output_dir;

    void validate() const;
};

// Minimal RGB8 PNG writer (one byte stream per input, no metadata).
void write_png(const std::string& path, int width, int height, const std::vector<uint8_t>& rgb);

// Sample-based kinds over in-memory stacks. real and every synth tensor are
// [N, 52, 168] images; synth entries pair a model name with its stack.
// annual_overlay writes one file per source, translucent sample lines plus a
// mean line. monthly_average writes one file of per-calendar-month hourly
// profiles. weekly_heatmap writes one file per sample index with 52x168
// panels left to right: real, then the models in the given order.
// Returns the paths written, sorted. Other kinds belong to the entry points
// below and are rejected here.
std::vector<std::string> render_plots(const PlotSpec& spec, const TensorF& real,
                                      const std::vector<std::pair<std::string, TensorF>>& synth);

// One loss-curve file per checkpoint: train loss, held-out loss, and any
// extra loss parts against the epoch axis.
std::vector<std::string> render_epoch_curves(const PlotSpec& spec,
                                             const std::vector<Checkpoint>& checkpoints);

// One grouped bar chart per metric across the reports' shared slices.
std::vector<std::string> render_metric_breakdown(const PlotSpec& spec,
                                                 const std::vector<EvalReport>& reports);

// Renders spec against a finished experiment run directory, loading whatever
// the kind needs (dataset, checkpoints, or eval reports listed in the run's
// manifest). Sample-based kinds filter the dataset by the spec's categories,
// take the first matching meter's conditions, and draw spec.samples series
// per model from seed. An empty filter result is an error.
std::vector<std::string> render_report(const std::string& run_dir, const PlotSpec& spec,
                                       uint64_t seed);

} // namespace energen
