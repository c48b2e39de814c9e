#include <energen/plots.hpp>

#include <json.hpp>
#include <zlib.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace energen {

namespace fs = std::filesystem;
using json = nlohmann::json;

const char* to_string(PlotKind k) {
    switch (k) {
    case PlotKind::annual_overlay: return "annual_overlay";
    case PlotKind::monthly_average: return "monthly_average";
    case PlotKind::weekly_heatmap: return "weekly_heatmap";
    case PlotKind::epoch_curves: return "epoch_curves";
    case PlotKind::metric_breakdown: return "metric_breakdown";
    }
    throw contract_error("unknown plot kind");
}

PlotKind plot_kind_from_string(const std::string& s) {
    if (s == "annual_overlay") return PlotKind::annual_overlay;
    if (s == "monthly_average") return PlotKind::monthly_average;
    if (s == "weekly_heatmap") return PlotKind::weekly_heatmap;
    if (s == "epoch_curves") return PlotKind::epoch_curves;
    if (s == "metric_breakdown") return PlotKind::metric_breakdown;
    throw parse_error("unknown plot kind: " + s);
}

void PlotSpec::validate() const {
    if (samples < 1) throw config_error("plot: samples must be >= 1");
    if (output_dir.empty()) throw config_error("plot: output directory not set");
    if (!meter_type.empty()) meter_type_from_string(meter_type);
    if (!building_type.empty()) building_type_from_string(building_type);
}

namespace {

void push_be32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v >> 24));
    out.push_back(static_cast<uint8_t>(v >> 16));
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v));
}

void push_chunk(std::vector<uint8_t>& out, const char type[4], const std::vector<uint8_t>& data) {
    push_be32(out, static_cast<uint32_t>(data.size()));
    size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    uint32_t crc = static_cast<uint32_t>(
        crc32(0, out.data() + start, static_cast<uInt>(4 + data.size())));
    push_be32(out, crc);
}

} // namespace

void write_png(const std::string& path, int width, int height, const std::vector<uint8_t>& rgb) {
    if (width < 1 || height < 1) throw contract_error("png: empty image");
    if (rgb.size() != static_cast<size_t>(width) * height * 3)
        throw contract_error("png: pixel buffer does not match " + std::to_string(width) + "x" +
                             std::to_string(height));

    std::vector<uint8_t> raw;
    raw.reserve(rgb.size() + static_cast<size_t>(height));
    for (int y = 0; y < height; ++y) {
        raw.push_back(0); // no per-row filtering
        size_t off = static_cast<size_t>(y) * width * 3;
        raw.insert(raw.end(), rgb.begin() + off, rgb.begin() + off + static_cast<size_t>(width) * 3);
    }
    uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
    std::vector<uint8_t> comp(comp_len);
    if (compress2(comp.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK)
        throw runtime_error("png: compression failed");
    comp.resize(comp_len);

    std::vector<uint8_t> out{137, 'P', 'N', 'G', 13, 10, 26, 10};
    std::vector<uint8_t> ihdr;
    push_be32(ihdr, static_cast<uint32_t>(width));
    push_be32(ihdr, static_cast<uint32_t>(height));
    ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0}); // 8-bit RGB, default methods
    push_chunk(out, "IHDR", ihdr);
    push_chunk(out, "IDAT", comp);
    push_chunk(out, "IEND", {});

    fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream f(p, std::ios::binary);
    if (!f) throw io_error("cannot write " + path);
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
}

namespace {

constexpr double kCanvasW = 880.0;
constexpr double kCanvasH = 320.0;
constexpr double kMarginL = 58.0;
constexpr double kMarginR = 16.0;
constexpr double kMarginT = 30.0;
constexpr double kMarginB = 40.0;

const char* kSourcePalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"};

const char* palette(size_t i) { return kSourcePalette[i % (sizeof(kSourcePalette) / sizeof(char*))]; }

std::string fmt2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

std::string fmt_tick(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

std::string escape_text(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '&') out += "&amp;";
        else if (c == '<') out += "&lt;";
        else if (c == '>') out += "&gt;";
        else out += c;
    }
    return out;
}

struct Svg {
    std::string body;

    Svg() {
        body = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"880\" height=\"320\" "
               "viewBox=\"0 0 880 320\">\n<rect width=\"880\" height=\"320\" fill=\"#ffffff\"/>\n";
    }

    void line(double x1, double y1, double x2, double y2, const char* color, double w) {
        body += "<line x1=\"" + fmt2(x1) + "\" y1=\"" + fmt2(y1) + "\" x2=\"" + fmt2(x2) +
                "\" y2=\"" + fmt2(y2) + "\" stroke=\"" + color + "\" stroke-width=\"" + fmt2(w) +
                "\"/>\n";
    }

    void rect(double x, double y, double w, double h, const char* fill, double opacity = 1.0) {
        body += "<rect x=\"" + fmt2(x) + "\" y=\"" + fmt2(y) + "\" width=\"" + fmt2(w) +
                "\" height=\"" + fmt2(h) + "\" fill=\"" + fill + "\"";
        if (opacity != 1.0) body += " fill-opacity=\"" + fmt2(opacity) + "\"";
        body += "/>\n";
    }

    void frame_rect(double x, double y, double w, double h) {
        body += "<rect x=\"" + fmt2(x) + "\" y=\"" + fmt2(y) + "\" width=\"" + fmt2(w) +
                "\" height=\"" + fmt2(h) + "\" fill=\"none\" stroke=\"#999999\"/>\n";
    }

    void polyline(const std::vector<std::pair<double, double>>& pts, const char* color, double w,
                  double opacity) {
        if (pts.size() < 2) return;
        body += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"" +
                fmt2(w) + "\"";
        if (opacity != 1.0) body += " stroke-opacity=\"" + fmt2(opacity) + "\"";
        body += " points=\"";
        for (const auto& [x, y] : pts) body += fmt2(x) + "," + fmt2(y) + " ";
        body.back() = '"';
        body += "/>\n";
    }

    void text(double x, double y, const std::string& s, double size, const char* anchor,
              double rotate = 0.0) {
        body += "<text x=\"" + fmt2(x) + "\" y=\"" + fmt2(y) + "\" font-size=\"" + fmt2(size) +
                "\" font-family=\"Helvetica,Arial,sans-serif\" fill=\"#222222\" text-anchor=\"" +
                anchor + "\"";
        if (rotate != 0.0)
            body += " transform=\"rotate(" + fmt2(rotate) + " " + fmt2(x) + " " + fmt2(y) + ")\"";
        body += ">" + escape_text(s) + "</text>\n";
    }

    std::string finish() {
        return body + "</svg>\n";
    }
};

struct Frame {
    double x0 = kMarginL, y0 = kMarginT;
    double x1 = kCanvasW - kMarginR, y1 = kCanvasH - kMarginB;
    double vx0 = 0, vx1 = 1, vy0 = 0, vy1 = 1;

    double px(double v) const { return x0 + (v - vx0) / (vx1 - vx0) * (x1 - x0); }
    double py(double v) const { return y1 - (v - vy0) / (vy1 - vy0) * (y1 - y0); }
};

void pad_range(double& lo, double& hi) {
    if (!std::isfinite(lo) || !std::isfinite(hi)) {
        lo = -1.0;
        hi = 1.0;
        return;
    }
    if (hi <= lo) {
        lo -= 0.5;
        hi += 0.5;
        return;
    }
    double pad = 0.04 * (hi - lo);
    lo -= pad;
    hi += pad;
}

Frame make_frame(Svg& svg, const std::string& title, double vx0, double vx1, double vy0,
                 double vy1) {
    Frame fr;
    fr.vx0 = vx0;
    fr.vx1 = vx1;
    fr.vy0 = vy0;
    fr.vy1 = vy1;
    svg.frame_rect(fr.x0, fr.y0, fr.x1 - fr.x0, fr.y1 - fr.y0);
    svg.text(fr.x0, kMarginT - 10.0, title, 12, "start");
    for (double v : {vy0, 0.5 * (vy0 + vy1), vy1}) {
        double y = fr.py(v);
        svg.line(fr.x0 - 4, y, fr.x0, y, "#999999", 1.0);
        svg.text(fr.x0 - 7, y + 3.5, fmt_tick(v), 10, "end");
    }
    return fr;
}

const int kMonthDays[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};

// One tick per month at the caller-supplied x value of its first unit.
void month_axis(Svg& svg, const Frame& fr, const std::vector<double>& starts) {
    static const char* kMonthNames[] = {"Jan", "Feb", "Mar", "Apr", "May", "Jun",
                                        "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"};
    for (size_t m = 0; m < starts.size() && m < 12; ++m) {
        double x = fr.px(starts[m]);
        svg.line(x, fr.y1, x, fr.y1 + 4, "#999999", 1.0);
        svg.text(x + 2, fr.y1 + 15, kMonthNames[m], 9, "start");
    }
}

std::vector<double> month_day_starts() {
    std::vector<double> starts;
    int day = 0;
    for (int m = 0; m < 12 && day < 364; ++m) {
        starts.push_back(day);
        day += kMonthDays[m];
    }
    return starts;
}

void legend(Svg& svg, const Frame& fr, const std::vector<std::pair<std::string, const char*>>& items) {
    double y = fr.y0 + 14.0;
    for (const auto& [label, color] : items) {
        svg.rect(fr.x1 - 150.0, y - 8, 9, 9, color);
        svg.text(fr.x1 - 137.0, y, label, 10, "start");
        y += 14.0;
    }
}

constexpr int kDays = 364; // 52 weeks
constexpr int kHours = kDays * 24;

float cell(const TensorF& stack, int i, int hour) {
    return stack.at(i, hour / 168, hour % 168);
}

// Mean of each day across the stack's hours; [n][364].
std::vector<std::vector<double>> daily_means(const TensorF& stack) {
    int n = stack.dim(0);
    std::vector<std::vector<double>> out(static_cast<size_t>(n), std::vector<double>(kDays));
    for (int i = 0; i < n; ++i)
        for (int d = 0; d < kDays; ++d) {
            double s = 0.0;
            for (int h = 0; h < 24; ++h) s += cell(stack, i, d * 24 + h);
            out[static_cast<size_t>(i)][static_cast<size_t>(d)] = s / 24.0;
        }
    return out;
}

// Mean hourly profile per calendar month pooled over samples and days; [288].
std::vector<double> monthly_profile(const TensorF& stack) {
    std::vector<double> out(12 * 24, 0.0);
    int n = stack.dim(0);
    int day = 0;
    for (int m = 0; m < 12; ++m) {
        int span = std::min(kMonthDays[m], kDays - day);
        for (int h = 0; h < 24; ++h) {
            double s = 0.0;
            for (int i = 0; i < n; ++i)
                for (int d = 0; d < span; ++d) s += cell(stack, i, (day + d) * 24 + h);
            out[static_cast<size_t>(m * 24 + h)] = s / (static_cast<double>(n) * span);
        }
        day += span;
    }
    return out;
}

// Piecewise-linear ramp through viridis anchor colors for v in [-1, 1].
void heat_color(float v, uint8_t* rgb) {
    static const double stops[5][3] = {{68, 1, 84}, {59, 82, 139}, {33, 145, 140},
                                       {94, 201, 98}, {253, 231, 37}};
    double t = (std::min(1.0f, std::max(-1.0f, v)) + 1.0) / 2.0 * 4.0;
    int lo = std::min(3, static_cast<int>(t));
    double f = t - lo;
    for (int c = 0; c < 3; ++c)
        rgb[c] = static_cast<uint8_t>(std::lround(stops[lo][c] + f * (stops[lo + 1][c] - stops[lo][c])));
}

std::string slugify(const std::string& s) {
    std::string out;
    for (char c : s) out += std::isalnum(static_cast<unsigned char>(c)) ? c : '-';
    return out;
}

std::string file_stem(const PlotSpec& spec) {
    std::string stem = to_string(spec.kind);
    if (!spec.meter_type.empty()) stem += "_" + slugify(spec.meter_type);
    if (!spec.building_type.empty()) stem += "_" + slugify(spec.building_type);
    return stem;
}

std::string filter_label(const PlotSpec& spec) {
    if (spec.meter_type.empty() && spec.building_type.empty()) return "all meters";
    if (spec.building_type.empty()) return spec.meter_type;
    if (spec.meter_type.empty()) return spec.building_type;
    return spec.meter_type + " / " + spec.building_type;
}

std::string write_file(const PlotSpec& spec, const std::string& name, const std::string& content) {
    fs::path p = fs::path(spec.output_dir) / name;
    fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out) throw io_error("cannot write " + p.string());
    out << content;
    return p.string();
}

void check_stack(const std::string& name, const TensorF& t) {
    if (t.ndim() != 3 || t.dim(1) != kImageWeeks || t.dim(2) != kImageHoursPerWeek)
        throw contract_error("plot: " + name + " samples must be [N, 52, 168], got " +
                             t.shape_str());
    if (t.dim(0) < 1) throw data_error("plot: " + name + " has no samples");
}

std::string overlay_svg(const PlotSpec& spec, const std::string& source, const TensorF& stack,
                        double lo, double hi) {
    auto days = daily_means(stack);
    Svg svg;
    std::string title = "annual overlay: " + source + " (" + std::to_string(stack.dim(0)) +
                        " samples, daily means, " + filter_label(spec) + ")";
    Frame fr = make_frame(svg, title, 0, kDays - 1, lo, hi);
    month_axis(svg, fr, month_day_starts());

    std::vector<double> mean(kDays, 0.0);
    for (const auto& d : days)
        for (int t = 0; t < kDays; ++t) mean[static_cast<size_t>(t)] += d[static_cast<size_t>(t)];
    for (double& v : mean) v /= static_cast<double>(days.size());

    std::vector<std::pair<double, double>> pts(kDays);
    for (const auto& d : days) {
        for (int t = 0; t < kDays; ++t)
            pts[static_cast<size_t>(t)] = {fr.px(t), fr.py(d[static_cast<size_t>(t)])};
        svg.polyline(pts, "#1f77b4", 1.0, 0.22);
    }
    for (int t = 0; t < kDays; ++t)
        pts[static_cast<size_t>(t)] = {fr.px(t), fr.py(mean[static_cast<size_t>(t)])};
    svg.polyline(pts, "#000000", 1.8, 1.0);
    return svg.finish();
}

std::vector<std::string> render_annual_overlay(const PlotSpec& spec, const TensorF& real,
                                               const std::vector<std::pair<std::string, TensorF>>& synth) {
    // One shared value range keeps the panels comparable.
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    auto widen = [&](const TensorF& stack) {
        for (const auto& d : daily_means(stack))
            for (double v : d) {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
    };
    widen(real);
    for (const auto& [name, stack] : synth) widen(stack);
    pad_range(lo, hi);

    std::vector<std::string> files;
    files.push_back(
        write_file(spec, file_stem(spec) + "_real.svg", overlay_svg(spec, "real", real, lo, hi)));
    for (const auto& [name, stack] : synth)
        files.push_back(write_file(spec, file_stem(spec) + "_" + slugify(name) + ".svg",
                                   overlay_svg(spec, name, stack, lo, hi)));
    std::sort(files.begin(), files.end());
    return files;
}

std::vector<std::string> render_monthly_average(const PlotSpec& spec, const TensorF& real,
                                                const std::vector<std::pair<std::string, TensorF>>& synth) {
    std::vector<std::pair<std::string, std::vector<double>>> curves;
    curves.emplace_back("real", monthly_profile(real));
    for (const auto& [name, stack] : synth) curves.emplace_back(name, monthly_profile(stack));

    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& [name, c] : curves)
        for (double v : c) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    pad_range(lo, hi);

    Svg svg;
    Frame fr = make_frame(svg,
                          "monthly hourly means (" + filter_label(spec) + ")", 0, 288 - 1, lo, hi);
    std::vector<double> starts;
    for (int m = 0; m < 12; ++m) starts.push_back(m * 24);
    month_axis(svg, fr, starts);

    std::vector<std::pair<std::string, const char*>> items;
    for (size_t s = 0; s < curves.size(); ++s) {
        const char* color = s == 0 ? "#000000" : palette(s - 1);
        std::vector<std::pair<double, double>> pts(curves[s].second.size());
        for (size_t t = 0; t < curves[s].second.size(); ++t)
            pts[t] = {fr.px(static_cast<double>(t)), fr.py(curves[s].second[t])};
        svg.polyline(pts, color, s == 0 ? 1.8 : 1.2, 1.0);
        items.emplace_back(curves[s].first, color);
    }
    legend(svg, fr, items);
    return {write_file(spec, file_stem(spec) + ".svg", svg.finish())};
}

std::vector<std::string> render_weekly_heatmap(const PlotSpec& spec, const TensorF& real,
                                               const std::vector<std::pair<std::string, TensorF>>& synth) {
    int n = std::min(spec.samples, real.dim(0));
    for (const auto& [name, stack] : synth) n = std::min(n, stack.dim(0));

    const int gutter = 2;
    int panels = 1 + static_cast<int>(synth.size());
    int width = panels * kImageHoursPerWeek + (panels - 1) * gutter;
    int height = kImageWeeks;

    std::vector<std::string> files;
    for (int k = 0; k < n; ++k) {
        std::vector<uint8_t> rgb(static_cast<size_t>(width) * height * 3, 255);
        auto blit = [&](int panel, const TensorF& stack) {
            int x0 = panel * (kImageHoursPerWeek + gutter);
            for (int w = 0; w < kImageWeeks; ++w)
                for (int h = 0; h < kImageHoursPerWeek; ++h)
                    heat_color(stack.at(k, w, h),
                               &rgb[(static_cast<size_t>(w) * width + x0 + h) * 3]);
        };
        blit(0, real);
        for (size_t s = 0; s < synth.size(); ++s) blit(static_cast<int>(s) + 1, synth[s].second);

        fs::path p = fs::path(spec.output_dir) /
                     (file_stem(spec) + "_s" + std::to_string(k) + ".png");
        write_png(p.string(), width, height, rgb);
        files.push_back(p.string());
    }
    std::sort(files.begin(), files.end());
    return files;
}

} // namespace

std::vector<std::string> render_plots(const PlotSpec& spec, const TensorF& real,
                                      const std::vector<std::pair<std::string, TensorF>>& synth) {
    spec.validate();
    check_stack("real", real);
    for (const auto& [name, stack] : synth) {
        if (name.empty()) throw contract_error("plot: synthetic stack with empty model name");
        check_stack(name, stack);
    }
    switch (spec.kind) {
    case PlotKind::annual_overlay: return render_annual_overlay(spec, real, synth);
    case PlotKind::monthly_average: return render_monthly_average(spec, real, synth);
    case PlotKind::weekly_heatmap: return render_weekly_heatmap(spec, real, synth);
    default:
        throw contract_error(std::string("render_plots: kind ") + to_string(spec.kind) +
                             " is not sample-based");
    }
}

std::vector<std::string> render_epoch_curves(const PlotSpec& spec,
                                             const std::vector<Checkpoint>& checkpoints) {
    spec.validate();
    if (checkpoints.empty()) throw contract_error("epoch curves: no checkpoints");

    std::vector<std::string> files;
    for (const Checkpoint& ck : checkpoints) {
        if (ck.history.empty())
            throw data_error(std::string("epoch curves: checkpoint ") +
                                             to_string(ck.kind) + " has no training history");

        std::set<std::string> part_names;
        for (const EpochMetrics& m : ck.history)
            for (const auto& [name, value] : m.parts)
                if (name != "test_loss") part_names.insert(name);

        // Series: train loss, held-out loss, then extra parts by name.
        std::vector<std::pair<std::string, std::vector<std::pair<double, double>>>> series;
        series.emplace_back("train", std::vector<std::pair<double, double>>{});
        for (const EpochMetrics& m : ck.history)
            series[0].second.emplace_back(m.epoch, m.loss);
        auto gather = [&](const std::string& part, const std::string& label) {
            std::vector<std::pair<double, double>> pts;
            for (const EpochMetrics& m : ck.history) {
                auto it = m.parts.find(part);
                if (it != m.parts.end()) pts.emplace_back(m.epoch, it->second);
            }
            if (!pts.empty()) series.emplace_back(label, std::move(pts));
        };
        gather("test_loss", "held-out");
        for (const std::string& p : part_names) gather(p, p);

        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (const auto& [label, pts] : series)
            for (const auto& [x, y] : pts)
                if (std::isfinite(y)) {
                    lo = std::min(lo, y);
                    hi = std::max(hi, y);
                }
        pad_range(lo, hi);
        double x1 = ck.history.back().epoch;

        Svg svg;
        Frame fr = make_frame(svg, std::string("training loss: ") + to_string(ck.kind), 1.0,
                              std::max(x1, 2.0), lo, hi);
        for (double e : {1.0, std::round(x1 / 2), x1}) {
            double x = fr.px(e);
            svg.line(x, fr.y1, x, fr.y1 + 4, "#999999", 1.0);
            svg.text(x, fr.y1 + 15, fmt_tick(e), 9, "middle");
        }
        svg.text(0.5 * (fr.x0 + fr.x1), kCanvasH - 8, "epoch", 10, "middle");

        std::vector<std::pair<std::string, const char*>> items;
        for (size_t s = 0; s < series.size(); ++s) {
            std::vector<std::pair<double, double>> pts;
            for (const auto& [x, y] : series[s].second) pts.emplace_back(fr.px(x), fr.py(y));
            svg.polyline(pts, palette(s), 1.4, 1.0);
            items.emplace_back(series[s].first, palette(s));
        }
        legend(svg, fr, items);

        files.push_back(write_file(
            spec, std::string("epoch_curves_") + to_string(ck.kind) + ".svg", svg.finish()));
    }
    std::sort(files.begin(), files.end());
    return files;
}

std::vector<std::string> render_metric_breakdown(const PlotSpec& spec,
                                                 const std::vector<EvalReport>& reports) {
    spec.validate();
    if (reports.empty()) throw contract_error("metric breakdown: no reports");
    const std::vector<EvalEntry>& slices = reports[0].entries;
    if (slices.empty()) throw data_error("metric breakdown: report has no slices");

    static const char* kMetrics[] = {"fid", "kl", "rmse", "r2"};
    auto pick = [](const EvalEntry& e, const std::string& metric) -> const MetricStat& {
        if (metric == "fid") return e.fid;
        if (metric == "kl") return e.kl;
        if (metric == "rmse") return e.rmse;
        return e.r2;
    };

    std::vector<std::string> files;
    for (const std::string metric : kMetrics) {
        double lo = 0.0, hi = 0.0;
        for (const EvalReport& r : reports)
            for (const EvalEntry& e : r.entries) {
                const MetricStat& st = pick(e, metric);
                if (!std::isfinite(st.mean)) continue;
                double spread = st.has_std ? st.std : 0.0;
                lo = std::min(lo, st.mean - spread);
                hi = std::max(hi, st.mean + spread);
            }
        pad_range(lo, hi);

        Svg svg;
        Frame fr = make_frame(svg, metric + " by slice", 0, 1, lo, hi);
        double zero = fr.py(0.0);
        svg.line(fr.x0, zero, fr.x1, zero, "#bbbbbb", 1.0);

        size_t groups = slices.size();
        double group_w = (fr.x1 - fr.x0) / static_cast<double>(groups);
        double bar_w = group_w * 0.8 / static_cast<double>(reports.size());
        for (size_t g = 0; g < groups; ++g) {
            double gx = fr.x0 + group_w * (static_cast<double>(g) + 0.1);
            for (size_t m = 0; m < reports.size(); ++m) {
                const EvalEntry* e = reports[m].find(slices[g].slice);
                if (e == nullptr) continue;
                const MetricStat& st = pick(*e, metric);
                if (!std::isfinite(st.mean)) continue;
                double x = gx + bar_w * static_cast<double>(m);
                double y = fr.py(st.mean);
                svg.rect(x, std::min(y, zero), bar_w * 0.92, std::abs(y - zero), palette(m), 0.85);
                if (st.has_std) {
                    double cx = x + bar_w * 0.46;
                    svg.line(cx, fr.py(st.mean - st.std), cx, fr.py(st.mean + st.std), "#333333",
                             1.0);
                }
            }
            svg.text(fr.x0 + group_w * (static_cast<double>(g) + 0.5), fr.y1 + 12, slices[g].slice,
                     9, "end", -28.0);
        }

        std::vector<std::pair<std::string, const char*>> items;
        for (size_t m = 0; m < reports.size(); ++m)
            items.emplace_back(reports[m].model, palette(m));
        legend(svg, fr, items);

        files.push_back(write_file(spec, "metric_breakdown_" + metric + ".svg", svg.finish()));
    }
    std::sort(files.begin(), files.end());
    return files;
}

namespace {

std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw io_error("cannot read " + p.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> manifest_models(const std::string& run_dir) {
    fs::path mf = fs::path(run_dir) / "manifest.json";
    if (!fs::exists(mf))
        throw io_error("not an experiment run directory (no manifest.json): " + run_dir);
    try {
        return json::parse(read_text(mf)).at("models").get<std::vector<std::string>>();
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        throw format_error("manifest.json: " + std::string(e.what()));
    }
}

} // namespace

std::vector<std::string> render_report(const std::string& run_dir, const PlotSpec& spec,
                                       uint64_t seed) {
    spec.validate();
    std::vector<std::string> models = manifest_models(run_dir);
    fs::path run(run_dir);

    if (spec.kind == PlotKind::epoch_curves) {
        std::vector<Checkpoint> cks;
        for (const std::string& m : models)
            cks.push_back(load_checkpoint((run / "checkpoints" / m).string()));
        return render_epoch_curves(spec, cks);
    }
    if (spec.kind == PlotKind::metric_breakdown) {
        std::vector<EvalReport> reports;
        for (const std::string& m : models)
            reports.push_back(eval_report_from_json(read_text(run / "eval" / (m + ".json"))));
        return render_metric_breakdown(spec, reports);
    }

    ProcessedDataset data = load_dataset((run / "dataset").string());
    std::vector<int> rows;
    for (int i = 0; i < data.count(); ++i) {
        if (!spec.meter_type.empty() &&
            to_string(data.meter_types[static_cast<size_t>(i)]) != spec.meter_type)
            continue;
        if (!spec.building_type.empty() &&
            to_string(data.building_types[static_cast<size_t>(i)]) != spec.building_type)
            continue;
        rows.push_back(i);
    }
    if (rows.empty())
        throw data_error("no meters match filter (" + filter_label(spec) + ")");

    int n_real = spec.kind == PlotKind::weekly_heatmap
                     ? std::min<int>(spec.samples, static_cast<int>(rows.size()))
                     : static_cast<int>(rows.size());
    TensorF real({n_real, kImageWeeks, kImageHoursPerWeek});
    for (int i = 0; i < n_real; ++i)
        for (int w = 0; w < kImageWeeks; ++w)
            for (int h = 0; h < kImageHoursPerWeek; ++h)
                real.at(i, w, h) = data.images.at(rows[static_cast<size_t>(i)], w, h);

    TensorF conds({spec.samples, kConditionDims});
    for (int i = 0; i < spec.samples; ++i)
        for (int c = 0; c < kConditionDims; ++c)
            conds.at(i, c) = data.conditions.at(rows[0], c);

    std::vector<std::pair<std::string, TensorF>> synth;
    for (const std::string& m : models) {
        Checkpoint ck = load_checkpoint((run / "checkpoints" / m).string());
        synth.emplace_back(m, make_sampler(ck)(conds, seed));
    }
    return render_plots(spec, real, synth);
}

} // namespace energen
