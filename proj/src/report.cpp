#include "emma/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "emma/config.hpp"
#include "emma/errors.hpp"

namespace emma {
namespace {

constexpr int kWidth = 800;
constexpr int kHeight = 500;
constexpr double kLeft = 70.0, kRight = 780.0, kTop = 60.0, kBottom = 440.0;

const char* kVisualFill = "#4878a8";
const char* kTextFill = "#c44e52";
const char* kRawFill = "#999999";
const char* kShuffleFill = "#dddddd";
const char* kAxis = "#333333";

std::string num(double v) { return format_number(v); }

// Smallest 1/2/5 * 10^k value that is >= v; the top of a y axis.
double nice_ceiling(double v) {
    if (v <= 0.0) return 1.0;
    const double mag = std::pow(10.0, std::floor(std::log10(v)));
    for (double step : {1.0, 2.0, 5.0, 10.0}) {
        if (v <= step * mag * (1.0 + 1e-12)) return step * mag;
    }
    return 10.0 * mag;
}

class Svg {
public:
    Svg(const std::string& title) {
        os_ << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
            << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << kWidth
            << "\" height=\"" << kHeight << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight
            << "\">\n"
            << "<rect x=\"0\" y=\"0\" width=\"" << kWidth << "\" height=\"" << kHeight
            << "\" fill=\"#ffffff\"/>\n";
        text(kWidth / 2.0, 30.0, title, "middle", 18);
    }

    void rect(double x, double y, double w, double h, const std::string& fill) {
        os_ << "<rect x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"" << num(w)
            << "\" height=\"" << num(h) << "\" fill=\"" << fill << "\"/>\n";
    }

    void line(double x1, double y1, double x2, double y2, const std::string& stroke,
              double width = 1.0, bool dashed = false) {
        os_ << "<line x1=\"" << num(x1) << "\" y1=\"" << num(y1) << "\" x2=\"" << num(x2)
            << "\" y2=\"" << num(y2) << "\" stroke=\"" << stroke << "\" stroke-width=\""
            << num(width) << '"';
        if (dashed) os_ << " stroke-dasharray=\"6 4\"";
        os_ << "/>\n";
    }

    void circle(double cx, double cy, double r, const std::string& fill) {
        os_ << "<circle cx=\"" << num(cx) << "\" cy=\"" << num(cy) << "\" r=\"" << num(r)
            << "\" fill=\"" << fill << "\"/>\n";
    }

    void text(double x, double y, const std::string& content, const std::string& anchor,
              int size, bool vertical = false) {
        os_ << "<text x=\"" << num(x) << "\" y=\"" << num(y) << "\" font-family=\"sans-serif\""
            << " font-size=\"" << size << "\" fill=\"" << kAxis << "\" text-anchor=\"" << anchor
            << '"';
        if (vertical) os_ << " transform=\"rotate(-90 " << num(x) << ' ' << num(y) << ")\"";
        os_ << '>' << content << "</text>\n";
    }

    // Left and bottom axis lines, five y ticks from 0 to y_max, and captions.
    void axes(double y_max, const std::string& x_label, const std::string& y_label) {
        line(kLeft, kTop, kLeft, kBottom, kAxis, 1.5);
        line(kLeft, kBottom, kRight, kBottom, kAxis, 1.5);
        for (int t = 0; t <= 5; ++t) {
            const double value = y_max * t / 5.0;
            const double y = kBottom - (kBottom - kTop) * t / 5.0;
            line(kLeft - 5.0, y, kLeft, y, kAxis);
            text(kLeft - 9.0, y + 4.0, num(value), "end", 12);
        }
        text((kLeft + kRight) / 2.0, kHeight - 15.0, x_label, "middle", 14);
        text(20.0, (kTop + kBottom) / 2.0, y_label, "middle", 14, true);
    }

    std::string finish() {
        os_ << "</svg>\n";
        return os_.str();
    }

private:
    std::ostringstream os_;
};

double y_at(double value, double y_max) {
    return kBottom - (kBottom - kTop) * (value / y_max);
}

}  // namespace

std::string render_attribution_figure(const std::vector<AttributionRow>& rows) {
    if (rows.empty()) throw InputError("attribution figure needs at least one row");
    double peak = 0.0;
    for (const auto& r : rows) peak = std::max(peak, r.l1_norm);
    const double y_max = nice_ceiling(peak);

    Svg svg("Mixing weight mass per input token");
    svg.axes(y_max, "input token index (visual, then instruction)", "row l1 norm");

    const double span = kRight - kLeft;
    const double slot = span / static_cast<double>(rows.size());
    const double bar = slot * 0.8;
    int first_text = -1;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        if (r.is_text && first_text < 0) first_text = static_cast<int>(i);
        const double x = kLeft + slot * static_cast<double>(i) + (slot - bar) / 2.0;
        const double y = y_at(r.l1_norm, y_max);
        svg.rect(x, y, bar, kBottom - y, r.is_text ? kTextFill : kVisualFill);
        if (rows.size() <= 40 && i % 4 == 0)
            svg.text(x + bar / 2.0, kBottom + 16.0, std::to_string(r.token_index), "middle", 11);
    }
    if (first_text > 0) {
        const double x = kLeft + slot * first_text;
        svg.line(x, kTop, x, kBottom, kAxis, 1.0, true);
    }
    svg.rect(kRight - 190.0, kTop + 6.0, 12.0, 12.0, kVisualFill);
    svg.text(kRight - 172.0, kTop + 16.0, "visual tokens", "start", 12);
    svg.rect(kRight - 190.0, kTop + 26.0, 12.0, 12.0, kTextFill);
    svg.text(kRight - 172.0, kTop + 36.0, "instruction tokens", "start", 12);
    return svg.finish();
}

std::string render_mi_figure(const MiComparison& mi) {
    struct Bar {
        const char* label;
        double value;
        const char* fill;
        const std::vector<double>* chunks;
    };
    const Bar bars[] = {
        {"raw", mi.raw.mi_nats, kRawFill, &mi.raw_chunks},
        {"adapted", mi.adapted.mi_nats, kVisualFill, &mi.adapted_chunks},
        {"raw shuffled", mi.raw_shuffled.mi_nats, kShuffleFill, nullptr},
        {"adapted shuffled", mi.adapted_shuffled.mi_nats, kShuffleFill, nullptr},
    };

    double peak = 0.0;
    for (const auto& b : bars) {
        peak = std::max(peak, b.value);
        if (b.chunks)
            for (double c : *b.chunks) peak = std::max(peak, c);
    }
    const double y_max = nice_ceiling(std::max(peak, 1e-3));

    Svg svg("Mutual information with the response");
    svg.axes(y_max, "representation", "mutual information (nats)");

    const double span = kRight - kLeft;
    const double slot = span / 4.0;
    for (int i = 0; i < 4; ++i) {
        const Bar& b = bars[i];
        const double x0 = kLeft + slot * i;
        const double bar_w = slot * 0.5;
        const double x = x0 + (slot - bar_w) / 2.0;
        const double y = y_at(b.value, y_max);
        svg.rect(x, y, bar_w, kBottom - y, b.fill);
        svg.text(x0 + slot / 2.0, kBottom + 18.0, b.label, "middle", 13);
        svg.text(x0 + slot / 2.0, y - 6.0, num(b.value), "middle", 12);
        if (b.chunks && !b.chunks->empty()) {
            // Per-chunk estimates spread across the bar width.
            const auto& chunks = *b.chunks;
            for (std::size_t c = 0; c < chunks.size(); ++c) {
                const double cx =
                    x + bar_w * (static_cast<double>(c) + 0.5) / static_cast<double>(chunks.size());
                svg.circle(cx, y_at(chunks[c], y_max), 3.0, kAxis);
            }
        }
    }
    svg.text(kRight - 10.0, kTop + 6.0, "dots: per-chunk estimates", "end", 12);
    return svg.finish();
}

std::string render_distance_figure(const std::vector<PairDistance>& rows) {
    if (rows.empty()) throw InputError("distance figure needs at least one pair");
    double peak = 0.0;
    for (const auto& r : rows) peak = std::max({peak, r.pre_l2, r.post_l2});
    const double max_v = nice_ceiling(std::max(peak, 1e-6));

    Svg svg("Confusable-pair separation before vs after adaptation");
    svg.axes(max_v, "distance before adaptation", "distance after adaptation");
    // x ticks reuse the y scale since both axes measure the same quantity.
    for (int t = 0; t <= 5; ++t) {
        const double value = max_v * t / 5.0;
        const double x = kLeft + (kRight - kLeft) * t / 5.0;
        svg.line(x, kBottom, x, kBottom + 5.0, kAxis);
        svg.text(x, kBottom + 18.0, num(value), "middle", 12);
    }
    svg.line(kLeft, kBottom, kRight, kTop, kAxis, 1.0, true);  // y = x reference

    for (const auto& r : rows) {
        const double x = kLeft + (kRight - kLeft) * (r.pre_l2 / max_v);
        const double y = y_at(r.post_l2, max_v);
        svg.circle(x, y, 4.0, kVisualFill);
    }
    svg.text(kRight - 10.0, kTop + 6.0, "dashed: unchanged separation", "end", 12);
    return svg.finish();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw IoError("failed while writing '" + path + "'");
}

}  // namespace emma
