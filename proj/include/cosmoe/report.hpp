#pragma once

// Serialization of sweep results: results.csv, slopes.json and log-log SVG
// figures. All output is byte-deterministic for identical inputs.

#include "json.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cosmoe/experiments.hpp"

namespace cosmoe {

// IO and parse failures; line is 1-based, 0 when not applicable.
class IoError : public std::runtime_error {
public:
    IoError(const std::string& what, std::size_t line = 0) : std::runtime_error(what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

inline constexpr const char* kResultsHeader =
    "setting,router,tau,family,n,replicate,trial_seed,loss_name,loss_value,train_mse,wall_ms";

inline std::string format_g17(double v)
{
    if (std::isnan(v))
        return "nan";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string results_to_csv(std::vector<TrialResult> results)
{
    std::sort(results.begin(), results.end(), result_order);
    std::string out = kResultsHeader;
    out += '\n';
    for (const TrialResult& r : results) {
        out += r.setting + ',' + r.router + ',' + format_g17(r.tau) + ',' + r.family + ',' + std::to_string(r.n) + ',' +
               std::to_string(r.replicate) + ',' + std::to_string(r.trial_seed) + ',' + r.loss_name + ',' +
               format_g17(r.loss_value) + ',' + format_g17(r.train_mse) + ',' + format_g17(r.wall_ms) + '\n';
    }
    return out;
}

inline void write_text_file(const std::string& path, const std::string& text)
{
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f)
        throw IoError("cannot open " + path + " for writing");
    f << text;
    if (!f)
        throw IoError("failed writing " + path);
}

inline std::string read_text_file(const std::string& path)
{
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw IoError("cannot read " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

inline void write_results(const std::vector<TrialResult>& results, const std::string& path)
{
    write_text_file(path, results_to_csv(results));
}

namespace detail {

inline double parse_double(const std::string& s, std::size_t line)
{
    if (s == "nan")
        return std::numeric_limits<double>::quiet_NaN();
    char* end = nullptr;
    errno = 0;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE)
        throw IoError("line " + std::to_string(line) + ": bad number '" + s + "'", line);
    return v;
}

inline std::uint64_t parse_u64(const std::string& s, std::size_t line)
{
    char* end = nullptr;
    errno = 0;
    const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
    if (s.empty() || s[0] == '-' || end != s.c_str() + s.size() || errno == ERANGE)
        throw IoError("line " + std::to_string(line) + ": bad integer '" + s + "'", line);
    return v;
}

} // namespace detail

inline std::vector<TrialResult> parse_results_csv(const std::string& text)
{
    std::vector<TrialResult> out;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    if (!std::getline(in, line) || (++lineno, line != kResultsHeader))
        throw IoError("line 1: expected header '" + std::string(kResultsHeader) + "'", 1);
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty())
            continue;
        std::vector<std::string> f;
        std::size_t start = 0;
        for (std::size_t pos; (pos = line.find(',', start)) != std::string::npos; start = pos + 1)
            f.push_back(line.substr(start, pos - start));
        f.push_back(line.substr(start));
        if (f.size() != 11)
            throw IoError("line " + std::to_string(lineno) + ": expected 11 fields, got " + std::to_string(f.size()),
                          lineno);
        TrialResult r;
        r.setting = f[0];
        r.router = f[1];
        r.tau = detail::parse_double(f[2], lineno);
        r.family = f[3];
        r.n = detail::parse_u64(f[4], lineno);
        r.replicate = detail::parse_u64(f[5], lineno);
        r.trial_seed = detail::parse_u64(f[6], lineno);
        r.loss_name = f[7];
        r.loss_value = detail::parse_double(f[8], lineno);
        r.train_mse = detail::parse_double(f[9], lineno);
        r.wall_ms = detail::parse_double(f[10], lineno);
        out.push_back(std::move(r));
    }
    return out;
}

inline std::vector<TrialResult> read_results(const std::string& path) { return parse_results_csv(read_text_file(path)); }

inline std::string slopes_to_json(const std::map<SeriesKey, RateFit>& fits)
{
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [key, fit] : fits) {
        j[key.label()] = {{"slope", fit.slope},
                          {"intercept", fit.intercept},
                          {"r_squared", fit.r_squared},
                          {"slope_stderr", fit.slope_stderr},
                          {"points_used", fit.points_used}};
    }
    return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// SVG

// Legend form of a fitted exponent, two decimals: "O(n^-0.47)".
inline std::string exponent_label(double slope)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", slope);
    std::string s = buf;
    if (s == "-0.00")
        s = "0.00";
    return "O(n^" + s + ")";
}

namespace detail {

inline std::string fmt2(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

inline std::string xml_escape(const std::string& s)
{
    std::string out;
    for (char c : s) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

} // namespace detail

// One log-log panel: per series a polyline with markers, +-2 sd error bars
// and a dashed fitted line, plus a legend with the fitted exponents.
inline std::string render_plot(const std::string& title, const std::map<SeriesKey, std::vector<SeriesPoint>>& series,
                               const std::map<SeriesKey, RateFit>& fits)
{
    constexpr double width = 640, height = 480, left = 80, right = 20, top = 40, bottom = 60;
    static const char* palette[] = {"#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2"};

    struct Usable {
        const SeriesKey* key;
        const std::vector<SeriesPoint>* points;
        const RateFit* fit;
    };
    std::vector<Usable> usable;
    std::vector<std::string> warnings;
    double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
    for (const auto& [key, pts] : series) {
        const std::size_t positive =
            static_cast<std::size_t>(std::count_if(pts.begin(), pts.end(), [](const SeriesPoint& p) { return p.mean > 0.0; }));
        const auto fit = fits.find(key);
        if (positive < 2 || fit == fits.end()) {
            warnings.push_back("skipped " + key.label() + ": fewer than two positive means");
            continue;
        }
        usable.push_back({&key, &pts, &fit->second});
        for (const SeriesPoint& p : pts) {
            if (p.mean <= 0.0)
                continue;
            xmin = std::min(xmin, std::log10(static_cast<double>(p.n)));
            xmax = std::max(xmax, std::log10(static_cast<double>(p.n)));
            const double lo = p.mean - 2.0 * p.stddev;
            ymin = std::min(ymin, std::log10(lo > 0.0 ? lo : p.mean));
            ymax = std::max(ymax, std::log10(p.mean + 2.0 * p.stddev));
        }
    }
    if (usable.empty()) {
        xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    }
    if (xmax - xmin < 1e-9) {
        xmin -= 0.5;
        xmax += 0.5;
    }
    if (ymax - ymin < 1e-9) {
        ymin -= 0.5;
        ymax += 0.5;
    }
    const double ypad = 0.05 * (ymax - ymin);
    ymin -= ypad;
    ymax += ypad;
    const double pw = width - left - right, ph = height - top - bottom;
    auto px = [&](double lx) { return left + (lx - xmin) / (xmax - xmin) * pw; };
    auto py = [&](double ly) { return top + (ymax - std::clamp(ly, ymin, ymax)) / (ymax - ymin) * ph; };
    using detail::fmt2;

    std::ostringstream s;
    s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\" viewBox=\"0 0 "
      << width << ' ' << height << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s << "<text x=\"" << fmt2(width / 2) << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">"
      << detail::xml_escape(title) << "</text>\n";
    s << "<rect class=\"frame\" x=\"" << fmt2(left) << "\" y=\"" << fmt2(top) << "\" width=\"" << fmt2(pw)
      << "\" height=\"" << fmt2(ph) << "\" fill=\"none\" stroke=\"black\"/>\n";

    // decade ticks
    for (int e = static_cast<int>(std::ceil(xmin)); e <= static_cast<int>(std::floor(xmax)); ++e) {
        s << "<line class=\"tick\" x1=\"" << fmt2(px(e)) << "\" y1=\"" << fmt2(top + ph) << "\" x2=\"" << fmt2(px(e))
          << "\" y2=\"" << fmt2(top + ph + 5) << "\" stroke=\"black\"/>\n";
        s << "<text x=\"" << fmt2(px(e)) << "\" y=\"" << fmt2(top + ph + 20) << "\" text-anchor=\"middle\">1e" << e
          << "</text>\n";
    }
    for (int e = static_cast<int>(std::ceil(ymin)); e <= static_cast<int>(std::floor(ymax)); ++e) {
        s << "<line class=\"tick\" x1=\"" << fmt2(left - 5) << "\" y1=\"" << fmt2(py(e)) << "\" x2=\"" << fmt2(left)
          << "\" y2=\"" << fmt2(py(e)) << "\" stroke=\"black\"/>\n";
        s << "<text x=\"" << fmt2(left - 8) << "\" y=\"" << fmt2(py(e) + 4) << "\" text-anchor=\"end\">1e" << e
          << "</text>\n";
    }
    s << "<text x=\"" << fmt2(left + pw / 2) << "\" y=\"" << fmt2(height - 15)
      << "\" text-anchor=\"middle\">sample size n (log scale)</text>\n";
    s << "<text x=\"18\" y=\"" << fmt2(top + ph / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
      << fmt2(top + ph / 2) << ")\">mean Voronoi loss (log scale)</text>\n";

    for (std::size_t si = 0; si < usable.size(); ++si) {
        const Usable& u = usable[si];
        const char* color = palette[si % std::size(palette)];
        s << "<polyline class=\"series\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
        bool first = true;
        for (const SeriesPoint& p : *u.points) {
            if (p.mean <= 0.0)
                continue;
            s << (first ? "" : " ") << fmt2(px(std::log10(static_cast<double>(p.n)))) << ','
              << fmt2(py(std::log10(p.mean)));
            first = false;
        }
        s << "\"/>\n";
        for (const SeriesPoint& p : *u.points) {
            if (p.mean <= 0.0)
                continue;
            const double x = px(std::log10(static_cast<double>(p.n)));
            const double lo = p.mean - 2.0 * p.stddev;
            const double y_lo = py(lo > 0.0 ? std::log10(lo) : ymin);
            const double y_hi = py(std::log10(p.mean + 2.0 * p.stddev));
            s << "<line class=\"errorbar\" x1=\"" << fmt2(x) << "\" y1=\"" << fmt2(y_lo) << "\" x2=\"" << fmt2(x)
              << "\" y2=\"" << fmt2(y_hi) << "\" stroke=\"" << color << "\"/>\n";
            s << "<circle cx=\"" << fmt2(x) << "\" cy=\"" << fmt2(py(std::log10(p.mean))) << "\" r=\"3.5\" fill=\""
              << color << "\"/>\n";
        }
        // fitted line log10(y) = (intercept + slope ln n) / ln 10
        const double x0 = xmin, x1 = xmax;
        auto fit_y = [&](double lx) { return (u.fit->intercept + u.fit->slope * lx * std::log(10.0)) / std::log(10.0); };
        s << "<line class=\"fit\" x1=\"" << fmt2(px(x0)) << "\" y1=\"" << fmt2(py(fit_y(x0))) << "\" x2=\""
          << fmt2(px(x1)) << "\" y2=\"" << fmt2(py(fit_y(x1))) << "\" stroke=\"#d62728\" stroke-dasharray=\"6,3\"/>\n";
        const double ly = top + 18 + 18 * static_cast<double>(si);
        s << "<rect x=\"" << fmt2(left + pw - 210) << "\" y=\"" << fmt2(ly - 9) << "\" width=\"10\" height=\"10\" fill=\""
          << color << "\"/>\n";
        s << "<text class=\"legend\" x=\"" << fmt2(left + pw - 195) << "\" y=\"" << fmt2(ly) << "\">"
          << detail::xml_escape(u.key->router + " " + u.key->loss_name + ": " + exponent_label(u.fit->slope))
          << "</text>\n";
    }
    for (std::size_t w = 0; w < warnings.size(); ++w)
        s << "<text class=\"warning\" x=\"" << fmt2(left + 10) << "\" y=\"" << fmt2(top + ph - 10 - 16 * static_cast<double>(w))
          << "\" fill=\"#b00\">" << detail::xml_escape(warnings[w]) << "</text>\n";
    s << "</svg>\n";
    return s.str();
}

} // namespace cosmoe
