#include "lsc/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace lsc {

const std::vector<IndexSpec>& index_definitions() {
    static const std::vector<IndexSpec> defs = {
        {"NDVI", 3, 0},      // (NIR - Red) / (NIR + Red + eps)
        {"NDWI", 3, 1},      // (NIR - Green) / ...
        {"NIRBlue", 3, 2},   //
        {"BlueGreen", 2, 1}, //
        {"BlueRed", 2, 0},   //
        {"GreenRed", 1, 0},  //
    };
    return defs;
}

std::string channel_name(std::size_t c) {
    if (c < 12) return ChannelLayout::raw_names()[c];
    if (c < 18) return index_definitions()[c - 12].name;
    throw KeyError("channel index out of range: " + std::to_string(c));
}

int channel_index(const std::string& name, std::size_t channel_count) {
    for (std::size_t c = 0; c < channel_count; ++c) {
        if (channel_name(c) == name) return static_cast<int>(c);
    }
    throw KeyError("unknown channel name: " + name);
}

ScalerMode scaler_mode_from_string(const std::string& s) {
    if (s == "standard") return ScalerMode::kStandard;
    if (s == "robust") return ScalerMode::kRobust;
    if (s == "none") return ScalerMode::kNone;
    throw ConfigError("unknown scaler mode: " + s);
}

std::string to_string(ScalerMode mode) {
    switch (mode) {
        case ScalerMode::kStandard: return "standard";
        case ScalerMode::kRobust: return "robust";
        case ScalerMode::kNone: return "none";
    }
    return "none";
}

const std::vector<std::string>& statistic_names() {
    static const std::vector<std::string> names = {"min",  "mean", "median", "max",
                                                   "std", "skew", "kurt"};
    return names;
}

PatchStack compute_indices(const PatchStack& stack) {
    if (stack.c != 12) {
        throw ShapeError("compute_indices expects 12 raw channels, got " +
                         std::to_string(stack.c));
    }
    PatchStack out(stack.n, stack.h, stack.w, 18);
    const auto& defs = index_definitions();
    std::size_t pixels = stack.n * stack.h * stack.w;
    for (std::size_t p = 0; p < pixels; ++p) {
        const double* src = &stack.data[p * 12];
        double* dst = &out.data[p * 18];
        std::copy(src, src + 12, dst);
        for (std::size_t k = 0; k < defs.size(); ++k) {
            double a = src[defs[k].band_a];
            double b = src[defs[k].band_b];
            dst[12 + k] = (a - b) / (a + b + kIndexEpsilon);
        }
    }
    return out;
}

double percentile_linear(std::vector<double> values, double q) {
    if (values.empty()) throw PreconditionError("percentile of empty set");
    std::sort(values.begin(), values.end());
    if (values.size() == 1) return values[0];
    double pos = q * static_cast<double>(values.size() - 1);
    std::size_t lo = static_cast<std::size_t>(pos);
    if (lo >= values.size() - 1) return values.back();
    double frac = pos - static_cast<double>(lo);
    return values[lo] * (1.0 - frac) + values[lo + 1] * frac;
}

ScalerParams fit_scaler(const std::vector<const PatchStack*>& stacks, ScalerMode mode) {
    if (stacks.empty()) throw PreconditionError("fit_scaler needs at least one stack");
    if (mode == ScalerMode::kNone) {
        throw PreconditionError("fit_scaler mode must be standard or robust");
    }
    std::size_t channels = stacks[0]->c;
    std::size_t total_pixels = 0;
    for (const PatchStack* s : stacks) {
        if (s->c != channels) throw ShapeError("stacks passed to fit_scaler differ in channels");
        total_pixels += s->n * s->h * s->w;
    }
    if (total_pixels == 0) throw PreconditionError("fit_scaler needs a non-empty population");

    ScalerParams params;
    params.mode = mode;
    params.center.resize(channels);
    params.scale_hi.resize(channels);
    {
        std::ostringstream desc;
        desc << stacks.size() << " stack(s), " << total_pixels << " pixels per channel";
        params.fitted_on = desc.str();
    }

    std::vector<double> pool(total_pixels);
    for (std::size_t ch = 0; ch < channels; ++ch) {
        std::size_t k = 0;
        for (const PatchStack* s : stacks) {
            std::size_t pixels = s->n * s->h * s->w;
            for (std::size_t p = 0; p < pixels; ++p) pool[k++] = s->data[p * channels + ch];
        }
        if (mode == ScalerMode::kStandard) {
            double mean = 0.0;
            for (double v : pool) mean += v;
            mean /= static_cast<double>(pool.size());
            double m2 = 0.0;
            for (double v : pool) m2 += (v - mean) * (v - mean);
            m2 /= static_cast<double>(pool.size());  // population variance, ddof=0
            params.center[ch] = mean;
            params.scale_hi[ch] = std::sqrt(m2);
        } else {
            std::vector<double> sorted(pool);
            std::sort(sorted.begin(), sorted.end());
            auto interp = [&](double q) {
                double pos = q * static_cast<double>(sorted.size() - 1);
                std::size_t lo = static_cast<std::size_t>(pos);
                if (lo >= sorted.size() - 1) return sorted.back();
                double frac = pos - static_cast<double>(lo);
                return sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac;
            };
            params.center[ch] = interp(0.05);
            params.scale_hi[ch] = interp(0.95);
        }
    }
    return params;
}

PatchStack apply_scaler(const PatchStack& stack, const ScalerParams& params) {
    if (params.mode == ScalerMode::kNone) return stack;
    if (stack.c != params.channels()) {
        throw ShapeError("scaler was fitted on " + std::to_string(params.channels()) +
                         " channels, stack has " + std::to_string(stack.c));
    }
    PatchStack out(stack.n, stack.h, stack.w, stack.c);
    std::size_t pixels = stack.n * stack.h * stack.w;
    for (std::size_t ch = 0; ch < stack.c; ++ch) {
        double center = params.center[ch];
        double denom = params.mode == ScalerMode::kStandard
                           ? std::max(params.scale_hi[ch], 1e-12)
                           : std::max(params.scale_hi[ch] - params.center[ch], 1e-12);
        for (std::size_t p = 0; p < pixels; ++p) {
            out.data[p * stack.c + ch] = (stack.data[p * stack.c + ch] - center) / denom;
        }
    }
    return out;
}

FeatureTable compute_patch_statistics(const PatchStack& stack,
                                      const std::vector<std::string>* ids) {
    const auto& stats = statistic_names();
    FeatureTable table;
    table.n_rows = stack.n;
    table.column_names.reserve(stack.c * stats.size());
    for (std::size_t ch = 0; ch < stack.c; ++ch) {
        for (const auto& s : stats) {
            table.column_names.push_back("ch" + std::to_string(ch) + "_" + s);
        }
    }
    table.matrix.resize(stack.n * table.cols());
    table.row_ids.resize(stack.n);

    std::size_t npix = stack.h * stack.w;
    std::vector<double> vals(npix);
    for (std::size_t i = 0; i < stack.n; ++i) {
        table.row_ids[i] = ids ? (*ids)[i] : "r" + std::to_string(i);
        for (std::size_t ch = 0; ch < stack.c; ++ch) {
            for (std::size_t p = 0; p < npix; ++p) {
                vals[p] = stack.data[(i * npix + p) * stack.c + ch];
            }
            double mn = vals[0], mx = vals[0], sum = 0.0;
            for (double v : vals) {
                mn = std::min(mn, v);
                mx = std::max(mx, v);
                sum += v;
            }
            double mean = sum / static_cast<double>(npix);
            double m2 = 0.0, m3 = 0.0, m4 = 0.0;
            for (double v : vals) {
                double d = v - mean;
                double d2 = d * d;
                m2 += d2;
                m3 += d2 * d;
                m4 += d2 * d2;
            }
            m2 /= static_cast<double>(npix);
            m3 /= static_cast<double>(npix);
            m4 /= static_cast<double>(npix);

            std::vector<double> sorted(vals);
            std::sort(sorted.begin(), sorted.end());
            double median;
            if (npix % 2 == 1) {
                median = sorted[npix / 2];
            } else {
                median = 0.5 * (sorted[npix / 2 - 1] + sorted[npix / 2]);
            }

            double sd = 0.0, skew = 0.0, kurt = 0.0;
            if (m2 >= 1e-24) {  // constant channel reports exact zeros
                sd = std::sqrt(m2);
                skew = m3 / std::pow(m2, 1.5);
                kurt = m4 / (m2 * m2) - 3.0;
            }
            double* row = &table.matrix[i * table.cols() + ch * 7];
            row[0] = mn;
            row[1] = mean;
            row[2] = median;
            row[3] = mx;
            row[4] = sd;
            row[5] = skew;
            row[6] = kurt;
        }
    }
    return table;
}

FeatureTable filter_columns(const FeatureTable& table, const std::set<std::string>& drop_stats,
                            const std::set<std::string>& drop_channels) {
    const auto& stats = statistic_names();
    for (const auto& s : drop_stats) {
        if (std::find(stats.begin(), stats.end(), s) == stats.end()) {
            throw KeyError("unknown statistic: " + s);
        }
    }
    std::set<std::size_t> drop_ch_idx;
    for (const auto& name : drop_channels) {
        drop_ch_idx.insert(static_cast<std::size_t>(channel_index(name, 18)));
    }

    // columns are named ch{c}_{stat}; decide per column
    std::vector<std::size_t> keep;
    for (std::size_t j = 0; j < table.cols(); ++j) {
        const std::string& name = table.column_names[j];
        auto us = name.find('_');
        if (name.rfind("ch", 0) != 0 || us == std::string::npos) {
            throw FormatError("unrecognized feature column name: " + name);
        }
        std::size_t ch = static_cast<std::size_t>(std::stoull(name.substr(2, us - 2)));
        std::string stat = name.substr(us + 1);
        if (drop_stats.count(stat) || drop_ch_idx.count(ch)) continue;
        keep.push_back(j);
    }
    // every requested name must have removed something
    for (const auto& s : drop_stats) {
        bool found = false;
        for (const auto& name : table.column_names) {
            if (name.size() > s.size() &&
                name.compare(name.size() - s.size() - 1, s.size() + 1, "_" + s) == 0) {
                found = true;
                break;
            }
        }
        if (!found) throw KeyError("statistic not present in table: " + s);
    }
    for (std::size_t ch : drop_ch_idx) {
        std::string prefix = "ch" + std::to_string(ch) + "_";
        bool found = false;
        for (const auto& name : table.column_names) {
            if (name.rfind(prefix, 0) == 0) {
                found = true;
                break;
            }
        }
        if (!found) throw KeyError("channel not present in table: " + channel_name(ch));
    }

    FeatureTable out;
    out.n_rows = table.n_rows;
    out.row_ids = table.row_ids;
    out.column_names.reserve(keep.size());
    for (std::size_t j : keep) out.column_names.push_back(table.column_names[j]);
    out.matrix.resize(out.n_rows * keep.size());
    for (std::size_t r = 0; r < table.n_rows; ++r) {
        for (std::size_t k = 0; k < keep.size(); ++k) {
            out.matrix[r * keep.size() + k] = table.at(r, keep[k]);
        }
    }
    return out;
}

void write_feature_table(const FeatureTable& table, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "ID";
    for (const auto& name : table.column_names) out << ',' << name;
    out << '\n';
    char buf[40];
    for (std::size_t r = 0; r < table.n_rows; ++r) {
        out << table.row_ids[r];
        for (std::size_t j = 0; j < table.cols(); ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g", table.at(r, j));
            out << ',' << buf;
        }
        out << '\n';
    }
    if (!out) throw IoError("write failed: " + path);
}

FeatureTable load_feature_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open feature table: " + path);
    std::string line;
    if (!std::getline(in, line)) throw FormatError("empty feature table: " + path);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::stringstream header(line);
    std::string cell;
    if (!std::getline(header, cell, ',') || cell != "ID") {
        throw FormatError("feature table header must start with ID");
    }
    FeatureTable table;
    while (std::getline(header, cell, ',')) table.column_names.push_back(cell);
    if (table.column_names.empty()) throw FormatError("feature table has no columns");

    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::stringstream row(line);
        std::getline(row, cell, ',');
        table.row_ids.push_back(cell);
        std::size_t count = 0;
        while (std::getline(row, cell, ',')) {
            table.matrix.push_back(std::stod(cell));
            ++count;
        }
        if (count != table.cols()) {
            throw FormatError("row " + std::to_string(table.row_ids.size()) + " has " +
                              std::to_string(count) + " values, expected " +
                              std::to_string(table.cols()));
        }
    }
    table.n_rows = table.row_ids.size();
    for (double v : table.matrix) {
        if (!std::isfinite(v)) throw DataError("non-finite value in feature table " + path);
    }
    return table;
}

}  // namespace lsc
