#include "lsc/dataio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace lsc {

static_assert(std::endian::native == std::endian::little,
              "patch container I/O assumes a little-endian host");

// ---------------------------------------------------------------------------
// channel layout

const std::vector<std::string>& ChannelLayout::raw_names() {
    static const std::vector<std::string> names = {
        "Red",      "Green",    "Blue",       "NIR",
        "DescVV",   "DescVH",   "DescDiffVV", "DescDiffVH",
        "AscVV",    "AscVH",    "AscDiffVV",  "AscDiffVH",
    };
    return names;
}

int ChannelLayout::index_of(const std::string& name) {
    const auto& names = raw_names();
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (names[i] == name) return static_cast<int>(i);
    }
    throw KeyError("unknown channel name: " + name);
}

const std::vector<int>& ChannelLayout::group(const std::string& modality) {
    static const std::map<std::string, std::vector<int>> groups = {
        {"RGBN", {0, 1, 2, 3}},
        {"SAR", {4, 5, 8, 9}},
        {"SARdiff", {6, 7, 10, 11}},
        {"Indices", {12, 13, 14, 15, 16, 17}},
    };
    auto it = groups.find(modality);
    if (it == groups.end()) throw KeyError("unknown modality group: " + modality);
    return it->second;
}

const std::vector<std::string>& ChannelLayout::modality_names() {
    static const std::vector<std::string> names = {"RGBN", "SAR", "SARdiff", "Indices"};
    return names;
}

std::size_t LabelTable::positives() const {
    std::size_t k = 0;
    for (int v : labels) k += static_cast<std::size_t>(v);
    return k;
}

// ---------------------------------------------------------------------------
// .npy container

namespace {

constexpr char kMagic[6] = {'\x93', 'N', 'U', 'M', 'P', 'Y'};

void validate_stack_shape(std::size_t n, std::size_t h, std::size_t w, std::size_t c) {
    if (n < 1) {
        throw ShapeError("patch stack must contain at least one patch, got N=0");
    }
    if (h != 64 || w != 64) {
        throw ShapeError("patch shape must be 64x64, got " + std::to_string(h) + "x" +
                         std::to_string(w) + " (expected 64)");
    }
    if (c != ChannelLayout::kRawChannels && c != ChannelLayout::kEnrichedChannels) {
        throw ShapeError("channel count must be 12 or 18, got " + std::to_string(c));
    }
}

std::string dict_value(const std::string& header, const std::string& key) {
    auto pos = header.find("'" + key + "'");
    if (pos == std::string::npos) {
        throw FormatError("npy header missing key '" + key + "'");
    }
    pos = header.find(':', pos);
    if (pos == std::string::npos) throw FormatError("npy header malformed near '" + key + "'");
    ++pos;
    while (pos < header.size() && header[pos] == ' ') ++pos;
    std::size_t end = pos;
    if (pos < header.size() && header[pos] == '(') {
        end = header.find(')', pos);
        if (end == std::string::npos) throw FormatError("npy header has unterminated shape tuple");
        ++end;
    } else {
        while (end < header.size() && header[end] != ',' && header[end] != '}') ++end;
    }
    return header.substr(pos, end - pos);
}

std::vector<std::size_t> parse_shape(const std::string& tuple) {
    std::vector<std::size_t> dims;
    std::string body = tuple;
    if (body.size() < 2 || body.front() != '(' || body.back() != ')') {
        throw FormatError("npy shape is not a tuple: " + tuple);
    }
    body = body.substr(1, body.size() - 2);
    std::stringstream ss(body);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::string trimmed;
        for (char ch : item) {
            if (!std::isspace(static_cast<unsigned char>(ch))) trimmed += ch;
        }
        if (trimmed.empty()) continue;  // trailing comma in 1-tuples
        for (char ch : trimmed) {
            if (!std::isdigit(static_cast<unsigned char>(ch))) {
                throw FormatError("npy shape has non-integer entry: " + item);
            }
        }
        dims.push_back(static_cast<std::size_t>(std::stoull(trimmed)));
    }
    return dims;
}

}  // namespace

PatchStack load_patch_stack(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open patch stack: " + path);

    char magic[6];
    in.read(magic, 6);
    if (!in || std::memcmp(magic, kMagic, 6) != 0) {
        throw FormatError("not an npy file (bad magic): " + path);
    }
    unsigned char version[2];
    in.read(reinterpret_cast<char*>(version), 2);
    if (!in || version[0] != 1 || version[1] != 0) {
        throw FormatError("unsupported npy version in " + path);
    }
    unsigned char lenbuf[2];
    in.read(reinterpret_cast<char*>(lenbuf), 2);
    if (!in) throw FormatError("truncated npy header in " + path);
    std::size_t header_len = static_cast<std::size_t>(lenbuf[0]) |
                             (static_cast<std::size_t>(lenbuf[1]) << 8);
    std::string header(header_len, '\0');
    in.read(header.data(), static_cast<std::streamsize>(header_len));
    if (!in) throw FormatError("truncated npy header in " + path);

    std::string descr = dict_value(header, "descr");
    if (descr.find("'<f4'") == std::string::npos && descr.find("\"<f4\"") == std::string::npos) {
        throw FormatError("npy dtype must be '<f4', got " + descr);
    }
    std::string fortran = dict_value(header, "fortran_order");
    if (fortran.find("False") == std::string::npos) {
        throw FormatError("npy must be C-order (fortran_order False)");
    }
    std::vector<std::size_t> dims = parse_shape(dict_value(header, "shape"));
    if (dims.size() != 4) {
        throw ShapeError("patch stack must be rank 4 (N,64,64,C), got rank " +
                         std::to_string(dims.size()));
    }
    validate_stack_shape(dims[0], dims[1], dims[2], dims[3]);

    PatchStack stack(dims[0], dims[1], dims[2], dims[3]);
    std::vector<float> raw(stack.data.size());
    in.read(reinterpret_cast<char*>(raw.data()),
            static_cast<std::streamsize>(raw.size() * sizeof(float)));
    if (!in || in.gcount() != static_cast<std::streamsize>(raw.size() * sizeof(float))) {
        throw FormatError("npy payload shorter than declared shape in " + path);
    }
    for (std::size_t i = 0; i < raw.size(); ++i) stack.data[i] = static_cast<double>(raw[i]);
    for (std::size_t i = 0; i < stack.data.size(); ++i) {
        if (!std::isfinite(stack.data[i])) {
            std::size_t c = stack.c, w = stack.w, h = stack.h;
            std::size_t ch = i % c, x = (i / c) % w, y = (i / (c * w)) % h, p = i / (c * w * h);
            throw DataError("non-finite value at flat index " + std::to_string(i) + " (patch " +
                            std::to_string(p) + ", pixel " + std::to_string(y) + "," +
                            std::to_string(x) + ", channel " + std::to_string(ch) + ")");
        }
    }
    return stack;
}

void write_patch_stack(const PatchStack& stack, const std::string& path) {
    if (stack.n == 0) throw PreconditionError("refusing to write an empty patch stack");
    validate_stack_shape(stack.n, stack.h, stack.w, stack.c);

    std::ostringstream dict;
    dict << "{'descr': '<f4', 'fortran_order': False, 'shape': (" << stack.n << ", " << stack.h
         << ", " << stack.w << ", " << stack.c << "), }";
    std::string header = dict.str();
    std::size_t unpadded = 10 + header.size() + 1;  // magic+version+len, then '\n'
    std::size_t padded = (unpadded + 63) / 64 * 64;
    header.append(padded - unpadded, ' ');
    header.push_back('\n');

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.write(kMagic, 6);
    unsigned char version[2] = {1, 0};
    out.write(reinterpret_cast<const char*>(version), 2);
    unsigned char lenbuf[2] = {static_cast<unsigned char>(header.size() & 0xff),
                               static_cast<unsigned char>((header.size() >> 8) & 0xff)};
    out.write(reinterpret_cast<const char*>(lenbuf), 2);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    std::vector<float> raw(stack.data.size());
    for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = static_cast<float>(stack.data[i]);
    out.write(reinterpret_cast<const char*>(raw.data()),
              static_cast<std::streamsize>(raw.size() * sizeof(float)));
    if (!out) throw IoError("write failed: " + path);
}

// ---------------------------------------------------------------------------
// label and prediction tables

LabelTable load_labels(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open labels: " + path);
    std::string line;
    if (!std::getline(in, line)) throw FormatError("empty label file: " + path);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "ID,label") {
        throw FormatError("label file header must be exactly \"ID,label\", got \"" + line + "\"");
    }
    LabelTable table;
    std::set<std::string> seen;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto comma = line.find(',');
        if (comma == std::string::npos) {
            throw FormatError("row " + std::to_string(row) + " has no comma: " + line);
        }
        std::string id = line.substr(0, comma);
        std::string label = line.substr(comma + 1);
        if (!seen.insert(id).second) {
            throw DataError("duplicate ID \"" + id + "\" at row " + std::to_string(row));
        }
        if (label != "0" && label != "1") {
            throw DataError("label must be 0 or 1, got \"" + label + "\" at row " +
                            std::to_string(row));
        }
        table.ids.push_back(std::move(id));
        table.labels.push_back(label == "1" ? 1 : 0);
    }
    if (table.ids.empty()) throw DataError("label file has no data rows: " + path);
    return table;
}

void write_labels(const LabelTable& table, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "ID,label\n";
    for (std::size_t i = 0; i < table.size(); ++i) {
        out << table.ids[i] << ',' << table.labels[i] << '\n';
    }
    if (!out) throw IoError("write failed: " + path);
}

void save_predictions(const std::vector<std::string>& ids,
                      const std::vector<double>& probabilities, double threshold,
                      const std::string& path) {
    if (ids.size() != probabilities.size()) {
        throw ShapeError("ids and probabilities must be aligned");
    }
    for (std::size_t i = 0; i < probabilities.size(); ++i) {
        if (!(probabilities[i] >= 0.0 && probabilities[i] <= 1.0)) {
            throw ValueError("probability out of [0,1] at row " + std::to_string(i) + ": " +
                             std::to_string(probabilities[i]));
        }
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "ID,probability,label\n";
    char buf[64];
    for (std::size_t i = 0; i < ids.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g", probabilities[i]);
        out << ids[i] << ',' << buf << ',' << (probabilities[i] >= threshold ? 1 : 0) << '\n';
    }
    if (!out) throw IoError("write failed: " + path);
}

// ---------------------------------------------------------------------------
// synthetic data

std::size_t round_half_up_count(std::size_t n, double ratio) {
    return static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratio + 0.5));
}

std::vector<double> ellipse_mask(const PlantedEllipse& e, std::size_t h, std::size_t w) {
    std::vector<double> mask(h * w, 0.0);
    double ca = std::cos(e.angle), sa = std::sin(e.angle);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            double dy = static_cast<double>(y) - e.cy;
            double dx = static_cast<double>(x) - e.cx;
            double u = (ca * dx + sa * dy) / e.rx;
            double v = (-sa * dx + ca * dy) / e.ry;
            double r2 = u * u + v * v;
            if (r2 < 1.0) {
                // soft edge, full strength in the core
                mask[y * w + x] = std::min(1.0, 1.5 * (1.0 - r2));
            }
        }
    }
    return mask;
}

namespace {

// Smooth correlated field: coarse gaussian grid bilinearly upsampled.
std::vector<double> smooth_field(Rng& rng, std::size_t h, std::size_t w, std::size_t grid) {
    std::vector<double> coarse((grid + 1) * (grid + 1));
    for (auto& v : coarse) v = rng.normal();
    std::vector<double> field(h * w);
    for (std::size_t y = 0; y < h; ++y) {
        double gy = static_cast<double>(y) / static_cast<double>(h - 1) * grid;
        std::size_t y0 = std::min<std::size_t>(static_cast<std::size_t>(gy), grid - 1);
        double fy = gy - static_cast<double>(y0);
        for (std::size_t x = 0; x < w; ++x) {
            double gx = static_cast<double>(x) / static_cast<double>(w - 1) * grid;
            std::size_t x0 = std::min<std::size_t>(static_cast<std::size_t>(gx), grid - 1);
            double fx = gx - static_cast<double>(x0);
            double v00 = coarse[y0 * (grid + 1) + x0];
            double v01 = coarse[y0 * (grid + 1) + x0 + 1];
            double v10 = coarse[(y0 + 1) * (grid + 1) + x0];
            double v11 = coarse[(y0 + 1) * (grid + 1) + x0 + 1];
            field[y * w + x] = (1 - fy) * ((1 - fx) * v00 + fx * v01) +
                               fy * ((1 - fx) * v10 + fx * v11);
        }
    }
    return field;
}

// Base levels roughly mimic vegetated reflectance and backscatter scales.
constexpr double kBaseLevel[12] = {0.25, 0.30, 0.28, 0.55,   // R G B NIR
                                   0.30, 0.22, 0.00, 0.00,   // Desc VV VH DiffVV DiffVH
                                   0.32, 0.24, 0.00, 0.00};  // Asc  VV VH DiffVV DiffVH

}  // namespace

std::pair<PatchStack, LabelTable> generate_synthetic_dataset(const SyntheticSpec& spec) {
    return generate_synthetic_dataset(spec, nullptr);
}

std::pair<PatchStack, LabelTable> generate_synthetic_dataset(const SyntheticSpec& spec,
                                                             SyntheticTruth* truth) {
    if (spec.n < 2) throw PreconditionError("synthetic dataset needs n >= 2");
    if (spec.pos_ratio < 0.0 || spec.pos_ratio > 1.0) {
        throw PreconditionError("pos_ratio must lie in [0,1]");
    }
    if (spec.difficulty < 0.0 || spec.difficulty > 1.0) {
        throw PreconditionError("difficulty must lie in [0,1]");
    }
    std::size_t n_pos = round_half_up_count(spec.n, spec.pos_ratio);
    if (n_pos < 1) throw PreconditionError("pos_ratio too small: zero positive samples");

    const std::size_t H = 64, W = 64, C = ChannelLayout::kRawChannels;
    Rng rng(spec.seed);

    std::vector<int> labels(spec.n, 0);
    for (std::size_t i = 0; i < n_pos; ++i) labels[i] = 1;
    rng.shuffle(labels);

    PatchStack stack(spec.n, H, W, C);
    LabelTable table;
    if (truth) truth->ellipses.clear();

    double noise_sigma = 0.01 + 0.25 * spec.difficulty;

    for (std::size_t i = 0; i < spec.n; ++i) {
        // per-sample channel offsets decorrelate patches
        std::array<double, 12> offset{};
        for (auto& o : offset) o = rng.normal(0.0, 0.03);

        std::vector<std::vector<double>> fields(C);
        for (std::size_t ch = 0; ch < C; ++ch) fields[ch] = smooth_field(rng, H, W, 8);

        // every sample draws an ellipse; only positives plant the signature
        PlantedEllipse e;
        e.cy = rng.uniform(16.0, 48.0);
        e.cx = rng.uniform(16.0, 48.0);
        e.ry = rng.uniform(8.0, 18.0);
        e.rx = rng.uniform(8.0, 18.0);
        e.angle = rng.uniform(0.0, 3.141592653589793);
        // a quarter of the positives carry a weak optical trace but a
        // strong SAR-difference one, so the modalities stay complementary
        bool optical_weak = rng.bernoulli(0.25);
        e.optical_amp = optical_weak ? rng.uniform(0.15, 0.3) : rng.uniform(0.7, 1.0);
        e.sar_amp = (optical_weak ? 2.0 : 1.0) * rng.uniform(0.7, 1.3);
        if (truth) truth->ellipses.push_back(e);

        std::vector<double> mask;
        if (labels[i] == 1) mask = ellipse_mask(e, H, W);

        for (std::size_t y = 0; y < H; ++y) {
            for (std::size_t x = 0; x < W; ++x) {
                double m = labels[i] == 1 ? mask[y * W + x] : 0.0;
                for (std::size_t ch = 0; ch < C; ++ch) {
                    double v = kBaseLevel[ch] + offset[ch] + 0.05 * fields[ch][y * W + x];
                    if (m > 0.0) {
                        if (ch == 3) v -= e.optical_amp * m * 0.35;  // NIR drop
                        if (ch == 0) v += e.optical_amp * m * 0.12;  // Red rise
                        if (ch == 6 || ch == 7 || ch == 10 || ch == 11) {
                            // variance-coded disturbance in the change bands
                            v += e.sar_amp * m * 0.25 * rng.normal();
                        }
                    }
                    v += noise_sigma * rng.normal();
                    if (ch < 4) v = std::max(v, 0.0);  // reflectance stays non-negative
                    // round through f4 so generated stacks survive the container
                    stack.at(i, y, x, ch) = static_cast<double>(static_cast<float>(v));
                }
            }
        }

        char id[16];
        std::snprintf(id, sizeof(id), "s%06zu", i);
        table.ids.emplace_back(id);
        table.labels.push_back(labels[i]);
    }
    return {std::move(stack), std::move(table)};
}

}  // namespace lsc
