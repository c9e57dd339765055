#include "bal/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>
#include <tuple>

#include "bal/binio.hpp"
#include "bal/rng.hpp"

namespace bal {

using nlohmann::json;

std::string_view to_string(DataErrorCode code) {
    switch (code) {
        case DataErrorCode::io: return "io";
        case DataErrorCode::bad_manifest: return "bad_manifest";
        case DataErrorCode::unresolvable_column: return "unresolvable_column";
        case DataErrorCode::no_valid_rows: return "no_valid_rows";
        case DataErrorCode::timestamp_disorder: return "timestamp_disorder";
        case DataErrorCode::preprocessing: return "preprocessing";
    }
    return "?";
}

// ---------------------------------------------------------------- manifest

void to_json(json& j, const SyntheticParams& p) {
    j = json{{"num_users", p.num_users},   {"num_classes", p.num_classes}, {"windows_per_class", p.windows_per_class},
             {"rate_hz", p.rate_hz},       {"window_seconds", p.window_seconds}, {"seed", p.seed},
             {"noise", p.noise},           {"user_variation", p.user_variation},
             {"window_jitter", p.window_jitter}};
}

void from_json(const json& j, SyntheticParams& p) {
    SyntheticParams d;
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) j.at(key).get_to(field);
    };
    get("num_users", d.num_users);
    get("num_classes", d.num_classes);
    get("windows_per_class", d.windows_per_class);
    get("rate_hz", d.rate_hz);
    get("window_seconds", d.window_seconds);
    get("seed", d.seed);
    get("noise", d.noise);
    get("user_variation", d.user_variation);
    get("window_jitter", d.window_jitter);
    p = d;
}

namespace {

ColumnRef column_from_json(const json& j) {
    ColumnRef c;
    if (j.is_number_unsigned() || j.is_number_integer()) c.index = j.get<std::size_t>();
    else c.name = j.get<std::string>();
    return c;
}

json column_to_json(const ColumnRef& c) { return c.index ? json(*c.index) : json(c.name); }

std::vector<std::string> default_class_names(std::size_t n) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back("class" + std::to_string(i));
    return out;
}

}  // namespace

void DatasetManifest::validate() const {
    auto bad = [](const std::string& m) { throw DataError(DataErrorCode::bad_manifest, m); };
    if (classes.empty()) bad("class list is empty");
    for (std::size_t i = 0; i < classes.size(); ++i)
        for (std::size_t k = i + 1; k < classes.size(); ++k)
            if (classes[i] == classes[k]) bad("duplicate class '" + classes[i] + "'");
    if (!(target_rate_hz > 0.0)) bad("target_rate_hz must be positive");
    if (!(window_seconds > 0.0)) bad("window_seconds must be positive");
    if (synthetic) {
        const auto& p = *synthetic;
        if (p.num_users < 1 || p.num_classes < 1 || p.windows_per_class < 1)
            bad("synthetic counts must be >= 1");
        if (p.num_classes != classes.size()) bad("synthetic num_classes does not match the class list");
        if (!(p.rate_hz > 0.0)) bad("synthetic rate_hz must be positive");
        return;
    }
    if (files.empty()) bad("no input files");
    if (!(timestamp_scale > 0.0)) bad("timestamp_scale must be positive");
}

double DatasetManifest::rate_for(const std::string& device) const {
    if (synthetic) return synthetic->rate_hz;
    auto it = device_rates.find(device);
    return it != device_rates.end() ? it->second : default_rate_hz;
}

DatasetManifest DatasetManifest::from_json(const json& j, const std::filesystem::path& base_dir) {
    DatasetManifest m;
    m.base_dir = base_dir;
    try {
        if (j.contains("dataset_id")) m.dataset_id = j.at("dataset_id").get<std::string>();
        if (j.contains("files")) m.files = j.at("files").get<std::vector<std::string>>();
        if (j.contains("delimiter")) {
            const auto d = j.at("delimiter").get<std::string>();
            if (d.size() != 1) throw DataError(DataErrorCode::bad_manifest, "delimiter must be one character");
            m.delimiter = d[0];
        }
        if (j.contains("has_header")) m.has_header = j.at("has_header").get<bool>();
        if (j.contains("columns")) {
            const auto& c = j.at("columns");
            auto col = [&](const char* key, ColumnRef& ref) {
                if (c.contains(key)) ref = column_from_json(c.at(key));
            };
            col("timestamp", m.columns.timestamp);
            col("x", m.columns.x);
            col("y", m.columns.y);
            col("z", m.columns.z);
            col("user", m.columns.user);
            col("device", m.columns.device);
            col("label", m.columns.label);
        }
        if (j.contains("timestamp_scale")) m.timestamp_scale = j.at("timestamp_scale").get<double>();
        if (j.contains("device_rates")) m.device_rates = j.at("device_rates").get<std::map<std::string, double>>();
        if (j.contains("default_rate_hz")) m.default_rate_hz = j.at("default_rate_hz").get<double>();
        if (j.contains("target_rate_hz")) m.target_rate_hz = j.at("target_rate_hz").get<double>();
        if (j.contains("window_seconds")) m.window_seconds = j.at("window_seconds").get<double>();
        if (j.contains("classes")) m.classes = j.at("classes").get<std::vector<std::string>>();
        if (j.contains("synthetic") && !j.at("synthetic").is_null()) {
            m.synthetic = j.at("synthetic").get<SyntheticParams>();
            if (!j.contains("window_seconds")) m.window_seconds = m.synthetic->window_seconds;
            if (!j.contains("target_rate_hz")) m.target_rate_hz = m.synthetic->rate_hz;
            if (m.classes.empty()) m.classes = default_class_names(m.synthetic->num_classes);
        }
    } catch (const json::exception& e) {
        throw DataError(DataErrorCode::bad_manifest, e.what());
    }
    if (m.columns.timestamp.name.empty() && !m.columns.timestamp.index) m.columns = {
        {"timestamp", {}}, {"x", {}}, {"y", {}}, {"z", {}}, {"user", {}}, {"device", {}}, {"label", {}}};
    m.validate();
    return m;
}

DatasetManifest DatasetManifest::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError(DataErrorCode::io, "cannot open manifest " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DataError(DataErrorCode::bad_manifest, path.string() + ": " + e.what());
    }
    return from_json(j, path.parent_path());
}

json DatasetManifest::to_json() const {
    json j{{"dataset_id", dataset_id},
           {"files", files},
           {"delimiter", std::string(1, delimiter)},
           {"has_header", has_header},
           {"columns",
            {{"timestamp", column_to_json(columns.timestamp)},
             {"x", column_to_json(columns.x)},
             {"y", column_to_json(columns.y)},
             {"z", column_to_json(columns.z)},
             {"user", column_to_json(columns.user)},
             {"device", column_to_json(columns.device)},
             {"label", column_to_json(columns.label)}}},
           {"timestamp_scale", timestamp_scale},
           {"device_rates", device_rates},
           {"default_rate_hz", default_rate_hz},
           {"target_rate_hz", target_rate_hz},
           {"window_seconds", window_seconds},
           {"classes", classes}};
    j["synthetic"] = synthetic ? json(*synthetic) : json(nullptr);
    return j;
}

// ---------------------------------------------------------------- synthetic

namespace {

using Vec3 = std::array<double, 3>;

// Rodrigues rotation of v about unit axis k by angle a.
Vec3 rotate(const Vec3& v, const Vec3& k, double a) {
    const double c = std::cos(a), s = std::sin(a);
    const double dot = k[0] * v[0] + k[1] * v[1] + k[2] * v[2];
    const Vec3 cross{k[1] * v[2] - k[2] * v[1], k[2] * v[0] - k[0] * v[2], k[0] * v[1] - k[1] * v[0]};
    Vec3 r;
    for (int i = 0; i < 3; ++i) r[i] = v[i] * c + cross[i] * s + k[i] * dot * (1 - c);
    return r;
}

Vec3 random_unit(RngStream& rng) {
    Vec3 v{rng.normal(), rng.normal(), rng.normal()};
    const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    for (auto& x : v) x /= n;
    return v;
}

struct ClassStyle {
    Vec3 gravity;
    Vec3 swing;  // oscillation direction
    double amplitude;
    double frequency;
};

constexpr double kGravity = 9.81;
constexpr std::size_t kBoutWindows = 4;

}  // namespace

std::vector<RawStream> generate_synthetic(const SyntheticParams& p) {
    if (p.num_users < 1 || p.num_classes < 1 || p.windows_per_class < 1 || !(p.rate_hz > 0.0))
        throw std::invalid_argument("generate_synthetic: counts must be >= 1 and the rate positive");
    const std::size_t L = window_samples(p.window_seconds, p.rate_hz);
    const double two_pi = 2.0 * std::numbers::pi;
    const std::size_t C = p.num_classes;

    // Class templates: orientations spread over the sphere on a golden-angle
    // spiral, increasing oscillation frequency, alternating amplitude.
    std::vector<ClassStyle> classes(C);
    for (std::size_t c = 0; c < C; ++c) {
        const double polar = std::numbers::pi * (static_cast<double>(c) + 0.5) / static_cast<double>(C);
        const double azimuth = 2.399963229728653 * static_cast<double>(c);
        classes[c].gravity = {kGravity * std::sin(polar) * std::cos(azimuth),
                              kGravity * std::sin(polar) * std::sin(azimuth), kGravity * std::cos(polar)};
        classes[c].swing = {std::cos(azimuth + 1.0), std::sin(azimuth + 1.0), 0.5};
        classes[c].amplitude = 1.0 + 1.5 * static_cast<double>(c % 3);
        classes[c].frequency = 0.75 + 0.5 * static_cast<double>(c);
    }

    const RngStream root(p.seed, hash_name("synthetic"));
    std::vector<RawStream> out;
    for (std::size_t u = 0; u < p.num_users; ++u) {
        RngStream style_rng = root.derive({hash_name("user-style"), u});
        const Vec3 axis = random_unit(style_rng);
        const double angle = p.user_variation * style_rng.normal();
        const double amp_scale = std::exp(p.user_variation * style_rng.normal());
        const double freq_scale = std::exp(0.5 * p.user_variation * style_rng.normal());
        const double phase0 = two_pi * style_rng.uniform();
        std::vector<ClassStyle> user_classes = classes;
        for (std::size_t c = 0; c < C; ++c) {
            auto& s = user_classes[c];
            s.gravity = rotate(s.gravity, axis, angle);
            // per (user, class) execution style on top of the user's rotation
            s.gravity = rotate(s.gravity, random_unit(style_rng), 0.5 * p.user_variation * style_rng.normal());
            s.swing = rotate(s.swing, axis, angle);
            s.amplitude *= amp_scale;
            s.frequency *= freq_scale;
        }

        // Bouts of up to kBoutWindows windows per class, in shuffled order.
        std::vector<std::pair<std::size_t, std::size_t>> bouts;  // (class, windows)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t done = 0; done < p.windows_per_class; done += kBoutWindows)
                bouts.emplace_back(c, std::min(kBoutWindows, p.windows_per_class - done));
        RngStream order_rng = root.derive({hash_name("bout-order"), u});
        shuffle(bouts, order_rng);

        RawStream stream;
        stream.user = "user" + std::to_string(u);
        stream.device = "synthetic";
        stream.rate_hz = p.rate_hz;
        stream.samples.reserve(C * p.windows_per_class * L);
        RngStream noise_rng = root.derive({hash_name("noise"), u});
        std::size_t index = 0;
        for (const auto& [c, count] : bouts) {
            for (std::size_t k = 0; k < count; ++k) {
                ClassStyle s = user_classes[c];
                if (p.window_jitter > 0.0) {
                    const Vec3 axis_w = random_unit(noise_rng);
                    const double a = p.window_jitter * noise_rng.normal();
                    s.gravity = rotate(s.gravity, axis_w, a);
                    s.swing = rotate(s.swing, axis_w, a);
                    s.amplitude *= std::exp(p.window_jitter * noise_rng.normal());
                }
                for (std::size_t w = 0; w < L; ++w, ++index) {
                    const double t = static_cast<double>(w) / p.rate_hz;
                    const double osc = s.amplitude * std::sin(two_pi * s.frequency * t + phase0);
                    const double osc2 = 0.5 * s.amplitude * std::sin(2.0 * two_pi * s.frequency * t);
                    Sample smp;
                    smp.t = static_cast<double>(index) / p.rate_hz;
                    smp.x = s.gravity[0] + osc * s.swing[0] + p.noise * noise_rng.normal();
                    smp.y = s.gravity[1] + osc * s.swing[1] + osc2 + p.noise * noise_rng.normal();
                    smp.z = s.gravity[2] + osc * s.swing[2] + p.noise * noise_rng.normal();
                    smp.label = c;
                    stream.samples.push_back(smp);
                }
            }
        }
        out.push_back(std::move(stream));
    }
    return out;
}

// ---------------------------------------------------------------- csv

namespace {

std::vector<std::string_view> split(std::string_view line, char delim) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(delim, start);
        out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    for (auto& f : out) {
        while (!f.empty() && (f.front() == ' ' || f.front() == '"')) f.remove_prefix(1);
        while (!f.empty() && (f.back() == ' ' || f.back() == '"' || f.back() == '\r')) f.remove_suffix(1);
    }
    return out;
}

bool parse_double(std::string_view s, double& out) {
    if (s.empty()) return false;
    const std::string tmp(s);
    char* end = nullptr;
    out = std::strtod(tmp.c_str(), &end);
    return end == tmp.c_str() + tmp.size() && std::isfinite(out);
}

struct ResolvedColumns {
    std::size_t t, x, y, z;
    std::optional<std::size_t> user, device, label;
};

std::optional<std::size_t> resolve(const ColumnRef& ref, const std::vector<std::string_view>& header, bool required,
                                   const std::string& what, const std::string& file) {
    if (ref.index) return *ref.index;
    if (ref.name.empty()) {
        if (required) throw DataError(DataErrorCode::unresolvable_column, file + ": no mapping for column " + what);
        return std::nullopt;
    }
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == ref.name) return i;
    if (required || !header.empty())
        throw DataError(DataErrorCode::unresolvable_column,
                        file + ": column '" + ref.name + "' (" + what + ") not found in header");
    return std::nullopt;
}

}  // namespace

void write_csv(const std::vector<RawStream>& streams, const std::vector<std::string>& classes,
               const std::filesystem::path& path) {
    std::ostringstream os;
    os.precision(17);
    os << "timestamp,x,y,z,user,device,label\n";
    for (const auto& s : streams)
        for (const auto& r : s.samples)
            os << r.t << ',' << r.x << ',' << r.y << ',' << r.z << ',' << s.user << ',' << s.device << ','
               << (r.label ? classes.at(*r.label) : std::string("null")) << '\n';
    write_file(path, os.str());
}

IngestResult ingest(const DatasetManifest& manifest) {
    manifest.validate();
    IngestResult result;
    if (manifest.synthetic) {
        result.streams = generate_synthetic(*manifest.synthetic);
        for (const auto& s : result.streams) result.rows_parsed += s.samples.size();
        return result;
    }

    std::map<std::pair<std::string, std::string>, RawStream> groups;
    for (const auto& file : manifest.files) {
        const auto path = std::filesystem::path(file).is_absolute() ? std::filesystem::path(file)
                                                                     : manifest.base_dir / file;
        std::ifstream in(path);
        if (!in) throw DataError(DataErrorCode::io, "cannot open " + path.string());
        std::string line;
        std::vector<std::string> header_storage;
        std::vector<std::string_view> header;
        if (manifest.has_header && std::getline(in, line)) {
            for (auto f : split(line, manifest.delimiter)) header_storage.emplace_back(f);
            for (const auto& h : header_storage) header.emplace_back(h);
        }
        const auto& m = manifest.columns;
        const std::string fname = path.string();
        ResolvedColumns col{*resolve(m.timestamp, header, true, "timestamp", fname),
                            *resolve(m.x, header, true, "x", fname),
                            *resolve(m.y, header, true, "y", fname),
                            *resolve(m.z, header, true, "z", fname),
                            resolve(m.user, header, false, "user", fname),
                            resolve(m.device, header, false, "device", fname),
                            resolve(m.label, header, false, "label", fname)};
        while (std::getline(in, line)) {
            if (line.empty() || line == "\r") continue;
            const auto f = split(line, manifest.delimiter);
            auto field = [&](std::optional<std::size_t> i) -> std::optional<std::string_view> {
                if (!i || *i >= f.size()) return std::nullopt;
                return f[*i];
            };
            Sample s;
            bool ok = col.t < f.size() && col.x < f.size() && col.y < f.size() && col.z < f.size() &&
                      parse_double(f[col.t], s.t) && parse_double(f[col.x], s.x) && parse_double(f[col.y], s.y) &&
                      parse_double(f[col.z], s.z);
            if (ok && col.label) {
                const auto lab = field(col.label);
                if (!lab) ok = false;
                else if (!lab->empty() && *lab != "null") {
                    const auto it = std::find(manifest.classes.begin(), manifest.classes.end(), *lab);
                    if (it == manifest.classes.end()) ok = false;
                    else s.label = static_cast<std::size_t>(it - manifest.classes.begin());
                }
            }
            if ((col.user && !field(col.user)) || (col.device && !field(col.device))) ok = false;
            if (!ok) {
                ++result.rows_skipped;
                continue;
            }
            s.t *= manifest.timestamp_scale;
            const std::string user(col.user ? *field(col.user) : "user0");
            const std::string device(col.device ? *field(col.device) : "device0");
            auto& g = groups[{user, device}];
            g.user = user;
            g.device = device;
            g.samples.push_back(s);
            ++result.rows_parsed;
        }
    }
    if (result.rows_parsed == 0) throw DataError(DataErrorCode::no_valid_rows, "no valid rows in manifest files");

    for (auto& [key, g] : groups) {
        double rate = manifest.rate_for(g.device);
        if (!(rate > 0.0)) {
            // Infer from the median timestamp step.
            std::vector<double> dt;
            for (std::size_t i = 1; i < g.samples.size(); ++i) dt.push_back(g.samples[i].t - g.samples[i - 1].t);
            std::sort(dt.begin(), dt.end());
            if (dt.empty() || !(dt[dt.size() / 2] > 0.0))
                throw DataError(DataErrorCode::bad_manifest, "cannot infer the rate of device " + g.device);
            rate = 1.0 / dt[dt.size() / 2];
        }
        g.rate_hz = rate;
        const double tolerance = 2.0 / rate;
        double latest = -std::numeric_limits<double>::infinity();
        for (const auto& s : g.samples) {
            if (s.t < latest - tolerance - 1e-12)
                throw DataError(DataErrorCode::timestamp_disorder,
                                "user " + g.user + ", device " + g.device + ": timestamp " + std::to_string(s.t) +
                                    " arrives after " + std::to_string(latest));
            latest = std::max(latest, s.t);
        }
        std::stable_sort(g.samples.begin(), g.samples.end(), [](const Sample& a, const Sample& b) { return a.t < b.t; });
        result.streams.push_back(std::move(g));
    }
    return result;
}

// ---------------------------------------------------------------- store

namespace {

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string user_file_name(std::size_t index) { return "user" + std::to_string(index) + ".bin"; }

}  // namespace

std::uint64_t WindowStore::provenance_hash() const { return fnv1a64(provenance.dump()); }

std::vector<std::string> WindowStore::user_ids() const {
    std::vector<std::string> ids;
    for (const auto& [id, w] : users) ids.push_back(id);
    return ids;
}

std::size_t WindowStore::feature_length() const {
    for (const auto& [id, w] : users)
        if (w.size() > 0) return w.features.dim(2);
    return 0;
}

std::vector<std::size_t> WindowStore::histogram() const {
    std::vector<std::size_t> h(classes.size(), 0);
    for (const auto& [id, w] : users)
        for (auto l : w.labels) ++h.at(l);
    return h;
}

void WindowStore::save(const std::filesystem::path& dir) const {
    json index{{"provenance", provenance}, {"provenance_hash", hex64(provenance_hash())}, {"classes", classes}};
    json users_json = json::array();
    std::size_t i = 0;
    for (const auto& [id, w] : users) {
        const auto file = user_file_name(i++);
        users_json.push_back({{"user", id}, {"file", file}, {"windows", w.size()}});
        json header{{"user", id}, {"labels", w.labels}, {"window_ids", w.window_ids}, {"devices", w.devices}};
        BinaryWriter out(kMagic, kFormatVersion, header.dump());
        if (w.size() > 0) {
            out.tensor("features", w.features);
            out.tensor("display", w.display);
        }
        write_file(dir / "users" / file, std::move(out).finish());
    }
    index["users"] = users_json;
    write_file(dir / "provenance.json", index.dump(2) + "\n");
}

WindowStore WindowStore::load(const std::filesystem::path& dir) {
    WindowStore s;
    json index;
    try {
        index = json::parse(read_file(dir / "provenance.json"));
        s.provenance = index.at("provenance");
        s.classes = index.at("classes").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw FormatError(FormatErrorCode::malformed, (dir / "provenance.json").string() + ": " + e.what());
    }
    if (index.value("provenance_hash", std::string()) != hex64(s.provenance_hash()))
        throw FormatError(FormatErrorCode::checksum_mismatch, (dir / "provenance.json").string() +
                                                                  ": provenance hash does not match its content");
    for (const auto& u : index.at("users")) {
        const auto path = dir / "users" / u.at("file").get<std::string>();
        const auto c = Container::parse(read_file(path), kMagic, kFormatVersion);
        UserWindows w;
        try {
            const auto h = json::parse(c.header);
            w.user = h.at("user").get<std::string>();
            w.labels = h.at("labels").get<std::vector<std::size_t>>();
            w.window_ids = h.at("window_ids").get<std::vector<std::uint64_t>>();
            w.devices = h.at("devices").get<std::vector<std::string>>();
        } catch (const json::exception& e) {
            throw FormatError(FormatErrorCode::malformed, path.string() + ": " + e.what());
        }
        if (!w.labels.empty()) {
            w.features = c.get("features");
            w.display = c.get("display");
            if (w.features.dim(0) != w.labels.size() || w.display.dim(0) != w.labels.size() ||
                w.window_ids.size() != w.labels.size() || w.devices.size() != w.labels.size())
                throw FormatError(FormatErrorCode::malformed, path.string() + ": record counts disagree");
        }
        for (auto l : w.labels)
            if (l >= s.classes.size()) throw FormatError(FormatErrorCode::malformed, path.string() + ": label out of range");
        s.users.emplace(w.user, std::move(w));
    }
    return s;
}

WindowStore preprocess_and_store(const IngestResult& data, const DatasetManifest& manifest, PrepReport* report) {
    WindowStore store;
    store.classes = manifest.classes;

    json sources = json::object();
    for (const auto& f : manifest.files) {
        const auto path = std::filesystem::path(f).is_absolute() ? std::filesystem::path(f) : manifest.base_dir / f;
        sources[f] = hex64(fnv1a64(read_file(path)));
    }
    store.provenance = {{"manifest", manifest.to_json()},
                        {"sources", sources},
                        {"preprocessing",
                         {{"window_seconds", manifest.window_seconds},
                          {"target_rate_hz", manifest.target_rate_hz},
                          {"decimation", "block-average (integer ratio) / linear interpolation"},
                          {"wavelet", "haar"},
                          {"levels", 1},
                          {"labels", "pure windows only"}}},
                        {"store_format", WindowStore::kFormatVersion}};

    struct Pending {
        std::vector<FeatureWindow> features;
        std::vector<SensorWindow> display;
        std::vector<std::uint64_t> ids;
        std::vector<std::string> devices;
    };
    std::map<std::string, Pending> by_user;
    PrepReport rep;
    double raw_values = 0.0, stored_values = 0.0;
    std::size_t feature_len = 0;

    std::vector<const RawStream*> order;
    for (const auto& s : data.streams) order.push_back(&s);
    std::stable_sort(order.begin(), order.end(), [](const RawStream* a, const RawStream* b) {
        return std::tie(a->user, a->device) < std::tie(b->user, b->device);
    });

    for (const RawStream* s : order) {
        const double rate = s->rate_hz > 0.0 ? s->rate_hz : manifest.rate_for(s->device);
        const std::size_t len = window_samples(manifest.window_seconds, rate);
        const auto windows = segment(s->samples, manifest.window_seconds, rate, s->user, s->device);
        rep.discarded_windows += s->samples.size() / std::max<std::size_t>(len, 1) - windows.size();
        auto& pend = by_user[s->user];
        std::size_t seq = 0;
        for (const auto& w : windows) {
            const std::uint64_t id = hash_name(s->user + "/" + s->device + "/" + std::to_string(seq++));
            if (!w.label) {
                ++rep.discarded_windows;
                continue;
            }
            try {
                auto d = decimate(w, manifest.target_rate_hz);
                auto f = dwt_approx(d);
                if (feature_len == 0) feature_len = f.length();
                if (f.length() != feature_len)
                    throw std::invalid_argument("feature length " + std::to_string(f.length()) + " differs from " +
                                                std::to_string(feature_len));
                raw_values += 4.0 * static_cast<double>(w.length());
                stored_values += 3.0 * static_cast<double>(f.length());
                pend.features.push_back(std::move(f));
                pend.display.push_back(std::move(d));
                pend.ids.push_back(id);
                pend.devices.push_back(s->device);
            } catch (const std::invalid_argument& e) {
                throw DataError(DataErrorCode::preprocessing, "user " + s->user + ", device " + s->device +
                                                                  ", window " + std::to_string(seq - 1) + ": " +
                                                                  e.what());
            }
        }
    }

    for (auto& [user, pend] : by_user) {
        UserWindows u;
        u.user = user;
        if (!pend.features.empty()) {
            u.features = to_tensor(pend.features);
            const std::size_t L = pend.display.front().length();
            u.display = Tensor({pend.display.size(), 3, L});
            for (std::size_t n = 0; n < pend.display.size(); ++n)
                for (std::size_t a = 0; a < 3; ++a)
                    std::copy_n(pend.display[n].axes[a].begin(), L, &u.display[(n * 3 + a) * L]);
            for (const auto& f : pend.features) u.labels.push_back(*f.label);
            // Stored as float32; round now so a loaded store equals this one.
            for (auto* t : {&u.features, &u.display})
                for (auto& v : t->data()) v = static_cast<double>(static_cast<float>(v));
        }
        u.window_ids = std::move(pend.ids);
        u.devices = std::move(pend.devices);
        rep.windows += u.size();
        store.users.emplace(user, std::move(u));
    }
    rep.compression_ratio = raw_values > 0.0 ? stored_values / raw_values : 0.0;
    if (report) *report = rep;
    return store;
}

}  // namespace bal
